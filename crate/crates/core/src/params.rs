//! Parameter snapshots and evaluation grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(α, β, γ)` at one time. Inactive nodes carry `f64::NEG_INFINITY`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub t: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub active_out: Vec<bool>,
    pub active_in: Vec<bool>,
}

impl ParamSnapshot {
    pub fn zeros(t: f64, n: usize, p: usize) -> Self {
        Self {
            t,
            alpha: vec![0.0; n],
            beta: vec![0.0; n],
            gamma: vec![0.0; p],
            active_out: vec![true; n],
            active_in: vec![true; n],
        }
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn p(&self) -> usize {
        self.gamma.len()
    }

    /// `η = (α_1..α_n, β_1..β_{n-1})`.
    pub fn eta(&self) -> Vec<f64> {
        let n = self.n();
        let mut v = self.alpha.clone();
        v.extend_from_slice(&self.beta[..n - 1]);
        v
    }

    /// Activity flags aligned with [`ParamSnapshot::eta`].
    pub fn eta_active(&self) -> Vec<bool> {
        let n = self.n();
        let mut v = self.active_out.clone();
        v.extend_from_slice(&self.active_in[..n - 1]);
        v
    }

    /// Value of coordinate `c` in the stacked order `(α, β_{1..n-1}, γ)`.
    pub fn coordinate(&self, c: usize) -> f64 {
        let n = self.n();
        if c < n {
            self.alpha[c]
        } else if c < 2 * n - 1 {
            self.beta[c - n]
        } else {
            self.gamma[c + 1 - 2 * n]
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.n() - 1 + self.p()
    }
}

/// Strictly increasing evaluation times inside `(0, tau)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    tau: f64,
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(tau: f64, points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InsufficientGrid { needed: 1, got: 0 });
        }
        if points.iter().any(|&t| !(t > 0.0 && t < tau)) {
            return Err(Error::GridMismatch(format!("grid points must lie in (0, {tau})")));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::GridMismatch("grid points must be strictly increasing".into()));
        }
        Ok(Self { tau, points })
    }

    /// `t_i = i·tau/(m+1)` for `i = 1..m`.
    pub fn uniform(tau: f64, m: usize) -> Result<Self> {
        let pts = (1..=m).map(|i| i as f64 * tau / (m + 1) as f64).collect();
        Self::new(tau, pts)
    }

    /// The 99-point default grid.
    pub fn standard(tau: f64) -> Self {
        Self::uniform(tau, 99).expect("standard grid is valid")
    }

    /// `{0.1τ, …, 0.9τ}`.
    pub fn test_grid(tau: f64) -> Self {
        Self::uniform(tau, 9).expect("test grid is valid")
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the grid point closest to `t` (ties go to the earlier point).
    pub fn nearest(&self, t: f64) -> usize {
        let k = self.points.partition_point(|&x| x < t);
        if k == 0 {
            0
        } else if k == self.points.len() {
            k - 1
        } else if t - self.points[k - 1] <= self.points[k] - t {
            k - 1
        } else {
            k
        }
    }

    /// Index of an exact (to 1e-9) grid match.
    pub fn position(&self, t: f64) -> Option<usize> {
        let k = self.nearest(t);
        ((self.points[k] - t).abs() <= 1e-9 * self.tau.max(1.0)).then_some(k)
    }

    /// Trapezoid nodes on `[0, tau]`: the grid padded with both endpoints.
    /// Returned indices map each node to the grid point supplying its value.
    pub fn padded(&self) -> (Vec<f64>, Vec<usize>) {
        let m = self.points.len();
        let mut nodes = Vec::with_capacity(m + 2);
        let mut src = Vec::with_capacity(m + 2);
        nodes.push(0.0);
        src.push(0);
        for (k, &t) in self.points.iter().enumerate() {
            nodes.push(t);
            src.push(k);
        }
        nodes.push(self.tau);
        src.push(m - 1);
        (nodes, src)
    }
}
