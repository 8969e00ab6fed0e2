//! Piecewise-constant dyadic covariate paths.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-continuous step function starting at time 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariatePath {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl CovariatePath {
    /// `values` holds one length-`p` vector per breakpoint, flattened.
    pub fn new(p: usize, breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breaks.is_empty() {
            return Err(Error::InvalidCovariates("path has no pieces".into()));
        }
        if breaks[0] != 0.0 {
            return Err(Error::InvalidCovariates(format!(
                "first breakpoint must be 0, got {}",
                breaks[0]
            )));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidCovariates(
                "breakpoints must be strictly increasing (overlapping pieces)".into(),
            ));
        }
        if values.len() != breaks.len() * p {
            return Err(Error::InvalidCovariates(format!(
                "expected {} values for {} pieces of dimension {p}, got {}",
                breaks.len() * p,
                breaks.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCovariates("non-finite covariate value".into()));
        }
        Ok(Self { breaks, values })
    }

    pub fn constant(z: Vec<f64>) -> Self {
        Self {
            breaks: vec![0.0],
            values: z,
        }
    }

    pub fn p(&self) -> usize {
        self.values.len() / self.breaks.len()
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn piece_count(&self) -> usize {
        self.breaks.len()
    }

    pub fn piece_value(&self, k: usize) -> &[f64] {
        let p = self.p();
        &self.values[k * p..(k + 1) * p]
    }

    /// Value at `t`; at a breakpoint the new piece applies.
    pub fn at(&self, t: f64) -> &[f64] {
        let k = self.breaks.partition_point(|&b| b <= t).max(1) - 1;
        self.piece_value(k)
    }

    /// Pieces clipped to `[0, tau]` as `(a, b, z)`.
    pub fn pieces(&self, tau: f64) -> impl Iterator<Item = (f64, f64, &[f64])> + '_ {
        let m = self.breaks.len();
        (0..m).filter_map(move |k| {
            let a = self.breaks[k];
            let b = if k + 1 < m { self.breaks[k + 1] } else { tau };
            let b = b.min(tau);
            (a < b).then(|| (a, b, self.piece_value(k)))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Storage {
    Dense(Vec<CovariatePath>),
    Sparse {
        default: CovariatePath,
        exceptions: BTreeMap<(usize, usize), CovariatePath>,
    },
}

/// Covariate paths for every ordered dyad, stored densely or as a default plus exceptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSet {
    n: usize,
    p: usize,
    storage: Storage,
}

impl CovariateSet {
    /// No covariates (`p = 0`).
    pub fn none(n: usize) -> Self {
        Self::constant(n, Vec::new())
    }

    /// Every dyad shares the static value `z`.
    pub fn constant(n: usize, z: Vec<f64>) -> Self {
        Self {
            n,
            p: z.len(),
            storage: Storage::Sparse {
                default: CovariatePath::constant(z),
                exceptions: BTreeMap::new(),
            },
        }
    }

    pub fn with_default(n: usize, default: CovariatePath) -> Self {
        Self {
            n,
            p: default.p(),
            storage: Storage::Sparse {
                default,
                exceptions: BTreeMap::new(),
            },
        }
    }

    /// Dense storage; `paths` is row-major `n × n` (diagonal entries are ignored).
    pub fn dense(n: usize, p: usize, paths: Vec<CovariatePath>) -> Result<Self> {
        if paths.len() != n * n {
            return Err(Error::InvalidCovariates(format!(
                "dense storage needs {} paths, got {}",
                n * n,
                paths.len()
            )));
        }
        if let Some(bad) = paths.iter().position(|q| q.p() != p) {
            return Err(Error::InvalidCovariates(format!(
                "path {bad} has dimension {}, expected {p}",
                paths[bad].p()
            )));
        }
        Ok(Self {
            n,
            p,
            storage: Storage::Dense(paths),
        })
    }

    /// Static covariates drawn from a closure over 0-based `(i, j)`.
    pub fn from_static(n: usize, p: usize, mut f: impl FnMut(usize, usize) -> Vec<f64>) -> Result<Self> {
        let mut paths = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let z = if i == j { vec![0.0; p] } else { f(i, j) };
                if z.len() != p {
                    return Err(Error::InvalidCovariates(format!(
                        "dyad ({}, {}): dimension {} != {p}",
                        i + 1,
                        j + 1,
                        z.len()
                    )));
                }
                paths.push(CovariatePath::constant(z));
            }
        }
        Self::dense(n, p, paths)
    }

    /// Replace the path of dyad `(i, j)` (0-based).
    pub fn set_path(&mut self, i: usize, j: usize, path: CovariatePath) -> Result<()> {
        if i >= self.n || j >= self.n || i == j {
            return Err(Error::InvalidCovariates(format!(
                "invalid dyad ({}, {})",
                i + 1,
                j + 1
            )));
        }
        if path.p() != self.p {
            return Err(Error::InvalidCovariates(format!(
                "dimension {} != {}",
                path.p(),
                self.p
            )));
        }
        match &mut self.storage {
            Storage::Dense(v) => v[i * self.n + j] = path,
            Storage::Sparse { exceptions, .. } => {
                exceptions.insert((i, j), path);
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn path(&self, i: usize, j: usize) -> &CovariatePath {
        match &self.storage {
            Storage::Dense(v) => &v[i * self.n + j],
            Storage::Sparse {
                default,
                exceptions,
            } => exceptions.get(&(i, j)).unwrap_or(default),
        }
    }

    pub fn at(&self, i: usize, j: usize, t: f64) -> &[f64] {
        self.path(i, j).at(t)
    }

    /// Default path and exceptions when sparse.
    pub fn sparse_parts(&self) -> Option<(&CovariatePath, &BTreeMap<(usize, usize), CovariatePath>)> {
        match &self.storage {
            Storage::Sparse {
                default,
                exceptions,
            } => Some((default, exceptions)),
            Storage::Dense(_) => None,
        }
    }
}
