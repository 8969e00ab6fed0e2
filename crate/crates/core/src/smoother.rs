//! Kernel-weighted event sums and exposure integrals at a single time.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::covariates::CovariateSet;
use crate::error::{Error, Result};
use crate::events::EventStream;
use crate::kernel::{Bandwidth, KernelSpec};

/// Largest admissible `zᵀγ` before `exp` is deemed to overflow.
pub const EXP_GUARD: f64 = 700.0;

/// Event-side sums `Σ_e K_h(t_e − t)` and their covariate-weighted versions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedCounts {
    pub t: f64,
    pub which: Bandwidth,
    pub n: usize,
    pub p: usize,
    /// Row-major `n × n` dyad weights.
    pub w: Vec<f64>,
    pub out: Vec<f64>,
    pub inn: Vec<f64>,
    /// Row-major `n × n × p` covariate-weighted sums.
    pub u: Vec<f64>,
}

impl SmoothedCounts {
    pub fn w(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    pub fn u(&self, i: usize, j: usize) -> &[f64] {
        let d = i * self.n + j;
        &self.u[d * self.p..(d + 1) * self.p]
    }
}

pub fn smooth_events(
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    which: Bandwidth,
    t: f64,
) -> SmoothedCounts {
    let n = es.n();
    let p = zs.p();
    let r = k.radius(which);
    let mut w = vec![0.0; n * n];
    let mut u = vec![0.0; n * n * p];
    for e in es.window(t - r, t + r) {
        let kw = k.weight(which, e.time - t);
        let d = e.sender * n + e.receiver;
        w[d] += kw;
        let z = zs.at(e.sender, e.receiver, e.time);
        for (acc, zc) in u[d * p..(d + 1) * p].iter_mut().zip(z) {
            *acc += kw * zc;
        }
    }
    let mut out = vec![0.0; n];
    let mut inn = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            out[i] += w[i * n + j];
            inn[j] += w[i * n + j];
        }
    }
    SmoothedCounts {
        t,
        which,
        n,
        p,
        w,
        out,
        inn,
        u,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Moment {
    None,
    Z,
    ZZt,
}

/// `E_ij(γ) = ∫ K_h(s − t) exp(Z_ij(s)ᵀγ) ds` and optional moment variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureIntegrals {
    pub t: f64,
    pub which: Bandwidth,
    pub n: usize,
    pub p: usize,
    /// Row-major `n × n`; diagonal is 0.
    pub e: Vec<f64>,
    /// `n × n × p` when requested.
    pub ez: Option<Vec<f64>>,
    /// `n × n × p × p` when requested.
    pub ezz: Option<Vec<f64>>,
}

impl ExposureIntegrals {
    pub fn e(&self, i: usize, j: usize) -> f64 {
        self.e[i * self.n + j]
    }
}

/// Kernel masses of every covariate piece of every dyad at one time, for both bandwidths.
#[derive(Debug, Clone)]
pub struct ExposureBasis {
    pub t: f64,
    pub n: usize,
    pub p: usize,
    /// Piece range of dyad `d` is `offsets[d]..offsets[d + 1]`.
    pub offsets: Vec<usize>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    /// Flattened piece values, `p` per piece.
    pub z: Vec<f64>,
}

impl ExposureBasis {
    pub fn build(zs: &CovariateSet, k: &KernelSpec, t: f64, tau: f64) -> Self {
        let n = zs.n();
        let p = zs.p();
        let mut cache: HashMap<(u64, u64), (f64, f64)> = HashMap::new();
        let mut offsets = Vec::with_capacity(n * n + 1);
        let mut m1 = Vec::new();
        let mut m2 = Vec::new();
        let mut z = Vec::new();
        offsets.push(0);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    for (a, b, val) in zs.path(i, j).pieces(tau) {
                        let (x1, x2) = *cache.entry((a.to_bits(), b.to_bits())).or_insert_with(|| {
                            (
                                k.cdf_increment(Bandwidth::H1, t, a, b),
                                k.cdf_increment(Bandwidth::H2, t, a, b),
                            )
                        });
                        m1.push(x1);
                        m2.push(x2);
                        z.extend_from_slice(val);
                    }
                }
                offsets.push(m1.len());
            }
        }
        Self {
            t,
            n,
            p,
            offsets,
            m1,
            m2,
            z,
        }
    }

    pub fn pieces(&self, d: usize) -> std::ops::Range<usize> {
        self.offsets[d]..self.offsets[d + 1]
    }

    pub fn z(&self, piece: usize) -> &[f64] {
        &self.z[piece * self.p..(piece + 1) * self.p]
    }

    pub fn mass(&self, which: Bandwidth) -> &[f64] {
        match which {
            Bandwidth::H1 => &self.m1,
            Bandwidth::H2 => &self.m2,
        }
    }

    /// `exp(zᵀγ)` for every piece.
    pub fn exp_z(&self, gamma: &[f64]) -> Result<Vec<f64>> {
        let p = self.p;
        if p == 0 {
            return Ok(vec![1.0; self.m1.len()]);
        }
        let mut out = Vec::with_capacity(self.m1.len());
        for (q, zq) in self.z.chunks_exact(p).enumerate() {
            let s: f64 = zq.iter().zip(gamma).map(|(a, b)| a * b).sum();
            if !(s <= EXP_GUARD) {
                let d = self.offsets.partition_point(|&o| o <= q) - 1;
                return Err(Error::ExposureOverflow {
                    sender: d / self.n + 1,
                    receiver: d % self.n + 1,
                    value: s,
                });
            }
            out.push(s.exp());
        }
        Ok(out)
    }

    /// Per-dyad `Σ_pieces m · exp(zᵀγ)` given precomputed piece exponentials.
    pub fn dyad_sums(&self, which: Bandwidth, ez: &[f64]) -> Vec<f64> {
        let m = self.mass(which);
        (0..self.n * self.n)
            .map(|d| self.pieces(d).map(|q| m[q] * ez[q]).sum())
            .collect()
    }
}

pub fn exposure(
    zs: &CovariateSet,
    k: &KernelSpec,
    which: Bandwidth,
    t: f64,
    tau: f64,
    gamma: &[f64],
    moment: Moment,
) -> Result<ExposureIntegrals> {
    let basis = ExposureBasis::build(zs, k, t, tau);
    let n = basis.n;
    let p = basis.p;
    if gamma.len() != p {
        return Err(Error::InvalidCovariates(format!(
            "gamma has length {}, expected {p}",
            gamma.len()
        )));
    }
    let ez = basis.exp_z(gamma)?;
    let e = basis.dyad_sums(which, &ez);
    let m = basis.mass(which);
    let (mut e1, mut e2) = (None, None);
    if matches!(moment, Moment::Z | Moment::ZZt) {
        let mut v = vec![0.0; n * n * p];
        for d in 0..n * n {
            for q in basis.pieces(d) {
                let c = m[q] * ez[q];
                for (a, zc) in v[d * p..(d + 1) * p].iter_mut().zip(basis.z(q)) {
                    *a += c * zc;
                }
            }
        }
        e1 = Some(v);
    }
    if moment == Moment::ZZt {
        let mut v = vec![0.0; n * n * p * p];
        for d in 0..n * n {
            for q in basis.pieces(d) {
                let c = m[q] * ez[q];
                let zq = basis.z(q);
                let blk = &mut v[d * p * p..(d + 1) * p * p];
                for a in 0..p {
                    for b in 0..p {
                        blk[a * p + b] += c * zq[a] * zq[b];
                    }
                }
            }
        }
        e2 = Some(v);
    }
    Ok(ExposureIntegrals {
        t,
        which,
        n,
        p,
        e,
        ez: e1,
        ezz: e2,
    })
}
