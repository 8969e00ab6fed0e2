//! Sandwich standard errors for the degree parameters and bias-corrected
//! intervals for the homophily coefficients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateSet;
use crate::error::{Error, Result};
use crate::estimator::{FitResult, LocalData};
use crate::events::EventStream;
use crate::kernel::{Bandwidth, KernelSpec};
use crate::linalg::{mat_vec, min_eigenvalue, sym_inverse, triple};
use crate::normal;
use crate::params::ParamSnapshot;

/// Structured approximation to the inverse degree Jacobian:
/// `S = diag(1/v_aa) + c·u uᵀ` with `c = 1/v_(2n)(2n)` and `u = (1,…,1,−1,…,−1)` on active coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredS {
    pub t: f64,
    pub n: usize,
    pub v_diag: Vec<f64>,
    pub v_2n2n: f64,
    /// `v_{i,n+j}` stored per dyad `(i, j)`, row-major `n × n` (column `n` unused).
    pub pairs: Vec<f64>,
    pub active: Vec<bool>,
}

impl StructuredS {
    pub fn dim(&self) -> usize {
        2 * self.n - 1
    }

    pub fn c(&self) -> f64 {
        1.0 / self.v_2n2n
    }

    /// Block sign of coordinate `a` (0 when inactive).
    pub fn u(&self, a: usize) -> f64 {
        match (self.active[a], a < self.n) {
            (false, _) => 0.0,
            (true, true) => 1.0,
            (true, false) => -1.0,
        }
    }

    /// `1/v_aa` (0 when inactive).
    pub fn d(&self, a: usize) -> f64 {
        if self.active[a] {
            1.0 / self.v_diag[a]
        } else {
            0.0
        }
    }

    pub fn entry(&self, a: usize, b: usize) -> f64 {
        let diag = if a == b { self.d(a) } else { 0.0 };
        diag + self.c() * self.u(a) * self.u(b)
    }

    /// `S y` in O(dim).
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let m = self.dim();
        let uy: f64 = (0..m).map(|a| self.u(a) * y[a]).sum();
        let c = self.c();
        (0..m).map(|a| self.d(a) * y[a] + c * self.u(a) * uy).collect()
    }

    /// Row-major dense matrix.
    pub fn dense(&self) -> Vec<f64> {
        let m = self.dim();
        let mut s = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                s[a * m + b] = self.entry(a, b);
            }
        }
        s
    }
}

/// Martingale-variance matrix: diagonal plus one entry per dyad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaHat {
    pub t: f64,
    pub n: usize,
    pub diag: Vec<f64>,
    /// `(h1/n) Σ_e K_{h1}²` per dyad, row-major `n × n`; equals `ω_{i,n+j}` for `j < n`.
    pub dyad: Vec<f64>,
}

impl OmegaHat {
    pub fn entry(&self, a: usize, b: usize) -> f64 {
        let n = self.n;
        if a == b {
            return self.diag[a];
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if lo < n && hi >= n && hi - n != lo {
            self.dyad[lo * n + (hi - n)]
        } else {
            0.0
        }
    }

    pub fn dense(&self) -> Vec<f64> {
        let m = 2 * self.n - 1;
        let mut o = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                o[a * m + b] = self.entry(a, b);
            }
        }
        o
    }
}

/// Quantities that make `S Ω S` cheap: `uᵀΩu` and `uᵀΩe_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub u_omega_u: f64,
    pub u_omega_e: Vec<f64>,
    /// Diagonal of `S Ω S` (NaN on inactive coordinates).
    pub sigma: Vec<f64>,
}

impl Sandwich {
    pub fn new(s: &StructuredS, om: &OmegaHat) -> Self {
        let n = s.n;
        let m = s.dim();
        let mut u_omega_e: Vec<f64> = (0..m).map(|a| s.u(a) * om.diag[a]).collect();
        let mut cross = 0.0;
        for i in 0..n {
            for j in 0..n - 1 {
                if i == j {
                    continue;
                }
                let w = om.dyad[i * n + j];
                let (ui, uj) = (s.u(i), s.u(n + j));
                u_omega_e[i] += uj * w;
                u_omega_e[n + j] += ui * w;
                cross += ui * uj * w;
            }
        }
        let u_omega_u: f64 = (0..m).map(|a| s.u(a).powi(2) * om.diag[a]).sum::<f64>() + 2.0 * cross;
        let c = s.c();
        let sigma = (0..m)
            .map(|a| {
                if !s.active[a] {
                    return f64::NAN;
                }
                let d = s.d(a);
                let v = om.diag[a] * d * d + 2.0 * c * s.u(a) * d * u_omega_e[a] + c * c * u_omega_u;
                v.max(0.0)
            })
            .collect();
        Self {
            u_omega_u,
            u_omega_e,
            sigma,
        }
    }

    /// `(e_a − e_b)ᵀ S Ω S (e_a − e_b)` for two coordinates in the same block.
    pub fn contrast(&self, s: &StructuredS, om: &OmegaHat, a: usize, b: usize) -> f64 {
        let (da, db) = (s.d(a), s.d(b));
        let c = s.c();
        let cross = c * c * s.u(a) * s.u(b) * self.u_omega_u
            + c * s.u(a) * self.u_omega_e[b] * db
            + c * s.u(b) * self.u_omega_e[a] * da
            + om.entry(a, b) * da * db;
        (self.sigma[a] + self.sigma[b] - 2.0 * cross).max(0.0)
    }
}

/// Per-dyad fitted h1 masses `e^{α_i+β_j} E_ij(γ)` (0 on inactive nodes).
fn fitted_masses(ld: &LocalData, snap: &ParamSnapshot) -> Result<Vec<f64>> {
    let n = ld.n;
    let ez = ld.basis.exp_z(&snap.gamma)?;
    let e1 = ld.basis.dyad_sums(Bandwidth::H1, &ez);
    let mut mu = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j && snap.active_out[i] && snap.active_in[j] {
                mu[i * n + j] = (snap.alpha[i] + snap.beta[j]).exp() * e1[i * n + j];
            }
        }
    }
    Ok(mu)
}

pub fn compute_s(es: &EventStream, zs: &CovariateSet, k: &KernelSpec, snap: &ParamSnapshot) -> Result<StructuredS> {
    let ld = LocalData::build(es, zs, k, snap.t);
    compute_s_local(&ld, snap)
}

pub fn compute_s_local(ld: &LocalData, snap: &ParamSnapshot) -> Result<StructuredS> {
    let n = ld.n;
    let mu = fitted_masses(ld, snap)?;
    let scale = 1.0 / (n - 1) as f64;
    let mut v_diag = vec![0.0; 2 * n - 1];
    let mut pairs = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = mu[i * n + j] * scale;
            v_diag[i] += v;
            if j < n - 1 {
                v_diag[n + j] += v;
                pairs[i * n + j] = v;
            }
        }
    }
    let mut active = snap.eta_active();
    for (a, v) in v_diag.iter().enumerate() {
        if !(*v > 0.0) {
            active[a] = false;
        }
    }
    let mut v_2n2n = 0.0;
    for i in 0..n {
        if !active[i] {
            continue;
        }
        v_2n2n += v_diag[i];
        for j in 0..n - 1 {
            if j != i && active[n + j] {
                v_2n2n -= pairs[i * n + j];
            }
        }
    }
    if !(v_2n2n > 0.0) {
        return Err(Error::DegenerateVariance {
            t: snap.t,
            value: v_2n2n,
        });
    }
    Ok(StructuredS {
        t: snap.t,
        n,
        v_diag,
        v_2n2n,
        pairs,
        active,
    })
}

pub fn compute_omega(es: &EventStream, k: &KernelSpec, t: f64) -> OmegaHat {
    let n = es.n();
    let r = k.radius(Bandwidth::H1);
    let scale = k.h1 / n as f64;
    let mut dyad = vec![0.0; n * n];
    for e in es.window(t - r, t + r) {
        let w = k.weight(Bandwidth::H1, e.time - t);
        dyad[e.sender * n + e.receiver] += scale * w * w;
    }
    let mut diag = vec![0.0; 2 * n - 1];
    for i in 0..n {
        for j in 0..n {
            let w = dyad[i * n + j];
            diag[i] += w;
            if j < n - 1 {
                diag[n + j] += w;
            }
        }
    }
    OmegaHat { t, n, diag, dyad }
}

/// Standard error and interval for one degree coordinate; NaN when undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn eta_intervals(snap: &ParamSnapshot, sw: &Sandwich, k: &KernelSpec, level: f64) -> Vec<Interval> {
    let n = snap.n();
    let z = normal::two_sided(level);
    let scale = (n as f64 * k.h1).sqrt();
    snap.eta()
        .iter()
        .zip(&sw.sigma)
        .map(|(&est, &sig)| {
            let se = sig.sqrt() / scale;
            if est.is_finite() && se.is_finite() {
                Interval {
                    estimate: est,
                    se,
                    ci_low: est - z * se,
                    ci_high: est + z * se,
                }
            } else {
                Interval {
                    estimate: est,
                    se: f64::NAN,
                    ci_low: f64::NAN,
                    ci_high: f64::NAN,
                }
            }
        })
        .collect()
}

pub fn eta_confidence(
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    snap: &ParamSnapshot,
    level: f64,
) -> Result<Vec<Interval>> {
    check_level(level)?;
    let s = compute_s(es, zs, k, snap)?;
    let om = compute_omega(es, k, snap.t);
    Ok(eta_intervals(snap, &Sandwich::new(&s, &om), k, level))
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("level must lie in (0, 1), got {level}")))
    }
}

/// h1 event sums used by the homophily inference.
#[derive(Debug, Clone)]
struct H1Sums {
    /// `û_a`, `(2n−1) × p`.
    uhat: Vec<f64>,
    /// Per-node `Σ_j ∫ Z K_{h1}² dN` for rows then columns (all n), `2n × p`.
    zk2: Vec<f64>,
    out: Vec<f64>,
    inn: Vec<f64>,
}

fn h1_sums(es: &EventStream, zs: &CovariateSet, k: &KernelSpec, t: f64) -> H1Sums {
    let n = es.n();
    let p = zs.p();
    let r = k.radius(Bandwidth::H1);
    let mut uhat = vec![0.0; (2 * n - 1) * p];
    let mut zk2 = vec![0.0; 2 * n * p];
    let mut out = vec![0.0; n];
    let mut inn = vec![0.0; n];
    for e in es.window(t - r, t + r) {
        let w = k.weight(Bandwidth::H1, e.time - t);
        let z = zs.at(e.sender, e.receiver, e.time);
        let (i, j) = (e.sender, e.receiver);
        out[i] += w;
        inn[j] += w;
        for c in 0..p {
            uhat[i * p + c] += w * z[c];
            if j < n - 1 {
                uhat[(n + j) * p + c] += w * z[c];
            }
            zk2[i * p + c] += w * w * z[c];
            zk2[(n + j) * p + c] += w * w * z[c];
        }
    }
    H1Sums { uhat, zk2, out, inn }
}

/// `V̂_{γη} Ŝ` at one grid time, stored column by column: `(2n−1) × p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringColumns {
    pub n: usize,
    pub p: usize,
    pub cols: Vec<f64>,
}

impl CenteringColumns {
    fn new(s: &StructuredS, uhat: &[f64], p: usize) -> Self {
        let n = s.n;
        let m = s.dim();
        let nn = (n * (n - 1)) as f64;
        let mut vu = vec![0.0; p];
        for a in 0..m {
            for c in 0..p {
                vu[c] += uhat[a * p + c] / nn * s.u(a);
            }
        }
        let cc = s.c();
        let mut cols = vec![0.0; m * p];
        for a in 0..m {
            for c in 0..p {
                cols[a * p + c] = uhat[a * p + c] / nn * s.d(a) + cc * vu[c] * s.u(a);
            }
        }
        Self { n, p, cols }
    }

    /// `V̂ Ŝ ι_ij`; the β entry is absent when `j` is the reference node.
    pub fn dyad(&self, i: usize, j: usize, out: &mut [f64]) {
        let p = self.p;
        out.copy_from_slice(&self.cols[i * p..(i + 1) * p]);
        if j < self.n - 1 {
            let b = self.n + j;
            for c in 0..p {
                out[c] += self.cols[b * p + c];
            }
        }
    }
}

/// Homophily inference at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaInference {
    pub t: f64,
    pub estimate: Vec<f64>,
    pub h_q: Vec<f64>,
    pub h_q_inv: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub sigma_hat: Vec<f64>,
    pub psi_hat: Vec<f64>,
    /// `Ĥ_Q⁻¹ b̂`.
    pub bias: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// `p × (2n−1)`, row-major.
    pub v_gamma_eta: Vec<f64>,
}

/// Centering lookup for event times: nearest grid snapshot that has one.
pub struct CenteringTable<'a> {
    pub times: &'a [f64],
    pub cols: &'a [Option<CenteringColumns>],
}

impl CenteringTable<'_> {
    fn at(&self, u: f64) -> Option<&CenteringColumns> {
        let m = self.times.len();
        let k = self.times.partition_point(|&x| x < u);
        let nearest = if k == 0 {
            0
        } else if k == m {
            m - 1
        } else if u - self.times[k - 1] <= self.times[k] - u {
            k - 1
        } else {
            k
        };
        (0..m)
            .flat_map(|d| [nearest.checked_sub(d), Some(nearest + d)])
            .flatten()
            .filter(|&x| x < m)
            .find_map(|x| self.cols[x].as_ref())
    }
}

#[allow(clippy::too_many_arguments)]
fn gamma_at(
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    snap: &ParamSnapshot,
    s: &StructuredS,
    sums: &H1Sums,
    own: &CenteringColumns,
    table: Option<&CenteringTable>,
    level: f64,
    inactive_eps: f64,
) -> Result<GammaInference> {
    let n = es.n();
    let p = zs.p();
    if p == 0 {
        return Err(Error::InvalidCovariates("homophily inference needs p >= 1".into()));
    }
    let t = snap.t;
    let m = 2 * n - 1;
    let nn = (n * (n - 1)) as f64;

    // b̂
    let mut b_hat = vec![0.0; p];
    for node in 0..n {
        for (den, row) in [(sums.out[node], node), (sums.inn[node], n + node)] {
            if den >= inactive_eps {
                for c in 0..p {
                    b_hat[c] += sums.zk2[row * p + c] / den;
                }
            }
        }
    }
    b_hat.iter_mut().for_each(|b| *b *= k.h1 / (2.0 * nn));

    // Ĥ_Q and Σ̂ from the h2 window.
    let r = k.radius(Bandwidth::H2);
    let mut h_q = vec![0.0; p * p];
    let mut sigma = vec![0.0; p * p];
    let mut cen = vec![0.0; p];
    let mut dz = vec![0.0; p];
    for e in es.window(t - r, t + r) {
        let w = k.weight(Bandwidth::H2, e.time - t);
        let z = zs.at(e.sender, e.receiver, e.time);
        let cc = table.and_then(|tb| tb.at(e.time)).unwrap_or(own);
        cc.dyad(e.sender, e.receiver, &mut cen);
        for c in 0..p {
            dz[c] = z[c] - cen[c];
        }
        for a in 0..p {
            for b in 0..p {
                h_q[a * p + b] += w * z[a] * z[b];
                sigma[a * p + b] += w * w * dz[a] * dz[b];
            }
        }
    }
    h_q.iter_mut().for_each(|x| *x /= nn);
    sigma.iter_mut().for_each(|x| *x *= k.h2 / nn);

    // V̂_{γη} Ŝ V̂_{ηγ} = Σ_a d_a v_a v_aᵀ + c (V u)(V u)ᵀ.
    let mut v_gamma_eta = vec![0.0; p * m];
    let mut vu = vec![0.0; p];
    for a in 0..m {
        for c in 0..p {
            let v = sums.uhat[a * p + c] / nn;
            v_gamma_eta[c * m + a] = v;
            vu[c] += v * s.u(a);
        }
    }
    for a in 0..m {
        let d = s.d(a);
        if d == 0.0 {
            continue;
        }
        for x in 0..p {
            for y in 0..p {
                h_q[x * p + y] -= d * v_gamma_eta[x * m + a] * v_gamma_eta[y * m + a];
            }
        }
    }
    let cc = s.c();
    for x in 0..p {
        for y in 0..p {
            h_q[x * p + y] -= cc * vu[x] * vu[y];
        }
    }

    let h_q_inv = sym_inverse(&h_q, p, "H_Q estimate")?;
    let psi_hat = triple(&h_q_inv, &sigma, &h_q_inv, p);
    let bias = mat_vec(&h_q_inv, &b_hat);
    let z = normal::two_sided(level);
    let scale = (nn * k.h2).sqrt();
    let se: Vec<f64> = (0..p).map(|c| psi_hat[c * p + c].max(0.0).sqrt() / scale).collect();
    let centre: Vec<f64> = (0..p).map(|c| snap.gamma[c] - bias[c]).collect();
    Ok(GammaInference {
        t,
        estimate: snap.gamma.clone(),
        ci_low: (0..p).map(|c| centre[c] - z * se[c]).collect(),
        ci_high: (0..p).map(|c| centre[c] + z * se[c]).collect(),
        h_q,
        h_q_inv,
        b_hat,
        sigma_hat: sigma,
        psi_hat,
        bias,
        se,
        v_gamma_eta,
    })
}

/// Homophily inference at a single snapshot; Σ̂ is centred with this snapshot only.
pub fn gamma_inference(
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    snap: &ParamSnapshot,
    s: &StructuredS,
    level: f64,
) -> Result<GammaInference> {
    check_level(level)?;
    let sums = h1_sums(es, zs, k, snap.t);
    let own = CenteringColumns::new(s, &sums.uhat, zs.p());
    gamma_at(es, zs, k, snap, s, &sums, &own, None, level, 1e-10)
}

/// Everything inferred at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointInference {
    pub t: f64,
    pub s: StructuredS,
    pub omega: OmegaHat,
    pub sandwich: Sandwich,
    pub eta: Vec<Interval>,
    pub centering: CenteringColumns,
    pub gamma: Option<GammaInference>,
    pub gamma_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceCurve {
    pub level: f64,
    pub points: Vec<Option<PointInference>>,
    pub errors: Vec<Option<String>>,
}

impl InferenceCurve {
    /// `se_eta` row at grid index `g` (NaN where undefined).
    pub fn se_eta(&self, g: usize, m: usize) -> Vec<f64> {
        self.points[g]
            .as_ref()
            .map_or(vec![f64::NAN; m], |pi| pi.eta.iter().map(|x| x.se).collect())
    }
}

/// Fill in inference for every converged grid point of `fit`.
pub fn infer_curve(
    fit: &mut FitResult,
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    level: f64,
    inactive_eps: f64,
) -> Result<()> {
    check_level(level)?;
    let p = zs.p();
    let stage1: Vec<Result<(StructuredS, OmegaHat, H1Sums, CenteringColumns)>> = fit
        .points
        .par_iter()
        .map(|pt| {
            let snap = match (&pt.snapshot, pt.converged()) {
                (Some(s), true) => s,
                _ => return Err(Error::InvalidConfig("grid point did not converge".into())),
            };
            let ld = LocalData::build(es, zs, k, snap.t);
            let s = compute_s_local(&ld, snap)?;
            let om = compute_omega(es, k, snap.t);
            let sums = h1_sums(es, zs, k, snap.t);
            let cen = CenteringColumns::new(&s, &sums.uhat, p);
            Ok((s, om, sums, cen))
        })
        .collect();
    let cols: Vec<Option<CenteringColumns>> = stage1
        .iter()
        .map(|r| r.as_ref().ok().map(|x| x.3.clone()))
        .collect();
    let table = CenteringTable {
        times: fit.grid.points(),
        cols: &cols,
    };
    let out: Vec<(Option<PointInference>, Option<String>)> = stage1
        .into_par_iter()
        .zip(fit.points.par_iter())
        .map(|(r, pt)| match r {
            Err(e) => (None, Some(e.to_string())),
            Ok((s, om, sums, cen)) => {
                let snap = pt.snapshot.as_ref().expect("converged point has a snapshot");
                let sw = Sandwich::new(&s, &om);
                let eta = eta_intervals(snap, &sw, k, level);
                let (gamma, gamma_error) = if p == 0 {
                    (None, None)
                } else {
                    match gamma_at(es, zs, k, snap, &s, &sums, &cen, Some(&table), level, inactive_eps) {
                        Ok(g) => (Some(g), None),
                        Err(e) => (None, Some(e.to_string())),
                    }
                };
                (
                    Some(PointInference {
                        t: snap.t,
                        s,
                        omega: om,
                        sandwich: sw,
                        eta,
                        centering: cen,
                        gamma,
                        gamma_error,
                    }),
                    None,
                )
            }
        })
        .collect();
    let (points, errors) = out.into_iter().unzip();
    fit.inference = Some(InferenceCurve { level, points, errors });
    Ok(())
}

/// Smallest eigenvalue of Ψ̂, for positive-semidefiniteness checks.
pub fn psi_min_eigenvalue(g: &GammaInference) -> f64 {
    min_eigenvalue(&g.psi_hat, g.estimate.len())
}
