//! Multiplier-bootstrap tests for time variation and degree heterogeneity.

use std::borrow::Cow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateSet;
use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::events::EventStream;
use crate::inference::{infer_curve, PointInference};
use crate::kernel::{Bandwidth, KernelSpec};
use crate::linalg::mat_vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    TemporalEta,
    TemporalGamma,
    DegreeAlpha,
    DegreeBeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heterogeneity {
    Alpha,
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub nu: f64,
    pub n_boot: usize,
    pub seed: u64,
}

impl BootstrapConfig {
    fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(Error::InvalidConfig(format!("nu must lie in (0, 1), got {}", self.nu)));
        }
        if self.n_boot == 0 {
            return Err(Error::InvalidConfig("n_boot must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub kind: TestKind,
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub nu: f64,
    pub n_boot: usize,
    pub seed: u64,
    pub grid_times: Vec<f64>,
    /// Largest observed contribution per coordinate (node for degree tests); NaN if never evaluated.
    pub max_contributions: Vec<f64>,
    #[serde(skip)]
    pub replicates: Vec<f64>,
}

/// Standard-normal multipliers for one replicate, `n × n` row-major with a zero diagonal.
pub fn multipliers(n: usize, seed: u64, replicate: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                g[i * n + j] = StandardNormal.sample(&mut rng);
            }
        }
    }
    g
}

/// 1-based order statistic used as the critical value; beyond `n_boot` the critical value is infinite.
/// Uses the same comparison as the p-value so that `statistic > critical ⇔ p < ν` holds exactly.
pub fn critical_index(nu: f64, n_boot: usize) -> usize {
    let denom = (n_boot + 1) as f64;
    let below = (1..=n_boot + 1).take_while(|&j| (j as f64) / denom < nu).count();
    n_boot + 1 - below
}

/// Critical value and p-value from the replicate statistics.
pub fn calibrate(observed: f64, replicates: &[f64], nu: f64) -> (f64, f64) {
    let b = replicates.len();
    let mut sorted = replicates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = critical_index(nu, b);
    let cv = if k <= b { sorted[k - 1] } else { f64::INFINITY };
    let exceed = replicates.iter().filter(|&&r| r >= observed).count();
    (cv, (1 + exceed) as f64 / (1 + b) as f64)
}

fn run_bootstrap(
    kind: TestKind,
    n: usize,
    cfg: &BootstrapConfig,
    observed: f64,
    max_contributions: Vec<f64>,
    grid_times: Vec<f64>,
    stat: impl Fn(&[f64]) -> f64 + Sync,
) -> TestReport {
    let replicates: Vec<f64> = (0..cfg.n_boot as u64)
        .into_par_iter()
        .map(|r| stat(&multipliers(n, cfg.seed, r)))
        .collect();
    let (critical_value, p_value) = calibrate(observed, &replicates, cfg.nu);
    TestReport {
        kind,
        statistic: observed,
        critical_value,
        p_value,
        reject: observed > critical_value,
        nu: cfg.nu,
        n_boot: cfg.n_boot,
        seed: cfg.seed,
        grid_times,
        max_contributions,
        replicates,
    }
}

/// Grid indices of `times` inside the fit grid.
fn locate(fit: &FitResult, times: &[f64], needed: usize) -> Result<Vec<usize>> {
    if times.len() < needed {
        return Err(Error::InsufficientGrid {
            needed,
            got: times.len(),
        });
    }
    times
        .iter()
        .map(|&t| {
            fit.grid
                .position(t)
                .ok_or_else(|| Error::GridMismatch(format!("time {t} is not on the fit grid")))
        })
        .collect()
}

fn with_inference<'a>(
    fit: &'a FitResult,
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
) -> Result<Cow<'a, FitResult>> {
    if fit.inference.is_some() {
        return Ok(Cow::Borrowed(fit));
    }
    let mut f = fit.clone();
    infer_curve(&mut f, es, zs, k, 0.95, 1e-10)?;
    Ok(Cow::Owned(f))
}

fn point<'a>(fit: &'a FitResult, g: usize) -> Option<&'a PointInference> {
    fit.inference.as_ref()?.points[g].as_ref()
}

/// Kernel-weighted event mass per dyad around `t`: `(i, j, Σ K(u−t))`.
fn dyad_kernel_mass(es: &EventStream, k: &KernelSpec, which: Bandwidth, t: f64) -> Vec<(usize, usize, f64)> {
    let r = k.radius(which);
    let n = es.n();
    let mut acc = std::collections::BTreeMap::new();
    for e in es.window(t - r, t + r) {
        *acc.entry(e.sender * n + e.receiver).or_insert(0.0) += k.weight(which, e.time - t);
    }
    acc.into_iter().map(|(d, w)| (d / n, d % n, w)).collect()
}

/// `Ŝ(t) ∫K_{h1}(u−t) dÑ(u)` for one multiplier draw.
struct EtaProjector<'a> {
    pi: &'a PointInference,
    mass: Vec<(usize, usize, f64)>,
}

impl EtaProjector<'_> {
    fn project(&self, g: &[f64]) -> Vec<f64> {
        let n = self.pi.s.n;
        let mut y = vec![0.0; 2 * n - 1];
        for &(i, j, w) in &self.mass {
            let v = w * g[i * n + j];
            y[i] += v;
            if j < n - 1 {
                y[n + j] += v;
            }
        }
        self.pi.s.apply(&y)
    }
}

fn eta_projectors<'a>(
    fit: &'a FitResult,
    es: &EventStream,
    k: &KernelSpec,
    idx: &[usize],
) -> Vec<Option<EtaProjector<'a>>> {
    idx.iter()
        .map(|&g| {
            point(fit, g).map(|pi| EtaProjector {
                pi,
                mass: dyad_kernel_mass(es, k, Bandwidth::H1, pi.t),
            })
        })
        .collect()
}

/// `𝒯_η`: maximal standardised change of any degree parameter between two grid times.
pub fn test_temporal_eta(
    fit: &FitResult,
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    cfg: &BootstrapConfig,
    pair_grid: &[f64],
) -> Result<TestReport> {
    cfg.validate()?;
    let idx = locate(fit, pair_grid, 2)?;
    let fit = with_inference(fit, es, zs, k)?;
    let n = es.n();
    let m = 2 * n - 1;
    let proj = eta_projectors(&fit, es, k, &idx);
    let eta: Vec<Option<Vec<f64>>> = idx.iter().map(|&g| fit.snapshot(g).map(|s| s.eta())).collect();

    // (a, b, coordinate, 1/√ϑ) for every usable combination.
    let mut terms = Vec::new();
    let mut observed = 0.0f64;
    let mut contrib = vec![f64::NAN; m];
    let root = (n as f64 * k.h1).sqrt();
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            let (Some(pa), Some(pb)) = (&proj[a], &proj[b]) else { continue };
            let (Some(ea), Some(eb)) = (&eta[a], &eta[b]) else { continue };
            for c in 0..m {
                let var = pa.pi.sandwich.sigma[c] + pb.pi.sandwich.sigma[c];
                if !(var > 0.0) || !ea[c].is_finite() || !eb[c].is_finite() {
                    continue;
                }
                let inv = 1.0 / var.sqrt();
                let v = root * (ea[c] - eb[c]).abs() * inv;
                observed = observed.max(v);
                contrib[c] = if contrib[c].is_nan() { v } else { contrib[c].max(v) };
                terms.push((a, b, c, inv));
            }
        }
    }
    let scale = (k.h1 / n as f64).sqrt();
    let stat = |g: &[f64]| {
        let x: Vec<Option<Vec<f64>>> = proj.iter().map(|p| p.as_ref().map(|p| p.project(g))).collect();
        terms.iter().fold(0.0f64, |acc, &(a, b, c, inv)| {
            let (xa, xb) = (x[a].as_ref().unwrap(), x[b].as_ref().unwrap());
            acc.max(scale * (xa[c] - xb[c]).abs() * inv)
        })
    };
    Ok(run_bootstrap(TestKind::TemporalEta, n, cfg, observed, contrib, pair_grid.to_vec(), stat))
}

/// `𝒯_γ`: maximal standardised change of any bias-corrected homophily coefficient.
pub fn test_temporal_gamma(
    fit: &FitResult,
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    cfg: &BootstrapConfig,
    pair_grid: &[f64],
) -> Result<TestReport> {
    cfg.validate()?;
    let p = zs.p();
    if p == 0 {
        return Err(Error::InvalidCovariates("temporal homophily test needs p >= 1".into()));
    }
    let idx = locate(fit, pair_grid, 2)?;
    let fit = with_inference(fit, es, zs, k)?;
    let n = es.n();
    let nn = (n * (n - 1)) as f64;

    // Per grid time: corrected estimate, ψ diagonal and the per-dyad vectors H⁻¹∫K(Z − VSι)dN.
    struct Prepared {
        corrected: Vec<f64>,
        psi: Vec<f64>,
        dyads: Vec<(usize, Vec<f64>)>,
    }
    let prepared: Vec<Option<Prepared>> = idx
        .iter()
        .map(|&g| {
            let pi = point(&fit, g)?;
            let gi = pi.gamma.as_ref()?;
            let r = k.radius(Bandwidth::H2);
            let mut raw: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
            let mut cen = vec![0.0; p];
            for e in es.window(pi.t - r, pi.t + r) {
                let w = k.weight(Bandwidth::H2, e.time - pi.t);
                let z = zs.at(e.sender, e.receiver, e.time);
                pi.centering.dyad(e.sender, e.receiver, &mut cen);
                let acc = raw.entry(e.sender * n + e.receiver).or_insert_with(|| vec![0.0; p]);
                for c in 0..p {
                    acc[c] += w * (z[c] - cen[c]);
                }
            }
            let dyads = raw.into_iter().map(|(d, v)| (d, mat_vec(&gi.h_q_inv, &v))).collect();
            Some(Prepared {
                corrected: (0..p).map(|c| gi.estimate[c] - gi.bias[c]).collect(),
                psi: (0..p).map(|c| gi.psi_hat[c * p + c]).collect(),
                dyads,
            })
        })
        .collect();

    let mut terms = Vec::new();
    let mut observed = 0.0f64;
    let mut contrib = vec![f64::NAN; p];
    let root = (nn * k.h2).sqrt();
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            let (Some(pa), Some(pb)) = (&prepared[a], &prepared[b]) else { continue };
            for c in 0..p {
                let var = pa.psi[c] + pb.psi[c];
                if !(var > 0.0) {
                    continue;
                }
                let inv = 1.0 / var.sqrt();
                let v = root * (pa.corrected[c] - pb.corrected[c]).abs() * inv;
                observed = observed.max(v);
                contrib[c] = if contrib[c].is_nan() { v } else { contrib[c].max(v) };
                terms.push((a, b, c, inv));
            }
        }
    }
    let scale = (k.h2 / nn).sqrt();
    let stat = |g: &[f64]| {
        let x: Vec<Option<Vec<f64>>> = prepared
            .iter()
            .map(|pr| {
                pr.as_ref().map(|pr| {
                    let mut s = vec![0.0; p];
                    for (d, v) in &pr.dyads {
                        for c in 0..p {
                            s[c] += g[*d] * v[c];
                        }
                    }
                    s
                })
            })
            .collect();
        terms.iter().fold(0.0f64, |acc, &(a, b, c, inv)| {
            let (xa, xb) = (x[a].as_ref().unwrap(), x[b].as_ref().unwrap());
            acc.max(scale * (xa[c] - xb[c]).abs() * inv)
        })
    };
    Ok(run_bootstrap(TestKind::TemporalGamma, n, cfg, observed, contrib, pair_grid.to_vec(), stat))
}

/// `𝒟_α` or `𝒟_β`: maximal standardised gap between two nodes' degree parameters.
pub fn test_degree_heterogeneity(
    fit: &FitResult,
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    which: Heterogeneity,
    cfg: &BootstrapConfig,
    t_grid: &[f64],
) -> Result<TestReport> {
    cfg.validate()?;
    let idx = locate(fit, t_grid, 1)?;
    let fit = with_inference(fit, es, zs, k)?;
    let n = es.n();
    let (offset, count, kind) = match which {
        Heterogeneity::Alpha => (0, n, TestKind::DegreeAlpha),
        Heterogeneity::Beta => (n, n - 1, TestKind::DegreeBeta),
    };
    let proj = eta_projectors(&fit, es, k, &idx);

    // (grid slot, a, b, 1/√ζ)
    let mut terms = Vec::new();
    let mut observed = 0.0f64;
    let mut contrib = vec![f64::NAN; count];
    let root = (n as f64 * k.h1).sqrt();
    for (slot, &g) in idx.iter().enumerate() {
        let (Some(pr), Some(snap)) = (&proj[slot], fit.snapshot(g)) else { continue };
        let eta = snap.eta();
        let (s, om, sw) = (&pr.pi.s, &pr.pi.omega, &pr.pi.sandwich);
        for i in 0..count {
            for j in i + 1..count {
                let (a, b) = (offset + i, offset + j);
                if !s.active[a] || !s.active[b] || !eta[a].is_finite() || !eta[b].is_finite() {
                    continue;
                }
                let zeta = sw.contrast(s, om, a, b);
                if !(zeta > 0.0) {
                    continue;
                }
                let inv = 1.0 / zeta.sqrt();
                let v = root * (eta[a] - eta[b]).abs() * inv;
                observed = observed.max(v);
                for node in [i, j] {
                    contrib[node] = if contrib[node].is_nan() { v } else { contrib[node].max(v) };
                }
                terms.push((slot, a, b, inv));
            }
        }
    }
    let scale = (k.h1 / n as f64).sqrt();
    let stat = |g: &[f64]| {
        let x: Vec<Option<Vec<f64>>> = proj.iter().map(|p| p.as_ref().map(|p| p.project(g))).collect();
        terms.iter().fold(0.0f64, |acc, &(slot, a, b, inv)| {
            let xs = x[slot].as_ref().unwrap();
            acc.max(scale * (xs[a] - xs[b]).abs() * inv)
        })
    };
    Ok(run_bootstrap(kind, n, cfg, observed, contrib, t_grid.to_vec(), stat))
}
