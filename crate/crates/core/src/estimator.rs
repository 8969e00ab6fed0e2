//! Local estimating equations: fixed-point updates for the degree parameters
//! and Newton steps for the homophily coefficients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateSet;
use crate::error::{Error, Result};
use crate::events::EventStream;
use crate::inference::InferenceCurve;
use crate::kernel::{Bandwidth, KernelSpec};
use crate::linalg::{dot, max_abs, sym_inverse};
use crate::params::{ParamSnapshot, TimeGrid};
use crate::smoother::ExposureBasis;

/// Parameter magnitude treated as divergence.
pub const DIVERGENCE_BOUND: f64 = 50.0;

/// How the degree parameters are swept within one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// α and β both from the previous iterate, β_n held at 0.
    Jacobi,
    /// α first, then all β (reference included) from the new α, then recentre so β_n = 0.
    GaussSeidel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Threshold on the largest coordinate change.
    pub tol: f64,
    /// Threshold on ‖F‖∞ and ‖Q‖∞ required in addition to `tol`.
    pub residual_tol: f64,
    pub max_iter: usize,
    pub newton_inner_tol: f64,
    pub newton_max_inner: usize,
    pub inactive_eps: f64,
    pub warm_start: bool,
    pub sweep: Sweep,
    /// Newton step for γ uses the α, β of the current sweep rather than the previous iterate.
    pub gamma_uses_updated: bool,
    /// Restricted fit: one common α for every sender and β ≡ 0.
    pub homogeneous: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            residual_tol: 1e-8,
            max_iter: 500,
            newton_inner_tol: 1e-10,
            newton_max_inner: 50,
            inactive_eps: 1e-10,
            warm_start: true,
            sweep: Sweep::GaussSeidel,
            gamma_uses_updated: true,
            homogeneous: false,
        }
    }
}

impl SolverConfig {
    /// The update order exactly as the reference algorithm writes it.
    pub fn literal() -> Self {
        Self {
            sweep: Sweep::Jacobi,
            gamma_uses_updated: false,
            residual_tol: f64::INFINITY,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.residual_tol > 0.0) {
            return Err(Error::InvalidConfig(
                "solver needs tol > 0, residual_tol > 0 and max_iter >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub final_residual_f: f64,
    pub final_residual_q: f64,
    pub converged: bool,
    /// 0-based indices.
    pub inactive_out: Vec<usize>,
    pub inactive_in: Vec<usize>,
}

/// Everything the solver needs at one time point.
#[derive(Debug, Clone)]
pub struct LocalData {
    pub t: f64,
    pub n: usize,
    pub p: usize,
    /// h1 event weights, row-major `n × n`.
    pub w1: Vec<f64>,
    /// h2 covariate-weighted event sums, `n × n × p`.
    pub u2: Vec<f64>,
    pub basis: ExposureBasis,
}

impl LocalData {
    pub fn build(es: &EventStream, zs: &CovariateSet, k: &KernelSpec, t: f64) -> Self {
        let n = es.n();
        let p = zs.p();
        let mut w1 = vec![0.0; n * n];
        let r1 = k.radius(Bandwidth::H1);
        for e in es.window(t - r1, t + r1) {
            w1[e.sender * n + e.receiver] += k.weight(Bandwidth::H1, e.time - t);
        }
        let mut u2 = vec![0.0; n * n * p];
        if p > 0 {
            let r2 = k.radius(Bandwidth::H2);
            for e in es.window(t - r2, t + r2) {
                let kw = k.weight(Bandwidth::H2, e.time - t);
                let d = e.sender * n + e.receiver;
                let z = zs.at(e.sender, e.receiver, e.time);
                for (a, zc) in u2[d * p..(d + 1) * p].iter_mut().zip(z) {
                    *a += kw * zc;
                }
            }
        }
        Self {
            t,
            n,
            p,
            w1,
            u2,
            basis: ExposureBasis::build(zs, k, t, es.tau()),
        }
    }

    fn kept(&self, mask: Option<&[bool]>, d: usize) -> bool {
        mask.is_none_or(|m| m[d])
    }

    fn margins(&self, mask: Option<&[bool]>) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut out = vec![0.0; n];
        let mut inn = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let d = i * n + j;
                if i != j && self.kept(mask, d) {
                    out[i] += self.w1[d];
                    inn[j] += self.w1[d];
                }
            }
        }
        (out, inn)
    }

    fn u2_total(&self, mask: Option<&[bool]>) -> Vec<f64> {
        let (n, p) = (self.n, self.p);
        let mut u = vec![0.0; p];
        for d in 0..n * n {
            if d / n != d % n && self.kept(mask, d) {
                for (a, b) in u.iter_mut().zip(&self.u2[d * p..(d + 1) * p]) {
                    *a += b;
                }
            }
        }
        u
    }

    /// Row and column residual sums (not yet divided by n − 1).
    fn residual_margins(
        &self,
        mask: Option<&[bool]>,
        ea: &[f64],
        eb: &[f64],
        e1: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut rows = vec![0.0; n];
        let mut cols = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let d = i * n + j;
                if i != j && self.kept(mask, d) {
                    let r = self.w1[d] - ea[i] * eb[j] * e1[d];
                    rows[i] += r;
                    cols[j] += r;
                }
            }
        }
        (rows, cols)
    }

    /// `(Q, −∂Q/∂γ, local log-likelihood)`, all scaled by 1/N.
    fn gamma_terms(
        &self,
        mask: Option<&[bool]>,
        ea: &[f64],
        eb: &[f64],
        u_total: &[f64],
        gamma: &[f64],
    ) -> Result<GammaTerms> {
        let (n, p) = (self.n, self.p);
        let nn = (n * (n - 1)) as f64;
        let ez = self.basis.exp_z(gamma)?;
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        for i in 0..n {
            if ea[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let d = i * n + j;
                if i == j || eb[j] == 0.0 || !self.kept(mask, d) {
                    continue;
                }
                let c = ea[i] * eb[j];
                for q in self.basis.pieces(d) {
                    let v = c * self.basis.m2[q] * ez[q];
                    let z = self.basis.z(q);
                    s0 += v;
                    for a in 0..p {
                        s1[a] += v * z[a];
                        for b in 0..=a {
                            s2[a * p + b] += v * z[a] * z[b];
                        }
                    }
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                s2[b * p + a] = s2[a * p + b];
            }
        }
        Ok(GammaTerms {
            q: u_total.iter().zip(&s1).map(|(u, s)| (u - s) / nn).collect(),
            jneg: s2.iter().map(|x| x / nn).collect(),
            loglik: (dot(gamma, u_total) - s0) / nn,
        })
    }
}

struct GammaTerms {
    q: Vec<f64>,
    jneg: Vec<f64>,
    loglik: f64,
}

fn exps(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.exp()).collect()
}

/// `(F, Q)` at a snapshot.
pub fn residuals(
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    snap: &ParamSnapshot,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let ld = LocalData::build(es, zs, k, snap.t);
    residuals_local(&ld, None, snap)
}

/// `(F, Q)` from prebuilt local data; `mask` restricts the sums to retained dyads.
pub fn residuals_local(
    ld: &LocalData,
    mask: Option<&[bool]>,
    snap: &ParamSnapshot,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = ld.n;
    let ea = exps(&snap.alpha);
    let eb = exps(&snap.beta);
    let ez = ld.basis.exp_z(&snap.gamma)?;
    let e1 = ld.basis.dyad_sums(Bandwidth::H1, &ez);
    let (rows, cols) = ld.residual_margins(mask, &ea, &eb, &e1);
    let scale = 1.0 / (n - 1) as f64;
    let mut f: Vec<f64> = rows.iter().map(|r| r * scale).collect();
    f.extend(cols[..n - 1].iter().map(|c| c * scale));
    let q = if ld.p == 0 {
        Vec::new()
    } else {
        let u = ld.u2_total(mask);
        ld.gamma_terms(mask, &ea, &eb, &u, &snap.gamma)?.q
    };
    Ok((f, q))
}

/// Column residual of the reference node, `(n−1)^{-1} Σ_i [w_in − e^{α_i} E_in]`.
pub fn reference_column_residual(ld: &LocalData, snap: &ParamSnapshot) -> Result<f64> {
    let n = ld.n;
    let ea = exps(&snap.alpha);
    let eb = exps(&snap.beta);
    let ez = ld.basis.exp_z(&snap.gamma)?;
    let e1 = ld.basis.dyad_sums(Bandwidth::H1, &ez);
    let (_, cols) = ld.residual_margins(None, &ea, &eb, &e1);
    Ok(cols[n - 1] / (n - 1) as f64)
}

/// One sweep of the degree updates.
pub fn update_alpha_beta(
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    snap: &ParamSnapshot,
    cfg: &SolverConfig,
) -> Result<ParamSnapshot> {
    let ld = LocalData::build(es, zs, k, snap.t);
    let mut st = State::new(&ld, None, cfg, Some(snap))?;
    let ez = ld.basis.exp_z(&st.gamma)?;
    let e1 = ld.basis.dyad_sums(Bandwidth::H1, &ez);
    st.sweep_degrees(&e1);
    Ok(st.snapshot())
}

/// Newton solution of `Q = 0` in γ with α, β fixed at `snap`.
pub fn update_gamma(
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    snap: &ParamSnapshot,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    if zs.p() == 0 {
        return Ok(Vec::new());
    }
    let ld = LocalData::build(es, zs, k, snap.t);
    let st = State::new(&ld, None, cfg, Some(snap))?;
    let (g, _) = st.newton(&exps(&st.alpha), &exps(&st.beta), &st.gamma)?;
    Ok(g)
}

struct State<'a> {
    ld: &'a LocalData,
    mask: Option<&'a [bool]>,
    cfg: &'a SolverConfig,
    out: Vec<f64>,
    inn: Vec<f64>,
    u_total: Vec<f64>,
    active_out: Vec<bool>,
    active_in: Vec<bool>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gamma: Vec<f64>,
}

impl<'a> State<'a> {
    fn new(
        ld: &'a LocalData,
        mask: Option<&'a [bool]>,
        cfg: &'a SolverConfig,
        init: Option<&ParamSnapshot>,
    ) -> Result<Self> {
        let n = ld.n;
        let (out, inn) = ld.margins(mask);
        let (active_out, active_in): (Vec<bool>, Vec<bool>) = if cfg.homogeneous {
            let any = out.iter().any(|&x| x >= cfg.inactive_eps);
            (vec![any; n], vec![any; n])
        } else {
            (
                out.iter().map(|&x| x >= cfg.inactive_eps).collect(),
                inn.iter().map(|&x| x >= cfg.inactive_eps).collect(),
            )
        };
        let pick = |v: Option<&Vec<f64>>, i: usize, on: bool| -> f64 {
            if !on {
                return f64::NEG_INFINITY;
            }
            match v.map(|v| v[i]) {
                Some(x) if x.is_finite() => x,
                _ => 0.0,
            }
        };
        let alpha = (0..n)
            .map(|i| pick(init.map(|s| &s.alpha), i, active_out[i]))
            .collect();
        let mut beta: Vec<f64> = (0..n)
            .map(|j| pick(init.map(|s| &s.beta), j, active_in[j]))
            .collect();
        beta[n - 1] = 0.0;
        if cfg.homogeneous {
            beta.iter_mut().for_each(|b| *b = if b.is_finite() { 0.0 } else { *b });
        }
        let gamma = match init {
            Some(s) if s.gamma.len() == ld.p && s.gamma.iter().all(|g| g.is_finite()) => s.gamma.clone(),
            _ => vec![0.0; ld.p],
        };
        Ok(Self {
            ld,
            mask,
            cfg,
            u_total: ld.u2_total(mask),
            out,
            inn,
            active_out,
            active_in,
            alpha,
            beta,
            gamma,
        })
    }

    fn any_active(&self) -> bool {
        self.active_out.iter().any(|&a| a)
    }

    fn snapshot(&self) -> ParamSnapshot {
        ParamSnapshot {
            t: self.ld.t,
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            gamma: self.gamma.clone(),
            active_out: self.active_out.clone(),
            active_in: self.active_in.clone(),
        }
    }

    fn kept(&self, d: usize) -> bool {
        self.mask.is_none_or(|m| m[d])
    }

    /// Degree updates given the per-dyad h1 exposures at the current γ.
    fn sweep_degrees(&mut self, e1: &[f64]) {
        let n = self.ld.n;
        if self.cfg.homogeneous {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                num += self.out[i];
                for j in 0..n {
                    let d = i * n + j;
                    if i != j && self.kept(d) {
                        den += e1[d];
                    }
                }
            }
            if num > 0.0 && den > 0.0 {
                let a = num.ln() - den.ln();
                self.alpha.iter_mut().for_each(|x| *x = a);
            }
            return;
        }
        let eb_old = exps(&self.beta);
        let ea_old = exps(&self.alpha);
        for i in 0..n {
            if !self.active_out[i] {
                continue;
            }
            let den: f64 = (0..n)
                .filter(|&j| j != i && self.kept(i * n + j))
                .map(|j| eb_old[j] * e1[i * n + j])
                .sum();
            self.alpha[i] = if den > 0.0 {
                self.out[i].ln() - den.ln()
            } else {
                f64::NEG_INFINITY
            };
        }
        let ea = match self.cfg.sweep {
            Sweep::Jacobi => ea_old,
            Sweep::GaussSeidel => exps(&self.alpha),
        };
        let last = match self.cfg.sweep {
            Sweep::Jacobi => n - 1,
            Sweep::GaussSeidel => n,
        };
        for j in 0..last {
            if !self.active_in[j] {
                continue;
            }
            let den: f64 = (0..n)
                .filter(|&i| i != j && self.kept(i * n + j))
                .map(|i| ea[i] * e1[i * n + j])
                .sum();
            self.beta[j] = if den > 0.0 {
                self.inn[j].ln() - den.ln()
            } else {
                f64::NEG_INFINITY
            };
        }
        if self.cfg.sweep == Sweep::GaussSeidel {
            let s = self.beta[n - 1];
            if s.is_finite() {
                for b in self.beta.iter_mut() {
                    *b -= s;
                }
                for a in self.alpha.iter_mut() {
                    *a += s;
                }
            }
            self.beta[n - 1] = 0.0;
        }
    }

    /// Damped Newton on the concave local likelihood in γ; returns the root and ‖Q‖∞.
    fn newton(&self, ea: &[f64], eb: &[f64], gamma0: &[f64]) -> Result<(Vec<f64>, f64)> {
        let p = self.ld.p;
        let mut g = gamma0.to_vec();
        let mut cur = self
            .ld
            .gamma_terms(self.mask, ea, eb, &self.u_total, &g)?;
        for _ in 0..self.cfg.newton_max_inner {
            if max_abs(&cur.q) <= self.cfg.newton_inner_tol {
                break;
            }
            let inv = sym_inverse(&cur.jneg, p, "homophily Jacobian")?;
            let delta = crate::linalg::mat_vec(&inv, &cur.q);
            let mut step = 1.0;
            loop {
                let cand: Vec<f64> = g.iter().zip(&delta).map(|(a, b)| a + step * b).collect();
                match self.ld.gamma_terms(self.mask, ea, eb, &self.u_total, &cand) {
                    Ok(next) if next.loglik >= cur.loglik - 1e-12 * cur.loglik.abs() || step < 1e-8 => {
                        g = cand;
                        cur = next;
                        break;
                    }
                    Ok(_) => step *= 0.5,
                    Err(e) if step < 1e-8 => return Err(e),
                    Err(_) => step *= 0.5,
                }
            }
        }
        Ok((g, max_abs(&cur.q)))
    }

    fn check_divergence(&self) -> Result<()> {
        let n = self.ld.n;
        let named = self
            .alpha
            .iter()
            .enumerate()
            .map(|(i, &v)| (format!("alpha[{}]", i + 1), v))
            .chain(
                self.beta[..n - 1]
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| (format!("beta[{}]", j + 1), v)),
            )
            .chain(
                self.gamma
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| (format!("gamma[{}]", j + 1), v)),
            );
        for (name, v) in named {
            if v.is_nan() || (v.is_finite() && v.abs() > DIVERGENCE_BOUND) || v == f64::INFINITY {
                return Err(Error::Divergence {
                    t: self.ld.t,
                    coordinate: name,
                    value: v,
                });
            }
        }
        Ok(())
    }

    fn residual_norms(&self, e1: &[f64]) -> Result<(f64, f64)> {
        let n = self.ld.n;
        let ea = exps(&self.alpha);
        let eb = exps(&self.beta);
        let (rows, cols) = self.ld.residual_margins(self.mask, &ea, &eb, e1);
        let scale = 1.0 / (n - 1) as f64;
        let f = if self.cfg.homogeneous {
            rows.iter().sum::<f64>().abs() * scale
        } else {
            max_abs(&rows).max(max_abs(&cols[..n - 1])) * scale
        };
        let q = if self.ld.p == 0 {
            0.0
        } else {
            max_abs(
                &self
                    .ld
                    .gamma_terms(self.mask, &ea, &eb, &self.u_total, &self.gamma)?
                    .q,
            )
        };
        Ok((f, q))
    }
}

fn max_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Solve the local equations at `t` from `init` (zeros when absent).
pub fn solve_at(
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    t: f64,
    cfg: &SolverConfig,
    init: Option<&ParamSnapshot>,
) -> Result<(ParamSnapshot, SolveDiagnostics)> {
    let ld = LocalData::build(es, zs, k, t);
    solve_local(&ld, None, cfg, init)
}

/// [`solve_at`] on prebuilt local data, optionally restricted to retained dyads.
pub fn solve_local(
    ld: &LocalData,
    mask: Option<&[bool]>,
    cfg: &SolverConfig,
    init: Option<&ParamSnapshot>,
) -> Result<(ParamSnapshot, SolveDiagnostics)> {
    cfg.validate()?;
    let n = ld.n;
    let mut st = State::new(ld, mask, cfg, init)?;
    let diag = |st: &State, iterations, f, q, converged| SolveDiagnostics {
        iterations,
        final_residual_f: f,
        final_residual_q: q,
        converged,
        inactive_out: (0..n).filter(|&i| !st.active_out[i]).collect(),
        inactive_in: (0..n).filter(|&i| !st.active_in[i]).collect(),
    };
    if !st.any_active() {
        return Ok((st.snapshot(), diag(&st, 0, 0.0, 0.0, true)));
    }
    if !cfg.homogeneous && !st.active_in[n - 1] {
        return Err(Error::ReferenceInactive { t: ld.t });
    }
    let mut e1 = ld
        .basis
        .dyad_sums(Bandwidth::H1, &ld.basis.exp_z(&st.gamma)?);
    let (mut rf, mut rq) = (f64::INFINITY, f64::INFINITY);
    for it in 1..=cfg.max_iter {
        let (a0, b0, g0) = (st.alpha.clone(), st.beta.clone(), st.gamma.clone());
        st.sweep_degrees(&e1);
        if ld.p > 0 {
            let (ea, eb) = if cfg.gamma_uses_updated {
                (exps(&st.alpha), exps(&st.beta))
            } else {
                (exps(&a0), exps(&b0))
            };
            st.gamma = st.newton(&ea, &eb, &g0)?.0;
        }
        st.check_divergence()?;
        e1 = ld
            .basis
            .dyad_sums(Bandwidth::H1, &ld.basis.exp_z(&st.gamma)?);
        let change = max_change(&st.alpha, &a0)
            .max(max_change(&st.beta, &b0))
            .max(max_change(&st.gamma, &g0));
        (rf, rq) = st.residual_norms(&e1)?;
        if change <= cfg.tol && rf <= cfg.residual_tol && rq <= cfg.residual_tol {
            return Ok((st.snapshot(), diag(&st, it, rf, rq, true)));
        }
    }
    Ok((st.snapshot(), diag(&st, cfg.max_iter, rf, rq, false)))
}

/// Outcome at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFit {
    pub t: f64,
    pub snapshot: Option<ParamSnapshot>,
    pub diagnostics: Option<SolveDiagnostics>,
    pub error: Option<String>,
}

impl PointFit {
    pub fn converged(&self) -> bool {
        self.diagnostics.as_ref().is_some_and(|d| d.converged)
    }
}

/// Parameter curves on a grid; inference fields are filled by [`crate::inference::infer_curve`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub grid: TimeGrid,
    pub n: usize,
    pub p: usize,
    pub points: Vec<PointFit>,
    pub inference: Option<InferenceCurve>,
}

impl FitResult {
    pub fn snapshot(&self, g: usize) -> Option<&ParamSnapshot> {
        self.points[g].snapshot.as_ref()
    }

    pub fn all_converged(&self) -> bool {
        self.points.iter().all(|p| p.converged())
    }

    /// Values of stacked coordinate `c` along the grid (NaN where the point failed).
    pub fn curve(&self, c: usize) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| p.snapshot.as_ref().map_or(f64::NAN, |s| s.coordinate(c)))
            .collect()
    }

    /// Snapshot at `g`, or the nearest grid point that has one.
    pub fn nearest_snapshot(&self, g: usize) -> Option<&ParamSnapshot> {
        let m = self.points.len();
        (0..m)
            .flat_map(|d| [g.checked_sub(d), Some(g + d)])
            .flatten()
            .filter(|&x| x < m)
            .find_map(|x| self.points[x].snapshot.as_ref().filter(|_| self.points[x].converged()))
    }
}

pub(crate) fn point_from(t: f64, r: Result<(ParamSnapshot, SolveDiagnostics)>) -> PointFit {
    match r {
        Ok((s, d)) => PointFit {
            t,
            snapshot: Some(s),
            diagnostics: Some(d),
            error: None,
        },
        Err(e) => PointFit {
            t,
            snapshot: None,
            diagnostics: None,
            error: Some(e.to_string()),
        },
    }
}

pub fn fit_curve(
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> FitResult {
    fit_curve_masked(es, zs, k, grid, cfg, None)
}

/// Fit with dyads outside `mask` removed from every sum.
pub fn fit_curve_masked(
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    grid: &TimeGrid,
    cfg: &SolverConfig,
    mask: Option<&[bool]>,
) -> FitResult {
    let solve = |t: f64, init: Option<&ParamSnapshot>| {
        let ld = LocalData::build(es, zs, k, t);
        solve_local(&ld, mask, cfg, init)
    };
    let points = if cfg.warm_start {
        let mut prev: Option<ParamSnapshot> = None;
        let mut out = Vec::with_capacity(grid.len());
        for &t in grid.points() {
            let r = solve(t, prev.as_ref());
            if let Ok((s, d)) = &r {
                if d.converged {
                    prev = Some(s.clone());
                }
            }
            out.push(point_from(t, r));
        }
        out
    } else {
        grid.points()
            .par_iter()
            .map(|&t| point_from(t, solve(t, None)))
            .collect()
    };
    FitResult {
        grid: grid.clone(),
        n: es.n(),
        p: zs.p(),
        points,
        inference: None,
    }
}

/// Fit each grid point independently from its own initial snapshot.
pub fn fit_curve_from(
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    grid: &TimeGrid,
    cfg: &SolverConfig,
    inits: &[ParamSnapshot],
) -> Result<FitResult> {
    if inits.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "{} initial snapshots for {} grid points",
            inits.len(),
            grid.len()
        )));
    }
    let points = grid
        .points()
        .par_iter()
        .zip(inits.par_iter())
        .map(|(&t, init)| point_from(t, solve_at(es, zs, k, t, cfg, Some(init))))
        .collect();
    Ok(FitResult {
        grid: grid.clone(),
        n: es.n(),
        p: zs.p(),
        points,
        inference: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;

    fn poisson_stream(n: usize, rate: f64, seed: u64) -> EventStream {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut ev = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut t = 0.0;
                loop {
                    t += -(1.0 - rng.random::<f64>()).ln() / rate;
                    if t > 1.0 {
                        break;
                    }
                    ev.push(Event::new(i, j, t));
                }
            }
        }
        EventStream::new(n, 1.0, ev).unwrap()
    }

    #[test]
    fn no_event_residuals() {
        let es = EventStream::empty(2, 1.0).unwrap();
        let zs = CovariateSet::none(2);
        let k = KernelSpec::gaussian(0.1, 0.1).unwrap();
        let (f, q) = residuals(&es, &zs, &k, &ParamSnapshot::zeros(0.5, 2, 0)).unwrap();
        assert_eq!(f.len(), 3);
        for x in f {
            assert!((x + 1.0).abs() < 1e-6);
        }
        assert!(q.is_empty());
    }

    #[test]
    fn residuals_match_direct_summation() {
        let es = poisson_stream(3, 5.0, 11);
        let zs = CovariateSet::none(3);
        let k = KernelSpec::gaussian(0.1, 0.1).unwrap();
        let t = 0.5;
        let (f, _) = residuals(&es, &zs, &k, &ParamSnapshot::zeros(t, 3, 0)).unwrap();
        let mass = k.cdf_increment(Bandwidth::H1, t, 0.0, 1.0);
        let mut w = [[0.0; 3]; 3];
        for e in es.events() {
            let u = (e.time - t) / 0.1;
            w[e.sender][e.receiver] += (-0.5 * u * u).exp() / (0.1 * (2.0 * std::f64::consts::PI).sqrt());
        }
        for i in 0..3 {
            let want = (0..3).filter(|&j| j != i).map(|j| w[i][j] - mass).sum::<f64>() / 2.0;
            assert!((f[i] - want).abs() < 1e-12);
        }
        for j in 0..2 {
            let want = (0..3).filter(|&i| i != j).map(|i| w[i][j] - mass).sum::<f64>() / 2.0;
            assert!((f[3 + j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn balanced_alpha_is_zero_and_doubling_adds_log2() {
        // Each dyad gets one event exactly at t: out_i = 2·K_h(0); set h so mass matches.
        let t = 0.5;
        let k = KernelSpec::gaussian(0.1, 0.1).unwrap();
        let mut ev = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    ev.push(Event::new(i, j, t));
                }
            }
        }
        let es = EventStream::new(3, 1.0, ev.clone()).unwrap();
        let zs = CovariateSet::none(3);
        let cfg = SolverConfig::literal();
        let s0 = ParamSnapshot::zeros(t, 3, 0);
        let a = update_alpha_beta(&es, &zs, &k, &s0, &cfg).unwrap();
        let mass = k.cdf_increment(Bandwidth::H1, t, 0.0, 1.0);
        let expect = (k.weight(Bandwidth::H1, 0.0) / mass).ln();
        for i in 0..3 {
            assert!((a.alpha[i] - expect).abs() < 1e-12);
        }
        let mut ev2 = ev.clone();
        ev2.extend(ev);
        let es2 = EventStream::new(3, 1.0, ev2).unwrap();
        let b = update_alpha_beta(&es2, &zs, &k, &s0, &cfg).unwrap();
        for i in 0..3 {
            assert!((b.alpha[i] - a.alpha[i] - 2f64.ln()).abs() < 1e-12);
        }
        assert_eq!(b.beta[2], 0.0);
    }

    #[test]
    fn gamma_closed_form_for_constant_covariate() {
        let es = poisson_stream(4, 3.0, 5);
        let zs = CovariateSet::constant(4, vec![1.0]);
        let k = KernelSpec::gaussian(0.1, 0.08).unwrap();
        let t = 0.4;
        let snap = ParamSnapshot::zeros(t, 4, 1);
        let g = update_gamma(&es, &zs, &k, &snap, &SolverConfig::default()).unwrap();
        let sc = crate::smoother::smooth_events(&es, &zs, &k, Bandwidth::H2, t);
        let wtot: f64 = sc.w.iter().sum();
        let m = 12.0 * k.cdf_increment(Bandwidth::H2, t, 0.0, 1.0);
        assert!((g[0] - (wtot / m).ln()).abs() < 1e-9);

        // Rescaling Z by 1/c rescales γ by c.
        let zs2 = CovariateSet::constant(4, vec![0.25]);
        let g2 = update_gamma(&es, &zs2, &k, &snap, &SolverConfig::default()).unwrap();
        assert!((g2[0] - 4.0 * g[0]).abs() < 1e-8);
    }

    #[test]
    fn gamma_matches_bisection() {
        let es = poisson_stream(3, 6.0, 17);
        let zs = CovariateSet::from_static(3, 1, |i, j| vec![if (i + j) % 2 == 0 { 1.0 } else { 0.0 }]).unwrap();
        let k = KernelSpec::gaussian(0.15, 0.15).unwrap();
        let mut snap = ParamSnapshot::zeros(0.5, 3, 1);
        snap.alpha = vec![0.3, -0.2, 0.1];
        snap.beta = vec![0.2, -0.1, 0.0];
        let g = update_gamma(&es, &zs, &k, &snap, &SolverConfig::default()).unwrap()[0];
        let q = |x: f64| {
            let mut s = snap.clone();
            s.gamma = vec![x];
            residuals(&es, &zs, &k, &s).unwrap().1[0]
        };
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if q(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((g - 0.5 * (lo + hi)).abs() < 1e-8);
    }

    #[test]
    fn empty_data_gives_inactive_snapshot() {
        let es = EventStream::new(3, 1.0, vec![Event::new(0, 1, 0.05)]).unwrap();
        let zs = CovariateSet::none(3);
        let k = KernelSpec::new(crate::kernel::KernelFamily::Epanechnikov, 0.05, 0.05).unwrap();
        let (s, d) = solve_at(&es, &zs, &k, 0.7, &SolverConfig::default(), None).unwrap();
        assert!(d.converged);
        assert_eq!(d.inactive_out.len() + d.inactive_in.len(), 6);
        assert!(s.alpha.iter().all(|a| *a == f64::NEG_INFINITY));
        assert_eq!(s.beta[2], 0.0);
    }

    #[test]
    fn solution_satisfies_equations_and_reference_column() {
        let es = poisson_stream(5, 8.0, 3);
        let zs = CovariateSet::from_static(5, 2, |i, j| vec![(i as f64 - j as f64).abs() / 2.0, ((i * j) % 3) as f64 - 1.0]).unwrap();
        let k = KernelSpec::gaussian(0.15, 0.2).unwrap();
        let (s, d) = solve_at(&es, &zs, &k, 0.5, &SolverConfig::default(), None).unwrap();
        assert!(d.converged);
        let (f, q) = residuals(&es, &zs, &k, &s).unwrap();
        assert!(max_abs(&f) <= 1e-6 && max_abs(&q) <= 1e-6);
        let ld = LocalData::build(&es, &zs, &k, 0.5);
        assert!(reference_column_residual(&ld, &s).unwrap().abs() <= 1e-6);
    }

    #[test]
    fn initialisation_does_not_matter() {
        let es = poisson_stream(6, 4.0, 9);
        let zs = CovariateSet::from_static(6, 1, |i, j| vec![((i + 2 * j) % 3) as f64 - 1.0]).unwrap();
        let k = KernelSpec::gaussian(0.1, 0.1).unwrap();
        let cfg = SolverConfig::default();
        let (a, _) = solve_at(&es, &zs, &k, 0.6, &cfg, None).unwrap();
        let mut init = a.clone();
        init.alpha.iter_mut().for_each(|x| *x += 5.0);
        init.beta[..5].iter_mut().for_each(|x| *x += 5.0);
        init.gamma[0] += 5.0;
        let (b, d) = solve_at(&es, &zs, &k, 0.6, &cfg, Some(&init)).unwrap();
        assert!(d.converged);
        for c in 0..a.dim() {
            assert!((a.coordinate(c) - b.coordinate(c)).abs() < 1e-3);
        }
    }

    #[test]
    fn adding_events_raises_degree_parameters() {
        let es = poisson_stream(4, 5.0, 21);
        let zs = CovariateSet::none(4);
        let k = KernelSpec::gaussian(0.1, 0.1).unwrap();
        let cfg = SolverConfig::default();
        let (a, _) = solve_at(&es, &zs, &k, 0.5, &cfg, None).unwrap();
        let mut ev = es.events().to_vec();
        ev.extend((0..5).map(|q| Event::new(1, 2, 0.45 + 0.02 * q as f64)));
        let es2 = EventStream::new(4, 1.0, ev).unwrap();
        let (b, _) = solve_at(&es2, &zs, &k, 0.5, &cfg, None).unwrap();
        assert!(b.alpha[1] >= a.alpha[1]);
        assert!(b.beta[2] >= a.beta[2]);
    }

    #[test]
    fn single_point_grid_equals_solve_at_and_order_is_irrelevant() {
        let es = poisson_stream(4, 5.0, 8);
        let zs = CovariateSet::from_static(4, 1, |i, _| vec![i as f64 * 0.3]).unwrap();
        let k = KernelSpec::gaussian(0.1, 0.1).unwrap();
        let cfg = SolverConfig::default();
        let g = TimeGrid::new(1.0, vec![0.3]).unwrap();
        let fit = fit_curve(&es, &zs, &k, &g, &cfg);
        let (s, _) = solve_at(&es, &zs, &k, 0.3, &cfg, None).unwrap();
        assert_eq!(fit.points[0].snapshot.as_ref().unwrap(), &s);

        let cold = SolverConfig {
            warm_start: false,
            ..cfg
        };
        let fwd = fit_curve(&es, &zs, &k, &TimeGrid::new(1.0, vec![0.2, 0.5, 0.8]).unwrap(), &cold);
        for (q, t) in [0.8, 0.5, 0.2].iter().enumerate() {
            let single = fit_curve(&es, &zs, &k, &TimeGrid::new(1.0, vec![*t]).unwrap(), &cold);
            assert_eq!(single.points[0].snapshot, fwd.points[2 - q].snapshot);
        }
    }

    #[test]
    fn literal_sweep_keeps_reference_pinned() {
        let es = poisson_stream(4, 5.0, 2);
        let zs = CovariateSet::none(4);
        let k = KernelSpec::gaussian(0.1, 0.1).unwrap();
        let s = update_alpha_beta(&es, &zs, &k, &ParamSnapshot::zeros(0.5, 4, 0), &SolverConfig::literal()).unwrap();
        assert_eq!(s.beta[3], 0.0);
    }

    #[test]
    fn homogeneous_fit_has_common_alpha() {
        let es = poisson_stream(4, 5.0, 4);
        let zs = CovariateSet::none(4);
        let k = KernelSpec::gaussian(0.1, 0.1).unwrap();
        let cfg = SolverConfig {
            homogeneous: true,
            ..SolverConfig::default()
        };
        let (s, d) = solve_at(&es, &zs, &k, 0.5, &cfg, None).unwrap();
        assert!(d.converged);
        assert!(s.alpha.windows(2).all(|w| w[0] == w[1]));
        assert!(s.beta.iter().all(|&b| b == 0.0));
    }
}
