//! Synthetic event streams from the model by per-dyad thinning.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateSet;
use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::events::{Event, EventStream};
use crate::io::fmt_float;
use crate::params::{ParamSnapshot, TimeGrid};

pub const MAX_RATE: f64 = 1e6;
const RATE_GRID: usize = 1000;
const RATE_INFLATION: f64 = 1.05;

/// Built-in parameter families. Node conditions like `i < n/2` use 1-based ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case", deny_unknown_fields)]
pub enum Design {
    /// Sine/cosine against linear halves with sparsity constant `c0`; `p = 2` standard-normal covariates.
    SineLinear { c0: f64 },
    /// Degree effects scaled by `b` on the first half; block indicator covariate.
    IndicatorBlock { b: f64 },
    /// Common degree trend of amplitude `c1`, homophily amplitude `c2`.
    TemporalTrend { c1: f64, c2: f64 },
    /// All degree parameters `t/2` except `α_n = t/2 + c` and `β_n = 0`.
    DegreeShift { c: f64 },
    GofCase1,
    GofCase2,
    GofCase3,
    /// Constant dyad rate; nonempty `gamma` adds static Uniform(0, 1) covariates.
    Constant {
        rate: f64,
        #[serde(default)]
        gamma: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CovariateLaw {
    None,
    StandardNormal(usize),
    IndicatorBlock,
    Uniform(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    #[serde(default = "one")]
    pub tau: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub design: Design,
    /// Fixed thinning bound instead of the grid maximum (couples runs that share a seed).
    #[serde(default)]
    pub dominating_rate: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn sin2pi(t: f64) -> f64 {
    (2.0 * PI * t).sin()
}

fn cos2pi(t: f64) -> f64 {
    (2.0 * PI * t).cos()
}

impl Scenario {
    pub fn new(n: usize, seed: u64, design: Design) -> Self {
        Self {
            n,
            tau: 1.0,
            seed,
            design,
            dominating_rate: None,
        }
    }

    fn law(&self) -> CovariateLaw {
        match &self.design {
            Design::SineLinear { .. } => CovariateLaw::StandardNormal(2),
            Design::IndicatorBlock { .. } => CovariateLaw::IndicatorBlock,
            Design::TemporalTrend { .. } | Design::DegreeShift { .. } => CovariateLaw::StandardNormal(1),
            Design::GofCase1 | Design::GofCase2 | Design::GofCase3 => CovariateLaw::StandardNormal(3),
            Design::Constant { gamma, .. } if gamma.is_empty() => CovariateLaw::None,
            Design::Constant { gamma, .. } => CovariateLaw::Uniform(gamma.len()),
        }
    }

    pub fn p(&self) -> usize {
        match self.law() {
            CovariateLaw::None => 0,
            CovariateLaw::StandardNormal(p) | CovariateLaw::Uniform(p) => p,
            CovariateLaw::IndicatorBlock => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig("scenario needs n >= 2".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig("scenario tau must be positive".into()));
        }
        let half_split = matches!(
            self.design,
            Design::SineLinear { .. } | Design::IndicatorBlock { .. } | Design::GofCase2 | Design::GofCase3
        );
        if half_split && self.n % 2 == 1 {
            return Err(Error::InvalidConfig("this design splits nodes in halves; n must be even".into()));
        }
        if let Design::Constant { rate, .. } = self.design {
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(Error::InvalidConfig("constant rate must be finite and nonnegative".into()));
            }
        }
        if let Some(r) = self.dominating_rate {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidConfig("dominating rate must be positive".into()));
            }
        }
        Ok(())
    }

    /// `α_i(t)` before pinning (0-based `i`).
    pub fn alpha(&self, i: usize, t: f64) -> f64 {
        let n = self.n as f64;
        let id = (i + 1) as f64;
        let first_half = id < n / 2.0;
        match &self.design {
            Design::SineLinear { c0 } => {
                -c0 * n.ln() + if first_half { 2.5 + sin2pi(t) } else { 1.5 + t / 2.0 }
            }
            Design::IndicatorBlock { b } => {
                if first_half {
                    b * (-0.5 * n.ln() + 3.0 + t / 2.0)
                } else {
                    0.0
                }
            }
            Design::TemporalTrend { c1, .. } => -0.5 * n.ln() + 2.5 + c1 * sin2pi(t),
            Design::DegreeShift { c } => t / 2.0 + if i + 1 == self.n { *c } else { 0.0 },
            Design::GofCase1 => 0.0,
            Design::GofCase2 => {
                if first_half {
                    -(0.5 * n.ln() + 3.0 + t / 2.0)
                } else {
                    0.0
                }
            }
            Design::GofCase3 => {
                if id > n / 2.0 {
                    0.0
                } else if t <= 0.25 {
                    -(0.5 * n.ln() + 3.0 + t / 2.0)
                } else if t <= 0.5 {
                    0.5 * n.ln() + 3.0 + t / 2.0
                } else if t <= 0.75 {
                    0.2
                } else {
                    0.0
                }
            }
            Design::Constant { rate, .. } => rate.ln(),
        }
    }

    /// `β_j(t)` before pinning (0-based `j`).
    pub fn beta(&self, j: usize, t: f64) -> f64 {
        let n = self.n as f64;
        let first_half = ((j + 1) as f64) < n / 2.0;
        let last = j + 1 == self.n;
        match &self.design {
            Design::SineLinear { c0 } => {
                -c0 * n.ln() + if first_half { 2.5 + cos2pi(t) } else { 1.5 + t / 2.0 }
            }
            Design::TemporalTrend { .. } | Design::DegreeShift { .. } if last => 0.0,
            Design::DegreeShift { .. } => t / 2.0,
            Design::Constant { .. } => 0.0,
            _ => self.alpha(j, t),
        }
    }

    pub fn gamma(&self, t: f64) -> Vec<f64> {
        match &self.design {
            Design::TemporalTrend { c2, .. } => vec![c2 * sin2pi(t) / 3.0],
            Design::Constant { gamma, .. } => gamma.clone(),
            _ => vec![sin2pi(t) / 3.0; self.p()],
        }
    }

    /// True parameters at `t` with the reference in-degree parameter moved into every `α_i`.
    pub fn truth(&self, t: f64) -> ParamSnapshot {
        let n = self.n;
        let shift = self.beta(n - 1, t);
        let mut s = ParamSnapshot::zeros(t, n, self.p());
        for i in 0..n {
            s.alpha[i] = self.alpha(i, t) + shift;
            s.beta[i] = self.beta(i, t) - shift;
        }
        s.beta[n - 1] = 0.0;
        s.gamma = self.gamma(t);
        s
    }

    /// True intensity of dyad `(i, j)` at `t` given its static covariate.
    pub fn intensity(&self, i: usize, j: usize, z: &[f64], t: f64) -> f64 {
        let zg = match &self.design {
            Design::TemporalTrend { c2, .. } => z[0] * c2 * sin2pi(t) / 3.0,
            Design::Constant { gamma, .. } => z.iter().zip(gamma).map(|(a, b)| a * b).sum(),
            _ => z.iter().sum::<f64>() * sin2pi(t) / 3.0,
        };
        (self.alpha(i, t) + self.beta(j, t) + zg).exp()
    }

    fn draw_z(&self, i: usize, j: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self.law() {
            CovariateLaw::None => Vec::new(),
            CovariateLaw::StandardNormal(p) => (0..p).map(|_| StandardNormal.sample(rng)).collect(),
            CovariateLaw::Uniform(p) => (0..p).map(|_| rng.random::<f64>()).collect(),
            CovariateLaw::IndicatorBlock => {
                vec![if i + 1 <= 4 && (j + 1) as f64 <= self.n as f64 / 3.0 { 1.0 } else { 0.0 }]
            }
        }
    }
}

/// Random stream of dyad `(i, j)`.
pub fn dyad_rng(seed: u64, n: usize, i: usize, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((i * n + j) as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub events: EventStream,
    pub covariates: CovariateSet,
    pub scenario: Scenario,
}

fn simulate_dyad(sc: &Scenario, i: usize, j: usize) -> Result<(Vec<f64>, Vec<Event>)> {
    let mut rng = dyad_rng(sc.seed, sc.n, i, j);
    let z = sc.draw_z(i, j, &mut rng);
    let bound = match sc.dominating_rate {
        Some(r) => r,
        None => {
            let peak = (0..RATE_GRID)
                .map(|k| sc.intensity(i, j, &z, sc.tau * k as f64 / (RATE_GRID - 1) as f64))
                .fold(0.0, f64::max);
            peak * RATE_INFLATION
        }
    };
    if !(bound <= MAX_RATE) {
        return Err(Error::RateExplosion {
            sender: i + 1,
            receiver: j + 1,
            rate: bound,
        });
    }
    let mut events = Vec::new();
    if bound == 0.0 {
        return Ok((z, events));
    }
    let mut t = 0.0;
    loop {
        t += -(1.0 - rng.random::<f64>()).ln() / bound;
        if t > sc.tau {
            break;
        }
        let u: f64 = rng.random();
        if u * bound <= sc.intensity(i, j, &z, t) && t > 0.0 {
            events.push(Event::new(i, j, t));
        }
    }
    Ok((z, events))
}

pub fn simulate(sc: &Scenario) -> Result<Simulation> {
    sc.validate()?;
    let n = sc.n;
    let p = sc.p();
    let per: Vec<(Vec<f64>, Vec<Event>)> = (0..n * n)
        .into_par_iter()
        .map(|d| {
            let (i, j) = (d / n, d % n);
            if i == j {
                Ok((vec![0.0; p], Vec::new()))
            } else {
                simulate_dyad(sc, i, j)
            }
        })
        .collect::<Result<_>>()?;
    let covariates = if p == 0 {
        CovariateSet::none(n)
    } else {
        CovariateSet::from_static(n, p, |i, j| per[i * n + j].0.clone())?
    };
    let events = EventStream::new(n, sc.tau, per.into_iter().flat_map(|x| x.1).collect())?;
    Ok(Simulation {
        events,
        covariates,
        scenario: sc.clone(),
    })
}

/// True curves at every grid point, pinned.
pub fn truth_curves(sc: &Scenario, grid: &TimeGrid) -> Vec<ParamSnapshot> {
    grid.points().iter().map(|&t| sc.truth(t)).collect()
}

/// `∫_0^τ (f̂ − f*)²dt` for stacked coordinate `c`, trapezoid on the padded grid with
/// flat extrapolation of both curves. Failed grid points borrow the nearest converged fit.
pub fn mise(truth: &[ParamSnapshot], fit: &FitResult, c: usize) -> Result<f64> {
    if truth.len() != fit.grid.len() || truth.iter().zip(fit.grid.points()).any(|(s, &t)| (s.t - t).abs() > 1e-9) {
        return Err(Error::GridMismatch("truth and fit use different grids".into()));
    }
    let (nodes, src) = fit.grid.padded();
    let sq: Vec<f64> = src
        .iter()
        .map(|&g| {
            let est = fit
                .nearest_snapshot(g)
                .ok_or_else(|| Error::Empty("no grid point converged".into()))?
                .coordinate(c);
            Ok((est - truth[g].coordinate(c)).powi(2))
        })
        .collect::<Result<_>>()?;
    Ok((1..nodes.len())
        .map(|q| 0.5 * (sq[q] + sq[q - 1]) * (nodes[q] - nodes[q - 1]))
        .sum())
}

/// `t,coordinate,value` rows with 1-based node ids.
pub fn write_truth<W: Write>(w: W, truth: &[ParamSnapshot]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wr.write_record(["t", "coordinate", "value"]).map_err(err)?;
    for s in truth {
        let n = s.n();
        for c in 0..s.dim() {
            let name = if c < n {
                format!("alpha_{}", c + 1)
            } else if c < 2 * n - 1 {
                format!("beta_{}", c - n + 1)
            } else {
                format!("gamma_{}", c + 2 - 2 * n)
            };
            wr.write_record([fmt_float(s.t), name, fmt_float(s.coordinate(c))])
                .map_err(err)?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_two_counts() {
        let sc = Scenario::new(101, 5, Design::Constant { rate: 2.0, gamma: vec![] });
        let sim = simulate(&sc).unwrap();
        let dyads = (101 * 100) as f64;
        let mean = sim.events.len() as f64 / dyads;
        assert!((mean - 2.0).abs() < 3.0 * (2.0 / dyads).sqrt(), "{mean}");
    }

    #[test]
    fn zero_rate_gives_no_events() {
        let sc = Scenario::new(6, 1, Design::Constant { rate: 0.0, gamma: vec![] });
        assert!(simulate(&sc).unwrap().events.is_empty());
    }

    #[test]
    fn reproducible() {
        let sc = Scenario::new(10, 42, Design::SineLinear { c0: 0.5 });
        let a = simulate(&sc).unwrap();
        let b = simulate(&sc).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.covariates, b.covariates);
    }

    #[test]
    fn pinned_truth_preserves_intensity() {
        let sc = Scenario::new(8, 0, Design::SineLinear { c0: 0.5 });
        for &t in &[0.1, 0.37, 0.9] {
            let s = sc.truth(t);
            assert_eq!(s.beta[7], 0.0);
            for i in 0..8 {
                for j in 0..8 {
                    let raw = sc.alpha(i, t) + sc.beta(j, t);
                    assert!((s.alpha[i] + s.beta[j] - raw).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn design_values() {
        let n = 100;
        let sc = Scenario::new(n, 0, Design::DegreeShift { c: 1.5 });
        assert_eq!(sc.alpha(n - 1, 0.4), 0.2 + 1.5);
        assert_eq!(sc.beta(n - 1, 0.4), 0.0);
        assert_eq!(sc.beta(3, 0.4), 0.2);
        let sc = Scenario::new(n, 0, Design::IndicatorBlock { b: 1.0 });
        let mut rng = dyad_rng(0, n, 0, 0);
        assert_eq!(sc.draw_z(3, 33, &mut rng), vec![0.0]);
        assert_eq!(sc.draw_z(3, 32, &mut rng), vec![1.0]);
        assert_eq!(sc.draw_z(4, 0, &mut rng), vec![0.0]);
        assert!(Scenario::new(7, 0, Design::GofCase2).validate().is_err());
    }

    #[test]
    fn rate_guard() {
        let sc = Scenario::new(4, 0, Design::Constant { rate: 2e6, gamma: vec![] });
        assert!(matches!(simulate(&sc), Err(Error::RateExplosion { .. })));
    }

    #[test]
    fn coupled_runs_nest() {
        let mk = |g: f64| Scenario {
            dominating_rate: Some(40.0),
            ..Scenario::new(6, 9, Design::Constant { rate: 3.0, gamma: vec![g] })
        };
        let lo = simulate(&mk(0.5)).unwrap();
        let hi = simulate(&mk(1.5)).unwrap();
        assert_eq!(lo.covariates, hi.covariates);
        assert!(hi.events.len() > lo.events.len());
        for e in lo.events.events() {
            assert!(hi.events.events().contains(e));
        }
    }

    #[test]
    fn mise_offset_and_identity() {
        use crate::estimator::{PointFit, SolveDiagnostics};
        let sc = Scenario::new(4, 0, Design::SineLinear { c0: 0.5 });
        let grid = TimeGrid::uniform(1.0, 9).unwrap();
        let truth = truth_curves(&sc, &grid);
        let mk = |delta: f64| FitResult {
            grid: grid.clone(),
            n: 4,
            p: 2,
            points: truth
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.gamma[0] += delta;
                    PointFit {
                        t: s.t,
                        snapshot: Some(s),
                        diagnostics: Some(SolveDiagnostics {
                            iterations: 1,
                            final_residual_f: 0.0,
                            final_residual_q: 0.0,
                            converged: true,
                            inactive_out: vec![],
                            inactive_in: vec![],
                        }),
                        error: None,
                    }
                })
                .collect(),
            inference: None,
        };
        assert_eq!(mise(&truth, &mk(0.0), 7).unwrap(), 0.0);
        assert!((mise(&truth, &mk(0.3), 7).unwrap() - 0.09).abs() < 1e-15);
        assert!(mise(&truth[1..], &mk(0.0), 7).is_err());
    }
}
