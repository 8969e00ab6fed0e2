//! Monte-Carlo and recomputation oracles for prediction error, Arjas series, Ω̂ and masked residuals.

use dccox::covariates::CovariateSet;
use dccox::cv::{held_out_error, make_partition, prediction_error};
use dccox::estimator::{residuals_local, FitResult, LocalData, PointFit, SolveDiagnostics, SolverConfig};
use dccox::events::{Event, EventStream};
use dccox::gof::{arjas_data, dyad_times, Direction};
use dccox::inference::compute_omega;
use dccox::kernel::{KernelFamily, KernelSpec};
use dccox::params::{ParamSnapshot, TimeGrid};
use dccox::simulate::{simulate, truth_curves, Design, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A fit whose every grid point holds the true parameters.
fn truth_fit(sc: &Scenario, grid: &TimeGrid) -> FitResult {
    let points = truth_curves(sc, grid)
        .into_iter()
        .map(|s| PointFit {
            t: s.t,
            snapshot: Some(s),
            diagnostics: Some(SolveDiagnostics {
                iterations: 0,
                final_residual_f: 0.0,
                final_residual_q: 0.0,
                converged: true,
                inactive_out: vec![],
                inactive_in: vec![],
            }),
            error: None,
        })
        .collect();
    FitResult {
        grid: grid.clone(),
        n: sc.n,
        p: sc.p(),
        points,
        inference: None,
    }
}

/// `∫_0^τ Λ(t) dt` for one dyad on a fine Simpson grid, `Λ` accumulated on the same nodes.
fn integrated_cumulative(sc: &Scenario, i: usize, j: usize, z: &[f64]) -> f64 {
    let m = 4000;
    let h = sc.tau / m as f64;
    let mut lam = vec![0.0; m + 1];
    for q in 1..=m {
        let (a, b) = ((q - 1) as f64 * h, q as f64 * h);
        let mid = sc.intensity(i, j, z, 0.5 * (a + b));
        lam[q] = lam[q - 1] + h / 6.0 * (sc.intensity(i, j, z, a) + 4.0 * mid + sc.intensity(i, j, z, b));
    }
    (0..=m)
        .map(|q| {
            let w = if q == 0 || q == m { 1.0 } else if q % 2 == 1 { 4.0 } else { 2.0 };
            w * lam[q]
        })
        .sum::<f64>()
        * h
        / 3.0
}

#[test]
fn oracle_prediction_error_matches_integrated_variance() {
    const REPS: u64 = 500;
    let n = 6;
    let grid = TimeGrid::standard(1.0);
    let part = make_partition(n, 3, 11).unwrap();
    let dyads = part.members(0);
    let (mut pe, mut target) = (0.0, 0.0);
    for r in 0..REPS {
        let sc = Scenario::new(n, 600 + r, Design::SineLinear { c0: 0.5 });
        let s = simulate(&sc).unwrap();
        let fit = truth_fit(&sc, &grid);
        pe += held_out_error(&fit, &s.covariates, &dyad_times(&s.events), &dyads).unwrap();
        target += dyads
            .iter()
            .map(|&(i, j)| integrated_cumulative(&sc, i, j, s.covariates.at(i, j, 0.0)))
            .sum::<f64>();
    }
    let ratio = pe / target;
    assert!((ratio - 1.0).abs() < 0.1, "mean PE / Σ∫Λ = {ratio}");
}

#[test]
fn prediction_error_scales_with_time_rescaling() {
    let sc = Scenario::new(8, 77, Design::SineLinear { c0: 0.5 });
    let s = simulate(&sc).unwrap();
    let part = make_partition(8, 4, 3).unwrap();
    let cfg = SolverConfig::default();
    let k = KernelSpec::new(KernelFamily::Gaussian, 0.2, 0.2).unwrap();
    let base = prediction_error(&s.events, &s.covariates, &k, &part, 1, &TimeGrid::uniform(1.0, 19).unwrap(), &cfg).unwrap();

    let stretched: Vec<Event> = s.events.events().iter().map(|e| Event::new(e.sender, e.receiver, 2.0 * e.time)).collect();
    let es2 = EventStream::new(8, 2.0, stretched).unwrap();
    let k2 = KernelSpec::new(KernelFamily::Gaussian, 0.4, 0.4).unwrap();
    let twice = prediction_error(&es2, &s.covariates, &k2, &part, 1, &TimeGrid::uniform(2.0, 19).unwrap(), &cfg).unwrap();
    assert_eq!(base.failed_points, 0);
    let ratio = twice.pe / base.pe;
    assert!((ratio - 2.0).abs() < 1e-5, "ratio {ratio}");
}

#[test]
fn arjas_fitted_tracks_expected_counts_under_true_parameters() {
    const REPS: u64 = 200;
    let n = 6;
    let grid = TimeGrid::standard(1.0);
    let m = grid.len();
    // Per series: sum and sum of squares of (observed − fitted) at the last grid point, and the observed sum.
    let mut diff = vec![(0.0, 0.0, 0.0); 2 * n];
    for r in 0..REPS {
        let sc = Scenario::new(n, 900 + r, Design::SineLinear { c0: 0.5 });
        let s = simulate(&sc).unwrap();
        let series = arjas_data(&truth_fit(&sc, &grid), &s.events, &s.covariates).unwrap();
        for (k, x) in series.iter().enumerate() {
            let d = x.observed[m - 1] - x.fitted[m - 1];
            diff[k].0 += d;
            diff[k].1 += d * d;
            diff[k].2 += x.observed[m - 1];
        }
        assert_eq!(series[n].direction, Direction::In);
    }
    let r = REPS as f64;
    for (k, &(s, ss, obs)) in diff.iter().enumerate() {
        let mean = s / r;
        let sd = (ss / r - mean * mean).max(0.0).sqrt();
        let rel_err = mean.abs() / (obs / r);
        let rel_mc = 3.0 * sd / r.sqrt() / (obs / r);
        assert!(rel_err < rel_mc, "series {k}: relative error {rel_err} vs 3 MC sd {rel_mc}");
    }
}

#[test]
fn omega_diagonal_tracks_local_event_rate() {
    let n = 30;
    let rate = 20.0;
    let sc = Scenario::new(n, 5, Design::Constant { rate, gamma: vec![] });
    let s = simulate(&sc).unwrap();
    let k = KernelSpec::gaussian(0.1, 0.1).unwrap();
    let om = compute_omega(&s.events, &k, 0.5);
    let mean: f64 = om.diag[..n].iter().sum::<f64>() / n as f64;
    // Each sender has n − 1 outgoing dyads at `rate`; ∫K_h² = μ0/h.
    let expected = k.family.mu0() * rate * (n - 1) as f64 / n as f64;
    assert!((mean / expected - 1.0).abs() < 0.05, "{mean} vs {expected}");
}

fn gauss(u: f64, h: f64) -> f64 {
    (-0.5 * (u / h).powi(2)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt())
}

fn mass(t: f64, h: f64, a: f64, b: f64) -> f64 {
    let phi = |x: f64| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
    phi((b - t) / h) - phi((a - t) / h)
}

#[test]
fn masked_residuals_drop_only_held_out_terms() {
    let n = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ev = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                for _ in 0..rng.random_range(5..15) {
                    ev.push(Event::new(i, j, rng.random_range(0.0..1.0)));
                }
            }
        }
    }
    let es = EventStream::new(n, 1.0, ev).unwrap();
    let z = |i: usize, j: usize| vec![(i as f64 - 2.0 * j as f64) / 3.0];
    let zs = CovariateSet::from_static(n, 1, z).unwrap();
    let (h1, h2, t) = (0.15, 0.25, 0.45);
    let k = KernelSpec::gaussian(h1, h2).unwrap();
    let mut snap = ParamSnapshot::zeros(t, n, 1);
    for i in 0..n {
        snap.alpha[i] = rng.random_range(-0.5..0.5);
        if i + 1 < n {
            snap.beta[i] = rng.random_range(-0.5..0.5);
        }
    }
    snap.gamma[0] = 0.3;
    let part = make_partition(n, 2, 4).unwrap();
    let mask = part.training_mask(0);
    let ld = LocalData::build(&es, &zs, &k, t);
    let (f, q) = residuals_local(&ld, Some(&mask), &snap).unwrap();

    let nn = (n * (n - 1)) as f64;
    let mut rows = vec![0.0; n];
    let mut cols = vec![0.0; n];
    let mut qq = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j || !mask[i * n + j] {
                continue;
            }
            let zij = z(i, j)[0];
            let lin = snap.alpha[i] + snap.beta[j] + zij * snap.gamma[0];
            let mut w1 = -lin.exp() * mass(t, h1, 0.0, 1.0);
            let mut w2 = -zij * lin.exp() * mass(t, h2, 0.0, 1.0);
            for e in es.events().iter().filter(|e| e.sender == i && e.receiver == j) {
                w1 += gauss(e.time - t, h1);
                w2 += zij * gauss(e.time - t, h2);
            }
            rows[i] += w1;
            cols[j] += w1;
            qq += w2;
        }
    }
    for i in 0..n {
        let want = rows[i] / (n - 1) as f64;
        assert!((f[i] - want).abs() < 1e-12, "F_{i}: {} vs {want}", f[i]);
    }
    for j in 0..n - 1 {
        let want = cols[j] / (n - 1) as f64;
        assert!((f[n + j] - want).abs() < 1e-12, "F_(n+{j}): {} vs {want}", f[n + j]);
    }
    assert!((q[0] - qq / nn).abs() < 1e-12, "Q: {} vs {}", q[0], qq / nn);
}
