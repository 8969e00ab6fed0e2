//! One function per subcommand; each writes its files into the output directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dccox::covariates::CovariateSet;
use dccox::cv::{default_h1_grid, default_h2_grid, select_bandwidth};
use dccox::estimator::{fit_curve, FitResult, SolverConfig};
use dccox::events::EventStream;
use dccox::gof::{arjas_data, write_arjas_csv};
use dccox::hypothesis::{
    test_degree_heterogeneity, test_temporal_eta, test_temporal_gamma, BootstrapConfig, Heterogeneity, TestKind,
};
use dccox::inference::{infer_curve, psi_min_eigenvalue};
use dccox::io::{fmt_float, ingest_covariates, ingest_events, with_reference, write_covariates, write_curves, write_events, NodeIds};
use dccox::kernel::KernelSpec;
use dccox::params::TimeGrid;
use dccox::simulate::{simulate, truth_curves, write_truth};
use serde::Serialize;

use crate::cli::Command;
use crate::config::Section;

/// Whether the run met the convergence requirement.
pub struct Outcome {
    pub complete: bool,
}

struct Data {
    es: EventStream,
    zs: CovariateSet,
    ids: NodeIds,
}

fn load_data(s: &Section) -> anyhow::Result<Data> {
    let path = s.events.as_ref().context("no event file given (--events or `events` in the config)")?;
    let (es, ids) = ingest_events(path, s.tau, s.nodes).with_context(|| format!("reading {}", path.display()))?;
    let (es, ids) = match &s.reference {
        Some(r) => with_reference(&es, &ids, r)?,
        None => (es, ids),
    };
    let zs = match &s.covariates {
        Some(p) => ingest_covariates(p, &ids, s.p).with_context(|| format!("reading {}", p.display()))?,
        None if s.p.unwrap_or(0) > 0 => bail!("p = {} but no covariate file given", s.p.unwrap_or(0)),
        None => CovariateSet::none(ids.n()),
    };
    Ok(Data { es, zs, ids })
}

fn grid(s: &Section, tau: f64, default: usize) -> anyhow::Result<TimeGrid> {
    Ok(match &s.grid_points {
        Some(pts) => TimeGrid::new(tau, pts.clone())?,
        None => TimeGrid::uniform(tau, s.grid.unwrap_or(default))?,
    })
}

fn kernel(s: &Section, p: usize) -> anyhow::Result<KernelSpec> {
    let h1 = s.h1.context("h1 is not set (use --h1, or run `cv` first)")?;
    let h2 = match s.h2 {
        Some(h) => h,
        None if p == 0 => h1,
        None => bail!("h2 is not set (use --h2, or run `cv` first)"),
    };
    Ok(KernelSpec::new(s.kernel.unwrap_or_default(), h1, h2)?)
}

fn solver(s: &Section) -> anyhow::Result<SolverConfig> {
    let cfg = s.solver.clone().unwrap_or_default();
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(s: &Section) -> anyhow::Result<PathBuf> {
    let dir = s.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn run(cmd: Command, s: &Section) -> anyhow::Result<Outcome> {
    match cmd {
        Command::Fit => fit(s),
        Command::Cv => cv(s),
        Command::Test => test(s),
        Command::Gof => gof(s),
        Command::Simulate => sim(s),
    }
}

#[derive(Serialize)]
struct PointDiagnostics {
    t: f64,
    converged: bool,
    iterations: Option<usize>,
    residual_f: Option<f64>,
    residual_q: Option<f64>,
    inactive_out: Vec<String>,
    inactive_in: Vec<String>,
    error: Option<String>,
    inference_error: Option<String>,
    psi_min_eigenvalue: Option<f64>,
}

#[derive(Serialize)]
struct FitDiagnostics {
    n: usize,
    p: usize,
    events: usize,
    tau: f64,
    kernel: KernelSpec,
    level: f64,
    grid_points: usize,
    converged_points: usize,
    all_converged: bool,
    points: Vec<PointDiagnostics>,
}

fn diagnostics(fit: &FitResult, es: &EventStream, ids: &NodeIds, k: &KernelSpec, level: f64) -> FitDiagnostics {
    let labels = |v: &[usize]| v.iter().map(|&i| ids.label(i)).collect::<Vec<_>>();
    let points = fit
        .points
        .iter()
        .enumerate()
        .map(|(g, pt)| {
            let inf = fit.inference.as_ref();
            let pi = inf.and_then(|c| c.points[g].as_ref());
            let d = pt.diagnostics.as_ref();
            PointDiagnostics {
                t: pt.t,
                converged: pt.converged(),
                iterations: d.map(|d| d.iterations),
                residual_f: d.map(|d| d.final_residual_f),
                residual_q: d.map(|d| d.final_residual_q),
                inactive_out: d.map(|d| labels(&d.inactive_out)).unwrap_or_default(),
                inactive_in: d.map(|d| labels(&d.inactive_in)).unwrap_or_default(),
                error: pt.error.clone(),
                inference_error: inf
                    .and_then(|c| c.errors[g].clone())
                    .or_else(|| pi.and_then(|p| p.gamma_error.clone())),
                psi_min_eigenvalue: pi.and_then(|p| p.gamma.as_ref()).map(psi_min_eigenvalue),
            }
        })
        .collect::<Vec<_>>();
    let converged_points = points.iter().filter(|p| p.converged).count();
    FitDiagnostics {
        n: fit.n,
        p: fit.p,
        events: es.len(),
        tau: es.tau(),
        kernel: *k,
        level,
        grid_points: fit.grid.len(),
        converged_points,
        all_converged: converged_points == fit.grid.len(),
        points,
    }
}

fn fit(s: &Section) -> anyhow::Result<Outcome> {
    let d = load_data(s)?;
    let k = kernel(s, d.zs.p())?;
    let g = grid(s, d.es.tau(), 99)?;
    let cfg = solver(s)?;
    let level = s.level.unwrap_or(0.95);
    let mut fit = fit_curve(&d.es, &d.zs, &k, &g, &cfg);
    infer_curve(&mut fit, &d.es, &d.zs, &k, level, cfg.inactive_eps)?;
    let dir = out_dir(s)?;
    write_curves(create(&dir, "curves.csv")?, &fit, &d.ids)?;
    write_json(&dir, "diagnostics.json", &diagnostics(&fit, &d.es, &d.ids, &k, level))?;
    d.ids.write_csv(create(&dir, "nodes.csv")?)?;
    Ok(Outcome {
        complete: fit.all_converged() || !s.strict.unwrap_or(true),
    })
}

#[derive(Serialize)]
struct Selected {
    h1: f64,
    h2: f64,
    pe: f64,
    folds: usize,
    seed: u64,
    candidates: usize,
}

fn cv(s: &Section) -> anyhow::Result<Outcome> {
    let d = load_data(s)?;
    let g = grid(s, d.es.tau(), 99)?;
    let cfg = solver(s)?;
    let h1 = s.h1_grid.clone().unwrap_or_else(default_h1_grid);
    let h2 = if d.zs.p() == 0 && s.h2_grid.is_none() {
        vec![h1[0]]
    } else {
        s.h2_grid.clone().unwrap_or_else(default_h2_grid)
    };
    let seed = s.seed.unwrap_or(0);
    let rep = select_bandwidth(&d.es, &d.zs, s.kernel.unwrap_or_default(), &h1, &h2, s.folds.unwrap_or(5), seed, &g, &cfg)?;
    let dir = out_dir(s)?;
    let mut w = create(&dir, "pe_surface.csv")?;
    writeln!(w, "h1,h2,pe,failed_points")?;
    for c in &rep.candidates {
        let failed: usize = c.folds.iter().map(|f| f.failed_points).sum();
        writeln!(w, "{},{},{},{failed}", fmt_float(c.h1), fmt_float(c.h2), fmt_float(c.pe))?;
    }
    w.flush()?;
    write_json(
        &dir,
        "selected.json",
        &Selected {
            h1: rep.h1,
            h2: rep.h2,
            pe: rep.candidates[rep.best].pe,
            folds: rep.k,
            seed,
            candidates: rep.candidates.len(),
        },
    )?;
    Ok(Outcome { complete: true })
}

fn test(s: &Section) -> anyhow::Result<Outcome> {
    let d = load_data(s)?;
    let k = kernel(s, d.zs.p())?;
    let g = grid(s, d.es.tau(), 9)?;
    let cfg = solver(s)?;
    let boot = BootstrapConfig {
        nu: s.nu.unwrap_or(0.05),
        n_boot: s.nboot.unwrap_or(1000),
        seed: s.seed.unwrap_or(0),
    };
    let fit = fit_curve(&d.es, &d.zs, &k, &g, &cfg);
    let times = g.points();
    let report = match s.kind.unwrap_or(TestKind::TemporalEta) {
        TestKind::TemporalEta => test_temporal_eta(&fit, &d.es, &d.zs, &k, &boot, times)?,
        TestKind::TemporalGamma => test_temporal_gamma(&fit, &d.es, &d.zs, &k, &boot, times)?,
        TestKind::DegreeAlpha => test_degree_heterogeneity(&fit, &d.es, &d.zs, &k, Heterogeneity::Alpha, &boot, times)?,
        TestKind::DegreeBeta => test_degree_heterogeneity(&fit, &d.es, &d.zs, &k, Heterogeneity::Beta, &boot, times)?,
    };
    write_json(&out_dir(s)?, "test_report.json", &report)?;
    Ok(Outcome { complete: true })
}

fn gof(s: &Section) -> anyhow::Result<Outcome> {
    let d = load_data(s)?;
    let k = kernel(s, d.zs.p())?;
    let g = grid(s, d.es.tau(), 99)?;
    let cfg = solver(s)?;
    let fit = fit_curve(&d.es, &d.zs, &k, &g, &cfg);
    let series = arjas_data(&fit, &d.es, &d.zs)?;
    let dir = out_dir(s)?;
    write_arjas_csv(create(&dir, "arjas.csv")?, &series)?;
    let mut w = create(&dir, "gof_slopes.csv")?;
    writeln!(w, "node,direction,slope,flagged")?;
    for x in &series {
        writeln!(w, "{},{},{},{}", d.ids.label(x.node), x.direction.as_str(), fmt_float(x.slope), x.flagged)?;
    }
    w.flush()?;
    d.ids.write_csv(create(&dir, "nodes.csv")?)?;
    Ok(Outcome {
        complete: fit.all_converged() || !s.strict.unwrap_or(true),
    })
}

fn sim(s: &Section) -> anyhow::Result<Outcome> {
    let mut sc = s.scenario.clone().context("no [simulate.scenario] table in the config")?;
    if let Some(seed) = s.seed {
        sc.seed = seed;
    }
    if let Some(tau) = s.tau {
        sc.tau = tau;
    }
    let g = grid(s, sc.tau, 99)?;
    let sim = simulate(&sc)?;
    let ids = NodeIds::Numeric { n: sc.n };
    let dir = out_dir(s)?;
    write_events(create(&dir, "events.csv")?, &sim.events, &ids)?;
    write_covariates(create(&dir, "covariates.csv")?, &sim.covariates, &ids)?;
    write_truth(create(&dir, "truth.csv")?, &truth_curves(&sc, &g))?;
    write_json(&dir, "scenario.json", &sc)?;
    Ok(Outcome { complete: true })
}
