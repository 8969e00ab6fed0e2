//! Arjas diagnostics: observed against fitted cumulative counts per node.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateSet;
use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::events::EventStream;
use crate::io::fmt_float;
use crate::params::ParamSnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Out,
    In,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Out => "out",
            Direction::In => "in",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArjasSeries {
    /// 0-based node index.
    pub node: usize,
    pub direction: Direction,
    pub times: Vec<f64>,
    pub observed: Vec<f64>,
    pub fitted: Vec<f64>,
    pub slope: f64,
    /// Some grid point borrowed parameters from a neighbour.
    pub flagged: bool,
}

/// Least-squares slope through the origin of `fitted` on `observed`.
pub fn origin_slope(observed: &[f64], fitted: &[f64]) -> f64 {
    let oo: f64 = observed.iter().map(|o| o * o).sum();
    let of: f64 = observed.iter().zip(fitted).map(|(o, f)| o * f).sum();
    if oo > 0.0 {
        of / oo
    } else if fitted.iter().any(|&f| f != 0.0) {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Parameters at every trapezoid node, falling back to the nearest converged grid point.
/// The flag is set when any grid point needed a fallback.
pub fn node_snapshots(fit: &FitResult) -> Result<(Vec<f64>, Vec<&ParamSnapshot>, bool)> {
    let (nodes, src) = fit.grid.padded();
    let mut flagged = false;
    let per_grid: Vec<&ParamSnapshot> = (0..fit.grid.len())
        .map(|g| {
            if !fit.points[g].converged() {
                flagged = true;
            }
            fit.nearest_snapshot(g)
                .ok_or_else(|| Error::Empty("no grid point converged".into()))
        })
        .collect::<Result<_>>()?;
    Ok((nodes, src.iter().map(|&g| per_grid[g]).collect(), flagged))
}

/// Cumulative fitted intensity of dyad `(i, j)` at each node (trapezoid, node values only).
pub fn cumulative_fitted(nodes: &[f64], snaps: &[&ParamSnapshot], zs: &CovariateSet, i: usize, j: usize) -> Vec<f64> {
    let rate = |q: usize| {
        let s = snaps[q];
        let z = zs.at(i, j, nodes[q]);
        let lin = s.alpha[i] + s.beta[j] + z.iter().zip(&s.gamma).map(|(a, b)| a * b).sum::<f64>();
        if lin == f64::NEG_INFINITY {
            0.0
        } else {
            lin.exp()
        }
    };
    let mut out = Vec::with_capacity(nodes.len());
    let mut acc = 0.0;
    let mut prev = rate(0);
    out.push(0.0);
    for q in 1..nodes.len() {
        let cur = rate(q);
        acc += 0.5 * (prev + cur) * (nodes[q] - nodes[q - 1]);
        out.push(acc);
        prev = cur;
    }
    out
}

/// Sorted event times per dyad, row-major `n × n`.
pub fn dyad_times(es: &EventStream) -> Vec<Vec<f64>> {
    let n = es.n();
    let mut v = vec![Vec::new(); n * n];
    for e in es.events() {
        v[e.sender * n + e.receiver].push(e.time);
    }
    v
}

/// Number of entries of a sorted slice that are `≤ t`.
pub fn count_upto(times: &[f64], t: f64) -> usize {
    times.partition_point(|&x| x <= t)
}

pub fn arjas_data(fit: &FitResult, es: &EventStream, zs: &CovariateSet) -> Result<Vec<ArjasSeries>> {
    let n = es.n();
    let (nodes, snaps, flagged) = node_snapshots(fit)?;
    let m = fit.grid.len();
    let times = fit.grid.points().to_vec();

    // Per sender: fitted out-series and the row's contribution to every in-series.
    let rows: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; m];
            let mut cols = vec![vec![0.0; m]; n];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let c = cumulative_fitted(&nodes, &snaps, zs, i, j);
                for g in 0..m {
                    out[g] += c[g + 1];
                    cols[j][g] += c[g + 1];
                }
            }
            (out, cols)
        })
        .collect();
    let mut fitted_in = vec![vec![0.0; m]; n];
    for (_, cols) in &rows {
        for (acc, c) in fitted_in.iter_mut().zip(cols) {
            for g in 0..m {
                acc[g] += c[g];
            }
        }
    }

    let mut obs_out = vec![vec![0.0; m]; n];
    let mut obs_in = vec![vec![0.0; m]; n];
    for e in es.events() {
        let g0 = times.partition_point(|&t| t < e.time);
        for g in g0..m {
            obs_out[e.sender][g] += 1.0;
            obs_in[e.receiver][g] += 1.0;
        }
    }

    let mut series = Vec::with_capacity(2 * n);
    for (dir, obs, fitted) in [
        (Direction::Out, obs_out, rows.into_iter().map(|r| r.0).collect::<Vec<_>>()),
        (Direction::In, obs_in, fitted_in),
    ] {
        for (node, (o, f)) in obs.into_iter().zip(fitted).enumerate() {
            series.push(ArjasSeries {
                node,
                direction: dir,
                times: times.clone(),
                slope: origin_slope(&o, &f),
                observed: o,
                fitted: f,
                flagged,
            });
        }
    }
    Ok(series)
}

/// Long-format CSV: `node,direction,t,observed,fitted` with 1-based node ids.
pub fn write_arjas_csv<W: Write>(w: W, series: &[ArjasSeries]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wr.write_record(["node", "direction", "t", "observed", "fitted"]).map_err(io)?;
    for s in series {
        for g in 0..s.times.len() {
            wr.write_record([
                (s.node + 1).to_string(),
                s.direction.as_str().to_string(),
                fmt_float(s.times[g]),
                fmt_float(s.observed[g]),
                fmt_float(s.fitted[g]),
            ])
            .map_err(io)?;
        }
    }
    wr.flush()?;
    Ok(())
}
