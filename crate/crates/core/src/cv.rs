//! K-fold bandwidth selection over a block-permuted dyad partition.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateSet;
use crate::error::{Error, Result};
use crate::estimator::{point_from, solve_local, FitResult, LocalData, PointFit, SolverConfig};
use crate::events::EventStream;
use crate::gof::{count_upto, cumulative_fitted, dyad_times, node_snapshots};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::params::TimeGrid;

/// Assignment of every ordered off-diagonal dyad to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadPartition {
    pub n: usize,
    pub k: usize,
    /// Row-major `n × n`; `usize::MAX` on the diagonal.
    pub fold: Vec<usize>,
    /// Column permutation per row block.
    pub permutations: Vec<Vec<usize>>,
}

impl DyadPartition {
    pub fn fold_of(&self, i: usize, j: usize) -> Option<usize> {
        let f = self.fold[i * self.n + j];
        (f != usize::MAX).then_some(f)
    }

    pub fn members(&self, fold: usize) -> Vec<(usize, usize)> {
        let n = self.n;
        (0..n * n)
            .filter(|&d| self.fold[d] == fold)
            .map(|d| (d / n, d % n))
            .collect()
    }

    /// Training mask for `fold`: true on dyads outside it.
    pub fn training_mask(&self, fold: usize) -> Vec<bool> {
        self.fold.iter().map(|&f| f != usize::MAX && f != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold {
            if f != usize::MAX {
                s[f] += 1;
            }
        }
        s
    }
}

/// Rows form `⌊n/k⌋` blocks of `k` consecutive rows (remainder joins the last block).
/// Each block shares one random column order; within a row the diagonal is moved to the end
/// of that order, positions are cut into `k` near-equal chunks, and row `i` takes chunk
/// `c` into fold `(c − i) mod k`.
pub fn make_partition(n: usize, k: usize, seed: u64) -> Result<DyadPartition> {
    if k < 2 || k > n {
        return Err(Error::InvalidFolds { k, n });
    }
    let blocks = n / k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![usize::MAX; n * n];
    let mut permutations = Vec::with_capacity(blocks);
    for s in 0..blocks {
        let rows = s * k..if s + 1 == blocks { n } else { (s + 1) * k };
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for i in rows {
            let order = perm.iter().copied().filter(|&j| j != i);
            for (pos, j) in order.enumerate() {
                let chunk = pos * k / n;
                fold[i * n + j] = (chunk + k - i % k) % k;
            }
        }
        permutations.push(perm);
    }
    Ok(DyadPartition {
        n,
        k,
        fold,
        permutations,
    })
}

/// Prediction error of one fold plus the number of grid points that fell back to a neighbour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldError {
    pub pe: f64,
    pub failed_points: usize,
}

/// `∫_0^τ [N_ij(t) − Λ̂_ij(t)]²dt` summed over `dyads`, trapezoid on the padded grid.
/// `times` holds the sorted event times of every dyad, as from [`dyad_times`].
pub fn held_out_error(fit: &FitResult, zs: &CovariateSet, times: &[Vec<f64>], dyads: &[(usize, usize)]) -> Result<f64> {
    let (nodes, snaps, _) = node_snapshots(fit)?;
    let n = fit.n;
    let mut total = 0.0;
    for &(i, j) in dyads {
        let lam = cumulative_fitted(&nodes, &snaps, zs, i, j);
        let ev = &times[i * n + j];
        let sq: Vec<f64> = nodes
            .iter()
            .zip(&lam)
            .map(|(&t, l)| (count_upto(ev, t) as f64 - l).powi(2))
            .collect();
        for q in 1..nodes.len() {
            total += 0.5 * (sq[q] + sq[q - 1]) * (nodes[q] - nodes[q - 1]);
        }
    }
    Ok(total)
}

/// Cold-started masked fits for `folds`, building the local data once per grid time.
fn fold_fits(
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    part: &DyadPartition,
    folds: &[usize],
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Vec<FitResult> {
    let masks: Vec<Vec<bool>> = folds.iter().map(|&f| part.training_mask(f)).collect();
    let per_t: Vec<Vec<PointFit>> = grid
        .points()
        .par_iter()
        .map(|&t| {
            let ld = LocalData::build(es, zs, k, t);
            masks
                .iter()
                .map(|m| point_from(t, solve_local(&ld, Some(m), cfg, None)))
                .collect()
        })
        .collect();
    (0..folds.len())
        .map(|f| FitResult {
            grid: grid.clone(),
            n: es.n(),
            p: zs.p(),
            points: per_t.iter().map(|v| v[f].clone()).collect(),
            inference: None,
        })
        .collect()
}

fn fold_errors(
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    part: &DyadPartition,
    grid: &TimeGrid,
    cfg: &SolverConfig,
    times: &[Vec<f64>],
) -> Vec<FoldError> {
    let all: Vec<usize> = (0..part.k).collect();
    fold_fits(es, zs, k, part, &all, grid, cfg)
        .iter()
        .enumerate()
        .map(|(f, fit)| FoldError {
            pe: held_out_error(fit, zs, times, &part.members(f)).unwrap_or(f64::INFINITY),
            failed_points: fit.points.iter().filter(|p| !p.converged()).count(),
        })
        .collect()
}

/// `PE_k` for a single fold. Fits are cold-started at every grid time.
pub fn prediction_error(
    es: &EventStream,
    zs: &CovariateSet,
    k: &KernelSpec,
    part: &DyadPartition,
    fold: usize,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<FoldError> {
    if fold >= part.k || part.n != es.n() {
        return Err(Error::InvalidFolds { k: part.k, n: es.n() });
    }
    let fit = fold_fits(es, zs, k, part, &[fold], grid, cfg).remove(0);
    Ok(FoldError {
        pe: held_out_error(&fit, zs, &dyad_times(es), &part.members(fold))?,
        failed_points: fit.points.iter().filter(|p| !p.converged()).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub h1: f64,
    pub h2: f64,
    /// `Σ_k PE_k`; infinite when some fold could not be evaluated.
    pub pe: f64,
    pub folds: Vec<FoldError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub candidates: Vec<Candidate>,
    pub best: usize,
    pub h1: f64,
    pub h2: f64,
    pub k: usize,
    pub seed: u64,
}

pub fn default_h1_grid() -> Vec<f64> {
    (1..=10).map(|i| 0.05 * i as f64).collect()
}

pub fn default_h2_grid() -> Vec<f64> {
    let mut v: Vec<f64> = (0..8).map(|i| 0.002 + 0.004 * i as f64).collect();
    v.extend([0.04, 0.08]);
    v
}

/// Minimal total PE; ties go to the lexicographically smaller `(h1, h2)`.
fn argmin(c: &[Candidate]) -> Option<usize> {
    (0..c.len()).filter(|&i| c[i].pe.is_finite()).min_by(|&a, &b| {
        c[a].pe
            .total_cmp(&c[b].pe)
            .then(c[a].h1.total_cmp(&c[b].h1))
            .then(c[a].h2.total_cmp(&c[b].h2))
    })
}

#[allow(clippy::too_many_arguments)]
pub fn select_bandwidth(
    es: &EventStream,
    zs: &CovariateSet,
    family: KernelFamily,
    h1_grid: &[f64],
    h2_grid: &[f64],
    folds: usize,
    seed: u64,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<CvReport> {
    if h1_grid.is_empty() || h2_grid.is_empty() {
        return Err(Error::InvalidConfig("bandwidth grids must be nonempty".into()));
    }
    let part = make_partition(es.n(), folds, seed)?;
    let times = dyad_times(es);
    let specs: Vec<KernelSpec> = h1_grid
        .iter()
        .flat_map(|&h1| h2_grid.iter().map(move |&h2| (h1, h2)))
        .map(|(h1, h2)| KernelSpec::new(family, h1, h2))
        .collect::<Result<_>>()?;
    let candidates: Vec<Candidate> = specs
        .par_iter()
        .map(|k| {
            let f = fold_errors(es, zs, k, &part, grid, cfg, &times);
            Candidate {
                h1: k.h1,
                h2: k.h2,
                pe: f.iter().map(|x| x.pe).sum(),
                folds: f,
            }
        })
        .collect();
    let best = argmin(&candidates).ok_or_else(|| Error::Empty("no bandwidth pair could be evaluated".into()))?;
    Ok(CvReport {
        h1: candidates[best].h1,
        h2: candidates[best].h2,
        best,
        candidates,
        k: folds,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;
    use proptest::prelude::*;

    #[test]
    fn six_by_three_layout() {
        let p = make_partition(6, 3, 1).unwrap();
        assert_eq!(p.fold_sizes(), vec![10, 10, 10]);
        for i in 0..6 {
            for f in 0..3 {
                let c = (0..6).filter(|&j| p.fold_of(i, j) == Some(f)).count();
                assert!(c == 2 || c == 1, "row {i} fold {f}: {c}");
            }
            assert_eq!(p.fold_of(i, i), None);
        }
        assert_eq!(p.permutations.len(), 2);
    }

    #[test]
    fn k_equals_n() {
        let p = make_partition(5, 5, 2).unwrap();
        assert_eq!(p.fold_sizes(), vec![4; 5]);
        assert!(matches!(make_partition(4, 5, 0), Err(Error::InvalidFolds { k: 5, n: 4 })));
        assert!(make_partition(4, 1, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(make_partition(9, 3, 7).unwrap(), make_partition(9, 3, 7).unwrap());
        assert_ne!(make_partition(9, 3, 7).unwrap().fold, make_partition(9, 3, 8).unwrap().fold);
    }

    proptest! {
        #[test]
        fn exact_partition_when_k_divides_n(k in 2usize..=6, mult in 1usize..=3, seed in 0u64..1000) {
            let n = k * mult;
            prop_assume!(n <= 12);
            let p = make_partition(n, k, seed).unwrap();
            // Enumeration oracle: every off-diagonal dyad appears in exactly one member list.
            let mut hits = vec![0usize; n * n];
            for f in 0..k {
                let m = p.members(f);
                prop_assert_eq!(m.len(), n * (n - 1) / k);
                for (i, j) in m {
                    hits[i * n + j] += 1;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(hits[i * n + j], usize::from(i != j));
                }
            }
        }
    }

    fn toy() -> (EventStream, CovariateSet) {
        let mut ev = Vec::new();
        for q in 0..200 {
            let i = q % 4;
            let j = (i + 1 + (q / 4) % 3) % 4;
            ev.push(Event::new(i, j, 0.002 + 0.996 * ((q * 37) % 200) as f64 / 200.0));
        }
        (EventStream::new(4, 1.0, ev).unwrap(), CovariateSet::none(4))
    }

    #[test]
    fn no_events_no_error() {
        let es = EventStream::empty(4, 1.0).unwrap();
        let zs = CovariateSet::none(4);
        let part = make_partition(4, 2, 0).unwrap();
        let k = KernelSpec::gaussian(0.2, 0.2).unwrap();
        let grid = TimeGrid::uniform(1.0, 9).unwrap();
        let e = prediction_error(&es, &zs, &k, &part, 0, &grid, &SolverConfig::default()).unwrap();
        assert_eq!(e.pe, 0.0);
    }

    #[test]
    fn fold_path_matches_single_fold_path_and_order_invariance() {
        let (es, zs) = toy();
        let part = make_partition(4, 2, 3).unwrap();
        let k = KernelSpec::gaussian(0.25, 0.25).unwrap();
        let grid = TimeGrid::uniform(1.0, 9).unwrap();
        let cfg = SolverConfig::default();
        let all = fold_errors(&es, &zs, &k, &part, &grid, &cfg, &dyad_times(&es));
        let cold = SolverConfig {
            warm_start: false,
            ..cfg.clone()
        };
        for (f, fe) in all.iter().enumerate() {
            let single = prediction_error(&es, &zs, &k, &part, f, &grid, &cfg).unwrap();
            assert_eq!(single, *fe);
            let fit = crate::estimator::fit_curve_masked(&es, &zs, &k, &grid, &cold, Some(&part.training_mask(f)));
            let direct = held_out_error(&fit, &zs, &dyad_times(&es), &part.members(f)).unwrap();
            assert_eq!(direct, fe.pe);
            assert!(fe.pe >= 0.0);
        }
        let mut rev: Vec<Event> = es.events().to_vec();
        rev.reverse();
        let es2 = EventStream::new(4, 1.0, rev).unwrap();
        let again = fold_errors(&es2, &zs, &k, &part, &grid, &cfg, &dyad_times(&es2));
        assert_eq!(all, again);
    }

    #[test]
    fn selection_is_order_invariant() {
        let (es, zs) = toy();
        let grid = TimeGrid::uniform(1.0, 9).unwrap();
        let cfg = SolverConfig::default();
        let a = select_bandwidth(&es, &zs, KernelFamily::Gaussian, &[0.15, 0.3], &[0.2], 2, 5, &grid, &cfg).unwrap();
        let b = select_bandwidth(&es, &zs, KernelFamily::Gaussian, &[0.3, 0.15], &[0.2], 2, 5, &grid, &cfg).unwrap();
        assert_eq!((a.h1, a.h2), (b.h1, b.h2));
        let one = select_bandwidth(&es, &zs, KernelFamily::Gaussian, &[0.2], &[0.2], 2, 5, &grid, &cfg).unwrap();
        assert_eq!(one.candidates.len(), 1);
        assert_eq!(one.best, 0);
    }

    #[test]
    fn default_grids() {
        let h2 = default_h2_grid();
        assert_eq!(default_h1_grid().len(), 10);
        assert_eq!(h2.len(), 10);
        assert!((h2[7] - 0.03).abs() < 1e-15);
    }
}
