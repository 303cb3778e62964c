//! Rank selection by cross-validation over observed cells, and
//! cross-fitted imputation over units.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{spgd_fit, FitConfig};
use crate::error::{Error, Result};
use crate::spatial::SpectralBasis;
use crate::tensor::{Dims, Ranks, Tensor3};

const MAX_REDRAWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankGrid {
    pub unit: Vec<usize>,
    pub level: Vec<usize>,
    pub outcome: Vec<usize>,
}

impl Default for RankGrid {
    fn default() -> Self {
        RankGrid {
            unit: (1..=10).collect(),
            level: (1..=3).collect(),
            outcome: (1..=5).collect(),
        }
    }
}

impl RankGrid {
    pub fn single(r: Ranks) -> Self {
        RankGrid { unit: vec![r.unit], level: vec![r.level], outcome: vec![r.outcome] }
    }

    /// Triples in lexicographic order that fit inside `dims`.
    pub fn triples(&self, dims: Dims) -> Vec<Ranks> {
        let mut out = Vec::new();
        for &a in &self.unit {
            for &b in &self.level {
                for &c in &self.outcome {
                    let r = Ranks::new(a, b, c);
                    if r.validate_within(dims).is_ok() {
                        out.push(r);
                    }
                }
            }
        }
        out.sort_by_key(|r| (r.unit, r.level, r.outcome));
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub best: Ranks,
    /// Mean held-out squared error per triple, in grid order.
    pub scores: Vec<(Ranks, f64)>,
}

/// Assign every observed cell to a fold so that no unit, level or outcome
/// slice loses all of its training cells.
fn draw_cell_folds(mask: &Tensor3, folds: usize, seed: u64) -> Result<Vec<Tensor3>> {
    let d = mask.dims();
    let observed: Vec<(usize, usize, usize)> = (0..d.outcomes)
        .flat_map(|o| (0..d.levels).flat_map(move |l| (0..d.units).map(move |i| (i, l, o))))
        .filter(|&(i, l, o)| mask.get(i, l, o) != 0.0)
        .collect();
    if observed.len() < folds {
        return Err(Error::contract(format!(
            "{} observed cells cannot fill {folds} folds",
            observed.len()
        )));
    }
    for attempt in 0..MAX_REDRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let mut order = observed.clone();
        order.shuffle(&mut rng);
        let mut held = vec![Tensor3::zeros(d)?; folds];
        for (pos, &(i, l, o)) in order.iter().enumerate() {
            held[pos % folds].set(i, l, o, 1.0);
        }
        let valid = held.iter().all(|h| training_covers_slices(mask, h));
        if valid {
            return Ok(held);
        }
        log::debug!("fold split {attempt} leaves an empty slice; redrawing");
    }
    Err(Error::FoldSplit(MAX_REDRAWS))
}

fn training_covers_slices(mask: &Tensor3, held: &Tensor3) -> bool {
    let d = mask.dims();
    let mut unit = vec![false; d.units];
    let mut level = vec![false; d.levels];
    let mut outcome = vec![false; d.outcomes];
    for o in 0..d.outcomes {
        for l in 0..d.levels {
            for i in 0..d.units {
                if mask.get(i, l, o) != 0.0 && held.get(i, l, o) == 0.0 {
                    unit[i] = true;
                    level[l] = true;
                    outcome[o] = true;
                }
            }
        }
    }
    unit.into_iter().chain(level).chain(outcome).all(|b| b)
}

/// K-fold cross-validation of the Tucker ranks on the unweighted loss.
///
/// Returns the triple with the smallest mean held-out squared error; ties
/// go to the smaller `r1 + r2 + r3`, then lexicographically.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate_ranks(
    y: &Tensor3,
    mask: &Tensor3,
    z: &DMatrix<f64>,
    basis: Option<&SpectralBasis>,
    grid: &RankGrid,
    config: &FitConfig,
    folds: usize,
    seed: u64,
) -> Result<CvOutcome> {
    if folds < 2 {
        return Err(Error::contract("rank cross-validation needs at least 2 folds"));
    }
    let triples = grid.triples(y.dims());
    if triples.is_empty() {
        return Err(Error::contract("rank grid has no triple within the tensor dims"));
    }
    if triples.len() == 1 {
        return Ok(CvOutcome { best: triples[0], scores: vec![(triples[0], f64::NAN)] });
    }
    let held = draw_cell_folds(mask, folds, seed)?;
    let train: Vec<Tensor3> = held
        .iter()
        .map(|h| Tensor3::from_fn(mask.dims(), |i, l, o| mask.get(i, l, o) * (1.0 - h.get(i, l, o))))
        .collect::<Result<_>>()?;

    let scores: Vec<Result<(Ranks, f64)>> = triples
        .par_iter()
        .map(|&r| {
            let mut cfg = config.clone();
            cfg.ranks = r;
            let mut total = 0.0;
            for (h, t) in held.iter().zip(&train) {
                let model = spgd_fit(y, t, z, basis, None, &cfg)?;
                let yhat = model.predict_full(z, basis)?;
                let (mut sse, mut n) = (0.0, 0usize);
                for (idx, &m) in h.as_slice().iter().enumerate() {
                    if m != 0.0 {
                        let e = y.as_slice()[idx] - yhat.as_slice()[idx];
                        sse += e * e;
                        n += 1;
                    }
                }
                total += sse / n as f64;
            }
            Ok((r, total / folds as f64))
        })
        .collect();
    let scores: Vec<(Ranks, f64)> = scores.into_iter().collect::<Result<_>>()?;
    let best = scores
        .iter()
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.0.total().cmp(&b.0.total()))
                .then((a.0.unit, a.0.level, a.0.outcome).cmp(&(b.0.unit, b.0.level, b.0.outcome)))
        })
        .map(|s| s.0)
        .expect("non-empty grid");
    Ok(CvOutcome { best, scores })
}

fn select_units(t: &Tensor3, rows: &[usize]) -> Result<Tensor3> {
    let d = t.dims();
    Tensor3::from_fn(Dims::new(rows.len(), d.levels, d.outcomes), |i, l, o| t.get(rows[i], l, o))
}

/// Random partition of `0..n` into `folds` groups, each sorted.
pub(crate) fn unit_folds(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (pos, &i) in order.iter().enumerate() {
        out[pos % folds].push(i);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

/// Completed tensor in which every unit's slice comes from a model fitted
/// without that unit. Held-out unit factors are `[1 | Z_i] η + Φ_i β`.
#[allow(clippy::too_many_arguments)]
pub fn cross_fit_impute(
    y: &Tensor3,
    mask: &Tensor3,
    z: &DMatrix<f64>,
    basis: Option<&SpectralBasis>,
    weights: Option<&Tensor3>,
    config: &FitConfig,
    folds: usize,
    seed: u64,
) -> Result<Tensor3> {
    let d = y.dims();
    if folds == 0 || folds > d.units {
        return Err(Error::contract(format!("folds must be in 1..={}, got {folds}", d.units)));
    }
    if folds == 1 {
        return spgd_fit(y, mask, z, basis, weights, config)?.predict_full(z, basis);
    }
    let groups = unit_folds(d.units, folds, seed);
    if let Some(g) = groups.iter().find(|g| g.len() < config.ranks.unit) {
        return Err(Error::contract(format!(
            "a cross-fitting fold has {} units, fewer than r1 = {}",
            g.len(),
            config.ranks.unit
        )));
    }
    let pieces: Vec<Result<Tensor3>> = groups
        .par_iter()
        .map(|held| {
            let train: Vec<usize> = (0..d.units).filter(|i| held.binary_search(i).is_err()).collect();
            let yt = select_units(y, &train)?;
            let mt = select_units(mask, &train)?;
            let wt = weights.map(|w| select_units(w, &train)).transpose()?;
            let zt = z.select_rows(&train);
            let bt = basis.map(|b| b.rows(&train));
            let model = spgd_fit(&yt, &mt, &zt, bt.as_ref(), wt.as_ref(), config)?;
            let bh = basis.map(|b| b.rows(held));
            model.predict_full(&z.select_rows(held), bh.as_ref())
        })
        .collect();
    let mut out = Tensor3::zeros(d)?;
    for (held, piece) in groups.iter().zip(pieces) {
        let piece = piece?;
        for o in 0..d.outcomes {
            for l in 0..d.levels {
                for (r, &i) in held.iter().enumerate() {
                    out.set(i, l, o, piece.get(r, l, o));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spgd::EigenSelection;

    #[test]
    fn grid_triples_are_clipped_and_ordered() {
        let g = RankGrid { unit: vec![2, 1], level: vec![1, 5], outcome: vec![1] };
        let t = g.triples(Dims::new(10, 4, 3));
        assert_eq!(t, vec![Ranks::new(1, 1, 1), Ranks::new(2, 1, 1)]);
    }

    #[test]
    fn singleton_grid_returned_unchanged() {
        let dims = Dims::new(6, 2, 2);
        let y = Tensor3::filled(dims, 1.0).unwrap();
        let mask = Tensor3::filled(dims, 1.0).unwrap();
        let cfg = FitConfig::new(Ranks::new(1, 1, 1));
        let out = cross_validate_ranks(
            &y,
            &mask,
            &DMatrix::zeros(6, 1),
            None,
            &RankGrid::single(Ranks::new(2, 1, 2)),
            &cfg,
            5,
            1,
        )
        .unwrap();
        assert_eq!(out.best, Ranks::new(2, 1, 2));
    }

    #[test]
    fn fold_split_covers_every_cell_once() {
        let dims = Dims::new(12, 3, 4);
        let mask = Tensor3::from_fn(dims, |i, l, _| if i % 3 == l { 1.0 } else { 0.0 }).unwrap();
        let held = draw_cell_folds(&mask, 5, 9).unwrap();
        for idx in 0..dims.len() {
            let count: f64 = held.iter().map(|h| h.as_slice()[idx]).sum();
            assert_eq!(count, mask.as_slice()[idx]);
        }
    }

    #[test]
    fn impossible_split_errors() {
        // One observed cell per unit: holding it out empties that unit.
        let dims = Dims::new(4, 1, 1);
        let mask = Tensor3::filled(dims, 1.0).unwrap();
        assert!(matches!(draw_cell_folds(&mask, 2, 0), Err(Error::FoldSplit(_))));
    }

    #[test]
    fn unit_folds_partition() {
        let f = unit_folds(11, 3, 5);
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert_eq!(f, unit_folds(11, 3, 5));
    }

    #[test]
    fn single_fold_is_plain_fit() {
        let dims = Dims::new(12, 2, 3);
        let y = Tensor3::from_fn(dims, |i, l, o| (i as f64).sin() + l as f64 + 0.1 * o as f64).unwrap();
        let mask = Tensor3::from_fn(dims, |i, l, _| if i % 2 == l { 1.0 } else { 0.0 }).unwrap();
        let z = DMatrix::from_fn(12, 2, |i, j| ((i * (j + 2)) as f64).cos());
        let mut cfg = FitConfig::new(Ranks::new(2, 1, 2));
        cfg.eigen = EigenSelection::Off;
        let a = cross_fit_impute(&y, &mask, &z, None, None, &cfg, 1, 3).unwrap();
        let b = spgd_fit(&y, &mask, &z, None, None, &cfg).unwrap().predict_full(&z, None).unwrap();
        assert_eq!(a, b);
        let c = cross_fit_impute(&y, &mask, &z, None, None, &cfg, 3, 3).unwrap();
        let d = cross_fit_impute(&y, &mask, &z, None, None, &cfg, 3, 3).unwrap();
        assert_eq!(c, d);
        assert!(cross_fit_impute(&y, &mask, &z, None, None, &cfg, 13, 3).is_err());
    }
}
