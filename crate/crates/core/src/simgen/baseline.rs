//! Per-outcome regression baselines combined with a multinomial exposure
//! model through AIPW.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{effect_table, EffectEstimate};
use crate::linalg;
use crate::propensity::{self, ExposureDesign, DEFAULT_FLOOR, DEFAULT_RIDGE};
use crate::spatial::SpectralBasis;
use crate::tensor::{Dims, Tensor3};

/// Relative ridge used when the normal equations are singular.
const FALLBACK_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Leading non-constant eigenvectors added to both models; 0 gives the
    /// plain regression baseline.
    pub spatial_k: usize,
    pub ridge: f64,
    pub floor: f64,
    pub alpha: f64,
    pub reference_level: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { spatial_k: 0, ridge: DEFAULT_RIDGE, floor: DEFAULT_FLOOR, alpha: 0.05, reference_level: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub completed: Tensor3,
    pub probs: DMatrix<f64>,
    pub effects: Vec<EffectEstimate>,
    /// The ridge fallback was needed.
    pub ridged: bool,
}

fn covariate_block(z: &DMatrix<f64>, basis: Option<&SpectralBasis>, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Ok(z.clone());
    }
    let b = basis.ok_or_else(|| Error::contract("spatial baseline needs a spectral basis"))?;
    if k + 1 > b.len() {
        return Err(Error::contract(format!("spatial_k {k} exceeds the basis ({} columns)", b.len())));
    }
    let mut x = DMatrix::zeros(z.nrows(), z.ncols() + k);
    x.columns_mut(0, z.ncols()).copy_from(z);
    x.columns_mut(z.ncols(), k).copy_from(&b.eigenvectors.columns(1, k));
    Ok(x)
}

/// Cholesky of `AᵀA` succeeds with pivots no smaller than `1e-6` of the largest.
fn well_conditioned(a: &DMatrix<f64>) -> bool {
    match (a.transpose() * a).cholesky() {
        Some(ch) => {
            let d = ch.l_dirty().diagonal();
            d.min() > 1e-6 * d.max()
        }
        None => false,
    }
}

/// Fit `Y_o ~ 1 + level indicators + X` on each unit's observed level,
/// predict every level, then AIPW with a multinomial exposure model on `X`.
pub fn regression_baseline(
    y_obs: &Tensor3,
    design: &ExposureDesign,
    z: &DMatrix<f64>,
    basis: Option<&SpectralBasis>,
    config: &BaselineConfig,
) -> Result<BaselineResult> {
    let d = y_obs.dims();
    if design.n_units() != d.units || design.n_levels() != d.levels || z.nrows() != d.units {
        return Err(Error::contract("tensor, design and covariates disagree in shape"));
    }
    let reference = config.reference_level;
    let design = design.clone().with_reference(reference)?;
    let x = propensity::standardize_columns(&covariate_block(z, basis, config.spatial_k)?).0;
    let q = x.ncols();
    let p = 1 + (d.levels - 1) + q;
    let row = |i: usize, level: usize, out: &mut DMatrix<f64>, r: usize| {
        out[(r, 0)] = 1.0;
        let mut c = 1;
        for l in (1..=d.levels).filter(|&l| l != reference) {
            out[(r, c)] = if l == level { 1.0 } else { 0.0 };
            c += 1;
        }
        for j in 0..q {
            out[(r, c + j)] = x[(i, j)];
        }
    };
    let mut a = DMatrix::zeros(d.units, p);
    let mut b = DMatrix::zeros(d.units, d.outcomes);
    for i in 0..d.units {
        let level = design.level(i);
        row(i, level, &mut a, i);
        for o in 0..d.outcomes {
            b[(i, o)] = y_obs.get(i, level - 1, o);
        }
    }
    let (coef, ridged) = if well_conditioned(&a) {
        let c = linalg::least_squares(&a, &b, 0.0)
            .ok_or_else(|| Error::Data("regression baseline normal equations failed".into()))?;
        (c, false)
    } else {
        warn!("regression baseline design is rank deficient; refitting with relative ridge {FALLBACK_RIDGE}");
        let c = linalg::least_squares(&a, &b, FALLBACK_RIDGE)
            .ok_or_else(|| Error::Data("regression baseline design is singular even with ridge".into()))?;
        (c, true)
    };
    let mut completed = Tensor3::zeros(Dims::new(d.units, d.levels, d.outcomes))?;
    let mut xr = DMatrix::zeros(1, p);
    for i in 0..d.units {
        for level in 1..=d.levels {
            row(i, level, &mut xr, 0);
            let pred = &xr * &coef;
            for o in 0..d.outcomes {
                completed.set(i, level - 1, o, pred[(0, o)]);
            }
        }
    }
    let model = propensity::fit_multinomial(&x, &design, config.ridge)?;
    let probs = propensity::floor_probs(&model.predict_probs(&x)?, config.floor);
    let effects = effect_table(y_obs, &completed, &probs, &design, reference, config.alpha)?;
    Ok(BaselineResult { completed, probs, effects, ridged })
}
