//! Effect estimation: outcome imputation (OI) and augmented IPW (AIPW)
//! contrasts with influence-function variances, marginal effects,
//! outcome transforms, and the three-step estimation pipeline.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::propensity::{
    self, ExposureDesign, OverlapRow, PropensityModel, DEFAULT_FLOOR, DEFAULT_OVERLAP_THRESHOLDS,
    DEFAULT_RIDGE,
};
use crate::spatial::{graph_basis, SpatialGraph, SpectralBasis};
use crate::spgd::{
    cross_fit_impute, cross_validate_ranks, spgd_fit, spgd_fit_warm, CvOutcome, EigenSelection,
    FitConfig, RankGrid, SpatialTuckerModel,
};
use crate::stats;
use crate::tensor::{Ranks, Tensor3};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Contrast {
    /// Level `level` against level `reference` (both 1-based).
    Factorial { level: usize, reference: usize },
    /// Switching exposure `exposure` (1-based) on, averaged over the others.
    Marginal { exposure: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub contrast: Contrast,
    /// Human-readable contrast, e.g. `"10"` or `"a_1"`.
    pub label: String,
    /// 0-based outcome index.
    pub outcome: usize,
    pub theta_oi: f64,
    pub theta_aipw: f64,
    /// Influence-function variance `V̂`; the standard error is `√(V̂ / N)`.
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub n_units: usize,
    /// Centered per-unit influence contributions of the AIPW estimate.
    #[serde(skip)]
    pub influence: Vec<f64>,
}

impl EffectEstimate {
    pub fn std_error(&self) -> f64 {
        (self.variance / self.n_units as f64).sqrt()
    }

    /// Whether the interval excludes zero.
    pub fn significant(&self) -> bool {
        self.ci_low > 0.0 || self.ci_high < 0.0
    }
}

fn check_contrast(d: crate::tensor::Dims, level: usize, reference: usize, outcome: usize) -> Result<()> {
    if level == reference {
        return Err(Error::contract(format!("contrast of level {level} against itself")));
    }
    if level == 0 || level > d.levels || reference == 0 || reference > d.levels {
        return Err(Error::contract(format!(
            "levels ({level}, {reference}) outside 1..={}",
            d.levels
        )));
    }
    if outcome >= d.outcomes {
        return Err(Error::contract(format!("outcome {outcome} outside 0..{}", d.outcomes)));
    }
    Ok(())
}

/// `N⁻¹ Σᵢ (Ŷ[i, ℓ, o] − Ŷ[i, ref, o])` with 1-based levels.
pub fn oi_estimate(yhat: &Tensor3, level: usize, reference: usize, outcome: usize) -> Result<f64> {
    let d = yhat.dims();
    check_contrast(d, level, reference, outcome)?;
    let s: f64 = (0..d.units)
        .map(|i| yhat.get(i, level - 1, outcome) - yhat.get(i, reference - 1, outcome))
        .sum();
    Ok(s / d.units as f64)
}

/// `V̂ = N⁻¹ Σ IFᵢ²` for centered contributions.
pub fn influence_variance(contributions: &[f64]) -> Result<f64> {
    if contributions.len() < 2 {
        return Err(Error::contract("influence variance needs at least 2 units"));
    }
    Ok(contributions.iter().map(|v| v * v).sum::<f64>() / contributions.len() as f64)
}

/// `θ ± z_{1-α/2} √(V / N)`.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn confidence_interval(theta: f64, variance: f64, n: usize, alpha: f64) -> Result<(f64, f64)> {
    if !(variance >= 0.0) || n == 0 || !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::contract(format!(
            "confidence interval needs V >= 0, N >= 1, alpha in (0, 1] (got {variance}, {n}, {alpha})"
        )));
    }
    let z = stats::normal_quantile(1.0 - alpha / 2.0).max(0.0);
    let half = z * (variance / n as f64).sqrt();
    Ok((theta - half, theta + half))
}

/// Per-unit AIPW pseudo-outcome for one level.
fn aipw_term(y_obs: &Tensor3, yhat: &Tensor3, probs: &DMatrix<f64>, design: &ExposureDesign, i: usize, level: usize, o: usize) -> f64 {
    let pred = yhat.get(i, level - 1, o);
    if design.level(i) == level {
        pred + (y_obs.get(i, level - 1, o) - pred) / probs[(i, level - 1)]
    } else {
        pred
    }
}

/// AIPW contrast of `level` against `reference` for one outcome.
///
/// `probs` must already be floored; `y_obs` is read only at each unit's
/// assigned level.
#[allow(clippy::too_many_arguments)]
pub fn aipw_estimate(
    y_obs: &Tensor3,
    yhat: &Tensor3,
    probs: &DMatrix<f64>,
    design: &ExposureDesign,
    level: usize,
    reference: usize,
    outcome: usize,
    alpha: f64,
) -> Result<EffectEstimate> {
    let d = yhat.dims();
    check_contrast(d, level, reference, outcome)?;
    if y_obs.dims() != d || design.n_units() != d.units || design.n_levels() != d.levels {
        return Err(Error::contract("observed tensor, completed tensor and design disagree in shape"));
    }
    if probs.shape() != (d.units, d.levels) || probs.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(Error::contract("propensities must be an N x L matrix of values in (0, 1]"));
    }
    let psi: Vec<f64> = (0..d.units)
        .map(|i| {
            aipw_term(y_obs, yhat, probs, design, i, level, outcome)
                - aipw_term(y_obs, yhat, probs, design, i, reference, outcome)
        })
        .collect();
    let theta = stats::mean(&psi);
    let influence: Vec<f64> = psi.iter().map(|v| v - theta).collect();
    let variance = influence_variance(&influence)?;
    let (ci_low, ci_high) = confidence_interval(theta, variance, d.units, alpha)?;
    Ok(EffectEstimate {
        contrast: Contrast::Factorial { level, reference },
        label: design.pattern_label(level),
        outcome,
        theta_oi: oi_estimate(yhat, level, reference, outcome)?,
        theta_aipw: theta,
        variance,
        ci_low,
        ci_high,
        alpha,
        n_units: d.units,
        influence,
    })
}

/// Every non-reference level against `reference`, for every outcome,
/// ordered by outcome then level.
pub fn effect_table(
    y_obs: &Tensor3,
    yhat: &Tensor3,
    probs: &DMatrix<f64>,
    design: &ExposureDesign,
    reference: usize,
    alpha: f64,
) -> Result<Vec<EffectEstimate>> {
    let d = yhat.dims();
    let mut out = Vec::with_capacity((d.levels - 1) * d.outcomes);
    for o in 0..d.outcomes {
        for level in (1..=d.levels).filter(|&l| l != reference) {
            out.push(aipw_estimate(y_obs, yhat, probs, design, level, reference, o, alpha)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalWeighting {
    /// Observed frequency of each pattern of the other exposures.
    Observed,
    /// Equal weight on every pattern of the other exposures.
    Uniform,
}

/// Effect of switching exposure `exposure` (1-based) on, averaged over the
/// patterns of the other exposures, for one outcome. Built from the
/// factorial table as a linear combination, influence functions included.
pub fn marginal_effect(
    effects: &[EffectEstimate],
    design: &ExposureDesign,
    exposure: usize,
    outcome: usize,
    weighting: MarginalWeighting,
) -> Result<EffectEstimate> {
    let k = design.n_exposures();
    if exposure == 0 || exposure > k {
        return Err(Error::contract(format!("exposure {exposure} outside 1..={k}")));
    }
    let n = design.n_units();
    let reference = design.reference_level();
    let row = |level: usize| -> Result<Option<&EffectEstimate>> {
        if level == reference {
            return Ok(None);
        }
        effects
            .iter()
            .find(|e| e.outcome == outcome && e.contrast == Contrast::Factorial { level, reference })
            .map(Some)
            .ok_or_else(|| Error::contract(format!("factorial table lacks level {level} for outcome {outcome}")))
    };
    let bit = 1usize << (exposure - 1);
    let n_other = 1usize << (k - 1);
    // Patterns of the other exposures, indexed by the level with the
    // target bit cleared.
    let off_levels: Vec<usize> = (0..(1usize << k)).filter(|b| b & bit == 0).map(|b| b + 1).collect();
    let weights: Vec<f64> = match weighting {
        MarginalWeighting::Uniform => vec![1.0 / n_other as f64; n_other],
        MarginalWeighting::Observed => {
            let counts = design.counts();
            off_levels
                .iter()
                .map(|&off| (counts[off - 1] + counts[off - 1 + bit]) as f64 / n as f64)
                .collect()
        }
    };
    let (mut oi, mut aipw) = (0.0, 0.0);
    let mut influence = vec![0.0; n];
    let mut alpha = 0.05;
    for (&off, &w) in off_levels.iter().zip(&weights) {
        if w == 0.0 {
            continue;
        }
        let on = off + bit;
        for (lvl, sign) in [(on, 1.0), (off, -1.0)] {
            if let Some(e) = row(lvl)? {
                oi += sign * w * e.theta_oi;
                aipw += sign * w * e.theta_aipw;
                alpha = e.alpha;
                if e.influence.len() != n {
                    return Err(Error::contract("factorial estimates lack influence contributions"));
                }
                for (acc, v) in influence.iter_mut().zip(&e.influence) {
                    *acc += sign * w * v;
                }
            }
        }
    }
    let variance = influence_variance(&influence)?;
    let (ci_low, ci_high) = confidence_interval(aipw, variance, n, alpha)?;
    Ok(EffectEstimate {
        contrast: Contrast::Marginal { exposure },
        label: format!("a_{exposure}"),
        outcome,
        theta_oi: oi,
        theta_aipw: aipw,
        variance,
        ci_low,
        ci_high,
        alpha,
        n_units: n,
        influence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    None,
    /// `ln(x + shift)`.
    Log,
    /// `logit((x + shift) / 100)` for prevalences in percent.
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub transform: Transform,
    pub shift: f64,
    pub mean: f64,
    pub sd: f64,
}

impl TransformRecord {
    pub fn identity() -> Self {
        TransformRecord { transform: Transform::None, shift: 0.0, mean: 0.0, sd: 1.0 }
    }

    /// Map standardized values back to the raw scale.
    pub fn invert(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        values.map(|v| {
            let t = v * self.sd + self.mean;
            match self.transform {
                Transform::None => t - self.shift,
                Transform::Log => t.exp() - self.shift,
                Transform::Logit => 100.0 / (1.0 + (-t).exp()) - self.shift,
            }
        })
    }

    pub fn ratio_label(&self) -> &'static str {
        match self.transform {
            Transform::Log => "rate_ratio",
            Transform::Logit => "odds_ratio",
            Transform::None => "exp_effect",
        }
    }
}

/// Transform raw outcomes, then standardize the whole array to zero mean
/// and unit (population) variance.
pub fn preprocess_outcomes(raw: &DMatrix<f64>, transform: Transform, shift: f64) -> Result<(DMatrix<f64>, TransformRecord)> {
    if !(shift >= 0.0 && shift.is_finite()) {
        return Err(Error::contract(format!("shift must be finite and >= 0, got {shift}")));
    }
    if raw.is_empty() {
        return Err(Error::contract("no outcomes to preprocess"));
    }
    let mut bad = Vec::new();
    for (o, col) in raw.column_iter().enumerate() {
        let ok = col.iter().all(|&x| {
            let v = x + shift;
            match transform {
                Transform::None => v.is_finite(),
                Transform::Log => v > 0.0 && v.is_finite(),
                Transform::Logit => v > 0.0 && v < 100.0,
            }
        });
        if !ok {
            bad.push(o);
        }
    }
    if !bad.is_empty() {
        return Err(Error::Data(format!(
            "outcome columns {bad:?} fall outside the domain of the {transform:?} transform"
        )));
    }
    let t = raw.map(|x| {
        let v = x + shift;
        match transform {
            Transform::None => v,
            Transform::Log => v.ln(),
            Transform::Logit => {
                let p = v / 100.0;
                (p / (1.0 - p)).ln()
            }
        }
    });
    let n = t.len() as f64;
    let mean = t.sum() / n;
    let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    let out = t.map(|v| (v - mean) / sd);
    Ok((out, TransformRecord { transform, shift, mean, sd }))
}

/// `exp(θ · sd)`: a rate ratio under the log transform, an odds ratio under
/// the logit transform.
pub fn effect_to_ratio(theta: f64, record: &TransformRecord) -> f64 {
    (theta * record.sd).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub ranks: Ranks,
    /// Cross-validate the ranks over this grid before Step 1.
    pub rank_grid: Option<RankGrid>,
    pub cv_folds: usize,
    /// `false` runs the non-spatial variant (no eigenvectors, propensity on Z only).
    pub spatial: bool,
    pub max_eigs: Option<usize>,
    /// Use exactly the first `k` non-constant eigenvectors instead of
    /// forward selection (the sensitivity sweep).
    pub fixed_k: Option<usize>,
    pub patience: usize,
    /// Rerun forward selection in Step 3, starting from Step 1's set.
    pub reselect_step3: bool,
    /// Unit folds for cross-fitted imputation; 1 disables cross-fitting.
    pub cross_fit_folds: usize,
    /// Refit the exposure model on the final confounder estimate for AIPW.
    pub refit_propensity: bool,
    pub ridge: f64,
    pub floor: f64,
    pub alpha: f64,
    pub reference_level: usize,
    pub marginal_weighting: MarginalWeighting,
    pub overlap_thresholds: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            ranks: Ranks::new(3, 2, 3),
            rank_grid: None,
            cv_folds: 5,
            spatial: true,
            max_eigs: None,
            fixed_k: None,
            patience: 3,
            reselect_step3: true,
            cross_fit_folds: 5,
            refit_propensity: true,
            ridge: DEFAULT_RIDGE,
            floor: DEFAULT_FLOOR,
            alpha: 0.05,
            reference_level: 1,
            marginal_weighting: MarginalWeighting::Observed,
            overlap_thresholds: DEFAULT_OVERLAP_THRESHOLDS.to_vec(),
            tol: 1e-8,
            max_iter: 500,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    fn fit_config(&self, ranks: Ranks) -> FitConfig {
        let mut c = FitConfig::new(ranks);
        c.max_eigs = self.max_eigs;
        c.patience = self.patience;
        c.tol = self.tol;
        c.max_iter = self.max_iter;
        c.seed = self.seed;
        c.eigen = match (self.spatial, self.fixed_k) {
            (false, _) => EigenSelection::Off,
            (true, None) => EigenSelection::Stepwise,
            (true, Some(k)) => EigenSelection::Fixed((1..=k).collect()),
        };
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub ranks: Ranks,
    pub cv: Option<CvOutcome>,
    pub step1_eigs: Vec<usize>,
    pub step3_eigs: Vec<usize>,
    pub overlap: Vec<OverlapRow>,
    /// Units whose own-level propensity was raised to the floor in the
    /// Step-3 weights.
    pub truncated_units: usize,
    pub propensity_separation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub step1: SpatialTuckerModel,
    /// Exposure model of Step 2, on `[Z, Ŝ⁽⁰⁾]`.
    pub propensity: PropensityModel,
    pub step3: SpatialTuckerModel,
    /// Exposure model used by AIPW.
    pub final_propensity: PropensityModel,
    /// Floored propensities used by AIPW, `N × L`.
    pub probs: DMatrix<f64>,
    pub completed: Tensor3,
    pub weights: Tensor3,
    /// Factorial contrasts, `(L − 1) · O` rows ordered by outcome then level.
    pub effects: Vec<EffectEstimate>,
    /// Marginal contrasts, `K · O` rows ordered by outcome then exposure.
    pub marginal: Vec<EffectEstimate>,
    pub diagnostics: Diagnostics,
}

/// Standardized exposure-model features: `Z` plus an orthonormal basis of
/// the column span of `Ŝ` (identical span, better conditioned).
pub fn propensity_features(z: &DMatrix<f64>, s_hat: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let mut cols: Vec<DMatrix<f64>> = vec![z.clone()];
    if let Some(s) = s_hat {
        if s.ncols() > 0 {
            let mut c = s.clone();
            for mut col in c.column_iter_mut() {
                let m = col.mean();
                col.add_scalar_mut(-m);
            }
            let svd = c.svd(true, false);
            let u = svd.u.expect("left singular vectors requested");
            let top = svd.singular_values.max();
            let keep: Vec<usize> = (0..svd.singular_values.len())
                .filter(|&j| top > 0.0 && svd.singular_values[j] > 1e-8 * top)
                .collect();
            let mut basis = u.select_columns(&keep);
            linalg::fix_column_signs(&mut basis);
            cols.push(basis);
        }
    }
    let total: usize = cols.iter().map(|c| c.ncols()).sum();
    let mut x = DMatrix::zeros(z.nrows(), total);
    let mut at = 0;
    for c in cols {
        x.columns_mut(at, c.ncols()).copy_from(&c);
        at += c.ncols();
    }
    propensity::standardize_columns(&x).0
}

/// Run the pipeline on a graph (its Laplacian basis is computed here).
pub fn run_pipeline(
    y_obs: &Tensor3,
    design: &ExposureDesign,
    z: &DMatrix<f64>,
    graph: &SpatialGraph,
    config: &PipelineConfig,
) -> Result<PipelineResult> {
    let basis = if config.spatial { Some(graph_basis(graph).map_err(|e| e.in_step("spectral basis"))?) } else { None };
    run_pipeline_with_basis(y_obs, design, z, basis.as_ref(), config)
}

/// Three-step estimation with a precomputed basis:
/// 1. unweighted fit with eigenvector selection, `Ŝ⁽⁰⁾ = Φ_sel β̂`;
/// 2. exposure model on `[Z, Ŝ⁽⁰⁾]` and IPW weights;
/// 3. weighted refit (optionally cross-fitted) giving `Ŷ`, then OI/AIPW effects.
pub fn run_pipeline_with_basis(
    y_obs: &Tensor3,
    design: &ExposureDesign,
    z: &DMatrix<f64>,
    basis: Option<&SpectralBasis>,
    config: &PipelineConfig,
) -> Result<PipelineResult> {
    let d = y_obs.dims();
    if design.n_units() != d.units || design.n_levels() != d.levels {
        return Err(Error::contract(format!(
            "design has {} units / {} levels, tensor has {} / {}",
            design.n_units(),
            design.n_levels(),
            d.units,
            d.levels
        )));
    }
    if z.nrows() != d.units {
        return Err(Error::contract("covariate rows do not match units"));
    }
    if config.spatial && basis.is_none() {
        return Err(Error::contract("the spatial pipeline needs a spectral basis"));
    }
    let basis = if config.spatial { basis } else { None };
    let design = design.clone().with_reference(config.reference_level)?;
    let mask = design.mask(d.outcomes)?;
    let (zs, _) = propensity::standardize_columns(z);

    let (ranks, cv) = match &config.rank_grid {
        Some(grid) => {
            let out = cross_validate_ranks(y_obs, &mask, &zs, basis, grid, &config.fit_config(config.ranks), config.cv_folds, config.seed)
                .map_err(|e| e.in_step("rank cross-validation"))?;
            (out.best, Some(out))
        }
        None => (config.ranks, None),
    };
    let fit_cfg = config.fit_config(ranks);

    let step1 = spgd_fit(y_obs, &mask, &zs, basis, None, &fit_cfg).map_err(|e| e.in_step("step 1 (unweighted fit)"))?;
    let s0 = match basis {
        Some(b) if step1.k() > 0 => Some(step1.confounder(b)),
        _ => None,
    };
    let x0 = propensity_features(&zs, s0.as_ref());
    let propensity = propensity::fit_multinomial(&x0, &design, config.ridge).map_err(|e| e.in_step("step 2 (propensity)"))?;
    let probs0 = propensity.predict_probs(&x0)?;
    let ipw = propensity::ipw_weights(&probs0, &design, config.floor, d.outcomes).map_err(|e| e.in_step("step 2 (weights)"))?;

    let mut cfg3 = fit_cfg.clone();
    cfg3.eigen = match (&fit_cfg.eigen, config.reselect_step3) {
        (EigenSelection::Off, _) => EigenSelection::Off,
        (EigenSelection::Fixed(_), _) | (_, false) => EigenSelection::Fixed(step1.selected_eigs.clone()),
        (_, true) => EigenSelection::Extend(step1.selected_eigs.clone()),
    };
    let warm = (cfg3.eigen != EigenSelection::Off).then_some(&step1);
    let step3 = spgd_fit_warm(y_obs, &mask, &zs, basis, Some(&ipw.weights), &cfg3, warm)
        .map_err(|e| e.in_step("step 3 (weighted fit)"))?;
    let completed = if config.cross_fit_folds > 1 {
        let mut cf = cfg3.clone();
        if cf.eigen != EigenSelection::Off {
            cf.eigen = EigenSelection::Fixed(step3.selected_eigs.clone());
        }
        cross_fit_impute(y_obs, &mask, &zs, basis, Some(&ipw.weights), &cf, config.cross_fit_folds, config.seed)
            .map_err(|e| e.in_step("step 3 (cross-fitting)"))?
    } else {
        step3.predict_full(&zs, basis)?
    };

    let (final_propensity, x_final) = if config.refit_propensity {
        let s = match basis {
            Some(b) if step3.k() > 0 => Some(step3.confounder(b)),
            _ => None,
        };
        let x = propensity_features(&zs, s.as_ref());
        let m = propensity::fit_multinomial(&x, &design, config.ridge).map_err(|e| e.in_step("effects (propensity refit)"))?;
        (m, x)
    } else {
        (propensity.clone(), x0)
    };
    let probs = propensity::floor_probs(&final_propensity.predict_probs(&x_final)?, config.floor);
    let overlap = propensity::overlap_diagnostics(&final_propensity.predict_probs(&x_final)?, &design, &config.overlap_thresholds)?;

    let effects = effect_table(y_obs, &completed, &probs, &design, config.reference_level, config.alpha)
        .map_err(|e| e.in_step("effects"))?;
    let mut marginal = Vec::with_capacity(design.n_exposures() * d.outcomes);
    for o in 0..d.outcomes {
        for k in 1..=design.n_exposures() {
            marginal.push(marginal_effect(&effects, &design, k, o, config.marginal_weighting)?);
        }
    }
    let diagnostics = Diagnostics {
        ranks,
        cv,
        step1_eigs: step1.selected_eigs.clone(),
        step3_eigs: step3.selected_eigs.clone(),
        overlap,
        truncated_units: ipw.truncated_units.len(),
        propensity_separation: propensity.separation_warning || final_propensity.separation_warning,
    };
    Ok(PipelineResult {
        step1,
        propensity,
        step3,
        final_propensity,
        probs,
        completed,
        weights: ipw.weights,
        effects,
        marginal,
        diagnostics,
    })
}
