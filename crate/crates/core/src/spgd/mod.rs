//! Spatial Tucker completion.
//!
//! Minimizes the masked (optionally weighted) reconstruction loss
//! `Σ w (y − 𝒢 ×₁ U1 ×₂ U2 ×₃ U3)²` with the unit factor tied to measured
//! covariates and graph eigenvectors, `U1 = Z η + Φ_sel β`. The eigenvector
//! set is grown by forward selection on a BIC-type score.

mod cv;
mod problem;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::spatial::SpectralBasis;
use crate::tensor::{hosvd, Mode, Ranks, Tensor3, TuckerFactors};

pub use cv::{cross_fit_impute, cross_validate_ranks, CvOutcome, RankGrid};
pub use problem::{gradient, objective, Observations, Params, StepRule};

use problem::{InnerConfig, InnerFit};

/// How the eigenvector set is chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenSelection {
    /// Forward selection from the empty set.
    Stepwise,
    /// Forward selection starting from a given set; only candidates beyond
    /// its largest index are considered.
    Extend(Vec<usize>),
    /// Use exactly these eigenvector columns.
    Fixed(Vec<usize>),
    /// No spatial term.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub ranks: Ranks,
    /// Cap on the number of selected eigenvectors; `None` means
    /// `min(N / 10, 100)`.
    pub max_eigs: Option<usize>,
    pub eigen: EigenSelection,
    /// Consecutive BIC rejections that end forward selection.
    pub patience: usize,
    pub step_rule: StepRule,
    /// Relative objective change that ends the inner loop.
    pub tol: f64,
    pub max_iter: usize,
    /// Prepend a column of ones to the covariates.
    pub intercept: bool,
    /// Relative ridge added to each block's normal equations.
    pub damping: f64,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(ranks: Ranks) -> Self {
        FitConfig {
            ranks,
            max_eigs: None,
            eigen: EigenSelection::Stepwise,
            patience: 3,
            step_rule: StepRule::Preconditioned,
            tol: 1e-8,
            max_iter: 500,
            intercept: true,
            damping: 1e-10,
            seed: 0,
        }
    }

    pub fn max_eigs_for(&self, n_units: usize) -> usize {
        self.max_eigs.unwrap_or_else(|| (n_units / 10).min(100))
    }

    pub fn validate(&self, n_units: usize) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::contract(format!("tolerance must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::contract("max_iter must be >= 1"));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::contract("damping must be finite and >= 0"));
        }
        if self.max_eigs_for(n_units) > n_units {
            return Err(Error::contract(format!(
                "max_eigs {} exceeds the number of units {n_units}",
                self.max_eigs_for(n_units)
            )));
        }
        if self.patience == 0 {
            return Err(Error::contract("patience must be >= 1"));
        }
        Ok(())
    }

    fn inner(&self) -> InnerConfig {
        InnerConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            rule: self.step_rule,
            damping: self.damping,
        }
    }
}

/// One forward-selection trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    /// Candidate eigenvector column; `None` for the starting model.
    pub candidate: Option<usize>,
    pub k: usize,
    pub objective: f64,
    pub bic: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Objective after every inner iteration of the returned model's run.
    pub objective_trace: Vec<f64>,
    pub selection_trace: Vec<SelectionStep>,
    pub converged: bool,
    /// Inner iterations of the returned model's run.
    pub iterations: usize,
    pub objective: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub df: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialTuckerModel {
    pub ranks: Ranks,
    pub core: Tensor3,
    /// Covariate loadings, one row per covariate (intercept first when used).
    pub eta: DMatrix<f64>,
    /// Eigenvector loadings, one row per selected eigenvector.
    pub beta: DMatrix<f64>,
    /// 0-based eigenvector columns, strictly increasing.
    pub selected_eigs: Vec<usize>,
    pub u2: DMatrix<f64>,
    pub u3: DMatrix<f64>,
    pub intercept: bool,
    pub report: FitReport,
}

impl SpatialTuckerModel {
    pub fn k(&self) -> usize {
        self.selected_eigs.len()
    }

    fn params(&self) -> Params {
        let mut coef = DMatrix::zeros(self.eta.nrows() + self.beta.nrows(), self.ranks.unit);
        coef.rows_mut(0, self.eta.nrows()).copy_from(&self.eta);
        coef.rows_mut(self.eta.nrows(), self.beta.nrows()).copy_from(&self.beta);
        Params {
            core: self.core.unfold(Mode::Unit),
            coef,
            u2: self.u2.clone(),
            u3: self.u3.clone(),
        }
    }

    /// Feature rows `[1 | Z | Φ_sel]` for the given covariates and basis rows.
    pub fn features(&self, z: &DMatrix<f64>, basis: Option<&SpectralBasis>) -> Result<DMatrix<f64>> {
        let phi = match (basis, self.selected_eigs.is_empty()) {
            (_, true) => DMatrix::zeros(z.nrows(), 0),
            (Some(b), false) => {
                if b.eigenvectors.nrows() != z.nrows() {
                    return Err(Error::contract("basis rows do not match covariate rows"));
                }
                if let Some(&bad) = self.selected_eigs.iter().find(|&&j| j >= b.len()) {
                    return Err(Error::contract(format!("eigenvector {bad} is outside the basis")));
                }
                b.select(&self.selected_eigs)
            }
            (None, false) => return Err(Error::contract("model uses eigenvectors but no basis was given")),
        };
        let f = build_features(z, &phi, self.intercept);
        if f.ncols() != self.eta.nrows() + self.beta.nrows() {
            return Err(Error::contract(format!(
                "model expects {} covariates, got {}",
                self.eta.nrows() - usize::from(self.intercept),
                z.ncols()
            )));
        }
        Ok(f)
    }

    /// `U1 = [1 | Z] η + Φ_sel β`.
    pub fn unit_factor(&self, z: &DMatrix<f64>, basis: Option<&SpectralBasis>) -> Result<DMatrix<f64>> {
        Ok(self.features(z, basis)? * self.params().coef)
    }

    /// Estimated latent confounder `Ŝ = Φ_sel β` (`N × r1`; zero when k = 0).
    pub fn confounder(&self, basis: &SpectralBasis) -> DMatrix<f64> {
        if self.selected_eigs.is_empty() {
            return DMatrix::zeros(basis.eigenvectors.nrows(), self.ranks.unit);
        }
        basis.select(&self.selected_eigs) * &self.beta
    }

    pub fn tucker(&self, z: &DMatrix<f64>, basis: Option<&SpectralBasis>) -> Result<TuckerFactors> {
        TuckerFactors::new(self.core.clone(), self.unit_factor(z, basis)?, self.u2.clone(), self.u3.clone())
    }

    /// Dense completed tensor over every `(unit, level, outcome)`.
    pub fn predict_full(&self, z: &DMatrix<f64>, basis: Option<&SpectralBasis>) -> Result<Tensor3> {
        let u1 = self.unit_factor(z, basis)?;
        problem::predict_rows(&u1, &self.params(), self.u2.nrows(), self.u3.nrows())
    }
}

pub fn predict_full(model: &SpatialTuckerModel, z: &DMatrix<f64>, basis: Option<&SpectralBasis>) -> Result<Tensor3> {
    model.predict_full(z, basis)
}

fn build_features(z: &DMatrix<f64>, phi: &DMatrix<f64>, intercept: bool) -> DMatrix<f64> {
    let n = z.nrows();
    let lead = usize::from(intercept);
    let mut f = DMatrix::zeros(n, lead + z.ncols() + phi.ncols());
    if intercept {
        f.column_mut(0).fill(1.0);
    }
    f.columns_mut(lead, z.ncols()).copy_from(z);
    f.columns_mut(lead + z.ncols(), phi.ncols()).copy_from(phi);
    f
}

/// `n_obs · ln(rss / n_obs) + df · ln(n_obs)`.
///
/// A non-positive `rss` (an exact fit) is floored at machine epsilon.
pub fn bic_score(rss: f64, n_obs: usize, df: usize) -> Result<f64> {
    if df == 0 || n_obs <= df {
        return Err(Error::contract(format!(
            "BIC needs n_obs > df >= 1 (n_obs = {n_obs}, df = {df})"
        )));
    }
    let rss = if rss > 0.0 {
        rss
    } else {
        log::warn!("non-positive residual sum of squares {rss:e} in BIC; using machine epsilon");
        f64::EPSILON
    };
    let n = n_obs as f64;
    Ok(n * (rss / n).ln() + df as f64 * n.ln())
}

/// Free parameters counted by the BIC: the core, `r1²` for the unit factor
/// up to rotation, `k · r1` eigenvector loadings, and the Stiefel
/// dimensions of `U2`, `U3`.
pub fn degrees_of_freedom(ranks: Ranks, k: usize, levels: usize, outcomes: usize) -> usize {
    ranks.core_size()
        + ranks.unit * ranks.unit
        + k * ranks.unit
        + (levels - ranks.level) * ranks.level
        + (outcomes - ranks.outcome) * ranks.outcome
}

/// Fit the spatial Tucker model.
///
/// `z` holds standardized covariates (no intercept column); `basis` is
/// required unless eigenvector selection is [`EigenSelection::Off`].
pub fn spgd_fit(
    y: &Tensor3,
    mask: &Tensor3,
    z: &DMatrix<f64>,
    basis: Option<&SpectralBasis>,
    weights: Option<&Tensor3>,
    config: &FitConfig,
) -> Result<SpatialTuckerModel> {
    spgd_fit_warm(y, mask, z, basis, weights, config, None)
}

/// As [`spgd_fit`], starting from a previous model's parameters. The warm
/// model's eigenvector set must equal the starting set of `config.eigen`.
pub fn spgd_fit_warm(
    y: &Tensor3,
    mask: &Tensor3,
    z: &DMatrix<f64>,
    basis: Option<&SpectralBasis>,
    weights: Option<&Tensor3>,
    config: &FitConfig,
    warm: Option<&SpatialTuckerModel>,
) -> Result<SpatialTuckerModel> {
    let dims = y.dims();
    config.validate(dims.units)?;
    config.ranks.validate_within(dims)?;
    if z.nrows() != dims.units {
        return Err(Error::contract(format!("{} covariate rows for {} units", z.nrows(), dims.units)));
    }
    if z.ncols() == 0 && !config.intercept && !matches!(config.eigen, EigenSelection::Fixed(ref s) if !s.is_empty()) {
        return Err(Error::contract("the unit factor needs at least one covariate or the intercept"));
    }
    if let Some(b) = basis {
        if b.eigenvectors.nrows() != dims.units {
            return Err(Error::contract("basis rows do not match the number of units"));
        }
    }
    let obs = Observations::new(y, mask, weights)?;
    let (start, candidates) = selection_plan(config, basis, dims.units)?;
    let z_aug = build_features(z, &DMatrix::zeros(dims.units, 0), config.intercept);

    let init = match warm {
        Some(m) => {
            if m.selected_eigs != start || m.ranks != config.ranks || m.intercept != config.intercept {
                return Err(Error::contract("warm-start model does not match the configured fit"));
            }
            m.params()
        }
        None => initial_params(y, mask, &z_aug, start.len(), config.ranks)?,
    };
    let features_for = |sel: &[usize]| -> DMatrix<f64> {
        match basis {
            Some(b) if !sel.is_empty() => build_features(z, &b.select(sel), config.intercept),
            _ => z_aug.clone(),
        }
    };
    let score = |fit: &InnerFit, k: usize| -> Result<(f64, usize)> {
        let df = degrees_of_freedom(config.ranks, k, dims.levels, dims.outcomes);
        Ok((bic_score(fit.objective, obs.n_obs(), df)?, df))
    };

    let inner = config.inner();
    let mut sel = start;
    let mut best = problem::descend(&obs, &features_for(&sel), init, &inner)?;
    let (mut best_bic, mut best_df) = score(&best, sel.len())?;
    let mut trace = vec![SelectionStep {
        candidate: None,
        k: sel.len(),
        objective: best.objective,
        bic: best_bic,
        accepted: true,
    }];
    let mut rejections = 0;
    for cand in candidates {
        let k = sel.len() + 1;
        let df = degrees_of_freedom(config.ranks, k, dims.levels, dims.outcomes);
        if df >= obs.n_obs() {
            break;
        }
        let mut trial_sel = sel.clone();
        trial_sel.push(cand);
        let mut start_params = best.params.clone();
        let rows = start_params.coef.nrows();
        start_params.coef = start_params.coef.insert_row(rows, 0.0);
        let fit = problem::descend(&obs, &features_for(&trial_sel), start_params, &inner)?;
        let (bic, df) = score(&fit, k)?;
        let accepted = bic < best_bic;
        trace.push(SelectionStep {
            candidate: Some(cand),
            k: trial_sel.len(),
            objective: fit.objective,
            bic,
            accepted,
        });
        if accepted {
            log::debug!("eigenvector {cand} accepted (BIC {best_bic:.4} -> {bic:.4})");
            sel = trial_sel;
            best = fit;
            best_bic = bic;
            best_df = df;
            rejections = 0;
        } else {
            rejections += 1;
            if rejections >= config.patience {
                break;
            }
        }
    }
    if !best.converged {
        log::warn!(
            "spgd inner loop hit max_iter = {} (objective {:e})",
            config.max_iter,
            best.objective
        );
    }
    let p = best.params;
    let n_eta = z_aug.ncols();
    Ok(SpatialTuckerModel {
        ranks: config.ranks,
        core: p.core_tensor()?,
        eta: p.coef.rows(0, n_eta).into_owned(),
        beta: p.coef.rows(n_eta, sel.len()).into_owned(),
        selected_eigs: sel,
        u2: p.u2,
        u3: p.u3,
        intercept: config.intercept,
        report: FitReport {
            objective_trace: best.trace,
            selection_trace: trace,
            converged: best.converged,
            iterations: best.iterations,
            objective: best.objective,
            bic: best_bic,
            n_obs: obs.n_obs(),
            df: best_df,
        },
    })
}

/// Starting eigenvector set and the ordered candidates to try after it.
fn selection_plan(
    config: &FitConfig,
    basis: Option<&SpectralBasis>,
    n_units: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let cap = config.max_eigs_for(n_units);
    let available = basis.map_or(0, |b| b.len());
    // Column 0 is the trivial eigenvector, covered by the intercept.
    let last = cap.min(available.saturating_sub(1));
    let check = |set: &[usize]| -> Result<()> {
        if set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract("eigenvector indices must be strictly increasing"));
        }
        if let Some(&j) = set.iter().find(|&&j| j >= available) {
            return Err(Error::contract(format!("eigenvector {j} is outside the basis ({available} columns)")));
        }
        Ok(())
    };
    match &config.eigen {
        EigenSelection::Off => Ok((vec![], vec![])),
        EigenSelection::Fixed(set) => {
            check(set)?;
            Ok((set.clone(), vec![]))
        }
        EigenSelection::Stepwise | EigenSelection::Extend(_) => {
            let start = match &config.eigen {
                EigenSelection::Extend(s) => s.clone(),
                _ => vec![],
            };
            if basis.is_none() {
                if start.is_empty() && cap == 0 {
                    return Ok((vec![], vec![]));
                }
                return Err(Error::contract("eigenvector selection needs a spectral basis"));
            }
            check(&start)?;
            let from = start.last().map_or(1, |&j| j + 1);
            let room = cap.saturating_sub(start.len());
            let candidates = (from..=last).take(room).collect();
            Ok((start, candidates))
        }
    }
}

/// HOSVD of the mean-filled data; `η` by least squares of the HOSVD unit
/// factor on the covariates; zero eigenvector loadings.
fn initial_params(
    y: &Tensor3,
    mask: &Tensor3,
    z_aug: &DMatrix<f64>,
    k: usize,
    ranks: Ranks,
) -> Result<Params> {
    let filled = problem::mean_fill(y, mask)?;
    let h = hosvd(&filled, ranks)?;
    let eta = if z_aug.ncols() == 0 {
        DMatrix::zeros(0, ranks.unit)
    } else {
        linalg::least_squares(z_aug, &h.u1, 1e-10)
            .ok_or_else(|| Error::NonFinite { iteration: 0, context: "covariate initialization".into() })?
    };
    let mut coef = DMatrix::zeros(z_aug.ncols() + k, ranks.unit);
    coef.rows_mut(0, z_aug.ncols()).copy_from(&eta);
    Ok(Params {
        core: h.core.unfold(Mode::Unit),
        coef,
        u2: h.u2,
        u3: h.u3,
    })
}
