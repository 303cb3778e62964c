//! Synthetic spatial factorial-exposure data with known potential outcomes,
//! baseline estimators and a Monte-Carlo benchmark harness.

use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub mod baseline;
pub mod benchmark;

use crate::error::{Error, Result};
use crate::linalg;
use crate::propensity::{ExposureDesign, PropensityModel};
use crate::spatial::{graph_basis, grid_graph, SpatialGraph, SpectralBasis};
use crate::tensor::{Dims, Ranks, Tensor3, TuckerFactors};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    /// Uniform on `[-√3 σ, √3 σ]` (same variance as the Gaussian).
    Uniform,
}

/// Scenario knobs. Every constant of the generating process lives here so a
/// scenario file fully determines a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub rows: usize,
    pub cols: usize,
    pub n_exposures: usize,
    pub n_outcomes: usize,
    pub n_covariates: usize,
    /// Ranks of the true potential-outcome tensor.
    pub ranks: Ranks,
    /// Strength `γ` of the latent spatial confounder in both the unit
    /// factor and the exposure model.
    pub confounding: f64,
    /// Outcome noise standard deviation.
    pub noise: f64,
    pub noise_kind: NoiseKind,
    /// Target minimum true propensity; must lie in `(0, 0.5)`.
    pub overlap: f64,
    /// Assign exposures uniformly at random, ignoring `overlap`.
    pub randomized: bool,
    /// The confounder lives in the span of eigenvectors `2..=j_max`
    /// (1-based, ascending eigenvalue).
    pub j_max: usize,
    /// Spectral decay exponent of the confounder's coefficients.
    pub decay: f64,
    /// Scale of the level-varying core slices; 0 gives no exposure effects.
    pub effect_scale: f64,
    /// Exposure-model slope on the confounder relative to the covariates.
    pub confounder_propensity: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            version: SCENARIO_VERSION,
            rows: 20,
            cols: 20,
            n_exposures: 2,
            n_outcomes: 10,
            n_covariates: 3,
            ranks: Ranks::new(3, 2, 3),
            confounding: 1.0,
            noise: 0.5,
            noise_kind: NoiseKind::Gaussian,
            overlap: 0.05,
            randomized: false,
            j_max: 6,
            decay: 1.5,
            effect_scale: 1.0,
            confounder_propensity: 2.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn n_units(&self) -> usize {
        self.rows * self.cols
    }

    pub fn n_levels(&self) -> usize {
        1 << self.n_exposures
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCENARIO_VERSION {
            return Err(Error::contract(format!(
                "unsupported scenario version {} (expected {SCENARIO_VERSION})",
                self.version
            )));
        }
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::contract("scenario grid must be at least 2x2"));
        }
        if !(self.overlap > 0.0 && self.overlap < 0.5) {
            return Err(Error::contract(format!(
                "overlap must lie in (0, 0.5), got {}; every unit needs a nonzero chance of every exposure combination",
                self.overlap
            )));
        }
        let nonneg = [
            ("confounding", self.confounding),
            ("noise", self.noise),
            ("decay", self.decay),
            ("effect_scale", self.effect_scale),
            ("confounder_propensity", self.confounder_propensity),
        ];
        if let Some((name, v)) = nonneg.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::contract(format!("{name} must be finite and >= 0, got {v}")));
        }
        if self.n_exposures == 0 || self.n_exposures > 8 {
            return Err(Error::contract("n_exposures must be in 1..=8"));
        }
        if self.n_outcomes == 0 {
            return Err(Error::contract("n_outcomes must be >= 1"));
        }
        if self.j_max < 2 || self.j_max > self.n_units() {
            return Err(Error::contract(format!(
                "j_max must be in 2..={}, got {}",
                self.n_units(),
                self.j_max
            )));
        }
        self.ranks
            .validate_within(Dims::new(self.n_units(), self.n_levels(), self.n_outcomes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub config: ScenarioConfig,
    /// Observed outcomes; zero at unobserved cells.
    pub y_obs: Tensor3,
    /// Noiseless potential outcomes `𝒴*`.
    pub y_true: Tensor3,
    pub design: ExposureDesign,
    /// Covariates without intercept, `N × p`.
    pub z: DMatrix<f64>,
    pub centroids: Vec<[f64; 2]>,
    /// `θ*` against level 1: row `ℓ - 1` holds level `ℓ`'s contrasts
    /// (row 0 is zero), one column per outcome.
    pub true_effects: DMatrix<f64>,
    /// Latent confounder with unit root-mean-square (before multiplying by `γ`).
    pub confounder: DVector<f64>,
    /// True exposure probabilities, `N × L`.
    pub propensities: DMatrix<f64>,
    /// The exposure model that produced `propensities` from `[Z, γS]`.
    pub exposure_model: PropensityModel,
    pub graph: SpatialGraph,
    #[serde(skip)]
    pub basis: Option<SpectralBasis>,
}

impl SyntheticDataset {
    pub fn dims(&self) -> Dims {
        self.y_obs.dims()
    }

    pub fn mask(&self) -> Result<Tensor3> {
        self.design.mask(self.config.n_outcomes)
    }

    /// The spectral basis of the grid, recomputed if it was not kept.
    pub fn basis(&self) -> Result<SpectralBasis> {
        match &self.basis {
            Some(b) => Ok(b.clone()),
            None => graph_basis(&self.graph),
        }
    }

    /// Exposure-model features `[Z, γ S]`.
    pub fn exposure_features(&self) -> DMatrix<f64> {
        exposure_features(&self.z, &self.confounder, self.config.confounding)
    }
}

fn exposure_features(z: &DMatrix<f64>, s: &DVector<f64>, gamma: f64) -> DMatrix<f64> {
    let mut x = z.clone().insert_column(z.ncols(), 0.0);
    x.column_mut(z.ncols()).copy_from(&(s * gamma));
    x
}

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Scale to unit root-mean-square. Not centered: centering would leave the
/// span of the chosen eigenvectors.
fn unit_rms(v: &mut DVector<f64>) {
    let rms = (v.norm_squared() / v.len() as f64).sqrt();
    if rms > 0.0 {
        *v /= rms;
    }
}

/// Generate a dataset; a fresh basis is computed for the grid.
pub fn generate(config: &ScenarioConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let graph = grid_graph(config.rows, config.cols)?;
    let basis = graph_basis(&graph)?;
    generate_with_basis(config, graph, basis)
}

/// Generate with a precomputed basis of the same grid (Monte-Carlo loops
/// reuse one basis across replications).
pub fn generate_with_basis(
    config: &ScenarioConfig,
    graph: SpatialGraph,
    basis: SpectralBasis,
) -> Result<SyntheticDataset> {
    config.validate()?;
    let n = config.n_units();
    if graph.n_nodes() != n || basis.eigenvectors.nrows() != n {
        return Err(Error::contract("graph/basis size does not match the scenario grid"));
    }
    let l = config.n_levels();
    let o = config.n_outcomes;
    let p = config.n_covariates;
    let r = config.ranks;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Latent confounder with decaying spectral coefficients.
    let mut s = DVector::zeros(n);
    for j in 2..=config.j_max {
        let c = (j as f64).powf(-config.decay) * rng.sample::<f64, _>(StandardNormal);
        s.axpy(c, &basis.eigenvectors.column(j - 1), 1.0);
    }
    unit_rms(&mut s);

    let z = randn(&mut rng, n, p);
    let eta_z = randn(&mut rng, p + 1, r.unit) / ((p + 1) as f64).sqrt();
    let mut eta_s = randn(&mut rng, 1, r.unit);
    let norm = eta_s.norm();
    if norm > 0.0 {
        eta_s /= norm;
    }
    let mut u1 = DMatrix::from_fn(n, r.unit, |i, a| eta_z[(0, a)] + (0..p).map(|j| z[(i, j)] * eta_z[(j + 1, a)]).sum::<f64>());
    u1 += (&s * config.confounding) * &eta_s;

    // Level factor: first column constant, so only the remaining columns
    // separate the levels.
    let mut u2_raw = randn(&mut rng, l, r.level);
    u2_raw.column_mut(0).fill(1.0);
    let u2 = linalg::thin_qr(&u2_raw).0;
    let u3 = linalg::thin_qr(&randn(&mut rng, o, r.outcome)).0;
    let mut core = Tensor3::from_fn(r.as_dims(), |_, _, _| rng.sample(StandardNormal))?;
    for c in 0..r.outcome {
        for b in 1..r.level {
            for a in 0..r.unit {
                core.set(a, b, c, core.get(a, b, c) * config.effect_scale);
            }
        }
    }
    let raw = TuckerFactors::new(core, u1, u2, u3)?.reconstruct()?;
    let sd = population_sd(raw.as_slice());
    let y_true = if sd > 0.0 { raw.scale(1.0 / sd)? } else { raw };

    // Exposure model on [Z, γS]; slopes scaled so the smallest true
    // propensity is close to `overlap`.
    let features = exposure_features(&z, &s, config.confounding);
    let mut slopes = randn(&mut rng, l - 1, p + 1) / (p as f64).sqrt();
    for lvl in 0..l - 1 {
        slopes[(lvl, p)] = config.confounder_propensity * rng.sample::<f64, _>(StandardNormal);
    }
    let kappa = if config.randomized {
        0.0
    } else {
        calibrate_slope_scale(&slopes, &features, config.overlap)
    };
    let mut coefficients = DMatrix::zeros(l - 1, p + 2);
    coefficients.columns_mut(1, p + 1).copy_from(&(slopes * kappa));
    let exposure_model = PropensityModel {
        coefficients,
        baseline_level: 1,
        ridge: 0.0,
        converged: true,
        iterations: 0,
        objective: 0.0,
        trace: vec![],
        separation_warning: false,
    };
    let propensities = exposure_model.predict_probs(&features)?;

    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let levels: Vec<usize> = (0..n)
        .map(|i| {
            let u: f64 = unit.sample(&mut rng);
            let mut acc = 0.0;
            for lvl in 0..l {
                acc += propensities[(i, lvl)];
                if u < acc {
                    return lvl + 1;
                }
            }
            l
        })
        .collect();
    let design = ExposureDesign::from_levels(config.n_exposures, levels)?;

    let dims = Dims::new(n, l, o);
    let half_width = 3f64.sqrt() * config.noise;
    let mut y_obs = Tensor3::zeros(dims)?;
    for oo in 0..o {
        for i in 0..n {
            let lvl = design.level(i) - 1;
            let eps = match config.noise_kind {
                NoiseKind::Gaussian => config.noise * rng.sample::<f64, _>(StandardNormal),
                NoiseKind::Uniform => rng.random_range(-half_width..=half_width),
            };
            y_obs.set(i, lvl, oo, y_true.get(i, lvl, oo) + eps);
        }
    }

    let true_effects = column_mean_contrasts(&y_true, 1)?;
    Ok(SyntheticDataset {
        config: config.clone(),
        y_obs,
        y_true,
        design,
        z,
        centroids: graph.centroids().map(<[_]>::to_vec).unwrap_or_default(),
        true_effects,
        confounder: s,
        propensities,
        exposure_model,
        graph,
        basis: Some(basis),
    })
}

fn population_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// `θ[ℓ, o] = mean_i (Y[i, ℓ, o] − Y[i, ref, o])` for every level.
pub fn column_mean_contrasts(y: &Tensor3, reference: usize) -> Result<DMatrix<f64>> {
    let d = y.dims();
    if reference == 0 || reference > d.levels {
        return Err(Error::contract(format!("reference level {reference} outside 1..={}", d.levels)));
    }
    let rf = reference - 1;
    Ok(DMatrix::from_fn(d.levels, d.outcomes, |l, o| {
        (0..d.units).map(|i| y.get(i, l, o) - y.get(i, rf, o)).sum::<f64>() / d.units as f64
    }))
}

fn min_propensity(slopes: &DMatrix<f64>, features: &DMatrix<f64>, kappa: f64) -> f64 {
    let mut coef = DMatrix::zeros(slopes.nrows(), slopes.ncols() + 1);
    coef.columns_mut(1, slopes.ncols()).copy_from(&(slopes * kappa));
    let m = PropensityModel {
        coefficients: coef,
        baseline_level: 1,
        ridge: 0.0,
        converged: true,
        iterations: 0,
        objective: 0.0,
        trace: vec![],
        separation_warning: false,
    };
    m.predict_probs(features)
        .map(|p| p.iter().copied().fold(f64::INFINITY, f64::min))
        .unwrap_or(0.0)
}

/// Bisection for the slope scale at which the smallest propensity equals
/// `target` (0 when even uniform assignment is below the target).
fn calibrate_slope_scale(slopes: &DMatrix<f64>, features: &DMatrix<f64>, target: f64) -> f64 {
    if min_propensity(slopes, features, 0.0) <= target {
        return 0.0;
    }
    let mut hi = 1.0;
    while min_propensity(slopes, features, hi) > target && hi < 1e6 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if min_propensity(slopes, features, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
