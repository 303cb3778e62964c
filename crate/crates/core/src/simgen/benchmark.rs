//! Monte-Carlo comparison of estimators on replicated synthetic scenarios.

use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baseline::{regression_baseline, BaselineConfig};
use super::{generate_with_basis, ScenarioConfig, SyntheticDataset};
use crate::error::{Error, Result};
use crate::estimator::{run_pipeline_with_basis, Contrast, EffectEstimate, PipelineConfig};
use crate::spatial::{graph_basis, grid_graph, SpectralBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Returns the true effects with zero-width intervals (plumbing check).
    Oracle,
    /// The spatial three-step tensor pipeline.
    SpatialTensor,
    /// The same pipeline without eigenvectors.
    Tensor,
    Regression,
    SpatialRegression,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::Oracle, Method::SpatialTensor, Method::Tensor, Method::Regression, Method::SpatialRegression];

    pub fn name(self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::SpatialTensor => "spatial_tensor",
            Method::Tensor => "tensor",
            Method::Regression => "regression",
            Method::SpatialRegression => "spatial_regression",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub scenario: ScenarioConfig,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub pipeline: PipelineConfig,
    /// Eigenvectors used by the spatial regression baseline.
    pub spatial_regression_k: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            scenario: ScenarioConfig::default(),
            replications: 20,
            methods: Method::ALL.to_vec(),
            pipeline: PipelineConfig::default(),
            spatial_regression_k: 10,
        }
    }
}

/// One method on one replication. `errors[j]` is `θ̂ − θ` for the j-th
/// factorial contrast (outcome-major, as in the effect table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub seed: u64,
    pub method: Method,
    pub errors: Vec<f64>,
    pub covered: Vec<bool>,
    pub widths: Vec<f64>,
    /// Wall-clock time; not serialized so reports are reproducible.
    #[serde(skip)]
    pub seconds: f64,
    /// Set when the method failed; the other fields are then empty.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    /// Mean of `θ̂ − θ` over replications and contrasts.
    pub bias: f64,
    /// Mean over contrasts of the absolute Monte-Carlo bias.
    pub abs_bias: f64,
    pub mse: f64,
    pub coverage: f64,
    pub mean_width: f64,
    #[serde(skip)]
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub replications: Vec<ReplicationResult>,
    pub metrics: Vec<MetricsRow>,
}

/// Factorial effect estimates of one method on one dataset.
pub fn method_effects(
    method: Method,
    data: &SyntheticDataset,
    basis: &SpectralBasis,
    pipeline: &PipelineConfig,
    spatial_regression_k: usize,
) -> Result<Vec<EffectEstimate>> {
    let baseline = |k: usize| BaselineConfig {
        spatial_k: k,
        ridge: pipeline.ridge,
        floor: pipeline.floor,
        alpha: pipeline.alpha,
        reference_level: pipeline.reference_level,
    };
    match method {
        Method::Oracle => oracle_effects(data, pipeline.reference_level, pipeline.alpha),
        Method::SpatialTensor | Method::Tensor => {
            let cfg = PipelineConfig { spatial: method == Method::SpatialTensor, ..pipeline.clone() };
            Ok(run_pipeline_with_basis(&data.y_obs, &data.design, &data.z, Some(basis), &cfg)?.effects)
        }
        Method::Regression => Ok(regression_baseline(&data.y_obs, &data.design, &data.z, None, &baseline(0))?.effects),
        Method::SpatialRegression => Ok(regression_baseline(
            &data.y_obs,
            &data.design,
            &data.z,
            Some(basis),
            &baseline(spatial_regression_k),
        )?
        .effects),
    }
}

fn oracle_effects(data: &SyntheticDataset, reference: usize, alpha: f64) -> Result<Vec<EffectEstimate>> {
    let d = data.dims();
    if reference == 0 || reference > d.levels {
        return Err(Error::contract(format!("reference level {reference} outside 1..={}", d.levels)));
    }
    let mut out = Vec::with_capacity((d.levels - 1) * d.outcomes);
    for o in 0..d.outcomes {
        for level in (1..=d.levels).filter(|&l| l != reference) {
            let theta = data.true_effects[(level - 1, o)] - data.true_effects[(reference - 1, o)];
            out.push(EffectEstimate {
                contrast: Contrast::Factorial { level, reference },
                label: data.design.pattern_label(level),
                outcome: o,
                theta_oi: theta,
                theta_aipw: theta,
                variance: 0.0,
                ci_low: theta,
                ci_high: theta,
                alpha,
                n_units: d.units,
                influence: vec![0.0; d.units],
            });
        }
    }
    Ok(out)
}

fn score(data: &SyntheticDataset, effects: &[EffectEstimate]) -> (Vec<f64>, Vec<bool>, Vec<f64>) {
    let mut errors = Vec::with_capacity(effects.len());
    let mut covered = Vec::with_capacity(effects.len());
    let mut widths = Vec::with_capacity(effects.len());
    for e in effects {
        if let Contrast::Factorial { level, reference } = e.contrast {
            let truth = data.true_effects[(level - 1, e.outcome)] - data.true_effects[(reference - 1, e.outcome)];
            errors.push(e.theta_aipw - truth);
            covered.push(e.ci_low <= truth && truth <= e.ci_high);
            widths.push(e.ci_high - e.ci_low);
        }
    }
    (errors, covered, widths)
}

/// Run every method on `replications` datasets; replication `r` uses
/// scenario seed `seed + r`. Failures are recorded, not propagated.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    config.scenario.validate()?;
    if config.replications == 0 || config.methods.is_empty() {
        return Err(Error::contract("benchmark needs at least one replication and one method"));
    }
    let graph = grid_graph(config.scenario.rows, config.scenario.cols)?;
    let basis = graph_basis(&graph)?;
    let per_rep: Vec<Result<Vec<ReplicationResult>>> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let seed = config.scenario.seed.wrapping_add(r as u64);
            let scenario = ScenarioConfig { seed, ..config.scenario.clone() };
            let data = generate_with_basis(&scenario, graph.clone(), basis.clone())?;
            let pipeline = PipelineConfig { seed, ..config.pipeline.clone() };
            Ok(config
                .methods
                .iter()
                .map(|&method| {
                    let t = Instant::now();
                    let out = method_effects(method, &data, &basis, &pipeline, config.spatial_regression_k);
                    let seconds = t.elapsed().as_secs_f64();
                    match out {
                        Ok(effects) => {
                            let (errors, covered, widths) = score(&data, &effects);
                            ReplicationResult { replication: r, seed, method, errors, covered, widths, seconds, failure: None }
                        }
                        Err(e) => {
                            warn!("replication {r}: {} failed: {e}", method.name());
                            ReplicationResult {
                                replication: r,
                                seed,
                                method,
                                errors: vec![],
                                covered: vec![],
                                widths: vec![],
                                seconds,
                                failure: Some(e.to_string()),
                            }
                        }
                    }
                })
                .collect())
        })
        .collect();
    let mut replications = Vec::new();
    for r in per_rep {
        replications.extend(r?);
    }
    let metrics = config.methods.iter().map(|&m| summarize(m, &replications)).collect();
    Ok(BenchmarkReport { config: config.clone(), replications, metrics })
}

/// Aggregate the successful replications of one method.
pub fn summarize(method: Method, results: &[ReplicationResult]) -> MetricsRow {
    let ok: Vec<&ReplicationResult> = results.iter().filter(|r| r.method == method && r.failure.is_none()).collect();
    let n_failed = results.iter().filter(|r| r.method == method && r.failure.is_some()).count();
    let cells: usize = ok.iter().map(|r| r.errors.len()).sum();
    if cells == 0 {
        return MetricsRow {
            method,
            n_ok: ok.len(),
            n_failed,
            bias: f64::NAN,
            abs_bias: f64::NAN,
            mse: f64::NAN,
            coverage: f64::NAN,
            mean_width: f64::NAN,
            mean_seconds: f64::NAN,
        };
    }
    let c = cells as f64;
    let n_contrasts = ok[0].errors.len();
    let abs_bias = (0..n_contrasts)
        .map(|j| (ok.iter().map(|r| r.errors[j]).sum::<f64>() / ok.len() as f64).abs())
        .sum::<f64>()
        / n_contrasts as f64;
    MetricsRow {
        method,
        n_ok: ok.len(),
        n_failed,
        bias: ok.iter().flat_map(|r| &r.errors).sum::<f64>() / c,
        abs_bias,
        mse: ok.iter().flat_map(|r| &r.errors).map(|e| e * e).sum::<f64>() / c,
        coverage: ok.iter().flat_map(|r| &r.covered).filter(|&&b| b).count() as f64 / c,
        mean_width: ok.iter().flat_map(|r| &r.widths).sum::<f64>() / c,
        mean_seconds: ok.iter().map(|r| r.seconds).sum::<f64>() / ok.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchmarkConfig {
        BenchmarkConfig {
            scenario: ScenarioConfig { rows: 8, cols: 8, n_outcomes: 3, ..Default::default() },
            replications: 2,
            pipeline: PipelineConfig { cross_fit_folds: 2, ..Default::default() },
            spatial_regression_k: 4,
            ..Default::default()
        }
    }

    #[test]
    fn report_shape_and_determinism() {
        let cfg = small();
        let a = run_benchmark(&cfg).unwrap();
        assert_eq!(a.replications.len(), 2 * Method::ALL.len());
        assert_eq!(a.metrics.len(), Method::ALL.len());
        for r in &a.replications {
            assert!(r.failure.is_none(), "{:?}", r.failure);
            assert_eq!(r.errors.len(), 3 * 3);
        }
        let oracle = &a.metrics[0];
        assert_eq!(oracle.method, Method::Oracle);
        assert_eq!((oracle.bias, oracle.mse, oracle.coverage), (0.0, 0.0, 1.0));
        let b = run_benchmark(&cfg).unwrap();
        let strip = |rep: &BenchmarkReport| rep.replications.iter().map(|r| r.errors.clone()).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn failures_are_recorded() {
        let mut cfg = small();
        cfg.methods = vec![Method::SpatialRegression];
        cfg.spatial_regression_k = 500;
        let rep = run_benchmark(&cfg).unwrap();
        assert!(rep.replications.iter().all(|r| r.failure.is_some()));
        assert_eq!(rep.metrics[0].n_failed, 2);
        assert!(rep.metrics[0].mse.is_nan());
    }
}
