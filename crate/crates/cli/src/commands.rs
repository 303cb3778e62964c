//! Subcommand implementations. Each writes its outputs plus the resolved
//! config into the output directory.

use std::path::Path;

use log::info;
use serde::Serialize;

use sctc::estimator::{run_pipeline_with_basis, Diagnostics};
use sctc::simgen::benchmark::{run_benchmark, BenchmarkConfig, BenchmarkReport};
use sctc::simgen::generate;
use sctc::spatial::graph_basis;
use sctc::spgd::FitReport;
use sctc::{PipelineConfig, PipelineResult, PropensityModel, Ranks, SpatialTuckerModel, SpectralBasis, TransformRecord};

use crate::config::RunConfig;
use crate::emit::{write_dataset, write_effects_csv, write_overlap_csv, EffectRow};
use crate::error::{CliError, Result};
use crate::ingest::{ingest, Dataset};
use crate::table::{num, write_json, CsvOut, UNIT_ID};

pub const MODEL: &str = "model.json";
pub const FIT_REPORT: &str = "fit_report.json";
pub const COMPLETED: &str = "completed.csv";
pub const PROPENSITIES: &str = "propensities.csv";
pub const EFFECTS_CSV: &str = "effects.csv";
pub const EFFECTS_JSON: &str = "effects.json";
pub const MARGINAL_CSV: &str = "marginal_effects.csv";
pub const OVERLAP_CSV: &str = "overlap.csv";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const REPLICATIONS_CSV: &str = "replications.csv";
pub const BENCHMARK_JSON: &str = "benchmark.json";
pub const EFFECT_VS_K: &str = "effect_vs_k.csv";
pub const EFFECT_VS_K_SUMMARY: &str = "effect_vs_k_summary.csv";

fn prepare(out: &Path, config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    config.echo(out)
}

fn load(config: &RunConfig, out: &Path) -> Result<Dataset> {
    let data = ingest(config.data_dir()?, &config.data)?;
    write_json(out.join(INGEST_REPORT), &data.report(), "ingest report")?;
    Ok(data)
}

fn basis_for(data: &Dataset, pipeline: &PipelineConfig) -> Result<Option<SpectralBasis>> {
    Ok(if pipeline.spatial { Some(graph_basis(&data.graph)?) } else { None })
}

fn run(data: &Dataset, basis: Option<&SpectralBasis>, pipeline: &PipelineConfig) -> Result<PipelineResult> {
    info!("pipeline on {:?}", data.dims());
    Ok(run_pipeline_with_basis(&data.y_obs, &data.design, &data.z, basis, pipeline)?)
}

pub fn cmd_simulate(config: &RunConfig, out: &Path) -> Result<()> {
    let data = generate(&config.scenario)?;
    write_dataset(out, &data)?;
    config.echo(out)
}

#[derive(Serialize)]
struct ModelArtifact<'a> {
    unit_ids: &'a [String],
    exposures: &'a [String],
    covariates: &'a [String],
    outcomes: &'a [String],
    covariate_scaling: &'a [(f64, f64)],
    outcome_transform: &'a TransformRecord,
    ranks: Ranks,
    step1: &'a SpatialTuckerModel,
    step3: &'a SpatialTuckerModel,
    propensity: &'a PropensityModel,
    final_propensity: &'a PropensityModel,
}

#[derive(Serialize)]
struct StepSummary<'a> {
    selected_eigs: &'a [usize],
    report: &'a FitReport,
}

#[derive(Serialize)]
struct FitReportArtifact<'a> {
    step1: StepSummary<'a>,
    step3: StepSummary<'a>,
    propensity_converged: bool,
    propensity_iterations: usize,
    diagnostics: &'a Diagnostics,
}

/// Fit the three-step model; writes the model, a fit report, the completed
/// tensor and the propensities used for effect estimation.
pub fn cmd_fit(config: &RunConfig, out: &Path) -> Result<PipelineResult> {
    prepare(out, config)?;
    let data = load(config, out)?;
    let basis = basis_for(&data, &config.pipeline)?;
    let res = run(&data, basis.as_ref(), &config.pipeline)?;

    write_json(
        out.join(MODEL),
        &ModelArtifact {
            unit_ids: &data.unit_ids,
            exposures: &data.exposure_names,
            covariates: &data.covariate_names,
            outcomes: &data.outcome_names,
            covariate_scaling: &data.covariate_scaling,
            outcome_transform: &data.transform,
            ranks: res.diagnostics.ranks,
            step1: &res.step1,
            step3: &res.step3,
            propensity: &res.propensity,
            final_propensity: &res.final_propensity,
        },
        "model",
    )?;
    write_json(
        out.join(FIT_REPORT),
        &FitReportArtifact {
            step1: StepSummary { selected_eigs: &res.step1.selected_eigs, report: &res.step1.report },
            step3: StepSummary { selected_eigs: &res.step3.selected_eigs, report: &res.step3.report },
            propensity_converged: res.final_propensity.converged,
            propensity_iterations: res.final_propensity.iterations,
            diagnostics: &res.diagnostics,
        },
        "fit report",
    )?;

    let d = data.dims();
    let design = &data.design;
    let mut w = CsvOut::create(out.join(COMPLETED), &[UNIT_ID, "exposure_pattern", "outcome", "value", "observed"])?;
    for i in 0..d.units {
        for l in 0..d.levels {
            for (o, name) in data.outcome_names.iter().enumerate() {
                w.row([
                    data.unit_ids[i].clone(),
                    design.pattern_label(l + 1),
                    name.clone(),
                    num(data.to_outcome_scale(res.completed.get(i, l, o))),
                    (design.level(i) == l + 1).to_string(),
                ])?;
            }
        }
    }
    w.finish()?;

    let mut header = vec![UNIT_ID.to_string(), "exposure_pattern".into()];
    header.extend((1..=d.levels).map(|l| format!("p_{}", design.pattern_label(l))));
    let mut w = CsvOut::create(out.join(PROPENSITIES), &header.iter().map(String::as_str).collect::<Vec<_>>())?;
    for i in 0..d.units {
        let mut f = vec![data.unit_ids[i].clone(), design.pattern_label(design.level(i))];
        f.extend((0..d.levels).map(|l| num(res.probs[(i, l)])));
        w.row(f)?;
    }
    w.finish()?;
    Ok(res)
}

#[derive(Debug, Clone, Serialize)]
pub struct EffectReport {
    pub reference_pattern: String,
    pub alpha: f64,
    pub outcome_transform: TransformRecord,
    /// What the `ratio` columns mean under the chosen transform.
    pub ratio_kind: String,
    pub effects: Vec<EffectRow>,
    pub marginal: Vec<EffectRow>,
    pub diagnostics: Diagnostics,
}

/// Run the pipeline and write the factorial and marginal effect tables and
/// the overlap diagnostics.
pub fn cmd_estimate(config: &RunConfig, out: &Path) -> Result<EffectReport> {
    prepare(out, config)?;
    let data = load(config, out)?;
    let basis = basis_for(&data, &config.pipeline)?;
    let res = run(&data, basis.as_ref(), &config.pipeline)?;
    let rows = |v: &[sctc::EffectEstimate]| -> Vec<EffectRow> {
        v.iter().map(|e| EffectRow::new(e, &data.outcome_names, &data.transform)).collect()
    };
    let report = EffectReport {
        reference_pattern: data.design.pattern_label(config.pipeline.reference_level),
        alpha: config.pipeline.alpha,
        outcome_transform: data.transform.clone(),
        ratio_kind: data.transform.ratio_label().to_string(),
        effects: rows(&res.effects),
        marginal: rows(&res.marginal),
        diagnostics: res.diagnostics,
    };
    write_effects_csv(&out.join(EFFECTS_CSV), &report.effects)?;
    write_effects_csv(&out.join(MARGINAL_CSV), &report.marginal)?;
    write_overlap_csv(&out.join(OVERLAP_CSV), &report.diagnostics.overlap)?;
    write_json(out.join(EFFECTS_JSON), &report, "effects")?;
    Ok(report)
}

pub fn benchmark_config(config: &RunConfig) -> BenchmarkConfig {
    BenchmarkConfig {
        scenario: config.scenario.clone(),
        replications: config.benchmark.replications,
        methods: config.benchmark.methods.clone(),
        pipeline: config.pipeline.clone(),
        spatial_regression_k: config.benchmark.spatial_regression_k,
    }
}

/// Monte-Carlo comparison of the configured methods on the configured scenario.
pub fn cmd_benchmark(config: &RunConfig, out: &Path) -> Result<BenchmarkReport> {
    prepare(out, config)?;
    let report = run_benchmark(&benchmark_config(config))?;

    let mut w = CsvOut::create(
        out.join(METRICS_CSV),
        &["method", "n_ok", "n_failed", "bias", "abs_bias", "mse", "coverage", "mean_width"],
    )?;
    for m in &report.metrics {
        info!("{}: {:.3} s per replication", m.method.name(), m.mean_seconds);
        w.row([
            m.method.name().to_string(),
            m.n_ok.to_string(),
            m.n_failed.to_string(),
            num(m.bias),
            num(m.abs_bias),
            num(m.mse),
            num(m.coverage),
            num(m.mean_width),
        ])?;
    }
    w.finish()?;

    let mut w = CsvOut::create(
        out.join(REPLICATIONS_CSV),
        &["replication", "seed", "method", "contrast", "error", "covered", "width", "failure"],
    )?;
    for r in &report.replications {
        let head = [r.replication.to_string(), r.seed.to_string(), r.method.name().to_string()];
        match &r.failure {
            Some(msg) => {
                let mut f = head.to_vec();
                f.extend([String::new(), String::new(), String::new(), String::new(), msg.clone()]);
                w.row(f)?;
            }
            None => {
                for (j, ((e, c), wd)) in r.errors.iter().zip(&r.covered).zip(&r.widths).enumerate() {
                    let mut f = head.to_vec();
                    f.extend([j.to_string(), num(*e), c.to_string(), num(*wd), String::new()]);
                    w.row(f)?;
                }
            }
        }
    }
    w.finish()?;
    write_json(out.join(BENCHMARK_JSON), &report, "benchmark")?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub k: usize,
    pub mean_abs_theta_oi: f64,
    pub mean_abs_theta_aipw: f64,
}

/// Re-estimate with the first `k` eigenvectors for each `k` in the grid.
/// Writes per-contrast curves and their mean absolute effect per `k`.
pub fn cmd_diagnose(config: &RunConfig, out: &Path) -> Result<Vec<SweepSummary>> {
    prepare(out, config)?;
    let data = load(config, out)?;
    let grid = &config.diagnose.k_grid;
    if grid.is_empty() {
        return Err(CliError::Data("diagnose.k_grid is empty".into()));
    }
    let basis = graph_basis(&data.graph)?;
    let mut curves = CsvOut::create(
        out.join(EFFECT_VS_K),
        &["k", "exposure_pattern", "outcome", "theta_oi", "theta_aipw", "ci_low", "ci_high"],
    )?;
    let mut summary = Vec::with_capacity(grid.len());
    for &k in grid {
        let pipeline = PipelineConfig { spatial: true, fixed_k: Some(k), ..config.pipeline.clone() };
        let res = run(&data, Some(&basis), &pipeline)?;
        let rows: Vec<EffectRow> =
            res.effects.iter().map(|e| EffectRow::new(e, &data.outcome_names, &data.transform)).collect();
        for r in &rows {
            curves.row([
                k.to_string(),
                r.exposure_pattern.clone(),
                r.outcome.clone(),
                num(r.theta_oi),
                num(r.theta_aipw),
                num(r.ci_low),
                num(r.ci_high),
            ])?;
        }
        let n = rows.len() as f64;
        summary.push(SweepSummary {
            k,
            mean_abs_theta_oi: rows.iter().map(|r| r.theta_oi.abs()).sum::<f64>() / n,
            mean_abs_theta_aipw: rows.iter().map(|r| r.theta_aipw.abs()).sum::<f64>() / n,
        });
    }
    curves.finish()?;
    let mut w = CsvOut::create(out.join(EFFECT_VS_K_SUMMARY), &["k", "mean_abs_theta_oi", "mean_abs_theta_aipw"])?;
    for s in &summary {
        w.row([s.k.to_string(), num(s.mean_abs_theta_oi), num(s.mean_abs_theta_aipw)])?;
    }
    w.finish()?;
    Ok(summary)
}
