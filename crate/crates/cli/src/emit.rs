//! Output tables. Effects are reported on the transformed outcome scale
//! (the pipeline works on standardized values internally).

use std::path::Path;

use serde::Serialize;

use sctc::estimator::effect_to_ratio;
use sctc::propensity::OverlapRow;
use sctc::stats::normal_quantile;
use sctc::{EffectEstimate, SyntheticDataset, TransformRecord};

use crate::error::{CliError, Result};
use crate::ingest::{COVARIATES, EDGES, OUTCOMES, UNITS};
use crate::table::{num, CsvOut, UNIT_ID};

pub const EFFECT_COLUMNS: [&str; 11] = [
    "exposure_pattern",
    "outcome",
    "theta_oi",
    "theta_aipw",
    "variance",
    "ci_low",
    "ci_high",
    "ratio",
    "ratio_ci_low",
    "ratio_ci_high",
    "significant_at_05",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectRow {
    /// Exposure bit pattern `A_1…A_K` of a factorial level, or `a_k` for a
    /// marginal effect.
    pub exposure_pattern: String,
    pub outcome: String,
    pub theta_oi: f64,
    pub theta_aipw: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ratio: f64,
    pub ratio_ci_low: f64,
    pub ratio_ci_high: f64,
    pub significant_at_05: bool,
}

impl EffectRow {
    pub fn new(e: &EffectEstimate, outcome_names: &[String], rec: &TransformRecord) -> Self {
        let s = rec.sd;
        let z = normal_quantile(0.975);
        let se = e.std_error();
        let significant = if se > 0.0 { (e.theta_aipw / se).abs() > z } else { e.theta_aipw != 0.0 };
        EffectRow {
            exposure_pattern: e.label.clone(),
            outcome: outcome_names.get(e.outcome).cloned().unwrap_or_else(|| e.outcome.to_string()),
            theta_oi: e.theta_oi * s,
            theta_aipw: e.theta_aipw * s,
            variance: e.variance * s * s,
            ci_low: e.ci_low * s,
            ci_high: e.ci_high * s,
            ratio: effect_to_ratio(e.theta_aipw, rec),
            ratio_ci_low: effect_to_ratio(e.ci_low, rec),
            ratio_ci_high: effect_to_ratio(e.ci_high, rec),
            significant_at_05: significant,
        }
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.exposure_pattern.clone(),
            self.outcome.clone(),
            num(self.theta_oi),
            num(self.theta_aipw),
            num(self.variance),
            num(self.ci_low),
            num(self.ci_high),
            num(self.ratio),
            num(self.ratio_ci_low),
            num(self.ratio_ci_high),
            self.significant_at_05.to_string(),
        ]
    }
}

pub fn write_effects_csv(path: &Path, rows: &[EffectRow]) -> Result<()> {
    let mut out = CsvOut::create(path.to_path_buf(), &EFFECT_COLUMNS)?;
    for r in rows {
        out.row(r.fields())?;
    }
    out.finish()
}

pub fn write_overlap_csv(path: &Path, rows: &[OverlapRow]) -> Result<()> {
    let thresholds = rows.first().map(|r| r.thresholds.clone()).unwrap_or_default();
    let mut header: Vec<String> =
        ["level", "exposure_pattern", "n_at_level", "min_own_propensity", "median_own_propensity"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    header.extend(thresholds.iter().map(|t| format!("fraction_below_{}", num(*t))));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = CsvOut::create(path.to_path_buf(), &header)?;
    for r in rows {
        let mut f = vec![r.level.to_string(), r.pattern.clone(), r.n_at_level.to_string(), num(r.min), num(r.median)];
        f.extend(r.fraction_below.iter().map(|&v| num(v)));
        out.row(f)?;
    }
    out.finish()
}

pub const TRUE_EFFECTS: &str = "true_effects.csv";
pub const POTENTIAL_OUTCOMES: &str = "potential_outcomes.csv";
pub const CONFOUNDER: &str = "confounder.csv";
pub const TRUE_PROPENSITIES: &str = "true_propensities.csv";
pub const SCENARIO: &str = "scenario.toml";

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("{prefix}_{j}")).collect()
}

/// Write a synthetic dataset in the ingestion layout plus its ground truth.
/// Unit ids are `0..N`; outcome and covariate columns are `y_j` / `z_j`.
pub fn write_dataset(dir: &Path, data: &SyntheticDataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let d = data.dims();
    let k = data.design.n_exposures();
    let design = &data.design;

    let mut header = vec![UNIT_ID.to_string(), "x".into(), "y".into()];
    header.extend(names("a", k));
    let mut out = CsvOut::create(dir.join(UNITS), &header.iter().map(String::as_str).collect::<Vec<_>>())?;
    for i in 0..d.units {
        let mut f = vec![i.to_string(), num(data.centroids[i][0]), num(data.centroids[i][1])];
        f.extend(design.pattern(design.level(i)).iter().map(|b| b.to_string()));
        out.row(f)?;
    }
    out.finish()?;

    let p = data.z.ncols();
    let mut header = vec![UNIT_ID.to_string()];
    header.extend(names("z", p));
    let mut out = CsvOut::create(dir.join(COVARIATES), &header.iter().map(String::as_str).collect::<Vec<_>>())?;
    for i in 0..d.units {
        let mut f = vec![i.to_string()];
        f.extend((0..p).map(|j| num(data.z[(i, j)])));
        out.row(f)?;
    }
    out.finish()?;

    let mut header = vec![UNIT_ID.to_string()];
    header.extend(names("y", d.outcomes));
    let mut out = CsvOut::create(dir.join(OUTCOMES), &header.iter().map(String::as_str).collect::<Vec<_>>())?;
    for i in 0..d.units {
        let l = design.level(i) - 1;
        let mut f = vec![i.to_string()];
        f.extend((0..d.outcomes).map(|o| num(data.y_obs.get(i, l, o))));
        out.row(f)?;
    }
    out.finish()?;

    let mut out = CsvOut::create(dir.join(EDGES), &["from", "to"])?;
    for &(a, b) in data.graph.edges() {
        out.row([a.to_string(), b.to_string()])?;
    }
    out.finish()?;

    let outcome_names = names("y", d.outcomes);
    let mut out = CsvOut::create(dir.join(TRUE_EFFECTS), &["exposure_pattern", "outcome", "theta"])?;
    for (o, name) in outcome_names.iter().enumerate() {
        for level in 2..=d.levels {
            out.row([design.pattern_label(level), name.clone(), num(data.true_effects[(level - 1, o)])])?;
        }
    }
    out.finish()?;

    let mut out = CsvOut::create(dir.join(POTENTIAL_OUTCOMES), &[UNIT_ID, "exposure_pattern", "outcome", "value"])?;
    for i in 0..d.units {
        for l in 0..d.levels {
            for (o, name) in outcome_names.iter().enumerate() {
                out.row([i.to_string(), design.pattern_label(l + 1), name.clone(), num(data.y_true.get(i, l, o))])?;
            }
        }
    }
    out.finish()?;

    let mut out = CsvOut::create(dir.join(CONFOUNDER), &[UNIT_ID, "s"])?;
    for i in 0..d.units {
        out.row([i.to_string(), num(data.confounder[i])])?;
    }
    out.finish()?;

    let mut header = vec![UNIT_ID.to_string()];
    header.extend((1..=d.levels).map(|l| format!("p_{}", design.pattern_label(l))));
    let mut out =
        CsvOut::create(dir.join(TRUE_PROPENSITIES), &header.iter().map(String::as_str).collect::<Vec<_>>())?;
    for i in 0..d.units {
        let mut f = vec![i.to_string()];
        f.extend((0..d.levels).map(|l| num(data.propensities[(i, l)])));
        out.row(f)?;
    }
    out.finish()?;

    let scenario = toml::to_string(&data.config)
        .map_err(|e| CliError::Serialize { what: "scenario", message: e.to_string() })?;
    let path = dir.join(SCENARIO);
    std::fs::write(&path, scenario).map_err(|e| CliError::io(path, e))
}
