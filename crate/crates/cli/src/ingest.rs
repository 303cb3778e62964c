//! Dataset directories: `units.csv`, `covariates.csv`, `outcomes.csv` and an
//! optional `edges.csv`, inner-joined on `unit_id`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use log::{info, warn};
use serde::Serialize;

use sctc::estimator::preprocess_outcomes;
use sctc::propensity::{encode_levels, standardize_columns};
use sctc::spatial::knn_graph;
use sctc::{DMatrix, Dims, ExposureDesign, SpatialGraph, Tensor3, TransformRecord};

use crate::config::DataConfig;
use crate::error::{CliError, Result};
use crate::table::{id_order, KeyedTable};

pub const UNITS: &str = "units.csv";
pub const COVARIATES: &str = "covariates.csv";
pub const OUTCOMES: &str = "outcomes.csv";
pub const EDGES: &str = "edges.csv";

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Units in `unit_id` order.
    pub unit_ids: Vec<String>,
    pub exposure_names: Vec<String>,
    pub covariate_names: Vec<String>,
    pub outcome_names: Vec<String>,
    pub centroids: Vec<[f64; 2]>,
    pub design: ExposureDesign,
    pub z_raw: DMatrix<f64>,
    /// Standardized covariates.
    pub z: DMatrix<f64>,
    /// `(mean, sd)` per covariate column.
    pub covariate_scaling: Vec<(f64, f64)>,
    /// Raw outcomes, `N × O`.
    pub raw_outcomes: DMatrix<f64>,
    /// Transformed, standardized outcomes at each unit's observed level.
    pub y_obs: Tensor3,
    pub transform: TransformRecord,
    pub graph: SpatialGraph,
    /// Whether the graph came from `edges.csv` (else kNN on the centroids).
    pub graph_from_edges: bool,
    /// Ids present in some but not all of the three tables.
    pub dropped: Vec<String>,
}

impl Dataset {
    pub fn dims(&self) -> Dims {
        self.y_obs.dims()
    }

    /// Value on the transformed (unstandardized) outcome scale.
    pub fn to_outcome_scale(&self, v: f64) -> f64 {
        v * self.transform.sd + self.transform.mean
    }

    pub fn report(&self) -> IngestReport {
        let d = self.dims();
        IngestReport {
            n_units: d.units,
            n_levels: d.levels,
            n_outcomes: d.outcomes,
            exposures: self.exposure_names.clone(),
            covariates: self.covariate_names.clone(),
            outcomes: self.outcome_names.clone(),
            covariate_scaling: self.covariate_scaling.clone(),
            outcome_transform: self.transform.clone(),
            graph: if self.graph_from_edges { "edges.csv".into() } else { "knn".into() },
            n_edges: self.graph.edges().len(),
            dropped_units: self.dropped.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub n_units: usize,
    pub n_levels: usize,
    pub n_outcomes: usize,
    pub exposures: Vec<String>,
    pub covariates: Vec<String>,
    pub outcomes: Vec<String>,
    pub covariate_scaling: Vec<(f64, f64)>,
    pub outcome_transform: TransformRecord,
    pub graph: String,
    pub n_edges: usize,
    pub dropped_units: Vec<String>,
}

fn index(table: &KeyedTable) -> HashMap<&str, usize> {
    table.rows.iter().enumerate().map(|(r, row)| (row.id.as_str(), r)).collect()
}

pub fn ingest(dir: &Path, config: &DataConfig) -> Result<Dataset> {
    let units = KeyedTable::read(&dir.join(UNITS))?;
    let covs = KeyedTable::read(&dir.join(COVARIATES))?;
    let outs = KeyedTable::read(&dir.join(OUTCOMES))?;

    let (Some(xc), Some(yc)) = (units.column("x"), units.column("y")) else {
        return Err(CliError::Data(format!("{}: header needs `x` and `y` columns", units.path.display())));
    };
    let exposure_cols: Vec<usize> = (0..units.columns.len()).filter(|&j| j != xc && j != yc).collect();
    if exposure_cols.is_empty() {
        return Err(CliError::Data(format!("{}: no exposure columns", units.path.display())));
    }
    if covs.columns.is_empty() || outs.columns.is_empty() {
        return Err(CliError::Data("covariates.csv and outcomes.csv need at least one value column".into()));
    }

    let (ui, ci, oi) = (index(&units), index(&covs), index(&outs));
    let all: BTreeSet<&str> = ui.keys().chain(ci.keys()).chain(oi.keys()).copied().collect();
    let mut kept: Vec<String> = Vec::new();
    let mut dropped: Vec<String> = Vec::new();
    for id in all {
        if ui.contains_key(id) && ci.contains_key(id) && oi.contains_key(id) {
            kept.push(id.to_string());
        } else {
            dropped.push(id.to_string());
        }
    }
    id_order(&mut kept);
    id_order(&mut dropped);
    if !dropped.is_empty() {
        warn!("{} units missing from at least one table were dropped: {:?}", dropped.len(), dropped);
    }
    let n = kept.len();
    if n < 2 {
        return Err(CliError::Data(format!("only {n} units are present in all three tables")));
    }

    let mut centroids = Vec::with_capacity(n);
    let mut exposures = Vec::with_capacity(n);
    for id in &kept {
        let row = &units.rows[ui[id.as_str()]];
        centroids.push([row.values[xc], row.values[yc]]);
        let mut pattern = Vec::with_capacity(exposure_cols.len());
        for &j in &exposure_cols {
            let v = row.values[j];
            if v != 0.0 && v != 1.0 {
                return Err(CliError::Data(format!(
                    "{} line {}: exposure `{}` is {v}, expected 0 or 1",
                    units.path.display(),
                    row.line,
                    units.columns[j]
                )));
            }
            pattern.push(v as u8);
        }
        exposures.push(pattern);
    }
    let design = encode_levels(&exposures)?;
    let z_raw = DMatrix::from_fn(n, covs.columns.len(), |i, j| covs.rows[ci[kept[i].as_str()]].values[j]);
    let raw_outcomes = DMatrix::from_fn(n, outs.columns.len(), |i, j| outs.rows[oi[kept[i].as_str()]].values[j]);
    let (z, covariate_scaling) = standardize_columns(&z_raw);
    let (y, transform) = preprocess_outcomes(&raw_outcomes, config.transform, config.shift)?;
    let dims = Dims::new(n, design.n_levels(), outs.columns.len());
    let y_obs = Tensor3::from_fn(dims, |i, l, o| if design.level(i) == l + 1 { y[(i, o)] } else { 0.0 })?;

    let edges_path = dir.join(EDGES);
    let (graph, graph_from_edges) = if edges_path.exists() {
        (read_edges(&edges_path, &kept, &dropped, &centroids)?, true)
    } else {
        info!("no {EDGES}; building a {}-nearest-neighbour graph", config.knn);
        (knn_graph(&centroids, config.knn)?, false)
    };

    Ok(Dataset {
        unit_ids: kept,
        exposure_names: exposure_cols.iter().map(|&j| units.columns[j].clone()).collect(),
        covariate_names: covs.columns.clone(),
        outcome_names: outs.columns.clone(),
        centroids,
        design,
        z_raw,
        z,
        covariate_scaling,
        raw_outcomes,
        y_obs,
        transform,
        graph,
        graph_from_edges,
        dropped,
    })
}

/// `from,to` pairs of unit ids. Edges touching dropped units are skipped.
fn read_edges(path: &Path, kept: &[String], dropped: &[String], centroids: &[[f64; 2]]) -> Result<SpatialGraph> {
    let pos: HashMap<&str, usize> = kept.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| CliError::csv(path, e))?.clone();
    let (Some(fc), Some(tc)) = (headers.iter().position(|h| h == "from"), headers.iter().position(|h| h == "to"))
    else {
        return Err(CliError::Data(format!("{}: header needs `from` and `to` columns", path.display())));
    };
    let mut edges = Vec::new();
    let mut skipped = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut ends = [0usize; 2];
        let mut skip = false;
        for (slot, col) in [fc, tc].into_iter().enumerate() {
            let id = &rec[col];
            match pos.get(id) {
                Some(&i) => ends[slot] = i,
                None if dropped.iter().any(|d| d == id) => skip = true,
                None => {
                    return Err(CliError::Data(format!("{} line {line}: unknown unit_id `{id}`", path.display())));
                }
            }
        }
        if skip {
            skipped += 1;
        } else if ends[0] != ends[1] {
            edges.push((ends[0], ends[1]));
        }
    }
    if skipped > 0 {
        warn!("{skipped} edges touching dropped units were ignored");
    }
    Ok(SpatialGraph::from_edges(kept.len(), edges, Some(centroids.to_vec()))?)
}
