//! Run configuration: one TOML file with a table per component.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sctc::estimator::Transform;
use sctc::simgen::benchmark::Method;
use sctc::{PipelineConfig, ScenarioConfig};

use crate::error::{CliError, Result};

/// File name of the resolved-config echo written into every output directory.
pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory; `--data` overrides it.
    pub dir: Option<PathBuf>,
    pub transform: Transform,
    /// Added to raw outcomes before the transform.
    pub shift: f64,
    /// Neighbours per unit when no `edges.csv` is supplied.
    pub knn: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { dir: None, transform: Transform::None, shift: 0.0, knn: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub replications: usize,
    pub methods: Vec<Method>,
    pub spatial_regression_k: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection { replications: 200, methods: Method::ALL.to_vec(), spatial_regression_k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// Numbers of leading non-constant eigenvectors to sweep.
    pub k_grid: Vec<usize>,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig { k_grid: vec![0, 5, 10, 20] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub pipeline: PipelineConfig,
    pub scenario: ScenarioConfig,
    pub benchmark: BenchmarkSection,
    pub diagnose: DiagnoseConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| CliError::Config { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Serialize { what: "config", message: e.to_string() })
    }

    /// Write the resolved config into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join(CONFIG_ECHO);
        std::fs::write(&path, self.to_toml()?).map_err(|e| CliError::io(path, e))
    }

    /// One seed drives both the generator and the pipeline.
    pub fn set_seed(&mut self, seed: u64) {
        self.pipeline.seed = seed;
        self.scenario.seed = seed;
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.data
            .dir
            .as_deref()
            .ok_or_else(|| CliError::Data("no dataset directory: pass --data or set data.dir".into()))
    }
}
