//! Run configuration file (TOML).

use std::path::{Path, PathBuf};

use iternas::cost_model::{CostProfile, HardwareProfile};
use iternas::predictor::PredictorPolicy;
use iternas::search_space::SearchSpace;
use iternas::{OracleSpec, Problem, SearchConfig};
use serde::{Deserialize, Serialize};

use crate::exit::{CliError, CONFIG, IO};

pub const OUTPUT_DIR_ENV: &str = "ITERNAS_OUTPUT_DIR";

/// Either a preset name such as `"max78002"` or an explicit profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HardwareSpec {
    Preset(String),
    Profile(HardwareProfile),
}

impl Default for HardwareSpec {
    fn default() -> Self {
        HardwareSpec::Preset("max78002".into())
    }
}

impl HardwareSpec {
    pub fn resolve(&self) -> Result<HardwareProfile, CliError> {
        match self {
            HardwareSpec::Preset(name) => HardwareProfile::preset(name)
                .ok_or_else(|| CliError::new(CONFIG, format!("unknown hardware preset `{name}`"))),
            HardwareSpec::Profile(p) => Ok(p.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub space: SearchSpace,
    #[serde(default)]
    pub hardware: HardwareSpec,
    #[serde(default = "CostProfile::unbounded")]
    pub budgets: CostProfile,
    #[serde(default)]
    pub search: SearchConfig,
    pub oracle: OracleSpec,
    #[serde(default)]
    pub predictor_policy: PredictorPolicy,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("iternas-run")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::new(CONFIG, format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new(IO, format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            config.output_dir = PathBuf::from(dir);
        }
        Ok(config)
    }

    /// Checks every section and builds the problem definition.
    pub fn problem(&self) -> Result<Problem, CliError> {
        let hardware = self.hardware.resolve()?;
        self.search.validate()?;
        self.oracle.validate()?;
        self.predictor_policy.validate()?;
        Ok(Problem::new(self.space.clone(), hardware, self.budgets.clone())?)
    }
}
