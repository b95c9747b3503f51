//! Study configuration files (JSON).
//!
//! ```json
//! {
//!   "study": "normal_mean",
//!   "design": [{"name": "n", "levels": [10, 50]}],
//!   "policy": {"repetitions": 1000, "base_seed": 42},
//!   "out": "records.csv"
//! }
//! ```
//!
//! `design` is optional; each demo has a default grid.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use simmiss_core::{Factor, StudyDesign};

use crate::demos::Demo;
use crate::policy::ExecutionPolicy;
use crate::RunError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub study: String,
    #[serde(default)]
    pub design: Option<Vec<Factor>>,
    pub policy: ExecutionPolicy,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let c: StudyConfig = serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        c.policy.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn demo(&self) -> Result<Demo, RunError> {
        self.study.parse()
    }

    /// The configured grid with truths attached, or the demo's default.
    pub fn design(&self) -> Result<StudyDesign, RunError> {
        let demo = self.demo()?;
        match &self.design {
            Some(factors) => demo.design(factors.clone()),
            None => demo.default_design(),
        }
    }
}
