use std::fs;
use std::path::Path;

use agmn_core::bp::BeliefResult;
use agmn_core::GridIndex;
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Contents of `predictions.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    /// `"bp"` or `"unary-only"`.
    pub mode: String,
    pub samples: Vec<SamplePrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub id: String,
    /// Marginals file, relative to the predictions file.
    pub marginals: String,
    /// Argmax cell per keypoint as `[row, col]`.
    pub cells: Vec<[usize; 2]>,
    /// Marginal probability at each argmax cell.
    pub max_marginals: Vec<f64>,
}

impl SamplePrediction {
    pub fn new(id: String, marginals: String, result: &BeliefResult) -> Self {
        Self {
            id,
            marginals,
            cells: result.predictions.iter().map(|p| [p.row, p.col]).collect(),
            max_marginals: result.max_marginals.clone(),
        }
    }

    pub fn grid_cells(&self) -> Vec<GridIndex> {
        self.cells.iter().map(|&[r, c]| GridIndex::new(r, c)).collect()
    }
}

impl PredictionFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
