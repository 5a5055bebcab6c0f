//! PCK evaluation and the Frobenius-norm training losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, GridIndex, TensorStack};
use crate::potentials::KeypointSet;

/// Thresholds 0.01, 0.02, ..., 0.10.
pub fn default_sigmas() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckCurve {
    pub sigmas: Vec<f64>,
    /// Fraction of keypoints within `sigma * norm_len`, pooled over samples.
    pub pck: Vec<f64>,
    /// `per_keypoint[k][s]`: fraction of samples whose keypoint `k` is
    /// correct at `sigmas[s]`.
    pub per_keypoint: Vec<Vec<f64>>,
}

impl PckCurve {
    /// PCK at `sigma`, if it is one of the evaluated thresholds.
    pub fn at(&self, sigma: f64) -> Option<f64> {
        self.sigmas
            .iter()
            .position(|&s| (s - sigma).abs() < 1e-12)
            .map(|i| self.pck[i])
    }

    /// Table with one row of percentages, thresholds as columns.
    pub fn to_csv(&self, label: &str) -> String {
        let mut out = String::from("threshold");
        for s in &self.sigmas {
            out.push_str(&format!(",{s:.2}"));
        }
        out.push('\n');
        out.push_str(label);
        for v in &self.pck {
            out.push_str(&format!(",{:.2}", v * 100.0));
        }
        out.push('\n');
        out
    }
}

/// Grid cell as a keypoint position: `x = col`, `y = row`.
pub fn cell_to_point(cell: GridIndex) -> [f64; 2] {
    [cell.col as f64, cell.row as f64]
}

pub fn cells_to_keypoints(cells: &[GridIndex]) -> KeypointSet {
    KeypointSet {
        points: cells.iter().copied().map(cell_to_point).collect(),
        visible: None,
        bbox_side: None,
    }
}

/// A keypoint is correct at `sigma` when its Euclidean error divided by the
/// sample's `norm_len` is at most `sigma`.
pub fn pck(preds: &[KeypointSet], gts: &[KeypointSet], norm_len: &[f64], sigmas: &[f64]) -> Result<PckCurve> {
    if preds.len() != gts.len() || preds.len() != norm_len.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions, {} ground truths, {} normalization lengths",
            preds.len(),
            gts.len(),
            norm_len.len()
        )));
    }
    let mut sorted = sigmas.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted != sigmas || sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::InvalidArgument("sigmas must be ascending, finite and nonnegative".into()));
    }
    let keypoints = gts.first().map_or(0, KeypointSet::len);
    let mut correct = vec![vec![0u64; sigmas.len()]; keypoints];
    let mut total = 0u64;
    for (s, ((p, g), &len)) in preds.iter().zip(gts).zip(norm_len).enumerate() {
        if !(len > 0.0 && len.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample {s}: norm_len must be positive, got {len}")));
        }
        if p.len() != g.len() || g.len() != keypoints {
            return Err(Error::InvalidArgument(format!(
                "sample {s}: {} predicted vs {} ground-truth keypoints (expected {keypoints})",
                p.len(),
                g.len()
            )));
        }
        for (k, (a, b)) in p.points.iter().zip(&g.points).enumerate() {
            let err = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() / len;
            for (i, &sigma) in sigmas.iter().enumerate() {
                if err <= sigma {
                    correct[k][i] += 1;
                }
            }
        }
        total += keypoints as u64;
    }
    let samples = preds.len() as f64;
    let pooled = (0..sigmas.len())
        .map(|i| {
            if total == 0 {
                0.0
            } else {
                correct.iter().map(|c| c[i]).sum::<u64>() as f64 / total as f64
            }
        })
        .collect();
    let per_keypoint = correct
        .iter()
        .map(|c| c.iter().map(|&n| if samples > 0.0 { n as f64 / samples } else { 0.0 }).collect())
        .collect();
    Ok(PckCurve {
        sigmas: sigmas.to_vec(),
        pck: pooled,
        per_keypoint,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// Multiplier on the stage losses.
    pub scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 0.1,
            alpha3: 0.1,
            scale: 1.0,
        }
    }
}

/// Squared Frobenius distance `sum (a - b)^2`.
pub fn frobenius_sq(a: &Grid2D, b: &Grid2D) -> Result<f64> {
    a.ensure_same_shape(b)?;
    Ok(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn stack_distance(a: &TensorStack, b: &TensorStack) -> Result<f64> {
    a.ensure_same_shape(b)?;
    a.iter().zip(b.iter()).map(|(x, y)| frobenius_sq(x, y)).sum()
}

fn staged_loss(stages: &[TensorStack], targets: &TensorStack, scale: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in stages {
        total += stack_distance(s, targets)?;
    }
    Ok(total * scale)
}

/// Sum over stages and keypoint channels of the squared distance to the
/// Gaussian targets.
pub fn unary_loss(stages: &[TensorStack], targets: &TensorStack, weights: &LossWeights) -> Result<f64> {
    staged_loss(stages, targets, weights.scale)
}

/// As [`unary_loss`], over the directed kernel channels.
pub fn pairwise_loss(stages: &[TensorStack], targets: &TensorStack, weights: &LossWeights) -> Result<f64> {
    staged_loss(stages, targets, weights.scale)
}

/// Squared distance between output marginals and normalized targets. Both
/// must have unit-mass channels.
pub fn final_loss(marginals: &TensorStack, normalized_targets: &TensorStack) -> Result<f64> {
    for (what, stack) in [("marginals", marginals), ("targets", normalized_targets)] {
        for (c, p) in stack.iter().enumerate() {
            let s = p.sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Contract(format!("{what} channel {c} sums to {s}, not 1")));
            }
        }
    }
    stack_distance(marginals, normalized_targets)
}

pub fn total_loss(unary: f64, pairwise: f64, last: f64, w: &LossWeights) -> f64 {
    w.alpha1 * unary + (w.alpha2 * pairwise + w.alpha3 * last)
}
