//! Deterministic synthetic hand poses and the score maps a trained unary
//! branch might produce for them, with occlusion simulated by removing true
//! peaks and planting distractors. Kernels are the exact displacement
//! targets, i.e. the pairwise branch at its ideal output.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_schedule, default_hand_tree, Schedule, HAND_KEYPOINTS};
use crate::grid::{Grid2D, TensorStack};
use crate::potentials::{gaussian_map, make_kernel_targets, KeypointSet};
use crate::tensor_io::{write_tensor, Dtype};

pub const GRID_SIDE: usize = 46;
pub const KERNEL_SIDE: usize = 45;
pub const KERNEL_SIGMA: f64 = 1.0;

const BONE_MIN: f64 = 4.0;
const BONE_MAX: f64 = 8.0;
const MAX_BEND: f64 = 35.0 * PI / 180.0;
/// Finger base directions relative to the hand orientation, thumb first.
const FINGER_SPREAD: [f64; 5] = [-1.0, -0.45, 0.0, 0.4, 0.8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub occluded_fraction: f64,
    pub distractor_peaks: usize,
    pub noise_amplitude: f64,
    pub peak_sigma: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            occluded_fraction: 0.0,
            distractor_peaks: 0,
            noise_amplitude: 0.0,
            peak_sigma: 1.0,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.occluded_fraction) {
            return Err(Error::InvalidArgument(format!(
                "occluded_fraction must be in [0, 1], got {}",
                self.occluded_fraction
            )));
        }
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_amplitude must be >= 0, got {}",
                self.noise_amplitude
            )));
        }
        if !(self.peak_sigma > 0.0 && self.peak_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "peak_sigma must be > 0, got {}",
                self.peak_sigma
            )));
        }
        Ok(())
    }

    /// Number of keypoints whose true peak is removed, `ceil(fraction * n)`.
    pub fn occluded_count(&self, keypoints: usize) -> usize {
        // the epsilon keeps e.g. 0.2 * 21 = 4.2000000000000002 from
        // rounding differently than exact arithmetic would
        let raw = self.occluded_fraction * keypoints as f64;
        ((raw - 1e-9).ceil().max(0.0) as usize).min(keypoints)
    }
}

/// SplitMix64 finalizer over `(base, index)`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Forward kinematics on the hand tree. Joints are clamped into the grid and
/// snapped to integer cells.
pub fn sample_pose(seed: u64) -> KeypointSet {
    let raw = sample_pose_unclamped(seed);
    let hi = (GRID_SIDE - 1) as f64;
    let points = raw
        .iter()
        .map(|p| [p[0].clamp(0.0, hi).round(), p[1].clamp(0.0, hi).round()])
        .collect();
    KeypointSet {
        points,
        visible: None,
        bbox_side: Some(GRID_SIDE as f64),
    }
}

/// Joint positions before clamping and snapping.
pub fn sample_pose_unclamped(seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = GRID_SIDE as f64;
    let wrist = [
        rng.gen_range(side / 3.0..2.0 * side / 3.0),
        rng.gen_range(side / 3.0..2.0 * side / 3.0),
    ];
    let heading = rng.gen_range(0.0..2.0 * PI);
    let mut points = vec![wrist];
    for spread in FINGER_SPREAD {
        let mut dir = heading + spread + rng.gen_range(-0.1..0.1);
        let mut at = wrist;
        for bone in 0..4 {
            if bone > 0 {
                dir += rng.gen_range(-MAX_BEND..=MAX_BEND);
            }
            let len = rng.gen_range(BONE_MIN..=BONE_MAX);
            at = [at[0] + len * dir.cos(), at[1] + len * dir.sin()];
            points.push(at);
        }
    }
    debug_assert_eq!(points.len(), HAND_KEYPOINTS);
    points
}

/// Simulated unary branch output for one image.
pub fn render_unary(gt: &KeypointSet, cfg: &CorruptionConfig) -> Result<TensorStack> {
    Ok(render_unary_detailed(gt, cfg)?.0)
}

/// Like [`render_unary`], also returning the indices of occluded keypoints.
pub fn render_unary_detailed(gt: &KeypointSet, cfg: &CorruptionConfig) -> Result<(TensorStack, Vec<usize>)> {
    cfg.validate()?;
    gt.validate()?;
    let n = gt.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut occluded = sample_indices(&mut rng, n, cfg.occluded_count(n)).into_vec();
    occluded.sort_unstable();

    let mut planes = Vec::with_capacity(n);
    for (k, &p) in gt.points.iter().enumerate() {
        let mut plane = if occluded.binary_search(&k).is_ok() {
            let mut acc = vec![0.0; GRID_SIDE * GRID_SIDE];
            for _ in 0..cfg.distractor_peaks {
                let at = [
                    rng.gen_range(0..GRID_SIDE) as f64,
                    rng.gen_range(0..GRID_SIDE) as f64,
                ];
                let amp = rng.gen_range(0.8..=1.0);
                let bump = gaussian_map(GRID_SIDE, GRID_SIDE, at, cfg.peak_sigma)?;
                for (a, b) in acc.iter_mut().zip(bump.as_slice()) {
                    *a = f64::max(*a, amp * b);
                }
            }
            acc
        } else {
            gaussian_map(GRID_SIDE, GRID_SIDE, p, cfg.peak_sigma)?.into_vec()
        };
        if cfg.noise_amplitude > 0.0 {
            for v in &mut plane {
                *v += rng.gen_range(0.0..cfg.noise_amplitude);
            }
        }
        planes.push(Grid2D::new(GRID_SIDE, GRID_SIDE, plane)?);
    }
    Ok((TensorStack::new(planes)?, occluded))
}

/// Exact displacement kernels for `gt`.
pub fn render_kernels(gt: &KeypointSet, schedule: &Schedule, ksize: usize, sigma: f64) -> Result<TensorStack> {
    make_kernel_targets(gt, schedule, ksize, sigma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub gt: KeypointSet,
    pub unary: TensorStack,
    pub kernels: TensorStack,
    pub norm_len: f64,
    pub seed: u64,
    pub occluded: Vec<usize>,
}

/// Sample `index` of the dataset described by `cfg`. Independent of every
/// other index.
pub fn synthesize_sample(cfg: &CorruptionConfig, index: u64) -> Result<SyntheticSample> {
    let seed = derive_seed(cfg.seed, index);
    let gt = sample_pose(seed);
    let render_cfg = CorruptionConfig {
        seed: derive_seed(seed, u64::MAX),
        ..*cfg
    };
    let (unary, occluded) = render_unary_detailed(&gt, &render_cfg)?;
    let schedule = build_schedule(&default_hand_tree())?;
    let kernels = render_kernels(&gt, &schedule, KERNEL_SIDE, KERNEL_SIGMA)?;
    Ok(SyntheticSample {
        gt,
        unary,
        kernels,
        norm_len: GRID_SIDE as f64,
        seed,
        occluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub unary: String,
    pub kernels: String,
    pub keypoints: String,
    pub norm_len: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: CorruptionConfig,
    pub samples: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Resolve a manifest entry path against the manifest's directory.
pub fn resolve(manifest_path: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Write `n` samples plus `manifest.json` into `out_dir`. File paths in the
/// manifest are relative to `out_dir`.
pub fn generate_dataset(n: usize, cfg: &CorruptionConfig, out_dir: impl AsRef<Path>, dtype: Dtype) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let s = synthesize_sample(cfg, i as u64)?;
        let entry = ManifestEntry {
            unary: format!("sample_{i:05}_unary.agt"),
            kernels: format!("sample_{i:05}_kernels.agt"),
            keypoints: format!("sample_{i:05}_keypoints.json"),
            norm_len: s.norm_len,
            seed: s.seed,
        };
        write_tensor(out_dir.join(&entry.unary), &s.unary, dtype)?;
        write_tensor(out_dir.join(&entry.kernels), &s.kernels, dtype)?;
        let kp_path = out_dir.join(&entry.keypoints);
        fs::write(&kp_path, s.gt.to_json()).map_err(|e| Error::io(&kp_path, e))?;
        samples.push(entry);
    }
    let manifest = Manifest { config: *cfg, samples };
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
