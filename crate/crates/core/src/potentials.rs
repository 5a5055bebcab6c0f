//! Turning raw branch outputs into valid potentials, and synthesizing the
//! Gaussian training targets for both branches.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_schedule, DirectedEdge, Schedule, TreeGraph};
use crate::grid::{normalize_sum, Grid2D, TensorStack};

/// Keypoint positions in grid units, `[x, y]` = `[col, row]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox_side: Option<f64>,
}

impl KeypointSet {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        let kp = Self {
            points,
            visible: None,
            bbox_side: None,
        };
        kp.validate()?;
        Ok(kp)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidArgument("keypoint set is empty".into()));
        }
        if let Some(i) = self.points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::InvalidArgument(format!("keypoint {i} is not finite")));
        }
        if let Some(v) = &self.visible {
            if v.len() != self.points.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} visibility flags for {} keypoints",
                    v.len(),
                    self.points.len()
                )));
            }
        }
        if let Some(side) = self.bbox_side {
            if !(side > 0.0 && side.is_finite()) {
                return Err(Error::InvalidArgument(format!("bbox_side must be positive, got {side}")));
            }
        }
        Ok(())
    }

    pub fn ensure_len(&self, expected: usize) -> Result<()> {
        if self.points.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "expected {expected} keypoints, found {}",
                self.points.len()
            )));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let kp: KeypointSet = serde_json::from_str(text).map_err(|e| Error::Json {
            path: "<keypoints json>".into(),
            source: e,
        })?;
        kp.validate()?;
        Ok(kp)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let kp: KeypointSet = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        kp.validate()?;
        Ok(kp)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("keypoints serialize")
    }
}

/// Everything inference needs: clamped unary maps, clamped directed kernels,
/// the tree and its schedule.
#[derive(Debug, Clone)]
pub struct PotentialSet {
    unary: TensorStack,
    kernels: TensorStack,
    graph: TreeGraph,
    schedule: Schedule,
}

impl PotentialSet {
    pub fn new(unary: TensorStack, kernels: TensorStack, graph: TreeGraph) -> Result<Self> {
        let schedule = build_schedule(&graph)?;
        Self::with_schedule(unary, kernels, graph, schedule)
    }

    pub fn with_schedule(
        unary: TensorStack,
        kernels: TensorStack,
        graph: TreeGraph,
        schedule: Schedule,
    ) -> Result<Self> {
        graph.validate()?;
        schedule.check(&graph)?;
        if unary.channels() != graph.num_nodes {
            return Err(Error::ChannelCount {
                what: "unary maps",
                expected: graph.num_nodes,
                found: unary.channels(),
            });
        }
        if kernels.channels() != 2 * graph.num_edges() {
            return Err(Error::ChannelCount {
                what: "directed kernels",
                expected: 2 * graph.num_edges(),
                found: kernels.channels(),
            });
        }
        if kernels.rows() % 2 == 0 || kernels.cols() % 2 == 0 {
            return Err(Error::InvalidKernel(format!(
                "kernel dimensions must be odd, got {}x{}",
                kernels.rows(),
                kernels.cols()
            )));
        }
        for (what, stack) in [("unary", &unary), ("kernel", &kernels)] {
            for (c, plane) in stack.iter().enumerate() {
                if plane.min() < 0.0 {
                    return Err(Error::InvalidPotential(format!(
                        "{what} channel {c} has negative entries"
                    )));
                }
            }
        }
        Ok(Self {
            unary,
            kernels,
            graph,
            schedule,
        })
    }

    pub fn unary(&self) -> &TensorStack {
        &self.unary
    }

    pub fn kernels(&self) -> &TensorStack {
        &self.kernels
    }

    pub fn graph(&self) -> &TreeGraph {
        &self.graph
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// Kernel for the directed edge `from -> to`.
    pub fn kernel(&self, from: usize, to: usize) -> Result<&Grid2D> {
        self.schedule
            .channel_of(from, to)
            .map(|c| self.kernels.channel(c))
            .ok_or_else(|| Error::ScheduleViolation(format!("no kernel channel for ({from}->{to})")))
    }

    pub fn into_parts(self) -> (TensorStack, TensorStack, TreeGraph, Schedule) {
        (self.unary, self.kernels, self.graph, self.schedule)
    }
}

/// Elementwise `max(0, v)`.
pub fn clamp_nonneg(t: &TensorStack) -> TensorStack {
    t.map_planes(|p| p.map(|v| v.max(0.0)))
        .expect("clamping preserves shape and finiteness")
}

/// Unnormalized Gaussian bump with peak 1 at `center = (x, y)`.
pub fn gaussian_map(rows: usize, cols: usize, center: [f64; 2], sigma: f64) -> Result<Grid2D> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if !center[0].is_finite() || !center[1].is_finite() {
        return Err(Error::InvalidArgument("gaussian center is not finite".into()));
    }
    let denom = 2.0 * sigma * sigma;
    let [x, y] = center;
    Grid2D::from_fn(rows, cols, |r, c| {
        let (dx, dy) = (c as f64 - x, r as f64 - y);
        (-(dx * dx + dy * dy) / denom).exp()
    })
}

/// One Gaussian channel per keypoint.
pub fn make_unary_targets(kp: &KeypointSet, rows: usize, cols: usize, sigma: f64) -> Result<TensorStack> {
    kp.validate()?;
    let planes = kp
        .points
        .iter()
        .map(|&p| gaussian_map(rows, cols, p, sigma))
        .collect::<Result<Vec<_>>>()?;
    TensorStack::new(planes)
}

/// Directed edges whose displacement falls outside a `ksize` kernel.
pub fn clipped_edges(kp: &KeypointSet, schedule: &Schedule, ksize: usize) -> Vec<DirectedEdge> {
    let half = ((ksize.max(1) - 1) / 2) as f64;
    schedule
        .edges_by_channel()
        .into_iter()
        .filter(|&(i, j)| {
            let dx = kp.points[j][0] - kp.points[i][0];
            let dy = kp.points[j][1] - kp.points[i][1];
            dx.abs() > half || dy.abs() > half
        })
        .collect()
}

/// Kernel targets: channel `channel_of(i, j)` holds a Gaussian centered at
/// `l_j - l_i` from the kernel center. Displacements beyond the kernel extent
/// are logged and the (partially clipped) map is still produced.
pub fn make_kernel_targets(kp: &KeypointSet, schedule: &Schedule, ksize: usize, sigma: f64) -> Result<TensorStack> {
    kp.validate()?;
    if ksize % 2 == 0 {
        return Err(Error::InvalidKernel(format!("kernel size must be odd, got {ksize}")));
    }
    let edges = schedule.edges_by_channel();
    if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i.max(j) >= kp.len()) {
        return Err(Error::InvalidArgument(format!(
            "edge ({i}->{j}) refers past {} keypoints",
            kp.len()
        )));
    }
    for (i, j) in clipped_edges(kp, schedule, ksize) {
        log::warn!("displacement of ({i}->{j}) exceeds the {ksize}x{ksize} kernel; peak clipped");
    }
    let center = ((ksize - 1) / 2) as f64;
    let planes = edges
        .iter()
        .map(|&(i, j)| {
            let dx = kp.points[j][0] - kp.points[i][0];
            let dy = kp.points[j][1] - kp.points[i][1];
            gaussian_map(ksize, ksize, [center + dx, center + dy], sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    TensorStack::new(planes)
}

/// Per-channel sum normalization.
pub fn normalize_targets(t: &TensorStack) -> Result<TensorStack> {
    t.map_planes(normalize_sum)
}
