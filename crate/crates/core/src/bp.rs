//! Sum-product belief propagation on a tree, with every message computed as
//! a same-size 2D convolution of the sender's pre-message with the kernel of
//! the directed edge.
//!
//! The kernel for `i -> j` is indexed by the displacement `x_j - x_i` from its
//! center, so the message
//!
//! ```text
//! m_ij(x_j) = sum over x_i of kernel[center + (x_j - x_i)] * h_i(x_i)
//! ```
//!
//! is exactly `conv2d_same(h_i, kernel)`. Messages are renormalized to unit
//! mass as soon as they are computed; this only rescales each marginal by a
//! constant that the final normalization removes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::FftConvolver;
use crate::graph::{build_schedule, Schedule, TreeGraph};
use crate::grid::{argmax_cell, conv2d_same, hadamard, normalize_rescaled, reflect180, Grid2D, GridIndex, TensorStack};
use crate::potentials::{clamp_nonneg, PotentialSet};

/// Products of many small messages are rescaled once their peak drops below
/// this, well before f64 underflow.
const RESCALE_BELOW: f64 = 1e-150;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvPath {
    /// Spatial convolution, bitwise reproducible. The reference path.
    #[default]
    Direct,
    /// Frequency-domain convolution. Agrees with `Direct` to round-off.
    Fft,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    /// One kernel per directed edge, `2|E|` channels in schedule channel order.
    #[default]
    Directed,
    /// One kernel per undirected edge `(a, b)`, `a < b`, in graph edge order,
    /// used for `a -> b`; `b -> a` uses its point reflection.
    Shared,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InferOptions {
    pub kernel_mode: KernelMode,
    pub conv: ConvPath,
}

/// Messages computed so far, one slot per kernel channel.
#[derive(Debug, Clone)]
pub struct MessageStore {
    slots: Vec<Option<Grid2D>>,
}

impl MessageStore {
    pub fn new(schedule: &Schedule) -> Self {
        Self {
            slots: vec![None; schedule.len()],
        }
    }

    pub fn get(&self, schedule: &Schedule, from: usize, to: usize) -> Option<&Grid2D> {
        schedule
            .channel_of(from, to)
            .and_then(|c| self.slots.get(c))
            .and_then(Option::as_ref)
    }

    pub fn insert(&mut self, schedule: &Schedule, from: usize, to: usize, message: Grid2D) -> Result<()> {
        let c = schedule
            .channel_of(from, to)
            .ok_or_else(|| Error::ScheduleViolation(format!("({from}->{to}) is not scheduled")))?;
        self.slots[c] = Some(message);
        Ok(())
    }

    pub fn computed(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }
}

/// Marginals and the per-keypoint argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefResult {
    pub marginals: TensorStack,
    pub predictions: Vec<GridIndex>,
    pub max_marginals: Vec<f64>,
    /// Number of message updates performed.
    pub messages: usize,
}

impl BeliefResult {
    fn from_marginals(marginals: TensorStack, messages: usize) -> Self {
        let predictions: Vec<GridIndex> = marginals.iter().map(argmax_cell).collect();
        let max_marginals = marginals
            .iter()
            .zip(&predictions)
            .map(|(m, p)| m.get(p.row, p.col))
            .collect();
        Self {
            marginals,
            predictions,
            max_marginals,
            messages,
        }
    }
}

/// `phi_i` times every incoming message except the one from `exclude`.
///
/// The product is exact unless its peak falls below 1e-150, in which case it
/// is rescaled by a positive constant.
pub fn pre_message(
    potentials: &PotentialSet,
    node: usize,
    exclude: Option<usize>,
    store: &MessageStore,
) -> Result<Grid2D> {
    let graph = potentials.graph();
    if node >= graph.num_nodes {
        return Err(Error::InvalidArgument(format!("node {node} out of range")));
    }
    let schedule = potentials.schedule();
    let mut acc = potentials.unary().channel(node).clone();
    for k in graph.adjacency()[node].iter().copied().filter(|&k| Some(k) != exclude) {
        let m = store.get(schedule, k, node).ok_or_else(|| {
            Error::ScheduleViolation(format!("message ({k}->{node}) needed before it was computed"))
        })?;
        acc = hadamard(&[&acc, m])?;
        let peak = acc.max();
        if peak > 0.0 && peak < RESCALE_BELOW {
            acc = acc.map(|v| v / peak)?;
        }
    }
    Ok(acc)
}

/// How a message convolution is evaluated.
#[derive(Debug)]
pub enum Convolver {
    Direct,
    Fft(Box<FftConvolver>),
}

impl Convolver {
    pub fn new(path: ConvPath, grid: (usize, usize), kernel: (usize, usize)) -> Self {
        match path {
            ConvPath::Direct => Convolver::Direct,
            ConvPath::Fft => Convolver::Fft(Box::new(FftConvolver::new(grid.0, grid.1, kernel.0, kernel.1))),
        }
    }

    fn convolve(&self, h: &Grid2D, kernel: &Grid2D) -> Result<Grid2D> {
        match self {
            Convolver::Direct => conv2d_same(h, kernel),
            // round-off can leave tiny negative values where the exact result is 0
            Convolver::Fft(f) => f.conv2d_same(h, kernel)?.map(|v| v.max(0.0)),
        }
    }
}

/// `conv2d_same(h, kernel)` normalized to unit mass.
pub fn message_update(h: &Grid2D, kernel: &Grid2D) -> Result<Grid2D> {
    message_update_with(&Convolver::Direct, h, kernel)
}

pub fn message_update_with(conv: &Convolver, h: &Grid2D, kernel: &Grid2D) -> Result<Grid2D> {
    if kernel.min() < 0.0 {
        return Err(Error::InvalidPotential("kernel has negative entries".into()));
    }
    normalize_rescaled(&conv.convolve(h, kernel)?)
}

pub fn run_bp(potentials: &PotentialSet) -> Result<BeliefResult> {
    run_bp_with(potentials, ConvPath::Direct)
}

/// Runs the schedule, then normalizes `phi_i` times all incoming messages.
pub fn run_bp_with(potentials: &PotentialSet, path: ConvPath) -> Result<BeliefResult> {
    let unary = potentials.unary();
    let kernels = potentials.kernels();
    let schedule = potentials.schedule();
    let conv = Convolver::new(path, (unary.rows(), unary.cols()), (kernels.rows(), kernels.cols()));

    let mut store = MessageStore::new(schedule);
    let mut count = 0;
    for (i, j) in schedule.iter() {
        let h = pre_message(potentials, i, Some(j), &store)?;
        let m = message_update_with(&conv, &h, potentials.kernel(i, j)?)?;
        store.insert(schedule, i, j, m)?;
        count += 1;
    }
    debug_assert!(store.is_complete());

    let beliefs = (0..potentials.graph().num_nodes)
        .map(|i| pre_message(potentials, i, None, &store).and_then(|b| normalize_rescaled(&b)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BeliefResult::from_marginals(TensorStack::new(beliefs)?, count))
}

/// Turns `|E|` shared kernels into the `2|E|` directed stack for `schedule`.
pub fn expand_shared_kernels(shared: &TensorStack, graph: &TreeGraph, schedule: &Schedule) -> Result<TensorStack> {
    if shared.channels() != graph.num_edges() {
        return Err(Error::ChannelCount {
            what: "shared kernels",
            expected: graph.num_edges(),
            found: shared.channels(),
        });
    }
    let planes = schedule
        .edges_by_channel()
        .into_iter()
        .map(|(i, j)| {
            let e = graph
                .edges
                .iter()
                .position(|&edge| edge == (i.min(j), i.max(j)))
                .expect("scheduled edge exists in graph");
            if i < j {
                Ok(shared.channel(e).clone())
            } else {
                reflect180(shared.channel(e))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    TensorStack::new(planes)
}

/// Clamp raw branch outputs, assemble potentials and run belief propagation.
pub fn infer(raw_unary: &TensorStack, raw_kernels: &TensorStack, graph: &TreeGraph, options: InferOptions) -> Result<BeliefResult> {
    let potentials = assemble(raw_unary, raw_kernels, graph, options.kernel_mode)?;
    run_bp_with(&potentials, options.conv)
}

/// Clamp and validate raw outputs into a [`PotentialSet`].
pub fn assemble(raw_unary: &TensorStack, raw_kernels: &TensorStack, graph: &TreeGraph, mode: KernelMode) -> Result<PotentialSet> {
    graph.validate()?;
    if raw_unary.channels() != graph.num_nodes {
        return Err(Error::ChannelCount {
            what: "unary maps",
            expected: graph.num_nodes,
            found: raw_unary.channels(),
        });
    }
    let schedule = build_schedule(graph)?;
    let kernels = clamp_nonneg(raw_kernels);
    let kernels = match mode {
        KernelMode::Directed => kernels,
        KernelMode::Shared => expand_shared_kernels(&kernels, graph, &schedule)?,
    };
    PotentialSet::with_schedule(clamp_nonneg(raw_unary), kernels, graph.clone(), schedule)
}

/// Baseline without the graphical model: clamp, normalize and take the
/// argmax of each unary channel.
pub fn unary_only(raw_unary: &TensorStack) -> Result<BeliefResult> {
    let marginals = clamp_nonneg(raw_unary).map_planes(normalize_rescaled)?;
    Ok(BeliefResult::from_marginals(marginals, 0))
}
