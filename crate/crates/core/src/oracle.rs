//! Brute-force reference implementations.
//!
//! Nothing here calls the convolution or hadamard helpers used by the engine;
//! the whole point is to reach the same numbers by an unrelated route.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{build_schedule, TreeGraph};
use crate::grid::{Grid2D, TensorStack};
use crate::potentials::PotentialSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationBudget {
    pub max_configs: u128,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        Self {
            max_configs: 200_000_000,
        }
    }
}

/// Number of joint configurations for `nodes` variables on a `rows x cols` grid.
pub fn config_count(nodes: usize, rows: usize, cols: usize) -> u128 {
    let states = (rows * cols) as u128;
    (0..nodes).fold(1u128, |acc, _| acc.saturating_mul(states))
}

/// Pairwise value for edge `(a, b)`, read from the `a -> b` kernel at
/// displacement `x_b - x_a`; zero outside the kernel.
fn pairwise(kernel: &Grid2D, from: (usize, usize), to: (usize, usize)) -> f64 {
    let (cr, cc) = ((kernel.rows() as isize - 1) / 2, (kernel.cols() as isize - 1) / 2);
    let r = cr + to.0 as isize - from.0 as isize;
    let c = cc + to.1 as isize - from.1 as isize;
    if r < 0 || c < 0 || r >= kernel.rows() as isize || c >= kernel.cols() as isize {
        0.0
    } else {
        kernel.as_slice()[r as usize * kernel.cols() + c as usize]
    }
}

/// Marginals of the joint distribution obtained by summing over every
/// configuration of every node.
pub fn exact_marginals_bruteforce(potentials: &PotentialSet, budget: EnumerationBudget) -> Result<TensorStack> {
    exact_marginals_from_parts(
        potentials.unary(),
        potentials.graph(),
        |a, b| potentials.kernel(a, b),
        budget,
    )
}

/// Same as [`exact_marginals_bruteforce`] on loose parts; `kernel_for(a, b)`
/// supplies the `a -> b` kernel of each graph edge.
pub fn exact_marginals_from_parts<'k>(
    unary: &TensorStack,
    graph: &TreeGraph,
    kernel_for: impl Fn(usize, usize) -> Result<&'k Grid2D>,
    budget: EnumerationBudget,
) -> Result<TensorStack> {
    graph.validate()?;
    let n = graph.num_nodes;
    if unary.channels() != n {
        return Err(Error::ChannelCount {
            what: "unary maps",
            expected: n,
            found: unary.channels(),
        });
    }
    let (rows, cols) = (unary.rows(), unary.cols());
    let states = rows * cols;
    let required = config_count(n, rows, cols);
    if required > budget.max_configs {
        return Err(Error::BudgetExceeded {
            required,
            budget: budget.max_configs,
        });
    }
    let edges: Vec<(usize, usize, &Grid2D)> = graph
        .edges
        .iter()
        .map(|&(a, b)| kernel_for(a, b).map(|k| (a, b, k)))
        .collect::<Result<_>>()?;

    let mut marg = vec![vec![0.0f64; states]; n];
    let mut config = vec![0usize; n];
    let cell = |s: usize| (s / cols, s % cols);
    loop {
        let mut p = 1.0;
        for (i, &s) in config.iter().enumerate() {
            p *= unary.channel(i).as_slice()[s];
        }
        if p != 0.0 {
            for &(a, b, k) in &edges {
                p *= pairwise(k, cell(config[a]), cell(config[b]));
            }
        }
        if p != 0.0 {
            for (i, &s) in config.iter().enumerate() {
                marg[i][s] += p;
            }
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == n {
                return finish(marg, rows, cols);
            }
            config[pos] += 1;
            if config[pos] < states {
                break;
            }
            config[pos] = 0;
            pos += 1;
        }
    }
}

fn finish(marg: Vec<Vec<f64>>, rows: usize, cols: usize) -> Result<TensorStack> {
    let planes = marg
        .into_iter()
        .map(|m| {
            let z: f64 = m.iter().sum();
            let data = if z > 0.0 {
                m.iter().map(|v| v / z).collect()
            } else {
                vec![1.0 / (rows * cols) as f64; rows * cols]
            };
            Grid2D::new(rows, cols, data)
        })
        .collect::<Result<Vec<_>>>()?;
    TensorStack::new(planes)
}

/// Unnormalized message by direct double sum over sender and receiver
/// locations: `out[x_j] = sum over x_i of kernel[center + (x_j - x_i)] * h[x_i]`.
pub fn naive_message(h: &Grid2D, kernel: &Grid2D) -> Grid2D {
    let (rows, cols) = h.shape();
    let mut out = vec![0.0; rows * cols];
    for jr in 0..rows {
        for jc in 0..cols {
            let mut acc = 0.0;
            for ir in 0..rows {
                for ic in 0..cols {
                    acc += pairwise(kernel, (ir, ic), (jr, jc)) * h.as_slice()[ir * cols + ic];
                }
            }
            out[jr * cols + jc] = acc;
        }
    }
    Grid2D::new(rows, cols, out).expect("finite inputs give finite sums")
}

/// Random tree with `n` nodes: each node attaches to a random earlier node,
/// then labels are shuffled and a random root picked.
pub fn random_tree(rng: &mut impl Rng, n: usize) -> TreeGraph {
    assert!(n > 0);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let edges = (1..n).map(|v| (perm[v], perm[rng.gen_range(0..v)])).collect();
    let root = rng.gen_range(0..n);
    TreeGraph::new(n, root, edges).expect("construction yields a tree")
}

fn random_plane(rng: &mut impl Rng, rows: usize, cols: usize) -> Grid2D {
    Grid2D::from_fn(rows, cols, |_, _| {
        // a sprinkling of exact zeros exercises the clamped regime
        if rng.gen_bool(0.15) {
            0.0
        } else {
            rng.gen::<f64>()
        }
    })
    .expect("finite")
}

/// Seeded random nonnegative potentials on a random tree. The two directions
/// of every edge carry point-reflected kernels, so they describe one pairwise
/// potential.
pub fn random_potentials(seed: u64, n: usize, grid_size: usize, kernel_size: usize) -> Result<PotentialSet> {
    if kernel_size % 2 == 0 {
        return Err(Error::InvalidKernel(format!("kernel size must be odd, got {kernel_size}")));
    }
    if n == 0 || grid_size == 0 {
        return Err(Error::InvalidArgument("need at least one node and one cell".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = random_tree(&mut rng, n);
    let unary = TensorStack::new((0..n).map(|_| random_plane(&mut rng, grid_size, grid_size)).collect())?;
    let schedule = build_schedule(&graph)?;
    let mut planes = vec![Grid2D::zeros(kernel_size, kernel_size); 2 * graph.num_edges()];
    for &(a, b) in &graph.edges {
        let k = random_plane(&mut rng, kernel_size, kernel_size);
        let mut rev = k.as_slice().to_vec();
        rev.reverse();
        planes[schedule.channel_of(b, a).expect("scheduled")] = Grid2D::new(kernel_size, kernel_size, rev)?;
        planes[schedule.channel_of(a, b).expect("scheduled")] = k;
    }
    PotentialSet::with_schedule(unary, TensorStack::new(planes)?, graph, schedule)
}

/// Largest per-cell relative deviation, `|a - b| / max(|a|, |b|)`, with
/// matching zeros counting as zero deviation.
pub fn max_relative_deviation(a: &TensorStack, b: &TensorStack) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", a.shape()),
            found: format!("{:?}", b.shape()),
        });
    }
    let mut worst = 0.0f64;
    for (pa, pb) in a.iter().zip(b.iter()) {
        for (&x, &y) in pa.as_slice().iter().zip(pb.as_slice()) {
            let scale = x.abs().max(y.abs());
            if scale > 0.0 {
                worst = worst.max((x - y).abs() / scale);
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialConfig {
    pub nodes: usize,
    pub grid: usize,
    pub kernel: usize,
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub budget: EnumerationBudget,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            nodes: 3,
            grid: 5,
            kernel: 3,
            trials: 100,
            seed: 1,
            tolerance: 1e-9,
            budget: EnumerationBudget::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub trials: usize,
    pub max_deviation: f64,
    /// Seeds whose deviation exceeded the tolerance.
    pub failures: Vec<u64>,
}

impl TrialReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares `engine` against brute force on `cfg.trials` random instances
/// seeded `cfg.seed, cfg.seed + 1, ...`.
pub fn equivalence_trials(
    cfg: &TrialConfig,
    engine: impl Fn(&PotentialSet) -> Result<TensorStack>,
) -> Result<TrialReport> {
    let required = config_count(cfg.nodes, cfg.grid, cfg.grid);
    if required > cfg.budget.max_configs {
        return Err(Error::BudgetExceeded {
            required,
            budget: cfg.budget.max_configs,
        });
    }
    let mut report = TrialReport {
        trials: cfg.trials,
        max_deviation: 0.0,
        failures: Vec::new(),
    };
    for t in 0..cfg.trials {
        let seed = cfg.seed.wrapping_add(t as u64);
        let p = random_potentials(seed, cfg.nodes, cfg.grid, cfg.kernel)?;
        let exact = exact_marginals_bruteforce(&p, cfg.budget)?;
        let dev = max_relative_deviation(&engine(&p)?, &exact)?;
        report.max_deviation = report.max_deviation.max(dev);
        if dev.is_nan() || dev > cfg.tolerance {
            report.failures.push(seed);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bp::run_bp;

    fn row(values: &[f64]) -> Grid2D {
        Grid2D::new(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn single_node_is_normalized_unary() {
        let g = TreeGraph::new(1, 0, vec![]).unwrap();
        let u = TensorStack::new(vec![row(&[1.0, 3.0])]).unwrap();
        let m = exact_marginals_from_parts(&u, &g, |_, _| unreachable!(), EnumerationBudget::default()).unwrap();
        assert_eq!(m.channel(0).as_slice(), &[0.25, 0.75]);
    }

    #[test]
    fn two_node_hand_example() {
        // phi_1 = [1,0,0], phi_2 = [1,1,1], kernel(1->2) shifts by +1
        let g = TreeGraph::new(2, 0, vec![(0, 1)]).unwrap();
        let s = build_schedule(&g).unwrap();
        let u = TensorStack::new(vec![row(&[1.0, 0.0, 0.0]), row(&[1.0, 1.0, 1.0])]).unwrap();
        let mut planes = vec![Grid2D::zeros(1, 3); 2];
        planes[s.channel_of(0, 1).unwrap()] = row(&[0.0, 0.0, 1.0]);
        planes[s.channel_of(1, 0).unwrap()] = row(&[1.0, 0.0, 0.0]);
        let p = PotentialSet::with_schedule(u, TensorStack::new(planes).unwrap(), g, s).unwrap();
        let m = exact_marginals_bruteforce(&p, EnumerationBudget::default()).unwrap();
        // of the 9 joint configurations only (x1=0, x2=1) has nonzero weight
        assert_eq!(m.channel(0).as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(m.channel(1).as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn three_node_chain_matches_bp() {
        let p = random_potentials(7, 3, 5, 3).unwrap();
        let exact = exact_marginals_bruteforce(&p, EnumerationBudget::default()).unwrap();
        let bp = run_bp(&p).unwrap();
        assert!(max_relative_deviation(&bp.marginals, &exact).unwrap() <= 1e-9);
    }

    #[test]
    fn budget_refusal_names_count() {
        let p = random_potentials(1, 4, 5, 3).unwrap();
        let err = exact_marginals_bruteforce(&p, EnumerationBudget { max_configs: 1000 }).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { required: 390625, budget: 1000 }));
        assert!(err.to_string().contains("390625"));
    }

    #[test]
    fn naive_message_examples() {
        let h = Grid2D::from_fn(3, 4, |r, c| (r * 4 + c) as f64).unwrap();
        let centered = Grid2D::impulse(3, 3, crate::grid::GridIndex::new(1, 1), 1.0);
        assert_eq!(naive_message(&h, &centered), h);
        assert_eq!(naive_message(&Grid2D::zeros(3, 4), &centered), Grid2D::zeros(3, 4));
        let h = row(&[1.0, 0.0, 0.0]);
        assert_eq!(naive_message(&h, &row(&[0.0, 0.0, 1.0])).as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn random_potentials_are_deterministic_and_valid() {
        let a = random_potentials(1, 4, 5, 3).unwrap();
        let b = random_potentials(1, 4, 5, 3).unwrap();
        assert_eq!(a.unary(), b.unary());
        assert_eq!(a.kernels(), b.kernels());
        assert_eq!(a.graph(), b.graph());
        a.graph().validate().unwrap();
        assert!(a.unary().iter().chain(a.kernels().iter()).all(|p| p.min() >= 0.0));
        assert!(random_potentials(1, 3, 5, 4).is_err());
    }

    #[test]
    fn relabeling_nodes_permutes_marginals() {
        let p = random_potentials(21, 4, 3, 3).unwrap();
        let perm = [2usize, 0, 3, 1];
        let g = p.graph();
        let relabeled = TreeGraph::new(4, perm[g.root], g.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect()).unwrap();
        let s = build_schedule(&relabeled).unwrap();
        let mut unary = vec![Grid2D::zeros(3, 3); 4];
        for (i, &pi) in perm.iter().enumerate() {
            unary[pi] = p.unary().channel(i).clone();
        }
        let mut kernels = vec![Grid2D::zeros(3, 3); 6];
        for &(a, b) in &g.edges {
            kernels[s.channel_of(perm[a], perm[b]).unwrap()] = p.kernel(a, b).unwrap().clone();
            kernels[s.channel_of(perm[b], perm[a]).unwrap()] = p.kernel(b, a).unwrap().clone();
        }
        let q = PotentialSet::with_schedule(
            TensorStack::new(unary).unwrap(),
            TensorStack::new(kernels).unwrap(),
            relabeled,
            s,
        )
        .unwrap();
        let mp = exact_marginals_bruteforce(&p, EnumerationBudget::default()).unwrap();
        let mq = exact_marginals_bruteforce(&q, EnumerationBudget::default()).unwrap();
        for (i, &pi) in perm.iter().enumerate() {
            for (x, y) in mp.channel(i).as_slice().iter().zip(mq.channel(pi).as_slice()) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
            }
        }
    }
}
