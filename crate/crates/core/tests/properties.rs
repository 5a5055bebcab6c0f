use agmn_core::bp::{run_bp, BeliefResult};
use agmn_core::grid::{conv2d_same, normalize_sum, reflect180, Grid2D, TensorStack};
use agmn_core::metrics::pck;
use agmn_core::oracle::{max_relative_deviation, random_potentials, random_tree};
use agmn_core::potentials::clamp_nonneg;
use agmn_core::{build_schedule, KeypointSet, PotentialSet, Schedule, TreeGraph};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, lo: f64) -> impl Strategy<Value = Grid2D> {
    (rows, cols).prop_flat_map(move |(r, c)| {
        prop::collection::vec(lo..1.0f64, r * c).prop_map(move |v| Grid2D::new(r, c, v).unwrap())
    })
}

fn odd_kernel(lo: f64) -> impl Strategy<Value = Grid2D> {
    (0usize..3, 0usize..3).prop_flat_map(move |(a, b)| {
        let (r, c) = (2 * a + 1, 2 * b + 1);
        prop::collection::vec(lo..1.0f64, r * c).prop_map(move |v| Grid2D::new(r, c, v).unwrap())
    })
}

/// A random order that respects message dependencies: a message `i -> j`
/// becomes ready once every other neighbour of `i` has sent to `i`.
fn random_valid_order(graph: &TreeGraph, seed: u64) -> Vec<(usize, usize)> {
    let adj = graph.adjacency();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done = std::collections::HashSet::new();
    let mut order = Vec::new();
    let total = 2 * graph.num_edges();
    while order.len() < total {
        let mut ready: Vec<(usize, usize)> = (0..graph.num_nodes)
            .flat_map(|i| adj[i].iter().map(move |&j| (i, j)))
            .filter(|e| !done.contains(e))
            .filter(|&(i, j)| adj[i].iter().all(|&k| k == j || done.contains(&(k, i))))
            .collect();
        ready.sort_unstable();
        let pick = *ready.choose(&mut rng).expect("a tree always has a ready message");
        done.insert(pick);
        order.push(pick);
    }
    order
}

fn marginals(p: &PotentialSet) -> BeliefResult {
    run_bp(p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear(h1 in grid(1..7, 1..7, -1.0), k in odd_kernel(-1.0), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let h2 = h1.map(|v| (v * 7.3).sin()).unwrap();
        let combo = Grid2D::from_fn(h1.rows(), h1.cols(), |r, c| a * h1.get(r, c) + b * h2.get(r, c)).unwrap();
        let lhs = conv2d_same(&combo, &k).unwrap();
        let (c1, c2) = (conv2d_same(&h1, &k).unwrap(), conv2d_same(&h2, &k).unwrap());
        for (i, &v) in lhs.as_slice().iter().enumerate() {
            let rhs = a * c1.as_slice()[i] + b * c2.as_slice()[i];
            prop_assert!((v - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn reflection_is_an_involution(k in odd_kernel(-1.0)) {
        prop_assert_eq!(reflect180(&reflect180(&k).unwrap()).unwrap(), k);
    }

    #[test]
    fn normalized_grids_sum_to_one(g in grid(1..9, 1..9, 0.0)) {
        let n = normalize_sum(&g).unwrap();
        prop_assert!((n.sum() - 1.0).abs() < 1e-12);
        prop_assert!(n.min() >= 0.0);
    }

    #[test]
    fn clamp_is_idempotent(g in grid(1..6, 1..6, -1.0)) {
        let t = TensorStack::new(vec![g]).unwrap();
        let once = clamp_nonneg(&t);
        prop_assert!(once.channel(0).min() >= 0.0);
        prop_assert_eq!(clamp_nonneg(&once), once);
    }

    #[test]
    fn pck_is_monotone_and_translation_invariant(
        pts in prop::collection::vec((0.0..46.0f64, 0.0..46.0f64, -3.0..3.0f64, -3.0..3.0f64), 1..12),
        shift in (-50.0..50.0f64, -50.0..50.0f64),
    ) {
        let gt = KeypointSet::new(pts.iter().map(|p| [p.0, p.1]).collect()).unwrap();
        let pred = KeypointSet::new(pts.iter().map(|p| [p.0 + p.2, p.1 + p.3]).collect()).unwrap();
        let sigmas: Vec<f64> = (0..=20).map(|i| i as f64 / 100.0).collect();
        let curve = pck(std::slice::from_ref(&pred), std::slice::from_ref(&gt), &[46.0], &sigmas).unwrap();
        prop_assert!(curve.pck.windows(2).all(|w| w[0] <= w[1]));
        let mv = |k: &KeypointSet| KeypointSet::new(k.points.iter().map(|p| [p[0] + shift.0, p[1] + shift.1]).collect()).unwrap();
        let moved = pck(&[mv(&pred)], &[mv(&gt)], &[46.0], &sigmas).unwrap();
        // Translation changes the rounding of each distance, so compare away
        // from exact threshold hits.
        for (k, (a, b)) in pred.points.iter().zip(&gt.points).enumerate() {
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() / 46.0;
            prop_assume!(sigmas.iter().all(|s| (d - s).abs() > 1e-9), "keypoint {} sits on a threshold", k);
        }
        prop_assert_eq!(curve.pck, moved.pck);
    }

    #[test]
    fn schedules_are_dependency_valid(seed in any::<u64>(), n in 3usize..16) {
        let graph = random_tree(&mut ChaCha8Rng::seed_from_u64(seed), n);
        let schedule = build_schedule(&graph).unwrap();
        prop_assert_eq!(schedule.len(), 2 * (n - 1));
        prop_assert!(schedule.check(&graph).is_ok());
        let alt = schedule.reordered(&graph, random_valid_order(&graph, seed ^ 0x5eed)).unwrap();
        prop_assert!(alt.check(&graph).is_ok());
    }

    #[test]
    fn channel_scaling_leaves_marginals_alone(seed in 0u64..10_000, channel in 0usize..8, big in any::<bool>()) {
        let p = random_potentials(seed, 4, 5, 3).unwrap();
        let c = if big { 1e3 } else { 1e-3 };
        let (unary, kernels, graph, schedule) = p.clone().into_parts();
        let (unary, kernels) = if channel < unary.channels() {
            let mut u = unary;
            let scaled = u.channel(channel).scaled(c).unwrap();
            u.set_channel(channel, scaled).unwrap();
            (u, kernels)
        } else {
            let mut k = kernels;
            let ch = channel % k.channels();
            let scaled = k.channel(ch).scaled(c).unwrap();
            k.set_channel(ch, scaled).unwrap();
            (unary, k)
        };
        let q = PotentialSet::with_schedule(unary, kernels, graph, schedule).unwrap();
        let (a, b) = (marginals(&p), marginals(&q));
        prop_assert!(max_relative_deviation(&a.marginals, &b.marginals).unwrap() <= 1e-9);
        prop_assert_eq!(a.predictions, b.predictions);
    }

    #[test]
    fn any_valid_order_gives_the_same_marginals(seed in 0u64..10_000, n in 2usize..7) {
        let p = random_potentials(seed, n, 5, 3).unwrap();
        let (unary, kernels, graph, schedule) = p.clone().into_parts();
        let alt: Schedule = schedule.reordered(&graph, random_valid_order(&graph, seed)).unwrap();
        let q = PotentialSet::with_schedule(unary, kernels, graph, alt).unwrap();
        prop_assert!(max_relative_deviation(&marginals(&p).marginals, &marginals(&q).marginals).unwrap() <= 1e-12);
    }
}
