use agmn_core::bp::{infer, InferOptions};
use agmn_core::grid::argmax_cell;
use agmn_core::synth::{synthesize_sample, CorruptionConfig};
use agmn_core::{default_hand_tree, GridIndex, TensorStack};
use agmn::{infer_stacks, target_stacks, BridgeOptions};

fn occluded_sample() -> agmn_core::synth::SyntheticSample {
    let cfg = CorruptionConfig {
        occluded_fraction: 0.2,
        distractor_peaks: 2,
        noise_amplitude: 0.05,
        peak_sigma: 1.0,
        seed: 42,
    };
    synthesize_sample(&cfg, 1).unwrap()
}

fn bits(t: &TensorStack) -> Vec<u64> {
    t.to_flat().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn matches_engine_bitwise() {
    let s = occluded_sample();
    let direct = infer(&s.unary, &s.kernels, &default_hand_tree(), InferOptions::default()).unwrap();
    let bridged = infer_stacks(&s.unary, Some(&s.kernels), None, BridgeOptions::default()).unwrap();
    assert_eq!(bits(&bridged.marginals), bits(&direct.marginals));
    assert_eq!(bridged.predictions, direct.predictions);
}

#[test]
fn wrong_channel_count_names_expected() {
    let s = occluded_sample();
    let short = TensorStack::new(s.kernels.planes()[..39].to_vec()).unwrap();
    let err = infer_stacks(&s.unary, Some(&short), None, BridgeOptions::default()).unwrap_err();
    assert!(err.to_string().contains("expected 40"), "{err}");
}

#[test]
fn widened_f32_gives_same_predictions() {
    let s = occluded_sample();
    let narrow = |t: &TensorStack| t.map_planes(|p| p.map(|v| v as f32 as f64)).unwrap();
    let (u, k) = (narrow(&s.unary), narrow(&s.kernels));
    let a = infer_stacks(&u, Some(&k), None, BridgeOptions::default()).unwrap();
    // values already representable in f32 survive another round trip unchanged
    let b = infer_stacks(&narrow(&u), Some(&narrow(&k)), None, BridgeOptions::default()).unwrap();
    assert_eq!(a.predictions, b.predictions);
    assert_eq!(bits(&a.marginals), bits(&b.marginals));
}

#[test]
fn unary_only_needs_no_kernels() {
    let s = occluded_sample();
    let opts = BridgeOptions { unary_only: true, ..Default::default() };
    let r = infer_stacks(&s.unary, None, None, opts).unwrap();
    assert_eq!(r.messages, 0);
    assert!(infer_stacks(&s.unary, None, None, BridgeOptions::default()).is_err());
}

#[test]
fn targets_shapes_and_center() {
    let (s, q) = target_stacks(vec![[10.0, 20.0]; 21], 46, 46, 45, 1.0, None).unwrap();
    assert_eq!(s.shape(), (21, 46, 46));
    assert_eq!(q.shape(), (40, 45, 45));
    for plane in q.iter() {
        assert_eq!(argmax_cell(plane), GridIndex::new(22, 22));
    }
    assert_eq!(argmax_cell(s.channel(0)), GridIndex::new(20, 10));
    assert!(target_stacks(vec![], 46, 46, 45, 1.0, None).is_err());
    assert!(target_stacks(vec![[0.0, 0.0]; 20], 46, 46, 45, 1.0, None).is_err());
}
