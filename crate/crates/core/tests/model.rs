use binpack_core::datagen::{feature_scale, generate, normalize, DatasetSpec};
use binpack_core::geometry::{BoxDims, Dims, PackState, ProblemInstance};
use binpack_core::model::{ModelConfig, Net, PolicyModel, SequenceMode};
use binpack_core::train::{check_episode_gradient, rollout, DecodeMode};
use binpack_tensor::{Graph, Scalar};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_config(dims: Dims) -> ModelConfig {
    ModelConfig {
        heads: 2,
        layers: 1,
        ..ModelConfig::scaled(dims, 10, 10, 8)
    }
}

fn bx(l: u32, w: u32, h: u32) -> BoxDims {
    BoxDims { l, w, h }
}

fn embeddings(model: &PolicyModel, features: &[[f64; 3]]) -> Vec<f64> {
    let mut g = Graph::<f64>::new();
    let net = Net::bind(model, &mut g, false).unwrap();
    let ctx = net.encode(&mut g, features).unwrap();
    g.value(ctx.embeddings).to_vec()
}

/// Sequence probabilities at the empty bin for `boxes`.
fn first_sequence_probs(model: &PolicyModel, inst: &ProblemInstance, packed: &[bool]) -> Vec<f64> {
    let mut g = Graph::<f64>::new();
    let net = Net::bind(model, &mut g, false).unwrap();
    let ctx = net.encode(&mut g, &normalize(inst)).unwrap();
    let st = PackState::new(inst);
    let fr = net
        .frontier(&mut g, st.frontier_prev(), st.frontier_cur(), feature_scale(&inst))
        .unwrap();
    let logp = net.sequence_logp(&mut g, &ctx, packed, &fr).unwrap();
    g.value(logp)
        .iter()
        .map(|&v| if v.is_masked() { 0.0 } else { v.exp() })
        .collect()
}

#[test]
fn encoder_is_permutation_equivariant() {
    let model = PolicyModel::new(ModelConfig::scaled(Dims::Three, 10, 10, 16), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<[f64; 3]> = (0..7).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let mut perm: Vec<usize> = (0..7).collect();
    perm.shuffle(&mut rng);
    let px: Vec<[f64; 3]> = perm.iter().map(|&i| x[i]).collect();
    let e = embeddings(&model, &x);
    let pe = embeddings(&model, &px);
    let d = 16;
    for (row, &i) in perm.iter().enumerate() {
        for k in 0..d {
            assert!((pe[row * d + k] - e[i * d + k]).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_boxes_share_embeddings() {
    let model = PolicyModel::new(ModelConfig::scaled(Dims::Three, 10, 10, 16), 4).unwrap();
    let e = embeddings(&model, &[[0.5, 1.0, 0.25], [0.2, 0.3, 0.4], [0.5, 1.0, 0.25]]);
    for k in 0..16 {
        assert_eq!(e[k], e[32 + k]);
    }
}

#[test]
fn encoder_accepts_any_box_count() {
    let model = PolicyModel::new(ModelConfig::scaled(Dims::Two, 10, 1, 16), 5).unwrap();
    for n in 1..=100 {
        let x = vec![[0.3, 0.7, 0.0]; n];
        assert_eq!(embeddings(&model, &x).len(), n * 16);
    }
}

#[test]
fn sequence_probabilities_permute_with_boxes() {
    let model = PolicyModel::new(ModelConfig::scaled(Dims::Three, 10, 10, 16), 6).unwrap();
    let boxes = vec![bx(1, 2, 3), bx(4, 4, 4), bx(2, 5, 6), bx(1, 1, 9)];
    let inst = ProblemInstance::new("a", Dims::Three, 10, 10, boxes.clone()).unwrap();
    let perm = [2, 0, 3, 1];
    let pinst = inst.reordered(&perm);
    let p = first_sequence_probs(&model, &inst, &[false; 4]);
    let pp = first_sequence_probs(&model, &pinst, &[false; 4]);
    for (row, &i) in perm.iter().enumerate() {
        assert!((pp[row] - p[i]).abs() < 1e-12);
    }
}

#[test]
fn identical_boxes_get_uniform_sequence_probability() {
    let model = PolicyModel::new(ModelConfig::scaled(Dims::Three, 10, 10, 16), 7).unwrap();
    let inst = ProblemInstance::new("u", Dims::Three, 10, 10, vec![bx(2, 3, 4); 5]).unwrap();
    for p in first_sequence_probs(&model, &inst, &[false; 5]) {
        assert!((p - 0.2).abs() < 1e-12);
    }
}

#[test]
fn last_unpacked_box_is_forced() {
    let model = PolicyModel::new(ModelConfig::scaled(Dims::Three, 10, 10, 16), 8).unwrap();
    let inst = ProblemInstance::new("f", Dims::Three, 10, 10, vec![bx(1, 2, 3), bx(2, 2, 2), bx(3, 3, 3)]).unwrap();
    assert_eq!(first_sequence_probs(&model, &inst, &[true, false, true]), vec![0.0, 1.0, 0.0]);
}

#[test]
fn single_box_sequence_choice_has_probability_one() {
    let model = PolicyModel::new(ModelConfig::scaled(Dims::Two, 10, 1, 16), 9).unwrap();
    let inst = ProblemInstance::new("one", Dims::Two, 10, 1, vec![bx(3, 4, 1)]).unwrap();
    let r = rollout(&model, &inst, DecodeMode::Sample, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(r.record.steps.len(), 1);
    assert_eq!(r.record.steps[0].logp_s, 0.0);
}

/// Logit spread check: feasible log-probabilities differ by at most 2C, and
/// masked entries carry no mass.
#[test]
fn placement_distribution_is_bounded_and_masked() {
    let cfg = ModelConfig::scaled(Dims::Three, 10, 10, 16);
    let clamp = cfg.clamp;
    let model = PolicyModel::new(cfg, 10).unwrap();
    let data = generate(&DatasetSpec::cut10(Dims::Three, 20, 4)).unwrap();
    for gi in &data {
        let inst = gi.instance.canonicalized();
        let mut g = Graph::<f64>::new();
        let net = Net::bind(&model, &mut g, false).unwrap();
        let ctx = net.encode(&mut g, &normalize(&inst)).unwrap();
        let mut st = PackState::new(&inst);
        // place a few boxes so the frontier is not empty
        for s in 0..3 {
            let mask = st.placement_mask(s);
            let a = mask.iter().position(|&m| m).unwrap();
            st.apply(s, a / 10, (a % 10) as u32).unwrap();
        }
        let fr = net
            .frontier(&mut g, st.frontier_prev(), st.frontier_cur(), feature_scale(&inst))
            .unwrap();
        let s = 3;
        let feasible = st.placement_mask(s);
        let mut after = st.packed_mask().to_vec();
        after[s] = true;
        let logp = net.placement_logp(&mut g, &ctx, s, &after, &fr, &feasible).unwrap();
        let v = g.value(logp);
        assert_eq!(v.len(), 60);
        let mut total = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (i, &x) in v.iter().enumerate() {
            if feasible[i] {
                assert!(x.is_finite());
                total += x.exp();
                lo = lo.min(x);
                hi = hi.max(x);
            } else {
                assert!(x.is_masked());
                assert_eq!(x.exp(), 0.0);
            }
        }
        assert!((total - 1.0).abs() < 1e-6);
        assert!(hi - lo < 2.0 * clamp);
    }
}

#[test]
fn single_feasible_placement_gets_probability_one() {
    let model = PolicyModel::new(ModelConfig::scaled(Dims::Two, 4, 1, 16), 11).unwrap();
    // a 4x5 box in a 4-wide bin fits only rotated, at y = 0
    let inst = ProblemInstance::new("s", Dims::Two, 4, 1, vec![bx(4, 5, 1), bx(1, 1, 1)]).unwrap();
    let inst = inst.canonicalized();
    let mut g = Graph::<f64>::new();
    let net = Net::bind(&model, &mut g, false).unwrap();
    let ctx = net.encode(&mut g, &normalize(&inst)).unwrap();
    let st = PackState::new(&inst);
    let fr = net
        .frontier(&mut g, st.frontier_prev(), st.frontier_cur(), feature_scale(&inst))
        .unwrap();
    let feasible = st.placement_mask(0);
    assert_eq!(feasible.iter().filter(|&&m| m).count(), 1);
    let logp = net
        .placement_logp(&mut g, &ctx, 0, &[true, false], &fr, &feasible)
        .unwrap();
    let i = feasible.iter().position(|&m| m).unwrap();
    assert_eq!(g.value(logp)[i], 0.0);
}

#[test]
fn empty_bin_frontier_embedding_is_constant() {
    let model = PolicyModel::new(ModelConfig::scaled(Dims::Three, 10, 10, 16), 12).unwrap();
    let zeros = vec![0u32; 100];
    let get = |len: u32| {
        let mut g = Graph::<f64>::new();
        let net = Net::bind(&model, &mut g, false).unwrap();
        let fr = net.frontier(&mut g, &zeros, &zeros, len).unwrap();
        g.value(fr.f).to_vec()
    };
    assert_eq!(get(20), get(55));
}

#[test]
fn greedy_is_deterministic_and_sampling_reproducible() {
    let model = PolicyModel::new(ModelConfig::scaled(Dims::Three, 10, 10, 16), 13).unwrap();
    let inst = generate(&DatasetSpec::cut10(Dims::Three, 1, 5)).unwrap().remove(0).instance;
    let run = |mode, seed| {
        rollout(&model, &inst, mode, false, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
            .record
    };
    assert_eq!(run(DecodeMode::Greedy, 1), run(DecodeMode::Greedy, 2));
    assert_eq!(run(DecodeMode::Sample, 7), run(DecodeMode::Sample, 7));
}

#[test]
fn fixed_order_variants_follow_their_order() {
    let inst = generate(&DatasetSpec::cut10(Dims::Two, 1, 6)).unwrap().remove(0).instance;
    let canon = inst.canonicalized();
    for (mode, order) in [
        (SequenceMode::Given, (0..10).collect::<Vec<_>>()),
        (SequenceMode::Sorted, binpack_core::heuristics::sorted_order(&canon.boxes)),
    ] {
        let cfg = ModelConfig {
            sequence: mode,
            ..ModelConfig::scaled(Dims::Two, 10, 1, 16)
        };
        let model = PolicyModel::new(cfg, 14).unwrap();
        let r = rollout(&model, &inst, DecodeMode::Sample, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let got: Vec<usize> = r.record.steps.iter().map(|s| s.placement.s).collect();
        assert_eq!(got, order);
    }
}

fn check_full_model(cfg: ModelConfig, inst: ProblemInstance) {
    let model = PolicyModel::new(cfg, 21).unwrap();
    let report = check_episode_gradient(&model, &inst, 300, 3).unwrap();
    assert!(report.coords_checked >= 200);
    assert!(report.max_rel_error <= 1e-3, "{report:?}");
}

#[test]
fn full_model_gradient_matches_finite_differences_3d() {
    let inst = ProblemInstance::new("g3", Dims::Three, 10, 10, vec![bx(3, 4, 5), bx(2, 6, 7), bx(5, 5, 3)]).unwrap();
    check_full_model(toy_config(Dims::Three), inst);
}

#[test]
fn full_model_gradient_matches_finite_differences_2d() {
    let inst = ProblemInstance::new("g2", Dims::Two, 10, 1, vec![bx(3, 4, 1), bx(2, 6, 1), bx(5, 5, 1)]).unwrap();
    check_full_model(toy_config(Dims::Two), inst);
}

#[test]
fn joint_head_support_equals_feasible_pairs() {
    let inst = generate(&DatasetSpec::cut10(Dims::Two, 1, 8)).unwrap().remove(0).instance.canonicalized();
    let cfg = ModelConfig {
        joint_boxes: Some(10),
        ..ModelConfig::scaled(Dims::Two, 10, 1, 16)
    };
    let model = PolicyModel::new(cfg, 15).unwrap();
    let mut g = Graph::<f64>::new();
    let net = Net::bind(&model, &mut g, false).unwrap();
    let ctx = net.encode(&mut g, &normalize(&inst)).unwrap();
    let mut st = PackState::new(&inst);
    st.apply(0, 0, 0).unwrap();
    let fr = net
        .frontier(&mut g, st.frontier_prev(), st.frontier_cur(), feature_scale(&inst))
        .unwrap();
    let actions = 20;
    let mut feasible = vec![false; 10 * actions];
    for s in 1..10 {
        feasible[s * actions..(s + 1) * actions].copy_from_slice(&st.placement_mask(s));
    }
    let logp = net.joint_logp(&mut g, &ctx, st.packed_mask(), &fr, &feasible).unwrap();
    for (i, &v) in g.value(logp).iter().enumerate() {
        assert_eq!(v.exp() > 0.0, feasible[i], "entry {i}");
    }
}
