use fracnet_core::graph::{Graph, GraphTemplate, NormStats, Target};
use fracnet_core::model::{ar_step, count_params, rgnn_step, rollout_ar, rollout_rgnn, GnnModel, GnnSpec};
use fracnet_core::nn::{grad_check, GradCheckConfig, ParamStore};
use fracnet_core::sim::ReservoirState;
use fracnet_core::training::{loss_term, sequence_loss, sequence_loss_grad, Feed};
use fracnet_core::verify;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy() -> (GraphTemplate, NormStats, Vec<Vec<f64>>) {
    verify::toy_graph_problem().unwrap()
}

fn small_spec(recurrent: bool) -> GnnSpec {
    GnnSpec::new(Target::Saturation, 5, 2, recurrent)
}

fn perturbed(spec: GnnSpec, seed: u64) -> (GnnModel, ParamStore) {
    let (m, mut p) = GnnModel::initialized(spec, seed).unwrap();
    // Move layer-norm shifts and biases off their init values so every path
    // carries signal.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for v in p.data.iter_mut() {
        *v += 0.05 * rng.random_range(-1.0..1.0);
    }
    (m, p)
}

#[test]
fn parameter_counts_match_reported_totals() {
    let cases = [
        (Target::Pressure, false, 188_201),
        (Target::Saturation, false, 184_753),
        (Target::Pressure, true, 214_441),
        (Target::Saturation, true, 222_385),
    ];
    for (target, recurrent, expected) in cases {
        let spec = GnnSpec::full_size(target, recurrent);
        assert_eq!(count_params(&spec), expected);
        let (_, store) = GnnModel::new(spec).unwrap();
        assert_eq!(store.count(), expected);
        assert_eq!(store.len(), expected);
    }
}

#[test]
fn counts_agree_with_enumeration_for_other_sizes() {
    for h in [1, 3, 16] {
        for l in [1, 2, 4] {
            for r in [false, true] {
                let spec = GnnSpec::new(Target::Pressure, h, l, r);
                assert_eq!(GnnModel::new(spec).unwrap().1.count(), count_params(&spec));
            }
        }
    }
}

#[test]
fn invalid_spec_is_rejected() {
    assert!(GnnModel::new(GnnSpec::new(Target::Pressure, 0, 2, false)).is_err());
    assert!(GnnModel::new(GnnSpec::new(Target::Pressure, 4, 0, false)).is_err());
}

#[test]
fn embeddings_are_permutation_equivariant() {
    let (template, stats, fields) = toy();
    let (model, p) = perturbed(small_spec(false), 1);
    let mut g = stats.normalized_base(&template);
    stats.set_field(&mut g, &fields[1]);
    let perm = [3, 7, 0, 5, 1, 6, 2, 4];
    let (v, _) = model.embed(&p.data, &g).unwrap();
    let (vp, _) = model.embed(&p.data, &g.permuted(&perm)).unwrap();
    for i in 0..8 {
        for k in 0..model.spec.hidden {
            let (a, b) = (v[[i, k]], vp[[perm[i], k]]);
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "node {i}: {a} vs {b}");
        }
    }
}

#[test]
fn zeroed_processor_outputs_give_identity_blocks() {
    let (template, stats, fields) = toy();
    let spec = small_spec(false);
    let (model, mut p) = GnnModel::initialized(spec, 2).unwrap();
    for d in model.processor_output_layers() {
        p.fill(d.w, 0.0);
        p.fill(d.b, 0.0);
    }
    let mut g = stats.normalized_base(&template);
    stats.set_field(&mut g, &fields[0]);
    let (v, _) = model.embed(&p.data, &g).unwrap();
    let encoded = model.node_encoder.apply(&p.data, g.nodes.clone());
    assert_eq!(v, encoded);
}

#[test]
fn isolated_node_is_updated_from_its_own_state() {
    let (template, stats, fields) = toy();
    let (model, p) = perturbed(small_spec(false), 3);
    let mut g = stats.normalized_base(&template);
    stats.set_field(&mut g, &fields[0]);
    // Drop every edge touching node 0.
    let keep: Vec<usize> = (0..g.n_edges())
        .filter(|&k| g.senders[k] != 0 && g.receivers[k] != 0)
        .collect();
    let cut = Graph {
        nodes: g.nodes.clone(),
        edges: g.edges.select(ndarray::Axis(0), &keep),
        senders: keep.iter().map(|&k| g.senders[k]).collect(),
        receivers: keep.iter().map(|&k| g.receivers[k]).collect(),
        step: 0,
    };
    let (v, _) = model.embed(&p.data, &cut).unwrap();
    // Manual evaluation of node 0: aggregation is the zero vector.
    let h = model.spec.hidden;
    let x0 = cut.nodes.slice(ndarray::s![0..1, ..]).to_owned();
    let mut v0 = model.node_encoder.apply(&p.data, x0);
    for b in &model.processors {
        let mut input = ndarray::Array2::zeros((1, 2 * h));
        input.slice_mut(ndarray::s![.., 0..h]).assign(&v0);
        v0 = &v0 + &b.node.apply(&p.data, input);
    }
    for k in 0..h {
        assert!((v[[0, k]] - v0[[0, k]]).abs() < 1e-12);
    }
    assert!(v0.iter().all(|x| x.is_finite()));
}

#[test]
fn zero_decoder_keeps_the_field() {
    let (template, stats, fields) = toy();
    let (model, mut p) = GnnModel::initialized(small_spec(false), 4).unwrap();
    let d = model.decoder_output_layer();
    p.fill(d.w, 0.0);
    p.fill(d.b, 0.0);
    let mut g = stats.normalized_base(&template);
    assert_eq!(ar_step(&model, &p.data, &stats, &mut g, &fields[2]).unwrap(), fields[2]);
    let (delta, _, _) = model.step(&p.data, &g, None).unwrap();
    assert_eq!(delta.len(), 8);
}

#[test]
fn zero_model_rollout_is_constant() {
    let (template, stats, fields) = toy();
    let (model, p) = GnnModel::new(small_spec(false)).unwrap();
    let base = stats.normalized_base(&template);
    let out = rollout_ar(&model, &p.data, &stats, &base, &fields[0], 4).unwrap();
    assert_eq!(out.len(), 4);
    assert!(out.iter().all(|y| *y == fields[0]));
}

#[test]
fn rollout_is_repeated_ar_step() {
    let (template, stats, fields) = toy();
    let (model, p) = perturbed(small_spec(false), 5);
    let base = stats.normalized_base(&template);
    let out = rollout_ar(&model, &p.data, &stats, &base, &fields[0], 3).unwrap();
    let mut g = base.clone();
    let mut y = fields[0].clone();
    for pred in &out {
        y = ar_step(&model, &p.data, &stats, &mut g, &y).unwrap();
        assert_eq!(&y, pred);
    }
    let one = rollout_ar(&model, &p.data, &stats, &base, &fields[0], 1).unwrap();
    assert_eq!(one[0], out[0]);
    assert!(rollout_ar(&model, &p.data, &stats, &base, &fields[0], 0).is_err());
}

#[test]
fn recurrent_zero_memory_and_zero_lstm() {
    let (template, stats, fields) = toy();
    let (model, mut p) = GnnModel::initialized(small_spec(true), 6).unwrap();
    for l in &model.lstm {
        for s in [l.wx, l.wh, l.bx, l.bh] {
            p.fill(s, 0.0);
        }
    }
    for d in &model.decoder.dense {
        p.fill(d.b, 0.0);
    }
    let mut g = stats.normalized_base(&template);
    let (y1, mem) = rgnn_step(&model, &p.data, &stats, &mut g, &fields[0], None).unwrap();
    assert!(mem.h.iter().chain(&mem.c).all(|a| a.iter().all(|&v| v == 0.0)));
    assert_eq!(y1, fields[0]);
    let base = stats.normalized_base(&template);
    let out = rollout_rgnn(&model, &p.data, &stats, &base, &[], &fields[0], 3).unwrap();
    assert!(out.iter().all(|y| *y == fields[0]));
}

#[test]
fn warmup_builds_memory_without_predictions() {
    let (template, stats, fields) = toy();
    let (model, p) = perturbed(small_spec(true), 7);
    let base = stats.normalized_base(&template);
    let warm: Vec<&[f64]> = fields[..3].iter().map(Vec::as_slice).collect();
    let out = rollout_rgnn(&model, &p.data, &stats, &base, &warm, &fields[3], 2).unwrap();
    assert_eq!(out.len(), 2);
    let mut g = base.clone();
    let mut mem = None;
    for y in &warm {
        mem = Some(rgnn_step(&model, &p.data, &stats, &mut g, y, mem.as_ref()).unwrap().1);
    }
    let (a, mem) = rgnn_step(&model, &p.data, &stats, &mut g, &fields[3], mem.as_ref()).unwrap();
    let (b, _) = rgnn_step(&model, &p.data, &stats, &mut g, &a, Some(&mem)).unwrap();
    assert_eq!(out, vec![a, b]);
    // Memory matters: without warm-up the prediction differs.
    let cold = rollout_rgnn(&model, &p.data, &stats, &base, &[], &fields[3], 1).unwrap();
    assert_ne!(cold[0], out[0]);
}

#[test]
fn loss_term_examples() {
    assert_eq!(loss_term(&[0.3, 0.1], &[0.3, 0.1]), 0.0);
    for n in [1, 7, 100] {
        let a = vec![2.0; n];
        let b = vec![1.0; n];
        assert_eq!(loss_term(&a, &b), 2.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a: Vec<f64> = (0..50).map(|_| rng.random()).collect();
    let b: Vec<f64> = (0..50).map(|_| rng.random()).collect();
    let l2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    assert!((loss_term(&a, &b) - (l2 * l2 / 50.0 + l1 / 50.0)).abs() < 1e-14);
}

fn check_sequence_gradient(recurrent: bool, steps: usize, feed: Feed, seed: u64) -> f64 {
    let (template, stats, fields) = toy();
    let (model, p) = perturbed(small_spec(recurrent), seed);
    let base = stats.normalized_base(&template);
    let truth: Vec<&[f64]> = fields[..=steps].iter().map(Vec::as_slice).collect();
    let mut g = p.zeros_like();
    let l = sequence_loss_grad(&model, &p.data, &stats, &base, &truth, feed, &mut g).unwrap();
    assert_eq!(l, sequence_loss(&model, &p.data, &stats, &base, &truth, feed).unwrap());
    let report = grad_check(
        |q| sequence_loss(&model, q, &stats, &base, &truth, feed).unwrap(),
        &p.data,
        &g,
        GradCheckConfig {
            step: 1e-5,
            ..GradCheckConfig::default()
        },
    );
    assert_eq!(report.checked, p.len());
    report.max_rel_error
}

#[test]
fn one_step_gnn_gradient_matches_finite_differences() {
    let e = check_sequence_gradient(false, 1, Feed::TeacherForced, 10);
    assert!(e < 1e-5, "{e}");
}

#[test]
fn gnn_rollout_gradient_matches_finite_differences() {
    let e = check_sequence_gradient(false, 3, Feed::Rollout, 11);
    assert!(e < 1e-5, "{e}");
}

#[test]
fn recurrent_rollout_gradient_matches_finite_differences() {
    let e = check_sequence_gradient(true, 3, Feed::Rollout, 12);
    assert!(e < 1e-5, "{e}");
    let e = check_sequence_gradient(true, 3, Feed::TeacherForced, 13);
    assert!(e < 1e-5, "{e}");
}

#[test]
fn single_step_rollout_equals_teacher_forcing() {
    let (template, stats, fields) = toy();
    let (model, p) = perturbed(small_spec(false), 14);
    let base = stats.normalized_base(&template);
    let truth: Vec<&[f64]> = fields[..2].iter().map(Vec::as_slice).collect();
    assert_eq!(
        sequence_loss(&model, &p.data, &stats, &base, &truth, Feed::Rollout).unwrap(),
        sequence_loss(&model, &p.data, &stats, &base, &truth, Feed::TeacherForced).unwrap()
    );
}

#[test]
fn pressure_state_graph_round_trip() {
    let (template, _, _) = toy();
    let st = ReservoirState::uniform(8, 1e7, 0.2);
    let g = template.graph(&st, Target::Pressure).unwrap();
    assert!(g.field().iter().all(|&v| v == 1e7));
}
