use fracnet_core::nn::{grad_check, GradCheckConfig, LayerNorm, LstmLayer, Mlp, MlpSpec, ParamStore, LAYER_NORM_EPS};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Weighted sum of the outputs, so every output entry gets a distinct weight.
fn probe_loss(y: &Array2<f64>, w: &Array2<f64>) -> f64 {
    (y * w).sum()
}

fn mlp(input: usize, hidden: usize, output: usize, layer_norm: bool) -> (Mlp, ParamStore) {
    let mut store = ParamStore::new();
    let spec = MlpSpec {
        input,
        hidden,
        output,
        layers: 3,
        layer_norm,
    };
    let m = Mlp::new(&mut store, "mlp", spec).unwrap();
    (m, store)
}

#[test]
fn mlp_parameter_counts() {
    let (m, store) = mlp(7, 40, 40, false);
    assert_eq!(store.len(), 3600);
    assert_eq!(m.spec.param_count(), 3600);
    let (m, store) = mlp(7, 40, 40, true);
    assert_eq!(store.len(), 3680);
    assert_eq!(store.count(), 3680);
    assert_eq!(m.spec.param_count(), 3680);
    let mut s = ParamStore::new();
    LayerNorm::new(&mut s, "ln", 40);
    assert_eq!(s.len(), 80);
}

#[test]
fn zero_mlp_outputs_zero() {
    let (m, store) = mlp(5, 8, 3, false);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = m.apply(&store.data, random_matrix(6, 5, &mut rng));
    assert!(y.iter().all(|&v| v == 0.0));
}

#[test]
fn invalid_mlp_is_rejected() {
    let mut store = ParamStore::new();
    let spec = MlpSpec {
        input: 3,
        hidden: 4,
        output: 2,
        layers: 1,
        layer_norm: false,
    };
    assert!(Mlp::new(&mut store, "m", spec).is_err());
}

fn check_mlp_gradients(layer_norm: bool, seed: u64) -> f64 {
    let (m, mut store) = mlp(4, 6, 3, layer_norm);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    m.init(&mut store, &mut rng);
    // Perturb the norm parameters away from their trivial init.
    for v in store.data.iter_mut() {
        *v += 0.1 * rng.random_range(-1.0..1.0);
    }
    let x = random_matrix(5, 4, &mut rng);
    let w = random_matrix(5, 3, &mut rng);
    let (y, cache) = m.forward(&store.data, x.clone());
    let _ = probe_loss(&y, &w);
    let mut g = store.zeros_like();
    let dx = m.backward(&store.data, &cache, w.clone(), &mut g, true).unwrap();
    let loss = |p: &[f64]| probe_loss(&m.apply(p, x.clone()), &w);
    let cfg = GradCheckConfig {
        step: 1e-5,
        ..Default::default()
    };
    let report = grad_check(loss, &store.data, &g, cfg);
    // Input gradient, by the same oracle.
    let flat_x: Vec<f64> = x.iter().copied().collect();
    let loss_x = |xs: &[f64]| {
        let xm = Array2::from_shape_vec((5, 4), xs.to_vec()).unwrap();
        probe_loss(&m.apply(&store.data, xm), &w)
    };
    let flat_dx: Vec<f64> = dx.iter().copied().collect();
    let rx = grad_check(loss_x, &flat_x, &flat_dx, cfg);
    report.max_rel_error.max(rx.max_rel_error)
}

#[test]
fn mlp_gradients_match_finite_differences() {
    for seed in 0..4 {
        let e = check_mlp_gradients(false, seed);
        assert!(e < 1e-6, "seed {seed}: {e}");
        let e = check_mlp_gradients(true, seed);
        assert!(e < 1e-6, "layer norm, seed {seed}: {e}");
    }
}

#[test]
fn constant_row_normalizes_to_zero() {
    let mut s = ParamStore::new();
    let ln = LayerNorm::new(&mut s, "ln", 4);
    ln.init(&mut s);
    let (y, _) = ln.forward(&s.data, Array2::from_elem((2, 4), 3.5));
    assert!(y.iter().all(|&v| v == 0.0));
}

proptest! {
    #[test]
    fn layer_norm_standardizes_rows(seed in any::<u64>(), width in 2usize..30, scale in 1e-2f64..1e2) {
        let mut s = ParamStore::new();
        let ln = LayerNorm::new(&mut s, "ln", width);
        ln.init(&mut s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(3, width, &mut rng) * scale;
        let (y, _) = ln.forward(&s.data, x.clone());
        for (row, xr) in y.rows().into_iter().zip(x.rows()) {
            let w = width as f64;
            let mean = row.sum() / w;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w;
            let xm = xr.sum() / w;
            let v_in = xr.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / w;
            prop_assert!(mean.abs() < 1e-12);
            // The epsilon shrinks the variance to v / (v + eps).
            prop_assert!((var - v_in / (v_in + LAYER_NORM_EPS)).abs() < 1e-12);
            if v_in > 10.0 {
                prop_assert!((var - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn lstm_zero_parameters() {
    let mut s = ParamStore::new();
    let l = LstmLayer::new(&mut s, "lstm", 3, 4);
    let (h, c, _) = l.forward(
        &s.data,
        Array2::zeros((2, 3)),
        Array2::zeros((2, 4)),
        Array2::zeros((2, 4)),
    );
    assert!(h.iter().all(|&v| v == 0.0));
    assert!(c.iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_parameter_count() {
    let mut s = ParamStore::new();
    LstmLayer::new(&mut s, "lstm", 40, 40);
    assert_eq!(s.len(), 13_120);
    assert_eq!(LstmLayer::param_count(40, 40), 13_120);
}

#[test]
fn lstm_pure_memory_configuration() {
    // Saturate the gates through the biases: f = 1, i = o = 0.
    let hidden = 3;
    let mut s = ParamStore::new();
    let l = LstmLayer::new(&mut s, "lstm", 2, hidden);
    {
        let bx = &mut s.data[l.bx.range()];
        for k in 0..hidden {
            bx[k] = -1e3;
            bx[hidden + k] = 1e3;
            bx[3 * hidden + k] = -1e3;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c_prev = random_matrix(4, hidden, &mut rng);
    let (h, c, _) = l.forward(
        &s.data,
        random_matrix(4, 2, &mut rng),
        random_matrix(4, hidden, &mut rng),
        c_prev.clone(),
    );
    assert_eq!(c, c_prev);
    assert!(h.iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_gates_stay_in_unit_interval_and_states_finite() {
    let mut s = ParamStore::new();
    let l = LstmLayer::new(&mut s, "lstm", 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    l.init(&mut s, &mut rng);
    let big = random_matrix(4, 2, &mut rng) * 1e4;
    let (h, c, _) = l.forward(&s.data, big, Array2::zeros((4, 3)), Array2::zeros((4, 3)));
    assert!(h.iter().all(|v| v.abs() <= 1.0));
    assert!(c.iter().all(|v| v.is_finite()));
}

#[test]
fn lstm_gradients_through_three_steps() {
    let (input, hidden, rows) = (3, 4, 5);
    let mut s = ParamStore::new();
    let l1 = LstmLayer::new(&mut s, "l1", input, hidden);
    let l2 = LstmLayer::new(&mut s, "l2", hidden, hidden);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    l1.init(&mut s, &mut rng);
    l2.init(&mut s, &mut rng);
    let xs: Vec<Array2<f64>> = (0..3).map(|_| random_matrix(rows, input, &mut rng)).collect();
    let ws: Vec<Array2<f64>> = (0..3).map(|_| random_matrix(rows, hidden, &mut rng)).collect();
    let run = |p: &[f64]| {
        let z = || Array2::<f64>::zeros((rows, hidden));
        let (mut h1, mut c1, mut h2, mut c2) = (z(), z(), z(), z());
        let mut loss = 0.0;
        let mut caches = Vec::new();
        for t in 0..3 {
            let (a, b, k1) = l1.forward(p, xs[t].clone(), h1, c1);
            let (d, e, k2) = l2.forward(p, a.clone(), h2, c2);
            loss += probe_loss(&d, &ws[t]);
            h1 = a;
            c1 = b;
            h2 = d;
            c2 = e;
            caches.push((k1, k2));
        }
        (loss, caches)
    };
    let (_, caches) = run(&s.data);
    let mut g = s.zeros_like();
    let z = || Array2::<f64>::zeros((rows, hidden));
    let (mut dh1, mut dc1, mut dh2, mut dc2) = (z(), z(), z(), z());
    for t in (0..3).rev() {
        let dh_top = &dh2 + &ws[t];
        let (dx2, dhp2, dcp2) = l2.backward(&s.data, &caches[t].1, dh_top.view(), dc2.view(), &mut g);
        let dh_low = &dh1 + &dx2;
        let (_, dhp1, dcp1) = l1.backward(&s.data, &caches[t].0, dh_low.view(), dc1.view(), &mut g);
        dh2 = dhp2;
        dc2 = dcp2;
        dh1 = dhp1;
        dc1 = dcp1;
    }
    let cfg = GradCheckConfig {
        step: 1e-5,
        ..Default::default()
    };
    let report = grad_check(|p| run(p).0, &s.data, &g, cfg);
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn grad_check_on_quadratic() {
    let a = [1.0, -2.0, 0.5, 3.0];
    let x = [0.3, 0.1, -0.7, 2.0];
    let loss = |p: &[f64]| p.iter().zip(&a).map(|(p, a)| a * p * p).sum::<f64>();
    let grad: Vec<f64> = x.iter().zip(&a).map(|(x, a)| 2.0 * a * x).collect();
    let r = grad_check(loss, &x, &grad, GradCheckConfig::default());
    assert_eq!(r.checked, 4);
    assert!(r.max_rel_error < 1e-8, "{r:?}");
    let wrong: Vec<f64> = grad.iter().map(|g| g * 1.01).collect();
    assert!(grad_check(loss, &x, &wrong, GradCheckConfig::default()).max_rel_error > 1e-3);
}

#[test]
fn grad_check_samples_at_most_the_budget() {
    let x = vec![0.5; 100];
    let grad: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let cfg = GradCheckConfig {
        max_params: 10,
        ..Default::default()
    };
    let r = grad_check(|p| p.iter().map(|v| v * v).sum(), &x, &grad, cfg);
    assert_eq!(r.checked, 10);
}
