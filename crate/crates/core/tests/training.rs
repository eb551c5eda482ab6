use fracnet_core::edfm::{CartesianSpec, EdfmGrid};
use fracnet_core::graph::{GraphTemplate, NormFitter, NormStats, Target};
use fracnet_core::model::{GnnModel, GnnSpec};
use fracnet_core::sim::{simulate, SimConfig};
use fracnet_core::training::{evaluate_loss, sequence_loss, train, Feed, TrainConfig, TrainSample};

/// 4 × 4 quarter five-spot: sixteen cells, no fractures.
fn toy_samples(target: Target, n: usize) -> (Vec<TrainSample>, NormStats) {
    let mut cfg = SimConfig::default();
    cfg.schedule.n_steps = 12;
    cfg.schedule.n_export = 12;
    let mut raw = Vec::new();
    for r in 0..n {
        let grid = EdfmGrid::cartesian(CartesianSpec {
            nx: 4,
            ny: 4,
            extent: [100.0, 100.0, 5.0],
            porosity: 0.2,
            perm_md: 20.0 + 15.0 * r as f64,
        })
        .unwrap();
        let traj = simulate(r as u64, grid.clone(), &cfg).unwrap();
        let fields: Vec<Vec<f64>> = traj.states.iter().map(|s| target.field(s).to_vec()).collect();
        raw.push((GraphTemplate::new(&grid).unwrap(), fields));
    }
    let mut fitter = NormFitter::new(target);
    for (t, f) in &raw {
        fitter.add_static(t);
        for w in f.windows(2) {
            fitter.add_field(&w[0]);
            fitter.add_delta(&w[0], &w[1]);
        }
    }
    let stats = fitter.finish().unwrap();
    let samples = raw
        .into_iter()
        .enumerate()
        .map(|(r, (t, fields))| TrainSample {
            realization: r as u64,
            base: stats.normalized_base(&t),
            fields,
        })
        .collect();
    (samples, stats)
}

fn quick(stage: u8, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        validate_every: 2,
        seed,
        ..if stage == 1 {
            TrainConfig::stage1()
        } else {
            TrainConfig::stage2()
        }
    }
}

#[test]
fn defaults_follow_the_two_stage_schedule() {
    let s1 = TrainConfig::stage1();
    assert_eq!(
        (
            s1.lr,
            s1.weight_decay,
            s1.batch_size,
            s1.epochs,
            s1.validate_every,
            s1.n_steps
        ),
        (1e-3, 5e-3, 4, 200, 5, 10)
    );
    let s2 = TrainConfig::stage2();
    assert_eq!((s2.stage, s2.lr, s2.epochs), (2, 1e-4, 100));
    assert!(TrainConfig { stage: 3, ..s1 }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..s1 }.validate().is_err());
}

#[test]
fn epoch_zero_is_the_untrained_model() {
    let (samples, stats) = toy_samples(Target::Saturation, 3);
    let (model, mut p) = GnnModel::initialized(GnnSpec::new(Target::Saturation, 6, 2, false), 0).unwrap();
    let cfg = quick(1, 2, 0);
    let before = evaluate_loss(&model, &p.data, &stats, &samples[..2], &cfg).unwrap();
    let val = evaluate_loss(&model, &p.data, &stats, &samples[2..], &cfg).unwrap();
    let report = train(&model, &mut p, &stats, &samples[..2], &samples[2..], &cfg, |_, _, _| {}).unwrap();
    assert_eq!(report.train_loss[0], before);
    assert_eq!(report.val_loss[0], (0, val));
    assert_eq!(report.train_loss.len(), 3);
}

#[test]
fn zero_learning_rate_freezes_everything() {
    let (samples, stats) = toy_samples(Target::Pressure, 3);
    for recurrent in [false, true] {
        let (model, mut p) = GnnModel::initialized(GnnSpec::new(Target::Pressure, 5, 2, recurrent), 1).unwrap();
        let init = p.data.clone();
        let cfg = TrainConfig {
            lr: 0.0,
            ..quick(1, 4, 3)
        };
        let report = train(&model, &mut p, &stats, &samples[..2], &samples[2..], &cfg, |_, _, _| {}).unwrap();
        assert_eq!(p.data, init);
        assert!(
            report.train_loss.iter().all(|&l| l == report.train_loss[0]),
            "{:?}",
            report.train_loss
        );
        assert!(report.val_loss.iter().all(|&(_, l)| l == report.val_loss[0].1));
    }
}

#[test]
fn training_is_reproducible() {
    let (samples, stats) = toy_samples(Target::Saturation, 3);
    let run = || {
        let (model, mut p) = GnnModel::initialized(GnnSpec::new(Target::Saturation, 6, 2, false), 4).unwrap();
        let report = train(
            &model,
            &mut p,
            &stats,
            &samples[..2],
            &samples[2..],
            &quick(1, 3, 11),
            |_, _, _| {},
        )
        .unwrap();
        (report.train_loss, report.val_loss, p.data)
    };
    assert_eq!(run(), run());
}

#[test]
fn selected_checkpoint_reproduces_its_validation_loss() {
    let (samples, stats) = toy_samples(Target::Saturation, 3);
    let (model, mut p) = GnnModel::initialized(GnnSpec::new(Target::Saturation, 6, 2, false), 5).unwrap();
    let cfg = quick(1, 6, 2);
    let report = train(&model, &mut p, &stats, &samples[..2], &samples[2..], &cfg, |_, _, _| {}).unwrap();
    let min = report.val_loss.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    assert_eq!(report.best_val_loss, min);
    assert!(report.val_loss.contains(&(report.best_epoch, min)));
    assert_eq!(
        evaluate_loss(&model, &p.data, &stats, &samples[2..], &cfg).unwrap(),
        min
    );
    // Validation happens on the period and at the final epoch.
    let epochs: Vec<usize> = report.val_loss.iter().map(|v| v.0).collect();
    assert_eq!(epochs, vec![0, 2, 4, 6]);
}

#[test]
fn stage_two_collapses_to_stage_one_for_one_step() {
    let (samples, stats) = toy_samples(Target::Saturation, 1);
    let (model, p) = GnnModel::initialized(GnnSpec::new(Target::Saturation, 6, 2, false), 6).unwrap();
    let s1 = TrainConfig {
        n_steps: 1,
        ..quick(1, 1, 0)
    };
    let s2 = TrainConfig {
        n_steps: 1,
        ..quick(2, 1, 0)
    };
    assert_eq!(
        evaluate_loss(&model, &p.data, &stats, &samples, &s1).unwrap(),
        evaluate_loss(&model, &p.data, &stats, &samples, &s2).unwrap()
    );
    let truth: Vec<&[f64]> = samples[0].fields[..2].iter().map(Vec::as_slice).collect();
    assert_eq!(
        sequence_loss(&model, &p.data, &stats, &samples[0].base, &truth, Feed::Rollout).unwrap(),
        evaluate_loss(&model, &p.data, &stats, &samples, &s1).unwrap()
    );
}

#[test]
fn short_sequences_are_rejected() {
    let (mut samples, stats) = toy_samples(Target::Saturation, 2);
    samples[0].fields.truncate(5);
    let (model, mut p) = GnnModel::initialized(GnnSpec::new(Target::Saturation, 4, 1, false), 0).unwrap();
    assert!(train(
        &model,
        &mut p,
        &stats,
        &samples[..1],
        &samples[1..],
        &quick(1, 1, 0),
        |_, _, _| {}
    )
    .is_err());
}

#[test]
fn early_training_loss_decreases() {
    let (samples, stats) = toy_samples(Target::Saturation, 4);
    for seed in 0..3 {
        let (model, mut p) = GnnModel::initialized(GnnSpec::new(Target::Saturation, 8, 2, false), seed).unwrap();
        let r = train(
            &model,
            &mut p,
            &stats,
            &samples[..3],
            &samples[3..],
            &quick(1, 10, seed),
            |_, _, _| {},
        )
        .unwrap();
        assert!(r.train_loss[10] < 0.95 * r.train_loss[0], "{:?}", r.train_loss);
    }
}

#[test]
fn single_realization_overfits() {
    let (samples, stats) = toy_samples(Target::Saturation, 1);
    let (model, mut p) = GnnModel::initialized(GnnSpec::new(Target::Saturation, 24, 4, false), 0).unwrap();
    let cfg = TrainConfig {
        lr: 2e-3,
        weight_decay: 0.0,
        gamma: 0.993,
        batch_size: 1,
        validate_every: 50,
        ..quick(1, 500, 0)
    };
    let report = train(&model, &mut p, &stats, &samples, &samples, &cfg, |_, _, _| {}).unwrap();
    let best = report.train_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(best < 1e-3, "best training loss {best}");
}
