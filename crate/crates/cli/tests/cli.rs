use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn fracnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracnet"))
        .args(args)
        .env("FRACNET_THREADS", "1")
        .output()
        .expect("spawn fracnet")
}

fn ok(args: &[&str]) -> String {
    let out = fracnet(args);
    assert!(
        out.status.success(),
        "fracnet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ck = dir.path().join("ck");
    let out = fracnet(&[
        "train",
        "--data",
        p(&data),
        "--model",
        "gnn",
        "--target",
        "saturation",
        "--stage",
        "2",
        "--ckpt-out",
        p(&ck),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ckpt-in"));

    assert_eq!(fracnet(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        fracnet(&["datagen", "--preset", "nope", "--out", p(&data)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        fracnet(&[
            "train",
            "--data",
            p(&data),
            "--model",
            "gnn",
            "--target",
            "saturation",
            "--stage",
            "3",
            "--ckpt-out",
            p(&ck)
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(fracnet(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fracnet(&[
        "train",
        "--data",
        p(&dir.path().join("absent")),
        "--model",
        "gnn",
        "--target",
        "pressure",
        "--stage",
        "1",
        "--ckpt-out",
        p(&dir.path().join("ck")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn datagen_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let args = [
        "datagen",
        "--preset",
        "smoke",
        "--out",
        p(&data),
        "--n",
        "3",
        "--seed",
        "11",
    ];
    ok(&args);
    let manifest = fs::read(data.join("manifest.json")).unwrap();
    let states = fs::read(data.join("real_0000/states.bin")).unwrap();
    let out = fracnet(&args);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("present"));
    assert_eq!(fs::read(data.join("manifest.json")).unwrap(), manifest);
    assert_eq!(fs::read(data.join("real_0000/states.bin")).unwrap(), states);

    let other = fracnet(&[
        "datagen",
        "--preset",
        "smoke",
        "--out",
        p(&data),
        "--n",
        "3",
        "--seed",
        "12",
    ]);
    assert_eq!(other.status.code(), Some(1));
}

#[test]
fn smoke_pipeline_end_to_end() {
    let clock = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&["datagen", "--preset", "smoke", "--out", p(&data)]);

    let g1 = d.join("g1");
    let g2 = d.join("g2");
    let r1 = d.join("r1");
    let train = |model: &str, stage: &str, out: &Path, extra: &[&str]| {
        let mut args = vec![
            "train",
            "--data",
            p(&data),
            "--model",
            model,
            "--target",
            "saturation",
            "--stage",
            stage,
            "--ckpt-out",
            p(out),
            "--quiet",
        ];
        args.extend_from_slice(extra);
        ok(&args)
    };
    train("gnn", "1", &g1, &[]);
    train("gnn", "2", &g2, &["--ckpt-in", p(&g1)]);
    train("rgnn", "1", &r1, &[]);

    // Checkpoint metadata echoes the configuration it was trained with.
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(g2.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["train"]["stage"], 2);
    assert_eq!(meta["spec"]["hidden"], 8);
    assert_eq!(meta["spec"]["processors"], 2);
    assert_eq!(meta["spec"]["recurrent"], false);
    let r1_meta: serde_json::Value = serde_json::from_slice(&fs::read(r1.join("meta.json")).unwrap()).unwrap();
    assert_eq!(r1_meta["spec"]["recurrent"], true);

    // A recurrent checkpoint cannot seed a plain stage-2 run.
    let mismatch = fracnet(&[
        "train",
        "--data",
        p(&data),
        "--model",
        "gnn",
        "--target",
        "saturation",
        "--stage",
        "2",
        "--ckpt-in",
        p(&r1),
        "--ckpt-out",
        p(&d.join("bad")),
        "--quiet",
    ]);
    assert_eq!(mismatch.status.code(), Some(1));

    let ev = d.join("ev");
    let table = ok(&[
        "eval",
        "--data",
        p(&data),
        "--ckpt",
        p(&g1),
        p(&g2),
        p(&r1),
        "--out",
        p(&ev),
    ]);
    assert!(table.contains("param audit gnn/saturation stage 1"));
    assert!(table.contains("persistence"));
    for f in ["mrae_per_step.csv", "summary.json", "production.csv", "results.json"] {
        assert!(ev.join(f).is_file(), "{f} missing");
    }
    let mut rdr = csv::Reader::from_path(ev.join("mrae_per_step.csv")).unwrap();
    let rows = rdr.records().count();
    // 3 models + persistence, 2 tasks, 2 test realizations, 10 steps
    assert_eq!(rows, 4 * 2 * 2 * 10);

    let rep = d.join("rep");
    ok(&["report", "--results", p(&ev), "--out", p(&rep), "--data", p(&data)]);
    assert_eq!(
        fs::read(rep.join("mrae_per_step.csv")).unwrap(),
        fs::read(ev.join("mrae_per_step.csv")).unwrap()
    );

    // Truth lies in [0, 1], so clipping can only shrink every error.
    let evc = d.join("evc");
    ok(&[
        "eval",
        "--data",
        p(&data),
        "--ckpt",
        p(&g1),
        "--task",
        "generalization",
        "--out",
        p(&evc),
        "--clamp",
    ]);
    let results: serde_json::Value = serde_json::from_slice(&fs::read(evc.join("results.json")).unwrap()).unwrap();
    let mean = |model: &str| -> f64 {
        let r = results
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["model"] == model)
            .unwrap();
        let errs: Vec<f64> = r["trajectories"]
            .as_array()
            .unwrap()
            .iter()
            .flat_map(|t| t["errors"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()))
            .collect();
        errs.iter().sum::<f64>() / errs.len() as f64
    };
    assert!(mean("gnn-clamped") <= mean("gnn"));

    let verified = ok(&["verify", "--ckpt", p(&g1)]);
    assert!(verified.contains("all "));
    let params = g1.join("params.bin");
    let mut bytes = fs::read(&params).unwrap();
    bytes[17] ^= 0x01;
    fs::write(&params, bytes).unwrap();
    let broken = fracnet(&["verify", "--ckpt", p(&g1)]);
    assert_eq!(broken.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&broken.stdout).contains("FAIL checkpoint"));
    let refused = fracnet(&["eval", "--data", p(&data), "--ckpt", p(&g1), "--out", p(&d.join("ev2"))]);
    assert_eq!(refused.status.code(), Some(1));

    assert!(
        clock.elapsed().as_secs() < 600,
        "smoke profile took {:?}",
        clock.elapsed()
    );
}
