use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pshape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pshape"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pshape(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    pshape(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = r#"{
  "train": {"epochs": 2, "batch_size": 4, "learning_rate": 0.003, "seed": 1},
  "model": {
    "features": 16, "gsn_hidden": [8, 8],
    "rotation_features": 8, "rotation_gsn_hidden": [8], "rotation_hidden": [8],
    "head_hidden": [8], "latent_dim": 2, "posterior_hidden": [8], "decoder_hidden": [16, 16]
  },
  "transport": {"solver": "exact"}
}"#;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("data");
    ok(&[
        "phantom",
        "--out",
        s(&data),
        "--set",
        "points=24",
        "--set",
        "per_class=8",
        "--seed",
        "3",
    ]);
    let config = root.join("tiny.json");
    fs::write(&config, TINY).unwrap();
    Fixture {
        _dir: dir,
        root,
        data,
        config,
    }
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

#[test]
fn phantom_default_scale_and_seeded_trees() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let stdout = ok(&["phantom", "--out", s(&a)]);
    assert!(stdout.contains("resolved configuration"));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let samples = manifest["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 200);
    let class1 = samples.iter().filter(|e| e["class"] == 1).count();
    assert_eq!(class1, 100);
    assert!(a.join("run.json").is_file());

    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for d in [&b, &c] {
        ok(&[
            "phantom",
            "--out",
            s(d),
            "--seed",
            "7",
            "--set",
            "points=32",
            "--set",
            "per_class=3",
        ]);
    }
    assert_eq!(tree(&b), tree(&c));
}

#[test]
fn invalid_phantom_spec_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"points": 32, "colour": "red"}"#).unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&["phantom", "--spec", s(&spec), "--out", s(&out)]), 2);
    assert_eq!(code(&["phantom", "--out", s(&out), "--set", "points=0"]), 2);
}

#[test]
fn train_resume_generate_and_evaluate() {
    let f = fixture();
    let manifest = f.data.join("manifest.json");
    let run = f.root.join("gen");
    ok(&[
        "train",
        "generative",
        "--config",
        s(&f.config),
        "--manifest",
        s(&manifest),
        "--out",
        s(&run),
    ]);
    let ckpt = run.join("model.psaf");
    assert!(ckpt.is_file());
    let log = fs::read_to_string(run.join("loss.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,align,rec,latent,cls,total,val_total");
    assert_eq!(lines.len(), 3);

    ok(&[
        "train",
        "generative",
        "--config",
        s(&f.config),
        "--manifest",
        s(&manifest),
        "--out",
        s(&run),
        "--resume",
        s(&ckpt),
    ]);
    let log = fs::read_to_string(run.join("loss.csv")).unwrap();
    let epochs: Vec<&str> = log
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(epochs, vec!["1", "2", "3", "4"]);

    let conflict = pshape(&[
        "train",
        "generative",
        "--config",
        s(&f.config),
        "--set",
        "model.latent_dim=3",
        "--manifest",
        s(&manifest),
        "--out",
        s(&f.root.join("conflict")),
        "--resume",
        s(&ckpt),
    ]);
    assert_eq!(conflict.status.code(), Some(2));
    let err = String::from_utf8_lossy(&conflict.stderr);
    assert!(
        err.contains("latent_dim") && err.contains('2') && err.contains('3'),
        "{err}"
    );

    let gen = f.root.join("samples");
    ok(&[
        "generate",
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&gen),
        "--condition",
        "1,0",
        "--count",
        "5",
    ]);
    let plys = fs::read_dir(&gen)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "ply")
        })
        .count();
    assert_eq!(plys, 5);

    let explicit = f.root.join("explicit");
    ok(&[
        "generate",
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&explicit),
        "--condition",
        "0,1",
        "--z",
        "0.3,-0.1",
    ]);
    assert!(explicit.join("sample_0000_s0.ply").is_file());

    let deform = f.root.join("deform");
    ok(&[
        "generate",
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&deform),
        "--condition",
        "1,0",
        "--condition",
        "0,1",
        "--z",
        "0,0",
    ]);
    let text = fs::read_to_string(deform.join("deformation_0000_s0.ply")).unwrap();
    assert!(text.contains("property double quality") || text.contains("quality"));

    assert_eq!(
        code(&["generate", "--checkpoint", s(&ckpt), "--out", s(&gen)]),
        2,
        "conditional model needs a condition"
    );

    let post = ok(&[
        "encode",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&f.data.join("clouds/p0000_s0.ply")),
    ]);
    assert!(post.contains("\"mu\"") && post.contains("\"log_var\""));
}

#[test]
fn discriminative_eval_and_align() {
    let f = fixture();
    let manifest = f.data.join("manifest.json");
    let run = f.root.join("disc");
    ok(&[
        "train",
        "discriminative",
        "--config",
        s(&f.config),
        "--manifest",
        s(&manifest),
        "--out",
        s(&run),
    ]);
    let ckpt = run.join("model.psaf");
    let eval = f.root.join("eval");
    ok(&[
        "eval",
        "classify",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&manifest),
        "--out",
        s(&eval),
        "--config",
        s(&f.config),
    ]);
    let metrics = fs::read_to_string(eval.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,value\naccuracy,"));

    let no_test = pshape(&[
        "eval",
        "classify",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&manifest),
        "--out",
        s(&eval),
        "--config",
        s(&f.config),
        "--set",
        "train.split=[0.5,0.5,0.0]",
    ]);
    assert_eq!(no_test.status.code(), Some(3));

    let aligned = f.root.join("aligned");
    let stdout = ok(&[
        "align",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&f.data.join("clouds/p0001_s0.ply")),
        "--out",
        s(&aligned),
    ]);
    assert!(stdout.contains("theta_deg"));
    assert!(aligned.join("aligned_s0.ply").is_file());
}

#[test]
fn emd_subcommand_reports_cost_and_solver() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "x,y,z\n0,0,0\n1,0,0\n").unwrap();
    fs::write(&b, "x,y,z\n1,0,1\n0,0,1\n").unwrap();
    let out = ok(&["eval", "emd", s(&a), s(&b), "--norm", "l1"]);
    assert!(out.contains("solver exact"), "{out}");
    assert!(out.contains("cost 2\n"), "{out}");
    assert!(out.contains("mean_per_point 1\n"), "{out}");
    let out = ok(&[
        "eval",
        "emd",
        s(&a),
        s(&b),
        "--norm",
        "l2",
        "--solver",
        "approx",
    ]);
    assert!(out.contains("solver approx"), "{out}");

    let c = dir.path().join("c.csv");
    fs::write(&c, "x,y,z\n0,0,0\n").unwrap();
    assert_eq!(code(&["eval", "emd", s(&a), s(&c)]), 3);
    let bad = dir.path().join("bad.xyz");
    fs::write(&bad, "").unwrap();
    assert_eq!(code(&["eval", "emd", s(&a), s(&bad)]), 3);
}

#[test]
fn recon_curve_from_training_and_checkpoints() {
    let f = fixture();
    let manifest = f.data.join("manifest.json");
    let out = f.root.join("curve");
    ok(&[
        "eval",
        "recon-curve",
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
        "--config",
        s(&f.config),
        "--k",
        "1..2",
        "--set",
        "curve.scenarios=[\"single\",\"single-cond\"]",
    ]);
    let csv = fs::read_to_string(out.join("recon_curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("scenario,k_per_structure,mean_emd\nsingle,1,"));

    let again = f.root.join("again");
    ok(&[
        "eval",
        "recon-curve",
        "--manifest",
        s(&manifest),
        "--out",
        s(&again),
        "--config",
        s(&f.config),
        "--k",
        "1,2",
        "--set",
        "curve.scenarios=[\"single\",\"single-cond\"]",
        "--checkpoints",
        s(&out.join("models")),
    ]);
    assert_eq!(
        csv,
        fs::read_to_string(again.join("recon_curve.csv")).unwrap()
    );

    assert_eq!(
        code(&[
            "eval",
            "recon-curve",
            "--manifest",
            s(&manifest),
            "--out",
            s(&again),
            "--config",
            s(&f.config),
            "--k",
            "3",
            "--checkpoints",
            s(&out.join("models")),
        ]),
        2
    );
}

#[test]
fn bad_thread_count_and_unknown_keys_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pshape"))
        .args(["phantom", "--out", s(&dir.path().join("x"))])
        .env("PSHAPE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"train": {"epochz": 1}}"#).unwrap();
    assert_eq!(
        code(&[
            "train",
            "discriminative",
            "--config",
            s(&cfg),
            "--manifest",
            "m.json",
            "--out",
            s(&dir.path().join("o")),
        ]),
        2
    );
}
