use std::path::Path;
use std::process::{Command, Output};

use mirrorflow::config::parse_config;
use mirrorflow::diagnostics::{run_diagnostics, DEFAULT_PRUNE_FRACTIONS};
use mirrorflow::flow;
use serde_json::Value;

const CONFIG: &str = r#"
[potential]
kind = "hyperbolic"
lambda = 0.1

[net]
widths = [2, 12, 1]

[data]
generator = "circle"
k = 30
seed = 4

[train]
lr = 0.005
max_steps = 400
log_every = 20
seed = 4

[train.init]
scale = 0.3

[train.rescale]
enabled = true
"#;

fn mirrorflow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mirrorflow"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    dir.join(name).to_str().unwrap().to_string()
}

fn assert_close(a: &Value, b: &Value, path: &str) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{path}: {x} vs {y}");
        }
        (Value::Array(x), Value::Array(y)) => {
            assert_eq!(x.len(), y.len(), "{path}");
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                assert_close(u, v, &format!("{path}[{i}]"));
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>(), "{path}");
            for (k, u) in x {
                assert_close(u, &y[k], &format!("{path}.{k}"));
            }
        }
        _ => assert_eq!(a, b, "{path}"),
    }
}

#[test]
fn train_then_diagnose_matches_in_process_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", CONFIG);
    let out = mirrorflow(&["train", "--config", &cfg, "--out", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("step 400"));
    for f in ["config.toml", "metrics.csv", "params.csv"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }

    let out = mirrorflow(&["diagnose", "--run", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let from_cli: Value = serde_json::from_str(&stdout(&out)).unwrap();
    for key in ["final_margins", "kkt", "rates", "alignment", "sparsity", "prune_curve"] {
        assert!(from_cli.get(key).is_some(), "missing {key}");
    }

    let config = parse_config(Path::new(&cfg)).unwrap();
    let spec = config.run_spec().unwrap();
    let traj = flow::run(&spec).unwrap();
    let direct = run_diagnostics(
        &spec.net,
        &spec.potentials,
        &spec.data,
        &spec.margins,
        &traj.records,
        &traj.final_state.theta,
        &DEFAULT_PRUNE_FRACTIONS,
    )
    .unwrap();
    // Same NaN-to-null mapping as the CLI.
    let direct: Value = serde_json::from_str(&serde_json::to_string(&direct).unwrap()).unwrap();
    assert_close(&from_cli, &direct, "report");
}

#[test]
fn prune_prints_a_csv_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", CONFIG);
    assert!(mirrorflow(&["train", "--config", &cfg, "--out", "run"], dir.path()).status.success());
    let out = mirrorflow(&["prune", "--run", "run", "--fractions", "0,0.5,0.9"], dir.path());
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "fraction,train_accuracy");
    assert_eq!(lines.len(), 4);
    let acc: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "data.toml", "generator = \"circle\"\nseed = 9\nk = 50\n");
    for name in ["a.csv", "b.csv"] {
        let out = mirrorflow(
            &["gen-data", "--spec", &spec, "--out", name, "--teacher-out", "teacher.json"],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 51);
    let teacher: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("teacher.json")).unwrap()).unwrap();
    assert_eq!(teacher["weights"].as_array().unwrap().len(), 3);
}

#[test]
fn sweep_summary_has_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "base.toml", &CONFIG.replace("max_steps = 400", "max_steps = 100"));
    let grid = write(
        dir.path(),
        "grid.toml",
        r#"
[[variant]]
name = "hyperbolic"
potential = { kind = "hyperbolic", lambda = 0.1 }

[[variant]]
name = "euclidean"
potential = { kind = "euclidean" }

[axes]
seed = [0, 1, 2]
"#,
    );
    let out = mirrorflow(
        &["sweep", "--config", &cfg, "--grid", &grid, "--jobs", "3", "--out", "sw"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.path().join("sw/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 6);

    let out = mirrorflow(&["report", "--summary", "sw/summary.csv", "--csv", "copy.csv"], dir.path());
    assert!(out.status.success());
    assert!(stdout(&out).contains("hyperbolic"));
    assert_eq!(std::fs::read_to_string(dir.path().join("copy.csv")).unwrap(), summary);
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = tempfile::tempdir().unwrap();

    let bad = write(dir.path(), "bad.toml", &CONFIG.replace("lambda = 0.1", "lambda = 0.0"));
    let out = mirrorflow(&["train", "--config", &bad, "--out", "r1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));

    let unknown = write(dir.path(), "unknown.toml", &format!("{CONFIG}\n[extra]\nx = 1\n"));
    assert_eq!(
        mirrorflow(&["train", "--config", &unknown, "--out", "r2"], dir.path()).status.code(),
        Some(2)
    );

    let out = mirrorflow(&["train", "--config", "missing.toml"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let out = mirrorflow(&["diagnose", "--run", "no-such-run"], dir.path());
    assert_eq!(out.status.code(), Some(4));

    let huge = write(dir.path(), "huge.toml", &CONFIG.replace("lr = 0.005", "lr = 1e8"));
    let out = mirrorflow(&["train", "--config", &huge, "--out", "r3"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    // Last good state is still written.
    assert!(dir.path().join("r3/params.csv").exists());
}

#[test]
fn train_default_out_is_keyed_by_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", &CONFIG.replace("max_steps = 400", "max_steps = 10"));
    let out = mirrorflow(&["train", "--config", &cfg], dir.path());
    assert!(out.status.success());
    let runs: Vec<_> = std::fs::read_dir(dir.path().join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let name = runs[0].as_ref().unwrap().file_name();
    assert_eq!(name.to_str().unwrap().len(), 16);
}
