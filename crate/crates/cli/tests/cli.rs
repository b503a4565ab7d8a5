//! End-to-end runs of the `lwdinv` binary on small problems.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lwdinv(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lwdinv"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn summary(out: &Output) -> serde_json::Value {
    assert_eq!(code(out), 0, "stderr: {}", stderr(out));
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().expect("summary line")).expect("summary is JSON")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn trajectory(dir: &Path, n: usize) {
    let mut text = String::from("horizontal_m tvd_m dip_deg\n");
    for i in 0..n {
        text.push_str(&format!("{} {} 90\n", 0.3048 * i as f64, 0.0));
    }
    write(dir, "trajectory.txt", &text);
}

fn table(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let names = lines.next().unwrap().split_whitespace().map(String::from).collect();
    let rows = lines
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect();
    (names, rows)
}

const HOMOGENEOUS: &str = "beds = [{ rho_h = 10.0 }]\n";

const LAYERED: &str = "dip = 0.0\nboundaries = [-1.0, 1.5]\n\
beds = [{ rho_h = 20.0 }, { rho_h = 2.0, rho_v = 6.0 }, { rho_h = 50.0 }]\n";

#[test]
fn forward_in_a_homogeneous_medium_gives_constant_channels() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "earth.toml", HOMOGENEOUS);
    trajectory(d, 4);
    let out = lwdinv(
        d,
        &["forward", "--set", "earth=\"earth.toml\"", "--set", "trajectory=\"trajectory.txt\"", "--set", "output=\"fwd\""],
    );
    let s = summary(&out);
    assert_eq!(s["positions"], 4);
    let (names, rows) = table(&d.join("fwd/log.txt"));
    assert_eq!(names.len(), 9);
    for j in 3..9 {
        assert!(rows.iter().all(|r| (r[j] - rows[0][j]).abs() < 1e-9), "{} varies", names[j]);
    }
    let m3 = names.iter().position(|n| n == "M3_attenuation_db").unwrap();
    assert!(rows[0][m3].abs() < 1e-10);

    let run: toml::Table = toml::from_str(&fs::read_to_string(d.join("fwd/run.toml")).unwrap()).unwrap();
    assert_eq!(run["command"].as_str(), Some("forward"));
    assert!(run["checksums"].as_table().unwrap().contains_key("log.txt"));
}

#[test]
fn existing_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "earth.toml", HOMOGENEOUS);
    trajectory(d, 2);
    write(d, "run.toml", "earth = \"earth.toml\"\ntrajectory = \"trajectory.txt\"\noutput = \"fwd\"\n");
    assert_eq!(code(&lwdinv(d, &["forward", "--config", "run.toml"])), 0);
    let again = lwdinv(d, &["forward", "--config", "run.toml"]);
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("--force"));
    assert_eq!(code(&lwdinv(d, &["--force", "forward", "--config", "run.toml"])), 0);
}

#[test]
fn bad_inputs_exit_with_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trajectory(d, 2);
    let out = lwdinv(
        d,
        &["forward", "--set", "earth=\"missing.toml\"", "--set", "trajectory=\"trajectory.txt\"", "--set", "output=\"fwd\""],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("missing.toml"));
    assert!(!d.join("fwd").exists());

    write(d, "earth.toml", "beds = [{ rho_h = -1.0 }]\n");
    let out = lwdinv(
        d,
        &["forward", "--set", "earth=\"earth.toml\"", "--set", "trajectory=\"trajectory.txt\"", "--set", "output=\"fwd\""],
    );
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert_eq!(fs::read_dir(d).unwrap().count(), 2, "no partial output left behind");

    let out = lwdinv(d, &["generate", "--set", "output=\"ds\"", "--set", "samples=2", "--set", "colour=1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("colour"));
}

#[test]
fn usage_errors_and_help() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lwdinv(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&lwdinv(dir.path(), &["forward", "--set"])), 1);
    assert_eq!(code(&lwdinv(dir.path(), &["--help"])), 0);
    assert_eq!(code(&lwdinv(dir.path(), &["--threads", "0", "forward"])), 1);
}

const GENERATE: &str = "samples = 12\nsplit = [0.5, 0.25, 0.25]\n[sampler]\nseed = 5\npositions = 8\n";

#[test]
fn generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "gen.toml", GENERATE);
    let a = summary(&lwdinv(d, &["generate", "--config", "gen.toml", "--set", "output=\"a\""]));
    let b = summary(&lwdinv(d, &["--threads", "1", "generate", "--config", "gen.toml", "--set", "output=\"b\""]));
    assert_eq!(a["sha256"], b["sha256"]);
    assert_eq!(a["samples"], 12);
    assert_eq!(a["split"]["train"], 6);
    let c = summary(&lwdinv(d, &["generate", "--config", "gen.toml", "--set", "output=\"c\"", "--set", "sampler.seed=6", "--set", "export_text=true"]));
    assert_ne!(a["sha256"]["features"], c["sha256"]["features"]);
    let text = fs::read_to_string(d.join("c/samples.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn generate_train_evaluate_invert() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "gen.toml", GENERATE);
    summary(&lwdinv(d, &["generate", "--config", "gen.toml", "--set", "output=\"ds\""]));

    write(d, "train.toml", "dataset = \"ds\"\noutput = \"model\"\n[train]\nmax_epochs = 2\nbatch_size = 4\nseed = 3\n");
    let t = summary(&lwdinv(d, &["train", "--config", "train.toml"]));
    assert_eq!(t["epochs"], 2);
    let history = fs::read_to_string(d.join("model/history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let e = summary(&lwdinv(
        d,
        &["evaluate", "--set", "model=\"model\"", "--set", "dataset=\"ds\"", "--set", "output=\"eval\"", "--set", "bins=4"],
    ));
    assert_eq!(e["samples"], 3);
    assert!(e["errors"]["log10_anisotropy"]["mae"].as_f64().unwrap() >= 0.0);
    for f in ["crossplot.json", "summary.json", "crossplot_points.jsonl", "crossplot_bins.jsonl", "run.toml"] {
        assert!(d.join("eval").join(f).exists(), "{f}");
    }

    let x = summary(&lwdinv(d, &["crossplot-export", "--set", "report=\"eval/crossplot.json\"", "--set", "output=\"txt\""]));
    assert_eq!(x["parameters"].as_array().unwrap().len(), 7);
    let (names, rows) = table(&d.join("txt/log10_rho_h_points.txt"));
    assert_eq!(names, ["truth", "prediction"]);
    assert_eq!(rows.len(), 3);

    write(d, "earth.toml", LAYERED);
    trajectory(d, 12);
    summary(&lwdinv(
        d,
        &["forward", "--set", "earth=\"earth.toml\"", "--set", "trajectory=\"trajectory.txt\"", "--set", "output=\"fwd\""],
    ));
    let inv = summary(&lwdinv(
        d,
        &["invert", "--set", "model=\"model\"", "--set", "log=\"fwd/log.txt\"", "--set", "output=\"inv\""],
    ));
    assert_eq!(inv["predictions"], 12 - 8 + 1);
    let lines = fs::read_to_string(d.join("inv/inversion.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 5);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["anchor_index"], 7);
    assert_eq!(first["predicted"].as_array().unwrap().len(), 6);
    let misfit: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("inv/misfit.json")).unwrap()).unwrap();
    assert_eq!(misfit["sets"].as_array().unwrap().len(), 3);

    // a model trained on fewer channels does not accept this dataset
    write(
        d,
        "train_m2.toml",
        "dataset = \"ds\"\noutput = \"model_m2\"\nchannel_sets = [\"M2\"]\n[train]\nmax_epochs = 1\nbatch_size = 4\n",
    );
    summary(&lwdinv(d, &["train", "--config", "train_m2.toml"]));
    let out = lwdinv(
        d,
        &["evaluate", "--set", "model=\"model_m2\"", "--set", "dataset=\"ds\"", "--set", "output=\"eval_m2\""],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).to_lowercase().contains("channel"), "{}", stderr(&out));
}
