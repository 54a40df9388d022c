use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[run]
episodes = 24
write_logs = true

[ppo]
batch_size = 256

[risk]
batch_size = 16

[schedule]
switch_every = 3
"#;

fn bandgen(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bandgen"))
        .args(args)
        .env("BANDGEN_RUNS_ROOT", root)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_run(tmp: &Path, name: &str) -> PathBuf {
    let cfg = tmp.join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = tmp.join(name);
    let o = bandgen(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        tmp,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn schedule_prints_eight_monotone_levels() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bandgen(&["schedule"], tmp.path());
    assert!(o.status.success());
    let levels: Vec<f64> = stdout(&o)
        .lines()
        .filter_map(|l| l.split("eps = ").nth(1))
        .map(|v| v.trim().parse().unwrap())
        .collect();
    assert_eq!(levels.len(), 8);
    assert!(levels.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(levels[0], 0.0);
    assert_eq!(levels[7], 0.35);
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(bandgen(&["nonsense"], tmp.path()).status.code(), Some(1));
    assert_eq!(
        bandgen(&["train", "--bogus"], tmp.path()).status.code(),
        Some(1)
    );
    let o = bandgen(
        &["train", "--template", "roundabout", "--episodes", "1"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("roundabout"), "{}", stderr(&o));
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[ppo]\nclip_ets = 0.1\n").unwrap();
    let o = bandgen(&["train", "--config", bad.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("clip_ets"));
    assert_eq!(bandgen(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn train_writes_per_level_checkpoints_and_resumes_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let run = small_run(tmp.path(), "a");
    let ck = run.join("checkpoints");
    for l in 1..=8 {
        assert!(ck.join(format!("level_{l}.ckpt")).exists(), "level {l}");
    }
    for f in [
        "config.toml",
        "manifest.json",
        "metrics.csv",
        "episodes.jsonl",
        "checkpoints/final.ckpt",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["episodes"], 24);
    assert_eq!(manifest["finished"], true);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    // resume a copy from the level-3 checkpoint and compare with the uninterrupted run
    let b = tmp.path().join("b");
    std::fs::create_dir_all(b.join("checkpoints")).unwrap();
    for f in [
        "config.toml",
        "metrics.csv",
        "episodes.jsonl",
        "checkpoints/level_3.ckpt",
    ] {
        std::fs::copy(run.join(f), b.join(f)).unwrap();
    }
    let o = bandgen(
        &[
            "train",
            "--resume",
            b.join("checkpoints/level_3.ckpt").to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "episodes.jsonl",
        "metrics.csv",
        "checkpoints/final.ckpt",
        "checkpoints/level_8.ckpt",
    ] {
        assert_eq!(
            std::fs::read(run.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn runs_root_env_sets_the_default_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    std::fs::write(&cfg, SMALL.replace("episodes = 24", "episodes = 2")).unwrap();
    let o = bandgen(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "5",
            "--variant",
            "phi_only",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp
        .path()
        .join("left_turn-phi_only-s5/manifest.json")
        .exists());
}

#[test]
fn analysis_commands_on_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let run = small_run(tmp.path(), "r");
    let r = run.to_str().unwrap();

    let o = bandgen(&["sample-topk", "--run", r, "--k", "5"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let top = std::fs::read_to_string(run.join("topk.jsonl")).unwrap();
    assert_eq!(top.lines().count(), 6);
    let o = bandgen(
        &[
            "sample-topk",
            "--run",
            r,
            "--k",
            "0",
            "--out",
            tmp.path().join("none.jsonl").to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(o.status.success());
    assert_eq!(
        std::fs::read_to_string(tmp.path().join("none.jsonl"))
            .unwrap()
            .lines()
            .count(),
        1
    );

    let o = bandgen(&["eval", "--logs", r, "--ego", "all"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(
        rep["logged"]["collision_rate"],
        rep["replayed"]["idm_pursuit"]["collision_rate"]
    );
    assert_eq!(rep["replayed"].as_object().unwrap().len(), 3);
    assert_eq!(
        bandgen(&["eval", "--logs", r, "--ego", "robot"], tmp.path())
            .status
            .code(),
        Some(1)
    );

    let grid = tmp.path().join("grid.csv");
    let o = bandgen(
        &["metrics", "--logs", r, "--grid", grid.to_str().unwrap()],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value =
        serde_json::from_str(stdout(&o).split("coverage grid").next().unwrap()).unwrap();
    assert_eq!(m["episodes"], 24);

    for (input, kind) in [
        (run.join("metrics.csv"), "curves"),
        (run.join("metrics.csv"), "invalid"),
        (grid.clone(), "coverage"),
    ] {
        let out = tmp.path().join(format!("{kind}.svg"));
        let o = bandgen(
            &[
                "plot",
                "--input",
                input.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--kind",
                kind,
            ],
            tmp.path(),
        );
        assert!(o.status.success(), "{kind}: {}", stderr(&o));
        assert!(std::fs::read_to_string(out).unwrap().starts_with("<svg"));
    }
}

#[test]
fn empty_inputs_are_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let o = bandgen(
        &[
            "plot",
            "--input",
            empty.to_str().unwrap(),
            "--out",
            tmp.path().join("x.svg").to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_ne!(o.status.code(), Some(0));

    let logs = tmp.path().join("none.jsonl");
    std::fs::write(&logs, bandgen::io::log_header() + "\n").unwrap();
    let o = bandgen(&["eval", "--logs", logs.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = bandgen(&["metrics", "--logs", logs.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = bandgen(
        &[
            "metrics",
            "--logs",
            tmp.path().join("missing.jsonl").to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn oracle_reports_agreement() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bandgen(&["oracle", "--cases", "60"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("agreement:"));
    let o = bandgen(&["oracle", "--dim", "2", "--cases", "5"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("unknown:"));
}
