use std::fs;
use std::path::{Path, PathBuf};

use assert_cmd::Command;

fn mcbandit() -> Command {
    Command::cargo_bin("mcbandit").expect("binary")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .expect("output dir")
        .map(|e| {
            let p = e.expect("entry").path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).expect("read"),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn cir_runs_are_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (i, workers) in ["1", "3", "1"].iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        mcbandit()
            .args(["run", "--experiment", "cir", "--strike", "0.06", "--seed", "7"])
            .args(["--n", "400", "--replicates", "3", "--policies", "ts,uniform,pmc"])
            .args(["--workers", workers, "--out"])
            .arg(&out)
            .assert()
            .success();
        outputs.push(files(&out));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let names: Vec<&str> = outputs[0].iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        vec!["metadata.json", "report.csv", "trace_ts.csv", "trace_uniform.csv"]
    );
    for (name, bytes) in &outputs[0] {
        let text = String::from_utf8_lossy(bytes);
        assert!(text.contains("seed"), "{name} lacks metadata");
        assert!(text.contains("config_hash"), "{name} lacks the config hash");
        assert!(text.contains("version"), "{name} lacks the version");
    }
}

#[test]
fn missing_config_exits_with_2() {
    mcbandit()
        .args(["run", "--config", "/definitely/not/here.toml"])
        .assert()
        .code(2)
        .stderr(predicates::str::contains("cannot read config"));
}

#[test]
fn unknown_key_is_reported_with_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "experiment = \"cir\"\nseed = 1\nrepliactes = 5\n").unwrap();
    let out = mcbandit().args(["run", "--config"]).arg(&path).assert().code(2);
    let stderr = String::from_utf8_lossy(&out.get_output().stderr).into_owned();
    assert!(stderr.contains("bad.toml:3:1:"), "{stderr}");
    assert!(stderr.contains("repliactes"), "{stderr}");
}

#[test]
fn invalid_values_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("strike.toml");
    fs::write(&path, "experiment = \"cir\"\n\n[cir]\nstrike = 0.05\n").unwrap();
    let out = mcbandit().args(["run", "--config"]).arg(&path).assert().code(2);
    let stderr = String::from_utf8_lossy(&out.get_output().stderr).into_owned();
    assert!(stderr.contains("strike.toml:4:1:"), "{stderr}");

    mcbandit()
        .args(["run", "--experiment", "cir", "--policies", "ucb1,magic"])
        .assert()
        .code(2);
    mcbandit()
        .args(["run", "--experiment", "ais", "--n", "100"])
        .assert()
        .code(2);
    mcbandit()
        .args(["run", "--experiment", "ais", "--policies", "ts,pmc"])
        .assert()
        .code(2)
        .stderr(predicates::str::contains("draw budget"));
    mcbandit().args(["run"]).assert().code(2);
}

#[test]
fn runtime_failure_exits_with_1() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    mcbandit()
        .args([
            "run",
            "--experiment",
            "cir",
            "--n",
            "100",
            "--replicates",
            "2",
            "--policies",
            "ts",
        ])
        .arg("--out")
        .arg(blocker.join("sub"))
        .assert()
        .code(1);
}

#[test]
fn grid_writes_a_winner_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("grid.toml");
    fs::write(
        &cfg,
        "experiment = \"synthetic-grid\"\n[grid]\nscales = [0.2, 0.6]\n",
    )
    .unwrap();
    let out = tmp.path().join("grid");
    mcbandit()
        .args(["run", "--config"])
        .arg(&cfg)
        .args([
            "--policies",
            "ucb1,ts",
            "--n",
            "300",
            "--replicates",
            "4",
            "--out",
        ])
        .arg(&out)
        .assert()
        .success();
    let text = fs::read_to_string(out.join("grid.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# experiment=synthetic-grid"));
    assert_eq!(
        lines[1],
        "s1,s2,winner,margin_se,regret_ucb1,se_ucb1,regret_ts,se_ts"
    );
    assert_eq!(lines.len(), 2 + 3);
    assert!(lines[2].starts_with("0.2,0.2,tie,"));
}

#[test]
fn example_configs_run() {
    let tmp = tempfile::tempdir().unwrap();
    let shrink: &[(&str, &[&str])] = &[
        ("synthetic-grid.toml", &["--n", "200", "--replicates", "2"]),
        ("cir.toml", &["--n", "6000", "--replicates", "2"]),
        ("ais.toml", &["--budget", "300000", "--replicates", "2"]),
        ("custom.toml", &["--replicates", "2"]),
    ];
    for (file, extra) in shrink {
        let out = tmp.path().join(file);
        mcbandit()
            .args(["run", "--config"])
            .arg(configs_dir().join(file))
            .args(*extra)
            .arg("--out")
            .arg(&out)
            .assert()
            .success();
        let meta: serde_json::Value =
            serde_json::from_slice(&fs::read(out.join("metadata.json")).unwrap()).unwrap();
        assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64, "{file}");
    }
}
