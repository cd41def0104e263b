use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// A scratch directory holding a copy of `configs/`.
fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let configs = dir.path().join("configs");
    fs::create_dir(&configs).unwrap();
    for entry in fs::read_dir(repo_root().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        fs::copy(&path, configs.join(path.file_name().unwrap())).unwrap();
    }
    dir
}

fn aced(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aced"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn status(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// Lines of every ```sh block, with the expected exit status.
fn readme_commands() -> Vec<(String, i32)> {
    let readme = fs::read_to_string(repo_root().join("README.md")).unwrap();
    let mut commands = Vec::new();
    let mut in_block = false;
    for line in readme.lines() {
        if line.trim() == "```sh" {
            in_block = true;
        } else if line.trim() == "```" {
            in_block = false;
        } else if in_block && !line.trim().is_empty() {
            match line.rsplit_once("# exit ") {
                Some((cmd, code)) => commands.push((cmd.trim().to_string(), code.trim().parse().unwrap())),
                None => commands.push((line.trim().to_string(), 0)),
            }
        }
    }
    commands
}

#[test]
fn readme_examples_run() {
    let dir = workdir();
    let bin_dir = Path::new(env!("CARGO_BIN_EXE_aced")).parent().unwrap().to_path_buf();
    let path = std::env::join_paths(
        std::iter::once(bin_dir).chain(std::env::split_paths(&std::env::var_os("PATH").unwrap_or_default())),
    )
    .unwrap();
    let commands = readme_commands();
    assert!(commands.len() >= 15);
    for (cmd, expected) in commands {
        let out = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .current_dir(dir.path())
            .env("PATH", &path)
            .output()
            .unwrap();
        assert_eq!(
            status(&out),
            expected,
            "{cmd}\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

fn commit_small(dir: &Path) {
    fs::write(dir.join("block.bin"), (0..128u8).collect::<Vec<_>>()).unwrap();
    let out = aced(
        dir,
        &[
            "commit", "--block", "block.bin", "--params", "configs/tree-small.json", "--out", "c.acmt", "--tree",
            "t.actc",
        ],
    );
    assert_eq!(status(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn honest_pom_verifies_and_foreign_pom_does_not() {
    let dir = workdir();
    commit_small(dir.path());
    assert_eq!(status(&aced(dir.path(), &["pom", "--tree", "t.actc", "--index", "7", "--out", "7.apom"])), 0);
    assert_eq!(status(&aced(dir.path(), &["verify", "--commitment", "c.acmt", "--pom", "7.apom"])), 0);

    fs::write(dir.path().join("other.bin"), [9u8; 128]).unwrap();
    let out = aced(
        dir.path(),
        &[
            "commit", "--block", "other.bin", "--params", "configs/tree-small.json", "--out", "o.acmt", "--tree",
            "o.actc",
        ],
    );
    assert_eq!(status(&out), 0);
    assert_eq!(status(&aced(dir.path(), &["verify", "--commitment", "o.acmt", "--pom", "7.apom"])), 4);
}

#[test]
fn exit_codes_for_bad_input() {
    let dir = workdir();
    commit_small(dir.path());
    fs::write(dir.path().join("bad.json"), r#"{"c": 16, "t": 4, "r": 0.3, "q": 8, "d": 8, "alpha": 0.1}"#).unwrap();
    let out = aced(
        dir.path(),
        &["commit", "--block", "block.bin", "--params", "bad.json", "--out", "x", "--tree", "y"],
    );
    assert_eq!(status(&out), 3);
    assert_eq!(status(&aced(dir.path(), &["verify", "--commitment", "missing", "--pom", "x"])), 1);
    fs::write(dir.path().join("junk.apom"), b"not a proof").unwrap();
    assert_eq!(status(&aced(dir.path(), &["verify", "--commitment", "c.acmt", "--pom", "junk.apom"])), 1);
    assert_eq!(status(&aced(dir.path(), &["verify", "--commitment", "c.acmt"])), 2);
    let help = aced(dir.path(), &["--help"]);
    assert!(String::from_utf8_lossy(&help.stdout).contains("5  fraud detected"));
}

#[test]
fn outputs_are_byte_stable() {
    let dir = workdir();
    for out in ["a", "b"] {
        let run = aced(
            dir.path(),
            &["simulate", "--scenario", "configs/scenario-invalid-coding.json", "--out", out],
        );
        assert_eq!(status(&run), 0);
    }
    for file in ["trace.json", "counters.csv", "chain.log", "report.json", "fraud-1.afrd", "commitment-1.acmt"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    for seed_out in ["d1.txt", "d2.txt"] {
        let run = aced(
            dir.path(),
            &["disperse", "--params", "configs/disperse.json", "--design-seed", "11", "--out", seed_out],
        );
        assert_eq!(status(&run), 0);
    }
    assert_eq!(
        fs::read(dir.path().join("d1.txt")).unwrap(),
        fs::read(dir.path().join("d2.txt")).unwrap()
    );
}

#[test]
fn invalid_coding_scenario_leaves_a_verifiable_fraud_proof() {
    let dir = workdir();
    let run = aced(
        dir.path(),
        &["simulate", "--scenario", "configs/scenario-invalid-coding.json", "--out", "sim"],
    );
    assert_eq!(status(&run), 0);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("sim/report.json")).unwrap()).unwrap();
    assert_eq!(report["properties"]["correctness"], true);
    let proofs = report["fraud_proofs"].as_array().unwrap();
    assert!(!proofs.is_empty());
    for p in proofs {
        let verify = aced(
            dir.path(),
            &[
                "verify",
                "--commitment",
                &format!("sim/{}", p["commitment"].as_str().unwrap()),
                "--fraud-proof",
                &format!("sim/{}", p["proof"].as_str().unwrap()),
            ],
        );
        assert_eq!(status(&verify), 0);
    }
}

#[test]
fn metrics_reports_deployment_row() {
    let dir = workdir();
    let run = aced(
        dir.path(),
        &["metrics", "--params", "configs/metrics-deployment.json", "--out", "m"],
    );
    assert_eq!(status(&run), 0);
    let report: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap();
    let x_kb = report["storage_cost_x"].as_f64().unwrap() / 1024.0;
    assert!((x_kb - 597.0).abs() / 597.0 < 0.05, "{x_kb}");
    let csv = fs::read_to_string(dir.path().join("m/baselines.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn incentives_reports_both_profiles() {
    let dir = workdir();
    let run = aced(dir.path(), &["incentives", "--params", "configs/incentives.json"]);
    assert_eq!(status(&run), 0);
    let report: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(report["all_cooperate"]["conditions"].as_array().unwrap().len(), 2);
    assert_eq!(report["all_offline"]["equilibrium"], true);
}
