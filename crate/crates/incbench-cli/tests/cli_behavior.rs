//! Exit-code contract, config overlay, and small end-to-end CLI checks.

use std::process::{Command, Output};

fn incbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_incbench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn incbench_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_incbench"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn liars_emits_profile_json() {
    let out = incbench(&["liars", "--n", "9"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["n"], 9);
    assert_eq!(v["liars"], serde_json::json!([1, 8]));
    assert_eq!(v["beta"], 0.25);
}

#[test]
fn liars_rejects_primes_with_domain_exit() {
    let out = incbench(&["liars", "--n", "7"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("prime"), "stderr: {msg}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(incbench(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(incbench(&["liars"]).status.code(), Some(2)); // missing --n
    assert_eq!(incbench(&["gen", "--kind", "warp"]).status.code(), Some(2));
}

#[test]
fn zscan_counts_all_zero_file() {
    // 41 zero bytes with no sidecar: 328 bits, 289 windows for n=9.
    let dir = tempfile::tempdir().unwrap();
    let rbf = dir.path().join("zeros.rbf");
    std::fs::write(&rbf, vec![0u8; 41]).unwrap();
    let report_path = dir.path().join("report.json");
    let out = incbench(&[
        "zscan",
        "--input",
        rbf.to_str().unwrap(),
        "--composites",
        "9",
        "--step",
        "1",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["per_composite"]["9"]["zliar_count"], 289);
    assert_eq!(report["input_length"], 328);
    assert_eq!(report["source_id"], "zeros");
}

#[test]
fn carmichael_enumeration() {
    let out = incbench(&["carmichael", "--max", "1200"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["carmichaels"], serde_json::json!([561, 1105]));
}

#[test]
fn verify_unitary_passes_and_reports() {
    let out = incbench(&["verify-unitary", "--tolerance", "1e-10"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["pass"], true);
    assert!(v["product_residual_mod_phase"].as_f64().unwrap() < 1e-10);
}

#[test]
fn gen_is_deterministic_per_flags() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.rbf");
    let b = dir.path().join("b.rbf");
    for out in [&a, &b] {
        let st = incbench(&[
            "gen",
            "--kind",
            "mt19937",
            "--seed",
            "1",
            "--bits",
            "1048576",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(st.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn threads_env_fallback_matches_flag() {
    let dir = tempfile::tempdir().unwrap();
    let rbf = dir.path().join("in.rbf");
    std::fs::write(&rbf, vec![0u8; 1000]).unwrap();
    let by_flag = dir.path().join("flag.json");
    let by_env = dir.path().join("env.json");
    assert!(incbench(&[
        "zscan",
        "--input",
        rbf.to_str().unwrap(),
        "--threads",
        "4",
        "--out",
        by_flag.to_str().unwrap(),
    ])
    .status
    .success());
    assert!(incbench_env(
        &[
            "zscan",
            "--input",
            rbf.to_str().unwrap(),
            "--out",
            by_env.to_str().unwrap(),
        ],
        &[("INCBENCH_THREADS", "4")],
    )
    .status
    .success());
    assert_eq!(
        std::fs::read(&by_flag).unwrap(),
        std::fs::read(&by_env).unwrap()
    );
}

#[test]
fn config_overlay_fills_gaps_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let rbf = dir.path().join("in.rbf");
    std::fs::write(&rbf, vec![0u8; 100]).unwrap();
    let config = dir.path().join("config.json");
    let from_config = dir.path().join("c.json");
    let overridden = dir.path().join("o.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "zscan": {
                "input": rbf.to_str().unwrap(),
                "composites": "9,15",
                "step": 2,
            }
        })
        .to_string(),
    )
    .unwrap();

    assert!(incbench(&[
        "zscan",
        "--config",
        config.to_str().unwrap(),
        "--out",
        from_config.to_str().unwrap(),
    ])
    .status
    .success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&from_config).unwrap()).unwrap();
    assert_eq!(report["offset_step"], 2);
    assert_eq!(
        report["per_composite"].as_object().unwrap().len(),
        2,
        "composites came from the config"
    );

    // An explicit flag overrides the config value.
    assert!(incbench(&[
        "zscan",
        "--config",
        config.to_str().unwrap(),
        "--step",
        "5",
        "--out",
        overridden.to_str().unwrap(),
    ])
    .status
    .success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&overridden).unwrap()).unwrap();
    assert_eq!(report["offset_step"], 5);

    // Unreadable config is a usage error.
    let missing = incbench(&["zscan", "--config", "/nonexistent.json", "--out", "x"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn qsim_sample_then_morphism_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rtf = dir.path().join("t.rtf");
    let rbf = dir.path().join("t.rbf");
    assert!(incbench(&[
        "qsim",
        "--protocol",
        "fig2",
        "--noise",
        "none",
        "--trits",
        "4096",
        "--seed",
        "5",
        "--out",
        rtf.to_str().unwrap(),
    ])
    .status
    .success());
    assert!(incbench(&[
        "morphism",
        "--in",
        rtf.to_str().unwrap(),
        "--out",
        rbf.to_str().unwrap(),
    ])
    .status
    .success());

    let trits = incbench_core::bitio::read_rtf(&rtf).unwrap();
    let bits = incbench_core::bitio::read_rbf(&rbf).unwrap();
    assert_eq!(incbench_core::bitio::morphism_phi(&trits), bits);
    assert_eq!(trits.len(), 4096);
}

#[test]
fn qsim_run_resumes_and_fails_on_exhausted_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    assert!(incbench(&[
        "qsim",
        "run",
        "--files",
        "2",
        "--bits",
        "256",
        "--seed",
        "3",
        "--drift-step",
        "0",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ])
    .status
    .success());
    assert!(out_dir.join("random_000.rtf").exists());
    assert!(out_dir.join("random_001.rtf").exists());
    assert!(out_dir.join("generation_log.json").exists());

    // A reset fidelity pinned below threshold exhausts the retry budget.
    let out = incbench(&[
        "qsim",
        "run",
        "--files",
        "1",
        "--bits",
        "64",
        "--initial-fidelity",
        "0.5",
        "--reset-fidelity",
        "0.5",
        "--out-dir",
        dir.path().join("fail").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("recalibration"), "stderr: {msg}");
}

#[test]
fn compare_groups_by_directory() {
    let dir = tempfile::tempdir().unwrap();
    for (group, seeds) in [("a", [1u64, 2]), ("b", [3, 4])] {
        let gdir = dir.path().join(group);
        std::fs::create_dir_all(&gdir).unwrap();
        for seed in seeds {
            let rbf = gdir.join(format!("{seed}.rbf"));
            let json = gdir.join(format!("{seed}.json"));
            assert!(incbench(&[
                "gen",
                "--kind",
                "mt19937",
                "--seed",
                &seed.to_string(),
                "--bits",
                "65536",
                "--out",
                rbf.to_str().unwrap(),
            ])
            .status
            .success());
            assert!(incbench(&[
                "zscan",
                "--input",
                rbf.to_str().unwrap(),
                "--out",
                json.to_str().unwrap(),
            ])
            .status
            .success());
        }
    }
    let out_path = dir.path().join("cmp.json");
    // Deliberately include the sidecars a glob would pick up.
    let mut args: Vec<String> = vec!["compare".into(), "--reports".into()];
    for group in ["a", "b"] {
        let gdir = dir.path().join(group);
        let mut files: Vec<_> = std::fs::read_dir(&gdir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        files.sort();
        for f in files {
            args.push(f.display().to_string());
        }
    }
    args.extend([
        "--labels".into(),
        "a,b".into(),
        "--out".into(),
        out_path.display().to_string(),
    ]);
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert!(incbench(&arg_refs).status.success());
    let cmp: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let sources = cmp["sources"].as_array().unwrap();
    assert_eq!(sources.len(), 2);
    assert_eq!(sources[0]["label"], "a");
    assert_eq!(sources[0]["metrics"].as_array().unwrap().len(), 2);

    // Label/group count mismatch is a usage error.
    let bad: Vec<&str> = arg_refs
        .iter()
        .map(|s| if *s == "a,b" { "a,b,c" } else { *s })
        .collect();
    assert_eq!(incbench(&bad).status.code(), Some(2));
}

#[test]
fn zscan_missing_input_is_domain_error() {
    let out = incbench(&["zscan", "--input", "/nope.rbf", "--out", "/tmp/x.json"]);
    assert_eq!(out.status.code(), Some(1));
}
