use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use netmae::cli::{parse_args, Invocation, RunConfig, SUBCOMMANDS};

fn netmae(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netmae"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs")
}

fn args(s: &[&str]) -> Vec<String> {
    s.iter().map(|a| a.to_string()).collect()
}

/// Tiny cohort and model so a full pipeline finishes in seconds.
const TINY: [&str; 20] = [
    "--workers",
    "1",
    "--synth_subjects_per_class",
    "4",
    "--synth_timepoints",
    "64",
    "--segments_per_recording",
    "2",
    "--epochs",
    "1",
    "--ft_epochs",
    "2",
    "--d_emb",
    "12",
    "--heads",
    "2",
    "--d_mlp",
    "16",
    "--top_k",
    "2",
];

#[test]
fn help_works_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let top = netmae(dir.path(), &["--help"]);
    assert_eq!(top.status.code(), Some(0));
    let text = String::from_utf8_lossy(&top.stdout);
    for sub in SUBCOMMANDS {
        assert!(text.contains(sub), "usage lists {sub}");
        let out = netmae(dir.path(), &[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub} --help");
    }
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn bad_invocations_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        vec![],
        vec!["frobnicate"],
        vec!["synth", "--bogus", "1"],
        vec!["synth", "--seed"],
        vec!["synth", "--seed", "minus-one"],
        vec!["pretrain", "--mask-mode", "diagonal"],
        vec!["synth", "stray"],
    ] {
        let out = netmae(dir.path(), &bad);
        assert_eq!(out.status.code(), Some(1), "{bad:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn missing_manifest_is_reported_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let synth = netmae(
        dir.path(),
        &[
            "synth",
            "--outdir",
            "cohort",
            "--workers",
            "1",
            "--synth_timepoints",
            "64",
        ],
    );
    assert_eq!(synth.status.code(), Some(0));
    let o = netmae(
        dir.path(),
        &[
            "pretrain",
            "--outdir",
            out.to_str().unwrap(),
            "--atlas",
            "cohort/atlas.tsv",
            "--manifest",
            "cohort/no_such_manifest.txt",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("no_such_manifest.txt"), "{err}");
}

#[test]
fn divergence_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = vec!["demo", "--outdir", "d", "--lr", "1e200"];
    a.extend(TINY);
    let o = netmae(dir.path(), &a);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("pretrain") && err.contains("diverged"), "{err}");
}

#[test]
fn resolved_config_round_trips_through_config_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = netmae(
        dir.path(),
        &[
            "synth",
            "--outdir",
            "a",
            "--seed",
            "9",
            "--synth_timepoints",
            "64",
            "--workers",
            "1",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let echo = fs::read_to_string(dir.path().join("a/resolved_config.txt")).unwrap();
    assert!(echo.contains("seed = 9"));
    let cfg = dir.path().join("a/resolved_config.txt");
    let parsed = parse_args(&args(&["synth", "--config", cfg.to_str().unwrap()])).unwrap();
    let Invocation::Run { config, .. } = parsed else {
        panic!("expected a run")
    };
    assert_eq!(config.to_kv(), echo);
    // Overrides apply after the file.
    let parsed = parse_args(&args(&["synth", "--config", cfg.to_str().unwrap(), "--seed=4"])).unwrap();
    let Invocation::Run { config, .. } = parsed else {
        panic!("expected a run")
    };
    assert_eq!(config.seed, 4);
}

#[test]
fn flags_map_to_config_keys() {
    let parsed = parse_args(&args(&["pretrain", "--mask-mode", "random", "--decoder", "self"])).unwrap();
    let Invocation::Run { command, config } = parsed else {
        panic!("expected a run")
    };
    assert_eq!(command, "pretrain");
    let mut expect = RunConfig::default();
    expect.set("mask_mode", "random").unwrap();
    expect.set("decoder", "self").unwrap();
    expect.finalize().unwrap();
    assert_eq!(config, expect);
}

#[test]
fn stages_chain_and_stay_inside_outdir() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let run = |sub: &str, extra: &[&str]| {
        let mut a = vec![sub, "--outdir", "out"];
        a.extend(TINY);
        a.extend(extra);
        let o = netmae(cwd, &a);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{sub}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    };
    run("synth", &[]);
    let data = ["--atlas", "out/atlas.tsv", "--manifest", "out/manifest.txt"];
    run("pretrain", &data);
    let with_ckpt: Vec<&str> = data.iter().copied().chain(["--checkpoint", "out/model.ckpt"]).collect();
    run("eval-recon", &with_ckpt);
    run("attn-report", &with_ckpt);
    run("norms", &with_ckpt);
    run("classify", &with_ckpt);
    for f in [
        "manifest.txt",
        "atlas.tsv",
        "ground_truth.txt",
        "model.ckpt",
        "history.csv",
        "split.csv",
        "predictability.csv",
        "contributions.csv",
        "contributions_CN.csv",
        "delta_CN_AD.csv",
        "norms.csv",
        "group_stats.txt",
        "classification.txt",
        "predictions.csv",
        "resolved_config.txt",
    ] {
        assert!(cwd.join("out").join(f).is_file(), "missing {f}");
    }
    let entries: Vec<_> = fs::read_dir(cwd).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, vec!["out"]);
    let pred = fs::read_to_string(cwd.join("out/predictability.csv")).unwrap();
    assert!(pred.starts_with("network,name,pearson,mse,tokens,skipped\n"));
    assert_eq!(pred.lines().count(), 8);
}
