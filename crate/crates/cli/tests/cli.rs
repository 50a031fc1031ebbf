use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ris_resilience::experiment::ExperimentSpec;

const TINY: &str = r#"
blockages = 1
scaling_event = 1
m_sweep = [4, 9]
seeds = [0, 1]

[system]
num_aps = 2
antennas_per_ap = 2
num_users = 2
num_ris_elements = 4
coherence_time_s = 0.06
desired_recovery_time_s = 0.03
"#;

fn risres(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_risres"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RISRES_SEEDS")
        .env_remove("RISRES_OUT")
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn adapt_then_verify_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = risres(&["adapt", "--config", &cfg, "--out", "a", "--method", "proposed,baseline"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(out.status.code(), Some(0));
    let manifest = dir.path().join("a/manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("timelines/baseline-seed1.csv"));
    assert!(!text.contains("robustness-only-seed"));

    let verify = risres(&["verify", "a/manifest.json"], dir.path());
    assert!(verify.status.success(), "{}", stderr(&verify));

    let replay = risres(&["replay", "a/manifest.json", "--out", "b"], dir.path());
    assert!(replay.status.success(), "{}", stderr(&replay));
    assert!(String::from_utf8_lossy(&replay.stdout).contains("identical"));
    assert_eq!(fs::read(&manifest).unwrap(), fs::read(dir.path().join("b/manifest.json")).unwrap());
}

#[test]
fn verify_fails_after_an_edit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = risres(&["adapt", "--config", &cfg, "--out", "a", "--seeds", "1", "--method", "baseline"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = dir.path().join("a/adaptation_summary.csv");
    let mut text = fs::read_to_string(&csv).unwrap();
    text.push_str("tampered\n");
    fs::write(&csv, text).unwrap();
    let verify = risres(&["verify", "a/manifest.json"], dir.path());
    assert_eq!(verify.status.code(), Some(1));
    assert!(stderr(&verify).contains("adaptation_summary.csv"));
}

#[test]
fn scale_writes_one_row_per_run_plus_means() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = risres(&["scale", "--config", &cfg, "--out", "s", "--seeds", "3..5"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(dir.path().join("s/scaling.csv"))
        .unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    // 2 sizes x 3 methods x 2 seeds, plus one mean row per (size, method)
    assert_eq!(rows.iter().filter(|r| &r[0] == "run").count(), 12);
    assert_eq!(rows.iter().filter(|r| &r[0] == "mean").count(), 6);
    let seeds: Vec<&str> = rows.iter().filter(|r| &r[0] == "run").map(|r| r.get(3).unwrap()).collect();
    assert!(seeds.iter().all(|s| *s == "3" || *s == "4"));
}

#[test]
fn environment_supplies_seeds_and_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_risres"))
        .args(["adapt", "--config", &cfg, "--method", "baseline"])
        .current_dir(dir.path())
        .env("RISRES_SEEDS", "7,9")
        .env("RISRES_OUT", "from-env")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("from-env/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([7, 9]));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[system]\nnum_ris_elements = 10\n").unwrap();
    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, "frobnicate = 1\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["adapt", "--config", bad.to_str().unwrap()],
        vec!["adapt", "--config", unknown.to_str().unwrap()],
        vec!["adapt", "--config", "missing.toml"],
        vec!["adapt", "--config", &cfg, "--seeds", "x"],
        vec!["scale", "--config", &cfg, "--method", "greedy"],
        vec!["adapt", "--bogus-flag"],
    ];
    for args in cases {
        let out = risres(&args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn default_config_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = risres(&["default-config"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("m_sweep = [64, 100, 144, 196, 256]"), "{text}");
    assert_eq!(ExperimentSpec::from_toml(&text).unwrap(), ExperimentSpec::default());
}

#[test]
fn mostly_failed_solves_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("starved.toml");
    fs::write(&cfg, format!("{TINY}\n[sca.solver]\ntol_gap_abs = 1e-6\ntol_gap_rel = 1e-6\ntol_feas = 1e-6\nmax_iter = 1\ncertify_tol = 1e-5\n")).unwrap();
    let out = risres(&["adapt", "--config", cfg.to_str().unwrap(), "--out", "x", "--seeds", "1"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(dir.path().join("x/manifest.json").exists(), "outputs are still written");
}
