use std::fs;

use super::*;

/// Small and fast: six sub-iterations per coherence block.
fn tiny_spec() -> ExperimentSpec {
    ExperimentSpec {
        system: SystemConfig {
            num_aps: 2,
            antennas_per_ap: 2,
            num_users: 2,
            num_ris_elements: 4,
            coherence_time_s: 0.06,
            desired_recovery_time_s: 0.03,
            ..Default::default()
        },
        blockages: 1,
        scaling_event: 1,
        m_sweep: vec![4, 9],
        seeds: vec![0, 1],
        ..Default::default()
    }
}

#[test]
fn seeds_parse_in_three_forms() {
    assert_eq!(parse_seeds("3").unwrap(), vec![0, 1, 2]);
    assert_eq!(parse_seeds("5..8").unwrap(), vec![5, 6, 7]);
    assert_eq!(parse_seeds(" 4, 9,2 ").unwrap(), vec![4, 9, 2]);
    for bad in ["", "0", "3..3", "a", "1,,x", "-1"] {
        assert!(matches!(parse_seeds(bad), Err(Error::Config(_))), "{bad:?}");
    }
}

#[test]
fn default_spec_is_the_desk_scale_run() {
    let spec = ExperimentSpec::default();
    spec.validate().unwrap();
    assert_eq!(spec.seeds.len(), 20);
    assert_eq!(spec.m_sweep, vec![64, 100, 144, 196, 256]);
    assert_eq!((spec.blockages, spec.scaling_event), (3, 2));
    assert_eq!(spec.methods, Method::ALL.to_vec());
}

#[test]
fn spec_reads_partial_toml_and_rejects_unknown_keys() {
    let spec = ExperimentSpec::from_toml("seeds = [4, 5]\n[system]\nnum_ris_elements = 64\n[sca]\nnu = 10.0\n").unwrap();
    assert_eq!(spec.seeds, vec![4, 5]);
    assert_eq!(spec.system.num_ris_elements, 64);
    assert_eq!(spec.sca.nu, 10.0);
    assert_eq!(spec.blockages, 3);
    assert!(ExperimentSpec::from_toml("seed = 3").is_err());
    assert!(ExperimentSpec::from_toml("[system]\nnum_rис = 3").is_err());
}

#[test]
fn spec_round_trips_through_json_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("spec.json");
    fs::write(&path, serde_json::to_string(&tiny_spec()).unwrap()).unwrap();
    assert_eq!(ExperimentSpec::load(&path).unwrap(), tiny_spec());
}

#[test]
fn validation_catches_bad_specs() {
    let cases: Vec<fn(&mut ExperimentSpec)> = vec![
        |s| s.seeds.clear(),
        |s| s.seeds = vec![1, 1],
        |s| s.methods.clear(),
        |s| s.methods = vec![Method::Baseline, Method::Baseline],
        |s| s.blockages = 0,
        |s| s.blockages = 3,
        |s| s.scaling_event = 3,
        |s| s.m_sweep = vec![4, 10],
        |s| s.m_sweep.clear(),
        |s| s.lambda = [0.5, 0.5, 0.5],
        |s| s.sca.nu = 0.0,
        |s| s.sca.recovery_eps = f64::NAN,
        |s| s.sca.settle_len = 0,
        |s| s.sca.alpha_scale = -1.0,
    ];
    for (i, mutate) in cases.into_iter().enumerate() {
        let mut spec = tiny_spec();
        mutate(&mut spec);
        assert!(spec.validate().is_err(), "case {i}");
    }
}

#[test]
fn config_hash_tracks_content() {
    let a = tiny_spec();
    assert_eq!(a.config_hash(), tiny_spec().config_hash());
    assert_eq!(a.config_hash().len(), 64);
    let mut b = tiny_spec();
    b.seeds.push(7);
    assert_ne!(a.config_hash(), b.config_hash());
}

#[test]
fn methods_share_the_seed_instance() {
    let spec = tiny_spec();
    let (c1, s1) = seed_instance(&spec.system, &spec.sca, 3).unwrap();
    let (c2, s2) = seed_instance(&spec.system, &spec.sca, 3).unwrap();
    assert_eq!(c1.to_json().unwrap(), c2.to_json().unwrap());
    assert_eq!(s1.v, s2.v);
    let (c3, _) = seed_instance(&spec.system, &spec.sca, 4).unwrap();
    assert_ne!(c1.to_json().unwrap(), c3.to_json().unwrap());
}

#[test]
fn adaptation_outputs_are_complete_and_verifiable() {
    let spec = tiny_spec();
    let dir = tempfile::tempdir().unwrap();
    let out = run_adaptation_experiment(&spec, dir.path()).unwrap();
    assert_eq!(out.kind, ExperimentKind::Adapt);
    assert_eq!(out.runs.len(), 6);
    assert_eq!(out.files.len(), 6 + 3);
    for run in &out.runs {
        assert_eq!(run.events.len(), 1);
        assert_eq!(run.steps, 12);
        assert!(!run.failed());
    }

    let adaptation = fs::read_to_string(dir.path().join("adaptation.csv")).unwrap();
    let lines: Vec<&str> = adaptation.lines().collect();
    assert_eq!(lines[0], ADAPTATION_SCHEMA);
    assert!(lines[1].starts_with("method,seed,event,t0_s,tq_s"));
    assert_eq!(lines.len(), 2 + 6);

    let curve = fs::read_to_string(dir.path().join("adaptation_curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some(CURVE_SCHEMA));
    // 13 points (z = 0..=12) per method
    assert_eq!(curve.lines().count(), 2 + 3 * 13);

    let summary = fs::read_to_string(dir.path().join("adaptation_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2 + 3);

    let timeline = fs::read_to_string(dir.path().join("timelines/proposed-seed1.csv")).unwrap();
    assert_eq!(timeline.lines().next(), Some(crate::sca::TIMELINE_SCHEMA));

    let manifest = verify_manifest(&out.manifest_path).unwrap();
    assert_eq!(manifest.files.len(), out.files.len());
    assert_eq!(manifest.seeds, vec![0, 1]);
    assert_eq!(manifest.summary.total_runs, 6);
    assert!(manifest.summary.means.contains_key("proposed/event1/r_ada"));
    let text = fs::read_to_string(&out.manifest_path).unwrap();
    assert!(!text.contains("time\""), "manifest must not carry timestamps");
}

#[test]
fn verification_detects_tampering() {
    let spec = ExperimentSpec { methods: vec![Method::Baseline], seeds: vec![2], ..tiny_spec() };
    let dir = tempfile::tempdir().unwrap();
    let out = run_adaptation_experiment(&spec, dir.path()).unwrap();
    verify_manifest(&out.manifest_path).unwrap();

    let csv = dir.path().join("adaptation.csv");
    let original = fs::read(&csv).unwrap();
    let mut edited = original.clone();
    edited.push(b'\n');
    fs::write(&csv, &edited).unwrap();
    assert!(matches!(verify_manifest(&out.manifest_path), Err(Error::Manifest(m)) if m.contains("adaptation.csv")));
    fs::write(&csv, &original).unwrap();

    let text = fs::read_to_string(&out.manifest_path).unwrap().replace("\"nu\": 1000.0", "\"nu\": 999.0");
    fs::write(&out.manifest_path, text).unwrap();
    assert!(matches!(verify_manifest(&out.manifest_path), Err(Error::Manifest(m)) if m.contains("config_hash")));
}

#[test]
fn replay_is_byte_identical() {
    let spec = ExperimentSpec { seeds: vec![5], ..tiny_spec() };
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let out = run_adaptation_experiment(&spec, first.path()).unwrap();
    let report = replay_manifest(&out.manifest_path, second.path()).unwrap();
    assert!(report.identical(), "{report:?}");
}

#[test]
fn scaling_has_run_and_mean_rows() {
    let spec = ExperimentSpec { methods: vec![Method::Proposed, Method::Baseline], ..tiny_spec() };
    let dir = tempfile::tempdir().unwrap();
    let out = run_scaling_experiment(&spec, dir.path()).unwrap();
    assert_eq!(out.runs.len(), 2 * 2 * 2);
    let text = fs::read_to_string(dir.path().join("scaling.csv")).unwrap();
    let mut rows = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let records: Vec<csv::StringRecord> = rows.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.iter().filter(|r| &r[0] == "run").count(), 8);
    assert_eq!(records.iter().filter(|r| &r[0] == "mean").count(), 4);
    for r in records.iter().filter(|r| &r[0] == "mean") {
        assert_eq!(&r[4], "2");
        assert!(!r[9].is_empty(), "two seeds give a confidence interval");
        let score: f64 = r[8].parse().unwrap();
        assert!((0.0..=1.0).contains(&score));
    }
    verify_manifest(&out.manifest_path).unwrap();
}

#[test]
fn single_user_without_resilience_weight_makes_methods_agree() {
    let mut spec = tiny_spec();
    spec.system.num_users = 1;
    spec.sca.alpha_scale = 0.0;
    spec.seeds = vec![0];
    let dir = tempfile::tempdir().unwrap();
    run_adaptation_experiment(&spec, dir.path()).unwrap();
    let read = |m: Method| fs::read_to_string(dir.path().join(format!("timelines/{}-seed0.csv", m.name()))).unwrap();
    let baseline = read(Method::Baseline);
    assert_eq!(read(Method::Proposed), baseline);
    assert_eq!(read(Method::RobustnessOnly), baseline);
}
