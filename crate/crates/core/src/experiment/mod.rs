//! Monte-Carlo experiments: adaptation over consecutive blockages, and
//! resilience against the RIS size. Results go to CSV files listed, with
//! checksums, in a manifest that can be verified and replayed.

mod manifest;
pub mod stats;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::ChannelState;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::geometry::build_geometry;
use crate::resilience::{mean_demand_ratio, resilience_score, ResilienceComponents, ResilienceWeights};
use crate::sca::{initialize_iterates, is_numerical_failure, run_scenario, Method, Recovery, ScaSettings, ScenarioTimeline};

pub use manifest::{
    replay_manifest, verify_manifest, ExperimentKind, FileEntry, ManifestSummary, ReplayReport, RunManifest, MANIFEST_SCHEMA,
};
use stats::mean_ci95;

pub const ADAPTATION_SCHEMA: &str = "# schema: ris-resilience adaptation v1";
pub const CURVE_SCHEMA: &str = "# schema: ris-resilience adaptation-curve v1";
pub const SUMMARY_SCHEMA: &str = "# schema: ris-resilience adaptation-summary v1";
pub const SCALING_SCHEMA: &str = "# schema: ris-resilience scaling v1";

/// RNG stream for the initial phases; channel draws use streams `n K + k`.
const PHASE_STREAM: u64 = u64::MAX;

/// Everything that determines an experiment's output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub system: SystemConfig,
    pub sca: ScaSettings,
    pub methods: Vec<Method>,
    /// Consecutive blockages in the adaptation experiment.
    pub blockages: usize,
    /// The scaling experiment runs through this many blockages and scores the last.
    pub scaling_event: usize,
    /// RIS sizes of the scaling experiment; perfect squares.
    pub m_sweep: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Resilience weights of the reported score.
    pub lambda: [f64; 3],
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            sca: ScaSettings::default(),
            methods: Method::ALL.to_vec(),
            blockages: 3,
            scaling_event: 2,
            m_sweep: vec![64, 100, 144, 196, 256],
            seeds: (0..20).collect(),
            lambda: [1.0 / 3.0; 3],
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        ResilienceWeights::new(self.lambda[0], self.lambda[1], self.lambda[2])?;
        if self.methods.is_empty() || !all_distinct(&self.methods) {
            return Err(Error::Config("methods must be non-empty and distinct".into()));
        }
        if self.seeds.is_empty() || !all_distinct(&self.seeds) {
            return Err(Error::Config("seeds must be non-empty and distinct".into()));
        }
        let k = self.system.num_users;
        if self.blockages == 0 || self.blockages > k {
            return Err(Error::Config(format!("blockages must be in 1..={k}, got {}", self.blockages)));
        }
        if self.scaling_event == 0 || self.scaling_event > k {
            return Err(Error::Config(format!("scaling_event must be in 1..={k}, got {}", self.scaling_event)));
        }
        if self.m_sweep.is_empty() {
            return Err(Error::Config("m_sweep is empty".into()));
        }
        for &m in &self.m_sweep {
            SystemConfig { num_ris_elements: m, ..self.system.clone() }.validate()?;
        }
        let s = &self.sca;
        let positive = [("nu", s.nu), ("recovery_eps", s.recovery_eps), ("alpha_v_growth", s.alpha_v_growth)];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("sca.{name} must be positive, got {value}")));
            }
        }
        if !(s.alpha_v_start >= 0.0 && s.alpha_v_max >= 0.0 && s.alpha_scale >= 0.0) {
            return Err(Error::Config("sca alpha weights must be non-negative".into()));
        }
        if s.settle_len == 0 {
            return Err(Error::Config("sca.settle_len must be at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

fn all_distinct<T: PartialEq>(items: &[T]) -> bool {
    items.iter().enumerate().all(|(i, a)| !items[..i].contains(a))
}

/// Parses `N` (seeds `0..N`), `a..b`, or a comma list such as `3,7,` .
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    let bad = || Error::Config(format!("cannot parse seeds {text:?}; use N, a..b or a,b,c"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else if text.contains(',') {
        text.split(',').filter(|s| !s.trim().is_empty()).map(num).collect::<Result<_>>()?
    } else {
        (0..num(text)?).collect()
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// One blockage event of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    /// Counted from one.
    pub index: usize,
    pub blocked_users: Vec<usize>,
    pub recovery: Recovery,
    pub raw: ResilienceComponents,
    pub capped: ResilienceComponents,
    /// Score of the capped components under the spec's weights.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub num_elements: usize,
    pub steps: usize,
    pub numerical_failures: usize,
    pub events: Vec<EventSummary>,
}

impl RunSummary {
    /// A run fails numerically when most of its sub-iterations did.
    pub fn failed(&self) -> bool {
        2 * self.numerical_failures > self.steps
    }
}

/// Channels and initial iterate of one seed; shared by every method.
pub fn seed_instance(system: &SystemConfig, sca: &ScaSettings, seed: u64) -> Result<(ChannelState, crate::subproblem::IterateState)> {
    let geometry = build_geometry(system)?;
    let channels = ChannelState::generate(&geometry, system, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PHASE_STREAM);
    let state = initialize_iterates(&channels, system, sca, &mut rng)?;
    Ok((channels, state))
}

pub fn run_single(system: &SystemConfig, sca: &ScaSettings, method: Method, seed: u64, blockages: usize) -> Result<ScenarioTimeline> {
    let (channels, state) = seed_instance(system, sca, seed)?;
    run_scenario(state, &channels, system, method, blockages, sca)
}

pub fn summarize(timeline: &ScenarioTimeline, method: Method, seed: u64, num_elements: usize, lambda: [f64; 3]) -> Result<RunSummary> {
    let weights = ResilienceWeights::new(lambda[0], lambda[1], lambda[2])?;
    let events = timeline
        .events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let missing = || Error::Timeline(format!("event {i} was not finalized"));
            let raw = e.components.ok_or_else(missing)?;
            let capped = raw.capped();
            Ok(EventSummary {
                index: i + 1,
                blocked_users: e.blocked_users.clone(),
                recovery: e.recovery.ok_or_else(missing)?,
                raw,
                capped,
                score: resilience_score(&capped, &weights)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunSummary {
        method,
        seed,
        num_elements,
        steps: timeline.steps.len(),
        numerical_failures: timeline.steps.iter().filter(|s| is_numerical_failure(&s.status)).count(),
        events,
    })
}

/// What an experiment produced.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub kind: ExperimentKind,
    pub runs: Vec<RunSummary>,
    /// Output files relative to the output directory, manifest excluded.
    pub files: Vec<PathBuf>,
    pub manifest_path: PathBuf,
}

impl ExperimentOutput {
    pub fn failed_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.failed()).count()
    }

    /// More than half of all runs failed numerically.
    pub fn mostly_failed(&self) -> bool {
        2 * self.failed_runs() > self.runs.len()
    }
}

fn fmt(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn users(list: &[usize]) -> String {
    list.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";")
}

/// Opens `dir/rel` for writing and puts the schema line first.
fn create_csv(dir: &Path, rel: &str, schema: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{schema}")?;
    Ok(csv::Writer::from_writer(out))
}

/// Capped mean demand ratio after every sub-iteration, starting at `z = 0`.
fn adaptation_curve(timeline: &ScenarioTimeline, demands: &[f64]) -> Vec<(usize, f64, f64)> {
    let mut out = vec![(0, 0.0, mean_demand_ratio(&timeline.initial_rates, demands).min(1.0))];
    out.extend(timeline.steps.iter().map(|s| (s.iteration, s.time_s, mean_demand_ratio(&s.rates, demands).min(1.0))));
    out
}

/// Adaptation run: every method on every seed through `spec.blockages`
/// strongest-first blockages. Writes the per-run timelines, per-event
/// components, the mean adaptation curve and per-event means.
pub fn run_adaptation_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<ExperimentOutput> {
    spec.validate()?;
    fs::create_dir_all(out_dir)?;
    let demands = spec.system.demands();
    let jobs: Vec<(Method, u64)> = spec.methods.iter().flat_map(|&m| spec.seeds.iter().map(move |&s| (m, s))).collect();
    let results = jobs
        .par_iter()
        .map(|&(method, seed)| {
            let timeline = run_single(&spec.system, &spec.sca, method, seed, spec.blockages)?;
            let rel = format!("timelines/{}-seed{seed}.csv", method.name());
            let path = out_dir.join(&rel);
            fs::create_dir_all(path.parent().expect("has parent"))?;
            timeline.write_csv(BufWriter::new(File::create(&path)?))?;
            let summary = summarize(&timeline, method, seed, spec.system.num_ris_elements, spec.lambda)?;
            Ok((summary, adaptation_curve(&timeline, &demands), rel))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut files: Vec<PathBuf> = results.iter().map(|(_, _, rel)| PathBuf::from(rel)).collect();
    let runs: Vec<RunSummary> = results.iter().map(|(s, _, _)| s.clone()).collect();

    let mut w = create_csv(out_dir, "adaptation.csv", ADAPTATION_SCHEMA)?;
    w.write_record([
        "method", "seed", "event", "t0_s", "tq_s", "recovery_rule", "blocked_users", "r_abs_raw", "r_ada_raw", "r_abs",
        "r_ada", "r_rec", "score", "numerical_failures",
    ])?;
    for run in &runs {
        for e in &run.events {
            w.write_record([
                run.method.name().to_string(),
                run.seed.to_string(),
                e.index.to_string(),
                fmt(e.recovery.t0),
                fmt(e.recovery.tq),
                e.recovery.rule.tag().to_string(),
                users(&e.blocked_users),
                fmt(e.raw.absorption),
                fmt(e.raw.adaptation),
                fmt(e.capped.absorption),
                fmt(e.capped.adaptation),
                fmt(e.capped.recovery),
                fmt(e.score),
                run.numerical_failures.to_string(),
            ])?;
        }
    }
    w.flush()?;
    files.push("adaptation.csv".into());

    let mut w = create_csv(out_dir, "adaptation_curve.csv", CURVE_SCHEMA)?;
    w.write_record(["method", "z", "time_s", "n", "mean_ratio", "ci95"])?;
    for &method in &spec.methods {
        let curves: Vec<&Vec<(usize, f64, f64)>> =
            results.iter().filter(|(s, _, _)| s.method == method).map(|(_, c, _)| c).collect();
        for (i, &(z, t, _)) in curves[0].iter().enumerate() {
            let values: Vec<f64> = curves.iter().map(|c| c[i].2).collect();
            let (mean, ci) = mean_ci95(&values);
            w.write_record([method.name().to_string(), z.to_string(), fmt(t), values.len().to_string(), fmt(mean), fmt_opt(ci)])?;
        }
    }
    w.flush()?;
    files.push("adaptation_curve.csv".into());

    let mut summary = BTreeMap::new();
    let mut w = create_csv(out_dir, "adaptation_summary.csv", SUMMARY_SCHEMA)?;
    w.write_record([
        "method", "event", "n", "r_abs", "r_abs_ci95", "r_ada", "r_ada_ci95", "r_rec", "r_rec_ci95", "score", "score_ci95",
    ])?;
    for &method in &spec.methods {
        for event in 1..=spec.blockages {
            let picked: Vec<&EventSummary> =
                runs.iter().filter(|r| r.method == method).filter_map(|r| r.events.get(event - 1)).collect();
            let col = |f: fn(&EventSummary) -> f64| mean_ci95(&picked.iter().map(|e| f(e)).collect::<Vec<_>>());
            let abs = col(|e| e.capped.absorption);
            let ada = col(|e| e.capped.adaptation);
            let rec = col(|e| e.capped.recovery);
            let score = col(|e| e.score);
            summary.insert(format!("{}/event{event}/r_ada", method.name()), ada.0);
            summary.insert(format!("{}/event{event}/score", method.name()), score.0);
            w.write_record([
                method.name().to_string(),
                event.to_string(),
                picked.len().to_string(),
                fmt(abs.0),
                fmt_opt(abs.1),
                fmt(ada.0),
                fmt_opt(ada.1),
                fmt(rec.0),
                fmt_opt(rec.1),
                fmt(score.0),
                fmt_opt(score.1),
            ])?;
        }
    }
    w.flush()?;
    files.push("adaptation_summary.csv".into());

    let manifest_path = manifest::write(ExperimentKind::Adapt, spec, out_dir, &files, &runs, summary)?;
    Ok(ExperimentOutput { kind: ExperimentKind::Adapt, runs, files, manifest_path })
}

/// Scaling run: for every RIS size, method and seed, run through
/// `spec.scaling_event` blockages and score the last one. One row per run
/// plus one mean row per (size, method).
pub fn run_scaling_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<ExperimentOutput> {
    spec.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut jobs = Vec::new();
    for &m in &spec.m_sweep {
        for &method in &spec.methods {
            for &seed in &spec.seeds {
                jobs.push((m, method, seed));
            }
        }
    }
    let runs = jobs
        .par_iter()
        .map(|&(m, method, seed)| {
            let system = SystemConfig { num_ris_elements: m, ..spec.system.clone() };
            let timeline = run_single(&system, &spec.sca, method, seed, spec.scaling_event)?;
            summarize(&timeline, method, seed, m, spec.lambda)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summary = BTreeMap::new();
    let mut w = create_csv(out_dir, "scaling.csv", SCALING_SCHEMA)?;
    w.write_record([
        "kind", "num_elements", "method", "seed", "n", "r_abs", "r_ada", "r_rec", "score", "score_ci95", "numerical_failures",
    ])?;
    for &m in &spec.m_sweep {
        for &method in &spec.methods {
            let group: Vec<&RunSummary> = runs.iter().filter(|r| r.num_elements == m && r.method == method).collect();
            let last = |r: &RunSummary| r.events[spec.scaling_event - 1].clone();
            for r in &group {
                let e = last(r);
                w.write_record([
                    "run".to_string(),
                    m.to_string(),
                    method.name().to_string(),
                    r.seed.to_string(),
                    "1".to_string(),
                    fmt(e.capped.absorption),
                    fmt(e.capped.adaptation),
                    fmt(e.capped.recovery),
                    fmt(e.score),
                    String::new(),
                    r.numerical_failures.to_string(),
                ])?;
            }
            let events: Vec<EventSummary> = group.iter().map(|r| last(r)).collect();
            let col = |f: fn(&EventSummary) -> f64| mean_ci95(&events.iter().map(f).collect::<Vec<_>>());
            let score = col(|e| e.score);
            summary.insert(format!("{}/M{m}/score", method.name()), score.0);
            w.write_record([
                "mean".to_string(),
                m.to_string(),
                method.name().to_string(),
                String::new(),
                events.len().to_string(),
                fmt(col(|e| e.capped.absorption).0),
                fmt(col(|e| e.capped.adaptation).0),
                fmt(col(|e| e.capped.recovery).0),
                fmt(score.0),
                fmt_opt(score.1),
                group.iter().map(|r| r.numerical_failures).sum::<usize>().to_string(),
            ])?;
        }
    }
    w.flush()?;
    let files = vec![PathBuf::from("scaling.csv")];
    let manifest_path = manifest::write(ExperimentKind::Scale, spec, out_dir, &files, &runs, summary)?;
    Ok(ExperimentOutput { kind: ExperimentKind::Scale, runs, files, manifest_path })
}

/// Runs the experiment of `kind`.
pub fn run_experiment(kind: ExperimentKind, spec: &ExperimentSpec, out_dir: &Path) -> Result<ExperimentOutput> {
    match kind {
        ExperimentKind::Adapt => run_adaptation_experiment(spec, out_dir),
        ExperimentKind::Scale => run_scaling_experiment(spec, out_dir),
    }
}

#[cfg(test)]
mod tests;
