use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::conic::SolveStatus;
use crate::error::Result;
use crate::resilience::{resilience_components, resilience_score, RateSnapshot, ResilienceComponents, ResilienceWeights};
use crate::subproblem::{IterateState, Stage};

use super::recovery::{detect_recovery, Recovery};
use super::{psi, ScaSettings, StepOutcome};

/// First line of every timeline CSV.
pub const TIMELINE_SCHEMA: &str = "# schema: ris-resilience timeline v1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepStatus {
    /// The solver answered and a step was taken.
    Accepted(SolveStatus),
    /// The solver answered but no step lowered the surrogate.
    Kept,
    /// No usable answer; the expansion point was kept.
    SolverFailed(SolveStatus),
    /// A restriction could not be built at the expansion point.
    Degenerate,
}

impl StepStatus {
    pub fn tag(&self) -> &'static str {
        match self {
            StepStatus::Accepted(SolveStatus::Optimal) => "optimal",
            StepStatus::Accepted(_) => "near-optimal",
            StepStatus::Kept => "kept",
            StepStatus::SolverFailed(SolveStatus::Infeasible) => "infeasible",
            StepStatus::SolverFailed(SolveStatus::Unbounded) => "unbounded",
            StepStatus::SolverFailed(_) => "solver-failed",
            StepStatus::Degenerate => "degenerate",
        }
    }
}

/// One sub-iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// `z`, counted from one.
    pub iteration: usize,
    /// Elapsed modelled time after this sub-iteration.
    pub time_s: f64,
    pub stage: Stage,
    pub psi: f64,
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    pub status: StepStatus,
    pub step_size: f64,
    pub alpha_v: f64,
    /// Allocated rates, bit/s.
    pub rates: Vec<f64>,
    pub ris_rates: Vec<f64>,
}

/// A blockage event and what followed it.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    /// `t_0`: the event time, at a coherence-block boundary.
    pub time_s: f64,
    pub blocked_users: Vec<usize>,
    /// Allocated rates right after the event, before any re-optimization.
    pub rates: Vec<f64>,
    pub psi: f64,
    /// Number of sub-iterations completed before the event.
    pub iterations_before: usize,
    pub recovery: Option<Recovery>,
    /// Raw (uncapped) components.
    pub components: Option<ResilienceComponents>,
    /// Score from the capped components with equal weights.
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioTimeline {
    pub num_users: usize,
    pub initial_rates: Vec<f64>,
    pub initial_psi: f64,
    pub steps: Vec<StepRecord>,
    pub events: Vec<EventRecord>,
    /// `max | |v_m| - 1 |` just before each end-of-block projection.
    pub pre_projection_deviation: Vec<f64>,
}

impl ScenarioTimeline {
    pub fn new(num_users: usize) -> Self {
        Self {
            num_users,
            initial_rates: Vec::new(),
            initial_psi: f64::NAN,
            steps: Vec::new(),
            events: Vec::new(),
            pre_projection_deviation: Vec::new(),
        }
    }

    pub fn push_initial(&mut self, state: &IterateState, demands: &[f64]) {
        self.initial_rates = state.rates.clone();
        self.initial_psi = psi(state, demands);
    }

    /// Elapsed modelled time after the sub-iterations recorded so far.
    pub fn elapsed(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.time_s)
    }

    pub(crate) fn push_step(&mut self, state: &IterateState, outcome: &StepOutcome, alpha_v: f64, demands: &[f64], calc_time: f64) {
        let iteration = self.steps.len() + 1;
        self.steps.push(StepRecord {
            iteration,
            // from the integer count so the budget arithmetic never drifts
            time_s: iteration as f64 * calc_time,
            stage: outcome.stage,
            psi: psi(state, demands),
            surrogate_before: outcome.surrogate_before,
            surrogate_after: outcome.surrogate_after,
            status: outcome.status,
            step_size: outcome.step_size,
            alpha_v,
            rates: state.rates.clone(),
            ris_rates: state.ris_rates.clone(),
        });
    }

    pub(crate) fn push_event(&mut self, state: &IterateState, blocked: &[usize], demands: &[f64]) {
        self.events.push(EventRecord {
            time_s: self.elapsed(),
            blocked_users: blocked.to_vec(),
            rates: state.rates.clone(),
            psi: psi(state, demands),
            iterations_before: self.steps.len(),
            recovery: None,
            components: None,
            score: None,
        });
    }

    /// End of the window that belongs to event `index`: the next event or the last record.
    pub fn horizon(&self, index: usize) -> f64 {
        self.events.get(index + 1).map_or(self.elapsed(), |e| e.time_s)
    }

    /// The post-event rate trajectory of event `index`: the event snapshot
    /// followed by every record up to the horizon.
    pub fn trajectory(&self, index: usize) -> Vec<RateSnapshot> {
        let event = &self.events[index];
        let horizon = self.horizon(index);
        let mut out = vec![RateSnapshot { time_s: event.time_s, rates: event.rates.clone() }];
        out.extend(
            self.steps[event.iterations_before..]
                .iter()
                .take_while(|s| s.time_s <= horizon + 1e-12)
                .map(|s| RateSnapshot { time_s: s.time_s, rates: s.rates.clone() }),
        );
        out
    }

    /// Fills in recovery time, components and score of every event.
    pub fn finalize_events(&mut self, demands: &[f64], desired_recovery: f64, settings: &ScaSettings) -> Result<()> {
        for i in 0..self.events.len() {
            let rec = detect_recovery(self, i, demands, settings.recovery_eps, settings.settle_len)?;
            let traj = self.trajectory(i);
            let comps = resilience_components(&traj, rec.t0, rec.tq, desired_recovery, demands)?;
            let score = resilience_score(&comps.capped(), &ResilienceWeights::default())?;
            let e = &mut self.events[i];
            e.recovery = Some(rec);
            e.components = Some(comps);
            e.score = Some(score);
        }
        Ok(())
    }

    /// Sub-iteration records and event rows as CSV. Columns:
    /// `kind, z, time_s, stage, psi, surrogate_before, surrogate_after,
    /// status, step_size, alpha_v, event_users, rate_0.., ris_rate_0..`.
    /// `kind` is `init`, `step` or `event`; fields that do not apply are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        writeln!(out, "{TIMELINE_SCHEMA}")?;
        let mut wtr = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "kind", "z", "time_s", "stage", "psi", "surrogate_before", "surrogate_after", "status", "step_size",
            "alpha_v", "event_users",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..self.num_users).map(|k| format!("rate_{k}")));
        header.extend((0..self.num_users).map(|k| format!("ris_rate_{k}")));
        wtr.write_record(&header)?;

        let blank_ris = vec![String::new(); self.num_users];
        let fmt = |x: f64| format!("{x:?}");
        let mut row = |fields: Vec<String>, rates: &[f64], ris: Option<&[f64]>| -> Result<()> {
            let mut rec = fields;
            rec.extend(rates.iter().map(|&r| fmt(r)));
            match ris {
                Some(r) => rec.extend(r.iter().map(|&x| fmt(x))),
                None => rec.extend(blank_ris.iter().cloned()),
            }
            wtr.write_record(&rec)?;
            Ok(())
        };
        let empty = String::new;
        row(
            vec!["init".into(), "0".into(), fmt(0.0), empty(), fmt(self.initial_psi), empty(), empty(), empty(), empty(), empty(), empty()],
            &self.initial_rates,
            None,
        )?;
        let mut next_event = 0;
        for s in &self.steps {
            while next_event < self.events.len() && self.events[next_event].iterations_before < s.iteration {
                let e = &self.events[next_event];
                let users = e.blocked_users.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";");
                row(
                    vec!["event".into(), e.iterations_before.to_string(), fmt(e.time_s), empty(), fmt(e.psi), empty(), empty(), empty(), empty(), empty(), users],
                    &e.rates,
                    None,
                )?;
                next_event += 1;
            }
            row(
                vec![
                    "step".into(),
                    s.iteration.to_string(),
                    fmt(s.time_s),
                    s.stage.tag().into(),
                    fmt(s.psi),
                    fmt(s.surrogate_before),
                    fmt(s.surrogate_after),
                    s.status.tag().into(),
                    fmt(s.step_size),
                    fmt(s.alpha_v),
                    empty(),
                ],
                &s.rates,
                Some(&s.ris_rates),
            )?;
        }
        wtr.flush()?;
        Ok(())
    }
}
