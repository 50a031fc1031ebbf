//! Resilience-guided alternating optimization: one restricted subproblem
//! per sub-iteration, alternating beamformers and phases, under a
//! coherence-time budget, with blockage events and recovery detection.

mod recovery;
mod timeline;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelState, CVec, C64};
use crate::config::SystemConfig;
use crate::conic::{solve, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::metrics::{adaptation_gap, achievable_rate, user_weights, BeamformingMatrix};
use crate::subproblem::{
    assemble_beamforming_problem, assemble_phase_problem, evaluate_links, gradient_norm_with_slack,
    IterateState, ObjectiveWeights, Stage,
};

pub use recovery::{detect_recovery, recovery_from_trajectory, Recovery, RecoveryRule};
pub use timeline::{EventRecord, ScenarioTimeline, StepRecord, StepStatus, TIMELINE_SCHEMA};

/// Which resilience terms a run optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Gradient reward and redundancy penalty, both weighted per user.
    Proposed,
    /// Adaptation gap only.
    Baseline,
    /// Redundancy penalty only.
    RobustnessOnly,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Proposed, Method::Baseline, Method::RobustnessOnly];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Baseline => "baseline",
            Method::RobustnessOnly => "robustness-only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// `(alpha_1, alpha_2)` from the per-user direct-channel weights.
    pub fn alphas(&self, user_weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let zeros = vec![0.0; user_weights.len()];
        match self {
            Method::Proposed => (user_weights.to_vec(), user_weights.to_vec()),
            Method::Baseline => (zeros.clone(), zeros),
            Method::RobustnessOnly => (zeros, user_weights.to_vec()),
        }
    }
}

/// Knobs of the alternating loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaSettings {
    pub solver: SolverSettings,
    /// Priority of the adaptation gap over the resilience terms.
    pub nu: f64,
    /// Unit-modulus penalty weight of the `j`-th phase step in a coherence
    /// block: `min(start * growth^j, max)`.
    pub alpha_v_start: f64,
    pub alpha_v_growth: f64,
    pub alpha_v_max: f64,
    /// Halvings tried along the step before the expansion point is kept.
    pub backtracking_halvings: u32,
    /// Strict positivity floor of the gradient slack, bit/s.
    pub grad_slack_floor: f64,
    pub recovery_eps: f64,
    /// Minimum number of records a settled gap must span.
    pub settle_len: usize,
    /// Multiplies the per-user weights behind `alpha_1` and `alpha_2`.
    pub alpha_scale: f64,
}

impl Default for ScaSettings {
    fn default() -> Self {
        Self {
            solver: SolverSettings::sca(),
            nu: 1e3,
            alpha_v_start: 0.1,
            alpha_v_growth: 1.5,
            alpha_v_max: 10.0,
            backtracking_halvings: 6,
            grad_slack_floor: 1e-6,
            recovery_eps: 1e-2,
            settle_len: 3,
            alpha_scale: 1.0,
        }
    }
}

impl ScaSettings {
    pub fn alpha_v(&self, phase_step: usize) -> f64 {
        (self.alpha_v_start * self.alpha_v_growth.powi(phase_step as i32)).min(self.alpha_v_max)
    }
}

/// Unit-modulus phases with their angles in `[0, 2 pi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseShiftVector {
    pub v: CVec,
    pub theta: Vec<f64>,
}

/// `v_m / |v_m|`; zero entries map to phase zero.
pub fn project_unit_modulus(v: &CVec) -> PhaseShiftVector {
    let theta: Vec<f64> = v
        .iter()
        .map(|c| if c.norm() > 0.0 { c.arg().rem_euclid(std::f64::consts::TAU) } else { 0.0 })
        .collect();
    let v = CVec::from_iterator(theta.len(), theta.iter().map(|&t| C64::from_polar(1.0, t)));
    PhaseShiftVector { v, theta }
}

/// Largest `| |v_m| - 1 |`.
pub fn max_modulus_deviation(v: &CVec) -> f64 {
    v.iter().map(|c| (c.norm() - 1.0).abs()).fold(0.0, f64::max)
}

/// Matched filtering to the effective channels with random phases; each AP
/// spends its whole budget split equally across users. Slacks are set to the
/// achieved values (rates clipped at demand).
pub fn initialize_iterates<R: Rng + ?Sized>(
    channels: &ChannelState,
    config: &SystemConfig,
    settings: &ScaSettings,
    rng: &mut R,
) -> Result<IterateState> {
    let (n_count, l, k_count, m) =
        (channels.num_aps(), channels.antennas_per_ap(), channels.num_users(), channels.num_elements());
    let v = CVec::from_fn(m, |_, _| C64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU)));
    let per_user = (config.max_tx_power_w() / k_count as f64).sqrt();
    let mut w = BeamformingMatrix::zeros(n_count, l, k_count);
    for k in 0..k_count {
        let h = channels.effective(k, &v);
        for n in 0..n_count {
            let block = h.rows(n * l, l);
            let norm = block.norm();
            for j in 0..l {
                w.matrix_mut()[(n * l + j, k)] = if norm > 0.0 {
                    block[j] * (per_user / norm)
                } else {
                    C64::new(per_user / (l as f64).sqrt(), 0.0)
                };
            }
        }
    }
    let links = evaluate_links(channels, &w, &v, config.noise_power_w(), config.bandwidth_hz);
    let demands = config.demands();
    let mut state = IterateState {
        w,
        v,
        rates: links.rates.iter().zip(&demands).map(|(r, d)| r.min(*d)).collect(),
        ris_rates: links.ris_rates.iter().zip(&demands).map(|(r, d)| r.min(*d)).collect(),
        sinr_slack: links.sinr,
        ris_sinr_slack: links.ris_sinr,
        grad_slack: vec![0.0; k_count],
        stage: Stage::W,
    };
    repair(&mut state, channels, config, settings);
    Ok(state)
}

/// Pulls the slacks back onto the exact constraint set of `(w, v)`. `q` and
/// `u` appear nowhere else, so they are set tight: `q = sinr` and `u` equal
/// to the gradient norm it bounds (floored to stay positive). `q_ris` is
/// clamped into `[0, sinr_ris]`, and the rates are clipped to what their SINR
/// slacks support. Idempotent.
pub fn repair(state: &mut IterateState, channels: &ChannelState, config: &SystemConfig, settings: &ScaSettings) {
    let noise = config.noise_power_w();
    let bw = config.bandwidth_hz;
    let links = evaluate_links(channels, &state.w, &state.v, noise, bw);
    for k in 0..state.num_users() {
        state.sinr_slack[k] = links.sinr[k];
        state.ris_sinr_slack[k] = state.ris_sinr_slack[k].clamp(0.0, links.ris_sinr[k]);
        state.rates[k] = state.rates[k].clamp(0.0, achievable_rate(state.sinr_slack[k], bw));
        state.ris_rates[k] = state.ris_rates[k].clamp(0.0, achievable_rate(state.ris_sinr_slack[k], bw));
        let g = gradient_norm_with_slack(channels, &state.w, &state.v, k, state.ris_sinr_slack[k], noise, bw);
        state.grad_slack[k] = g.max(settings.grad_slack_floor);
    }
}

/// Adaptation gap of the allocated rates.
pub fn psi(state: &IterateState, demands: &[f64]) -> f64 {
    adaptation_gap(&state.rates, demands)
}

/// What one sub-iteration did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub stage: Stage,
    pub status: StepStatus,
    /// Surrogate objective at the previous and at the new expansion point,
    /// both measured with the program assembled at the previous one.
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    /// Fraction of the way to the solver's answer that was taken.
    pub step_size: f64,
}

/// One sub-iteration: assemble the restriction for `state.stage`, solve
/// it, and move toward the answer with a safeguarded step. On solver
/// failure, or when no step lowers the surrogate, the expansion point is
/// kept. The stage toggles either way.
pub fn step(
    state: &IterateState,
    channels: &ChannelState,
    config: &SystemConfig,
    weights: &ObjectiveWeights,
    settings: &ScaSettings,
) -> Result<(IterateState, StepOutcome)> {
    let stage = state.stage;
    let mut kept = state.clone();
    kept.stage = stage.other();
    let assembled = match stage {
        Stage::W => assemble_beamforming_problem(state, channels, weights, config),
        Stage::V => assemble_phase_problem(state, channels, weights, config),
    };
    let sub = match assembled {
        Ok(s) => s,
        Err(Error::DegenerateExpansion(_)) => {
            let outcome = StepOutcome {
                stage,
                status: StepStatus::Degenerate,
                surrogate_before: f64::NAN,
                surrogate_after: f64::NAN,
                step_size: 0.0,
            };
            return Ok((kept, outcome));
        }
        Err(e) => return Err(e),
    };
    let demands = config.demands();
    let x0 = sub.layout.pack(state, &demands);
    let f0 = sub.program.objective_value(&x0);
    let solution = solve(&sub.program, &settings.solver)?;
    if !solution.status.is_usable() {
        let outcome = StepOutcome {
            stage,
            status: StepStatus::SolverFailed(solution.status),
            surrogate_before: f0,
            surrogate_after: f0,
            step_size: 0.0,
        };
        return Ok((kept, outcome));
    }

    let tol = 1e-9 * f0.abs().max(1.0);
    let mut t = 1.0;
    for _ in 0..=settings.backtracking_halvings {
        let x: Vec<f64> = x0.iter().zip(&solution.x).map(|(a, b)| a + t * (b - a)).collect();
        let mut cand = sub.layout.unpack(&x, state)?;
        repair(&mut cand, channels, config, settings);
        let f = sub.program.objective_value(&sub.layout.pack(&cand, &demands));
        if f.is_finite() && f <= f0 + tol {
            let outcome = StepOutcome {
                stage,
                status: StepStatus::Accepted(solution.status),
                surrogate_before: f0,
                surrogate_after: f,
                step_size: t,
            };
            return Ok((cand, outcome));
        }
        t *= 0.5;
    }
    let outcome = StepOutcome { stage, status: StepStatus::Kept, surrogate_before: f0, surrogate_after: f0, step_size: 0.0 };
    Ok((kept, outcome))
}

/// Objective weights for `method` given the current channels.
pub fn method_weights(method: Method, channels: &ChannelState, settings: &ScaSettings) -> ObjectiveWeights {
    let norms: Vec<f64> = (0..channels.num_users()).map(|k| channels.direct_norm(k)).collect();
    let scaled: Vec<f64> = user_weights(&norms).iter().map(|w| w * settings.alpha_scale).collect();
    let (alpha_grad, alpha_red) = method.alphas(&scaled);
    ObjectiveWeights { alpha_grad, alpha_red, nu: settings.nu, alpha_v: 0.0 }
}

/// Runs `floor(T_c / T_calc)` sub-iterations starting with the beamforming
/// stage, appending one record per sub-iteration to `timeline`, then
/// projects the phases onto the unit circle.
pub fn run_coherence_interval(
    state: IterateState,
    channels: &ChannelState,
    config: &SystemConfig,
    weights: &ObjectiveWeights,
    settings: &ScaSettings,
    timeline: &mut ScenarioTimeline,
) -> Result<IterateState> {
    if config.calc_time_s > config.coherence_time_s {
        return Err(Error::Config("calc_time_s exceeds coherence_time_s".into()));
    }
    let demands = config.demands();
    let mut state = state;
    state.stage = Stage::W;
    let mut phase_steps = 0;
    for _ in 0..config.steps_per_block() {
        let mut w = weights.clone();
        if state.stage == Stage::V {
            w.alpha_v = settings.alpha_v(phase_steps);
            phase_steps += 1;
        }
        let (next, outcome) = step(&state, channels, config, &w, settings)?;
        state = next;
        timeline.push_step(&state, &outcome, w.alpha_v, &demands, config.calc_time_s);
    }
    timeline.pre_projection_deviation.push(max_modulus_deviation(&state.v));
    state.v = project_unit_modulus(&state.v).v;
    repair(&mut state, channels, config, settings);
    Ok(state)
}

/// Which users a blockage event hits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockagePolicy {
    /// The not-yet-blocked user with the strongest direct channel.
    StrongestNext,
    Users(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockageOutcome {
    pub channels: ChannelState,
    pub blocked: Vec<usize>,
    /// Direct-channel user weights recomputed after the event.
    pub user_weights: Vec<f64>,
}

/// Blocks every direct link of the selected users. RIS links are untouched.
pub fn apply_blockage(channels: &ChannelState, policy: &BlockagePolicy) -> Result<BlockageOutcome> {
    let k_count = channels.num_users();
    let blocked = match policy {
        BlockagePolicy::StrongestNext => {
            let pick = (0..k_count)
                .filter(|&k| !channels.is_user_blocked(k))
                .max_by(|&a, &b| channels.direct_norm(a).total_cmp(&channels.direct_norm(b)).then(b.cmp(&a)))
                .ok_or(Error::AllBlocked)?;
            vec![pick]
        }
        BlockagePolicy::Users(users) => {
            if let Some(&bad) = users.iter().find(|&&k| k >= k_count) {
                return Err(Error::Config(format!("cannot block user {bad}; only {k_count} users")));
            }
            users.clone()
        }
    };
    let mut out = channels.clone();
    for &k in &blocked {
        out.block_user(k);
    }
    let norms: Vec<f64> = (0..k_count).map(|k| out.direct_norm(k)).collect();
    Ok(BlockageOutcome { channels: out, blocked, user_weights: user_weights(&norms) })
}

/// Runs one method through an initial coherence block and `num_blockages`
/// strongest-first blockage events, each followed by one coherence block.
pub fn run_scenario(
    initial: IterateState,
    channels: &ChannelState,
    config: &SystemConfig,
    method: Method,
    num_blockages: usize,
    settings: &ScaSettings,
) -> Result<ScenarioTimeline> {
    let demands = config.demands();
    let mut timeline = ScenarioTimeline::new(config.num_users);
    timeline.push_initial(&initial, &demands);
    let mut channels = channels.clone();
    let weights = method_weights(method, &channels, settings);
    let mut state = run_coherence_interval(initial, &channels, config, &weights, settings, &mut timeline)?;
    for _ in 0..num_blockages {
        let outcome = apply_blockage(&channels, &BlockagePolicy::StrongestNext)?;
        channels = outcome.channels;
        repair(&mut state, &channels, config, settings);
        timeline.push_event(&state, &outcome.blocked, &demands);
        let weights = method_weights(method, &channels, settings);
        state = run_coherence_interval(state, &channels, config, &weights, settings, &mut timeline)?;
    }
    timeline.finalize_events(&demands, config.desired_recovery_time_s, settings)?;
    Ok(timeline)
}

/// Whether a step's solver status counts as a numerical failure.
pub fn is_numerical_failure(status: &StepStatus) -> bool {
    matches!(status, StepStatus::SolverFailed(SolveStatus::IterationLimit) | StepStatus::Degenerate)
}

#[cfg(test)]
mod tests;

