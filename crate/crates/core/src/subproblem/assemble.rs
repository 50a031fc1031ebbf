use crate::channel::{CVec, ChannelState};
use crate::config::SystemConfig;
use crate::conic::{AffineExpr, Cone, ConeConstraint, ConicProgram};
use crate::error::{Error, Result};

use super::rows::{
    gradient_norm_restriction_v, gradient_norm_restriction_w, sinr_restriction_v, sinr_restriction_w, Link,
};
use super::{IterateState, Layout, ObjectiveWeights, Stage, RATE_UNIT};

/// An assembled program together with its variable map.
#[derive(Clone, Debug)]
pub struct Subproblem {
    pub program: ConicProgram,
    pub layout: Layout,
    /// Users whose gradient row was dropped because the expansion point
    /// has a vanishing gradient direction; their `u_k` is pinned instead.
    pub dropped_gradient_rows: Vec<usize>,
}

/// `alpha_v sum_m (1 + |v~_m|^2 - 2 Re{conj(v~_m) v_m})`: the convex upper
/// bound of `alpha_v sum_m (1 - |v_m|^2)` at `v~`. Lowering it pushes every
/// element toward the unit circle; it vanishes at a unit-modulus `v = v~`,
/// which keeps the objective on the scale of the rate terms. Empty when
/// `alpha_v = 0`.
pub fn modulus_penalty(v_tilde: &CVec, alpha_v: f64, layout: &Layout) -> AffineExpr {
    let mut obj = AffineExpr::constant(0.0);
    if alpha_v == 0.0 {
        return obj;
    }
    for (m, vm) in v_tilde.iter().enumerate() {
        let (re, im) = layout.v(m);
        obj.add_term(re, -2.0 * alpha_v * vm.re);
        obj.add_term(im, -2.0 * alpha_v * vm.im);
        obj.add_constant(alpha_v * (1.0 + vm.norm_sqr()));
    }
    obj
}

fn check_dims(state: &IterateState, channels: &ChannelState, weights: &ObjectiveWeights) -> Result<()> {
    let k = channels.num_users();
    let lens = [
        state.rates.len(),
        state.ris_rates.len(),
        state.sinr_slack.len(),
        state.ris_sinr_slack.len(),
        state.grad_slack.len(),
        weights.alpha_grad.len(),
        weights.alpha_red.len(),
        state.w.num_users(),
    ];
    if lens.iter().any(|&l| l != k) {
        return Err(Error::Dimension(format!("expected {k} users in state and weights")));
    }
    if state.v.len() != channels.num_elements() || state.w.matrix().nrows() != channels.total_antennas() {
        return Err(Error::Dimension("expansion point does not match channel dimensions".into()));
    }
    Ok(())
}

fn declare_vars(program: &mut ConicProgram, layout: &Layout) {
    for id in 0..layout.num_vars() {
        program.add_var(layout.var_name(id));
    }
    for k in 0..layout.num_users() {
        for id in [layout.rate(k), layout.ris_rate(k), layout.sinr(k), layout.ris_sinr(k), layout.grad(k)] {
            program.set_bounds(id, 0.0, f64::INFINITY);
        }
    }
}

/// SINR below which a link's rate is under a millionth of its demand. Such a
/// link is not restricted but pinned: the restriction's `1 / q~` coefficients
/// would make the program too ill-conditioned to solve, and the link is
/// worthless to the objective anyway.
pub fn negligible_sinr(demand_bps: f64, bandwidth_hz: f64) -> f64 {
    (NEGLIGIBLE_RATE_FRACTION * demand_bps / bandwidth_hz * std::f64::consts::LN_2).exp_m1()
}

pub const NEGLIGIBLE_RATE_FRACTION: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
struct LiveLinks {
    effective: bool,
    ris: bool,
}

fn pin(program: &mut ConicProgram, id: usize, value: f64, label: String) {
    let mut e = AffineExpr::var(id);
    e.add_constant(-value);
    program.add_constraint(ConeConstraint::new(Cone::Zero, vec![e], label));
}

/// `r <= B' log2(1 + q)` as `(r ln2 / B', 1, 1 + q)` in the exponential cone.
fn rate_row(rate: usize, slack: usize, bandwidth: f64, label: String) -> ConeConstraint {
    let mut z = AffineExpr::var(slack);
    z.add_constant(1.0);
    ConeConstraint::new(
        Cone::Exponential,
        vec![AffineExpr::term(rate, std::f64::consts::LN_2 / bandwidth), AffineExpr::constant(1.0), z],
        label,
    )
}

/// Rows and objective terms shared by both stages. `stage_rows` adds the
/// SINR and gradient restrictions for one user and reports whether the
/// gradient row was kept.
fn assemble_common(
    state: &IterateState,
    channels: &ChannelState,
    weights: &ObjectiveWeights,
    config: &SystemConfig,
    stage: Stage,
    mut stage_rows: impl FnMut(&mut ConicProgram, &Layout, usize, LiveLinks, bool) -> Result<bool>,
) -> Result<Subproblem> {
    check_dims(state, channels, weights)?;
    let k_count = channels.num_users();
    let layout = Layout::new(stage, channels.total_antennas(), k_count, channels.num_elements(), &weights.alpha_red);
    let mut program = ConicProgram::new();
    declare_vars(&mut program, &layout);
    let demands = config.demands();
    let bw = config.bandwidth_hz / RATE_UNIT;
    let mut dropped = Vec::new();

    let mut objective = AffineExpr::constant(0.0);
    for k in 0..k_count {
        let d = demands[k] / RATE_UNIT;
        let (r, t) = (layout.rate(k), layout.gap(k));

        // t_k >= |r_k / d_k - 1|
        let mut above = AffineExpr::var(t);
        above.add_term(r, -1.0 / d).add_constant(1.0);
        let mut below = AffineExpr::var(t);
        below.add_term(r, 1.0 / d).add_constant(-1.0);
        program.add_constraint(ConeConstraint::new(Cone::NonNeg, vec![above, below], format!("gap k={k}")));
        objective.add_term(t, weights.nu);

        let floor = negligible_sinr(demands[k], config.bandwidth_hz);
        let live = LiveLinks {
            effective: state.sinr_slack[k] > floor,
            ris: weights.uses_ris_link(k) && state.ris_sinr_slack[k] > floor,
        };
        if live.effective {
            program.add_constraint(rate_row(r, layout.sinr(k), bw, format!("rate k={k}")));
        } else {
            pin(&mut program, r, state.rates[k] / RATE_UNIT, format!("pin r k={k}"));
            pin(&mut program, layout.sinr(k), state.sinr_slack[k], format!("pin q k={k}"));
        }
        if live.ris {
            program.add_constraint(rate_row(layout.ris_rate(k), layout.ris_sinr(k), bw, format!("rate-ris k={k}")));
        } else {
            pin(&mut program, layout.ris_rate(k), state.ris_rates[k] / RATE_UNIT, format!("pin r_ris k={k}"));
            pin(&mut program, layout.ris_sinr(k), state.ris_sinr_slack[k], format!("pin q_ris k={k}"));
        }

        if let Some(s) = layout.red(k) {
            // s >= (r - r_ris)^2  <=>  ||(s - 1, 2 (r - r_ris))|| <= s + 1
            let mut head = AffineExpr::var(s);
            head.add_constant(1.0);
            let mut tail = AffineExpr::var(s);
            tail.add_constant(-1.0);
            let mut diff = AffineExpr::term(r, 2.0);
            diff.add_term(layout.ris_rate(k), -2.0);
            program.add_constraint(ConeConstraint::new(Cone::SecondOrder, vec![head, tail, diff], format!("red k={k}")));
            objective.add_term(s, weights.alpha_red[k]);
        }

        let want_gradient = weights.alpha_grad[k] > 0.0;
        let kept = stage_rows(&mut program, &layout, k, live, want_gradient)?;
        if kept {
            objective.add_term(layout.grad(k), -weights.alpha_grad[k]);
        } else {
            if want_gradient {
                dropped.push(k);
            }
            pin(&mut program, layout.grad(k), state.grad_slack[k] / RATE_UNIT, format!("pin u k={k}"));
        }
    }
    program.objective = objective;
    Ok(Subproblem { program, layout, dropped_gradient_rows: dropped })
}

/// The beamforming restriction around `state` (phases fixed at `state.v`).
pub fn assemble_beamforming_problem(
    state: &IterateState,
    channels: &ChannelState,
    weights: &ObjectiveWeights,
    config: &SystemConfig,
) -> Result<Subproblem> {
    let noise = config.noise_power_w();
    let bw = config.bandwidth_hz;
    let demands = config.demands();
    // a gradient norm under a millionth of the demand per unit phase change
    // is pinned for the same reason as a negligible link
    let mut sub = assemble_common(state, channels, weights, config, Stage::W, |program, layout, k, live, want_grad| {
        if live.effective {
            program.add_constraint(sinr_restriction_w(state, channels, k, Link::Effective, layout, noise)?.to_constraint());
        }
        if live.ris {
            program.add_constraint(sinr_restriction_w(state, channels, k, Link::RisOnly, layout, noise)?.to_constraint());
        }
        if !want_grad || state.grad_slack[k] < NEGLIGIBLE_RATE_FRACTION * demands[k] {
            return Ok(false);
        }
        match gradient_norm_restriction_w(state, channels, k, layout, noise, bw) {
            Ok(row) => {
                program.add_constraint(row.to_constraint());
                Ok(true)
            }
            Err(Error::DegenerateExpansion(_)) => Ok(false),
            Err(e) => Err(e),
        }
    })?;

    // per-AP power: ||w_{n, .}|| <= sqrt(P_max)
    let layout = &sub.layout;
    let l = channels.antennas_per_ap();
    let amp = config.max_tx_power_w().sqrt();
    for n in 0..channels.num_aps() {
        let mut rows = vec![AffineExpr::constant(amp)];
        for k in 0..channels.num_users() {
            for row in n * l..(n + 1) * l {
                let (re, im) = layout.w(row, k);
                rows.push(AffineExpr::var(re));
                rows.push(AffineExpr::var(im));
            }
        }
        sub.program.add_constraint(ConeConstraint::new(Cone::SecondOrder, rows, format!("power n={n}")));
    }
    Ok(sub)
}

/// The phase-shift restriction around `state` (beamformers fixed at `state.w`).
pub fn assemble_phase_problem(
    state: &IterateState,
    channels: &ChannelState,
    weights: &ObjectiveWeights,
    config: &SystemConfig,
) -> Result<Subproblem> {
    let noise = config.noise_power_w();
    let bw = config.bandwidth_hz;
    let demands = config.demands();
    let mut sub = assemble_common(state, channels, weights, config, Stage::V, |program, layout, k, live, want_grad| {
        if live.effective {
            program.add_constraint(sinr_restriction_v(state, channels, k, Link::Effective, layout, noise)?.to_constraint());
        }
        if live.ris {
            program.add_constraint(sinr_restriction_v(state, channels, k, Link::RisOnly, layout, noise)?.to_constraint());
        }
        if !want_grad || state.grad_slack[k] < NEGLIGIBLE_RATE_FRACTION * demands[k] {
            return Ok(false);
        }
        match gradient_norm_restriction_v(state, channels, k, layout, noise, bw) {
            Ok(row) => {
                program.add_constraint(row.to_constraint());
                Ok(true)
            }
            Err(Error::DegenerateExpansion(_)) => Ok(false),
            Err(e) => Err(e),
        }
    })?;

    // |v_m| <= 1
    for m in 0..channels.num_elements() {
        let (re, im) = sub.layout.v(m);
        sub.program.add_constraint(ConeConstraint::new(
            Cone::SecondOrder,
            vec![AffineExpr::constant(1.0), AffineExpr::var(re), AffineExpr::var(im)],
            format!("modulus m={m}"),
        ));
    }
    let penalty = modulus_penalty(&state.v, weights.alpha_v, &sub.layout);
    sub.program.objective.add_scaled(&penalty, 1.0);
    Ok(sub)
}
