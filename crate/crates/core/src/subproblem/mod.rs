//! Convex restrictions of the beamforming and phase-shift subproblems,
//! assembled as conic programs around an expansion point.
//!
//! Inside a program every channel is divided by the noise amplitude (so the
//! noise term is one) and rates, as well as the gradient-norm slacks, are
//! expressed in Mbit/s. [`Layout::pack`] and [`Layout::unpack`] convert to
//! and from the bit/s values held in [`IterateState`].

mod assemble;
mod rows;

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelState, CVec, C64};
use crate::conic::VarId;
use crate::error::{Error, Result};
use crate::metrics::{achievable_rate, sinr, BeamformingMatrix};

pub use assemble::{
    assemble_beamforming_problem, assemble_phase_problem, modulus_penalty, negligible_sinr, Subproblem,
    NEGLIGIBLE_RATE_FRACTION,
};
pub use rows::{
    gradient_norm_restriction_v, gradient_norm_restriction_w, sinr_restriction_v, sinr_restriction_w,
    ComplexAffine, Link, TaylorRow,
};

/// Rates and gradient slacks are in units of `RATE_UNIT` bit/s inside programs.
pub const RATE_UNIT: f64 = 1e6;

/// Which block of variables a subproblem optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Beamformers `w` with fixed phases.
    W,
    /// Phase shifts `v` with fixed beamformers.
    V,
}

impl Stage {
    pub fn other(self) -> Self {
        match self {
            Stage::W => Stage::V,
            Stage::V => Stage::W,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Stage::W => "w",
            Stage::V => "v",
        }
    }
}

/// Expansion point: beamformers, phases and the slack vector
/// `kappa = (r, r_RIS, q, q_RIS, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IterateState {
    pub w: BeamformingMatrix,
    pub v: CVec,
    /// bit/s.
    pub rates: Vec<f64>,
    /// bit/s.
    pub ris_rates: Vec<f64>,
    pub sinr_slack: Vec<f64>,
    pub ris_sinr_slack: Vec<f64>,
    /// Gradient-norm slack `u_k`, bit/s per unit phase coefficient.
    pub grad_slack: Vec<f64>,
    /// Stage of the next subproblem to solve.
    pub stage: Stage,
}

impl IterateState {
    pub fn num_users(&self) -> usize {
        self.rates.len()
    }
}

/// Objective weights of one subproblem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    /// `alpha_{1,k}`, rewarding the RIS-rate gradient norm.
    pub alpha_grad: Vec<f64>,
    /// `alpha_{2,k}`, penalizing the gap between total and RIS-only rate.
    pub alpha_red: Vec<f64>,
    /// `nu_const`, priority of the adaptation gap.
    pub nu: f64,
    /// Unit-modulus penalty weight of the phase stage.
    pub alpha_v: f64,
}

impl ObjectiveWeights {
    pub fn gap_only(num_users: usize, nu: f64) -> Self {
        Self { alpha_grad: vec![0.0; num_users], alpha_red: vec![0.0; num_users], nu, alpha_v: 0.0 }
    }

    /// Whether user `k` needs the RIS-only rate and SINR rows.
    pub fn uses_ris_link(&self, k: usize) -> bool {
        self.alpha_grad[k] > 0.0 || self.alpha_red[k] > 0.0
    }
}

/// Exact link quantities of a `(w, v)` pair, with rates in bit/s.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkEvaluation {
    pub sinr: Vec<f64>,
    pub ris_sinr: Vec<f64>,
    pub rates: Vec<f64>,
    pub ris_rates: Vec<f64>,
}

pub fn evaluate_links(
    channels: &ChannelState,
    w: &BeamformingMatrix,
    v: &CVec,
    noise_power: f64,
    bandwidth_hz: f64,
) -> LinkEvaluation {
    let k_count = channels.num_users();
    let sinr_eff: Vec<f64> = (0..k_count)
        .map(|k| sinr(&channels.effective(k, v), w, k, noise_power))
        .collect();
    let sinr_ris: Vec<f64> = (0..k_count)
        .map(|k| sinr(&channels.ris_only(k, v), w, k, noise_power))
        .collect();
    LinkEvaluation {
        rates: sinr_eff.iter().map(|&g| achievable_rate(g, bandwidth_hz)).collect(),
        ris_rates: sinr_ris.iter().map(|&g| achievable_rate(g, bandwidth_hz)).collect(),
        sinr: sinr_eff,
        ris_sinr: sinr_ris,
    }
}

/// `2B ||b_kk - q_RIS sum_{i != k} b_ki|| / (ln2 (sum_i |a_ki|^2 + noise))` in bit/s:
/// the RIS-rate gradient norm with the SINR replaced by the slack `q_ris`.
/// With `q_ris` equal to the RIS-only SINR this is `||grad_v r_k^RIS||`.
pub fn gradient_norm_with_slack(
    channels: &ChannelState,
    w: &BeamformingMatrix,
    v: &CVec,
    k: usize,
    q_ris: f64,
    noise_power: f64,
    bandwidth_hz: f64,
) -> f64 {
    let g = channels.cascaded(k);
    let p = g * v;
    let mut eta = CVec::zeros(v.len());
    let mut denom = noise_power;
    for i in 0..w.num_users() {
        let wi = w.matrix().column(i);
        let hw = g.ad_mul(&wi);
        let scalar = wi.dotc(&p);
        denom += scalar.norm_sqr();
        let weight = if i == k { scalar } else { scalar * (-q_ris) };
        eta.axpy(weight, &hw, C64::new(1.0, 0.0));
    }
    2.0 * bandwidth_hz * eta.norm() / (LN_2 * denom)
}

/// Variable positions of one assembled subproblem.
///
/// The first block holds the real and imaginary parts of `w` (stage `w`,
/// ordered user-major then stacked antenna) or `v` (stage `v`); then come
/// `r`, `r_RIS`, `q`, `q_RIS`, `u` and the epigraph variables of the gap
/// (one per user) and of the redundancy terms (one per user with
/// `alpha_2 > 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub stage: Stage,
    num_users: usize,
    total_antennas: usize,
    num_elements: usize,
    block: usize,
    red: Vec<Option<VarId>>,
    num_vars: usize,
}

impl Layout {
    pub fn new(stage: Stage, total_antennas: usize, num_users: usize, num_elements: usize, alpha_red: &[f64]) -> Self {
        let block = match stage {
            Stage::W => 2 * total_antennas * num_users,
            Stage::V => 2 * num_elements,
        };
        let mut next = block + 6 * num_users;
        let red = alpha_red
            .iter()
            .map(|&a| {
                (a > 0.0).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        Self { stage, num_users, total_antennas, num_elements, block, red, num_vars: next }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    /// Length of the complex block in real coordinates.
    pub fn block_len(&self) -> usize {
        self.block
    }

    /// `(re, im)` of `w[row, k]`; stage `w` only.
    pub fn w(&self, row: usize, k: usize) -> (VarId, VarId) {
        debug_assert_eq!(self.stage, Stage::W);
        let base = 2 * (k * self.total_antennas + row);
        (base, base + 1)
    }

    /// `(re, im)` of `v[m]`; stage `v` only.
    pub fn v(&self, m: usize) -> (VarId, VarId) {
        debug_assert_eq!(self.stage, Stage::V);
        (2 * m, 2 * m + 1)
    }

    pub fn rate(&self, k: usize) -> VarId {
        self.block + k
    }

    pub fn ris_rate(&self, k: usize) -> VarId {
        self.block + self.num_users + k
    }

    pub fn sinr(&self, k: usize) -> VarId {
        self.block + 2 * self.num_users + k
    }

    pub fn ris_sinr(&self, k: usize) -> VarId {
        self.block + 3 * self.num_users + k
    }

    pub fn grad(&self, k: usize) -> VarId {
        self.block + 4 * self.num_users + k
    }

    /// Epigraph of `|r_k / d_k - 1|`.
    pub fn gap(&self, k: usize) -> VarId {
        self.block + 5 * self.num_users + k
    }

    /// Epigraph of `(r_k - r_k^RIS)^2`, present only when `alpha_{2,k} > 0`.
    pub fn red(&self, k: usize) -> Option<VarId> {
        self.red[k]
    }

    pub fn var_name(&self, id: VarId) -> String {
        let k_count = self.num_users;
        if id < self.block {
            let part = if id % 2 == 0 { "re" } else { "im" };
            return match self.stage {
                Stage::W => {
                    let flat = id / 2;
                    format!("w[{},{}].{part}", flat % self.total_antennas, flat / self.total_antennas)
                }
                Stage::V => format!("v[{}].{part}", id / 2),
            };
        }
        let rel = id - self.block;
        if rel < 6 * k_count {
            let names = ["r", "r_ris", "q", "q_ris", "u", "t"];
            return format!("{}[{}]", names[rel / k_count], rel % k_count);
        }
        let k = self.red.iter().position(|&r| r == Some(id)).unwrap_or(usize::MAX);
        format!("s[{k}]")
    }

    /// Program-space coordinates of `state`, with epigraph variables tight.
    pub fn pack(&self, state: &IterateState, demands: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.num_vars];
        match self.stage {
            Stage::W => {
                for k in 0..self.num_users {
                    for row in 0..self.total_antennas {
                        let (re, im) = self.w(row, k);
                        let c = state.w.matrix()[(row, k)];
                        x[re] = c.re;
                        x[im] = c.im;
                    }
                }
            }
            Stage::V => {
                for m in 0..self.num_elements {
                    let (re, im) = self.v(m);
                    x[re] = state.v[m].re;
                    x[im] = state.v[m].im;
                }
            }
        }
        for k in 0..self.num_users {
            let r = state.rates[k] / RATE_UNIT;
            let rr = state.ris_rates[k] / RATE_UNIT;
            x[self.rate(k)] = r;
            x[self.ris_rate(k)] = rr;
            x[self.sinr(k)] = state.sinr_slack[k];
            x[self.ris_sinr(k)] = state.ris_sinr_slack[k];
            x[self.grad(k)] = state.grad_slack[k] / RATE_UNIT;
            x[self.gap(k)] = (r / (demands[k] / RATE_UNIT) - 1.0).abs();
            if let Some(s) = self.red(k) {
                x[s] = (r - rr).powi(2);
            }
        }
        x
    }

    /// Reads a program point back; the block of the other stage is taken
    /// from `carry`, and the returned state is tagged with the next stage.
    pub fn unpack(&self, x: &[f64], carry: &IterateState) -> Result<IterateState> {
        if x.len() != self.num_vars {
            return Err(Error::Dimension(format!("point has {} entries, layout {}", x.len(), self.num_vars)));
        }
        let mut state = carry.clone();
        match self.stage {
            Stage::W => {
                let mat = state.w.matrix_mut();
                for k in 0..self.num_users {
                    for row in 0..self.total_antennas {
                        let (re, im) = self.w(row, k);
                        mat[(row, k)] = C64::new(x[re], x[im]);
                    }
                }
            }
            Stage::V => {
                for m in 0..self.num_elements {
                    let (re, im) = self.v(m);
                    state.v[m] = C64::new(x[re], x[im]);
                }
            }
        }
        for k in 0..self.num_users {
            state.rates[k] = x[self.rate(k)] * RATE_UNIT;
            state.ris_rates[k] = x[self.ris_rate(k)] * RATE_UNIT;
            state.sinr_slack[k] = x[self.sinr(k)];
            state.ris_sinr_slack[k] = x[self.ris_sinr(k)];
            state.grad_slack[k] = x[self.grad(k)] * RATE_UNIT;
        }
        state.stage = self.stage.other();
        Ok(state)
    }
}

#[cfg(test)]
mod layout_tests {
    use super::*;
    use crate::config::SystemConfig;
    use crate::geometry::build_geometry;
    use crate::metrics::ris_rate_gradient;

    #[test]
    fn layout_offsets_are_disjoint() {
        let lay = Layout::new(Stage::W, 8, 4, 16, &[0.0, 0.5, 0.0, 1.0]);
        assert_eq!(lay.num_vars(), 2 * 8 * 4 + 6 * 4 + 2);
        let mut ids: Vec<VarId> = (0..lay.block_len()).collect();
        for k in 0..4 {
            ids.extend([lay.rate(k), lay.ris_rate(k), lay.sinr(k), lay.ris_sinr(k), lay.grad(k), lay.gap(k)]);
            ids.extend(lay.red(k));
        }
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), lay.num_vars());
        assert_eq!(lay.var_name(lay.w(3, 1).1), "w[3,1].im");
        assert_eq!(lay.var_name(lay.grad(2)), "u[2]");
        assert_eq!(lay.var_name(lay.red(3).unwrap()), "s[3]");
    }

    #[test]
    fn slack_gradient_norm_matches_true_gradient() {
        let cfg = SystemConfig { num_ris_elements: 16, ..Default::default() };
        let geo = build_geometry(&cfg).unwrap();
        let ch = ChannelState::generate(&geo, &cfg, 3).unwrap();
        let nl = cfg.total_antennas();
        let w = BeamformingMatrix::new(
            crate::channel::CMat::from_fn(nl, 4, |r, c| C64::new((r + c) as f64 * 0.1, 0.3 - c as f64 * 0.05)),
            2,
            4,
        )
        .unwrap();
        let v = CVec::from_fn(16, |m, _| C64::from_polar(1.0, m as f64 * 0.7));
        let noise = cfg.noise_power_w();
        let links = evaluate_links(&ch, &w, &v, noise, cfg.bandwidth_hz);
        for k in 0..4 {
            let g = ris_rate_gradient(&v, ch.cascaded(k), &w, k, noise, cfg.bandwidth_hz).norm();
            let s = gradient_norm_with_slack(&ch, &w, &v, k, links.ris_sinr[k], noise, cfg.bandwidth_hz);
            assert!((g - s).abs() <= 1e-10 * g.max(1e-30), "{g} vs {s}");
        }
    }
}
