//! Absorption, adaptation and time-to-recovery, and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(lambda_1, lambda_2, lambda_3)` on the probability simplex.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResilienceWeights(pub [f64; 3]);

impl Default for ResilienceWeights {
    fn default() -> Self {
        Self([1.0 / 3.0; 3])
    }
}

impl ResilienceWeights {
    pub fn new(l1: f64, l2: f64, l3: f64) -> Result<Self> {
        let w = Self([l1, l2, l3]);
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.0.iter().sum();
        if self.0.iter().any(|l| !l.is_finite() || *l < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Weights(self.0));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResilienceComponents {
    pub absorption: f64,
    pub adaptation: f64,
    pub recovery: f64,
}

impl ResilienceComponents {
    /// Absorption and adaptation clipped at one; recovery is already in (0, 1].
    pub fn capped(&self) -> Self {
        Self {
            absorption: self.absorption.min(1.0),
            adaptation: self.adaptation.min(1.0),
            recovery: self.recovery,
        }
    }
}

/// One timestamped vector of allocated per-user rates (bit/s).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSnapshot {
    pub time_s: f64,
    pub rates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResilienceReport {
    pub raw: ResilienceComponents,
    /// The components that feed the score.
    pub components: ResilienceComponents,
    pub score: f64,
    pub t0: f64,
    pub tq: f64,
    pub snapshots: Vec<RateSnapshot>,
}

/// Mean of `r_k / r_k^des`.
pub fn mean_demand_ratio(rates: &[f64], demands: &[f64]) -> f64 {
    rates.iter().zip(demands).map(|(r, d)| r / d).sum::<f64>() / rates.len() as f64
}

/// One if recovery took at most `desired`, else `desired / elapsed`.
pub fn time_to_recovery(t0: f64, tq: f64, desired: f64) -> f64 {
    let elapsed = tq - t0;
    if elapsed <= desired {
        1.0
    } else {
        desired / elapsed
    }
}

/// The snapshot in force at time `t`: the last one not later than `t`.
fn snapshot_at(trajectory: &[RateSnapshot], t: f64) -> Option<&RateSnapshot> {
    let tol = 1e-12 * t.abs().max(1.0);
    trajectory.iter().rev().find(|s| s.time_s <= t + tol)
}

pub fn resilience_components(
    trajectory: &[RateSnapshot],
    t0: f64,
    tq: f64,
    desired_recovery: f64,
    demands: &[f64],
) -> Result<ResilienceComponents> {
    if trajectory.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    if tq < t0 {
        return Err(Error::Timeline(format!("t_q = {tq} precedes t_0 = {t0}")));
    }
    let at = |t: f64| {
        snapshot_at(trajectory, t)
            .ok_or_else(|| Error::Timeline(format!("no rate snapshot at or before t = {t}")))
    };
    let start = at(t0)?;
    let end = at(tq)?;
    if start.rates.len() != demands.len() || end.rates.len() != demands.len() {
        return Err(Error::Dimension("snapshot and demand lengths differ".into()));
    }
    Ok(ResilienceComponents {
        absorption: mean_demand_ratio(&start.rates, demands),
        adaptation: mean_demand_ratio(&end.rates, demands),
        recovery: time_to_recovery(t0, tq, desired_recovery),
    })
}

/// `lambda_1 r_abs + lambda_2 r_ada + lambda_3 r_rec`.
pub fn resilience_score(components: &ResilienceComponents, weights: &ResilienceWeights) -> Result<f64> {
    weights.validate()?;
    let [l1, l2, l3] = weights.0;
    Ok(l1 * components.absorption + l2 * components.adaptation + l3 * components.recovery)
}

/// Builds a report whose score uses the capped components.
pub fn resilience_report(
    trajectory: Vec<RateSnapshot>,
    t0: f64,
    tq: f64,
    desired_recovery: f64,
    demands: &[f64],
    weights: &ResilienceWeights,
) -> Result<ResilienceReport> {
    let raw = resilience_components(&trajectory, t0, tq, desired_recovery, demands)?;
    let components = raw.capped();
    let score = resilience_score(&components, weights)?;
    Ok(ResilienceReport { raw, components, score, t0, tq, snapshots: trajectory })
}
