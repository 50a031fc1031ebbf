use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::adaptation_gap;
use crate::resilience::RateSnapshot;

use super::timeline::ScenarioTimeline;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryRule {
    /// Every user reached `(1 - eps)` of its demand.
    DemandsMet,
    /// The adaptation gap settled: it stays within `eps` of its value here
    /// until the window closes.
    Settled,
    /// Neither fired before the window closed.
    Horizon,
}

impl RecoveryRule {
    pub fn tag(&self) -> &'static str {
        match self {
            RecoveryRule::DemandsMet => "demands-met",
            RecoveryRule::Settled => "settled",
            RecoveryRule::Horizon => "horizon",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub t0: f64,
    pub tq: f64,
    pub rule: RecoveryRule,
}

/// Recovery on a trajectory whose first snapshot is taken at `t_0`.
///
/// `t_q` is the earlier of
/// - the first later snapshot where every user has `(1 - eps)` of its demand;
/// - the first later snapshot from which the adaptation gap stays within
///   `eps` (absolute) of its value there until the trajectory ends, provided
///   that stretch spans at least `settle_len` snapshots.
///
/// Ties go to the demand rule. If neither fires, `t_q` is the last snapshot.
/// Settling is judged on the whole window rather than on a few consecutive
/// changes: a gap that starts moving slowly (a rate growing geometrically from
/// almost nothing) has not recovered.
pub fn recovery_from_trajectory(
    trajectory: &[RateSnapshot],
    demands: &[f64],
    eps: f64,
    settle_len: usize,
) -> Result<Recovery> {
    let first = trajectory.first().ok_or(Error::EmptyTrajectory)?;
    if !(eps > 0.0) || settle_len == 0 {
        return Err(Error::Config(format!("recovery tolerance {eps} / settle length {settle_len}")));
    }
    let t0 = first.time_s;
    let met = |s: &RateSnapshot| s.rates.iter().zip(demands).all(|(r, d)| *r >= d * (1.0 - eps));
    let demand_at = trajectory.iter().skip(1).position(met).map(|i| i + 1);

    // scan backwards keeping the range of the gap over the suffix
    let gaps: Vec<f64> = trajectory.iter().map(|s| adaptation_gap(&s.rates, demands)).collect();
    let n = gaps.len();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut settled_at = None;
    for i in (1..n).rev() {
        lo = lo.min(gaps[i]);
        hi = hi.max(gaps[i]);
        if hi - gaps[i] > eps || gaps[i] - lo > eps {
            break;
        }
        if n - i >= settle_len {
            settled_at = Some(i);
        }
    }

    let (index, rule) = match (demand_at, settled_at) {
        (Some(d), Some(s)) if s < d => (s, RecoveryRule::Settled),
        (Some(d), _) => (d, RecoveryRule::DemandsMet),
        (None, Some(s)) => (s, RecoveryRule::Settled),
        (None, None) => (n - 1, RecoveryRule::Horizon),
    };
    Ok(Recovery { t0, tq: trajectory[index].time_s, rule })
}

/// Recovery after event `index` of a timeline.
pub fn detect_recovery(
    timeline: &ScenarioTimeline,
    index: usize,
    demands: &[f64],
    eps: f64,
    settle_len: usize,
) -> Result<Recovery> {
    if index >= timeline.events.len() {
        return Err(Error::Timeline(format!("no event {index}")));
    }
    recovery_from_trajectory(&timeline.trajectory(index), demands, eps, settle_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(points: &[(f64, [f64; 2])]) -> Vec<RateSnapshot> {
        points.iter().map(|(t, r)| RateSnapshot { time_s: *t, rates: r.to_vec() }).collect()
    }

    const D: [f64; 2] = [10.0, 10.0];

    #[test]
    fn demands_met_picks_first_satisfying_record() {
        let t = traj(&[(1.0, [2.0, 2.0]), (1.1, [5.0, 9.0]), (1.2, [9.95, 9.99]), (1.3, [10.0, 10.0])]);
        let r = recovery_from_trajectory(&t, &D, 1e-2, 3).unwrap();
        assert_eq!(r.rule, RecoveryRule::DemandsMet);
        assert_eq!((r.t0, r.tq), (1.0, 1.2));
    }

    #[test]
    fn settled_reports_start_of_final_stretch() {
        // gap: 1.6, 1.0, 1.0, 1.0, 1.0
        let t = traj(&[(0.0, [2.0, 2.0]), (0.1, [5.0, 5.0]), (0.2, [5.0, 5.0]), (0.3, [5.0, 5.0]), (0.4, [5.0, 5.0])]);
        let r = recovery_from_trajectory(&t, &D, 1e-2, 3).unwrap();
        assert_eq!((r.rule, r.tq), (RecoveryRule::Settled, 0.1));
    }

    #[test]
    fn settled_may_start_right_after_event() {
        let t = traj(&[(0.0, [5.0, 5.0]), (0.1, [5.0, 5.0]), (0.2, [5.0, 5.0]), (0.3, [5.0, 5.0])]);
        let r = recovery_from_trajectory(&t, &D, 1e-2, 3).unwrap();
        assert_eq!((r.rule, r.tq), (RecoveryRule::Settled, 0.1));
    }

    #[test]
    fn slow_start_is_not_settled() {
        // a rate growing geometrically from almost nothing: early relative
        // changes of the gap are tiny, yet the gap later drops
        let t = traj(&[
            (0.0, [1e-6, 10.0]),
            (0.1, [1e-5, 10.0]),
            (0.2, [1e-4, 10.0]),
            (0.3, [1e-3, 10.0]),
            (0.4, [1e-2, 10.0]),
            (0.5, [1e-1, 10.0]),
            (0.6, [1.0, 10.0]),
            (0.7, [9.95, 10.0]),
        ]);
        let r = recovery_from_trajectory(&t, &D, 1e-2, 3).unwrap();
        assert_eq!((r.rule, r.tq), (RecoveryRule::DemandsMet, 0.7));
    }

    #[test]
    fn interrupted_stretch_does_not_count() {
        let t = traj(&[
            (0.0, [5.0, 5.0]),
            (0.1, [5.0, 5.0]),
            (0.2, [5.0, 5.0]),
            (0.3, [7.0, 7.0]),
            (0.4, [7.0, 7.0]),
            (0.5, [7.0, 7.0]),
        ]);
        let r = recovery_from_trajectory(&t, &D, 1e-2, 3).unwrap();
        assert_eq!((r.rule, r.tq), (RecoveryRule::Settled, 0.3));
    }

    #[test]
    fn drift_within_band_counts_as_settled() {
        // gap 1.0, 0.998, 0.996: within 1e-2 of the first value of the stretch
        let t = traj(&[(0.0, [1.0, 1.0]), (0.1, [5.0, 5.0]), (0.2, [5.02, 5.0]), (0.3, [5.04, 5.0])]);
        let r = recovery_from_trajectory(&t, &D, 1e-2, 3).unwrap();
        assert_eq!((r.rule, r.tq), (RecoveryRule::Settled, 0.1));
    }

    #[test]
    fn tie_goes_to_demands() {
        let t = traj(&[(0.0, [4.0, 4.0]), (0.1, [6.0, 6.0]), (0.2, [6.0, 6.0]), (0.3, [6.0, 6.0])]);
        let r = recovery_from_trajectory(&t, &D, 0.5, 3).unwrap();
        assert_eq!((r.rule, r.tq), (RecoveryRule::DemandsMet, 0.1));
    }

    #[test]
    fn short_final_stretch_is_horizon() {
        let t = traj(&[(0.0, [1.0, 1.0]), (0.1, [2.0, 2.0]), (0.2, [4.0, 4.0]), (0.3, [6.0, 6.0]), (0.4, [6.0, 6.0])]);
        let r = recovery_from_trajectory(&t, &D, 1e-2, 3).unwrap();
        assert_eq!((r.rule, r.tq), (RecoveryRule::Horizon, 0.4));
        let r = recovery_from_trajectory(&t, &D, 1e-2, 2).unwrap();
        assert_eq!((r.rule, r.tq), (RecoveryRule::Settled, 0.3));
    }

    #[test]
    fn lone_snapshot_is_horizon_at_t0() {
        let t = traj(&[(2.0, [1.0, 1.0])]);
        let r = recovery_from_trajectory(&t, &D, 1e-2, 3).unwrap();
        assert_eq!((r.rule, r.t0, r.tq), (RecoveryRule::Horizon, 2.0, 2.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(recovery_from_trajectory(&[], &D, 1e-2, 3).is_err());
        let t = traj(&[(0.0, [1.0, 1.0])]);
        assert!(recovery_from_trajectory(&t, &D, 0.0, 3).is_err());
        assert!(recovery_from_trajectory(&t, &D, 1e-2, 0).is_err());
    }
}
