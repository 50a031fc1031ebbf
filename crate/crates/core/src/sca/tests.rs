use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::channel::CMat;
use crate::geometry::build_geometry;
use crate::metrics::sinr;

fn small_config() -> SystemConfig {
    SystemConfig { num_aps: 2, antennas_per_ap: 2, num_users: 3, num_ris_elements: 16, ..Default::default() }
}

fn setup(cfg: &SystemConfig, seed: u64) -> (ChannelState, IterateState) {
    let geo = build_geometry(cfg).unwrap();
    let ch = ChannelState::generate(&geo, cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = initialize_iterates(&ch, cfg, &ScaSettings::default(), &mut rng).unwrap();
    (ch, state)
}

fn power_ok(state: &IterateState, cfg: &SystemConfig) -> bool {
    state.w.power_violation(cfg.max_tx_power_w()) <= 1e-6 * cfg.max_tx_power_w()
}

/// Every slack inside the exact constraint set of `(w, v)`.
fn assert_consistent(state: &IterateState, ch: &ChannelState, cfg: &SystemConfig) {
    let links = evaluate_links(ch, &state.w, &state.v, cfg.noise_power_w(), cfg.bandwidth_hz);
    for k in 0..state.num_users() {
        let tol = 1e-9 * links.sinr[k].max(1.0);
        assert!(state.sinr_slack[k] >= 0.0 && state.sinr_slack[k] <= links.sinr[k] + tol);
        assert!(state.ris_sinr_slack[k] >= 0.0 && state.ris_sinr_slack[k] <= links.ris_sinr[k] + tol);
        assert!(state.rates[k] <= achievable_rate(state.sinr_slack[k], cfg.bandwidth_hz) * (1.0 + 1e-12));
        assert!(state.ris_rates[k] <= achievable_rate(state.ris_sinr_slack[k], cfg.bandwidth_hz) * (1.0 + 1e-12));
        assert!(state.grad_slack[k] > 0.0);
    }
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(Method::parse(m.name()), Some(m));
    }
    assert_eq!(Method::parse("nope"), None);
    let uw = [0.5, 0.0, 0.5];
    assert_eq!(Method::Proposed.alphas(&uw), (uw.to_vec(), uw.to_vec()));
    assert_eq!(Method::Baseline.alphas(&uw), (vec![0.0; 3], vec![0.0; 3]));
    assert_eq!(Method::RobustnessOnly.alphas(&uw), (vec![0.0; 3], uw.to_vec()));
}

#[test]
fn alpha_v_ladder_is_geometric_then_capped() {
    let s = ScaSettings { alpha_v_start: 3.0, alpha_v_growth: 10.0, alpha_v_max: 500.0, ..Default::default() };
    let got: Vec<f64> = (0..4).map(|j| s.alpha_v(j)).collect();
    assert_eq!(got, vec![3.0, 30.0, 300.0, 500.0]);
}

#[test]
fn settings_reject_unknown_keys() {
    assert!(serde_json::from_str::<ScaSettings>(r#"{"nu": 5.0}"#).is_ok());
    assert!(serde_json::from_str::<ScaSettings>(r#"{"nuu": 5.0}"#).is_err());
}

#[test]
fn projection_examples() {
    let v = CVec::from_vec(vec![C64::new(3.0, 4.0), C64::new(0.0, 0.0), C64::new(-2.0, 0.0), C64::new(0.0, -0.5)]);
    let p = project_unit_modulus(&v);
    let expected = [(4.0f64).atan2(3.0), 0.0, PI, 1.5 * PI];
    for (got, want) in p.theta.iter().zip(expected) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    assert!((p.v[0] - C64::new(0.6, 0.8)).norm() < 1e-12);
    assert!(max_modulus_deviation(&p.v) < 1e-12);
    assert!((max_modulus_deviation(&v) - 4.0).abs() < 1e-12);
}

#[test]
fn initialization_spends_full_budget_per_ap() {
    let cfg = small_config();
    let (ch, state) = setup(&cfg, 4);
    let p = cfg.max_tx_power_w();
    for n in 0..cfg.num_aps {
        assert!((state.w.ap_power(n) - p).abs() <= 1e-9 * p, "AP {n}: {}", state.w.ap_power(n));
    }
    assert!(max_modulus_deviation(&state.v) < 1e-12);
    let noise = cfg.noise_power_w();
    for k in 0..cfg.num_users {
        let q = sinr(&ch.effective(k, &state.v), &state.w, k, noise);
        assert!((state.sinr_slack[k] - q).abs() <= 1e-12 * q.max(1.0));
        assert!(state.rates[k] <= cfg.demands()[k]);
    }
    assert_consistent(&state, &ch, &cfg);
}

#[test]
fn repair_is_idempotent() {
    let cfg = small_config();
    let (ch, mut state) = setup(&cfg, 5);
    state.sinr_slack[0] *= 10.0;
    state.rates[1] = 1e12;
    state.grad_slack[2] = -3.0;
    let s = ScaSettings::default();
    repair(&mut state, &ch, &cfg, &s);
    assert_consistent(&state, &ch, &cfg);
    let once = state.clone();
    repair(&mut state, &ch, &cfg, &s);
    assert_eq!(once, state);
}

#[test]
fn coherence_interval_budget_and_alternation() {
    let cfg = small_config();
    assert_eq!(cfg.steps_per_block(), 30);
    let (ch, state) = setup(&cfg, 6);
    let s = ScaSettings::default();
    let w = method_weights(Method::Proposed, &ch, &s);
    let mut tl = ScenarioTimeline::new(cfg.num_users);
    let out = run_coherence_interval(state, &ch, &cfg, &w, &s, &mut tl).unwrap();
    assert_eq!(tl.steps.len(), 30);
    let mut phase = 0;
    for (i, rec) in tl.steps.iter().enumerate() {
        assert_eq!(rec.iteration, i + 1);
        assert!((rec.time_s - (i + 1) as f64 * cfg.calc_time_s).abs() < 1e-15);
        let stage = if i % 2 == 0 { Stage::W } else { Stage::V };
        assert_eq!(rec.stage, stage);
        match stage {
            Stage::W => assert_eq!(rec.alpha_v, 0.0),
            Stage::V => {
                assert_eq!(rec.alpha_v, s.alpha_v(phase));
                phase += 1;
            }
        }
    }
    assert!(tl.steps.last().unwrap().time_s <= cfg.coherence_time_s + 1e-12);
    assert_eq!(tl.pre_projection_deviation.len(), 1);
    assert!(max_modulus_deviation(&out.v) < 1e-12);
    assert!(power_ok(&out, &cfg));
    assert_consistent(&out, &ch, &cfg);
}

#[test]
fn calc_time_longer_than_block_is_rejected() {
    let cfg = SystemConfig { calc_time_s: 0.5, ..small_config() };
    let (ch, state) = setup(&small_config(), 6);
    let s = ScaSettings::default();
    let w = method_weights(Method::Baseline, &ch, &s);
    let mut tl = ScenarioTimeline::new(3);
    assert!(run_coherence_interval(state, &ch, &cfg, &w, &s, &mut tl).is_err());
}

#[test]
fn steps_never_raise_the_surrogate_and_stay_feasible() {
    let cfg = small_config();
    let s = ScaSettings::default();
    for seed in [11, 12] {
        let (ch, mut state) = setup(&cfg, seed);
        let mut w = method_weights(Method::Proposed, &ch, &s);
        for z in 0..50 {
            w.alpha_v = if state.stage == Stage::V { s.alpha_v(z / 2 % 15) } else { 0.0 };
            let before = state.stage;
            let (next, out) = step(&state, &ch, &cfg, &w, &s).unwrap();
            assert_eq!(out.stage, before);
            assert_eq!(next.stage, before.other());
            if let StepStatus::Accepted(_) = out.status {
                let tol = 1e-9 * out.surrogate_before.abs().max(1.0);
                assert!(out.surrogate_after <= out.surrogate_before + tol, "seed {seed} z {z}: {out:?}");
                assert!(out.step_size > 0.0 && out.step_size <= 1.0);
            } else {
                // expansion point carried over unchanged
                let mut same = state.clone();
                same.stage = before.other();
                assert_eq!(next, same);
            }
            assert!(power_ok(&next, &cfg), "seed {seed} z {z}");
            assert_consistent(&next, &ch, &cfg);
            state = next;
        }
    }
}

#[test]
fn baseline_gap_does_not_grow_within_a_block() {
    let cfg = small_config();
    let s = ScaSettings::default();
    let (ch, state) = setup(&cfg, 13);
    let w = method_weights(Method::Baseline, &ch, &s);
    let demands = cfg.demands();
    let start = psi(&state, &demands);
    let mut tl = ScenarioTimeline::new(cfg.num_users);
    run_coherence_interval(state, &ch, &cfg, &w, &s, &mut tl).unwrap();
    // the gap is the whole objective on beamforming steps; phase steps add the
    // modulus penalty, so only the beamforming records are monotone
    let mut prev = start;
    for rec in tl.steps.iter().filter(|r| r.stage == Stage::W) {
        assert!(rec.psi <= prev + 1e-6 * prev.max(1.0), "{} > {prev}", rec.psi);
        prev = rec.psi;
    }
}

fn synthetic_channels(direct_norms: &[f64]) -> ChannelState {
    let (n, l, m) = (2, 2, 4);
    let mut direct = Vec::new();
    for _ in 0..n {
        for &d in direct_norms {
            // split the norm evenly over the APs and antennas
            let a = d / ((n * l) as f64).sqrt();
            direct.push(CVec::from_element(l, C64::new(a, 0.0)));
        }
    }
    let ap_ris = vec![CMat::from_element(l, m, C64::new(0.1, 0.0)); n];
    let ris_user = vec![CVec::from_element(m, C64::new(0.1, 0.0)); direct_norms.len()];
    let mask = vec![false; n * direct_norms.len()];
    ChannelState::from_parts(direct, ap_ris, ris_user, mask).unwrap()
}

#[test]
fn strongest_next_blocks_in_order_of_direct_norm() {
    let ch = synthetic_channels(&[1.0, 3.0, 2.0]);
    for k in 0..3 {
        assert!((ch.direct_norm(k) - [1.0, 3.0, 2.0][k]).abs() < 1e-12);
    }
    let first = apply_blockage(&ch, &BlockagePolicy::StrongestNext).unwrap();
    assert_eq!(first.blocked, vec![1]);
    assert_eq!(first.channels.direct_norm(1), 0.0);
    assert_eq!(first.user_weights[1], 0.0);
    // RIS links survive
    assert_eq!(first.channels.cascaded(1), ch.cascaded(1));
    let second = apply_blockage(&first.channels, &BlockagePolicy::StrongestNext).unwrap();
    assert_eq!(second.blocked, vec![2]);
    let third = apply_blockage(&second.channels, &BlockagePolicy::StrongestNext).unwrap();
    assert_eq!(third.blocked, vec![0]);
    assert!(matches!(apply_blockage(&third.channels, &BlockagePolicy::StrongestNext), Err(Error::AllBlocked)));
}

#[test]
fn strongest_next_breaks_ties_toward_lower_index() {
    let ch = synthetic_channels(&[2.0, 2.0, 1.0]);
    assert_eq!(apply_blockage(&ch, &BlockagePolicy::StrongestNext).unwrap().blocked, vec![0]);
}

#[test]
fn explicit_blockage_validates_indices() {
    let ch = synthetic_channels(&[1.0, 3.0, 2.0]);
    let out = apply_blockage(&ch, &BlockagePolicy::Users(vec![0, 2])).unwrap();
    assert_eq!(out.blocked, vec![0, 2]);
    assert!(out.channels.is_user_blocked(0) && out.channels.is_user_blocked(2));
    assert!(!out.channels.is_user_blocked(1));
    assert!(apply_blockage(&ch, &BlockagePolicy::Users(vec![3])).is_err());
}

#[test]
fn scenario_timeline_layout() {
    let cfg = small_config();
    let (ch, state) = setup(&cfg, 21);
    let s = ScaSettings::default();
    let tl = run_scenario(state.clone(), &ch, &cfg, Method::Proposed, 2, &s).unwrap();
    assert_eq!(tl.steps.len(), 90);
    assert_eq!(tl.events.len(), 2);
    assert_eq!(tl.initial_rates, state.rates);
    for (i, e) in tl.events.iter().enumerate() {
        assert_eq!(e.iterations_before, 30 * (i + 1));
        assert!((e.time_s - 0.3 * (i + 1) as f64).abs() < 1e-12);
        assert_eq!(e.blocked_users.len(), 1);
        let rec = e.recovery.unwrap();
        assert_eq!(rec.t0, e.time_s);
        assert!(rec.tq > rec.t0 && rec.tq <= tl.horizon(i) + 1e-12);
        let c = e.components.unwrap();
        let demands = cfg.demands();
        assert!((c.absorption - crate::resilience::mean_demand_ratio(&e.rates, &demands)).abs() < 1e-12);
        assert!(c.recovery > 0.0 && c.recovery <= 1.0);
        assert!(e.score.unwrap().is_finite());
    }
    assert_ne!(tl.events[0].blocked_users, tl.events[1].blocked_users);

    let mut buf = Vec::new();
    tl.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(TIMELINE_SCHEMA));
    let header = lines.next().unwrap();
    assert!(header.starts_with("kind,z,time_s,stage"));
    assert!(header.ends_with("ris_rate_2"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 1 + 90 + 2);
    assert!(rows[0].starts_with("init,0,"));
    assert!(rows[31].starts_with("event,30,"));
    assert!(rows[62].starts_with("event,60,"));
    assert_eq!(rows.iter().filter(|r| r.starts_with("step,")).count(), 90);
}

#[test]
fn scenario_is_deterministic() {
    let cfg = small_config();
    let (ch, state) = setup(&cfg, 22);
    let s = ScaSettings::default();
    let a = run_scenario(state.clone(), &ch, &cfg, Method::RobustnessOnly, 1, &s).unwrap();
    let b = run_scenario(state, &ch, &cfg, Method::RobustnessOnly, 1, &s).unwrap();
    assert_eq!(a, b);
}

#[test]
fn numerical_failure_classification() {
    assert!(is_numerical_failure(&StepStatus::Degenerate));
    assert!(is_numerical_failure(&StepStatus::SolverFailed(SolveStatus::IterationLimit)));
    assert!(!is_numerical_failure(&StepStatus::SolverFailed(SolveStatus::Infeasible)));
    assert!(!is_numerical_failure(&StepStatus::Kept));
    assert!(!is_numerical_failure(&StepStatus::Accepted(SolveStatus::NearOptimal)));
}
