//! Scenario configuration.
//!
//! Powers are configured in dBm and converted to watts on access; every
//! other quantity is in SI units. Rates are bit/s throughout the public API.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the AP-RIS and RIS-user links are generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RisChannelModel {
    /// Deterministic line-of-sight phases from exact element distances.
    #[default]
    LineOfSight,
    /// Spatially correlated Rayleigh fading, `R^{1/2} z`, with the LoS segment pathloss.
    CorrelatedRayleigh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub num_aps: usize,
    pub antennas_per_ap: usize,
    pub num_users: usize,
    /// Must be a perfect square; the surface is a square grid.
    pub num_ris_elements: usize,
    pub bandwidth_hz: f64,
    pub noise_power_dbm: f64,
    /// Per-AP transmit power budget.
    pub max_tx_power_dbm: f64,
    pub wavelength_m: f64,
    pub coherence_time_s: f64,
    pub desired_recovery_time_s: f64,
    /// Modelled time of one subproblem solve.
    pub calc_time_s: f64,
    /// Either one rate shared by all users or one rate per user.
    pub qos_rates_bps: Vec<f64>,
    pub area_half_width_m: f64,
    pub user_circle_radius_m: f64,
    pub ap_height_m: f64,
    pub ris_height_m: f64,
    pub user_height_m: f64,
    pub shadowing_std_db: f64,
    pub pathloss_exponent_direct: f64,
    pub pathloss_exponent_ris: f64,
    pub pathloss_ref_db: f64,
    pub ris_channel_model: RisChannelModel,
    pub rng_seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            num_aps: 2,
            antennas_per_ap: 4,
            num_users: 4,
            num_ris_elements: 100,
            bandwidth_hz: 10e6,
            noise_power_dbm: -100.0,
            max_tx_power_dbm: 32.0,
            wavelength_m: 0.1,
            coherence_time_s: 0.3,
            desired_recovery_time_s: 0.15,
            calc_time_s: 0.01,
            qos_rates_bps: vec![6e6],
            area_half_width_m: 500.0,
            user_circle_radius_m: 250.0,
            ap_height_m: 10.0,
            ris_height_m: 5.0,
            user_height_m: 1.5,
            shadowing_std_db: 8.0,
            pathloss_exponent_direct: 3.5,
            pathloss_exponent_ris: 2.2,
            pathloss_ref_db: 30.0,
            ris_channel_model: RisChannelModel::LineOfSight,
            rng_seed: 1,
        }
    }
}

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watt_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

impl SystemConfig {
    pub fn noise_power_w(&self) -> f64 {
        dbm_to_watt(self.noise_power_dbm)
    }

    pub fn max_tx_power_w(&self) -> f64 {
        dbm_to_watt(self.max_tx_power_dbm)
    }

    /// Total transmit antennas, `N * L`.
    pub fn total_antennas(&self) -> usize {
        self.num_aps * self.antennas_per_ap
    }

    /// Side length of the square element grid, if `M` is a perfect square.
    pub fn ris_side(&self) -> Option<usize> {
        perfect_square_root(self.num_ris_elements)
    }

    /// Per-user demand vector in bit/s.
    pub fn demands(&self) -> Vec<f64> {
        if self.qos_rates_bps.len() == 1 {
            vec![self.qos_rates_bps[0]; self.num_users]
        } else {
            self.qos_rates_bps.clone()
        }
    }

    /// Number of SCA sub-iterations that fit into one coherence block.
    pub fn steps_per_block(&self) -> usize {
        // The small offset absorbs representation error in ratios like 0.3 / 0.01.
        (self.coherence_time_s / self.calc_time_s + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_aps", self.num_aps),
            ("antennas_per_ap", self.antennas_per_ap),
            ("num_users", self.num_users),
            ("num_ris_elements", self.num_ris_elements),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.ris_side().is_none() {
            return Err(Error::Config(format!(
                "num_ris_elements = {} is not a perfect square",
                self.num_ris_elements
            )));
        }
        let positive = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("wavelength_m", self.wavelength_m),
            ("coherence_time_s", self.coherence_time_s),
            ("desired_recovery_time_s", self.desired_recovery_time_s),
            ("calc_time_s", self.calc_time_s),
            ("area_half_width_m", self.area_half_width_m),
            ("user_circle_radius_m", self.user_circle_radius_m),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        for (name, value) in [
            ("noise_power_dbm", self.noise_power_dbm),
            ("max_tx_power_dbm", self.max_tx_power_dbm),
            ("shadowing_std_db", self.shadowing_std_db),
            ("pathloss_ref_db", self.pathloss_ref_db),
            ("pathloss_exponent_direct", self.pathloss_exponent_direct),
            ("pathloss_exponent_ris", self.pathloss_exponent_ris),
        ] {
            if !value.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if self.shadowing_std_db < 0.0 {
            return Err(Error::Config("shadowing_std_db must be non-negative".into()));
        }
        if self.calc_time_s > self.coherence_time_s {
            return Err(Error::Config(format!(
                "calc_time_s ({}) exceeds coherence_time_s ({})",
                self.calc_time_s, self.coherence_time_s
            )));
        }
        let demands = &self.qos_rates_bps;
        if demands.len() != 1 && demands.len() != self.num_users {
            return Err(Error::Config(format!(
                "qos_rates_bps needs 1 or {} entries, got {}",
                self.num_users,
                demands.len()
            )));
        }
        if demands.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Config("QoS rates must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn perfect_square_root(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_conversion() {
        assert!((dbm_to_watt(30.0) - 1.0).abs() < 1e-15);
        assert!((dbm_to_watt(-100.0) - 1e-13).abs() < 1e-27);
        assert!((watt_to_dbm(dbm_to_watt(32.0)) - 32.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_square_check() {
        let mut cfg = SystemConfig { num_ris_elements: 500, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.num_ris_elements = 484;
        cfg.validate().unwrap();
        assert_eq!(cfg.ris_side(), Some(22));
    }

    #[test]
    fn budget_law() {
        let mut cfg = SystemConfig { coherence_time_s: 0.1, calc_time_s: 0.01, ..Default::default() };
        assert_eq!(cfg.steps_per_block(), 10);
        cfg.coherence_time_s = 0.3;
        assert_eq!(cfg.steps_per_block(), 30);
        cfg.coherence_time_s = 0.02;
        assert_eq!(cfg.steps_per_block(), 2);
    }

    #[test]
    fn rejects_calc_time_beyond_coherence() {
        let cfg = SystemConfig { calc_time_s: 0.5, coherence_time_s: 0.1, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn demand_broadcast() {
        let cfg = SystemConfig::default();
        assert_eq!(cfg.demands(), vec![6e6; 4]);
        let cfg = SystemConfig { qos_rates_bps: vec![1.0, 2.0], ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
