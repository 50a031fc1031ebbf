//! Shared fixtures for the benchmarks.

use ris_resilience::experiment::seed_instance;
use ris_resilience::sca::{method_weights, Method, ScaSettings};
use ris_resilience::subproblem::{IterateState, ObjectiveWeights};
use ris_resilience::{ChannelState, SystemConfig};

pub struct Fixture {
    pub config: SystemConfig,
    pub settings: ScaSettings,
    pub channels: ChannelState,
    pub state: IterateState,
    pub weights: ObjectiveWeights,
}

/// Desk-scale system (N = 2, L = 4, K = 4) with `m` RIS elements, seed 0,
/// proposed-method weights.
pub fn fixture(m: usize) -> Fixture {
    let config = SystemConfig { num_ris_elements: m, ..Default::default() };
    let settings = ScaSettings::default();
    let (channels, state) = seed_instance(&config, &settings, 0).expect("fixture builds");
    let weights = method_weights(Method::Proposed, &channels, &settings);
    Fixture { config, settings, channels, state, weights }
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixture_matches_requested_size() {
        let f = super::fixture(16);
        assert_eq!(f.channels.num_elements(), 16);
        assert_eq!(f.state.v.len(), 16);
    }
}
