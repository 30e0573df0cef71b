//! Shared fixtures for the criterion benchmarks.

use qos_core::sim::SimConfig;

/// Load grid used by the sweep benchmarks.
pub fn load_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// A short M/M/1 run at half load.
pub fn half_load_config(packets: u64) -> SimConfig {
    SimConfig::new(1000.0, 500.0).with_packets(packets).with_seed(7)
}
