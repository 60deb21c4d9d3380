//! Fixtures shared by the benchmarks.

use wavefind::pipeline::generate_data;
use wavefind::{ExperimentConfig, MeasurementSet, Wavefield};

/// The homogeneous Dirichlet case the benches run against.
pub const CASE1: &str = include_str!("../../../configs/case1.json");

pub fn case1() -> ExperimentConfig {
    ExperimentConfig::from_json(CASE1).expect("shipped config parses")
}

pub fn case1_data() -> (ExperimentConfig, Wavefield, MeasurementSet) {
    let cfg = case1();
    let (truth, m) = generate_data(&cfg).expect("case 1 simulates");
    (cfg, truth, m)
}
