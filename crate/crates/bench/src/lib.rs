//! Fixtures shared by the benchmarks.

use cmdf_core::generate::{random_scenario, RandomScenario, ScenarioShape};
use cmdf_core::linalg::SymMatrix;
use cmdf_core::network::{metropolis_weights, NeighborConvention, Topology};
use cmdf_core::{ConsensusMatrix, NoiseSpec, SystemModel};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Scalar 5-sensor simulation setting with overestimated noise.
pub fn five_node_case() -> (SystemModel, NoiseSpec, ConsensusMatrix, SymMatrix) {
    let model = SystemModel::scalar(2.0, 1.0, 5).expect("scalar model");
    let s = SymMatrix::scalar;
    let noise = NoiseSpec::new(&model, s(10.0), s(20.0), vec![s(10.0); 5], vec![s(20.0); 5]).expect("positive covariances");
    let l = metropolis_weights(&Topology::five_node(), NeighborConvention::IncludeSelf).expect("connected");
    (model, noise, l, s(20.0))
}

/// Random 4-state, 6-sensor scenario.
pub fn vector_case(seed: u64) -> RandomScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = ScenarioShape {
        n: 4,
        n_sensors: 6,
        max_m: 2,
    };
    random_scenario(&mut rng, shape)
}
