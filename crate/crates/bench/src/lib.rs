//! Shared fixtures for the criterion benches.

use binobs_core::NetworkParams;

/// The four-agent benchmark network (Friedkin weights, noise scale 2).
pub fn benchmark_params() -> NetworkParams {
    NetworkParams::new(
        4,
        vec![
            0.220, 0.120, 0.360, 0.300, //
            0.147, 0.215, 0.344, 0.294, //
            0.0, 0.0, 1.0, 0.0, //
            0.090, 0.178, 0.446, 0.286,
        ],
        vec![0.13, 0.28, 0.08, 0.24],
        vec![2.0, 2.0, 2.0, 2.0],
    )
    .expect("benchmark parameters are valid")
}

/// A three-agent instance sized for exact-objective benches.
pub fn small_params() -> NetworkParams {
    NetworkParams::with_unit_noise(
        3,
        vec![0.5, -0.3, 0.1, 0.2, 0.4, -0.2, -0.1, 0.3, 0.6],
        vec![0.1, -0.2, 0.3],
    )
    .expect("fixture parameters are valid")
}
