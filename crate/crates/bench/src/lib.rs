//! Shared fixtures for the benchmark targets.

use mvsfde_core::{ExampleModelParams, InitialData, ParticleSystem};

/// A fresh example-model system with the benchmark defaults.
pub fn example_system(n: usize, seed: u64) -> ParticleSystem {
    let model = ExampleModelParams::default().build().expect("valid model");
    let init = InitialData::Constant(vec![1.0]);
    ParticleSystem::new(model, n, 0.005, &init, seed, 0).expect("valid system")
}

/// Deterministic point cloud for the transport benchmarks.
pub fn cloud(n: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
    (0..n * dim)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        })
        .collect()
}
