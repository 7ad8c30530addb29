//! Shared helpers for the criterion benches.

use std::sync::Arc;

use fluctlab_core::*;

/// A Kuramoto state with uniformly scattered phases on a 2N-site lattice.
pub fn bench_state(n_half: usize, alpha: f64, seed: u64) -> (Arc<ModelSpec>, ParticleState) {
    let model = Arc::new(build_kuramoto(
        1.0,
        1.0,
        DisorderLaw::dirac(0.0),
        InitialLaw::UniformCircle,
    ));
    let lattice = Arc::new(Lattice::build(n_half, alpha).unwrap());
    let state = ParticleState::sample(&model, lattice, seed).unwrap();
    (model, state)
}
