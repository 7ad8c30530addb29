//! Mean-field interacting diffusions on a periodic lattice with power-law
//! spatial weights: simulation, mean-field solving, and verification of the
//! fluctuation-field identities and scaling regimes.
//!
//! The library is organized around the pipeline
//! lattice → model → simulator / mean-field solver → fluctuation fields →
//! scaling experiments; the `fluctlab` binary drives it from the command line.

pub mod convolve;
pub mod error;
pub mod fluct;
pub mod hresidual;
pub mod lattice;
pub mod meanfield;
pub mod model;
pub mod rng;
pub mod scaling;
pub mod sim;
pub mod testfn;
pub(crate) mod util;

pub use convolve::{circular_convolve, ConvolveMethod, Convolver};
pub use error::{FluctError, Result};
pub use fluct::{
    duality_gap, empirical_mean, eta_pair, h_pair, is_critical_alpha, limit_init_stats,
    martingale_cov, scaling_a_n, semimartingale_residual, DualityCheck, InitStats, MartCov,
};
pub use hresidual::h_semimartingale_residual;
pub use lattice::{
    chi_alpha, circle_distance, integral_psi, mean_weight_closed, riemann_residual_closed,
    riemann_residual_ladder, weight_sum_growth, Lattice,
};
pub use meanfield::{
    coupling_field, expect_nu, expect_xi, solve_density, CouplingField, CouplingSolution,
    DensityGrid, DensityPath,
};
pub use model::{
    build_free, build_kuramoto, build_probe, sample_populations, DisorderLaw, InitialLaw,
    ModelSpec, SeparablePair, StateSpace,
};
pub use rng::{replica_seed, rng_from_seed, splitmix64};
pub use scaling::{
    classify_regime, fit_exponent, predicted_exponent, run_ladder, weights_from_rows,
    LadderConfig, LadderRow, LadderStatistic, MeanFieldOracle, Regime, ScalingEstimate,
};
pub use sim::{
    em_step, interaction_field, simulate_coupled, InitMode, NoiseTable, ParticleState, SimConfig,
    Simulation, Trajectory,
};
pub use testfn::{phi_of, psi_fourier, TestFn1, TestFn2, ThetaPart, XPart};
