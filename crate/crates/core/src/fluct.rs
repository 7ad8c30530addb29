//! Fluctuation fields η_N and H_N, their exact finite-N identities, the t = 0
//! limit statistics, martingale covariances, and the semimartingale residual.
//!
//! η_N pairs a single-variable test function against a_N·(ν_N − ν). H_N is
//! the Ψ-weighted two-particle field: for a test function g(τ, τ̃),
//! ⟨H_N, g⟩ = a_N·[(1/|Λ|²)·Σ_ij Ψ(x_i, x_j)·g(τ_i, τ_j)
//!            − (1/|Λ|)·Σ_i ∫ Ψ(x_i, x̃)·g(τ_i, τ̃) ν_t(dτ̃)].
//! The two are linked by the exact identity ⟨H_N, g⟩ = ⟨η_N, ⟨ν_N, Ψg⟩⟩.

use crate::convolve::ConvolveMethod;
use crate::error::{FluctError, Result};
use crate::lattice::Lattice;
use crate::meanfield::{coupling_field, expect_nu, expect_xi, DensityGrid, DensityPath};
use crate::model::ModelSpec;
use crate::sim::{ParticleState, Trajectory};
use crate::testfn::{phi_of, Factor, TestFn1, TestFn2, XPart};

/// Number of uniform x-quadrature nodes for the ∫_S dx integrals; exact for
/// the trigonometric x-parts in play (frequencies far below Nyquist).
const X_NODES: usize = 128;

/// a_N from the fluctuation renormalization: √N below α = 1/2, N^(1−α) above.
/// At the critical point both expressions coincide at √N, which is the
/// normalization reported there (flagged by [`is_critical_alpha`]).
pub fn scaling_a_n(n_half: usize, alpha: f64) -> f64 {
    let n = n_half as f64;
    if alpha <= 0.5 {
        n.sqrt()
    } else {
        n.powf(1.0 - alpha)
    }
}

pub fn is_critical_alpha(alpha: f64) -> bool {
    (alpha - 0.5).abs() < 1e-12
}

/// ⟨ν_N, f⟩ = (1/|Λ_N|)·Σ_i f(θ_i, ω_i, x_i).
pub fn empirical_mean(lattice: &Lattice, theta: &[f64], omega: &[f64], f: &TestFn1) -> f64 {
    let positions = lattice.positions();
    let mut acc = 0.0;
    for i in 0..theta.len() {
        acc += f.eval(theta[i], omega[i], positions[i]);
    }
    acc / theta.len() as f64
}

/// ⟨η_N, f⟩ = a_N·(⟨ν_N, f⟩ − ⟨ν_t, f⟩); the grid supplies ν_t.
pub fn eta_pair(
    lattice: &Lattice,
    theta: &[f64],
    omega: &[f64],
    grid: &DensityGrid,
    f: &TestFn1,
    alpha: f64,
) -> f64 {
    scaling_a_n(lattice.n_half(), alpha)
        * (empirical_mean(lattice, theta, omega, f) - expect_nu(grid, f))
}

pub fn eta_pair_state(state: &ParticleState, grid: &DensityGrid, f: &TestFn1, alpha: f64) -> f64 {
    eta_pair(&state.lattice, &state.theta, &state.omega, grid, f, alpha)
}

/// Evaluates both terms of ⟨H_N, g⟩ for separable g.
///
/// The inner integral of the second term factors as ⟨right, ξ_t⟩ times the
/// closed-form Ψ-transform of the right factor's x-part; the double sum runs
/// either directly or through per-rank circular convolutions.
pub fn h_pair(
    lattice: &Lattice,
    theta: &[f64],
    omega: &[f64],
    grid: &DensityGrid,
    g: &TestFn2,
    alpha: f64,
    method: ConvolveMethod,
) -> Result<f64> {
    let terms = g.separable_terms()?;
    let size = lattice.size();
    let positions = lattice.positions();
    let use_fast = match method {
        ConvolveMethod::Direct => false,
        ConvolveMethod::Fast => true,
        ConvolveMethod::Auto => size >= crate::convolve::FAST_THRESHOLD,
    };

    let mut pair_sum = crate::util::Kahan::new(); // (1/L²)·Σ_ij Ψ_ij g(τ_i, τ_j)
    let mut field_term = crate::util::Kahan::new(); // (1/L)·Σ_i ∫ Ψ(x_i, x̃) g(τ_i, τ̃) ν(dτ̃)
    for (left, right) in terms {
        let left_vals: Vec<f64> = (0..size)
            .map(|i| (left.theta_omega)(theta[i], omega[i]) * left.x.eval(positions[i]))
            .collect();
        let right_vals: Vec<f64> = (0..size)
            .map(|i| (right.theta_omega)(theta[i], omega[i]) * right.x.eval(positions[i]))
            .collect();
        if use_fast {
            let conv = lattice.convolver().convolve(&right_vals);
            for i in 0..size {
                pair_sum.add(left_vals[i] * conv[i]);
            }
        } else {
            for i in 0..size {
                let mut acc = crate::util::Kahan::new();
                for j in 0..size {
                    acc.add(lattice.weight(i, j) * right_vals[j]);
                }
                pair_sum.add(left_vals[i] * acc.value());
            }
        }
        let right_moment = expect_xi(grid, |t, w| (right.theta_omega)(t, w));
        let (coef, shape) = right.x.psi_transform(alpha);
        for i in 0..size {
            field_term.add(left_vals[i] * right_moment * coef * shape.eval(positions[i]));
        }
    }
    let l = size as f64;
    Ok(scaling_a_n(lattice.n_half(), alpha) * (pair_sum.value() / (l * l) - field_term.value() / l))
}

pub fn h_pair_state(
    state: &ParticleState,
    grid: &DensityGrid,
    g: &TestFn2,
    alpha: f64,
    method: ConvolveMethod,
) -> Result<f64> {
    h_pair(
        &state.lattice,
        &state.theta,
        &state.omega,
        grid,
        g,
        alpha,
        method,
    )
}

/// Both sides of the exact identity ⟨H_N, g⟩ = ⟨η_N, ⟨ν_N, Ψg⟩⟩.
#[derive(Debug, Clone, Copy)]
pub struct DualityCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl DualityCheck {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }

    pub fn relative_gap(&self) -> f64 {
        self.gap() / self.lhs.abs().max(self.rhs.abs()).max(1.0)
    }
}

/// Evaluates the duality identity with independent code paths: the left side
/// through [`h_pair`]'s convolution route, the right side by expanding η_N
/// against τ̃ ↦ ⟨ν_N, Ψ(·, x̃)·g(·, τ̃)⟩ with explicit loops.
pub fn duality_gap(
    lattice: &Lattice,
    theta: &[f64],
    omega: &[f64],
    grid: &DensityGrid,
    g: &TestFn2,
    alpha: f64,
) -> Result<DualityCheck> {
    let lhs = h_pair(lattice, theta, omega, grid, g, alpha, ConvolveMethod::Fast)?;

    let size = lattice.size();
    let positions = lattice.positions();
    let a_n = scaling_a_n(lattice.n_half(), alpha);
    // F(τ̃) = (1/L)·Σ_i Ψ(x_i, x̃)·g(τ_i, τ̃) evaluated at the particles
    let mut emp = 0.0;
    for j in 0..size {
        let tau_j = (theta[j], omega[j], positions[j]);
        let mut acc = 0.0;
        for i in 0..size {
            acc += lattice.weight(i, j) * g.eval((theta[i], omega[i], positions[i]), tau_j);
        }
        emp += acc / size as f64;
    }
    emp /= size as f64;
    // ⟨ν_t, F⟩ accumulated per particle from the factored inner integral
    let terms = g.separable_terms()?;
    let mut limit = 0.0;
    for (left, right) in terms {
        let right_moment = expect_xi(grid, |t, w| (right.theta_omega)(t, w));
        let (coef, shape) = right.x.psi_transform(alpha);
        for i in 0..size {
            limit += (left.theta_omega)(theta[i], omega[i])
                * left.x.eval(positions[i])
                * right_moment
                * coef
                * shape.eval(positions[i]);
        }
    }
    limit /= size as f64;
    Ok(DualityCheck {
        lhs,
        rhs: a_n * (emp - limit),
    })
}

/// Limit statistics of (η_0, H_0).
#[derive(Debug, Clone)]
pub enum InitStats {
    /// α < 1/2: Gaussian with the sandwiched covariance blocks.
    Gaussian {
        c_eta: Vec<Vec<f64>>,
        /// c_eta_h[i][j] = C_{η,H}(f_i, g_j).
        c_eta_h: Vec<Vec<f64>>,
        c_h: Vec<Vec<f64>>,
    },
    /// α > 1/2: η_0 ≡ 0 and a deterministic ⟨H_0, g⟩ per g.
    Deterministic { chi: f64, h0: Vec<f64> },
}

fn x_quadrature() -> impl Iterator<Item = f64> {
    (0..X_NODES).map(|j| (j as f64 + 0.5) / X_NODES as f64)
}

/// ½·∫_S {⟨a(·,·,x)·b(·,·,x), ξ⟩ − ⟨a(·,·,x), ξ⟩·⟨b(·,·,x), ξ⟩} dx.
fn half_cov_over_x(
    grid: &DensityGrid,
    a: &dyn Fn(f64, f64, f64) -> f64,
    b: &dyn Fn(f64, f64, f64) -> f64,
) -> f64 {
    let mut acc = 0.0;
    for x in x_quadrature() {
        let eab = expect_xi(grid, |t, w| a(t, w, x) * b(t, w, x));
        let ea = expect_xi(grid, |t, w| a(t, w, x));
        let eb = expect_xi(grid, |t, w| b(t, w, x));
        acc += eab - ea * eb;
    }
    0.5 * acc / X_NODES as f64
}

/// [gΨ, ν]_2(θ̃, ω̃, x̃): the first slot of g integrated against Ψ·ν.
fn bracket_two(
    g: &TestFn2,
    grid: &DensityGrid,
    alpha: f64,
) -> Result<impl Fn(f64, f64, f64) -> f64> {
    let terms = g.separable_terms()?;
    let mut parts: Vec<(f64, XPart, Factor)> = Vec::new();
    for (left, right) in terms {
        let left_moment = expect_xi(grid, |t, w| (left.theta_omega)(t, w));
        let (coef, shape) = left.x.psi_transform(alpha);
        parts.push((left_moment * coef, shape, right.clone()));
    }
    Ok(move |t: f64, w: f64, x: f64| {
        parts
            .iter()
            .map(|(c, shape, right)| c * shape.eval(x) * (right.theta_omega)(t, w) * right.x.eval(x))
            .sum()
    })
}

/// Same contraction applied to ∂_θ̃ g, for the martingale covariances.
fn bracket_two_grad(
    g: &TestFn2,
    grid: &DensityGrid,
    alpha: f64,
) -> Result<impl Fn(f64, f64, f64) -> f64> {
    let terms = g.separable_terms()?;
    let mut parts: Vec<(f64, XPart, Factor)> = Vec::new();
    for (left, right) in terms {
        if right.grad_theta.is_none() {
            return Err(FluctError::SeparableRequired(format!(
                "test function '{}' lacks a θ̃-gradient",
                g.id
            )));
        }
        let left_moment = expect_xi(grid, |t, w| (left.theta_omega)(t, w));
        let (coef, shape) = left.x.psi_transform(alpha);
        parts.push((left_moment * coef, shape, right.clone()));
    }
    Ok(move |t: f64, w: f64, x: f64| {
        parts
            .iter()
            .map(|(c, shape, right)| {
                c * shape.eval(x) * right.grad_theta.as_ref().unwrap()(t, w) * right.x.eval(x)
            })
            .sum()
    })
}

/// Covariances (α < 1/2) or deterministic limits (α > 1/2) of (η_0, H_0),
/// with grid0 the t = 0 product law ζ ⊗ μ. α = 1/2 is refused: no limit
/// law is asserted at the critical exponent.
pub fn limit_init_stats(
    f_list: &[TestFn1],
    g_list: &[TestFn2],
    grid0: &DensityGrid,
    alpha: f64,
) -> Result<InitStats> {
    if is_critical_alpha(alpha) {
        return Err(FluctError::CriticalAlpha(
            "no limit law is asserted at alpha = 1/2".into(),
        ));
    }
    if alpha > 0.5 {
        let chi = crate::lattice::chi_alpha(alpha, 1e-8)?;
        let mut h0 = Vec::with_capacity(g_list.len());
        for g in g_list {
            let terms = g.separable_terms()?;
            let mut acc = 0.0;
            for (left, right) in terms {
                let ml = expect_xi(grid0, |t, w| (left.theta_omega)(t, w));
                let mr = expect_xi(grid0, |t, w| (right.theta_omega)(t, w));
                // both slots share the same x on the diagonal
                let x_avg: f64 =
                    x_quadrature().map(|x| left.x.eval(x) * right.x.eval(x)).sum::<f64>()
                        / X_NODES as f64;
                acc += ml * mr * x_avg;
            }
            h0.push(chi * acc);
        }
        return Ok(InitStats::Deterministic { chi, h0 });
    }

    let mut c_eta = vec![vec![0.0; f_list.len()]; f_list.len()];
    for (i, fi) in f_list.iter().enumerate() {
        for (j, fj) in f_list.iter().enumerate().skip(i) {
            let v = half_cov_over_x(
                grid0,
                &|t, w, x| fi.eval(t, w, x),
                &|t, w, x| fj.eval(t, w, x),
            );
            c_eta[i][j] = v;
            c_eta[j][i] = v;
        }
    }
    let brackets: Vec<_> = g_list
        .iter()
        .map(|g| bracket_two(g, grid0, alpha))
        .collect::<Result<_>>()?;
    let mut c_eta_h = vec![vec![0.0; g_list.len()]; f_list.len()];
    for (i, fi) in f_list.iter().enumerate() {
        for (j, bg) in brackets.iter().enumerate() {
            c_eta_h[i][j] = half_cov_over_x(grid0, &|t, w, x| fi.eval(t, w, x), bg);
        }
    }
    let mut c_h = vec![vec![0.0; g_list.len()]; g_list.len()];
    for i in 0..g_list.len() {
        for j in i..g_list.len() {
            let v = half_cov_over_x(grid0, &brackets[i], &brackets[j]);
            c_h[i][j] = v;
            c_h[j][i] = v;
        }
    }
    Ok(InitStats::Gaussian { c_eta, c_eta_h, c_h })
}

/// Martingale covariance values 𝒦 at (t, t).
#[derive(Debug, Clone, Copy)]
pub struct MartCov {
    pub k_eta: f64,
    pub k_eta_h: Option<f64>,
    pub k_h: Option<f64>,
}

/// Trapezoid over the path's snapshot times restricted to [0, t].
fn integrate_path(
    path: &DensityPath,
    t: f64,
    integrand: &mut dyn FnMut(&DensityGrid) -> Result<f64>,
) -> Result<f64> {
    if t > path.t_end() + 1e-9 {
        return Err(FluctError::TimeRange {
            requested: t,
            available: path.t_end(),
        });
    }
    let mut nodes: Vec<f64> = path.times.iter().copied().filter(|&u| u < t - 1e-12).collect();
    nodes.push(t);
    let mut acc = 0.0;
    let mut prev_t = 0.0;
    let mut prev_v = None;
    for &u in &nodes {
        let v = integrand(path.grid_at(u)?)?;
        if let Some(pv) = prev_v {
            acc += 0.5 * (pv + v) * (u - prev_t);
        }
        prev_t = u;
        prev_v = Some(v);
    }
    Ok(acc)
}

/// 𝒦^(η)_{t,t}(f_1, f_2) = ½·∫_0^t ⟨∂_θ f_1·∂_θ f_2, ν_u⟩ du, plus the mixed
/// and H-blocks when a two-variable g is supplied (unit-noise normalization,
/// matching the Brownian drivers of the reference dynamics).
pub fn martingale_cov(
    f1: &TestFn1,
    f2: &TestFn1,
    g: Option<&TestFn2>,
    t: f64,
    path: &DensityPath,
) -> Result<MartCov> {
    let x_f1f2: f64 = x_quadrature()
        .map(|x| f1.x.eval(x) * f2.x.eval(x))
        .sum::<f64>()
        / X_NODES as f64;
    let k_eta = 0.5
        * integrate_path(path, t, &mut |grid| {
            Ok(x_f1f2
                * expect_xi(grid, |th, w| {
                    f1.grad_theta_omega(th, w) * f2.grad_theta_omega(th, w)
                }))
        })?;
    let (mut k_eta_h, mut k_h) = (None, None);
    if let Some(g) = g {
        let alpha = path.alpha;
        let meh = 0.5
            * integrate_path(path, t, &mut |grid| {
                let bg = bracket_two_grad(g, grid, alpha)?;
                let mut acc = 0.0;
                for x in x_quadrature() {
                    acc += expect_xi(grid, |th, w| {
                        f1.grad_theta_omega(th, w) * f1.x.eval(x) * bg(th, w, x)
                    });
                }
                Ok(acc / X_NODES as f64)
            })?;
        let mh = 0.5
            * integrate_path(path, t, &mut |grid| {
                let bg = bracket_two_grad(g, grid, alpha)?;
                let mut acc = 0.0;
                for x in x_quadrature() {
                    acc += expect_xi(grid, |th, w| {
                        let v = bg(th, w, x);
                        v * v
                    });
                }
                Ok(acc / X_NODES as f64)
            })?;
        k_eta_h = Some(meh);
        k_h = Some(mh);
    }
    Ok(MartCov { k_eta, k_eta_h, k_h })
}

/// Exact finite-N variance factor: Var(M^(η)_{N,t} f) = (2·a_N²/|Λ_N|)·𝒦^(η)
/// for i.i.d. unit-noise drivers.
pub fn mart_eta_variance_prediction(n_half: usize, alpha: f64, k_eta: f64) -> f64 {
    let a = scaling_a_n(n_half, alpha);
    2.0 * a * a / (2.0 * n_half as f64) * k_eta
}

/// r(t) = ⟨η_N,t, f⟩ − ⟨η_N,0, f⟩ − ∫₀ᵗ ⟨η_N,s, L[ν_s]f⟩ ds
///        − ∫₀ᵗ ⟨H_N,s, Φ[f]⟩ ds − M^(η)_{N,t} f,
/// assembled with left-endpoint integrals on the simulation grid, so the
/// residual isolates the first-order discretization error.
///
/// The trajectory must carry per-step angle snapshots (`recording_states`,
/// stride 1) and the martingale accumulator for f.
pub fn semimartingale_residual(
    traj: &Trajectory,
    f: &TestFn1,
    model: &ModelSpec,
    lattice: &Lattice,
    path: &DensityPath,
) -> Result<Vec<f64>> {
    let alpha = lattice.alpha();
    let steps = traj.times.len();
    if traj.thetas.len() != steps {
        return Err(FluctError::InvalidParameter(
            "residual needs per-step angle snapshots".into(),
        ));
    }
    let f_idx = traj
        .observable_index(&f.id)
        .ok_or_else(|| FluctError::InvalidParameter(format!("missing accumulator for {}", f.id)))?;
    let omega = &traj.final_state.omega;
    let phi = phi_of(f, model)?;
    let sigma2 = model.noise_sigma * model.noise_sigma;

    let mut eta_series = Vec::with_capacity(steps);
    let mut drift_series = Vec::with_capacity(steps);
    for k in 0..steps {
        let t_k = traj.times[k];
        let grid = path.grid_at(t_k)?;
        let theta = &traj.thetas[k];
        eta_series.push(eta_pair(lattice, theta, omega, grid, f, alpha));

        let field = coupling_field(grid, model, alpha);
        let l_tw = |th: f64, w: f64| {
            0.5 * sigma2 * f.lap_theta_omega(th, w)
                + f.grad_theta_omega(th, w) * ((model.drift)(th, w) + field.eval(th, w))
        };
        let positions = lattice.positions();
        let mut emp = 0.0;
        for i in 0..theta.len() {
            emp += l_tw(theta[i], omega[i]) * f.x.eval(positions[i]);
        }
        emp /= theta.len() as f64;
        let limit = f.x_mean() * expect_xi(grid, l_tw);
        let eta_l = scaling_a_n(lattice.n_half(), alpha) * (emp - limit);

        let h_phi = h_pair(lattice, theta, omega, grid, &phi, alpha, ConvolveMethod::Auto)?;
        drift_series.push(eta_l + h_phi);
    }

    let mut residuals = Vec::with_capacity(steps);
    let mut integral = 0.0;
    for k in 0..steps {
        let mart = traj.mart_eta[k][f_idx];
        residuals.push(eta_series[k] - eta_series[0] - integral - mart);
        if k + 1 < steps {
            integral += drift_series[k] * (traj.times[k + 1] - traj.times[k]);
        }
    }
    Ok(residuals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::integral_psi;
    use crate::model::{build_kuramoto, build_probe, DisorderLaw, InitialLaw};
    use crate::rng::rng_from_seed;
    use crate::testfn::ThetaPart;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use std::f64::consts::TAU;
    use std::sync::Arc;

    fn dirac_atoms() -> Vec<(f64, f64)> {
        vec![(0.0, 1.0)]
    }

    fn random_state(lattice: &Lattice, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = rng_from_seed(seed);
        let theta: Vec<f64> = (0..lattice.size()).map(|_| rng.random::<f64>() * TAU).collect();
        let omega: Vec<f64> = (0..lattice.size()).map(|_| rng.random::<f64>() - 0.5).collect();
        (theta, omega)
    }

    #[test]
    fn scaling_values() {
        assert_abs_diff_eq!(scaling_a_n(1 << 12, 0.25), 64.0);
        assert_abs_diff_eq!(scaling_a_n(16, 0.75), 2.0);
        assert_abs_diff_eq!(scaling_a_n(16, 0.5), 4.0);
        assert!(is_critical_alpha(0.5));
        assert!(!is_critical_alpha(0.25));
    }

    #[test]
    fn eta_of_one_vanishes() {
        let lattice = Lattice::build(32, 0.25).unwrap();
        let grid = DensityGrid::uniform(dirac_atoms(), 64).unwrap();
        let (theta, omega) = random_state(&lattice, 3);
        let v = eta_pair(&lattice, &theta, &omega, &grid, &TestFn1::one(), 0.25);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn eta_two_site_hand_case() {
        // N = 1: two sites at x ∈ {1/2, 0}, a_N = 1 for α = 0.25
        let lattice = Lattice::build(1, 0.25).unwrap();
        let grid = DensityGrid::uniform(dirac_atoms(), 512).unwrap();
        let theta = vec![0.5, 2.0];
        let omega = vec![0.0, 0.0];
        let f = TestFn1::sin_theta();
        let hand = (0.5f64.sin() + 2.0f64.sin()) / 2.0; // ⟨ν_t, sin⟩ = 0
        let v = eta_pair(&lattice, &theta, &omega, &grid, &f, 0.25);
        assert_abs_diff_eq!(v, hand, epsilon = 1e-12);
    }

    #[test]
    fn h_pair_constant_g_is_residual_mechanism() {
        for &(n_half, alpha) in &[(4usize, 0.0), (64, 0.25), (64, 0.75)] {
            let lattice = Lattice::build(n_half, alpha).unwrap();
            let grid = DensityGrid::uniform(dirac_atoms(), 64).unwrap();
            let (theta, omega) = random_state(&lattice, 5);
            let g = TestFn2::constant_one();
            for method in [ConvolveMethod::Direct, ConvolveMethod::Fast] {
                let v = h_pair(&lattice, &theta, &omega, &grid, &g, alpha, method).unwrap();
                let expect = scaling_a_n(n_half, alpha)
                    * (lattice.mean_weight() - integral_psi(alpha));
                assert_abs_diff_eq!(v, expect, epsilon = 1e-12);
            }
        }
        // α = 0, N = 4 (4 half-sites → a_N = 2): exact −0.5·2/4
        let lattice = Lattice::build(4, 0.0).unwrap();
        let grid = DensityGrid::uniform(dirac_atoms(), 64).unwrap();
        let (theta, omega) = random_state(&lattice, 6);
        let v = h_pair(
            &lattice,
            &theta,
            &omega,
            &grid,
            &TestFn2::constant_one(),
            0.0,
            ConvolveMethod::Direct,
        )
        .unwrap();
        assert_abs_diff_eq!(v, -0.5 * 2.0 / 4.0, epsilon = 1e-13);
    }

    #[test]
    fn h_pair_fast_matches_direct() {
        let lattice = Lattice::build(1 << 9, 0.6).unwrap();
        let grid = DensityGrid::uniform(dirac_atoms(), 64).unwrap();
        let (theta, omega) = random_state(&lattice, 11);
        let f1 = TestFn1::new("s2w", ThetaPart::Sin(2), vec![0.3, 1.0], XPart::Cos(1));
        let f2 = TestFn1::new("c1", ThetaPart::Cos(1), vec![1.0, 0.5], XPart::One);
        let g = TestFn2::product(&f1, &f2);
        let fast = h_pair(&lattice, &theta, &omega, &grid, &g, 0.6, ConvolveMethod::Fast).unwrap();
        let direct =
            h_pair(&lattice, &theta, &omega, &grid, &g, 0.6, ConvolveMethod::Direct).unwrap();
        assert!((fast - direct).abs() <= 1e-10 * fast.abs().max(1.0));
    }

    #[test]
    fn duality_identity_holds() {
        let lattice = Lattice::build(128, 0.75).unwrap();
        let grid = DensityGrid::uniform(dirac_atoms(), 64).unwrap();
        let (theta, omega) = random_state(&lattice, 21);

        let g1 = TestFn2::constant_one();
        let check = duality_gap(&lattice, &theta, &omega, &grid, &g1, 0.75).unwrap();
        assert!(check.gap() <= 1e-12, "constant g gap {}", check.gap());

        // g depending only on τ̃ factorizes through the Ψ-average
        let f_tilde = TestFn1::new("st", ThetaPart::Sin(1), vec![1.0], XPart::One);
        let g2 = TestFn2::product(&TestFn1::one(), &f_tilde);
        let check = duality_gap(&lattice, &theta, &omega, &grid, &g2, 0.75).unwrap();
        assert!(check.relative_gap() <= 1e-12);

        let f1 = TestFn1::new("cw", ThetaPart::Cos(2), vec![0.1, 1.0], XPart::Sin(1));
        let f2 = TestFn1::new("sw", ThetaPart::Sin(1), vec![1.0, -0.2], XPart::Cos(2));
        let g3 = TestFn2::product(&f1, &f2);
        let check = duality_gap(&lattice, &theta, &omega, &grid, &g3, 0.75).unwrap();
        assert!(check.relative_gap() <= 1e-10, "gap {}", check.relative_gap());
    }

    #[test]
    fn bilinearity_of_pairings() {
        let lattice = Lattice::build(64, 0.3).unwrap();
        let grid = DensityGrid::uniform(dirac_atoms(), 64).unwrap();
        let (theta, omega) = random_state(&lattice, 31);
        let f1 = TestFn1::sin_theta();
        let f2 = TestFn1::cos_theta();
        let combo = TestFn1::new(
            "combo",
            ThetaPart::Sin(1),
            vec![2.0],
            XPart::One,
        );
        // 2·sin = combo: eta linear
        let v = eta_pair(&lattice, &theta, &omega, &grid, &combo, 0.3);
        let v1 = eta_pair(&lattice, &theta, &omega, &grid, &f1, 0.3);
        assert_abs_diff_eq!(v, 2.0 * v1, epsilon = 1e-12);

        let g_a = TestFn2::product(&f1, &f2);
        let g_b = TestFn2::product(&f2, &f1);
        let ha = h_pair(&lattice, &theta, &omega, &grid, &g_a, 0.3, ConvolveMethod::Direct).unwrap();
        let hb = h_pair(&lattice, &theta, &omega, &grid, &g_b, 0.3, ConvolveMethod::Direct).unwrap();
        let mut g_sum = TestFn2::product(&f1, &f2);
        if let crate::testfn::TestFn2Kind::Separable(terms) = &mut g_sum.kind {
            let extra = TestFn2::product(&f2, &f1);
            if let crate::testfn::TestFn2Kind::Separable(more) = extra.kind {
                terms.extend(more);
            }
        }
        let hsum =
            h_pair(&lattice, &theta, &omega, &grid, &g_sum, 0.3, ConvolveMethod::Direct).unwrap();
        assert_abs_diff_eq!(hsum, ha + hb, epsilon = 1e-11);
    }

    #[test]
    fn init_stats_gaussian_values() {
        let grid = DensityGrid::uniform(dirac_atoms(), 256).unwrap();
        let f_one = TestFn1::one();
        let f_sin = TestFn1::sin_theta();
        let g = TestFn2::constant_one();
        let stats =
            limit_init_stats(&[f_one, f_sin], &[g], &grid, 0.25).unwrap();
        match stats {
            InitStats::Gaussian { c_eta, c_eta_h, c_h } => {
                assert_abs_diff_eq!(c_eta[0][0], 0.0, epsilon = 1e-12);
                assert_abs_diff_eq!(c_eta[1][1], 0.25, epsilon = 1e-10);
                assert_abs_diff_eq!(c_eta[0][1], c_eta[1][0], epsilon = 1e-14);
                // constant g: bracket is the constant Iψ·1, covariances vanish
                assert_abs_diff_eq!(c_eta_h[1][0], 0.0, epsilon = 1e-10);
                assert_abs_diff_eq!(c_h[0][0], 0.0, epsilon = 1e-10);
            }
            other => panic!("expected Gaussian stats, got {other:?}"),
        }
    }

    #[test]
    fn init_stats_deterministic_values() {
        let grid = DensityGrid::uniform(dirac_atoms(), 256).unwrap();
        let g = TestFn2::constant_one();
        let stats = limit_init_stats(&[], &[g], &grid, 0.75).unwrap();
        match stats {
            InitStats::Deterministic { chi, h0 } => {
                assert_abs_diff_eq!(h0[0], chi, epsilon = 1e-12);
                assert_abs_diff_eq!(chi, crate::lattice::chi_alpha(0.75, 1e-8).unwrap());
            }
            other => panic!("expected deterministic stats, got {other:?}"),
        }
        assert!(limit_init_stats(&[], &[], &grid, 0.5).is_err());
    }

    #[test]
    fn init_stats_match_monte_carlo() {
        // MC oracle for C_η and C_{η,H} at N = 2^10, 4000 replicas.
        let alpha = 0.25;
        let n_half = 1 << 10;
        let lattice = Lattice::build(n_half, alpha).unwrap();
        let grid = DensityGrid::uniform(dirac_atoms(), 256).unwrap();
        let model = build_kuramoto(1.0, 1.0, DisorderLaw::dirac(0.0), InitialLaw::UniformCircle);
        let f = TestFn1::sin_theta();
        let g = TestFn2::product(&TestFn1::cos_theta(), &TestFn1::cos_theta());

        let stats = limit_init_stats(std::slice::from_ref(&f), std::slice::from_ref(&g), &grid, alpha).unwrap();
        let (c_eta, c_eta_h, c_h) = match stats {
            InitStats::Gaussian { c_eta, c_eta_h, c_h } => (c_eta, c_eta_h, c_h),
            _ => unreachable!(),
        };

        let reps = 4000;
        let mut eta_samples = Vec::with_capacity(reps);
        let mut h_samples = Vec::with_capacity(reps);
        for rep in 0..reps {
            let seed = crate::rng::replica_seed(99, rep as u64);
            let mut rng = rng_from_seed(seed);
            let (theta, omega) =
                crate::model::sample_populations(&model, lattice.size(), &mut rng).unwrap();
            eta_samples.push(eta_pair(&lattice, &theta, &omega, &grid, &f, alpha));
            h_samples.push(
                h_pair(&lattice, &theta, &omega, &grid, &g, alpha, ConvolveMethod::Fast).unwrap(),
            );
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let me = mean(&eta_samples);
        let mh = mean(&h_samples);
        let var_e = mean(&eta_samples.iter().map(|v| (v - me) * (v - me)).collect::<Vec<_>>());
        let var_h = mean(&h_samples.iter().map(|v| (v - mh) * (v - mh)).collect::<Vec<_>>());
        let cov_eh = mean(
            &eta_samples
                .iter()
                .zip(h_samples.iter())
                .map(|(a, b)| (a - me) * (b - mh))
                .collect::<Vec<_>>(),
        );
        let se = |v: f64| v * (2.0 / (reps as f64 - 1.0)).sqrt();
        assert!(
            (var_e - c_eta[0][0]).abs() <= 3.0 * se(var_e) + 5e-3,
            "C_eta MC {var_e} vs formula {}",
            c_eta[0][0]
        );
        assert!(
            (var_h - c_h[0][0]).abs() <= 3.0 * se(var_h) + 5e-3,
            "C_H MC {var_h} vs formula {}",
            c_h[0][0]
        );
        let se_cov = ((var_e * var_h + cov_eh * cov_eh) / reps as f64).sqrt();
        assert!(
            (cov_eh - c_eta_h[0][0]).abs() <= 3.0 * se_cov + 5e-3,
            "C_etaH MC {cov_eh} vs formula {}",
            c_eta_h[0][0]
        );
    }

    #[test]
    fn supercritical_h0_ladder_concentrates() {
        // α > 1/2: ⟨H_{N,0}, g⟩ concentrates on the deterministic ⟨H_0, g⟩
        // as N grows, with vanishing replica variance.
        let alpha = 0.75;
        let model = build_kuramoto(1.0, 1.0, DisorderLaw::dirac(0.0), InitialLaw::TiltedCosine);
        let grid = DensityGrid::from_initial(
            &InitialLaw::TiltedCosine,
            vec![(0.0, 1.0)],
            256,
        )
        .unwrap();
        let g = TestFn2::product(&TestFn1::cos_theta(), &TestFn1::cos_theta());
        let stats = limit_init_stats(&[], std::slice::from_ref(&g), &grid, alpha).unwrap();
        let h0_limit = match stats {
            InitStats::Deterministic { h0, .. } => h0[0],
            _ => unreachable!(),
        };
        // ⟨cosθ, ξ0⟩ = 1/2 under the tilted initial law, so the limit is χ/4
        assert_abs_diff_eq!(
            h0_limit,
            crate::lattice::chi_alpha(alpha, 1e-8).unwrap() / 4.0,
            epsilon = 1e-6
        );

        let reps = 200;
        let mut prev_var = f64::INFINITY;
        let mut prev_gap = f64::INFINITY;
        for (level, n_half) in [1usize << 8, 1 << 10, 1 << 12].into_iter().enumerate() {
            let lattice = Lattice::build(n_half, alpha).unwrap();
            let samples: Vec<f64> = (0..reps)
                .map(|rep| {
                    let mut rng = rng_from_seed(crate::rng::replica_seed(0x44AA, rep));
                    let (theta, omega) =
                        crate::model::sample_populations(&model, lattice.size(), &mut rng)
                            .unwrap();
                    h_pair(&lattice, &theta, &omega, &grid, &g, alpha, ConvolveMethod::Fast)
                        .unwrap()
                })
                .collect();
            let mean = samples.iter().sum::<f64>() / reps as f64;
            let var = samples
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / (reps as f64 - 1.0);
            let gap = (mean - h0_limit).abs();
            if level > 0 {
                assert!(var < prev_var, "replica variance must shrink along the ladder");
                assert!(
                    gap < prev_gap + 3.0 * (var / reps as f64).sqrt(),
                    "MC mean must approach the deterministic limit"
                );
            }
            prev_var = var;
            prev_gap = gap;
        }
        // at the top of the ladder the limit is resolved well within MC error
        assert!(
            prev_gap <= 0.05,
            "MC mean still {prev_gap:.3} away from the deterministic limit"
        );
    }

    #[test]
    fn martingale_cov_stationary_value() {
        let grid = DensityGrid::uniform(dirac_atoms(), 256).unwrap();
        let path = DensityPath::stationary(grid, 1.0, 0.25);
        let f = TestFn1::sin_theta();
        let mc = martingale_cov(&f, &f, None, 1.0, &path).unwrap();
        assert_abs_diff_eq!(mc.k_eta, 0.25, epsilon = 1e-10);
        let zero = martingale_cov(&TestFn1::one(), &TestFn1::one(), None, 1.0, &path).unwrap();
        assert_abs_diff_eq!(zero.k_eta, 0.0, epsilon = 1e-15);
        assert!(martingale_cov(&f, &f, None, 2.0, &path).is_err());
    }

    #[test]
    fn residual_trivial_case_vanishes() {
        // Γ ≡ 0, c ≡ 0, constant f: every decomposition term is zero.
        let lattice = Arc::new(Lattice::build(16, 0.25).unwrap());
        let model = Arc::new(crate::model::build_free(1.0));
        let grid = DensityGrid::uniform(dirac_atoms(), 64).unwrap();
        let path = DensityPath::stationary(grid, 1.0, 0.25);
        let f = TestFn1::one();
        let config = crate::sim::SimConfig {
            dt: 1e-2,
            t_end: 0.2,
            seed: 2,
            record_stride: 1,
            ..Default::default()
        };
        let traj = crate::sim::Simulation::new(model.clone(), lattice.clone(), config)
            .with_observables(vec![f.clone()])
            .recording_states()
            .run()
            .unwrap();
        let res = semimartingale_residual(&traj, &f, &model, &lattice, &path).unwrap();
        for r in res {
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn probe_deterministic_residual_is_first_order() {
        // deterministic probe dynamics: σ = 0, analytic trajectories; the
        // residual is the pure left-endpoint integration error, so halving dt
        // halves it
        let alpha = 0.25;
        let n_half = 64;
        let lattice = Arc::new(Lattice::build(n_half, alpha).unwrap());
        let model = Arc::new(build_probe(1.0).with_sigma(0.0));
        let grid = DensityGrid::uniform(dirac_atoms(), 256).unwrap();
        let path = DensityPath::stationary(grid, 1.0, 0.25);
        let f = TestFn1::sin_theta();
        let run = |dt: f64| -> f64 {
            let config = crate::sim::SimConfig {
                dt,
                t_end: 0.5,
                seed: 4,
                record_stride: 1,
                ..Default::default()
            };
            let traj = crate::sim::Simulation::new(model.clone(), lattice.clone(), config)
                .with_observables(vec![f.clone()])
                .recording_states()
                .run()
                .unwrap();
            let res = semimartingale_residual(&traj, &f, &model, &lattice, &path).unwrap();
            assert_eq!(res[0], 0.0);
            *res.last().unwrap()
        };
        let coarse = run(1e-3);
        let fine = run(5e-4);
        assert!(coarse.abs() < 5e-3, "probe residual too large: {coarse}");
        let ratio = coarse / fine;
        assert!(
            (1.9..=2.1).contains(&ratio),
            "deterministic refinement ratio {ratio} not ~2"
        );
    }
}
