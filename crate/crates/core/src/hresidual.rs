//! Semimartingale decomposition residual for the two-particle field H_N.
//!
//! For a separable test function g the field satisfies
//!   ⟨H_t, g⟩ = ⟨H_0, g⟩ + ∫₀ᵗ ⟨H_s, 𝓛_s g⟩ ds + ∫₀ᵗ F_{N,s} g ds
//!            + ∫₀ᵗ G_{N,s} g ds + M^(H)_{N,t} g,
//! with 𝓛 = 𝓛⁽¹⁾ + 𝓛⁽²⁾ acting through the factor derivatives, F_N and G_N
//! the remainders driven by ν_N − ν, and M^(H) the Brownian term. Everything
//! here is assembled from per-step angle snapshots plus the noise table the
//! run consumed, so the residual isolates the first-order discretization
//! error without touching the integrator.
//!
//! Scope: separable g whose factors carry θ-gradients and θ-Laplacians and
//! whose x-parts are constant (the Ψ-transform then stays scalar).

use crate::convolve::ConvolveMethod;
use crate::error::{FluctError, Result};
use crate::fluct::scaling_a_n;
use crate::lattice::integral_psi;
use crate::meanfield::{coupling_field, expect_xi, DensityPath};
use crate::model::ModelSpec;
use crate::sim::{interaction_field, NoiseTable, ParticleState, Trajectory};
use crate::testfn::{Factor, TestFn2, XPart};

fn factor_values(f: &Factor, theta: &[f64], omega: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .zip(omega.iter())
        .map(|(&t, &w)| (f.theta_omega)(t, w))
        .collect()
}

fn derivative_values(f: &Option<crate::model::Fn2>, theta: &[f64], omega: &[f64], what: &str) -> Result<Vec<f64>> {
    let f = f.as_ref().ok_or_else(|| {
        FluctError::SeparableRequired(format!("H-residual factor lacks a {what}"))
    })?;
    Ok(theta
        .iter()
        .zip(omega.iter())
        .map(|(&t, &w)| f(t, w))
        .collect())
}

/// a_N·[(1/L²)·Σ_i left_i·(W*right)_i − (1/L)·Σ_i left_i·⟨right, ξ⟩·∫Ψ].
fn h_bilinear(left: &[f64], conv_right: &[f64], right_xi: f64, ipsi: f64, a_n: f64) -> f64 {
    let l = left.len() as f64;
    let mut pair = 0.0;
    let mut single = 0.0;
    for (a, b) in left.iter().zip(conv_right.iter()) {
        pair += a * b;
        single += a;
    }
    a_n * (pair / (l * l) - single / l * right_xi * ipsi)
}

/// Residual series R(t_k) of the H_N decomposition along a recorded run.
///
/// `traj` must carry per-step snapshots (stride 1) produced with `noise`;
/// dt-refinement studies reuse one finer table across runs.
pub fn h_semimartingale_residual(
    traj: &Trajectory,
    noise: &NoiseTable,
    g: &TestFn2,
    model: &ModelSpec,
    path: &DensityPath,
) -> Result<Vec<f64>> {
    let lattice = traj.final_state.lattice.clone();
    let alpha = lattice.alpha();
    let records = traj.times.len();
    if traj.thetas.len() != records || records < 2 {
        return Err(FluctError::InvalidParameter(
            "H-residual needs per-step snapshots".into(),
        ));
    }
    let steps = records - 1;
    if noise.rows.len() % steps != 0 {
        return Err(FluctError::InvalidParameter(
            "noise table does not tile the recorded steps".into(),
        ));
    }
    let agg = noise.rows.len() / steps;
    let terms = g.separable_terms()?;
    if terms
        .iter()
        .any(|(a, b)| a.x != XPart::One || b.x != XPart::One)
    {
        return Err(FluctError::SeparableRequired(
            "H-residual supports constant x-parts only".into(),
        ));
    }
    let gamma_pairs = model.gamma_separable.as_ref().ok_or_else(|| {
        FluctError::SeparableRequired("H-residual needs a separable interaction".into())
    })?;

    let omega = &traj.final_state.omega;
    let size = lattice.size();
    let a_n = scaling_a_n(lattice.n_half(), alpha);
    let ipsi = integral_psi(alpha);
    let sigma = model.noise_sigma;
    let sigma2 = sigma * sigma;
    let conv = lattice.convolver();

    let mut h_series = Vec::with_capacity(records);
    let mut drift_series = Vec::with_capacity(records);
    let mut mart_incr = Vec::with_capacity(steps);

    for k in 0..records {
        let t_k = traj.times[k];
        let theta = &traj.thetas[k];
        let grid = path.grid_at(t_k)?;
        let field = coupling_field(grid, model, alpha);

        // interaction drift v = c + [ΓΨ, ν] at the particles
        let v: Vec<f64> = theta
            .iter()
            .zip(omega.iter())
            .map(|(&t, &w)| (model.drift)(t, w) + field.eval(t, w))
            .collect();
        // empirical field [ΓΨ, ν_N] for the F_N remainder
        let state_k = ParticleState::from_parts(lattice.clone(), theta.clone(), omega.clone())?;
        let emp_field = interaction_field(&state_k, model, ConvolveMethod::Auto)?;

        let gamma_right_vals: Vec<Vec<f64>> = gamma_pairs
            .iter()
            .map(|p| {
                theta
                    .iter()
                    .zip(omega.iter())
                    .map(|(&t, &w)| (p.right)(t, w))
                    .collect()
            })
            .collect();
        let gamma_right_conv: Vec<Vec<f64>> =
            gamma_right_vals.iter().map(|vv| conv.convolve(vv)).collect();
        let gamma_right_xi: Vec<f64> = gamma_pairs
            .iter()
            .map(|p| expect_xi(grid, |t, w| (p.right)(t, w)))
            .collect();

        let mut h_val = 0.0;
        let mut drift = 0.0;
        let mut mart1 = vec![0.0; size];

        for (left, right) in terms {
            let f_vals = factor_values(left, theta, omega);
            let g_vals = factor_values(right, theta, omega);
            let f_grad = derivative_values(&left.grad_theta, theta, omega, "θ-gradient")?;
            let g_grad = derivative_values(&right.grad_theta, theta, omega, "θ-gradient")?;
            let f_lap = derivative_values(&left.lap_theta, theta, omega, "θ-Laplacian")?;
            let g_lap = derivative_values(&right.lap_theta, theta, omega, "θ-Laplacian")?;
            let conv_f = conv.convolve(&f_vals);
            let conv_g = conv.convolve(&g_vals);
            let f_xi = expect_xi(grid, |t, w| (left.theta_omega)(t, w));
            let g_xi = expect_xi(grid, |t, w| (right.theta_omega)(t, w));

            // ⟨H, g⟩ itself
            h_val += h_bilinear(&f_vals, &conv_g, g_xi, ipsi, a_n);

            // 𝓛⁽¹⁾: derivatives fall on either slot
            let left_mod: Vec<f64> = (0..size)
                .map(|i| 0.5 * sigma2 * f_lap[i] + f_grad[i] * v[i])
                .collect();
            drift += h_bilinear(&left_mod, &conv_g, g_xi, ipsi, a_n);
            let right_mod: Vec<f64> = (0..size)
                .map(|i| 0.5 * sigma2 * g_lap[i] + g_grad[i] * v[i])
                .collect();
            let conv_right_mod = conv.convolve(&right_mod);
            let right_mod_xi = expect_xi(grid, |t, w| {
                0.5 * sigma2 * right.lap_theta.as_ref().unwrap()(t, w)
                    + right.grad_theta.as_ref().unwrap()(t, w)
                        * ((model.drift)(t, w) + field.eval(t, w))
            });
            drift += h_bilinear(&f_vals, &conv_right_mod, right_mod_xi, ipsi, a_n);

            // 𝓛⁽²⁾: the ν-bracket of the τ̃-gradient couples back through Γ
            for (q, pair) in gamma_pairs.iter().enumerate() {
                let left_l2: Vec<f64> = (0..size)
                    .map(|i| {
                        f_xi * ipsi * g_grad[i] * (pair.left)(theta[i], omega[i])
                    })
                    .collect();
                drift += h_bilinear(
                    &left_l2,
                    &gamma_right_conv[q],
                    gamma_right_xi[q],
                    ipsi,
                    a_n,
                );
            }

            // F_N: ∇_θ g weighted by the empirical-vs-limit field gap
            let left_fn: Vec<f64> = (0..size)
                .map(|i| f_grad[i] * (emp_field[i] - field.eval(theta[i], omega[i])))
                .collect();
            drift += h_bilinear(&left_fn, &conv_g, g_xi, ipsi, a_n);

            // G_N: empirical-vs-limit Ψ-bracket of the first factor
            let d_vals: Vec<f64> = (0..size)
                .map(|i| conv_f[i] / size as f64 - f_xi * ipsi)
                .collect();
            for (q, pair) in gamma_pairs.iter().enumerate() {
                let left_gn: Vec<f64> = (0..size)
                    .map(|i| g_grad[i] * d_vals[i] * (pair.left)(theta[i], omega[i]))
                    .collect();
                drift += h_bilinear(
                    &left_gn,
                    &gamma_right_conv[q],
                    gamma_right_xi[q],
                    ipsi,
                    a_n,
                );
            }

            // martingale pieces of this step (left endpoint)
            if k < steps {
                for j in 0..size {
                    // ∇_θ̃ part hits B_j through the Ψ-row sums
                    mart1[j] += a_n / (size as f64 * size as f64) * conv_f[j] * g_grad[j];
                    // centered ∇_θ part hits B_i
                    mart1[j] += a_n / size as f64
                        * f_grad[j]
                        * (conv_g[j] / size as f64 - g_xi * ipsi);
                }
            }
        }
        h_series.push(h_val);
        drift_series.push(drift);

        if k < steps {
            let dt = traj.times[k + 1] - traj.times[k];
            let norm = 1.0 / (agg as f64).sqrt();
            let mut inc = 0.0;
            for i in 0..size {
                let mut xi = 0.0;
                for sub in 0..agg {
                    xi += noise.rows[k * agg + sub][i];
                }
                inc += mart1[i] * sigma * dt.sqrt() * xi * norm;
            }
            mart_incr.push(inc);
        }
    }

    let mut residuals = Vec::with_capacity(records);
    let mut integral = 0.0;
    let mut mart = 0.0;
    for k in 0..records {
        residuals.push(h_series[k] - h_series[0] - integral - mart);
        if k < steps {
            integral += drift_series[k] * (traj.times[k + 1] - traj.times[k]);
            mart += mart_incr[k];
        }
    }
    Ok(residuals)
}
