//! Periodic lattice geometry and the singular spatial weight Ψ.
//!
//! Sites live on the circle S = R/Z at positions x_i = i/(2N) for
//! i ∈ {−N, …, N−1} (−N and N identified), so |Λ_N| = 2N. Pairs interact
//! through Ψ(x, y) = d(x, y)^(−α) with d the circle distance and α ∈ [0, 1);
//! the self-weight is Ψ(x, x) := 0.
//!
//! Besides the kernel itself, this module carries the closed-form Riemann-sum
//! asymptotics of the per-site weight average: the integral 2^α/(1−α), the
//! rescaled residual N^(1−α)·(mean − integral), and its N→∞ limit χ(α).

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::convolve::Convolver;
use crate::error::{FluctError, Result};

/// Largest admissible truncation of the k-series in [`chi_alpha`].
const CHI_SERIES_CAP: usize = 10_000_000;

/// Distance on the unit circle R/Z: min(|x−y|, 1−|x−y|) after modular reduction.
pub fn circle_distance(x: f64, y: f64) -> f64 {
    let diff = (x - y).rem_euclid(1.0);
    diff.min(1.0 - diff)
}

/// Periodic site set with precomputed circulant weight kernel.
#[derive(Debug)]
pub struct Lattice {
    n_half: usize,
    alpha: f64,
    positions: Vec<f64>,
    kernel: Vec<f64>,
    convolver: OnceLock<Convolver>,
}

impl Lattice {
    /// Builds the 2N-site lattice with kernel entries d(0, k/(2N))^(−α), k ≠ 0.
    ///
    /// Rejects `n_half == 0` and α outside [0, 1). α = 0 is filled with an
    /// exact constant kernel so no `powf` rounding enters that case.
    pub fn build(n_half: usize, alpha: f64) -> Result<Self> {
        if n_half == 0 {
            return Err(FluctError::InvalidParameter("n_half must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(FluctError::InvalidParameter(format!(
                "alpha must lie in [0, 1), got {alpha}"
            )));
        }
        let size = 2 * n_half;
        // Site i ∈ {−N, …, N−1} is stored at array index i + N.
        let positions: Vec<f64> = (0..size)
            .map(|a| ((a as f64 - n_half as f64) / size as f64).rem_euclid(1.0))
            .collect();
        let mut kernel = vec![0.0; size];
        for (k, w) in kernel.iter_mut().enumerate().skip(1) {
            let dist = (k.min(size - k)) as f64 / size as f64;
            *w = if alpha == 0.0 { 1.0 } else { dist.powf(-alpha) };
        }
        Ok(Self {
            n_half,
            alpha,
            positions,
            kernel,
            convolver: OnceLock::new(),
        })
    }

    /// The half-count N; the lattice has 2N sites.
    pub fn n_half(&self) -> usize {
        self.n_half
    }

    /// Number of sites |Λ_N| = 2N.
    pub fn size(&self) -> usize {
        2 * self.n_half
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Positions x_i ∈ [0, 1); index a holds site i = a − N.
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Circulant kernel row: kernel[k] = Ψ(x_0, x_k), kernel[0] = 0.
    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    /// Ψ(x_i, x_j) through the circulant structure.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let size = self.size();
        self.kernel[(i + size - j % size) % size]
    }

    /// FFT convolver for this kernel, built once on first use.
    pub fn convolver(&self) -> &Convolver {
        self.convolver.get_or_init(|| Convolver::new(&self.kernel))
    }

    /// Per-site average (1/|Λ_N|) Σ_j Ψ(x_i, x_j), identical for every i.
    ///
    /// Uses the closed form (2^α/N^(1−α)) Σ_{k=1}^N k^(−α) − 2^(α−1)/N.
    pub fn mean_weight(&self) -> f64 {
        mean_weight_closed(self.n_half as u64, self.alpha)
    }

    /// N^(1−α)·(mean_weight − integral_psi); site-independent and deterministic.
    pub fn riemann_residual(&self) -> f64 {
        riemann_residual_closed(self.n_half as u64, self.alpha)
    }
}

/// ∫_S Ψ(x, x̃) dx̃ = 2^α/(1−α), independent of x.
pub fn integral_psi(alpha: f64) -> f64 {
    2f64.powf(alpha) / (1.0 - alpha)
}

/// Σ_{k=1}^n k^(−alpha) with compensated summation, parallel over chunks.
fn sum_inverse_powers(alpha: f64, n: u64) -> f64 {
    if alpha == 0.0 {
        return n as f64;
    }
    let chunk: u64 = 1 << 20;
    let starts: Vec<u64> = (1..=n).step_by(chunk as usize).collect();
    starts
        .par_iter()
        .map(|&s| {
            let end = (s + chunk - 1).min(n);
            let mut acc = 0.0f64;
            let mut comp = 0.0f64;
            for k in s..=end {
                let term = (k as f64).powf(-alpha);
                let y = term - comp;
                let t = acc + y;
                comp = (t - acc) - y;
                acc = t;
            }
            acc
        })
        .sum()
}

/// Closed-form per-site weight average for arbitrary N without materializing a lattice.
pub fn mean_weight_closed(n_half: u64, alpha: f64) -> f64 {
    let n = n_half as f64;
    let sum = sum_inverse_powers(alpha, n_half);
    2f64.powf(alpha) / n.powf(1.0 - alpha) * sum - 2f64.powf(alpha - 1.0) / n
}

/// Closed-form residual N^(1−α)·(mean_weight − integral_psi).
///
/// Algebraically equal to 2^α·(Σ_{k≤N} k^(−α) − N^(1−α)/(1−α) − N^(−α)/2),
/// which avoids the catastrophic cancellation of forming the mean first.
pub fn riemann_residual_closed(n_half: u64, alpha: f64) -> f64 {
    let n = n_half as f64;
    let sum = sum_inverse_powers(alpha, n_half);
    2f64.powf(alpha) * (sum - n.powf(1.0 - alpha) / (1.0 - alpha) - n.powf(-alpha) / 2.0)
}

/// Residuals for an increasing ladder of N values, sharing one prefix sweep.
pub fn riemann_residual_ladder(n_halves: &[u64], alpha: f64) -> Result<Vec<f64>> {
    if n_halves.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FluctError::InvalidParameter(
            "ladder must be strictly increasing".into(),
        ));
    }
    let mut out = Vec::with_capacity(n_halves.len());
    let mut acc = 0.0f64;
    let mut comp = 0.0f64;
    let mut prev = 0u64;
    for &n_half in n_halves {
        for k in prev + 1..=n_half {
            let term = if alpha == 0.0 {
                1.0
            } else {
                (k as f64).powf(-alpha)
            };
            let y = term - comp;
            let t = acc + y;
            comp = (t - acc) - y;
            acc = t;
        }
        prev = n_half;
        let n = n_half as f64;
        out.push(
            2f64.powf(alpha) * (acc - n.powf(1.0 - alpha) / (1.0 - alpha) - n.powf(-alpha) / 2.0),
        );
    }
    Ok(out)
}

/// ∫_0^1 (u − 1/2)(u + k)^(−α−1) du in closed form.
///
/// `expm1`/`ln_1p` keep the increments exact where naive differences of powers
/// lose half the mantissa at k ~ 1e7.
fn centered_term_integral(alpha: f64, k: f64) -> f64 {
    // a = ∫ (u+k)^(−α−1) du = (k^−α − (k+1)^−α)/α
    let a = -k.powf(-alpha) * f64::exp_m1(-alpha * f64::ln_1p(1.0 / k)) / alpha;
    // ∫_k^{k+1} v^−α dv = ((k+1)^(1−α) − k^(1−α))/(1−α)
    let strip = k.powf(1.0 - alpha) * f64::exp_m1((1.0 - alpha) * f64::ln_1p(1.0 / k)) / (1.0 - alpha);
    let b = strip - k * a;
    b - a / 2.0
}

/// χ(α) = 2^α·C(α) with C(α) = −1/(1−α) + 1/2 − ∫_0^1 (u−1/2) Σ_{k≥1} α/(u+k)^(α+1) du.
///
/// The k-series is truncated at K = min(⌈(1/tol)^(1/α)⌉, 10^7) and never more
/// than the corrected-tail requirement; each term's u-integral is exact. The
/// truncated tail is restored by its Euler-Maclaurin leading term
/// −α/12·(K+1)^(−α−1), leaving a bound ≈ α·(K+1)^(−α−2) that is checked
/// against `tolerance` before returning. Nonzero for every α in [0, 1).
pub fn chi_alpha(alpha: f64, tolerance: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(FluctError::InvalidParameter(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    if tolerance <= 0.0 {
        return Err(FluctError::InvalidParameter("tolerance must be > 0".into()));
    }
    if alpha == 0.0 {
        // The series carries a factor α; C(0) = −1 + 1/2.
        return Ok(-0.5);
    }
    let k_spec = (1.0 / tolerance).powf(1.0 / alpha).ceil();
    let k_spec = if k_spec.is_finite() {
        (k_spec as usize).min(CHI_SERIES_CAP)
    } else {
        CHI_SERIES_CAP
    };
    // Post-correction error bound α·(K+1)^(−α−2); solve for the K that meets tol/2.
    let k_needed = (alpha / (tolerance / 2.0)).powf(1.0 / (alpha + 2.0)).ceil() as usize;
    let k_eff = k_spec.min(k_needed).max(1024);
    let err_bound = alpha * ((k_eff + 1) as f64).powf(-(alpha + 2.0));
    if err_bound > tolerance {
        return Err(FluctError::ToleranceNotMet {
            requested: tolerance,
            achievable: err_bound,
        });
    }
    let mut series = 0.0f64;
    let mut comp = 0.0f64;
    for k in 1..=k_eff {
        let term = alpha * centered_term_integral(alpha, k as f64);
        let y = term - comp;
        let t = series + y;
        comp = (t - series) - y;
        series = t;
    }
    let tail = -alpha / 12.0 * ((k_eff + 1) as f64).powf(-(alpha + 1.0));
    let c = -1.0 / (1.0 - alpha) + 0.5 - (series + tail);
    Ok(2f64.powf(alpha) * c)
}

/// Σ_{j≠i} d(x_j, x_i)^(−β), site-independent; grows as N, N·ln N, or N^β.
pub fn weight_sum_growth(n_half: u64, beta: f64) -> Result<f64> {
    if beta <= 0.0 {
        return Err(FluctError::InvalidParameter("beta must be > 0".into()));
    }
    let size = (2 * n_half) as f64;
    // Distances k/(2N) occur twice for k = 1..N−1 and once at the antipode k = N.
    let mut sum = 0.0;
    for k in 1..n_half {
        sum += 2.0 * (k as f64).powf(-beta);
    }
    sum += (n_half as f64).powf(-beta);
    Ok(size.powf(beta) * sum)
}
