//! Structured test functions for the fluctuation fields.
//!
//! One-variable functions factor as f(θ, ω, x) = fθ(θ)·fω(ω)·fx(x) with a
//! trigonometric (or polynomial, on the line) θ-part, a polynomial ω-part and
//! a Fourier x-part. The structure keeps θ-gradients, circle averages in x,
//! and the singular integrals ∫ Ψ(x, x̃)·fx(x) dx in closed or cached form.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{FluctError, Result};
use crate::lattice::integral_psi;
use crate::model::{Fn2, ModelSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum ThetaPart {
    One,
    /// sin(kθ)
    Sin(u32),
    /// cos(kθ)
    Cos(u32),
    /// Σ c_i θ^i, for line-state models.
    Poly(Vec<f64>),
}

impl ThetaPart {
    fn eval(&self, theta: f64) -> f64 {
        match self {
            ThetaPart::One => 1.0,
            ThetaPart::Sin(k) => (*k as f64 * theta).sin(),
            ThetaPart::Cos(k) => (*k as f64 * theta).cos(),
            ThetaPart::Poly(c) => poly_eval(c, theta),
        }
    }

    fn d1(&self, theta: f64) -> f64 {
        match self {
            ThetaPart::One => 0.0,
            ThetaPart::Sin(k) => {
                let kf = *k as f64;
                kf * (kf * theta).cos()
            }
            ThetaPart::Cos(k) => {
                let kf = *k as f64;
                -kf * (kf * theta).sin()
            }
            ThetaPart::Poly(c) => poly_eval(&poly_derivative(c), theta),
        }
    }

    fn d2(&self, theta: f64) -> f64 {
        match self {
            ThetaPart::One => 0.0,
            ThetaPart::Sin(k) => {
                let kf = *k as f64;
                -kf * kf * (kf * theta).sin()
            }
            ThetaPart::Cos(k) => {
                let kf = *k as f64;
                -kf * kf * (kf * theta).cos()
            }
            ThetaPart::Poly(c) => poly_eval(&poly_derivative(&poly_derivative(c)), theta),
        }
    }
}

fn poly_eval(coeffs: &[f64], v: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * v + c)
}

fn poly_derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, c)| i as f64 * c)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum XPart {
    One,
    /// cos(2πℓx)
    Cos(u32),
    /// sin(2πℓx)
    Sin(u32),
}

impl XPart {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            XPart::One => 1.0,
            XPart::Cos(l) => (TAU * *l as f64 * x).cos(),
            XPart::Sin(l) => (TAU * *l as f64 * x).sin(),
        }
    }

    /// ∫_S xpart(x) dx.
    pub fn circle_mean(&self) -> f64 {
        match self {
            XPart::One => 1.0,
            _ => 0.0,
        }
    }

    /// The map x̃ ↦ ∫_S Ψ(x, x̃)·xpart(x) dx as (coefficient, shape).
    ///
    /// Constant parts pick up 2^α/(1−α); Fourier parts reproduce themselves
    /// scaled by the ρ-transform ∫ ρ(z)·cos(2πℓz) dz.
    pub fn psi_transform(&self, alpha: f64) -> (f64, XPart) {
        match self {
            XPart::One => (integral_psi(alpha), XPart::One),
            XPart::Cos(l) => (psi_fourier(alpha, *l), XPart::Cos(*l)),
            XPart::Sin(l) => (psi_fourier(alpha, *l), XPart::Sin(*l)),
        }
    }
}

/// ∫_S ρ(z)·cos(2πℓz) dz with ρ(z) = min(|z|, 1−|z|)^(−α), cached per (α, ℓ).
///
/// The substitution z = s^(1/(1−α)) absorbs the endpoint singularity:
/// 2∫_0^(1/2) z^(−α) cos(2πℓz) dz = (2/(1−α)) ∫_0^(2^(α−1)) cos(2πℓ·s^(1/(1−α))) ds.
pub fn psi_fourier(alpha: f64, ell: u32) -> f64 {
    if ell == 0 {
        return integral_psi(alpha);
    }
    static CACHE: OnceLock<Mutex<HashMap<(u64, u32), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (alpha.to_bits(), ell);
    if let Some(v) = cache.lock().unwrap().get(&key) {
        return *v;
    }
    let q = 1.0 / (1.0 - alpha);
    let b = 0.5f64.powf(1.0 - alpha);
    let f = |s: f64| (TAU * ell as f64 * s.powf(q)).cos();
    let value = 2.0 / (1.0 - alpha) * adaptive_simpson(&f, 0.0, b, 1e-13, 48);
    cache.lock().unwrap().insert(key, value);
    value
}

/// Plain adaptive Simpson; adequate for the smooth substituted integrands.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, fm, whole, tol, depth)
}

/// Product-form test function f(θ, ω, x) = fθ(θ)·fω(ω)·fx(x).
#[derive(Debug, Clone)]
pub struct TestFn1 {
    pub id: String,
    pub theta: ThetaPart,
    /// Polynomial coefficients in ω, constant first; [1] is the constant 1.
    pub omega: Vec<f64>,
    pub x: XPart,
}

impl TestFn1 {
    pub fn new(id: impl Into<String>, theta: ThetaPart, omega: Vec<f64>, x: XPart) -> Self {
        Self {
            id: id.into(),
            theta,
            omega,
            x,
        }
    }

    pub fn one() -> Self {
        Self::new("one", ThetaPart::One, vec![1.0], XPart::One)
    }

    pub fn sin_theta() -> Self {
        Self::new("sin_theta", ThetaPart::Sin(1), vec![1.0], XPart::One)
    }

    pub fn cos_theta() -> Self {
        Self::new("cos_theta", ThetaPart::Cos(1), vec![1.0], XPart::One)
    }

    pub fn eval(&self, theta: f64, omega: f64, x: f64) -> f64 {
        self.theta.eval(theta) * poly_eval(&self.omega, omega) * self.x.eval(x)
    }

    /// The (θ, ω)-dependent part, x factored out.
    pub fn theta_omega(&self, theta: f64, omega: f64) -> f64 {
        self.theta.eval(theta) * poly_eval(&self.omega, omega)
    }

    /// ∂_θ f.
    pub fn grad_theta(&self, theta: f64, omega: f64, x: f64) -> f64 {
        self.theta.d1(theta) * poly_eval(&self.omega, omega) * self.x.eval(x)
    }

    pub fn grad_theta_omega(&self, theta: f64, omega: f64) -> f64 {
        self.theta.d1(theta) * poly_eval(&self.omega, omega)
    }

    /// ∂²_θ of the (θ, ω) part.
    pub fn lap_theta_omega(&self, theta: f64, omega: f64) -> f64 {
        self.theta.d2(theta) * poly_eval(&self.omega, omega)
    }

    pub fn x_mean(&self) -> f64 {
        self.x.circle_mean()
    }
}

/// One separable factor of a two-variable test function: a (θ, ω)-callable
/// with optional θ-derivatives, and a structured x-part.
#[derive(Clone)]
pub struct Factor {
    pub theta_omega: Fn2,
    pub grad_theta: Option<Fn2>,
    pub lap_theta: Option<Fn2>,
    pub x: XPart,
}

impl Factor {
    pub fn from_testfn(f: &TestFn1) -> Self {
        let f_eval = f.clone();
        let f_grad = f.clone();
        let f_lap = f.clone();
        Factor {
            theta_omega: Arc::new(move |t, w| f_eval.theta_omega(t, w)),
            grad_theta: Some(Arc::new(move |t, w| f_grad.grad_theta_omega(t, w))),
            lap_theta: Some(Arc::new(move |t, w| f_lap.lap_theta_omega(t, w))),
            x: f.x.clone(),
        }
    }

    pub fn eval(&self, theta: f64, omega: f64, x: f64) -> f64 {
        (self.theta_omega)(theta, omega) * self.x.eval(x)
    }
}

type Callable6 = Arc<dyn Fn(f64, f64, f64, f64, f64, f64) -> f64 + Send + Sync>;

/// Two-variable test function g(τ, τ̃).
#[derive(Clone)]
pub enum TestFn2Kind {
    /// g = Σ_r F_r(τ)·G_r(τ̃).
    Separable(Vec<(Factor, Factor)>),
    /// Arbitrary callable (θ, ω, x, θ̃, ω̃, x̃) ↦ g; direct evaluation only.
    Callable(Callable6),
}

#[derive(Clone)]
pub struct TestFn2 {
    pub id: String,
    pub kind: TestFn2Kind,
}

impl TestFn2 {
    /// g(τ, τ̃) = f1(τ)·f2(τ̃).
    pub fn product(f1: &TestFn1, f2: &TestFn1) -> Self {
        TestFn2 {
            id: format!("{}*{}", f1.id, f2.id),
            kind: TestFn2Kind::Separable(vec![(Factor::from_testfn(f1), Factor::from_testfn(f2))]),
        }
    }

    pub fn constant_one() -> Self {
        let mut g = Self::product(&TestFn1::one(), &TestFn1::one());
        g.id = "one".into();
        g
    }

    pub fn callable(id: impl Into<String>, f: Callable6) -> Self {
        TestFn2 {
            id: id.into(),
            kind: TestFn2Kind::Callable(f),
        }
    }

    pub fn separable_terms(&self) -> Result<&[(Factor, Factor)]> {
        match &self.kind {
            TestFn2Kind::Separable(terms) => Ok(terms),
            TestFn2Kind::Callable(_) => Err(FluctError::SeparableRequired(format!(
                "test function '{}' is an opaque callable",
                self.id
            ))),
        }
    }

    pub fn eval(&self, tau: (f64, f64, f64), tau_t: (f64, f64, f64)) -> f64 {
        match &self.kind {
            TestFn2Kind::Separable(terms) => terms
                .iter()
                .map(|(a, b)| a.eval(tau.0, tau.1, tau.2) * b.eval(tau_t.0, tau_t.1, tau_t.2))
                .sum(),
            TestFn2Kind::Callable(f) => f(tau.0, tau.1, tau.2, tau_t.0, tau_t.1, tau_t.2),
        }
    }
}

/// Φ[f](τ, τ̃) = ∂_θ f(τ)·Γ(θ, ω, θ̃, ω̃), separable whenever Γ is.
pub fn phi_of(f: &TestFn1, model: &ModelSpec) -> Result<TestFn2> {
    let pairs = model.gamma_separable.as_ref().ok_or_else(|| {
        FluctError::SeparableRequired("phi_of needs a separable interaction".into())
    })?;
    let terms = pairs
        .iter()
        .map(|pair| {
            let grad = f.clone();
            let left_gamma = pair.left.clone();
            (
                Factor {
                    theta_omega: Arc::new(move |t, w| {
                        grad.grad_theta_omega(t, w) * left_gamma(t, w)
                    }),
                    grad_theta: None,
                    lap_theta: None,
                    x: f.x.clone(),
                },
                Factor {
                    theta_omega: pair.right.clone(),
                    grad_theta: None,
                    lap_theta: None,
                    x: XPart::One,
                },
            )
        })
        .collect();
    Ok(TestFn2 {
        id: format!("phi[{}]", f.id),
        kind: TestFn2Kind::Separable(terms),
    })
}
