//! Dynamics ingredients: local drift c, bounded interaction Γ, disorder law μ,
//! initial law ζ, and noise amplitude, for scalar states and scalar disorder.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{FluctError, Result};

pub type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type Fn4 = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateSpace {
    /// Angles in [0, 2π), wrapped after every step.
    Circle,
    Line,
}

impl StateSpace {
    /// Reduce a state value to the fundamental domain.
    pub fn wrap(&self, theta: f64) -> f64 {
        match self {
            StateSpace::Circle => theta.rem_euclid(TAU),
            StateSpace::Line => theta,
        }
    }

    /// Distance between two states (circle distance in radians on the circle).
    pub fn distance(&self, a: f64, b: f64) -> f64 {
        match self {
            StateSpace::Circle => {
                let d = (a - b).rem_euclid(TAU);
                d.min(TAU - d)
            }
            StateSpace::Line => (a - b).abs(),
        }
    }
}

/// One rank of a separable interaction: Γ(θ,ω,θ̃,ω̃) = Σ_r left_r(θ,ω)·right_r(θ̃,ω̃).
#[derive(Clone)]
pub struct SeparablePair {
    pub left: Fn2,
    pub right: Fn2,
}

/// Disorder law μ with finite support for the mean-field solver; continuous
/// laws are admissible for the particle simulator only.
#[derive(Clone, Debug)]
pub enum DisorderLaw {
    /// Atoms (value, probability); probabilities must sum to 1.
    Atoms(Vec<(f64, f64)>),
    Gaussian { mean: f64, sd: f64 },
}

impl DisorderLaw {
    pub fn dirac(value: f64) -> Self {
        DisorderLaw::Atoms(vec![(value, 1.0)])
    }

    /// Finite support when available (None for continuous laws).
    pub fn atoms(&self) -> Option<&[(f64, f64)]> {
        match self {
            DisorderLaw::Atoms(a) => Some(a),
            DisorderLaw::Gaussian { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DisorderLaw::Atoms(atoms) = self {
            if atoms.is_empty() {
                return Err(FluctError::InvalidParameter("empty disorder support".into()));
            }
            let total: f64 = atoms.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-12 || atoms.iter().any(|(_, p)| *p < 0.0) {
                return Err(FluctError::InvalidParameter(format!(
                    "disorder probabilities must be nonnegative and sum to 1 (got {total})"
                )));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            DisorderLaw::Atoms(atoms) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in atoms {
                    acc += p;
                    if u <= acc {
                        return *v;
                    }
                }
                atoms.last().map(|(v, _)| *v).unwrap_or(0.0)
            }
            DisorderLaw::Gaussian { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
        }
    }
}

/// Initial law ζ, with both a sampler and (on the circle) a density.
#[derive(Clone, Debug)]
pub enum InitialLaw {
    UniformCircle,
    Dirac(f64),
    /// p(θ) = (1 + cos θ)/(2π) on the circle.
    TiltedCosine,
    GaussianLine { mean: f64, sd: f64 },
}

impl InitialLaw {
    pub fn sample<R: Rng>(&self, space: StateSpace, rng: &mut R) -> f64 {
        match self {
            InitialLaw::UniformCircle => rng.random::<f64>() * TAU,
            InitialLaw::Dirac(v) => space.wrap(*v),
            InitialLaw::TiltedCosine => loop {
                // rejection under the flat envelope 2/(2π)
                let theta = rng.random::<f64>() * TAU;
                let u: f64 = rng.random();
                if 2.0 * u <= 1.0 + theta.cos() {
                    break theta;
                }
            },
            InitialLaw::GaussianLine { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
        }
    }

    /// Density on the circle (probability per radian).
    pub fn circle_density(&self, theta: f64) -> Result<f64> {
        match self {
            InitialLaw::UniformCircle => Ok(1.0 / TAU),
            InitialLaw::TiltedCosine => Ok((1.0 + theta.cos()) / TAU),
            _ => Err(FluctError::InvalidParameter(
                "initial law has no circle density".into(),
            )),
        }
    }
}

/// Full model specification; immutable and shareable across workers.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub state_space: StateSpace,
    /// Local drift c(θ, ω).
    pub drift: Fn2,
    /// Interaction Γ(θ, ω, θ̃, ω̃).
    pub gamma: Fn4,
    /// Optional separable decomposition of Γ.
    pub gamma_separable: Option<Vec<SeparablePair>>,
    /// Recorded sup |Γ|.
    pub gamma_bound: f64,
    pub noise_sigma: f64,
    pub disorder: DisorderLaw,
    pub initial: InitialLaw,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("state_space", &self.state_space)
            .field("gamma_bound", &self.gamma_bound)
            .field("noise_sigma", &self.noise_sigma)
            .field("disorder", &self.disorder)
            .field("initial", &self.initial)
            .finish()
    }
}

impl ModelSpec {
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_state_space(mut self, space: StateSpace) -> Self {
        self.state_space = space;
        self
    }

    pub fn with_initial(mut self, initial: InitialLaw) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_disorder(mut self, disorder: DisorderLaw) -> Self {
        self.disorder = disorder;
        self
    }

    /// True when Γ vanishes identically (free diffusions).
    pub fn interaction_free(&self) -> bool {
        self.gamma_bound == 0.0
    }
}

/// Spatial Kuramoto model: drift c(θ,ω) = ω, Γ = K·sin(θ̃ − θ), σ-noise,
/// with the rank-2 separable form [(K cos θ, sin θ̃), (−K sin θ, cos θ̃)].
pub fn build_kuramoto(
    coupling: f64,
    sigma: f64,
    disorder: DisorderLaw,
    initial: InitialLaw,
) -> ModelSpec {
    let k = coupling;
    ModelSpec {
        name: "kuramoto".into(),
        state_space: StateSpace::Circle,
        drift: Arc::new(|_, omega| omega),
        gamma: Arc::new(move |theta, _, theta_t, _| k * (theta_t - theta).sin()),
        gamma_separable: Some(vec![
            SeparablePair {
                left: Arc::new(move |theta, _| k * theta.cos()),
                right: Arc::new(|theta_t, _| theta_t.sin()),
            },
            SeparablePair {
                left: Arc::new(move |theta, _| -k * theta.sin()),
                right: Arc::new(|theta_t, _| theta_t.cos()),
            },
        ]),
        gamma_bound: k.abs(),
        noise_sigma: sigma,
        disorder,
        initial,
    }
}

/// Probe model: c ≡ 0, Γ ≡ const. Its interaction field reduces to the
/// Riemann sum of Ψ, with the mean-field limit 2^α/(1−α) per unit Γ.
pub fn build_probe(gamma_const: f64) -> ModelSpec {
    let g = gamma_const;
    ModelSpec {
        name: "probe".into(),
        state_space: StateSpace::Circle,
        drift: Arc::new(|_, _| 0.0),
        gamma: Arc::new(move |_, _, _, _| g),
        gamma_separable: Some(vec![SeparablePair {
            left: Arc::new(move |_, _| g),
            right: Arc::new(|_, _| 1.0),
        }]),
        gamma_bound: g.abs(),
        noise_sigma: 1.0,
        disorder: DisorderLaw::dirac(0.0),
        initial: InitialLaw::UniformCircle,
    }
}

/// Free diffusions: c ≡ 0, Γ ≡ 0, unit noise.
pub fn build_free(sigma: f64) -> ModelSpec {
    build_probe(0.0).with_sigma(sigma)
}

/// i.i.d. draws of (θ_0, ω) for `count` particles; θ reduced to the state
/// space's fundamental domain; deterministic given the generator state.
pub fn sample_populations<R: Rng>(
    model: &ModelSpec,
    count: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if count == 0 {
        return Err(FluctError::InvalidParameter("count must be >= 1".into()));
    }
    let mut thetas = Vec::with_capacity(count);
    let mut omegas = Vec::with_capacity(count);
    for _ in 0..count {
        thetas.push(model.state_space.wrap(model.initial.sample(model.state_space, rng)));
        omegas.push(model.disorder.sample(rng));
    }
    Ok((thetas, omegas))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn kuramoto_pointwise() {
        let m = build_kuramoto(1.0, 0.2, DisorderLaw::dirac(0.0), InitialLaw::UniformCircle);
        assert_abs_diff_eq!((m.drift)(1.3, 0.7), 0.7);
        assert_abs_diff_eq!((m.gamma)(0.0, 0.0, FRAC_PI_2, 0.0), 1.0, epsilon = 1e-15);
        for theta in [0.0, 1.0, PI, 5.0] {
            assert_abs_diff_eq!((m.gamma)(theta, 0.0, theta, 0.0), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn kuramoto_antisymmetric_and_bounded() {
        let m = build_kuramoto(1.7, 0.0, DisorderLaw::dirac(0.0), InitialLaw::UniformCircle);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a = rng.random::<f64>() * TAU;
            let b = rng.random::<f64>() * TAU;
            assert_abs_diff_eq!(
                (m.gamma)(a, 0.0, b, 0.0),
                -(m.gamma)(b, 0.0, a, 0.0),
                epsilon = 1e-12
            );
            assert!((m.gamma)(a, 0.0, b, 0.0).abs() <= m.gamma_bound + 1e-12);
        }
    }

    #[test]
    fn probe_pointwise() {
        let m = build_probe(1.0);
        assert_abs_diff_eq!((m.gamma)(0.3, -2.0, 5.0, 7.0), 1.0);
        assert_abs_diff_eq!((m.drift)(0.3, -2.0), 0.0);
    }

    #[test]
    fn separable_reconstruction() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for model in [
            build_kuramoto(0.8, 0.1, DisorderLaw::dirac(0.0), InitialLaw::UniformCircle),
            build_probe(2.5),
        ] {
            let pairs = model.gamma_separable.as_ref().unwrap();
            for _ in 0..10_000 {
                let (a, wa) = (rng.random::<f64>() * TAU, rng.random::<f64>() - 0.5);
                let (b, wb) = (rng.random::<f64>() * TAU, rng.random::<f64>() - 0.5);
                let full = (model.gamma)(a, wa, b, wb);
                let split: f64 = pairs.iter().map(|p| (p.left)(a, wa) * (p.right)(b, wb)).sum();
                assert_abs_diff_eq!(full, split, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sampling_contracts() {
        let m = build_kuramoto(1.0, 0.5, DisorderLaw::dirac(0.0), InitialLaw::UniformCircle);
        let count = 100_000;
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let (thetas, omegas) = sample_populations(&m, count, &mut rng).unwrap();
        assert!(omegas.iter().all(|&w| w == 0.0));
        assert!(thetas.iter().all(|&t| (0.0..TAU).contains(&t)));
        let mean_sin: f64 = thetas.iter().map(|t| t.sin()).sum::<f64>() / count as f64;
        assert!(mean_sin.abs() < 3.0 / (count as f64).sqrt());

        let mut rng_a = ChaCha12Rng::seed_from_u64(99);
        let mut rng_b = ChaCha12Rng::seed_from_u64(99);
        let a = sample_populations(&m, 500, &mut rng_a).unwrap();
        let b = sample_populations(&m, 500, &mut rng_b).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);

        assert!(sample_populations(&m, 0, &mut rng).is_err());
    }

    #[test]
    fn disorder_law_validation() {
        assert!(DisorderLaw::Atoms(vec![(0.0, 0.6), (1.0, 0.4)]).validate().is_ok());
        assert!(DisorderLaw::Atoms(vec![(0.0, 0.6), (1.0, 0.3)]).validate().is_err());
        assert!(DisorderLaw::Atoms(vec![]).validate().is_err());
    }

    #[test]
    fn tilted_cosine_sampler_matches_density() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let n = 200_000;
        let mut mean_cos = 0.0;
        for _ in 0..n {
            mean_cos += InitialLaw::TiltedCosine.sample(StateSpace::Circle, &mut rng).cos();
        }
        mean_cos /= n as f64;
        // ∫cosθ(1+cosθ)/(2π) dθ = 1/2
        assert!((mean_cos - 0.5).abs() < 3.0 / (n as f64).sqrt() + 1e-3);
    }
}
