//! Euler–Maruyama integration of the N-particle system.
//!
//! Per step, with ξ_i i.i.d. standard normal:
//!   θ_i ← θ_i + [c(θ_i, ω_i) + field_i]·dt + σ·√dt·ξ_i
//! where field_i = (1/|Λ_N|)·Σ_j Γ(θ_i, ω_i, θ_j, ω_j)·Ψ(x_i, x_j). A coupled
//! nonlinear copy θ̄_i advances with the mean-field coupling in place of the
//! pair sum, sharing the same ξ_i (common random numbers). The martingale
//! accumulators collect (a_N/|Λ_N|)·Σ_i ∂_θ f(θ_i, ω_i, x_i)·σ·√dt·ξ_i.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::convolve::{ConvolveMethod, FAST_THRESHOLD};
use crate::error::{FluctError, Result};
use crate::fluct::scaling_a_n;
use crate::lattice::Lattice;
use crate::meanfield::CouplingSolution;
use crate::model::{sample_populations, ModelSpec, StateSpace};
use crate::rng::rng_from_seed;
use crate::testfn::TestFn1;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub record_stride: usize,
    pub method: ConvolveMethod,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 1.0,
            seed: 0,
            record_stride: 1,
            method: ConvolveMethod::Auto,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 || self.t_end <= 0.0 || self.dt > self.t_end {
            return Err(FluctError::InvalidParameter(
                "need 0 < dt <= t_end".into(),
            ));
        }
        if self.record_stride == 0
            || self.record_stride as f64 * self.dt > self.t_end + 1e-12
        {
            return Err(FluctError::InvalidParameter(
                "need 1 <= record_stride and record_stride*dt <= t_end".into(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Positions, angles, disorder and accumulators of one particle system.
#[derive(Debug, Clone)]
pub struct ParticleState {
    pub time: f64,
    pub lattice: Arc<Lattice>,
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
    /// Coupled nonlinear copies, present in coupled runs.
    pub theta_bar: Option<Vec<f64>>,
    pub mart_eta: BTreeMap<String, f64>,
    pub mart_h: BTreeMap<String, f64>,
}

impl ParticleState {
    pub fn from_parts(lattice: Arc<Lattice>, theta: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        if theta.len() != lattice.size() || omega.len() != lattice.size() {
            return Err(FluctError::LengthMismatch {
                expected: lattice.size(),
                got: theta.len().min(omega.len()),
            });
        }
        Ok(Self {
            time: 0.0,
            lattice,
            theta,
            omega,
            theta_bar: None,
            mart_eta: BTreeMap::new(),
            mart_h: BTreeMap::new(),
        })
    }

    /// i.i.d. initial data drawn from the model's ζ and μ.
    pub fn sample(model: &ModelSpec, lattice: Arc<Lattice>, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let (theta, omega) = sample_populations(model, lattice.size(), &mut rng)?;
        Self::from_parts(lattice, theta, omega)
    }
}

/// Interaction field entry i = (1/|Λ_N|)·Σ_j Γ(θ_i, ω_i, θ_j, ω_j)·Ψ(x_i, x_j).
pub fn interaction_field(
    state: &ParticleState,
    model: &ModelSpec,
    method: ConvolveMethod,
) -> Result<Vec<f64>> {
    let size = state.lattice.size();
    if model.interaction_free() {
        return Ok(vec![0.0; size]);
    }
    let use_fast = match method {
        ConvolveMethod::Direct => false,
        ConvolveMethod::Fast => {
            if model.gamma_separable.is_none() {
                return Err(FluctError::SeparableRequired(
                    "fast interaction needs a separable Γ".into(),
                ));
            }
            true
        }
        ConvolveMethod::Auto => model.gamma_separable.is_some() && size >= FAST_THRESHOLD,
    };
    let mut field = vec![0.0; size];
    if use_fast {
        let pairs = model.gamma_separable.as_ref().unwrap();
        let conv = state.lattice.convolver();
        let mut buf_a = vec![0.0; size];
        let mut buf_b = vec![0.0; size];
        let mut r = 0;
        while r < pairs.len() {
            for i in 0..size {
                buf_a[i] = (pairs[r].right)(state.theta[i], state.omega[i]);
            }
            if r + 1 < pairs.len() {
                for i in 0..size {
                    buf_b[i] = (pairs[r + 1].right)(state.theta[i], state.omega[i]);
                }
                let (ca, cb) = conv.convolve_pair(&buf_a, &buf_b);
                for i in 0..size {
                    field[i] += (pairs[r].left)(state.theta[i], state.omega[i]) * ca[i]
                        + (pairs[r + 1].left)(state.theta[i], state.omega[i]) * cb[i];
                }
                r += 2;
            } else {
                let ca = conv.convolve(&buf_a);
                for i in 0..size {
                    field[i] += (pairs[r].left)(state.theta[i], state.omega[i]) * ca[i];
                }
                r += 1;
            }
        }
        for f in field.iter_mut() {
            *f /= size as f64;
        }
    } else {
        for i in 0..size {
            let mut acc = 0.0;
            for j in 0..size {
                if j == i {
                    continue;
                }
                acc += (model.gamma)(state.theta[i], state.omega[i], state.theta[j], state.omega[j])
                    * state.lattice.weight(i, j);
            }
            field[i] = acc / size as f64;
        }
    }
    Ok(field)
}

/// One Euler–Maruyama step drawing its own noise; the heavy loops live in
/// [`Simulation::run`], this is the standalone-op form.
pub fn em_step<R: Rng>(
    state: &mut ParticleState,
    model: &ModelSpec,
    dt: f64,
    rng: &mut R,
) -> Result<()> {
    let size = state.lattice.size();
    let noise: Vec<f64> = (0..size).map(|_| rng.sample(StandardNormal)).collect();
    em_step_with_noise(state, model, dt, &noise, None)
}

/// Euler–Maruyama step with injected standard-normal increments.
pub fn em_step_with_noise(
    state: &mut ParticleState,
    model: &ModelSpec,
    dt: f64,
    noise: &[f64],
    coupling: Option<&CouplingSolution>,
) -> Result<()> {
    if dt <= 0.0 {
        return Err(FluctError::InvalidParameter("dt must be > 0".into()));
    }
    let size = state.lattice.size();
    if noise.len() != size {
        return Err(FluctError::LengthMismatch {
            expected: size,
            got: noise.len(),
        });
    }
    let field = interaction_field(state, model, ConvolveMethod::Auto)?;
    let sig_dt = model.noise_sigma * dt.sqrt();
    let space = model.state_space;
    if let Some(bars) = &mut state.theta_bar {
        let solution = coupling.ok_or_else(|| {
            FluctError::InvalidParameter("coupled state but no coupling solution".into())
        })?;
        let bar_field = solution.field_at(state.time)?;
        for i in 0..size {
            let drift = (model.drift)(bars[i], state.omega[i]) + bar_field.eval(bars[i], state.omega[i]);
            bars[i] = space.wrap(bars[i] + drift * dt + sig_dt * noise[i]);
        }
    }
    for i in 0..size {
        let drift = (model.drift)(state.theta[i], state.omega[i]) + field[i];
        state.theta[i] = space.wrap(state.theta[i] + drift * dt + sig_dt * noise[i]);
    }
    state.time += dt;
    Ok(())
}

/// Pre-drawn standard normals: rows[step][particle]. A run with dt = k·dt_base
/// consumes k rows per step as (Σ rows)/√k, so refined and coarse integrations
/// share one Brownian path.
#[derive(Debug, Clone)]
pub struct NoiseTable {
    pub rows: Vec<Vec<f64>>,
}

impl NoiseTable {
    pub fn generate(steps: usize, count: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let rows = (0..steps)
            .map(|_| (0..count).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        Self { rows }
    }
}

#[derive(Debug, Clone)]
pub enum InitMode {
    /// Draw from the model laws with the run seed.
    Sample,
    Given { theta: Vec<f64>, omega: Vec<f64> },
}

/// Time series of one run; `values[k][j]` is ⟨ν_N, f_j⟩ at `times[k]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub observable_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Martingale accumulators M^(η) f_j at record times.
    pub mart_eta: Vec<Vec<f64>>,
    /// Kuramoto order parameter |mean e^(iθ)| at record times.
    pub order_param: Vec<f64>,
    /// max_i dist(θ_i, θ̄_i) at record times (coupled runs only).
    pub coupling_error: Vec<f64>,
    /// Running sup over all steps of the max-over-particles error.
    pub coupling_sup: f64,
    /// Running sup of the particle-averaged error; free of the extreme-value
    /// log factor, so ladder exponents read off cleanly.
    pub coupling_avg_sup: f64,
    /// Full angle snapshots at record times when requested.
    pub thetas: Vec<Vec<f64>>,
    pub final_state: ParticleState,
}

impl Trajectory {
    pub fn observable_index(&self, id: &str) -> Option<usize> {
        self.observable_ids.iter().position(|o| o == id)
    }

    pub fn series(&self, id: &str) -> Option<Vec<f64>> {
        let idx = self.observable_index(id)?;
        Some(self.values.iter().map(|row| row[idx]).collect())
    }
}

/// A configured run; `run()` draws noise from the seed, `run_with_noise`
/// consumes a shared table.
pub struct Simulation {
    pub model: Arc<ModelSpec>,
    pub lattice: Arc<Lattice>,
    pub config: SimConfig,
    pub observables: Vec<TestFn1>,
    pub init: InitMode,
    pub coupling: Option<Arc<CouplingSolution>>,
    pub record_states: bool,
}

impl Simulation {
    pub fn new(model: Arc<ModelSpec>, lattice: Arc<Lattice>, config: SimConfig) -> Self {
        Self {
            model,
            lattice,
            config,
            observables: Vec::new(),
            init: InitMode::Sample,
            coupling: None,
            record_states: false,
        }
    }

    pub fn with_observables(mut self, observables: Vec<TestFn1>) -> Self {
        self.observables = observables;
        self
    }

    pub fn with_init(mut self, init: InitMode) -> Self {
        self.init = init;
        self
    }

    pub fn with_coupling(mut self, coupling: Arc<CouplingSolution>) -> Self {
        self.coupling = Some(coupling);
        self
    }

    pub fn recording_states(mut self) -> Self {
        self.record_states = true;
        self
    }

    pub fn run(&self) -> Result<Trajectory> {
        self.execute(None)
    }

    pub fn run_with_noise(&self, table: &NoiseTable) -> Result<Trajectory> {
        self.execute(Some(table))
    }

    fn execute(&self, table: Option<&NoiseTable>) -> Result<Trajectory> {
        self.config.validate()?;
        let size = self.lattice.size();
        let steps = self.config.steps();
        if (steps as f64 * self.config.dt - self.config.t_end).abs() > 1e-9 {
            return Err(FluctError::InvalidParameter(format!(
                "t_end = {} is not an integer multiple of dt = {}",
                self.config.t_end, self.config.dt
            )));
        }
        if let Some(t) = table {
            let need = steps * self.aggregation(t)?;
            if t.rows.len() < need || t.rows.iter().any(|r| r.len() != size) {
                return Err(FluctError::InvalidParameter(
                    "noise table too short or wrong width".into(),
                ));
            }
        }
        if let Some(sol) = &self.coupling {
            if sol.t_end() + 1e-9 < self.config.t_end {
                return Err(FluctError::TimeRange {
                    requested: self.config.t_end,
                    available: sol.t_end(),
                });
            }
        }

        let mut state = match &self.init {
            InitMode::Sample => {
                ParticleState::sample(&self.model, self.lattice.clone(), self.config.seed)?
            }
            InitMode::Given { theta, omega } => ParticleState::from_parts(
                self.lattice.clone(),
                theta.clone(),
                omega.clone(),
            )?,
        };
        if self.coupling.is_some() {
            state.theta_bar = Some(state.theta.clone());
        }
        for f in &self.observables {
            state.mart_eta.insert(f.id.clone(), 0.0);
        }

        let alpha = self.lattice.alpha();
        let a_n = scaling_a_n(self.lattice.n_half(), alpha);
        let sigma = self.model.noise_sigma;
        let sqrt_dt = self.config.dt.sqrt();
        let space = self.model.state_space;
        // separate stream from the initial-condition sampler
        let mut rng = rng_from_seed(crate::rng::splitmix64(!self.config.seed));
        let mut noise = vec![0.0; size];
        let agg = table.map(|t| self.aggregation(t)).transpose()?.unwrap_or(1);

        let mut traj = Trajectory {
            times: Vec::new(),
            observable_ids: self.observables.iter().map(|f| f.id.clone()).collect(),
            values: Vec::new(),
            mart_eta: Vec::new(),
            order_param: Vec::new(),
            coupling_error: Vec::new(),
            coupling_sup: 0.0,
            coupling_avg_sup: 0.0,
            thetas: Vec::new(),
            final_state: state.clone(),
        };
        self.record(&mut traj, &state, space)?;
        self.track_coupling(&mut traj, &state, space);

        for step in 0..steps {
            match table {
                Some(t) => {
                    let norm = 1.0 / (agg as f64).sqrt();
                    for i in 0..size {
                        let mut acc = 0.0;
                        for sub in 0..agg {
                            acc += t.rows[step * agg + sub][i];
                        }
                        noise[i] = acc * norm;
                    }
                }
                None => {
                    for n in noise.iter_mut() {
                        *n = rng.sample(StandardNormal);
                    }
                }
            }
            // accumulate martingales at the left endpoint, before the move
            let mart_scale = a_n / size as f64 * sigma * sqrt_dt;
            for f in &self.observables {
                let mut acc = 0.0;
                for i in 0..size {
                    acc += f.grad_theta(state.theta[i], state.omega[i], self.lattice.positions()[i])
                        * noise[i];
                }
                *state.mart_eta.get_mut(&f.id).unwrap() += mart_scale * acc;
            }
            em_step_with_noise(
                &mut state,
                &self.model,
                self.config.dt,
                &noise,
                self.coupling.as_deref(),
            )?;
            self.track_coupling(&mut traj, &state, space);
            if (step + 1) % self.config.record_stride == 0 || step + 1 == steps {
                self.record(&mut traj, &state, space)?;
            }
        }
        traj.final_state = state;
        Ok(traj)
    }

    /// Updates the running coupling-error suprema (every step, independent of
    /// the record stride).
    fn track_coupling(&self, traj: &mut Trajectory, state: &ParticleState, space: StateSpace) {
        if let Some(bars) = &state.theta_bar {
            let mut max_err = 0.0f64;
            let mut sum_err = 0.0f64;
            for (&a, &b) in state.theta.iter().zip(bars.iter()) {
                let d = space.distance(a, b);
                max_err = max_err.max(d);
                sum_err += d;
            }
            traj.coupling_sup = traj.coupling_sup.max(max_err);
            traj.coupling_avg_sup = traj
                .coupling_avg_sup
                .max(sum_err / state.theta.len() as f64);
        }
    }

    /// Number of table rows one macro step consumes.
    fn aggregation(&self, table: &NoiseTable) -> Result<usize> {
        let steps = self.config.steps();
        if table.rows.len() % steps != 0 {
            return Err(FluctError::InvalidParameter(format!(
                "noise table rows {} not a multiple of steps {steps}",
                table.rows.len()
            )));
        }
        Ok(table.rows.len() / steps)
    }

    fn record(&self, traj: &mut Trajectory, state: &ParticleState, space: StateSpace) -> Result<()> {
        let size = state.theta.len();
        traj.times.push(state.time);
        let positions = self.lattice.positions();
        let row: Vec<f64> = self
            .observables
            .iter()
            .map(|f| {
                state
                    .theta
                    .iter()
                    .zip(state.omega.iter())
                    .zip(positions.iter())
                    .map(|((&t, &w), &x)| f.eval(t, w, x))
                    .sum::<f64>()
                    / size as f64
            })
            .collect();
        traj.values.push(row);
        traj.mart_eta.push(
            self.observables
                .iter()
                .map(|f| state.mart_eta[&f.id])
                .collect(),
        );
        let (mut re, mut im) = (0.0, 0.0);
        for &t in &state.theta {
            re += t.cos();
            im += t.sin();
        }
        traj.order_param
            .push((re * re + im * im).sqrt() / size as f64);
        if let Some(bars) = &state.theta_bar {
            let err = state
                .theta
                .iter()
                .zip(bars.iter())
                .map(|(&a, &b)| space.distance(a, b))
                .fold(0.0, f64::max);
            traj.coupling_error.push(err);
        }
        if self.record_states {
            traj.thetas.push(state.theta.clone());
        }
        Ok(())
    }
}

/// Coupled run: evolves (θ, θ̄) jointly under shared noise and reports the
/// coupling error max_i dist(θ_i, θ̄_i) along the way.
pub fn simulate_coupled(
    model: Arc<ModelSpec>,
    lattice: Arc<Lattice>,
    config: SimConfig,
    coupling: Arc<CouplingSolution>,
) -> Result<Trajectory> {
    Simulation::new(model, lattice, config)
        .with_coupling(coupling)
        .run()
}
