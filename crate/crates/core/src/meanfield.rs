//! Mean-field limit on a θ-grid with finite disorder support.
//!
//! The limit measure factorizes as ν_t = ξ_t ⊗ dx, so the spatial variable is
//! integrated out analytically: the pair interaction enters only through the
//! x-independent coupling field (2^α/(1−α))·[Γ, ξ_t]. The solver advances the
//! conditional densities p_t(θ, ω) with a conservative finite-volume scheme
//! (upwind flux plus explicit diffusion) on the circle.

use std::f64::consts::TAU;

use crate::error::{FluctError, Result};
use crate::lattice::integral_psi;
use crate::model::{Fn2, InitialLaw, ModelSpec};
use crate::testfn::TestFn1;

/// Discretized ξ_t: cell-averaged conditional densities per disorder atom.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    /// Number of θ-cells on [0, 2π).
    pub cells: usize,
    /// Disorder atoms (value, probability).
    pub atoms: Vec<(f64, f64)>,
    /// values[a][m] = p_t(θ_m, ω_a), probability per radian conditional on ω_a.
    pub values: Vec<Vec<f64>>,
    pub time: f64,
}

impl DensityGrid {
    pub fn cell_width(&self) -> f64 {
        TAU / self.cells as f64
    }

    /// Center of cell m.
    pub fn theta_center(&self, m: usize) -> f64 {
        (m as f64 + 0.5) * self.cell_width()
    }

    /// Grid loaded from an initial law with a circle density.
    pub fn from_initial(law: &InitialLaw, atoms: Vec<(f64, f64)>, cells: usize) -> Result<Self> {
        if cells < 2 {
            return Err(FluctError::InvalidParameter("need at least 2 cells".into()));
        }
        let width = TAU / cells as f64;
        let mut row = Vec::with_capacity(cells);
        for m in 0..cells {
            row.push(law.circle_density((m as f64 + 0.5) * width)?);
        }
        let values = vec![row; atoms.len()];
        let grid = Self {
            cells,
            atoms,
            values,
            time: 0.0,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn uniform(atoms: Vec<(f64, f64)>, cells: usize) -> Result<Self> {
        Self::from_initial(&InitialLaw::UniformCircle, atoms, cells)
    }

    /// Conditional mass Σ p·Δθ for one atom.
    pub fn mass(&self, atom: usize) -> f64 {
        self.values[atom].iter().sum::<f64>() * self.cell_width()
    }

    /// Checks conditional masses (1 within 1e−8) and positivity.
    pub fn validate(&self) -> Result<()> {
        for a in 0..self.atoms.len() {
            let mass = self.mass(a);
            if (mass - 1.0).abs() > 1e-8 {
                return Err(FluctError::Numeric(format!(
                    "conditional mass {mass} departs from 1 at atom {a}"
                )));
            }
            if self.values[a].iter().any(|&p| p < 0.0) {
                return Err(FluctError::Numeric(format!("negative density at atom {a}")));
            }
        }
        Ok(())
    }

    /// Index of the disorder atom nearest to ω.
    pub fn atom_index(&self, omega: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (i, (v, _)) in self.atoms.iter().enumerate() {
            let d = (v - omega).abs();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        best
    }
}

/// ⟨ξ_t, h⟩ by midpoint quadrature over cells and the atom weights.
pub fn expect_xi(grid: &DensityGrid, h: impl Fn(f64, f64) -> f64) -> f64 {
    let width = grid.cell_width();
    let mut acc = 0.0;
    for (a, (omega, prob)) in grid.atoms.iter().enumerate() {
        let mut inner = 0.0;
        for m in 0..grid.cells {
            inner += h(grid.theta_center(m), *omega) * grid.values[a][m];
        }
        acc += inner * width * prob;
    }
    acc
}

/// ⟨ν_t, f⟩ = ∫_S ⟨ξ_t, f(·, ·, x)⟩ dx; the x-average of the structured
/// x-parts is exact (1 for constants, 0 for nonzero Fourier modes), matching
/// uniform quadrature over any lattice finer than the mode.
pub fn expect_nu(grid: &DensityGrid, f: &TestFn1) -> f64 {
    let x_mean = f.x_mean();
    if x_mean == 0.0 {
        return 0.0;
    }
    x_mean * expect_xi(grid, |t, w| f.theta_omega(t, w))
}

/// The x-independent coupling field (θ, ω) ↦ (2^α/(1−α))·[Γ, ξ_t](θ, ω).
#[derive(Clone)]
pub enum CouplingField {
    Zero,
    Constant(f64),
    /// Σ_r a_r(θ, ω)·coef_r with coef_r = (2^α/(1−α))·⟨b_r, ξ_t⟩.
    Separable(Vec<(Fn2, f64)>),
    /// Per-atom tabulation on cell centers, periodic-linear in θ.
    Tabulated {
        atoms: Vec<f64>,
        values: Vec<Vec<f64>>,
        cells: usize,
    },
}

impl std::fmt::Debug for CouplingField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CouplingField::Zero => write!(f, "CouplingField::Zero"),
            CouplingField::Constant(c) => write!(f, "CouplingField::Constant({c})"),
            CouplingField::Separable(v) => write!(f, "CouplingField::Separable(rank {})", v.len()),
            CouplingField::Tabulated { atoms, .. } => {
                write!(f, "CouplingField::Tabulated({} atoms)", atoms.len())
            }
        }
    }
}

impl CouplingField {
    pub fn eval(&self, theta: f64, omega: f64) -> f64 {
        match self {
            CouplingField::Zero => 0.0,
            CouplingField::Constant(c) => *c,
            CouplingField::Separable(terms) => {
                terms.iter().map(|(a, coef)| a(theta, omega) * coef).sum()
            }
            CouplingField::Tabulated { atoms, values, cells } => {
                let mut best = 0;
                let mut dist = f64::INFINITY;
                for (i, v) in atoms.iter().enumerate() {
                    let d = (v - omega).abs();
                    if d < dist {
                        dist = d;
                        best = i;
                    }
                }
                let width = TAU / *cells as f64;
                // cell centers at (m + 1/2)·Δθ
                let pos = (theta.rem_euclid(TAU) / width - 0.5).rem_euclid(*cells as f64);
                let m0 = pos.floor() as usize % cells;
                let m1 = (m0 + 1) % cells;
                let frac = pos - pos.floor();
                values[best][m0] * (1.0 - frac) + values[best][m1] * frac
            }
        }
    }
}

/// Builds the coupling field of a density snapshot.
///
/// Separable interactions reduce to one ξ_t-moment per rank; the general path
/// tabulates (2^α/(1−α))·ΣΣ Γ(θ, ω, θ̃, ω̃)·p·Δθ·prob on the grid.
pub fn coupling_field(grid: &DensityGrid, model: &ModelSpec, alpha: f64) -> CouplingField {
    let scale = integral_psi(alpha);
    if model.interaction_free() {
        return CouplingField::Zero;
    }
    if let Some(pairs) = &model.gamma_separable {
        let terms: Vec<(Fn2, f64)> = pairs
            .iter()
            .map(|pair| {
                let moment = expect_xi(grid, |t, w| (pair.right)(t, w));
                (pair.left.clone(), scale * moment)
            })
            .collect();
        return CouplingField::Separable(terms);
    }
    let atoms: Vec<f64> = grid.atoms.iter().map(|(v, _)| *v).collect();
    let values: Vec<Vec<f64>> = atoms
        .iter()
        .map(|&omega| {
            (0..grid.cells)
                .map(|m| {
                    let theta = grid.theta_center(m);
                    scale * expect_xi(grid, |tt, wt| (model.gamma)(theta, omega, tt, wt))
                })
                .collect()
        })
        .collect();
    CouplingField::Tabulated {
        atoms,
        values,
        cells: grid.cells,
    }
}

/// Time-indexed density snapshots for one spatial exponent α.
#[derive(Debug, Clone)]
pub struct DensityPath {
    pub alpha: f64,
    pub times: Vec<f64>,
    pub grids: Vec<DensityGrid>,
}

impl DensityPath {
    /// A stationary path: the same grid for all of [0, t_end].
    pub fn stationary(grid: DensityGrid, t_end: f64, alpha: f64) -> Self {
        let mut g1 = grid.clone();
        g1.time = t_end;
        Self {
            alpha,
            times: vec![0.0, t_end],
            grids: vec![grid, g1],
        }
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// Snapshot in force at time t (piecewise-constant from the left).
    pub fn grid_at(&self, t: f64) -> Result<&DensityGrid> {
        if self.times.is_empty() || t > self.t_end() + 1e-12 || t < -1e-12 {
            return Err(FluctError::TimeRange {
                requested: t,
                available: self.t_end(),
            });
        }
        let idx = match self
            .times
            .binary_search_by(|probe| probe.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        Ok(&self.grids[idx.min(self.grids.len() - 1)])
    }
}

/// Piecewise-constant-in-time coupling field handed to the coupled simulator.
pub struct CouplingSolution {
    pub times: Vec<f64>,
    pub fields: Vec<CouplingField>,
}

impl CouplingSolution {
    pub fn zero(t_end: f64) -> Self {
        Self {
            times: vec![0.0, t_end],
            fields: vec![CouplingField::Zero, CouplingField::Zero],
        }
    }

    pub fn constant(value: f64, t_end: f64) -> Self {
        Self {
            times: vec![0.0, t_end],
            fields: vec![CouplingField::Constant(value), CouplingField::Constant(value)],
        }
    }

    pub fn from_path(path: &DensityPath, model: &ModelSpec) -> Self {
        Self {
            times: path.times.clone(),
            fields: path
                .grids
                .iter()
                .map(|g| coupling_field(g, model, path.alpha))
                .collect(),
        }
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn field_at(&self, t: f64) -> Result<&CouplingField> {
        if self.times.is_empty() || t > self.t_end() + 1e-9 {
            return Err(FluctError::TimeRange {
                requested: t,
                available: self.t_end(),
            });
        }
        let idx = match self
            .times
            .binary_search_by(|probe| probe.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        Ok(&self.fields[idx.min(self.fields.len() - 1)])
    }
}

/// Advances ∂_t p = (σ²/2)∂²_θ p − ∂_θ(p·(c + field)) to `t_end`, recording
/// every `record_stride` steps (plus the initial and final states).
///
/// The CFL guard dt ≤ min(Δθ²/σ², Δθ/max|v|)/2 is enforced each step against
/// the current field; violations report the admissible dt.
pub fn solve_density(
    model: &ModelSpec,
    alpha: f64,
    grid0: &DensityGrid,
    dt: f64,
    t_end: f64,
    record_stride: usize,
) -> Result<DensityPath> {
    if dt <= 0.0 || t_end <= 0.0 || dt > t_end {
        return Err(FluctError::InvalidParameter(
            "need 0 < dt <= t_end".into(),
        ));
    }
    if record_stride == 0 {
        return Err(FluctError::InvalidParameter("record_stride must be >= 1".into()));
    }
    grid0.validate()?;
    let cells = grid0.cells;
    let n_atoms = grid0.atoms.len();
    let width = grid0.cell_width();
    let sigma2 = model.noise_sigma * model.noise_sigma;
    let diffusion = sigma2 / 2.0;
    let steps = (t_end / dt).round() as usize;
    if (steps as f64 * dt - t_end).abs() > 1e-9 {
        return Err(FluctError::InvalidParameter(format!(
            "t_end = {t_end} is not an integer multiple of dt = {dt}"
        )));
    }

    let mut grid = grid0.clone();
    grid.time = 0.0;
    let mut path = DensityPath {
        alpha,
        times: vec![0.0],
        grids: vec![grid.clone()],
    };

    let mut flux = vec![0.0f64; cells];
    for step in 0..steps {
        let field = coupling_field(&grid, model, alpha);
        // interface velocities and CFL
        let mut vmax = 0.0f64;
        for a in 0..n_atoms {
            let omega = grid.atoms[a].0;
            for m in 0..cells {
                // interface between cells m and m+1 sits at (m+1)·Δθ
                let theta_if = (m as f64 + 1.0) * width;
                let v = (model.drift)(theta_if, omega) + field.eval(theta_if, omega);
                vmax = vmax.max(v.abs());
                let (pl, pr) = (grid.values[a][m], grid.values[a][(m + 1) % cells]);
                let advect = if v >= 0.0 { v * pl } else { v * pr };
                flux[m] = advect - diffusion * (pr - pl) / width;
            }
            let admissible = 0.5
                * f64::min(
                    if diffusion > 0.0 { width * width / sigma2 } else { f64::INFINITY },
                    if vmax > 0.0 { width / vmax } else { f64::INFINITY },
                );
            if dt > admissible {
                return Err(FluctError::CflViolation { dt, admissible });
            }
            for m in 0..cells {
                let inflow = flux[(m + cells - 1) % cells];
                let outflow = flux[m];
                grid.values[a][m] -= dt / width * (outflow - inflow);
                // CFL keeps the update nonnegative; clip stray −1e−18 roundoff
                if grid.values[a][m] < 0.0 {
                    grid.values[a][m] = 0.0;
                }
            }
        }
        grid.time = (step + 1) as f64 * dt;
        if (step + 1) % record_stride == 0 || step + 1 == steps {
            grid.validate()?;
            path.times.push(grid.time);
            path.grids.push(grid.clone());
        }
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_free, build_kuramoto, build_probe, DisorderLaw};
    use crate::testfn::{ThetaPart, XPart};
    use approx::assert_abs_diff_eq;

    fn dirac_atoms() -> Vec<(f64, f64)> {
        vec![(0.0, 1.0)]
    }

    #[test]
    fn expectations_on_uniform_grid() {
        let grid = DensityGrid::uniform(dirac_atoms(), 128).unwrap();
        assert_abs_diff_eq!(expect_xi(&grid, |_, _| 1.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(expect_xi(&grid, |t, _| t.sin()), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            expect_xi(&grid, |t, _| t.cos() * t.cos()),
            0.5,
            epsilon = 1e-10
        );

        assert_abs_diff_eq!(expect_nu(&grid, &TestFn1::one()), 1.0, epsilon = 1e-12);
        let fx = TestFn1::new("cx", ThetaPart::One, vec![1.0], XPart::Cos(1));
        assert_abs_diff_eq!(expect_nu(&grid, &fx), 0.0, epsilon = 1e-15);
        let fsx = TestFn1::new("sx", ThetaPart::Sin(1), vec![1.0], XPart::Cos(1));
        assert_abs_diff_eq!(expect_nu(&grid, &fsx), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn coupling_field_cases() {
        let grid = DensityGrid::uniform(dirac_atoms(), 256).unwrap();

        let kuramoto = build_kuramoto(
            1.3,
            0.5,
            DisorderLaw::dirac(0.0),
            crate::model::InitialLaw::UniformCircle,
        );
        let field = coupling_field(&grid, &kuramoto, 0.25);
        for theta in [0.0, 1.0, 2.5, 5.0] {
            assert_abs_diff_eq!(field.eval(theta, 0.0), 0.0, epsilon = 1e-10);
        }

        for alpha in [0.0, 0.25, 0.75] {
            let probe = build_probe(1.0);
            let field = coupling_field(&grid, &probe, alpha);
            assert_abs_diff_eq!(field.eval(1.0, 0.0), integral_psi(alpha), epsilon = 1e-12);

            // linearity in Γ
            let probe3 = build_probe(3.0);
            let field3 = coupling_field(&grid, &probe3, alpha);
            assert_abs_diff_eq!(
                field3.eval(0.3, 0.0),
                3.0 * field.eval(0.3, 0.0),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn tabulated_field_matches_separable() {
        let grid = DensityGrid::from_initial(
            &crate::model::InitialLaw::TiltedCosine,
            dirac_atoms(),
            256,
        )
        .unwrap();
        let mut kuramoto = build_kuramoto(
            0.9,
            0.5,
            DisorderLaw::dirac(0.0),
            crate::model::InitialLaw::TiltedCosine,
        );
        let fast = coupling_field(&grid, &kuramoto, 0.3);
        kuramoto.gamma_separable = None;
        let slow = coupling_field(&grid, &kuramoto, 0.3);
        // exact at cell centers; between them the tabulated path interpolates
        for m in [0usize, 31, 100, 255] {
            let theta = grid.theta_center(m);
            assert_abs_diff_eq!(fast.eval(theta, 0.0), slow.eval(theta, 0.0), epsilon = 1e-12);
        }
        for theta in [0.0, 0.7, 3.1, 6.0] {
            assert_abs_diff_eq!(fast.eval(theta, 0.0), slow.eval(theta, 0.0), epsilon = 1e-4);
        }
    }

    #[test]
    fn incoherent_state_is_stationary() {
        let grid0 = DensityGrid::uniform(dirac_atoms(), 128).unwrap();
        let model = build_kuramoto(
            1.0,
            1.0,
            DisorderLaw::dirac(0.0),
            crate::model::InitialLaw::UniformCircle,
        );
        let path = solve_density(&model, 0.25, &grid0, 1e-3, 0.2, 50).unwrap();
        let last = path.grids.last().unwrap();
        let flat = 1.0 / TAU;
        for v in &last.values[0] {
            assert_abs_diff_eq!(*v, flat, epsilon = 1e-9);
        }
    }

    #[test]
    fn heat_mode_decay() {
        let cells = 256;
        let grid0 = DensityGrid::from_initial(
            &crate::model::InitialLaw::TiltedCosine,
            dirac_atoms(),
            cells,
        )
        .unwrap();
        let model = build_free(1.0);
        let path = solve_density(&model, 0.0, &grid0, 2.5e-4, 1.0, 400).unwrap();
        let amp = |g: &DensityGrid| -> f64 {
            let mut acc = 0.0;
            for m in 0..cells {
                acc += g.values[0][m] * g.theta_center(m).cos();
            }
            acc * g.cell_width()
        };
        let ratio = amp(path.grids.last().unwrap()) / amp(&path.grids[0]);
        let exact = (-0.5f64).exp();
        assert!(
            (ratio - exact).abs() / exact < 1e-3,
            "mode-1 decay {ratio} vs {exact}"
        );
        for g in &path.grids {
            assert_abs_diff_eq!(g.mass(0), 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn refinement_halves_heat_error() {
        let model = build_free(1.0);
        let err_at = |cells: usize, dt: f64| -> f64 {
            let grid0 = DensityGrid::from_initial(
                &crate::model::InitialLaw::TiltedCosine,
                dirac_atoms(),
                cells,
            )
            .unwrap();
            let path = solve_density(&model, 0.0, &grid0, dt, 0.5, 10_000).unwrap();
            let g = path.grids.last().unwrap();
            let mut acc = 0.0;
            for m in 0..cells {
                acc += g.values[0][m] * g.theta_center(m).cos();
            }
            // initial mode-1 amplitude is 1/2, so the decayed ratio is 2·amp
            let ratio = 2.0 * acc * g.cell_width();
            (ratio - (-0.25f64).exp()).abs()
        };
        // dt well under the diffusive CFL so the Δθ² term dominates the error
        let coarse = err_at(64, 1e-3);
        let fine = err_at(128, 5e-4);
        assert!(
            coarse / fine >= 2.0,
            "refinement gain {:.2} below 2 (coarse {coarse:.2e}, fine {fine:.2e})",
            coarse / fine
        );
    }

    #[test]
    fn cfl_violation_reported() {
        let grid0 = DensityGrid::uniform(dirac_atoms(), 64).unwrap();
        let model = build_free(1.0);
        let err = solve_density(&model, 0.0, &grid0, 0.05, 1.0, 1).unwrap_err();
        match err {
            FluctError::CflViolation { admissible, .. } => assert!(admissible < 0.05),
            other => panic!("expected CFL violation, got {other}"),
        }
    }

    #[test]
    fn drifted_mass_conserved() {
        // constant drift transports the tilted density around the circle
        let grid0 = DensityGrid::from_initial(
            &crate::model::InitialLaw::TiltedCosine,
            vec![(2.0, 1.0)],
            128,
        )
        .unwrap();
        let model = build_kuramoto(
            0.0,
            0.4,
            DisorderLaw::dirac(2.0),
            crate::model::InitialLaw::TiltedCosine,
        );
        let path = solve_density(&model, 0.5, &grid0, 1e-3, 0.5, 100).unwrap();
        for g in &path.grids {
            assert_abs_diff_eq!(g.mass(0), 1.0, epsilon = 1e-10);
            assert!(g.values[0].iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn path_lookup() {
        let grid = DensityGrid::uniform(dirac_atoms(), 32).unwrap();
        let path = DensityPath::stationary(grid, 1.0, 0.25);
        assert!(path.grid_at(0.5).is_ok());
        assert!(path.grid_at(1.0).is_ok());
        assert!(path.grid_at(1.5).is_err());
    }
}
