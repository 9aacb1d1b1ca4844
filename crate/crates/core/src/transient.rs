//! Time-dependent solver for the coupled transport/switching system
//!
//! ```text
//! ∂t f1 + ∂x((a - b x) f1) = -λ f1 + μ f2
//! ∂t f2 + ∂x((c - d x) f2) =  λ f1 - μ f2
//! ```
//!
//! by operator splitting: first-order upwind finite volumes for each
//! transport equation, then the exact solution of the pointwise 2×2 linear
//! switching system with rates frozen at cell centers. Both sub-steps are
//! stochastic linear maps under CFL ≤ 1, so mass and positivity are kept.

use serde::Serialize;
use thiserror::Error;

use crate::model::{DomainInterval, Model};

/// Relative slack on `CFL ≤ 1` absorbing rounding in `dt = t/n`.
const CFL_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransientError {
    #[error("CFL number {cfl} exceeds 1 (dt = {dt})")]
    CflViolation { cfl: f64, dt: f64 },
    #[error("grid must have at least one cell")]
    EmptyGrid,
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("invalid density field: {0}")]
    InvalidField(String),
    #[error("time step must be finite and non-negative, got {0}")]
    InvalidStep(f64),
    #[error("switching rates must be non-negative on the interval")]
    NegativeRates,
}

/// Uniform grid of `n_cells` cells on the model interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub interval: DomainInterval,
    pub n_cells: usize,
}

impl Grid {
    pub fn new(interval: DomainInterval, n_cells: usize) -> Result<Self, TransientError> {
        if n_cells == 0 {
            return Err(TransientError::EmptyGrid);
        }
        Ok(Self { interval, n_cells })
    }

    pub fn dx(&self) -> f64 {
        self.interval.length() / self.n_cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.interval.left + (i as f64 + 0.5) * self.dx()
    }

    /// Face `j` sits between cells `j - 1` and `j`; the outer faces are the
    /// interval endpoints exactly.
    pub fn face(&self, j: usize) -> f64 {
        if j == 0 {
            self.interval.left
        } else if j == self.n_cells {
            self.interval.right
        } else {
            self.interval.left + j as f64 * self.dx()
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }

    /// Index of the cell containing `x`, with the right endpoint folded
    /// into the last cell.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if !self.interval.contains(x) {
            return None;
        }
        let i = ((x - self.interval.left) / self.dx()).floor() as usize;
        Some(i.min(self.n_cells - 1))
    }
}

/// Initial-data presets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialProfile {
    /// Constant density, mass split evenly between the modes.
    Uniform,
    /// All mass in the cell containing `x`, in one mode (1 or 2).
    Spike { mode: u8, x: f64 },
    /// Gaussian truncated to the interval, split evenly between the modes.
    Gaussian { center: f64, width: f64 },
}

/// Cell averages of `(f1, f2)` at a given time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityField {
    pub grid: Grid,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub time: f64,
}

impl DensityField {
    pub fn new(grid: Grid, f1: Vec<f64>, f2: Vec<f64>) -> Result<Self, TransientError> {
        if f1.len() != grid.n_cells || f2.len() != grid.n_cells {
            return Err(TransientError::InvalidField(format!(
                "expected {} cells, got {} and {}",
                grid.n_cells,
                f1.len(),
                f2.len()
            )));
        }
        if let Some(v) = f1.iter().chain(&f2).find(|v| !v.is_finite() || **v < 0.0) {
            return Err(TransientError::InvalidField(format!(
                "densities must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self {
            grid,
            f1,
            f2,
            time: 0.0,
        })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            f1: vec![0.0; grid.n_cells],
            f2: vec![0.0; grid.n_cells],
            time: 0.0,
        }
    }

    /// Builds a field from cell averages and rescales it to mass 1.
    pub fn from_cell_averages(
        grid: Grid,
        f1: Vec<f64>,
        f2: Vec<f64>,
    ) -> Result<Self, TransientError> {
        let mut field = Self::new(grid, f1, f2)?;
        field.renormalize()?;
        Ok(field)
    }

    pub fn from_profile(grid: Grid, profile: InitialProfile) -> Result<Self, TransientError> {
        let n = grid.n_cells;
        let (f1, f2) = match profile {
            InitialProfile::Uniform => (vec![1.0; n], vec![1.0; n]),
            InitialProfile::Spike { mode, x } => {
                let i = grid.cell_of(x).ok_or_else(|| {
                    TransientError::InvalidField(format!("spike position {x} outside the interval"))
                })?;
                let mut hot = vec![0.0; n];
                hot[i] = 1.0;
                match mode {
                    1 => (hot, vec![0.0; n]),
                    2 => (vec![0.0; n], hot),
                    _ => {
                        return Err(TransientError::InvalidField(format!(
                            "spike mode must be 1 or 2, got {mode}"
                        )))
                    }
                }
            }
            InitialProfile::Gaussian { center, width } => {
                if !(width > 0.0) {
                    return Err(TransientError::InvalidField(format!(
                        "gaussian width must be positive, got {width}"
                    )));
                }
                let g: Vec<f64> = grid
                    .centers()
                    .iter()
                    .map(|&x| (-0.5 * ((x - center) / width).powi(2)).exp())
                    .collect();
                (g.clone(), g)
            }
        };
        Self::from_cell_averages(grid, f1, f2)
    }

    pub fn mass(&self) -> f64 {
        self.grid.dx()
            * self
                .f1
                .iter()
                .zip(&self.f2)
                .map(|(a, b)| a + b)
                .sum::<f64>()
    }

    pub fn mode_mass(&self) -> (f64, f64) {
        let dx = self.grid.dx();
        (
            dx * self.f1.iter().sum::<f64>(),
            dx * self.f2.iter().sum::<f64>(),
        )
    }

    pub fn min_value(&self) -> f64 {
        self.f1
            .iter()
            .chain(&self.f2)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn summed(&self) -> Vec<f64> {
        self.f1.iter().zip(&self.f2).map(|(a, b)| a + b).collect()
    }

    /// Rescales to mass 1 and returns the factor applied.
    pub fn renormalize(&mut self) -> Result<f64, TransientError> {
        let mass = self.mass();
        if !(mass > 0.0) {
            return Err(TransientError::InvalidField("field has zero mass".into()));
        }
        let factor = 1.0 / mass;
        if (factor - 1.0).abs() > 1e-12 {
            log::info!("initial field renormalized by factor {factor}");
        }
        for v in self.f1.iter_mut().chain(self.f2.iter_mut()) {
            *v *= factor;
        }
        Ok(factor)
    }

    /// Averages blocks of `factor` consecutive cells.
    pub fn coarsen(&self, factor: usize) -> Result<Self, TransientError> {
        if factor == 0 || !self.grid.n_cells.is_multiple_of(factor) {
            return Err(TransientError::GridMismatch);
        }
        let grid = Grid::new(self.grid.interval, self.grid.n_cells / factor)?;
        let avg = |v: &[f64]| -> Vec<f64> {
            v.chunks(factor)
                .map(|c| c.iter().sum::<f64>() / factor as f64)
                .collect()
        };
        Ok(Self {
            grid,
            f1: avg(&self.f1),
            f2: avg(&self.f2),
            time: self.time,
        })
    }
}

/// Exact solution operator of `d/dt (f1, f2) = [[-λ, μ], [λ, -μ]] (f1, f2)`
/// over a step `dt` with frozen rates. Columns sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReactionMatrix {
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
}

impl ReactionMatrix {
    pub fn new(lambda: f64, mu: f64, dt: f64) -> Self {
        let r = lambda + mu;
        if r <= 0.0 || dt <= 0.0 {
            return Self::identity();
        }
        // 1 - e^{-r dt} without cancellation for small r dt
        let om = -(-r * dt).exp_m1();
        let m21 = lambda / r * om;
        let m12 = mu / r * om;
        Self {
            m11: 1.0 - m21,
            m12,
            m21,
            m22: 1.0 - m12,
        }
    }

    pub fn identity() -> Self {
        Self {
            m11: 1.0,
            m12: 0.0,
            m21: 0.0,
            m22: 1.0,
        }
    }

    /// Applies the matrix as mass transfers, which keeps `f1 + f2` exact up
    /// to one rounding.
    pub fn apply(&self, f1: f64, f2: f64) -> (f64, f64) {
        let out = self.m21 * f1;
        let back = self.m12 * f2;
        (f1 - out + back, f2 + out - back)
    }

    pub fn mul(&self, o: &Self) -> Self {
        Self {
            m11: self.m11 * o.m11 + self.m12 * o.m21,
            m12: self.m11 * o.m12 + self.m12 * o.m22,
            m21: self.m21 * o.m11 + self.m22 * o.m21,
            m22: self.m21 * o.m12 + self.m22 * o.m22,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    /// Transport then reaction.
    #[default]
    LieTrotter,
    /// Half reaction, transport, half reaction.
    Strang,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DtPolicy {
    /// `dt = safety · Δx / max|v|`, shortened to land on `t_final`.
    Cfl {
        safety: f64,
    },
    Fixed {
        dt: f64,
    },
}

impl Default for DtPolicy {
    fn default() -> Self {
        DtPolicy::Cfl { safety: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    pub time: f64,
    pub dt: f64,
    pub mass: f64,
    pub mass_drift: f64,
    pub min_density: f64,
    pub cfl: f64,
}

/// Splitting solver for a fixed model and grid.
#[derive(Debug, Clone)]
pub struct TransientSolver {
    grid: Grid,
    splitting: Splitting,
    v1_faces: Vec<f64>,
    v2_faces: Vec<f64>,
    lambda_c: Vec<f64>,
    mu_c: Vec<f64>,
    max_speed: f64,
}

impl TransientSolver {
    pub fn new(model: &Model, grid: Grid, splitting: Splitting) -> Result<Self, TransientError> {
        if !model.rates_positive() {
            return Err(TransientError::NegativeRates);
        }
        if grid.interval != model.interval() {
            return Err(TransientError::GridMismatch);
        }
        let faces: Vec<(f64, f64)> = (0..=grid.n_cells)
            .map(|j| model.velocities(grid.face(j)))
            .collect();
        let v1_faces: Vec<f64> = faces.iter().map(|v| v.0).collect();
        let v2_faces: Vec<f64> = faces.iter().map(|v| v.1).collect();
        let centers = grid.centers();
        let max_speed = v1_faces
            .iter()
            .chain(&v2_faces)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self {
            grid,
            splitting,
            v1_faces,
            v2_faces,
            lambda_c: centers.iter().map(|&x| model.lambda(x)).collect(),
            mu_c: centers.iter().map(|&x| model.mu(x)).collect(),
            max_speed,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn splitting(&self) -> Splitting {
        self.splitting
    }

    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    pub fn cfl_number(&self, dt: f64) -> f64 {
        dt * self.max_speed / self.grid.dx()
    }

    /// Largest step with CFL number equal to `safety`.
    pub fn cfl_dt(&self, safety: f64) -> f64 {
        if self.max_speed == 0.0 {
            f64::INFINITY
        } else {
            safety * self.grid.dx() / self.max_speed
        }
    }

    fn check(&self, field: &DensityField, dt: f64) -> Result<f64, TransientError> {
        if field.grid != self.grid {
            return Err(TransientError::GridMismatch);
        }
        if !dt.is_finite() || dt < 0.0 {
            return Err(TransientError::InvalidStep(dt));
        }
        let cfl = self.cfl_number(dt);
        if cfl > 1.0 + CFL_SLACK {
            return Err(TransientError::CflViolation { cfl, dt });
        }
        Ok(cfl)
    }

    /// One upwind step of the two transport equations. Mode 1 moves left
    /// (upwind cell on the right of each face), mode 2 moves right; the
    /// inflow ghosts are zero and the outflow faces have zero speed.
    pub fn transport_step(&self, field: &mut DensityField, dt: f64) -> Result<(), TransientError> {
        self.check(field, dt)?;
        if dt == 0.0 {
            return Ok(());
        }
        let n = self.grid.n_cells;
        let nu = dt / self.grid.dx();

        // face fluxes, positive to the right
        let mut flux = vec![0.0; n + 1];
        for j in 0..n {
            flux[j] = self.v1_faces[j] * field.f1[j];
        }
        flux[0] = 0.0;
        let new_f1: Vec<f64> = (0..n)
            .map(|i| field.f1[i] - nu * (flux[i + 1] - flux[i]))
            .collect();

        flux[0] = 0.0;
        for j in 1..=n {
            flux[j] = self.v2_faces[j] * field.f2[j - 1];
        }
        flux[n] = 0.0;
        let new_f2: Vec<f64> = (0..n)
            .map(|i| field.f2[i] - nu * (flux[i + 1] - flux[i]))
            .collect();

        field.f1 = new_f1;
        field.f2 = new_f2;
        Ok(())
    }

    pub fn reaction_step(&self, field: &mut DensityField, dt: f64) -> Result<(), TransientError> {
        if field.grid != self.grid {
            return Err(TransientError::GridMismatch);
        }
        if !dt.is_finite() || dt < 0.0 {
            return Err(TransientError::InvalidStep(dt));
        }
        for i in 0..self.grid.n_cells {
            let m = ReactionMatrix::new(self.lambda_c[i], self.mu_c[i], dt);
            let (a, b) = m.apply(field.f1[i], field.f2[i]);
            field.f1[i] = a;
            field.f2[i] = b;
        }
        Ok(())
    }

    pub fn step(&self, field: &mut DensityField, dt: f64) -> Result<StepReport, TransientError> {
        let cfl = self.check(field, dt)?;
        let before = field.mass();
        match self.splitting {
            Splitting::LieTrotter => {
                self.transport_step(field, dt)?;
                self.reaction_step(field, dt)?;
            }
            Splitting::Strang => {
                self.reaction_step(field, 0.5 * dt)?;
                self.transport_step(field, dt)?;
                self.reaction_step(field, 0.5 * dt)?;
            }
        }
        field.time += dt;
        let mass = field.mass();
        Ok(StepReport {
            time: field.time,
            dt,
            mass,
            mass_drift: mass - before,
            min_density: field.min_value(),
            cfl,
        })
    }

    /// Advances `field` by `duration`, returning one report per step.
    pub fn evolve(
        &self,
        field: &mut DensityField,
        duration: f64,
        policy: DtPolicy,
    ) -> Result<Vec<StepReport>, TransientError> {
        if !duration.is_finite() || duration < 0.0 {
            return Err(TransientError::InvalidStep(duration));
        }
        if duration == 0.0 {
            return Ok(Vec::new());
        }
        let steps: Vec<f64> = match policy {
            DtPolicy::Cfl { safety } => {
                let dt_max = self.cfl_dt(safety);
                let n = (duration / dt_max).ceil().max(1.0) as usize;
                vec![duration / n as f64; n]
            }
            DtPolicy::Fixed { dt } => {
                if !(dt > 0.0) || !dt.is_finite() {
                    return Err(TransientError::InvalidStep(dt));
                }
                let n = (duration / dt).floor() as usize;
                let mut v = vec![dt; n];
                let rest = duration - n as f64 * dt;
                if rest > 1e-12 * duration {
                    v.push(rest);
                }
                v
            }
        };
        let start = field.time;
        let last = steps.len() - 1;
        let mut reports = Vec::with_capacity(steps.len());
        for (k, dt) in steps.into_iter().enumerate() {
            let mut r = self.step(field, dt)?;
            if k == last {
                // land exactly on the requested time
                field.time = start + duration;
                r.time = field.time;
            }
            reports.push(r);
        }
        Ok(reports)
    }
}

/// Exact characteristic solution of the pure transport system from the
/// initial functions `f01`, `f02`, evaluated at cell centers:
/// `f1(x, t) = e^{bt} f01((x - xL) e^{bt} + xL)`, mirrored for `f2`.
pub fn transport_exact<F1, F2>(model: &Model, grid: Grid, f01: F1, f02: F2, t: f64) -> DensityField
where
    F1: Fn(f64) -> f64,
    F2: Fn(f64) -> f64,
{
    let iv = grid.interval;
    let g1 = (model.b() * t).exp();
    let g2 = (model.d() * t).exp();
    let mut out = DensityField::zeros(grid);
    out.time = t;
    for (i, x) in grid.centers().into_iter().enumerate() {
        let y1 = (x - iv.left) * g1 + iv.left;
        if y1 <= iv.right {
            out.f1[i] = g1 * f01(y1);
        }
        let y2 = (x - iv.right) * g2 + iv.right;
        if y2 >= iv.left {
            out.f2[i] = g2 * f02(y2);
        }
    }
    out
}

/// [`transport_exact`] applied to the piecewise-constant interpolant of a
/// field.
pub fn transport_exact_oracle(model: &Model, field: &DensityField, t: f64) -> DensityField {
    let g = field.grid;
    let pc = |v: &[f64], x: f64| g.cell_of(x).map_or(0.0, |i| v[i]);
    let mut out = transport_exact(model, g, |x| pc(&field.f1, x), |x| pc(&field.f2, x), t);
    out.time = field.time + t;
    out
}
