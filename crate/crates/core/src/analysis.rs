//! Distances between the stationary, transient and Monte Carlo results, and
//! the checks that compare them.

use serde::Serialize;
use thiserror::Error;

use crate::model::Model;
use crate::pdmp::{InitialLaw, PdmpError, SimulationConfig, Simulator};
use crate::stationary::{
    classify_endpoints, Side, StationaryError, StationaryOptions, StationarySolution,
};
use crate::transient::{
    DensityField, DtPolicy, Grid, InitialProfile, Splitting, TransientError, TransientSolver,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("endpoint exponent fitting requires affine rates")]
    NotAffine,
    #[error(transparent)]
    Stationary(#[from] StationaryError),
    #[error(transparent)]
    Transient(#[from] TransientError),
    #[error(transparent)]
    Pdmp(#[from] PdmpError),
}

fn same_grid(a: &DensityField, b: &DensityField) -> Result<(), AnalysisError> {
    if a.grid != b.grid {
        Err(AnalysisError::GridMismatch)
    } else {
        Ok(())
    }
}

/// `Δx Σ (|f1A - f1B| + |f2A - f2B|)`.
pub fn l1_distance(a: &DensityField, b: &DensityField) -> Result<f64, AnalysisError> {
    same_grid(a, b)?;
    let s: f64 =
        a.f1.iter()
            .zip(&b.f1)
            .chain(a.f2.iter().zip(&b.f2))
            .map(|(x, y)| (x - y).abs())
            .sum();
    Ok(a.grid.dx() * s)
}

/// `Δx Σ |(f1A + f2A) - (f1B + f2B)|`, the distance between mode-summed
/// densities.
pub fn summed_l1_distance(a: &DensityField, b: &DensityField) -> Result<f64, AnalysisError> {
    same_grid(a, b)?;
    let s: f64 = (0..a.grid.n_cells)
        .map(|i| ((a.f1[i] + a.f2[i]) - (b.f1[i] + b.f2[i])).abs())
        .sum();
    Ok(a.grid.dx() * s)
}

const GAUSS3_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GAUSS3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Cell averages of `(ψ1, ψ2)` by 3-point Gauss quadrature in each cell.
pub fn project_stationary(
    sol: &StationarySolution,
    grid: Grid,
) -> Result<DensityField, AnalysisError> {
    if grid.interval != sol.model().interval() {
        return Err(AnalysisError::GridMismatch);
    }
    let mut out = DensityField::zeros(grid);
    let half = 0.5 * grid.dx();
    for i in 0..grid.n_cells {
        let c = grid.center(i);
        let (mut a, mut b) = (0.0, 0.0);
        for (t, w) in GAUSS3_NODES.iter().zip(GAUSS3_WEIGHTS) {
            let (p1, p2) = sol.psi(c + half * t)?;
            a += w * p1;
            b += w * p2;
        }
        out.f1[i] = 0.5 * a;
        out.f2[i] = 0.5 * b;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceCurve {
    /// `(t, ‖f(t) - ψ‖₁)`.
    pub points: Vec<(f64, f64)>,
    /// Non-increasing up to `1e-10` between checkpoints.
    pub monotone: bool,
    pub final_distance: f64,
}

/// Evolves `initial` through the ascending `checkpoints` and records the
/// distance to the projected stationary solution at each.
pub fn convergence_run(
    solver: &TransientSolver,
    sol: &StationarySolution,
    initial: &DensityField,
    checkpoints: &[f64],
    policy: DtPolicy,
) -> Result<ConvergenceCurve, AnalysisError> {
    let target = project_stationary(sol, solver.grid())?;
    let mut field = initial.clone();
    let mut points = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        let dt = t - field.time;
        if dt < 0.0 {
            return Err(TransientError::InvalidStep(dt).into());
        }
        solver.evolve(&mut field, dt, policy)?;
        points.push((t, l1_distance(&field, &target)?));
    }
    let monotone = points.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-10);
    let final_distance = points.last().map_or(f64::NAN, |p| p.1);
    Ok(ConvergenceCurve {
        points,
        monotone,
        final_distance,
    })
}

/// Least-squares slope of `ln ψ` against `ln ε` for `ε ∈ {1e-3, …, 1e-6}`
/// times the interval length, using `ψ1` on the left and `ψ2` on the right.
pub fn fit_endpoint_exponent(sol: &StationarySolution, side: Side) -> Result<f64, AnalysisError> {
    if sol.model().affine_coefficients().is_none() {
        return Err(AnalysisError::NotAffine);
    }
    let len = sol.model().interval().length();
    let pts: Vec<(f64, f64)> = (3..=6)
        .map(|k| {
            let eps = 10f64.powi(-k) * len;
            (eps.ln(), sol.psi_near_endpoint(side, eps).ln())
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Pass/fail thresholds applied by [`cross_validate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub flux_identity: f64,
    pub mass: f64,
    pub transient_vs_stationary: f64,
    pub empirical_vs_stationary: f64,
    /// Allowed occupancy deviation in standard errors.
    pub occupancy_sigmas: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            flux_identity: 1e-10,
            mass: 1e-10,
            transient_vs_stationary: 0.05,
            empirical_vs_stationary: 0.05,
            occupancy_sigmas: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossValidateConfig {
    pub n_cells: usize,
    pub t_final: f64,
    pub splitting: Splitting,
    pub n_traj: usize,
    pub seed: u64,
    /// Histogram resolution; must divide `n_cells`.
    pub mc_bins: usize,
    pub thresholds: Thresholds,
}

impl Default for CrossValidateConfig {
    fn default() -> Self {
        Self {
            n_cells: 400,
            t_final: 20.0,
            splitting: Splitting::LieTrotter,
            n_traj: 100_000,
            seed: 0,
            mc_bins: 100,
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Distances among the three results on the histogram grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairwiseDistances {
    pub stationary_transient: f64,
    pub stationary_empirical: f64,
    pub transient_empirical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub n_cells: usize,
    pub mc_bins: usize,
    pub n_traj: usize,
    pub seed: u64,
    pub thresholds: Thresholds,
    pub distances: PairwiseDistances,
    pub criteria: Vec<CriterionResult>,
    pub passed: bool,
}

fn criterion(name: &str, value: f64, threshold: f64, passed: bool) -> CriterionResult {
    CriterionResult {
        name: name.to_string(),
        value,
        threshold,
        passed,
    }
}

/// Runs the stationary, transient and Monte Carlo paths on `model` and
/// compares them. Failed checks are reported, not raised.
pub fn cross_validate(
    model: &Model,
    cfg: &CrossValidateConfig,
) -> Result<ComparisonReport, AnalysisError> {
    if cfg.mc_bins == 0 || !cfg.n_cells.is_multiple_of(cfg.mc_bins) {
        return Err(AnalysisError::GridMismatch);
    }
    let th = cfg.thresholds;
    let sol = StationarySolution::normalize(model, StationaryOptions::default())?;
    let iv = model.interval();
    let grid = Grid::new(iv, cfg.n_cells)?;
    let coarse = Grid::new(iv, cfg.mc_bins)?;
    let mut criteria = Vec::new();

    // flux identity on a probe grid
    let probes: Vec<f64> = (1..=1000)
        .map(|i| iv.left + iv.length() * i as f64 / 1001.0)
        .collect();
    let hmax = probes.iter().map(|&x| sol.h(x)).fold(0.0, f64::max);
    let mut flux_err: f64 = 0.0;
    for &x in &probes {
        let (a, b) = sol.psi(x)?;
        let r = ((model.b() * x - model.a()) * a - (model.c() - model.d() * x) * b).abs();
        flux_err = flux_err.max(r / hmax);
    }
    criteria.push(criterion(
        "flux_identity",
        flux_err,
        th.flux_identity,
        flux_err <= th.flux_identity,
    ));

    // transient path
    let solver = TransientSolver::new(model, grid, cfg.splitting)?;
    let mut field = DensityField::from_profile(grid, InitialProfile::Uniform)?;
    let reports = solver.evolve(&mut field, cfg.t_final, DtPolicy::default())?;
    let mass_err = reports
        .iter()
        .map(|r| (r.mass - 1.0).abs())
        .fold(0.0, f64::max);
    let min_density = reports
        .iter()
        .map(|r| r.min_density)
        .fold(f64::INFINITY, f64::min);
    criteria.push(criterion(
        "mass_conservation",
        mass_err,
        th.mass,
        mass_err <= th.mass,
    ));
    criteria.push(criterion(
        "positivity",
        min_density,
        0.0,
        min_density >= 0.0,
    ));
    let fine_target = project_stationary(&sol, grid)?;
    let d_ts = l1_distance(&field, &fine_target)?;
    criteria.push(criterion(
        "transient_vs_stationary",
        d_ts,
        th.transient_vs_stationary,
        d_ts < th.transient_vs_stationary,
    ));

    // Monte Carlo path
    let sim = Simulator::new(model)?;
    let mc = sim.simulate(&SimulationConfig {
        n_traj: cfg.n_traj,
        t_final: cfg.t_final,
        seed: cfg.seed,
        initial: InitialLaw::Uniform,
        n_bins: cfg.mc_bins,
    })?;
    let emp = mc.density.to_field();
    let coarse_target = project_stationary(&sol, coarse)?;
    let d_es = summed_l1_distance(&emp, &coarse_target)?;
    criteria.push(criterion(
        "empirical_vs_stationary",
        d_es,
        th.empirical_vs_stationary,
        d_es <= th.empirical_vs_stationary,
    ));

    let (p1, _) = fine_target.mode_mass();
    let se = (p1 * (1.0 - p1) / cfg.n_traj as f64).sqrt();
    let dev = (mc.mode1_occupancy - p1).abs() / se.max(f64::MIN_POSITIVE);
    criteria.push(criterion(
        "mode_occupancy",
        dev,
        th.occupancy_sigmas,
        dev <= th.occupancy_sigmas,
    ));

    if let Ok(cls) = classify_endpoints(model) {
        log::debug!("endpoint behaviour {cls:?}");
    }

    let coarse_field = field.coarsen(cfg.n_cells / cfg.mc_bins)?;
    let distances = PairwiseDistances {
        stationary_transient: l1_distance(&coarse_target, &coarse_field)?,
        stationary_empirical: l1_distance(&coarse_target, &emp)?,
        transient_empirical: l1_distance(&coarse_field, &emp)?,
    };
    let passed = criteria.iter().all(|c| c.passed);
    Ok(ComparisonReport {
        n_cells: cfg.n_cells,
        mc_bins: cfg.mc_bins,
        n_traj: cfg.n_traj,
        seed: cfg.seed,
        thresholds: th,
        distances,
        criteria,
        passed,
    })
}
