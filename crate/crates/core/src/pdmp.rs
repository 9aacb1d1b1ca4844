//! Monte Carlo simulation of the piecewise-deterministic process behind the
//! balance laws: in mode 1 the state relaxes along `x' = a - b x` and leaves
//! for mode 2 at rate `λ(x)`; in mode 2 it follows `x' = c - d x` and
//! returns at rate `μ(x)`.
//!
//! Flows are integrated exactly and switching times are drawn by thinning
//! against the maximum of the active rate. Every trajectory owns a ChaCha8
//! stream selected by `(seed, index)`, so results do not depend on the
//! thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::Model;
use crate::transient::{DensityField, Grid, TransientError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdmpError {
    #[error("number of trajectories must be at least 1")]
    NoTrajectories,
    #[error("final time must be finite and non-negative, got {0}")]
    InvalidTime(f64),
    #[error("initial position {0} outside the interval")]
    InitialOutOfDomain(f64),
    #[error("switching rates must be non-negative on the interval")]
    NegativeRates,
    #[error(transparent)]
    Grid(#[from] TransientError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    One,
    Two,
}

impl Mode {
    pub fn other(self) -> Self {
        match self {
            Mode::One => Mode::Two,
            Mode::Two => Mode::One,
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Mode::One => 1,
            Mode::Two => 2,
        }
    }
}

/// Exact flow of the mode's drift over `dt`.
pub fn flow(model: &Model, mode: Mode, x: f64, dt: f64) -> f64 {
    if dt == 0.0 {
        return x;
    }
    let iv = model.interval();
    let (fixed, rate) = match mode {
        Mode::One => (iv.left, model.b()),
        Mode::Two => (iv.right, model.d()),
    };
    let y = fixed + (x - fixed) * (-rate * dt).exp();
    y.clamp(iv.left, iv.right)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    PointMass {
        mode: Mode,
        x: f64,
    },
    /// Uniform position, fair coin for the mode.
    Uniform,
}

#[derive(Debug, Clone)]
pub struct TrajectoryState {
    pub mode: Mode,
    pub x: f64,
    pub t: f64,
    pub rng: ChaCha8Rng,
    pub proposals: u64,
    pub rejections: u64,
    pub switches: u64,
}

impl TrajectoryState {
    pub fn new(mode: Mode, x: f64, seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Self {
            mode,
            x,
            t: 0.0,
            rng,
            proposals: 0,
            rejections: 0,
            switches: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub n_traj: usize,
    pub t_final: f64,
    pub seed: u64,
    pub initial: InitialLaw,
    /// Histogram resolution.
    pub n_bins: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_traj: 100_000,
            t_final: 20.0,
            seed: 0,
            initial: InitialLaw::Uniform,
            n_bins: 100,
        }
    }
}

/// Terminal-state histogram per mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalDensity {
    pub grid: Grid,
    pub counts1: Vec<u64>,
    pub counts2: Vec<u64>,
    pub n_samples: u64,
}

impl EmpiricalDensity {
    /// Densities normalized so that `Δx Σ (f1 + f2) = 1`.
    pub fn to_field(&self) -> DensityField {
        let scale = 1.0 / (self.n_samples as f64 * self.grid.dx());
        let conv = |c: &[u64]| c.iter().map(|&k| k as f64 * scale).collect();
        DensityField {
            grid: self.grid,
            f1: conv(&self.counts1),
            f2: conv(&self.counts2),
            time: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchCountStats {
    pub mean: f64,
    pub variance: f64,
    pub max: u64,
    /// `histogram[k]` trajectories switched exactly `k` times.
    pub histogram: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    pub density: EmpiricalDensity,
    /// Fraction of trajectories ending in mode 1.
    pub mode1_occupancy: f64,
    pub mean_position: f64,
    pub switch_counts: SwitchCountStats,
    pub proposals: u64,
    pub rejections: u64,
}

#[derive(Debug, Clone, Copy)]
struct Terminal {
    mode: Mode,
    x: f64,
    switches: u64,
    proposals: u64,
    rejections: u64,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    model: Model,
    lambda_max: f64,
    mu_max: f64,
}

impl Simulator {
    pub fn new(model: &Model) -> Result<Self, PdmpError> {
        if !model.rates_positive() {
            return Err(PdmpError::NegativeRates);
        }
        Ok(Self {
            model: model.clone(),
            lambda_max: model.lambda_bounds().1,
            mu_max: model.mu_bounds().1,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    fn rate(&self, mode: Mode, x: f64) -> f64 {
        match mode {
            Mode::One => self.model.lambda(x),
            Mode::Two => self.model.mu(x),
        }
    }

    /// Thinning bound for the mode's switching rate.
    pub fn rate_bound(&self, mode: Mode) -> f64 {
        match mode {
            Mode::One => self.lambda_max,
            Mode::Two => self.mu_max,
        }
    }

    /// Waiting time until the next switch from the current state, or `None`
    /// if it falls beyond `horizon`. Leaves position, mode and time alone.
    pub fn next_switch_time(&self, state: &mut TrajectoryState, horizon: f64) -> Option<f64> {
        let bound = self.rate_bound(state.mode);
        if bound <= 0.0 {
            return None;
        }
        let mut tau = 0.0;
        loop {
            let u: f64 = state.rng.random();
            tau += -(1.0 - u).ln() / bound;
            if tau > horizon {
                return None;
            }
            state.proposals += 1;
            let y = flow(&self.model, state.mode, state.x, tau);
            let accept: f64 = state.rng.random();
            if accept * bound < self.rate(state.mode, y) {
                return Some(tau);
            }
            state.rejections += 1;
        }
    }

    /// Runs the trajectory up to absolute time `t_final`.
    pub fn advance(&self, state: &mut TrajectoryState, t_final: f64) {
        while state.t < t_final {
            let remaining = t_final - state.t;
            match self.next_switch_time(state, remaining) {
                Some(tau) => {
                    state.x = flow(&self.model, state.mode, state.x, tau);
                    state.mode = state.mode.other();
                    state.t += tau;
                    state.switches += 1;
                }
                None => {
                    state.x = flow(&self.model, state.mode, state.x, remaining);
                    state.t = t_final;
                }
            }
        }
    }

    pub fn start(&self, initial: InitialLaw, seed: u64, index: u64) -> TrajectoryState {
        match initial {
            InitialLaw::PointMass { mode, x } => TrajectoryState::new(mode, x, seed, index),
            InitialLaw::Uniform => {
                let mut s = TrajectoryState::new(Mode::One, 0.0, seed, index);
                let iv = self.model.interval();
                s.x = iv.left + iv.length() * s.rng.random::<f64>();
                if s.rng.random::<bool>() {
                    s.mode = Mode::Two;
                }
                s
            }
        }
    }

    fn run_one(&self, cfg: &SimulationConfig, index: u64) -> Terminal {
        let mut s = self.start(cfg.initial, cfg.seed, index);
        self.advance(&mut s, cfg.t_final);
        Terminal {
            mode: s.mode,
            x: s.x,
            switches: s.switches,
            proposals: s.proposals,
            rejections: s.rejections,
        }
    }

    pub fn simulate(&self, cfg: &SimulationConfig) -> Result<SimulationResult, PdmpError> {
        if cfg.n_traj == 0 {
            return Err(PdmpError::NoTrajectories);
        }
        if !cfg.t_final.is_finite() || cfg.t_final < 0.0 {
            return Err(PdmpError::InvalidTime(cfg.t_final));
        }
        if let InitialLaw::PointMass { x, .. } = cfg.initial {
            if !self.model.interval().contains(x) {
                return Err(PdmpError::InitialOutOfDomain(x));
            }
        }
        let grid = Grid::new(self.model.interval(), cfg.n_bins)?;

        // collect keeps index order, so every reduction below is sequential
        let terminals: Vec<Terminal> = (0..cfg.n_traj as u64)
            .into_par_iter()
            .map(|i| self.run_one(cfg, i))
            .collect();

        let mut counts1 = vec![0u64; grid.n_cells];
        let mut counts2 = vec![0u64; grid.n_cells];
        let mut in_mode1 = 0u64;
        let mut sum_x = 0.0;
        let mut proposals = 0;
        let mut rejections = 0;
        let mut max_sw = 0;
        for t in &terminals {
            let i = grid.cell_of(t.x).expect("flows stay in the interval");
            match t.mode {
                Mode::One => {
                    counts1[i] += 1;
                    in_mode1 += 1;
                }
                Mode::Two => counts2[i] += 1,
            }
            sum_x += t.x;
            proposals += t.proposals;
            rejections += t.rejections;
            max_sw = max_sw.max(t.switches);
        }
        let n = cfg.n_traj as f64;
        let mut histogram = vec![0u64; max_sw as usize + 1];
        for t in &terminals {
            histogram[t.switches as usize] += 1;
        }
        let mean = terminals.iter().map(|t| t.switches as f64).sum::<f64>() / n;
        let variance = terminals
            .iter()
            .map(|t| (t.switches as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0).max(1.0);

        Ok(SimulationResult {
            density: EmpiricalDensity {
                grid,
                counts1,
                counts2,
                n_samples: cfg.n_traj as u64,
            },
            mode1_occupancy: in_mode1 as f64 / n,
            mean_position: sum_x / n,
            switch_counts: SwitchCountStats {
                mean,
                variance,
                max: max_sw,
                histogram,
            },
            proposals,
            rejections,
        })
    }
}
