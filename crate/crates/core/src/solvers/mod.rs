//! ADMM variants: Gauss–Seidel (exact block minimization), proximal
//! (one linearized prox step per block), Jacobi with `1/K` damping, and the
//! undamped Jacobi scheme kept for demonstration.

pub mod block;
mod run;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AdmmError, Result};
use crate::problem::Problem;
use block::BlockSolver;

pub use block::solve_block;
pub use run::{run, run_with_monitor, GapMonitor, GapValues, RunResult, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    GaussSeidel,
    Proximal,
    Jacobi,
    JacobiUnsafe,
}

impl Variant {
    pub fn cli_name(&self) -> &'static str {
        match self {
            Variant::GaussSeidel => "gs",
            Variant::Proximal => "prox",
            Variant::Jacobi => "jacobi",
            Variant::JacobiUnsafe => "jacobi-unsafe",
        }
    }

    /// Whether the variant needs every E_k to have full column rank.
    pub fn needs_full_rank(&self) -> bool {
        !matches!(self, Variant::Proximal)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Variant {
    type Err = AdmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gs" | "gauss_seidel" | "gauss-seidel" => Ok(Variant::GaussSeidel),
            "prox" | "proximal" => Ok(Variant::Proximal),
            "jacobi" => Ok(Variant::Jacobi),
            "jacobi-unsafe" | "jacobi_unsafe" => Ok(Variant::JacobiUnsafe),
            other => Err(AdmmError::InvalidParameter(format!("unknown variant '{other}'"))),
        }
    }
}

/// Dual step size policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaPolicy {
    Fixed(f64),
    /// Start at `0.1·ρ`, halve (up to [`MAX_HALVINGS`] times) whenever the
    /// combined optimality gap increases, rewinding to the last monotone iterate.
    Auto,
}

pub const MAX_HALVINGS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub variant: Variant,
    pub rho: f64,
    pub alpha: AlphaPolicy,
    /// Proximal weight; `None` means [`default_beta`].
    pub beta: Option<f64>,
    pub tol_outer: f64,
    /// `None` means `min(1e-10, tol_outer/100)`.
    pub tol_block: Option<f64>,
    pub max_iters: usize,
    pub trace_every: usize,
    /// Run Gauss–Seidel/Jacobi even when some E_k is rank deficient.
    pub allow_rank_deficient: bool,
    /// Keep every iterate in the result (needed by the diagnostics).
    pub keep_states: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            variant: Variant::GaussSeidel,
            rho: 1.0,
            alpha: AlphaPolicy::Auto,
            beta: None,
            tol_outer: 1e-8,
            tol_block: None,
            max_iters: 5000,
            trace_every: 1,
            allow_rank_deficient: false,
            keep_states: false,
        }
    }
}

impl SolverConfig {
    pub fn block_tolerance(&self) -> f64 {
        self.tol_block.unwrap_or_else(|| (self.tol_outer / 100.0).min(1e-10))
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = AlphaPolicy::Fixed(alpha);
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    /// Checks parameters against the problem and returns the proximal weight
    /// to use (meaningful for the proximal variant only).
    pub fn validate(&self, problem: &Problem) -> Result<f64> {
        let cfg_err = |reason: String| AdmmError::Config {
            variant: self.variant.to_string(),
            reason,
        };
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(cfg_err(format!("rho = {} must be positive", self.rho)));
        }
        if let AlphaPolicy::Fixed(a) = self.alpha {
            if !(a >= 0.0) || !a.is_finite() {
                return Err(cfg_err(format!("alpha = {a} must be nonnegative")));
            }
        }
        if !(self.tol_outer > 0.0) {
            return Err(cfg_err(format!("tol_outer = {} must be positive", self.tol_outer)));
        }
        if self.trace_every == 0 {
            return Err(cfg_err("trace_every must be at least 1".into()));
        }
        let report = problem.check_assumptions();
        if self.variant.needs_full_rank() && !report.ok_gauss_seidel && !self.allow_rank_deficient {
            let blocks: Vec<usize> = report
                .full_column_rank
                .iter()
                .enumerate()
                .filter(|(_, &ok)| !ok)
                .map(|(k, _)| k)
                .collect();
            return Err(cfg_err(format!("E_k lacks full column rank for blocks {blocks:?}")));
        }
        match self.variant {
            Variant::Proximal => {
                let nu = nu_constant(problem, self.rho);
                let beta = match self.beta {
                    Some(b) => b,
                    None => default_beta(problem, self.rho)?,
                };
                if !(beta > nu) {
                    return Err(AdmmError::BetaTooSmall { beta, nu });
                }
                Ok(beta)
            }
            _ => Ok(0.0),
        }
    }
}

/// Primal blocks, multiplier and iteration counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateState {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub r: usize,
}

impl IterateState {
    /// `x = 0` projected into the boxes, `y = 0`.
    pub fn initial(problem: &Problem) -> Self {
        IterateState {
            x: problem.initial_point(),
            y: DVector::zeros(problem.m()),
            r: 0,
        }
    }
}

/// `ν = max_k L‖A_k‖‖A_kᵀ‖ + ρ‖E_kᵀE_k‖`.
pub fn nu_constant(problem: &Problem, rho: f64) -> f64 {
    problem
        .infos()
        .iter()
        .map(|i| i.composed_lipschitz() + rho * i.ete_norm)
        .fold(0.0, f64::max)
}

/// `1.01·ν`; rejects the degenerate `ν = 0`.
pub fn default_beta(problem: &Problem, rho: f64) -> Result<f64> {
    let nu = nu_constant(problem, rho);
    if nu > 0.0 {
        Ok(1.01 * nu)
    } else {
        Err(AdmmError::InvalidParameter(
            "nu = 0, no positive proximal weight can be derived".into(),
        ))
    }
}

/// One iteration's primal update; `w` is the Jacobi intermediate point.
#[derive(Debug, Clone)]
pub struct PrimalUpdate {
    pub x: DVector<f64>,
    pub w: Option<DVector<f64>>,
}

/// Stateful stepping engine holding the block caches for one (problem, ρ).
#[derive(Debug)]
pub struct Engine<'p> {
    solver: BlockSolver<'p>,
    variant: Variant,
    beta: f64,
    tol_block: f64,
}

impl<'p> Engine<'p> {
    pub fn new(problem: &'p Problem, config: &SolverConfig) -> Result<Self> {
        let beta = config.validate(problem)?;
        Ok(Engine {
            solver: BlockSolver::new(problem, config.rho),
            variant: config.variant,
            beta,
            tol_block: config.block_tolerance(),
        })
    }

    pub fn problem(&self) -> &'p Problem {
        self.solver.problem()
    }

    pub fn rho(&self) -> f64 {
        self.solver.rho()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Primal sweep from `(x^r, y^r)`.
    pub fn primal_update(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<PrimalUpdate> {
        match self.variant {
            Variant::GaussSeidel => self.gauss_seidel_sweep(x, y).map(|x| PrimalUpdate { x, w: None }),
            Variant::Proximal => self.proximal_sweep(x, y).map(|x| PrimalUpdate { x, w: None }),
            Variant::Jacobi => {
                let w = self.jacobi_targets(x, y)?;
                let k = self.problem().num_blocks();
                let next = if k == 1 {
                    w.clone()
                } else {
                    x + (&w - x) / k as f64
                };
                Ok(PrimalUpdate { x: next, w: Some(w) })
            }
            Variant::JacobiUnsafe => {
                let w = self.jacobi_targets(x, y)?;
                Ok(PrimalUpdate {
                    x: w.clone(),
                    w: Some(w),
                })
            }
        }
    }

    /// `y + α(q − Ex)`.
    pub fn dual_update(&self, y: &DVector<f64>, x_next: &DVector<f64>, alpha: f64) -> DVector<f64> {
        y - self.problem().residual(x_next) * alpha
    }

    /// Full iteration: primal update followed by the dual update with step `alpha`.
    pub fn step(&self, state: &IterateState, alpha: f64) -> Result<(IterateState, PrimalUpdate)> {
        let upd = self.primal_update(&state.x, &state.y)?;
        let y = self.dual_update(&state.y, &upd.x, alpha);
        Ok((
            IterateState {
                x: upd.x.clone(),
                y,
                r: state.r + 1,
            },
            upd,
        ))
    }

    fn gauss_seidel_sweep(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        let problem = self.problem();
        let mut x = x.clone();
        let mut ex = problem.e() * &x;
        for k in 0..problem.num_blocks() {
            let info = problem.info(k);
            let ek = &problem.block(k).e;
            let xk = x.rows(info.offset, info.dim).into_owned();
            let rest = &ex - ek * &xk - problem.q();
            let solved = self.solver.solve(k, &rest, y, &xk, self.tol_block)?;
            ex = rest + ek * &solved.x + problem.q();
            x.rows_mut(info.offset, info.dim).copy_from(&solved.x);
        }
        Ok(x)
    }

    fn proximal_sweep(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        let problem = self.problem();
        let rho = self.rho();
        let beta = self.beta;
        let mut x = x.clone();
        let mut ex = problem.e() * &x;
        for k in 0..problem.num_blocks() {
            let info = problem.info(k);
            let ek = &problem.block(k).e;
            let xk = x.rows(info.offset, info.dim).into_owned();
            let coupling = (&ex - problem.q()) * rho - y;
            let grad = problem.smooth_gradient_block(k, &xk) + ek.tr_mul(&coupling);
            let new_xk = info.h.prox_unchecked(&(&xk - grad / beta), 1.0 / beta);
            ex += ek * (&new_xk - &xk);
            x.rows_mut(info.offset, info.dim).copy_from(&new_xk);
        }
        Ok(x)
    }

    fn jacobi_targets(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        let problem = self.problem();
        let ex = problem.e() * x;
        let solved: Vec<Result<DVector<f64>>> = (0..problem.num_blocks())
            .into_par_iter()
            .map(|k| {
                let info = problem.info(k);
                let ek = &problem.block(k).e;
                let xk = x.rows(info.offset, info.dim).into_owned();
                let rest = &ex - ek * &xk - problem.q();
                Ok(self.solver.solve(k, &rest, y, &xk, self.tol_block)?.x)
            })
            .collect();
        let mut w = DVector::zeros(x.len());
        for (k, wk) in solved.into_iter().enumerate() {
            let info = problem.info(k);
            w.rows_mut(info.offset, info.dim).copy_from(&wk?);
        }
        Ok(w)
    }
}

fn step_with(problem: &Problem, state: &IterateState, config: &SolverConfig, variant: Variant) -> Result<IterateState> {
    problem.check_conformal(&state.x)?;
    problem.check_multiplier(&state.y)?;
    let cfg = config.clone().with_variant(variant);
    let alpha = match cfg.alpha {
        AlphaPolicy::Fixed(a) => a,
        AlphaPolicy::Auto => 0.1 * cfg.rho,
    };
    let engine = Engine::new(problem, &cfg)?;
    Ok(engine.step(state, alpha)?.0)
}

/// Gauss–Seidel sweep over blocks `1..K`, then `y ← y + α(q − Ex^{r+1})`.
pub fn step_gauss_seidel(problem: &Problem, state: &IterateState, config: &SolverConfig) -> Result<IterateState> {
    step_with(problem, state, config, Variant::GaussSeidel)
}

/// One prox-linear step per block with weight β, then the dual update.
pub fn step_proximal(problem: &Problem, state: &IterateState, config: &SolverConfig) -> Result<IterateState> {
    step_with(problem, state, config, Variant::Proximal)
}

/// Jacobi targets `w^{r+1}` from `x^r`, damped step `x^r + (w − x^r)/K`, then the dual update.
pub fn step_jacobi(problem: &Problem, state: &IterateState, config: &SolverConfig) -> Result<IterateState> {
    step_with(problem, state, config, Variant::Jacobi)
}

/// Undamped Jacobi `x^{r+1} = w^{r+1}`; no convergence guarantee.
pub fn step_jacobi_unsafe(problem: &Problem, state: &IterateState, config: &SolverConfig) -> Result<IterateState> {
    step_with(problem, state, config, Variant::JacobiUnsafe)
}

#[cfg(test)]
mod tests;
