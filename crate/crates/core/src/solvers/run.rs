use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{AlphaPolicy, Engine, IterateState, SolverConfig, MAX_HALVINGS};
use crate::error::{AdmmError, Result};
use crate::lagrangian::{lagrangian_unchecked, proximal_gradient_unchecked};
use crate::problem::Problem;
use crate::trace::TraceRecord;

/// Relative slack on `L(x^{r+1};y^r) ≤ L(x^r;y^r)` before a primal increase is reported.
const PRIMAL_INCREASE_SLACK: f64 = 1e-9;

/// Optimality gaps for record `r`, evaluated at `(x^{r+1}, y^r)`.
#[derive(Debug, Clone, Copy)]
pub struct GapValues {
    pub delta_p: f64,
    pub delta_d: f64,
    pub d_y: f64,
}

impl GapValues {
    pub fn combined(&self) -> f64 {
        self.delta_p + self.delta_d
    }
}

/// Source of `Δ_p^r` and `Δ_d^r` during a run.
pub trait GapMonitor {
    fn gaps(&mut self, x_next: &DVector<f64>, y: &DVector<f64>) -> Result<GapValues>;
    /// Absolute slack when testing the combined gap for an increase.
    fn slack(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    NonMonotoneWarning,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub state: IterateState,
    pub trace: Vec<TraceRecord>,
    pub termination: Termination,
    pub converged: bool,
    pub final_alpha: f64,
    /// `alphas[i]` is the dual step taken from iterate `i` to `i + 1`.
    pub alphas: Vec<f64>,
    /// Every iterate `0..=r` when `keep_states` was set.
    pub states: Option<Vec<IterateState>>,
    pub halvings: usize,
    /// Combined-gap increases that could not be repaired by halving α.
    pub gap_increases: usize,
    /// Steps with `L(x^{r+1};y^r) > L(x^r;y^r)`.
    pub primal_increases: usize,
}

impl RunResult {
    pub fn iterations(&self) -> usize {
        self.state.r
    }
}

/// Runs the configured variant. With [`AlphaPolicy::Auto`] the reference
/// optimum is computed first so the combined gap can be monitored.
pub fn run(problem: &Problem, config: &SolverConfig, init: Option<IterateState>) -> Result<RunResult> {
    match config.alpha {
        AlphaPolicy::Fixed(_) => run_with_monitor(problem, config, init, None),
        AlphaPolicy::Auto => {
            config.validate(problem)?;
            let mut monitor = crate::diagnostics::ReferenceMonitor::new(
                problem,
                config.rho,
                crate::diagnostics::DEFAULT_REF_TOL,
            )?;
            run_with_monitor(problem, config, init, Some(&mut monitor))
        }
    }
}

/// Runs with an optional gap monitor; required for [`AlphaPolicy::Auto`].
/// With a fixed α the monitor only fills the gap columns of the trace.
pub fn run_with_monitor(
    problem: &Problem,
    config: &SolverConfig,
    init: Option<IterateState>,
    mut monitor: Option<&mut dyn GapMonitor>,
) -> Result<RunResult> {
    let engine = Engine::new(problem, config)?;
    let rho = config.rho;
    let auto = matches!(config.alpha, AlphaPolicy::Auto);
    if auto && monitor.is_none() {
        return Err(AdmmError::Config {
            variant: config.variant.to_string(),
            reason: "automatic step size needs a gap monitor".into(),
        });
    }
    let mut alpha = match config.alpha {
        AlphaPolicy::Fixed(a) => a,
        AlphaPolicy::Auto => 0.1 * rho,
    };
    let mut current = match init {
        Some(s) => {
            problem.check_conformal(&s.x)?;
            problem.check_multiplier(&s.y)?;
            s
        }
        None => IterateState::initial(problem),
    };
    let start_r = current.r;
    let mut states = config.keep_states.then(|| vec![current.clone()]);
    let mut prev: Option<IterateState> = None;
    let mut alphas = Vec::new();
    let mut trace = Vec::new();
    let mut gap_hist: Vec<f64> = Vec::new();
    let mut halvings = 0;
    let mut gap_increases = 0;
    let mut primal_flags: Vec<bool> = Vec::new();
    let converged = loop {
        let pg = proximal_gradient_unchecked(problem, &current.x, &current.y, rho).norm();
        let feas = problem.residual(&current.x).norm();
        if pg.max(feas) <= config.tol_outer {
            break true;
        }
        if current.r - start_r >= config.max_iters {
            break false;
        }
        let (next, _) = engine.step(&current, alpha)?;
        if !next.x.iter().all(|v| v.is_finite()) || !next.y.iter().all(|v| v.is_finite()) {
            return Err(AdmmError::NonFinite(format!("iterate {} diverged", next.r)));
        }
        let l_cur = lagrangian_unchecked(problem, &current.x, &current.y, rho);
        let l_next = lagrangian_unchecked(problem, &next.x, &current.y, rho);
        let mut rec = TraceRecord::new(current.r);
        rec.l_val = l_next;
        rec.feas = feas;
        rec.step = (&next.x - &current.x).norm();
        rec.pg = pg;
        rec.f_val = problem.objective_unchecked(&next.x);

        if let Some(mon) = monitor.as_deref_mut() {
            let g = mon.gaps(&next.x, &current.y)?;
            rec.delta_p = g.delta_p;
            rec.delta_d = g.delta_d;
            rec.combined = g.combined();
            rec.d_y = g.d_y;
            let increased = gap_hist
                .last()
                .is_some_and(|&last| rec.combined > last + mon.slack());
            if increased && auto {
                if halvings < MAX_HALVINGS {
                    if let Some(p) = prev.take() {
                        // The increase comes from the dual step that produced y^r:
                        // redo it from iterate r − 1 with half the step.
                        halvings += 1;
                        alpha *= 0.5;
                        gap_hist.pop();
                        if trace.last().is_some_and(|t: &TraceRecord| t.r == p.r) {
                            trace.pop();
                        }
                        alphas.pop();
                        primal_flags.pop();
                        if let Some(s) = states.as_mut() {
                            s.pop();
                        }
                        current = p;
                        continue;
                    }
                }
                gap_increases += 1;
            } else if increased {
                gap_increases += 1;
            }
            gap_hist.push(rec.combined);
        }
        primal_flags.push(l_next > l_cur + PRIMAL_INCREASE_SLACK * (1.0 + l_cur.abs()));
        if (current.r - start_r) % config.trace_every == 0 {
            trace.push(rec);
        }
        alphas.push(alpha);
        if let Some(s) = states.as_mut() {
            s.push(next.clone());
        }
        prev = Some(std::mem::replace(&mut current, next));
    };
    let primal_increases = primal_flags.iter().filter(|&&f| f).count();
    let termination = if gap_increases > 0 || primal_increases > 0 {
        Termination::NonMonotoneWarning
    } else if converged {
        Termination::Converged
    } else {
        Termination::MaxIters
    };
    Ok(RunResult {
        state: current,
        trace,
        termination,
        converged,
        final_alpha: alpha,
        alphas,
        states,
        halvings,
        gap_increases,
        primal_increases,
    })
}
