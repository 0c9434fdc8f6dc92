//! JSON forms of problems, run results and recorded iterates.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{AdmmError, Result};
use crate::problem::{build_problem, Block, BoxBounds, Problem, SmoothKind, SmoothTerm};
use crate::prox::ProxTerm;
use crate::solvers::{IterateState, RunResult, Termination};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub q: Vec<f64>,
    pub blocks: Vec<BlockFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFile {
    /// Row-major.
    #[serde(rename = "E")]
    pub e: Vec<Vec<f64>>,
    #[serde(rename = "A", default)]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub smooth: Option<SmoothFile>,
    pub nonsmooth: ProxTerm,
    #[serde(rename = "box", default)]
    pub bounds: Option<BoxFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothFile {
    Quadratic { b: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxFile {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &'static str, expected_rows: Option<usize>) -> Result<DMatrix<f64>> {
    if let Some(n) = expected_rows {
        if rows.len() != n {
            return Err(AdmmError::Dimension {
                what,
                expected: n,
                got: rows.len(),
            });
        }
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(AdmmError::Dimension {
            what,
            expected: ncols,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl ProblemFile {
    /// Fails for smooth terms given as code (oracles), which have no JSON form.
    pub fn from_problem(problem: &Problem) -> Result<Self> {
        let blocks = problem
            .blocks()
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let smooth = match &b.smooth {
                    None => None,
                    Some(SmoothTerm {
                        kind: SmoothKind::Quadratic { target },
                        ..
                    }) => Some(SmoothFile::Quadratic {
                        b: target.iter().copied().collect(),
                    }),
                    Some(_) => {
                        return Err(AdmmError::Serialization(format!(
                            "block {k}: oracle smooth terms cannot be written as JSON"
                        )))
                    }
                };
                Ok(BlockFile {
                    e: rows_of(&b.e),
                    a: b.a.as_ref().map(rows_of),
                    smooth,
                    nonsmooth: b.nonsmooth.clone(),
                    bounds: b.bounds.as_ref().map(|bb| BoxFile {
                        lo: bb.lo.clone(),
                        hi: bb.hi.clone(),
                    }),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProblemFile {
            q: problem.q().iter().copied().collect(),
            blocks,
        })
    }

    pub fn to_problem(&self) -> Result<Problem> {
        let m = self.q.len();
        let blocks = self
            .blocks
            .iter()
            .map(|bf| {
                let mut block = Block::new(matrix_from_rows(&bf.e, "rows of E_k", Some(m))?)
                    .with_nonsmooth(bf.nonsmooth.clone());
                if let Some(SmoothFile::Quadratic { b }) = &bf.smooth {
                    let g = SmoothTerm::quadratic(DVector::from_column_slice(b));
                    block = match &bf.a {
                        Some(a) => block.with_composed_smooth(matrix_from_rows(a, "rows of A_k", Some(b.len()))?, g),
                        None => block.with_smooth(g),
                    };
                } else if let Some(a) = &bf.a {
                    block.a = Some(matrix_from_rows(a, "rows of A_k", None)?);
                }
                if let Some(bx) = &bf.bounds {
                    block = block.with_bounds(BoxBounds {
                        lo: bx.lo.clone(),
                        hi: bx.hi.clone(),
                    });
                }
                Ok(block)
            })
            .collect::<Result<Vec<_>>>()?;
        build_problem(blocks, DVector::from_vec(self.q.clone()))
    }
}

pub fn problem_to_json(problem: &Problem) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ProblemFile::from_problem(problem)?)?)
}

pub fn problem_from_json(text: &str) -> Result<Problem> {
    serde_json::from_str::<ProblemFile>(text)?.to_problem()
}

pub fn read_problem(path: &Path) -> Result<Problem> {
    problem_from_json(&fs::read_to_string(path)?)
}

pub fn write_problem(path: &Path, problem: &Problem) -> Result<()> {
    fs::write(path, problem_to_json(problem)?)?;
    Ok(())
}

/// Summary written by `solve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub final_alpha: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub objective: f64,
    pub feas: f64,
}

impl SolveSummary {
    pub fn from_run(problem: &Problem, result: &RunResult) -> Self {
        let x = &result.state.x;
        SolveSummary {
            final_alpha: result.final_alpha,
            iterations: result.iterations(),
            termination: result.termination,
            objective: problem.objective(x).unwrap_or(f64::NAN),
            feas: problem.residual(x).norm(),
        }
    }
}

/// Every iterate of a run with the dual steps between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatesFile {
    pub states: Vec<IterateState>,
    /// `alphas[i]` moves state `i` to state `i + 1`.
    pub alphas: Vec<f64>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
