//! Linear matrix inequality programs in the form accepted by solver adapters:
//!
//! ```text
//! maximize    c' y
//! subject to  F0_j + sum_i y_i F_ij  >= 0   (PSD, one per block j)
//!             E y = e
//! ```

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Nonzero entries `(row, col, value)` of a symmetric coefficient matrix,
/// listed in both triangles.
pub type SparseSym<S> = Vec<(usize, usize, S)>;

#[derive(Clone, Debug)]
pub struct LmiBlock<S: Scalar = f64> {
    size: usize,
    constant: DMatrix<S>,
    /// `(variable index, coefficient matrix)`; variables absent from the block
    /// are omitted.
    coeffs: Vec<(usize, SparseSym<S>)>,
}

impl<S: Scalar> LmiBlock<S> {
    pub fn new(constant: DMatrix<S>) -> Result<Self> {
        if !constant.is_square() {
            return Err(Error::InvalidInput("LMI constant term must be square".into()));
        }
        Ok(Self { size: constant.nrows(), constant: symmetric_part(&constant), coeffs: Vec::new() })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn constant(&self) -> &DMatrix<S> {
        &self.constant
    }

    pub fn coefficients(&self) -> &[(usize, SparseSym<S>)] {
        &self.coeffs
    }

    /// Adds `value * y_var` to the block; `coeff` is symmetrized first.
    pub fn add_coefficient(&mut self, var: usize, coeff: &DMatrix<S>) -> Result<()> {
        if coeff.shape() != (self.size, self.size) {
            return Err(Error::DimensionMismatch {
                context: "LMI coefficient size".into(),
                expected: self.size,
                found: coeff.nrows(),
            });
        }
        let sym = symmetric_part(coeff);
        let entries: SparseSym<S> = (0..self.size)
            .flat_map(|c| (0..self.size).map(move |r| (r, c)))
            .filter_map(|(r, c)| {
                let v = sym[(r, c)];
                (v != S::zero()).then_some((r, c, v))
            })
            .collect();
        if entries.is_empty() {
            return Ok(());
        }
        match self.coeffs.iter_mut().find(|(v, _)| *v == var) {
            Some((_, existing)) => {
                let mut dense = sparse_to_dense(existing, self.size);
                for &(r, c, v) in &entries {
                    dense[(r, c)] += v;
                }
                *existing = (0..self.size)
                    .flat_map(|c| (0..self.size).map(move |r| (r, c)))
                    .filter_map(|(r, c)| (dense[(r, c)] != S::zero()).then_some((r, c, dense[(r, c)])))
                    .collect();
            }
            None => self.coeffs.push((var, entries)),
        }
        Ok(())
    }

    /// `F0 + sum_i y_i F_i`.
    pub fn evaluate(&self, y: &DVector<S>) -> DMatrix<S> {
        let mut out = self.constant.clone();
        for (var, entries) in &self.coeffs {
            let yi = y[*var];
            for &(r, c, v) in entries {
                out[(r, c)] += yi * v;
            }
        }
        out
    }
}

pub(crate) fn sparse_to_dense<S: Scalar>(entries: &SparseSym<S>, size: usize) -> DMatrix<S> {
    let mut m = DMatrix::zeros(size, size);
    for &(r, c, v) in entries {
        m[(r, c)] += v;
    }
    m
}

pub(crate) fn symmetric_part<S: Scalar>(m: &DMatrix<S>) -> DMatrix<S> {
    (m + m.transpose()) * S::lit(0.5)
}

#[derive(Clone, Debug)]
pub struct LmiProblem<S: Scalar = f64> {
    pub num_vars: usize,
    pub objective: DVector<S>,
    pub blocks: Vec<LmiBlock<S>>,
    /// `E`, `p x num_vars`; `p` may be zero.
    pub eq_matrix: DMatrix<S>,
    pub eq_rhs: DVector<S>,
}

impl<S: Scalar> LmiProblem<S> {
    pub fn new(objective: DVector<S>) -> Self {
        let m = objective.len();
        Self {
            num_vars: m,
            objective,
            blocks: Vec::new(),
            eq_matrix: DMatrix::zeros(0, m),
            eq_rhs: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, e: DMatrix<S>, rhs: DVector<S>) -> Result<Self> {
        if e.ncols() != self.num_vars || e.nrows() != rhs.len() {
            return Err(Error::DimensionMismatch {
                context: "equality constraint matrix".into(),
                expected: self.num_vars,
                found: e.ncols(),
            });
        }
        self.eq_matrix = e;
        self.eq_rhs = rhs;
        Ok(self)
    }

    pub fn push_block(&mut self, block: LmiBlock<S>) -> Result<()> {
        if let Some((v, _)) = block.coeffs.iter().find(|(v, _)| *v >= self.num_vars) {
            return Err(Error::InvalidInput(format!("block references unknown variable {v}")));
        }
        self.blocks.push(block);
        Ok(())
    }

    /// Smallest eigenvalue of each block at `y`.
    pub fn block_min_eigenvalues(&self, y: &DVector<S>) -> Vec<S> {
        self.blocks
            .iter()
            .map(|b| crate::sdp::min_eigenvalue(&b.evaluate(y)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    /// No `y` satisfies the constraints.
    Infeasible,
    /// The objective is unbounded above.
    Unbounded,
    NumericalFailure,
}

#[derive(Clone, Debug)]
pub struct SolverOutput<S: Scalar = f64> {
    pub status: SolverStatus,
    pub y: DVector<S>,
    /// `c' y`.
    pub objective: S,
    /// Largest of the relative gap and the relative residuals at exit.
    pub achieved_tolerance: S,
    pub iterations: usize,
    /// Primal matrices (one per block): a Farkas certificate when the status
    /// is `Infeasible`, the dual optimal multipliers when `Optimal`.
    pub multipliers: Vec<DMatrix<S>>,
}

/// Anything that can solve an [`LmiProblem`]. One instance per concurrent
/// solve.
pub trait ConicSolver<S: Scalar> {
    fn solve(&mut self, problem: &LmiProblem<S>) -> Result<SolverOutput<S>>;
}
