//! Trajectories, the data matrices `U0`, `X0`, `X1` (and the oracle-only
//! remainder block `D0`), block-Hankel matrices and SVD-based rank analysis.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default relative threshold for numerical rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// One recorded experiment: `T + 1` states and `T` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S: Scalar = f64> {
    n: usize,
    m: usize,
    states: Vec<DVector<S>>,
    inputs: Vec<DVector<S>>,
}

impl<S: Scalar> Trajectory<S> {
    pub fn new(states: Vec<DVector<S>>, inputs: Vec<DVector<S>>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidInput("trajectory needs at least one input".into()));
        }
        if states.len() != inputs.len() + 1 {
            return Err(Error::DimensionMismatch {
                context: "trajectory state count (T + 1)".into(),
                expected: inputs.len() + 1,
                found: states.len(),
            });
        }
        let n = states[0].len();
        let m = inputs[0].len();
        if n == 0 || m == 0 {
            return Err(Error::InvalidInput("state and input dimensions must be positive".into()));
        }
        for (k, x) in states.iter().enumerate() {
            if x.len() != n {
                return Err(Error::DimensionMismatch {
                    context: format!("state {k}"),
                    expected: n,
                    found: x.len(),
                });
            }
            if x.iter().any(|v| !v.finite()) {
                return Err(Error::InvalidInput(format!("state {k} has a non-finite entry")));
            }
        }
        for (k, u) in inputs.iter().enumerate() {
            if u.len() != m {
                return Err(Error::DimensionMismatch {
                    context: format!("input {k}"),
                    expected: m,
                    found: u.len(),
                });
            }
            if u.iter().any(|v| !v.finite()) {
                return Err(Error::InvalidInput(format!("input {k} has a non-finite entry")));
            }
        }
        Ok(Self { n, m, states, inputs })
    }

    /// Scalar-state, scalar-input convenience constructor.
    pub fn scalar(states: &[S], inputs: &[S]) -> Result<Self> {
        Self::new(
            states.iter().map(|&v| DVector::from_element(1, v)).collect(),
            inputs.iter().map(|&v| DVector::from_element(1, v)).collect(),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    /// Horizon `T` (number of inputs).
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn states(&self) -> &[DVector<S>] {
        &self.states
    }

    pub fn inputs(&self) -> &[DVector<S>] {
        &self.inputs
    }

    /// Re-expresses the trajectory relative to an equilibrium pair.
    pub fn to_deviation(&self, x_eq: &DVector<S>, u_eq: &DVector<S>) -> Self {
        Self {
            n: self.n,
            m: self.m,
            states: self.states.iter().map(|x| x - x_eq).collect(),
            inputs: self.inputs.iter().map(|u| u - u_eq).collect(),
        }
    }
}

/// The data matrices of one experiment, stored column-per-time-step.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrices<S: Scalar = f64> {
    pub u0: DMatrix<S>,
    pub x0: DMatrix<S>,
    pub x1: DMatrix<S>,
    /// Remainder block; only known when the plant is available as an oracle.
    pub d0: Option<DMatrix<S>>,
}

impl<S: Scalar> DataMatrices<S> {
    pub fn new(u0: DMatrix<S>, x0: DMatrix<S>, x1: DMatrix<S>) -> Result<Self> {
        let t = u0.ncols();
        if x0.ncols() != t || x1.ncols() != t {
            return Err(Error::DimensionMismatch {
                context: "data matrix column count".into(),
                expected: t,
                found: if x0.ncols() != t { x0.ncols() } else { x1.ncols() },
            });
        }
        if x0.nrows() != x1.nrows() {
            return Err(Error::DimensionMismatch {
                context: "X1 row count".into(),
                expected: x0.nrows(),
                found: x1.nrows(),
            });
        }
        Ok(Self { u0, x0, x1, d0: None })
    }

    pub fn with_remainder(mut self, d0: DMatrix<S>) -> Result<Self> {
        if d0.shape() != self.x1.shape() {
            return Err(Error::DimensionMismatch {
                context: "D0 shape".into(),
                expected: self.x1.nrows() * self.x1.ncols(),
                found: d0.nrows() * d0.ncols(),
            });
        }
        self.d0 = Some(d0);
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.x0.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u0.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.x0.ncols()
    }

    /// `[U0; X0]`.
    pub fn stacked_ux(&self) -> DMatrix<S> {
        vstack(&self.u0, &self.x0)
    }

    /// Every matrix multiplied by `factor`.
    pub fn scaled(&self, factor: S) -> Self {
        Self {
            u0: &self.u0 * factor,
            x0: &self.x0 * factor,
            x1: &self.x1 * factor,
            d0: self.d0.as_ref().map(|d| d * factor),
        }
    }
}

pub(crate) fn vstack<S: Scalar>(top: &DMatrix<S>, bottom: &DMatrix<S>) -> DMatrix<S> {
    debug_assert_eq!(top.ncols(), bottom.ncols());
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

pub(crate) fn columns<S: Scalar>(cols: &[DVector<S>], dim: usize) -> DMatrix<S> {
    let mut out = DMatrix::zeros(dim, cols.len());
    for (k, c) in cols.iter().enumerate() {
        out.set_column(k, c);
    }
    out
}

/// `U0`, `X0`, `X1` from a trajectory. `D0` is left absent.
pub fn build_data_matrices<S: Scalar>(traj: &Trajectory<S>) -> DataMatrices<S> {
    let t = traj.horizon();
    let n = traj.state_dim();
    DataMatrices {
        u0: columns(traj.inputs(), traj.input_dim()),
        x0: columns(&traj.states()[..t], n),
        x1: columns(&traj.states()[1..], n),
        d0: None,
    }
}

/// Block-Hankel matrix with `order` block rows; block `(i, j)` is `signal[i + j]`.
pub fn hankel_matrix<S: Scalar>(signal: &[DVector<S>], order: usize) -> Result<DMatrix<S>> {
    if order == 0 || signal.len() < order {
        return Err(Error::InvalidOrder { len: signal.len(), order });
    }
    let dim = signal[0].len();
    if let Some(bad) = signal.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch {
            context: "signal sample".into(),
            expected: dim,
            found: bad.len(),
        });
    }
    let cols = signal.len() - order + 1;
    let mut h = DMatrix::zeros(dim * order, cols);
    for i in 0..order {
        for j in 0..cols {
            h.view_mut((i * dim, j), (dim, 1)).copy_from(&signal[i + j]);
        }
    }
    Ok(h)
}

/// Singular spectrum and numerical rank of a matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankReport<S: Scalar = f64> {
    pub matrix_rows: usize,
    pub matrix_cols: usize,
    /// Descending.
    pub singular_values: Vec<S>,
    pub numerical_rank: usize,
    pub rank_tolerance: S,
    /// Smallest singular value above the tolerance, zero when the rank is 0.
    pub min_nonzero_sv: S,
}

impl<S: Scalar> RankReport<S> {
    pub fn full_row_rank(&self) -> bool {
        self.numerical_rank == self.matrix_rows
    }

    pub fn full_column_rank(&self) -> bool {
        self.numerical_rank == self.matrix_cols
    }

    /// Smallest of the `min(rows, cols)` singular values.
    pub fn sigma_min(&self) -> S {
        self.singular_values.last().copied().unwrap_or_else(S::zero)
    }
}

fn check_matrix<S: Scalar>(m: &DMatrix<S>) -> Result<()> {
    if m.is_empty() {
        return Err(Error::InvalidInput("matrix is empty".into()));
    }
    if m.iter().any(|v| !v.finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Singular values in descending order.
pub fn singular_values<S: Scalar>(m: &DMatrix<S>) -> Result<Vec<S>> {
    check_matrix(m)?;
    let mut sv: Vec<S> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(sv)
}

/// Numerical rank: the number of singular values strictly above
/// `rel_tol * max(sigma_1, eps)`.
pub fn numerical_rank<S: Scalar>(m: &DMatrix<S>, rel_tol: S) -> Result<RankReport<S>> {
    if !(rel_tol > S::zero()) {
        return Err(Error::InvalidInput(format!("rank tolerance must be positive, got {rel_tol}")));
    }
    let sv = singular_values(m)?;
    let top = sv.first().copied().unwrap_or_else(S::zero);
    let tol = rel_tol * top.max(S::machine_epsilon());
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let min_nonzero = if rank == 0 { S::zero() } else { sv[rank - 1] };
    Ok(RankReport {
        matrix_rows: m.nrows(),
        matrix_cols: m.ncols(),
        singular_values: sv,
        numerical_rank: rank,
        rank_tolerance: tol,
        min_nonzero_sv: min_nonzero,
    })
}

/// Smallest singular value. For a full-row-rank (or full-column-rank) matrix
/// this is the spectral-norm distance to the nearest rank-deficient matrix.
pub fn min_singular_value<S: Scalar>(m: &DMatrix<S>) -> Result<S> {
    Ok(singular_values(m)?.last().copied().unwrap_or_else(S::zero))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExcitationReport<S: Scalar = f64> {
    pub order: usize,
    pub persistently_exciting: bool,
    pub hankel: RankReport<S>,
}

/// Persistency of excitation of order `order`: the depth-`order` block-Hankel
/// matrix of the signal has full row rank.
pub fn is_persistently_exciting<S: Scalar>(
    inputs: &[DVector<S>],
    order: usize,
    rel_tol: S,
) -> Result<ExcitationReport<S>> {
    let h = hankel_matrix(inputs, order)?;
    let hankel = numerical_rank(&h, rel_tol)?;
    Ok(ExcitationReport { order, persistently_exciting: hankel.full_row_rank(), hankel })
}
