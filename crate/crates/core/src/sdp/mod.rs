//! The controller-design semidefinite program
//!
//! ```text
//! maximize alpha  over (Q, alpha)
//!   [ X0 Q - alpha X1 X1'   X1 Q  ]          [ I_T   Q    ]
//!   [ Q' X1'                X0 Q  ]  >= 0,   [ Q'    X0 Q ]  >= 0,
//!   X0 Q = (X0 Q)',  alpha >= 1e-12
//! ```
//!
//! and extraction of the gain `K = U0 Q (X0 Q)^-1`.
//!
//! The program is homogeneous in the data: scaling all data by `s` maps a
//! solution `(Q, alpha)` to `(s Q, alpha)`. The solver therefore always sees
//! data normalized to unit spectral norm, and `Q` is rescaled afterwards.

pub mod ipm;
pub mod lmi;

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::datamat::{singular_values, vstack, DataMatrices};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use ipm::{InteriorPointSolver, IpmSettings};
pub use lmi::{ConicSolver, LmiBlock, LmiProblem, SolverOutput, SolverStatus};

/// Lower bound on `alpha`.
pub const ALPHA_FLOOR: f64 = 1e-12;
/// Relative conditioning threshold for inverting `X0 Q`.
pub const EXTRACTION_RCOND: f64 = 1e-9;

pub(crate) fn min_eigenvalue<S: Scalar>(m: &DMatrix<S>) -> S {
    let sym = (m + m.transpose()) * S::lit(0.5);
    SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(S::max_value().unwrap(), |a, b| a.min(b))
}

fn sym<S: Scalar>(m: &DMatrix<S>) -> DMatrix<S> {
    (m + m.transpose()) * S::lit(0.5)
}

/// Assembled design program for one data set.
#[derive(Clone, Debug)]
pub struct DesignProblem<S: Scalar = f64> {
    pub data: DataMatrices<S>,
    /// Normalization: the solver works on `data / scale`.
    pub scale: S,
    pub lmi: LmiProblem<S>,
}

impl<S: Scalar> DesignProblem<S> {
    pub fn state_dim(&self) -> usize {
        self.data.state_dim()
    }

    pub fn horizon(&self) -> usize {
        self.data.horizon()
    }

    /// Sizes of the two matrix inequalities, `(2n, T + n)`.
    pub fn block_sizes(&self) -> (usize, usize) {
        (self.lmi.blocks[0].size(), self.lmi.blocks[1].size())
    }

    /// Index of `Q[t, j]` in the solver's variable vector (`alpha` is last).
    pub fn q_index(&self, t: usize, j: usize) -> usize {
        j * self.horizon() + t
    }

    /// Splits a solver vector into `(Q, alpha)` in the original data scale.
    pub fn unpack(&self, y: &DVector<S>) -> (DMatrix<S>, S) {
        let (n, t) = (self.state_dim(), self.horizon());
        let q = DMatrix::from_fn(t, n, |r, c| y[c * t + r] * self.scale);
        (q, y[n * t])
    }
}

/// Builds the design program. Assumption 1 is not checked here; rank
/// deficient data simply surface as infeasible or degenerate solves.
pub fn build_design<S: Scalar>(dm: &DataMatrices<S>) -> Result<DesignProblem<S>> {
    let (n, t) = (dm.state_dim(), dm.horizon());
    if n == 0 || t == 0 {
        return Err(Error::InvalidInput("data matrices are empty".into()));
    }
    if dm.x1.shape() != (n, t) || dm.u0.ncols() != t {
        return Err(Error::DimensionMismatch {
            context: "design data".into(),
            expected: t,
            found: dm.x1.ncols(),
        });
    }
    if dm.x0.iter().chain(dm.x1.iter()).chain(dm.u0.iter()).any(|v| !v.finite()) {
        return Err(Error::InvalidInput("design data have non-finite entries".into()));
    }
    let top = singular_values(&vstack(&dm.x0, &dm.x1))?[0];
    let scale = if top > S::zero() { top } else { S::one() };
    let x0 = &dm.x0 / scale;
    let x1 = &dm.x1 / scale;

    let nvars = n * t + 1;
    let alpha_idx = n * t;
    let mut objective = DVector::zeros(nvars);
    objective[alpha_idx] = S::one();

    let half = S::lit(0.5);
    // sym(X0 E_tj) for the unit matrix E_tj at entry (t, j) of Q.
    let sym_x0 = |tt: usize, j: usize| {
        let mut m = DMatrix::zeros(n, n);
        for r in 0..n {
            m[(r, j)] += half * x0[(r, tt)];
            m[(j, r)] += half * x0[(r, tt)];
        }
        m
    };

    let mut first = LmiBlock::new(DMatrix::zeros(2 * n, 2 * n))?;
    let mut second = LmiBlock::new({
        let mut c = DMatrix::zeros(t + n, t + n);
        c.view_mut((0, 0), (t, t)).fill_with_identity();
        c
    })?;
    for j in 0..n {
        for tt in 0..t {
            let var = j * t + tt;
            let sx = sym_x0(tt, j);

            let mut f1 = DMatrix::zeros(2 * n, 2 * n);
            f1.view_mut((0, 0), (n, n)).copy_from(&sx);
            f1.view_mut((n, n), (n, n)).copy_from(&sx);
            for r in 0..n {
                f1[(r, n + j)] = x1[(r, tt)];
                f1[(n + j, r)] = x1[(r, tt)];
            }
            first.add_coefficient(var, &f1)?;

            let mut f2 = DMatrix::zeros(t + n, t + n);
            f2[(tt, t + j)] = S::one();
            f2[(t + j, tt)] = S::one();
            f2.view_mut((t, t), (n, n)).copy_from(&sx);
            second.add_coefficient(var, &f2)?;
        }
    }
    let mut fa = DMatrix::zeros(2 * n, 2 * n);
    fa.view_mut((0, 0), (n, n)).copy_from(&-(&x1 * x1.transpose()));
    first.add_coefficient(alpha_idx, &fa)?;

    let mut floor = LmiBlock::new(DMatrix::from_element(1, 1, -S::lit(ALPHA_FLOOR)))?;
    floor.add_coefficient(alpha_idx, &DMatrix::from_element(1, 1, S::one()))?;

    // (X0 Q)[r, c] - (X0 Q)[c, r] = 0 for r < c
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|r| (r + 1..n).map(move |c| (r, c))).collect();
    let mut e = DMatrix::zeros(pairs.len(), nvars);
    for (row, &(r, c)) in pairs.iter().enumerate() {
        for tt in 0..t {
            e[(row, c * t + tt)] += x0[(r, tt)];
            e[(row, r * t + tt)] -= x0[(c, tt)];
        }
    }
    let rows = pairs.len();
    let mut lmi = LmiProblem::new(objective).with_equalities(e, DVector::zeros(rows))?;
    lmi.push_block(first)?;
    lmi.push_block(second)?;
    lmi.push_block(floor)?;
    Ok(DesignProblem { data: dm.clone(), scale, lmi })
}

/// Outcome of the design program. An unbounded program, or an optimum whose
/// alpha is not resolved away from zero, counts as a numerical failure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Clone, Debug)]
pub struct DesignResult<S: Scalar = f64> {
    pub q: DMatrix<S>,
    pub alpha: S,
    /// Present when the status is optimal.
    pub k: Option<DMatrix<S>>,
    /// Smallest eigenvalue of `sym(X0 Q)`.
    pub xq_min_eig: S,
    pub status: DesignStatus,
    pub solve_time_s: f64,
    pub solver_iterations: usize,
    pub achieved_tolerance: S,
    /// Primal multipliers returned by the adapter; a Farkas certificate for
    /// an infeasible program.
    pub certificate: Option<Vec<DMatrix<S>>>,
}

/// Solves the program and extracts the controller.
pub fn solve_design<S: Scalar, A: ConicSolver<S> + ?Sized>(
    prob: &DesignProblem<S>,
    adapter: &mut A,
) -> Result<DesignResult<S>> {
    let start = Instant::now();
    let out = adapter.solve(&prob.lmi)?;
    let elapsed = start.elapsed().as_secs_f64();
    let (q, alpha) = prob.unpack(&out.y);
    let xq_min_eig = min_eigenvalue(&(&prob.data.x0 * &q));
    let status = match out.status {
        // an alpha within solver accuracy of zero certifies nothing
        SolverStatus::Optimal if !alpha_resolved(alpha, out.achieved_tolerance) => DesignStatus::NumericalFailure,
        SolverStatus::Optimal => DesignStatus::Optimal,
        SolverStatus::Infeasible => DesignStatus::Infeasible,
        SolverStatus::Unbounded | SolverStatus::NumericalFailure => DesignStatus::NumericalFailure,
    };
    let k = if status == DesignStatus::Optimal {
        Some(extract_controller(&prob.data, &q)?)
    } else {
        None
    };
    let certificate = (status == DesignStatus::Infeasible).then(|| out.multipliers.clone());
    Ok(DesignResult {
        q,
        alpha,
        k,
        xq_min_eig,
        status,
        solve_time_s: elapsed,
        solver_iterations: out.iterations,
        achieved_tolerance: out.achieved_tolerance,
        certificate,
    })
}

/// `alpha` lies above both the floor and the accuracy of the solve.
fn alpha_resolved<S: Scalar>(alpha: S, achieved_tol: S) -> bool {
    alpha >= S::lit(ALPHA_FLOOR) && alpha > achieved_tol
}

/// Builds and solves with the default interior-point solver.
pub fn design_controller<S: Scalar>(dm: &DataMatrices<S>, settings: IpmSettings) -> Result<DesignResult<S>> {
    let prob = build_design(dm)?;
    solve_design(&prob, &mut InteriorPointSolver::new(settings))
}

/// `(X0 Q)^-1`, refusing near-singular products.
fn invert_xq<S: Scalar>(dm: &DataMatrices<S>, q: &DMatrix<S>) -> Result<DMatrix<S>> {
    if q.nrows() != dm.horizon() || q.ncols() != dm.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "Q shape (T x n)".into(),
            expected: dm.horizon() * dm.state_dim(),
            found: q.nrows() * q.ncols(),
        });
    }
    let p = &dm.x0 * q;
    let sv = singular_values(&p)?;
    let (max_sv, min_sv) = (sv[0], *sv.last().unwrap());
    if !(max_sv > S::zero()) || min_sv <= S::lit(EXTRACTION_RCOND) * max_sv {
        return Err(Error::Extraction { min_sv: min_sv.as_f64(), max_sv: max_sv.as_f64() });
    }
    p.try_inverse()
        .ok_or(Error::Extraction { min_sv: min_sv.as_f64(), max_sv: max_sv.as_f64() })
}

/// `K = U0 Q (X0 Q)^-1`.
pub fn extract_controller<S: Scalar>(dm: &DataMatrices<S>, q: &DMatrix<S>) -> Result<DMatrix<S>> {
    let inv = invert_xq(dm, q)?;
    Ok(&dm.u0 * q * inv)
}

/// `X1 Q (X0 Q)^-1`; equals `A + B K` for noise-free linear data.
pub fn closed_loop_matrix<S: Scalar>(dm: &DataMatrices<S>, q: &DMatrix<S>) -> Result<DMatrix<S>> {
    let inv = invert_xq(dm, q)?;
    Ok(&dm.x1 * q * inv)
}

/// Smallest eigenvalues of the two matrix inequalities at `(Q, alpha)`,
/// evaluated on the original data with `X0 Q` symmetrized.
pub fn lmi_min_eigenvalues<S: Scalar>(dm: &DataMatrices<S>, q: &DMatrix<S>, alpha: S) -> (S, S) {
    let (n, t) = (dm.state_dim(), dm.horizon());
    let p = sym(&(&dm.x0 * q));
    let x1q = &dm.x1 * q;
    let mut b1 = DMatrix::zeros(2 * n, 2 * n);
    b1.view_mut((0, 0), (n, n)).copy_from(&(&p - &dm.x1 * dm.x1.transpose() * alpha));
    b1.view_mut((0, n), (n, n)).copy_from(&x1q);
    b1.view_mut((n, 0), (n, n)).copy_from(&x1q.transpose());
    b1.view_mut((n, n), (n, n)).copy_from(&p);
    let mut b2 = DMatrix::zeros(t + n, t + n);
    b2.view_mut((0, 0), (t, t)).fill_with_identity();
    b2.view_mut((0, t), (t, n)).copy_from(q);
    b2.view_mut((t, 0), (n, t)).copy_from(&q.transpose());
    b2.view_mut((t, t), (n, n)).copy_from(&p);
    (min_eigenvalue(&b1), min_eigenvalue(&b2))
}

/// Smallest eigenvalue of `I_T - Q (X0 Q)^-1 Q'`, the Schur complement form
/// of the second inequality. Requires `sym(X0 Q)` positive definite.
pub fn schur_form_min_eigenvalue<S: Scalar>(dm: &DataMatrices<S>, q: &DMatrix<S>) -> Result<S> {
    let p = sym(&(&dm.x0 * q));
    let chol = p.cholesky().ok_or_else(|| {
        Error::InvalidInput("X0 Q is not positive definite; Schur form undefined".into())
    })?;
    let t = dm.horizon();
    let m = DMatrix::identity(t, t) - q * chol.solve(&q.transpose());
    Ok(min_eigenvalue(&m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamat::build_data_matrices;
    use crate::experiment::{adversarial_theta_input, run_experiment};
    use crate::plant::{simulate, LinearPlant, ScalarQuadratic};

    fn scalar_linear_data() -> DataMatrices<f64> {
        // x+ = u
        let plant = LinearPlant::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        let inputs: Vec<_> = [1.0, -0.5, 0.8, 0.3].iter().map(|&u| DVector::from_element(1, u)).collect();
        build_data_matrices(&simulate(&plant, &DVector::from_element(1, 0.2), &inputs).unwrap())
    }

    #[test]
    fn block_shapes() {
        let dm = run_experiment(&ScalarQuadratic, &adversarial_theta_input(0.1f64), false).unwrap().data;
        let p = build_design(&dm).unwrap();
        assert_eq!(p.block_sizes(), (2, 4));
        assert_eq!(p.lmi.num_vars, 4);
        assert_eq!(p.lmi.eq_matrix.nrows(), 0);
    }

    #[test]
    fn scalar_linear_design() {
        let dm = scalar_linear_data();
        let res = design_controller(&dm, IpmSettings::with_tol(1e-10)).unwrap();
        assert_eq!(res.status, DesignStatus::Optimal);
        assert!(res.alpha > 0.0);
        let k = res.k.as_ref().unwrap()[(0, 0)];
        assert!(k.abs() < 1.0, "closed loop |0 + 1*K| = {}", k.abs());
        let (l1, l2) = lmi_min_eigenvalues(&dm, &res.q, res.alpha);
        assert!(l1 > -1e-7 && l2 > -1e-7);
        let m = closed_loop_matrix(&dm, &res.q).unwrap();
        assert!((m[(0, 0)] - k).abs() < 1e-8);
    }

    #[test]
    fn zero_data_is_degenerate() {
        let z: DataMatrices<f64> = DataMatrices::new(DMatrix::zeros(1, 3), DMatrix::zeros(1, 3), DMatrix::zeros(1, 3)).unwrap();
        let p = build_design(&z).unwrap();
        assert_eq!(p.block_sizes(), (2, 4));
        let res = solve_design(&p, &mut InteriorPointSolver::default()).unwrap();
        assert_ne!(res.status, DesignStatus::Optimal);
        assert!(res.k.is_none());
    }

    #[test]
    fn extraction() {
        let dm = scalar_linear_data();
        // Q with X0 Q = 1
        let x0 = dm.x0.clone();
        let q = x0.transpose() / x0.norm_squared();
        let k = extract_controller(&dm, &q).unwrap();
        assert!((k - &dm.u0 * &q).abs().max() < 1e-14);
        assert!(matches!(extract_controller(&dm, &DMatrix::zeros(4, 1)), Err(Error::Extraction { .. })));
        assert!(matches!(closed_loop_matrix(&dm, &DMatrix::zeros(4, 1)), Err(Error::Extraction { .. })));
        assert!(matches!(extract_controller(&dm, &DMatrix::zeros(3, 1)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn adversarial_data_gives_no_stabilizer() {
        // U0 = X0 on the theta data, so U0 Q (X0 Q)^-1 collapses to 1 and the
        // true closed loop 0 + 1 * 1 is not asymptotically stable.
        let dm = run_experiment(&ScalarQuadratic, &adversarial_theta_input(0.1f64), false).unwrap().data;
        let p = build_design(&dm).unwrap();
        match solve_design(&p, &mut InteriorPointSolver::new(IpmSettings::with_tol(1e-10))) {
            Ok(res) => {
                if let Some(k) = res.k {
                    assert!((k[(0, 0)] - 1.0).abs() < 1e-6, "K = {k}");
                }
            }
            Err(Error::Extraction { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
