//! Certification of the data: full-row-rank conditions on `[U0; X0]` and
//! `X1`, the tightest constant `gamma` with `D0 D0' <= gamma X1 X1'`, and the
//! propagated-remainder matrices `Xi`, `Psi` separating nonlinear data from
//! the data the linearized plant would have produced.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::datamat::{numerical_rank, singular_values, DataMatrices, RankReport};
use crate::error::{Error, Result};
use crate::plant::LinearizationPair;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertReport<S: Scalar = f64> {
    pub assumption1_holds: bool,
    #[serde(rename = "rank_UX")]
    pub rank_ux: RankReport<S>,
    #[serde(rename = "rank_X1")]
    pub rank_x1: RankReport<S>,
    /// Only available when `D0` is known.
    pub gamma_min: Option<S>,
    /// A ridge was added to `X1 X1'` to compute `gamma_min`.
    pub gamma_ridge_applied: bool,
    pub alpha: Option<S>,
    /// `gamma_min < alpha^2 / (4 + 2 alpha)`; needs both quantities.
    pub gamma_condition_holds: Option<bool>,
    #[serde(rename = "margin_UX")]
    pub margin_ux: S,
    #[serde(rename = "margin_X1")]
    pub margin_x1: S,
}

impl<S: Scalar> CertReport<S> {
    /// Both data conditions hold and the gamma condition is verified.
    pub fn fully_certified(&self) -> bool {
        self.assumption1_holds && self.gamma_condition_holds == Some(true)
    }
}

/// Rank and margin part of the certificate; gamma fields are left empty.
pub fn check_assumption1<S: Scalar>(dm: &DataMatrices<S>, rel_tol: S) -> Result<CertReport<S>> {
    let rank_ux = numerical_rank(&dm.stacked_ux(), rel_tol)?;
    let rank_x1 = numerical_rank(&dm.x1, rel_tol)?;
    Ok(CertReport {
        assumption1_holds: rank_ux.full_row_rank() && rank_x1.full_row_rank(),
        margin_ux: rank_ux.sigma_min(),
        margin_x1: rank_x1.sigma_min(),
        rank_ux,
        rank_x1,
        gamma_min: None,
        gamma_ridge_applied: false,
        alpha: None,
        gamma_condition_holds: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaMin<S: Scalar = f64> {
    pub value: S,
    pub ridge_applied: bool,
}

/// Smallest `gamma >= 0` with `D0 D0' <= gamma X1 X1'`: the largest
/// generalized eigenvalue of the pencil `(D0 D0', X1 X1')`, computed by
/// whitening with the Cholesky factor of `X1 X1'`.
pub fn gamma_min_detailed<S: Scalar>(dm: &DataMatrices<S>, rel_tol: S) -> Result<GammaMin<S>> {
    let d0 = dm.d0.as_ref().ok_or(Error::OracleRequired)?;
    let rank = numerical_rank(&dm.x1, rel_tol)?;
    if !rank.full_row_rank() {
        return Err(Error::NoFiniteGamma { rank: rank.numerical_rank, rows: rank.matrix_rows });
    }
    let g = &dm.x1 * dm.x1.transpose();
    let h = d0 * d0.transpose();
    let (chol, ridge_applied) = match g.clone().cholesky() {
        Some(c) => (c, false),
        None => {
            let ridge = S::lit(1e-12) * g.trace();
            let n = g.nrows();
            let c = (g + DMatrix::identity(n, n) * ridge)
                .cholesky()
                .ok_or(Error::NoFiniteGamma { rank: rank.numerical_rank, rows: rank.matrix_rows })?;
            (c, true)
        }
    };
    let l = chol.l();
    // W = L^-1 H L^-T
    let y = l.solve_lower_triangular(&h).expect("Cholesky factor is nonsingular");
    let w = l.solve_lower_triangular(&y.transpose()).expect("Cholesky factor is nonsingular");
    let w = (&w + w.transpose()) * S::lit(0.5);
    let top = SymmetricEigen::new(w).eigenvalues.iter().copied().fold(S::zero(), |a, b| a.max(b));
    Ok(GammaMin { value: top.max(S::zero()), ridge_applied })
}

pub fn gamma_min<S: Scalar>(dm: &DataMatrices<S>) -> Result<S> {
    Ok(gamma_min_detailed(dm, S::lit(crate::datamat::DEFAULT_RANK_TOL))?.value)
}

/// `alpha^2 / (4 + 2 alpha)`.
pub fn gamma_threshold<S: Scalar>(alpha: S) -> S {
    alpha * alpha / (S::lit(4.0) + S::lit(2.0) * alpha)
}

/// `gamma < alpha^2 / (4 + 2 alpha)`.
pub fn check_gamma_condition<S: Scalar>(gamma: S, alpha: S) -> Result<bool> {
    if !(alpha > S::zero()) {
        return Err(Error::InvalidAlpha(alpha.as_f64()));
    }
    if !(gamma >= S::zero()) {
        return Err(Error::InvalidInput(format!("gamma must be non-negative, got {gamma}")));
    }
    Ok(gamma < gamma_threshold(alpha))
}

/// Full certificate. `alpha` is the optimal value of the design program when
/// available; gamma quantities require `D0`.
pub fn certify<S: Scalar>(dm: &DataMatrices<S>, alpha: Option<S>, rel_tol: S) -> Result<CertReport<S>> {
    let mut report = check_assumption1(dm, rel_tol)?;
    report.alpha = alpha;
    if dm.d0.is_some() && report.rank_x1.full_row_rank() {
        let g = gamma_min_detailed(dm, rel_tol)?;
        report.gamma_min = Some(g.value);
        report.gamma_ridge_applied = g.ridge_applied;
        if let Some(a) = alpha.filter(|a| *a > S::zero()) {
            report.gamma_condition_holds = Some(check_gamma_condition(g.value, a)?);
        }
    }
    Ok(report)
}

/// Remainders propagated through the linear dynamics:
/// `Xi[:, k] = sum_{i<k} A^(k-1-i) d(i)` and `Psi[:, k] = Xi[:, k+1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct XiPsi<S: Scalar = f64> {
    pub xi: DMatrix<S>,
    pub psi: DMatrix<S>,
}

pub fn build_xi_psi<S: Scalar>(dm: &DataMatrices<S>, lin: &LinearizationPair<S>) -> Result<XiPsi<S>> {
    let d0 = dm.d0.as_ref().ok_or(Error::OracleRequired)?;
    let n = dm.state_dim();
    if lin.state_dim() != n {
        return Err(Error::DimensionMismatch {
            context: "linearization state dimension".into(),
            expected: n,
            found: lin.state_dim(),
        });
    }
    let t = dm.horizon();
    let mut ext = DMatrix::zeros(n, t + 1);
    for k in 0..t {
        let next = &lin.a * ext.column(k) + d0.column(k);
        ext.set_column(k + 1, &next);
    }
    Ok(XiPsi { xi: ext.columns(0, t).into_owned(), psi: ext.columns(1, t).into_owned() })
}

/// Perturbation-margin diagnostics for a scaled experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MarginCheck<S: Scalar = f64> {
    /// `|Xi| < eps * sigma_min` in the spectral norm.
    pub holds: bool,
    pub spectral_norm: S,
    /// Upper bound on the spectral norm, reported for reference.
    pub frobenius_norm: S,
    /// `eps * sigma_min` of the unscaled linearized `[U0; X0]`.
    pub bound: S,
    /// `|Xi| / eps`.
    pub ratio: S,
}

pub fn xi_margin_check<S: Scalar>(xi: &XiPsi<S>, lin_data_min_sv: S, epsilon: S) -> Result<MarginCheck<S>> {
    if !(epsilon > S::zero()) {
        return Err(Error::InvalidScale(epsilon.as_f64()));
    }
    let spectral = singular_values(&xi.xi)?.first().copied().unwrap_or_else(S::zero);
    let bound = epsilon * lin_data_min_sv;
    Ok(MarginCheck {
        holds: spectral < bound,
        spectral_norm: spectral,
        frobenius_norm: xi.xi.norm(),
        bound,
        ratio: spectral / epsilon,
    })
}
