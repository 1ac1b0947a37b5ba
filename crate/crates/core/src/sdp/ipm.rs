//! Infeasible-start primal-dual path-following solver for [`LmiProblem`]s,
//! HKM search direction with Mehrotra predictor-corrector steps.
//!
//! Internally the problem is read as the dual of the standard-form pair
//!
//! ```text
//! (P)  min <C, X> + e'w   s.t.  -<F_i, X> + (E'w)_i = c_i,  X >= 0
//! (D)  max c'y            s.t.  Z = C + sum_i y_i F_i >= 0,  E y = e
//! ```
//!
//! with `C` the constant terms. Blocks are dense; the coefficient matrices
//! are sparse, which keeps the Schur-complement assembly cheap.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::sdp::lmi::{ConicSolver, LmiProblem, SolverOutput, SolverStatus};

/// Environment variable overriding the default stopping tolerance.
pub const SOLVER_TOL_ENV: &str = "DDSTAB_SOLVER_TOL";
pub const DEFAULT_SOLVER_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IpmSettings {
    /// Stop once the relative gap and all relative residuals are below this.
    pub tol: f64,
    /// Accept an iterate this accurate if progress stalls before `tol`.
    pub fallback_tol: f64,
    /// Threshold for declaring infeasibility or unboundedness.
    pub infeasibility_tol: f64,
    pub max_iterations: usize,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self { tol: DEFAULT_SOLVER_TOL, fallback_tol: 1e-6, infeasibility_tol: 1e-9, max_iterations: 100 }
    }
}

impl IpmSettings {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }

    /// Defaults, with `tol` taken from `DDSTAB_SOLVER_TOL` when set and valid.
    pub fn from_env() -> Self {
        Self::from_env_or(DEFAULT_SOLVER_TOL)
    }

    /// `tol` from `DDSTAB_SOLVER_TOL`, falling back to `default_tol`.
    pub fn from_env_or(default_tol: f64) -> Self {
        let tol = std::env::var(SOLVER_TOL_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|t| *t > 0.0 && t.is_finite())
            .unwrap_or(default_tol);
        Self::with_tol(tol)
    }
}

#[derive(Clone, Debug, Default)]
pub struct InteriorPointSolver {
    pub settings: IpmSettings,
}

impl InteriorPointSolver {
    pub fn new(settings: IpmSettings) -> Self {
        Self { settings }
    }
}

impl<S: Scalar> ConicSolver<S> for InteriorPointSolver {
    fn solve(&mut self, problem: &LmiProblem<S>) -> Result<SolverOutput<S>> {
        Ok(Ipm::new(problem, self.settings).run())
    }
}

type Blocks<S> = Vec<DMatrix<S>>;

struct Ipm<'a, S: Scalar> {
    p: &'a LmiProblem<S>,
    st: IpmSettings,
    norm_c: S,
    norm_b: S,
    norm_e: S,
    total_dim: S,
}

struct Iterate<S: Scalar> {
    x: Blocks<S>,
    z: Blocks<S>,
    y: DVector<S>,
    w: DVector<S>,
}

struct Residuals<S: Scalar> {
    rp: DVector<S>,
    rd: Blocks<S>,
    re: DVector<S>,
    pobj: S,
    dobj: S,
    gap: S,
    achieved: S,
}

struct Direction<S: Scalar> {
    dx: Blocks<S>,
    dz: Blocks<S>,
    dy: DVector<S>,
    dw: DVector<S>,
}

fn inner<S: Scalar>(a: &[DMatrix<S>], b: &[DMatrix<S>]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (x, y)| acc + x.dot(y))
}

fn frob<S: Scalar>(a: &[DMatrix<S>]) -> S {
    inner(a, a).sqrt()
}

fn sym<S: Scalar>(m: DMatrix<S>) -> DMatrix<S> {
    (&m + m.transpose()) * S::lit(0.5)
}

/// Largest step `t` with `x + t dx` PSD, given `x` positive definite.
fn max_step<S: Scalar>(x: &DMatrix<S>, dx: &DMatrix<S>) -> Option<S> {
    let chol = x.clone().cholesky()?;
    let l = chol.l();
    let a = l.solve_lower_triangular(dx)?;
    let w = l.solve_lower_triangular(&a.transpose())?;
    let lmin = SymmetricEigen::new(sym(w)).eigenvalues.iter().copied().fold(S::max_value()?, |a, b| a.min(b));
    Some(if lmin >= S::zero() { S::max_value()? } else { -S::one() / lmin })
}

fn cholesky_inverse<S: Scalar>(m: &DMatrix<S>) -> Option<DMatrix<S>> {
    m.clone().cholesky().map(|c| sym(c.inverse()))
}

impl<'a, S: Scalar> Ipm<'a, S> {
    fn new(p: &'a LmiProblem<S>, st: IpmSettings) -> Self {
        let norm_c = p.blocks.iter().fold(S::zero(), |a, b| a + b.constant().norm_squared()).sqrt();
        let total: usize = p.blocks.iter().map(|b| b.size()).sum();
        Self {
            p,
            st,
            norm_c,
            norm_b: p.objective.norm(),
            norm_e: p.eq_rhs.norm(),
            total_dim: S::from_usize(total.max(1)).unwrap(),
        }
    }

    /// `sum_i y_i F_i` per block.
    fn lin_map(&self, y: &DVector<S>) -> Blocks<S> {
        self.p
            .blocks
            .iter()
            .map(|b| {
                let mut out = DMatrix::zeros(b.size(), b.size());
                for (var, entries) in b.coefficients() {
                    let yi = y[*var];
                    if yi == S::zero() {
                        continue;
                    }
                    for &(r, c, v) in entries {
                        out[(r, c)] += yi * v;
                    }
                }
                out
            })
            .collect()
    }

    /// `(<F_i, G>)_i`, the adjoint of [`Self::lin_map`].
    fn adj_map(&self, g: &[DMatrix<S>]) -> DVector<S> {
        let mut out = DVector::zeros(self.p.num_vars);
        for (b, gb) in self.p.blocks.iter().zip(g) {
            for (var, entries) in b.coefficients() {
                let mut acc = S::zero();
                for &(r, c, v) in entries {
                    acc += v * gb[(r, c)];
                }
                out[*var] += acc;
            }
        }
        out
    }

    fn initial_point(&self) -> Iterate<S> {
        let ten = S::lit(10.0);
        let mut x = Vec::new();
        let mut z = Vec::new();
        for b in &self.p.blocks {
            let nb = S::from_usize(b.size()).unwrap();
            let mut xi = ten.max(nb.sqrt());
            let mut eta = ten.max(nb.sqrt()).max(b.constant().norm());
            for (var, entries) in b.coefficients() {
                let fnorm = entries.iter().fold(S::zero(), |a, e| a + e.2 * e.2).sqrt();
                xi = xi.max(nb * (S::one() + self.p.objective[*var].abs()) / (S::one() + fnorm));
                eta = eta.max(fnorm);
            }
            x.push(DMatrix::identity(b.size(), b.size()) * xi);
            z.push(DMatrix::identity(b.size(), b.size()) * eta);
        }
        Iterate { x, z, y: DVector::zeros(self.p.num_vars), w: DVector::zeros(self.p.eq_rhs.len()) }
    }

    fn residuals(&self, it: &Iterate<S>) -> Residuals<S> {
        let e = &self.p.eq_matrix;
        let rp = &self.p.objective + self.adj_map(&it.x) - e.transpose() * &it.w;
        let fy = self.lin_map(&it.y);
        let rd: Blocks<S> = self
            .p
            .blocks
            .iter()
            .zip(fy)
            .zip(&it.z)
            .map(|((b, f), z)| b.constant() + f - z)
            .collect();
        let re = &self.p.eq_rhs - e * &it.y;
        let consts: Blocks<S> = self.p.blocks.iter().map(|b| b.constant().clone()).collect();
        let pobj = inner(&consts, &it.x) + self.p.eq_rhs.dot(&it.w);
        let dobj = self.p.objective.dot(&it.y);
        let gap = inner(&it.x, &it.z);
        let one = S::one();
        let rel_gap = gap / (one + pobj.abs() + dobj.abs());
        let pinf = rp.norm() / (one + self.norm_b);
        let dinf = frob(&rd) / (one + self.norm_c);
        let einf = re.norm() / (one + self.norm_e);
        let achieved = rel_gap.max(pinf).max(dinf).max(einf);
        Residuals { rp, rd, re, pobj, dobj, gap, achieved }
    }

    /// Schur complement `M_ij = <F_i, X F_j Z^-1>`.
    fn schur_matrix(&self, it: &Iterate<S>, zinv: &[DMatrix<S>]) -> DMatrix<S> {
        let m = self.p.num_vars;
        let mut mat = DMatrix::zeros(m, m);
        for ((b, x), zi) in self.p.blocks.iter().zip(&it.x).zip(zinv) {
            let n = b.size();
            let mut g = DMatrix::<S>::zeros(n, n);
            for (j, ej) in b.coefficients() {
                g.fill(S::zero());
                for &(r, s, bv) in ej {
                    for q in 0..n {
                        let sv = bv * zi[(s, q)];
                        if sv == S::zero() {
                            continue;
                        }
                        let xcol = x.column(r);
                        let mut gcol = g.column_mut(q);
                        gcol.axpy(sv, &xcol, S::one());
                    }
                }
                for (i, ei) in b.coefficients() {
                    let mut acc = S::zero();
                    for &(p, q, a) in ei {
                        acc += a * g[(p, q)];
                    }
                    mat[(*i, *j)] += acc;
                }
            }
        }
        sym(mat)
    }

    /// Solves the Newton system for the HKM direction with complementarity
    /// target `rhs_c` (i.e. `X Z + dX Z + X dZ = rhs_c`).
    fn direction(
        &self,
        it: &Iterate<S>,
        res: &Residuals<S>,
        zinv: &[DMatrix<S>],
        m_chol: &Cholesky<S, Dyn>,
        k_chol: Option<&nalgebra::LU<S, Dyn, Dyn>>,
        rhs_c: &[DMatrix<S>],
    ) -> Option<Direction<S>> {
        // T = rhs_c Z^-1 - X - X Rd Z^-1
        let t: Blocks<S> = rhs_c
            .iter()
            .zip(zinv)
            .zip(&it.x)
            .zip(&res.rd)
            .map(|(((rc, zi), x), rd)| rc * zi - x - x * rd * zi)
            .collect();
        let h = &res.rp + self.adj_map(&t);
        let e = &self.p.eq_matrix;
        let (dy, dw) = if e.nrows() == 0 {
            (m_chol.solve(&h), DVector::zeros(0))
        } else {
            let minv_h = m_chol.solve(&h);
            let rhs = e * &minv_h - &res.re;
            let dw = k_chol?.solve(&rhs)?;
            let dy = m_chol.solve(&(h - e.transpose() * &dw));
            (dy, dw)
        };
        let fdy = self.lin_map(&dy);
        let dz: Blocks<S> = res.rd.iter().zip(fdy).map(|(rd, f)| rd + f).collect();
        let dx: Blocks<S> = rhs_c
            .iter()
            .zip(&it.x)
            .zip(&dz)
            .zip(zinv)
            .map(|(((rc, x), dz), zi)| sym(rc * zi - x - x * dz * zi))
            .collect();
        Some(Direction { dx, dz, dy, dw })
    }

    fn step_lengths(&self, it: &Iterate<S>, d: &Direction<S>) -> Option<(S, S)> {
        let mut ap = S::max_value()?;
        let mut ad = S::max_value()?;
        for k in 0..it.x.len() {
            ap = ap.min(max_step(&it.x[k], &d.dx[k])?);
            ad = ad.min(max_step(&it.z[k], &d.dz[k])?);
        }
        Some((ap, ad))
    }

    fn run(&self) -> SolverOutput<S> {
        let p = self.p;
        let mut it = self.initial_point();
        let mut best: Option<(S, DVector<S>)> = None;
        let mut iterations = 0;
        let mut step_factor = S::lit(0.9);
        let mut stalls = 0usize;
        let inf_tol = S::lit(self.st.infeasibility_tol);
        let tol = S::lit(self.st.tol);

        let finish = |status: SolverStatus, y: DVector<S>, achieved: S, iterations: usize, mult: Blocks<S>| {
            let y = project_equalities(p, y);
            SolverOutput { status, objective: p.objective.dot(&y), y, achieved_tolerance: achieved, iterations, multipliers: mult }
        };

        loop {
            let res = self.residuals(&it);
            if best.as_ref().is_none_or(|(a, _)| res.achieved < *a) {
                best = Some((res.achieved, it.y.clone()));
            }
            if res.achieved <= tol {
                return finish(SolverStatus::Optimal, it.y.clone(), res.achieved, iterations, it.x.clone());
            }
            // Farkas certificate for an empty feasible set: X >= 0 with
            // A(X) + E'w ~ 0 and <C, X> + e'w < 0.
            if res.pobj < S::zero() {
                let ax = &p.objective - &res.rp;
                if ax.norm() / (-res.pobj) < inf_tol && res.dobj.abs() < -res.pobj {
                    let scale = -S::one() / res.pobj;
                    let cert = it.x.iter().map(|x| x * scale).collect();
                    return finish(SolverStatus::Infeasible, it.y.clone(), res.achieved, iterations, cert);
                }
            }
            // Recession direction of the LMI along which c'y grows.
            if res.dobj > S::zero() && (self.norm_c + frob(&res.rd)) / res.dobj < inf_tol {
                return finish(SolverStatus::Unbounded, it.y.clone(), res.achieved, iterations, Vec::new());
            }
            if iterations >= self.st.max_iterations || stalls >= 5 {
                break;
            }
            iterations += 1;

            let Some(zinv) = it.z.iter().map(cholesky_inverse).collect::<Option<Blocks<S>>>() else {
                break;
            };
            let mut mmat = self.schur_matrix(&it, &zinv);
            let m_chol = match mmat.clone().cholesky() {
                Some(c) => c,
                None => {
                    let diag_max = mmat.diagonal().iter().copied().fold(S::zero(), |a, b| a.max(b.abs()));
                    let reg = S::lit(1e-13) * diag_max.max(S::one());
                    for i in 0..mmat.nrows() {
                        mmat[(i, i)] += reg;
                    }
                    match mmat.clone().cholesky() {
                        Some(c) => c,
                        None => break,
                    }
                }
            };
            let e = &p.eq_matrix;
            let k_lu = if e.nrows() > 0 {
                let mut minv_et = e.transpose();
                m_chol.solve_mut(&mut minv_et);
                Some((e * minv_et).lu())
            } else {
                None
            };

            let mu = res.gap / self.total_dim;
            let pred_rhs: Blocks<S> = it.x.iter().map(|x| DMatrix::zeros(x.nrows(), x.ncols())).collect();
            let Some(pred) = self.direction(&it, &res, &zinv, &m_chol, k_lu.as_ref(), &pred_rhs) else {
                break;
            };
            let Some((ap, ad)) = self.step_lengths(&it, &pred) else { break };
            let ap = ap.min(S::one());
            let ad = ad.min(S::one());
            let mut mu_aff = S::zero();
            for k in 0..it.x.len() {
                let xa = &it.x[k] + &pred.dx[k] * ap;
                let za = &it.z[k] + &pred.dz[k] * ad;
                mu_aff += xa.dot(&za);
            }
            mu_aff /= self.total_dim;
            let expon = S::one().max(S::lit(3.0) * ap.min(ad) * ap.min(ad));
            let sigma = (mu_aff / mu).max(S::zero()).min(S::one()).powf(expon);

            let corr_rhs: Blocks<S> = it
                .x
                .iter()
                .zip(pred.dx.iter().zip(&pred.dz))
                .map(|(x, (dx, dz))| {
                    DMatrix::identity(x.nrows(), x.ncols()) * (sigma * mu) - dx * dz
                })
                .collect();
            let Some(dir) = self.direction(&it, &res, &zinv, &m_chol, k_lu.as_ref(), &corr_rhs) else {
                break;
            };
            let Some((ap, ad)) = self.step_lengths(&it, &dir) else { break };
            let mut ap = (step_factor * ap).min(S::one());
            let mut ad = (step_factor * ad).min(S::one());

            let mut accepted = false;
            for _ in 0..20 {
                let x_new: Blocks<S> = it.x.iter().zip(&dir.dx).map(|(x, d)| x + d * ap).collect();
                let z_new: Blocks<S> = it.z.iter().zip(&dir.dz).map(|(z, d)| z + d * ad).collect();
                if x_new.iter().chain(&z_new).all(|m| m.clone().cholesky().is_some()) {
                    it.x = x_new;
                    it.z = z_new;
                    it.y += &dir.dy * ad;
                    it.w += &dir.dw * ap;
                    accepted = true;
                    break;
                }
                ap *= S::lit(0.8);
                ad *= S::lit(0.8);
            }
            if !accepted {
                break;
            }
            if ap.min(ad) < S::lit(1e-8) {
                stalls += 1;
            } else {
                stalls = 0;
            }
            step_factor = S::lit(0.9) + S::lit(0.09) * ap.min(ad);
        }

        let (achieved, y) = best.unwrap_or((S::max_value().unwrap(), it.y.clone()));
        let status = if achieved <= S::lit(self.st.fallback_tol) {
            SolverStatus::Optimal
        } else {
            SolverStatus::NumericalFailure
        };
        finish(status, y, achieved, iterations, it.x)
    }
}

/// Orthogonal projection of `y` onto `{E y = e}`.
fn project_equalities<S: Scalar>(p: &LmiProblem<S>, y: DVector<S>) -> DVector<S> {
    let e = &p.eq_matrix;
    if e.nrows() == 0 {
        return y;
    }
    let r = e * &y - &p.eq_rhs;
    match (e * e.transpose()).lu().solve(&r) {
        Some(v) => y - e.transpose() * v,
        None => y,
    }
}
