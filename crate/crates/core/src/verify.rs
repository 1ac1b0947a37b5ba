//! Closed-loop checks and the epsilon sweep.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::certify::certify;
use crate::datamat::{DataMatrices, DEFAULT_RANK_TOL};
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, scale_experiment, ExperimentSpec};
use crate::plant::{LinearizationPair, Plant};
use crate::scalar::Scalar;
use crate::sdp::{build_design, solve_design, ConicSolver, DesignStatus, InteriorPointSolver, IpmSettings};

/// Largest eigenvalue modulus of `A + B K`.
pub fn spectral_radius_closed_loop<S: Scalar>(lin: &LinearizationPair<S>, k: &DMatrix<S>) -> Result<S> {
    if k.shape() != (lin.input_dim(), lin.state_dim()) {
        return Err(Error::DimensionMismatch {
            context: "gain K (m x n)".into(),
            expected: lin.input_dim() * lin.state_dim(),
            found: k.nrows() * k.ncols(),
        });
    }
    Ok(spectral_radius(&lin.closed_loop(k)))
}

pub fn spectral_radius<S: Scalar>(m: &DMatrix<S>) -> S {
    m.complex_eigenvalues().iter().map(|z| (z.re * z.re + z.im * z.im).sqrt()).fold(S::zero(), |a, b| a.max(b))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SimSettings {
    pub radius: f64,
    pub trials: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self { radius: 0.05, trials: 20, horizon: 200, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StabilityCheck {
    pub stable: bool,
    /// Largest `|x(h) - xe| / |x(0) - xe|` over the trials; infinite if any
    /// trajectory diverged.
    pub worst_ratio: f64,
    pub diverged: usize,
}

/// Simulates `x+ = f(x, ue + K (x - xe))` from initial states drawn uniformly
/// in the ball of the given radius around `xe`. Stable iff every trajectory
/// contracts by a factor of ten over the horizon.
pub fn simulate_closed_loop_stability<S: Scalar, P: Plant<S> + ?Sized>(
    plant: &P,
    k: &DMatrix<S>,
    settings: SimSettings,
) -> Result<StabilityCheck> {
    if !(settings.radius > 0.0) || !settings.radius.is_finite() {
        return Err(Error::InvalidInput(format!("radius must be positive, got {}", settings.radius)));
    }
    let (xe, ue) = plant.equilibrium();
    let (n, m) = (xe.len(), ue.len());
    if k.shape() != (m, n) {
        return Err(Error::DimensionMismatch { context: "gain K (m x n)".into(), expected: m * n, found: k.len() });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(settings.seed);
    let mut worst = 0.0f64;
    let mut diverged = 0;
    for _ in 0..settings.trials {
        let dir = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
        let r = settings.radius * rng.random::<f64>().powf(1.0 / n as f64);
        let start = dir.normalize() * r;
        let dx0: DVector<S> = start.map(S::lit);
        let n0 = dx0.norm();
        if n0 == S::zero() {
            continue;
        }
        let mut x = &xe + &dx0;
        let mut ok = true;
        for _ in 0..settings.horizon {
            let u = &ue + k * (&x - &xe);
            x = plant.step(&x, &u);
            if x.iter().any(|v| !v.finite()) {
                ok = false;
                break;
            }
        }
        if !ok {
            diverged += 1;
            worst = f64::INFINITY;
            continue;
        }
        worst = worst.max(((&x - &xe).norm() / n0).as_f64());
    }
    Ok(StabilityCheck { stable: worst <= 0.1, worst_ratio: worst, diverged })
}

/// `(K, alpha)` of the linearized-data design.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference<S: Scalar = f64> {
    pub k: DMatrix<S>,
    pub alpha: S,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow<S: Scalar = f64> {
    pub epsilon: S,
    pub status: Option<DesignStatus>,
    pub alpha: Option<S>,
    pub k: Option<DMatrix<S>>,
    pub gamma_min: Option<S>,
    pub assumption1: bool,
    pub gamma_condition: Option<bool>,
    pub spectral_radius: Option<S>,
    pub sim_stable: bool,
    pub k_dist: Option<S>,
    pub alpha_dist: Option<S>,
    /// Set when the row could not be completed.
    pub error: Option<String>,
}

impl<S: Scalar> SweepRow<S> {
    fn failed(epsilon: S, err: String) -> Self {
        Self {
            epsilon,
            status: None,
            alpha: None,
            k: None,
            gamma_min: None,
            assumption1: false,
            gamma_condition: None,
            spectral_radius: None,
            sim_stable: false,
            k_dist: None,
            alpha_dist: None,
            error: Some(err),
        }
    }

    /// Closed-loop stability observed: simulation passes and, when the
    /// linearization is known, the spectral radius is below one.
    pub fn stability_achieved(&self) -> bool {
        self.sim_stable && self.spectral_radius.is_none_or(|r| r < S::one())
    }

    /// Assumption 1 and the gamma condition both verified.
    pub fn fully_certified(&self) -> bool {
        self.assumption1 && self.gamma_condition == Some(true)
    }
}

/// Solver tolerance for sweeps. `alpha_dist` reaches 1e-9 at small `eps`,
/// below what the general default resolves.
pub const SWEEP_SOLVER_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct SweepOptions<S: Scalar = f64> {
    /// Use the plant's linearization: fills `D0`, gamma and the reference.
    pub oracle: bool,
    pub reference: Option<Reference<S>>,
    pub solver: IpmSettings,
    pub sim: SimSettings,
    pub rank_tol: S,
}

impl<S: Scalar> Default for SweepOptions<S> {
    fn default() -> Self {
        Self {
            oracle: true,
            reference: None,
            solver: IpmSettings::from_env_or(SWEEP_SOLVER_TOL),
            sim: SimSettings::default(),
            rank_tol: S::lit(DEFAULT_RANK_TOL),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    /// Gamma is computed from the known remainder.
    Oracle,
    /// Gamma is unknown; convergence of alpha and simulation only.
    Heuristic,
}

impl VerdictKind {
    pub fn label(self) -> &'static str {
        match self {
            VerdictKind::Oracle => "oracle",
            VerdictKind::Heuristic => "heuristic, gamma unknown",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sweep<S: Scalar = f64> {
    pub rows: Vec<SweepRow<S>>,
    pub reference: Option<Reference<S>>,
    pub verdict_kind: VerdictKind,
}

impl<S: Scalar> Sweep<S> {
    pub fn last(&self) -> Option<&SweepRow<S>> {
        self.rows.last()
    }
}

/// Solves the design on the linearized plant's data for the unscaled spec.
pub fn linearized_reference<S: Scalar, P: Plant<S> + ?Sized, A: ConicSolver<S>>(
    plant: &P,
    base: &ExperimentSpec<S>,
    solver: &mut A,
) -> Result<Reference<S>> {
    let run = run_experiment(plant, base, true)?;
    let lin = run.linearized.expect("oracle run carries linearized data");
    let dm = DataMatrices::new(lin.u0, lin.x0, lin.x1)?;
    let res = solve_design(&build_design(&dm)?, solver)?;
    match (res.status, res.k) {
        (DesignStatus::Optimal, Some(k)) => Ok(Reference { k, alpha: res.alpha }),
        (status, _) => Err(Error::InvalidInput(format!("linearized-data design returned {status:?}"))),
    }
}

/// Runs the scaled experiment for every `eps` in the grid, then certifies,
/// designs and verifies. Rows are evaluated in parallel and returned in grid
/// order; a failing row records its error and the sweep continues.
pub fn epsilon_sweep<S: Scalar, P: Plant<S> + ?Sized>(
    plant: &P,
    base: &ExperimentSpec<S>,
    eps_grid: &[S],
    options: &SweepOptions<S>,
) -> Result<Sweep<S>> {
    let settings = options.solver;
    epsilon_sweep_with(plant, base, eps_grid, options, || InteriorPointSolver::new(settings))
}

/// [`epsilon_sweep`] with a caller-supplied solver; `make_solver` is called
/// once per row.
pub fn epsilon_sweep_with<S, P, A, F>(
    plant: &P,
    base: &ExperimentSpec<S>,
    eps_grid: &[S],
    options: &SweepOptions<S>,
    make_solver: F,
) -> Result<Sweep<S>>
where
    S: Scalar,
    P: Plant<S> + ?Sized,
    A: ConicSolver<S>,
    F: Fn() -> A + Sync,
{
    validate_grid(eps_grid)?;
    base.validate()?;
    let lin = options.oracle.then(|| crate::plant::linearize(plant));
    let reference = match (&options.reference, options.oracle) {
        (Some(r), _) => Some(r.clone()),
        (None, true) => Some(linearized_reference(plant, base, &mut make_solver())?),
        (None, false) => None,
    };

    let mut rows: Vec<SweepRow<S>> = eps_grid
        .par_iter()
        .map(|&eps| {
            sweep_row(plant, base, eps, options, lin.as_ref(), reference.as_ref(), &mut make_solver())
                .unwrap_or_else(|e| SweepRow::failed(eps, e.to_string()))
        })
        .collect();

    if reference.is_none() {
        // Without a reference, successive differences of alpha track convergence.
        for i in (1..rows.len()).rev() {
            rows[i].alpha_dist = match (rows[i].alpha, rows[i - 1].alpha) {
                (Some(a), Some(b)) => Some((a - b).abs()),
                _ => None,
            };
        }
    }
    let verdict_kind = if options.oracle { VerdictKind::Oracle } else { VerdictKind::Heuristic };
    Ok(Sweep { rows, reference, verdict_kind })
}

pub fn validate_grid<S: Scalar>(eps_grid: &[S]) -> Result<()> {
    if eps_grid.is_empty() {
        return Err(Error::InvalidGrid("epsilon grid is empty".into()));
    }
    if let Some(e) = eps_grid.iter().find(|e| !(**e > S::zero()) || !e.finite()) {
        return Err(Error::InvalidGrid(format!("epsilon values must be positive and finite, got {e}")));
    }
    if eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidGrid("epsilon grid must be strictly decreasing".into()));
    }
    Ok(())
}

fn sweep_row<S: Scalar, P: Plant<S> + ?Sized, A: ConicSolver<S>>(
    plant: &P,
    base: &ExperimentSpec<S>,
    eps: S,
    options: &SweepOptions<S>,
    lin: Option<&LinearizationPair<S>>,
    reference: Option<&Reference<S>>,
    solver: &mut A,
) -> Result<SweepRow<S>> {
    let spec = scale_experiment(base, eps)?;
    let run = run_experiment(plant, &spec, options.oracle)?;
    let res = solve_design(&build_design(&run.data)?, solver)?;
    let optimal = res.status == DesignStatus::Optimal;
    let alpha = optimal.then_some(res.alpha);
    let cert = certify(&run.data, alpha, options.rank_tol)?;

    let (mut spectral, mut sim_stable, mut k_dist) = (None, false, None);
    if let Some(k) = &res.k {
        if let Some(lin) = lin {
            spectral = Some(spectral_radius_closed_loop(lin, k)?);
        }
        sim_stable = simulate_closed_loop_stability(plant, k, options.sim)?.stable;
        k_dist = reference.map(|r| (k - &r.k).norm());
    }
    let alpha_dist = match (alpha, reference) {
        (Some(a), Some(r)) => Some((a - r.alpha).abs()),
        _ => None,
    };
    Ok(SweepRow {
        epsilon: eps,
        status: Some(res.status),
        alpha,
        k: res.k,
        gamma_min: cert.gamma_min,
        assumption1: cert.assumption1_holds,
        gamma_condition: cert.gamma_condition_holds,
        spectral_radius: spectral,
        sim_stable,
        k_dist,
        alpha_dist,
        error: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AlphaConvergence {
    /// Least-squares slope of `log(alpha_dist)` against `log(eps)`.
    pub slope: f64,
    pub superlinear: bool,
    /// Rows that entered the fit.
    pub points: usize,
}

/// Fits the decay order of `alpha_dist` in `eps`. Rows with a zero distance
/// are skipped since their logarithm is undefined.
pub fn alpha_convergence_diagnostic<S: Scalar>(rows: &[SweepRow<S>]) -> Result<AlphaConvergence> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.alpha_dist.map(|d| (r.epsilon.as_f64(), d.as_f64())))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientRows { needed: 3, found: pts.len() });
    }
    let logs: Vec<(f64, f64)> = pts.iter().filter(|(_, d)| *d > 0.0).map(|(e, d)| (e.ln(), d.ln())).collect();
    // all distances zero: alpha does not move at all
    if logs.len() < 2 {
        return Ok(AlphaConvergence { slope: 0.0, superlinear: false, points: pts.len() });
    }
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidGrid("alpha_dist fit needs distinct epsilon values".into()));
    }
    let slope = sxy / sxx;
    Ok(AlphaConvergence { slope, superlinear: slope > 1.0, points: logs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{LinearPlant, Pendulum};

    fn row(eps: f64, dist: f64) -> SweepRow<f64> {
        let mut r = SweepRow::failed(eps, String::new());
        r.alpha_dist = Some(dist);
        r
    }

    #[test]
    fn radius_examples() {
        let lin = LinearizationPair::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        let r = spectral_radius_closed_loop(&lin, &DMatrix::from_element(1, 1, 0.5)).unwrap();
        assert!((r - 0.5f64).abs() < 1e-15);
        let r = spectral_radius_closed_loop(&lin, &DMatrix::from_element(1, 1, -1.5)).unwrap();
        assert!((r - 1.5f64).abs() < 1e-15);
        assert!(spectral_radius_closed_loop(&lin, &DMatrix::zeros(1, 2)).is_err());
        // rotation: complex pair of modulus 1
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((spectral_radius(&rot) - 1.0f64).abs() < 1e-12);
    }

    #[test]
    fn simulation_examples() {
        let stable = LinearPlant::new(DMatrix::from_element(1, 1, 2.0), DMatrix::identity(1, 1)).unwrap();
        let k = DMatrix::from_element(1, 1, -1.8);
        for radius in [1e-3, 1.0, 1e3] {
            let s = SimSettings { radius, ..Default::default() };
            assert!(simulate_closed_loop_stability(&stable, &k, s).unwrap().stable);
        }
        let chk = simulate_closed_loop_stability(&Pendulum::default(), &DMatrix::<f64>::zeros(1, 2), SimSettings::default())
            .unwrap();
        assert!(!chk.stable);
        assert!(simulate_closed_loop_stability(&stable, &k, SimSettings { radius: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn divergence_is_failure() {
        let p = LinearPlant::new(DMatrix::from_element(1, 1, 1e200), DMatrix::identity(1, 1)).unwrap();
        let chk = simulate_closed_loop_stability(&p, &DMatrix::zeros(1, 1), SimSettings::default()).unwrap();
        assert!(!chk.stable && chk.diverged == 20 && chk.worst_ratio.is_infinite());
    }

    #[test]
    fn convergence_fit() {
        let eps = [1.0, 0.5, 0.1, 0.01];
        let quad: Vec<_> = eps.iter().map(|&e| row(e, 3.0 * e * e)).collect();
        let d = alpha_convergence_diagnostic(&quad).unwrap();
        assert!((d.slope - 2.0).abs() < 1e-12 && d.superlinear);
        let flat: Vec<_> = eps.iter().map(|&e| row(e, 1e-3)).collect();
        let d = alpha_convergence_diagnostic(&flat).unwrap();
        assert!(d.slope.abs() < 1e-12 && !d.superlinear);
        assert!(matches!(alpha_convergence_diagnostic(&quad[..2]), Err(Error::InsufficientRows { .. })));
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[1.0, 0.5, 0.1]).is_ok());
        assert!(validate_grid::<f64>(&[]).is_err());
        assert!(validate_grid(&[0.1, 0.5]).is_err());
        assert!(validate_grid(&[1.0, 1.0]).is_err());
        assert!(validate_grid(&[1.0, -0.5]).is_err());
    }
}
