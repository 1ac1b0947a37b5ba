//! Discrete-time plants `x(k+1) = f(x(k), u(k))`, their linearization at the
//! equilibrium and the remainder `d = f(x, u) - A x - B u`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datamat::{build_data_matrices, DataMatrices, Trajectory};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Jacobians of the plant map at the equilibrium.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizationPair<S: Scalar = f64> {
    pub a: DMatrix<S>,
    pub b: DMatrix<S>,
}

impl<S: Scalar> LinearizationPair<S> {
    pub fn new(a: DMatrix<S>, b: DMatrix<S>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                context: "A must be square".into(),
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch {
                context: "B row count".into(),
                expected: a.nrows(),
                found: b.nrows(),
            });
        }
        if a.iter().chain(b.iter()).any(|v| !v.finite()) {
            return Err(Error::InvalidInput("linearization has non-finite entries".into()));
        }
        Ok(Self { a, b })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `A + B K`.
    pub fn closed_loop(&self, k: &DMatrix<S>) -> DMatrix<S> {
        &self.a + &self.b * k
    }
}

/// A discrete-time plant with a known equilibrium pair.
pub trait Plant<S: Scalar>: Send + Sync {
    fn state_dim(&self) -> usize;

    fn input_dim(&self) -> usize;

    fn step(&self, x: &DVector<S>, u: &DVector<S>) -> DVector<S>;

    /// `(x_eq, u_eq)` with `step(x_eq, u_eq) = x_eq`. Defaults to the origin.
    fn equilibrium(&self) -> (DVector<S>, DVector<S>) {
        (DVector::zeros(self.state_dim()), DVector::zeros(self.input_dim()))
    }

    /// Analytic Jacobians at the equilibrium, when known.
    fn exact_linearization(&self) -> Option<LinearizationPair<S>> {
        None
    }
}

/// `x(k+1) = x(k)^2 + u(k)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScalarQuadratic;

impl<S: Scalar> Plant<S> for ScalarQuadratic {
    fn state_dim(&self) -> usize {
        1
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn step(&self, x: &DVector<S>, u: &DVector<S>) -> DVector<S> {
        DVector::from_element(1, x[0] * x[0] + u[0])
    }

    fn exact_linearization(&self) -> Option<LinearizationPair<S>> {
        Some(LinearizationPair {
            a: DMatrix::zeros(1, 1),
            b: DMatrix::identity(1, 1),
        })
    }
}

/// Physical parameters of the Euler-discretized inverted pendulum.
///
/// The defaults are not taken from any published experiment; they are
/// plausible laboratory values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumParams {
    /// Sampling time in seconds.
    pub dt: f64,
    pub mass: f64,
    pub length: f64,
    /// Rotational friction coefficient.
    pub friction: f64,
    pub gravity: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self { dt: 0.1, mass: 1.0, length: 1.0, friction: 0.01, gravity: 9.8 }
    }
}

/// Inverted pendulum, upright equilibrium at the origin:
///
/// ```text
/// x1+ = x1 + dt x2
/// x2+ = (dt g / l) sin x1 + (1 - dt mu / (m l^2)) x2 + dt / (m l^2) u
/// ```
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pendulum {
    pub params: PendulumParams,
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Self {
        Self { params }
    }

    fn coefficients<S: Scalar>(&self) -> (S, S, S, S) {
        let p = &self.params;
        let inertia = p.mass * p.length * p.length;
        (
            S::lit(p.dt),
            S::lit(p.dt * p.gravity / p.length),
            S::lit(1.0 - p.dt * p.friction / inertia),
            S::lit(p.dt / inertia),
        )
    }
}

impl<S: Scalar> Plant<S> for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn step(&self, x: &DVector<S>, u: &DVector<S>) -> DVector<S> {
        let (dt, grav, damp, gain) = self.coefficients::<S>();
        DVector::from_vec(vec![x[0] + dt * x[1], grav * x[0].sin() + damp * x[1] + gain * u[0]])
    }

    fn exact_linearization(&self) -> Option<LinearizationPair<S>> {
        let (dt, grav, damp, gain) = self.coefficients::<S>();
        Some(LinearizationPair {
            a: DMatrix::from_row_slice(2, 2, &[S::one(), dt, grav, damp]),
            b: DMatrix::from_row_slice(2, 1, &[S::zero(), gain]),
        })
    }
}

/// `x(k+1) = A x(k) + B u(k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearPlant<S: Scalar = f64> {
    pub lin: LinearizationPair<S>,
}

impl<S: Scalar> LinearPlant<S> {
    pub fn new(a: DMatrix<S>, b: DMatrix<S>) -> Result<Self> {
        Ok(Self { lin: LinearizationPair::new(a, b)? })
    }
}

impl<S: Scalar> Plant<S> for LinearPlant<S> {
    fn state_dim(&self) -> usize {
        self.lin.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.lin.input_dim()
    }

    fn step(&self, x: &DVector<S>, u: &DVector<S>) -> DVector<S> {
        &self.lin.a * x + &self.lin.b * u
    }

    fn exact_linearization(&self) -> Option<LinearizationPair<S>> {
        Some(self.lin.clone())
    }
}

/// Plant defined by a closure, for maps that have no built-in model.
pub struct FnPlant<S: Scalar, F> {
    n: usize,
    m: usize,
    x_eq: DVector<S>,
    u_eq: DVector<S>,
    f: F,
}

impl<S, F> FnPlant<S, F>
where
    S: Scalar,
    F: Fn(&DVector<S>, &DVector<S>) -> DVector<S> + Send + Sync,
{
    pub fn new(x_eq: DVector<S>, u_eq: DVector<S>, f: F) -> Self {
        Self { n: x_eq.len(), m: u_eq.len(), x_eq, u_eq, f }
    }
}

impl<S, F> Plant<S> for FnPlant<S, F>
where
    S: Scalar,
    F: Fn(&DVector<S>, &DVector<S>) -> DVector<S> + Send + Sync,
{
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.m
    }

    fn step(&self, x: &DVector<S>, u: &DVector<S>) -> DVector<S> {
        (self.f)(x, u)
    }

    fn equilibrium(&self) -> (DVector<S>, DVector<S>) {
        (self.x_eq.clone(), self.u_eq.clone())
    }
}

/// On-disk plant configuration.
///
/// ```json
/// {"kind": "pendulum", "params": {"dt": 0.1, "mass": 1.0, "length": 1.0, "friction": 0.01, "gravity": 9.8}}
/// {"kind": "linear", "A": [[0.5, 1.0], [0.0, 1.1]], "B": [[0.0], [1.0]]}
/// {"kind": "scalar_quadratic"}
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantConfig {
    ScalarQuadratic,
    Pendulum {
        #[serde(default)]
        params: PendulumParams,
    },
    Linear {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
    },
}

/// One of the built-in plants, selected at runtime.
#[derive(Clone, Debug, PartialEq)]
pub enum BuiltinPlant<S: Scalar = f64> {
    ScalarQuadratic(ScalarQuadratic),
    Pendulum(Pendulum),
    Linear(LinearPlant<S>),
}

pub(crate) fn matrix_from_rows<S: Scalar>(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<S>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(Error::InvalidInput(format!("{what} is empty")));
    }
    if let Some(bad) = rows.iter().find(|row| row.len() != c) {
        return Err(Error::DimensionMismatch {
            context: format!("{what} row length"),
            expected: c,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(r, c, |i, j| S::lit(rows[i][j])))
}

impl<S: Scalar> BuiltinPlant<S> {
    pub fn from_config(cfg: &PlantConfig) -> Result<Self> {
        Ok(match cfg {
            PlantConfig::ScalarQuadratic => Self::ScalarQuadratic(ScalarQuadratic),
            PlantConfig::Pendulum { params } => {
                let p = params;
                if !(p.dt > 0.0 && p.mass > 0.0 && p.length > 0.0) {
                    return Err(Error::InvalidInput(
                        "pendulum dt, mass and length must be positive".into(),
                    ));
                }
                Self::Pendulum(Pendulum::new(*params))
            }
            PlantConfig::Linear { a, b } => {
                Self::Linear(LinearPlant::new(matrix_from_rows(a, "A")?, matrix_from_rows(b, "B")?)?)
            }
        })
    }

    fn inner(&self) -> &dyn Plant<S> {
        match self {
            Self::ScalarQuadratic(p) => p,
            Self::Pendulum(p) => p,
            Self::Linear(p) => p,
        }
    }
}

impl<S: Scalar> Plant<S> for BuiltinPlant<S> {
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }

    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }

    fn step(&self, x: &DVector<S>, u: &DVector<S>) -> DVector<S> {
        self.inner().step(x, u)
    }

    fn equilibrium(&self) -> (DVector<S>, DVector<S>) {
        self.inner().equilibrium()
    }

    fn exact_linearization(&self) -> Option<LinearizationPair<S>> {
        self.inner().exact_linearization()
    }
}

/// Runs the plant from `x0` under the given input sequence.
pub fn simulate<S: Scalar, P: Plant<S> + ?Sized>(
    plant: &P,
    x0: &DVector<S>,
    inputs: &[DVector<S>],
) -> Result<Trajectory<S>> {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            context: "initial state".into(),
            expected: n,
            found: x0.len(),
        });
    }
    if let Some(u) = inputs.iter().find(|u| u.len() != m) {
        return Err(Error::DimensionMismatch { context: "input".into(), expected: m, found: u.len() });
    }
    if x0.iter().any(|v| !v.finite()) {
        return Err(Error::Divergence { step: 0 });
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    for (k, u) in inputs.iter().enumerate() {
        let next = plant.step(&states[k], u);
        if next.len() != n {
            return Err(Error::DimensionMismatch {
                context: "plant step output".into(),
                expected: n,
                found: next.len(),
            });
        }
        if next.iter().any(|v| !v.finite()) {
            return Err(Error::Divergence { step: k + 1 });
        }
        states.push(next);
    }
    Trajectory::new(states, inputs.to_vec())
}

/// Central-difference Jacobians at the equilibrium, step `1e-5 * max(1, |x_eq|)`
/// for the state (and likewise with `|u_eq|` for the input).
pub fn finite_difference_jacobian<S: Scalar, P: Plant<S> + ?Sized>(
    plant: &P,
) -> LinearizationPair<S> {
    let (xe, ue) = plant.equilibrium();
    let (n, m) = (xe.len(), ue.len());
    let base = S::lit(1e-5);
    let hx = base * S::one().max(xe.norm());
    let hu = base * S::one().max(ue.norm());
    let two = S::lit(2.0);
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = xe.clone();
        let mut xm = xe.clone();
        xp[j] += hx;
        xm[j] -= hx;
        let col = (plant.step(&xp, &ue) - plant.step(&xm, &ue)) / (two * hx);
        a.set_column(j, &col);
    }
    let mut b = DMatrix::zeros(n, m);
    for j in 0..m {
        let mut up = ue.clone();
        let mut um = ue.clone();
        up[j] += hu;
        um[j] -= hu;
        let col = (plant.step(&xe, &up) - plant.step(&xe, &um)) / (two * hu);
        b.set_column(j, &col);
    }
    LinearizationPair { a, b }
}

/// The exact linearization when the plant provides one, finite differences
/// otherwise.
pub fn linearize<S: Scalar, P: Plant<S> + ?Sized>(plant: &P) -> LinearizationPair<S> {
    plant.exact_linearization().unwrap_or_else(|| finite_difference_jacobian(plant))
}

/// Data matrices of a plant-generated trajectory in deviation coordinates,
/// with `D0 = X1 - A X0 - B U0` filled in from the plant's linearization.
pub fn remainder_sequence<S: Scalar, P: Plant<S> + ?Sized>(
    plant: &P,
    traj: &Trajectory<S>,
) -> Result<DataMatrices<S>> {
    let lin = linearize(plant);
    remainder_with(plant, &lin, traj)
}

pub(crate) fn remainder_with<S: Scalar, P: Plant<S> + ?Sized>(
    plant: &P,
    lin: &LinearizationPair<S>,
    traj: &Trajectory<S>,
) -> Result<DataMatrices<S>> {
    if traj.state_dim() != plant.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "trajectory state dimension".into(),
            expected: plant.state_dim(),
            found: traj.state_dim(),
        });
    }
    if traj.input_dim() != plant.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "trajectory input dimension".into(),
            expected: plant.input_dim(),
            found: traj.input_dim(),
        });
    }
    let (xe, ue) = plant.equilibrium();
    let dm = build_data_matrices(&traj.to_deviation(&xe, &ue));
    let d0 = &dm.x1 - &lin.a * &dm.x0 - &lin.b * &dm.u0;
    dm.with_remainder(d0)
}
