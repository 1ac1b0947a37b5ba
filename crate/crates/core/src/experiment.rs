//! Open-loop experiments: random persistently exciting inputs, the
//! rank-destroying `theta` construction for the scalar quadratic plant, and
//! epsilon-scaling of an experiment toward the equilibrium.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::datamat::{build_data_matrices, is_persistently_exciting, DataMatrices, Trajectory};
use crate::error::{Error, Result};
use crate::plant::{linearize, remainder_with, simulate, LinearPlant, LinearizationPair, Plant};
use crate::scalar::Scalar;

/// Default horizon for the two-state demos.
pub const DEFAULT_HORIZON: usize = 15;
/// Default half-width of the uniform input distribution.
pub const DEFAULT_AMPLITUDE: f64 = 5.0;
/// Draws attempted before giving up on persistency of excitation.
pub const PE_MAX_ATTEMPTS: usize = 10;

/// Initial state and input sequence of one experiment, in deviation
/// coordinates around the plant's equilibrium. The plant sees
/// `(epsilon * x0, epsilon * inputs)`; rescaling only touches `epsilon`, so
/// repeated scaling composes exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec<S: Scalar = f64> {
    pub x0: DVector<S>,
    pub inputs: Vec<DVector<S>>,
    pub epsilon: S,
    pub seed: Option<u64>,
}

impl<S: Scalar> ExperimentSpec<S> {
    pub fn new(x0: DVector<S>, inputs: Vec<DVector<S>>) -> Result<Self> {
        let spec = Self { x0, inputs, epsilon: S::one(), seed: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::InvalidInput("experiment needs at least one input".into()));
        }
        if !(self.epsilon > S::zero()) || !self.epsilon.finite() {
            return Err(Error::InvalidScale(self.epsilon.as_f64()));
        }
        let m = self.inputs[0].len();
        if let Some(u) = self.inputs.iter().find(|u| u.len() != m) {
            return Err(Error::DimensionMismatch { context: "input".into(), expected: m, found: u.len() });
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn scaled_x0(&self) -> DVector<S> {
        &self.x0 * self.epsilon
    }

    pub fn scaled_inputs(&self) -> Vec<DVector<S>> {
        self.inputs.iter().map(|u| u * self.epsilon).collect()
    }
}

/// Uniform random inputs on `[-amplitude, amplitude]`, redrawn until they are
/// persistently exciting of order `n + 1`.
pub fn generate_pe_input<S: Scalar>(
    m: usize,
    n: usize,
    horizon: usize,
    amplitude: f64,
    seed: u64,
) -> Result<Vec<DVector<S>>> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput("dimensions must be positive".into()));
    }
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(Error::InvalidInput(format!("amplitude must be non-negative, got {amplitude}")));
    }
    let order = n + 1;
    let min_len = (m + 1) * (n + 1) - 1;
    if horizon < min_len {
        return Err(Error::InvalidInput(format!(
            "horizon {horizon} is below the minimum {min_len} for excitation of order {order}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for _ in 0..PE_MAX_ATTEMPTS {
        let inputs: Vec<DVector<S>> = (0..horizon)
            .map(|_| DVector::from_fn(m, |_, _| S::lit(rng.random_range(-amplitude..=amplitude))))
            .collect();
        if is_persistently_exciting(&inputs, order, S::lit(crate::datamat::DEFAULT_RANK_TOL))?
            .persistently_exciting
        {
            return Ok(inputs);
        }
    }
    Err(Error::ExcitationFailure { order, attempts: PE_MAX_ATTEMPTS })
}

/// A random experiment starting at the equilibrium.
pub fn random_experiment<S: Scalar>(
    n: usize,
    m: usize,
    horizon: usize,
    amplitude: f64,
    seed: u64,
) -> Result<ExperimentSpec<S>> {
    let inputs = generate_pe_input(m, n, horizon, amplitude, seed)?;
    Ok(ExperimentSpec { x0: DVector::zeros(n), inputs, epsilon: S::one(), seed: Some(seed) })
}

/// `x0 = u(0) = theta`, `u(1) = theta + theta^2`,
/// `u(2) = u(1) + u(1)^2`: on `x+ = x^2 + u` this makes `X0` a copy of `U0`,
/// so `[U0; X0]` has rank one although the input is persistently exciting.
pub fn adversarial_theta_input<S: Scalar>(theta: S) -> ExperimentSpec<S> {
    let u1 = theta + theta * theta;
    let u2 = u1 + u1 * u1;
    ExperimentSpec {
        x0: DVector::from_element(1, theta),
        inputs: [theta, u1, u2].iter().map(|&u| DVector::from_element(1, u)).collect(),
        epsilon: S::one(),
        seed: None,
    }
}

/// The experiment `(eps * x0, eps * u)`.
pub fn scale_experiment<S: Scalar>(spec: &ExperimentSpec<S>, epsilon: S) -> Result<ExperimentSpec<S>> {
    if !(epsilon > S::zero()) || !epsilon.finite() {
        return Err(Error::InvalidScale(epsilon.as_f64()));
    }
    Ok(ExperimentSpec { epsilon: spec.epsilon * epsilon, ..spec.clone() })
}

/// Data of the same experiment applied to the (unavailable in practice)
/// linearized plant.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedData<S: Scalar = f64> {
    pub u0: DMatrix<S>,
    pub x0: DMatrix<S>,
    pub x1: DMatrix<S>,
}

impl<S: Scalar> LinearizedData<S> {
    pub fn stacked_ux(&self) -> DMatrix<S> {
        crate::datamat::vstack(&self.u0, &self.x0)
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentRun<S: Scalar = f64> {
    /// Raw plant trajectory.
    pub trajectory: Trajectory<S>,
    /// Data matrices in deviation coordinates; `d0` is set in oracle mode.
    pub data: DataMatrices<S>,
    pub linearized: Option<LinearizedData<S>>,
    pub linearization: Option<LinearizationPair<S>>,
}

/// Simulates the experiment and assembles its data matrices. In oracle mode
/// the remainder `D0` and the linearized-plant data are filled in as well.
pub fn run_experiment<S: Scalar, P: Plant<S> + ?Sized>(
    plant: &P,
    spec: &ExperimentSpec<S>,
    oracle: bool,
) -> Result<ExperimentRun<S>> {
    spec.validate()?;
    let (xe, ue) = plant.equilibrium();
    if spec.x0.len() != xe.len() {
        return Err(Error::DimensionMismatch {
            context: "experiment initial state".into(),
            expected: xe.len(),
            found: spec.x0.len(),
        });
    }
    let (x0, us) = (spec.scaled_x0(), spec.scaled_inputs());
    let inputs: Vec<DVector<S>> = us.iter().map(|u| u + &ue).collect();
    let trajectory = simulate(plant, &(&x0 + &xe), &inputs)?;
    if !oracle {
        let data = build_data_matrices(&trajectory.to_deviation(&xe, &ue));
        return Ok(ExperimentRun { trajectory, data, linearized: None, linearization: None });
    }
    let lin = linearize(plant);
    let data = remainder_with(plant, &lin, &trajectory)?;
    let lin_plant = LinearPlant { lin: lin.clone() };
    let lin_traj = simulate(&lin_plant, &x0, &us)?;
    let ld = build_data_matrices(&lin_traj);
    Ok(ExperimentRun {
        trajectory,
        data,
        linearized: Some(LinearizedData { u0: ld.u0, x0: ld.x0, x1: ld.x1 }),
        linearization: Some(lin),
    })
}
