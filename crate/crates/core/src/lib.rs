//! Data-driven stabilization of nonlinear discrete-time systems from short,
//! small-amplitude open-loop experiments.
//!
//! The workflow: run an experiment around an equilibrium ([`experiment`]),
//! collect data matrices ([`datamat`]), solve the controller-design program
//! ([`sdp`]), check the sufficient conditions for local stabilization
//! ([`certify`]), and confirm on the true plant ([`verify`]).
//!
//! Everything is generic over the floating-point type; the aliases below fix
//! it to `f64` or `f32`.

pub mod certify;
pub mod datamat;
pub mod error;
pub mod experiment;
pub mod io;
pub mod plant;
pub mod scalar;
pub mod sdp;
pub mod verify;

pub use certify::{certify, gamma_min, CertReport};
pub use datamat::{build_data_matrices, DataMatrices, Trajectory};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentSpec};
pub use plant::{BuiltinPlant, LinearizationPair, Pendulum, Plant, PlantConfig, ScalarQuadratic};
pub use scalar::Scalar;
pub use sdp::{build_design, design_controller, solve_design, DesignResult, DesignStatus};

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type Trajectory32 = Trajectory<f32>;
pub type DataMatrices64 = DataMatrices<f64>;
pub type DataMatrices32 = DataMatrices<f32>;
pub type DesignResult64 = DesignResult<f64>;
pub type DesignResult32 = DesignResult<f32>;
pub type ExperimentSpec64 = ExperimentSpec<f64>;
pub type ExperimentSpec32 = ExperimentSpec<f32>;
