//! Continuum traffic stability lab: ARZ, mean-field-game and mixed
//! autonomous/human traffic on a ring road, with linear and numerical
//! stability classification.

pub mod ad;
pub mod arz;
pub mod cli;
pub mod config;
pub mod domain;
pub mod error;
pub mod experiments;
pub mod linear;
pub mod mfg;
pub mod mixed;
pub mod newton;
pub mod ordering;
pub mod output;
pub mod scheme;
pub mod system;

pub use domain::{
    av_running_cost, clamp_speed, desired_speed, error_function, hesitation, hesitation_deriv, ClassTrajectory, Field,
    GridSpec, ModelParams, Norm, UniformFlow,
};
pub use error::{Error, Result};
pub use newton::{NewtonOptions, NewtonReport};
pub use scheme::Viscosity;
