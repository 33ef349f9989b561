//! Soft-landing trajectory design for short-stroke reluctance actuators
//! whose contact position is only known as a probability distribution.
//!
//! [`actuator`] holds the lumped magnetic and mechanical model. [`contact`]
//! and [`cost`] turn a planned path into expected contact velocity and
//! take-off acceleration. [`ocp`] solves the resulting optimal control problem
//! through the collocation solver in [`bvp`], with a continuation schedule
//! for the hard cases. [`sim`] replays a plan against random contact
//! positions, and [`identification`] fits the model to pulse measurements.
//!
//! ```no_run
//! use softland::ocp::{self, Mode, OcpSpec};
//!
//! let spec = OcpSpec::reference(Mode::Pos);
//! let traj = ocp::continuation_solve(&spec).unwrap();
//! let eval = ocp::evaluate(&spec, &traj).unwrap();
//! println!("E[Vc] = {:.4} m/s", eval.expected_velocity);
//! ```

pub mod actuator;
pub mod banded;
pub mod bvp;
pub mod config;
pub mod contact;
pub mod cost;
pub mod error;
pub mod identification;
pub mod io;
pub mod ocp;
pub mod ode;
pub mod quadrature;
pub mod sim;
pub mod spline;
pub mod trajectory;
