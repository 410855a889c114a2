//! Motor-start aware service restoration for radial distribution feeders.
//!
//! A case file describes the feeder, an induction motor to be restarted and
//! the protection curves. [`restoration::build_problem`] turns it into a
//! mixed-integer second-order cone program, [`solver::bnb::solve_misocp`]
//! solves it, and [`sim`] checks the resulting plan against a time-domain
//! simulation of the motor start.

pub mod linearize;
pub mod motor;
pub mod network;
pub mod program;
pub mod protection;
pub mod report;
pub mod restoration;
pub mod sim;
pub mod solver;
