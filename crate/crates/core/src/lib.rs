//! Numerical toolkit for finite-horizon sparse (L0) stochastic optimal
//! control of control-affine diffusions.
//!
//! The pipeline: describe a problem ([`model::ProblemSpec`]), solve the
//! associated terminal-value HJB equation backward on a grid
//! ([`solver::solve_backward`]), synthesize the bang-off-bang feedback
//! map and its switching boundaries ([`feedback::FeedbackMap`]), and
//! validate the closed loop by Euler-Maruyama Monte Carlo
//! ([`sim::monte_carlo`]) against analytic and brute-force oracles.

pub use nalgebra;

pub mod dpp;
pub mod error;
pub mod feedback;
pub mod field;
pub mod grid;
pub mod model;
pub mod problems;
pub mod rng;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use feedback::{deterministic_scalar_law, FeedbackMap, SwitchingBoundary};
pub use field::ValueField;
pub use grid::SpatialGrid;
pub use model::{
    channel_sup_l0, channel_sup_l1, channel_sup_l2, g_value, hamiltonian, hamiltonian_bruteforce,
    psi0, psi1, BoxControlSet, ControlAffineSystem, HamiltonianArgs, Penalty, ProblemSpec,
};
pub use sim::{monte_carlo, riccati_baseline, simulate, Controller, SdePath, SimulationReport};
pub use solver::{cfl_report, solve_backward, BoundaryPolicy, SolverConfig, TimeSteps};
