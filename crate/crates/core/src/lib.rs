//! Low-rank feasible solver for the semidefinite relaxation of the binary
//! quadratic knapsack problem.

pub mod certify;
pub mod escape;
pub mod geometry;
pub mod instance;
pub mod linalg;
pub mod oracle;
pub mod report;
pub mod rounding;
pub mod solver;
pub mod sparse;
pub mod spectral;
