//! Reference coordinators: the centralized solve, nested generalized Benders and
//! nested ADMM.

pub mod admm;
pub mod benders;
pub mod centralized;

pub use admm::{solve_admm, AdmmConfig, AdmmResult};
pub use benders::solve_benders;
pub use centralized::{flatten, solve_centralized, CentralizedResult, FlatLayout};
