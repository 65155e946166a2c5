//! Multi-objective peer-to-peer energy market: DER revenue, load expense and
//! distance to the grid operator's target demands, traded off through a
//! weighted scalarization and solved centrally or by region-wise consensus.

pub mod admm;
pub mod error;
pub mod model;
pub mod scenarios;
pub mod solver;
pub mod transform;

pub use error::{MarketError, Result};
pub use model::{MarketInstance, Matrix, ObjectiveValues, TradeMask, TradeState};
pub use solver::{default_lambda, solve_scalarized, Solution, SolverOptions};
pub use transform::Weights;
