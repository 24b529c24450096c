//! Conic programming layer: the problem carrier, a continuous interior-point
//! backend and a binary branch-and-bound on top of it. Nothing outside this
//! crate knows how cone programs are solved.

pub mod bnb;
pub mod program;
pub mod socp;

pub use bnb::{solve_misocp, solve_misocp_with, MipOptions, MipStart};
pub use program::{ConicProgram, LinExpr, Row, SocConstraint, SparseTriplets};
pub use socp::{
    solve_socp, ClarabelBackend, ConeDual, PrimalDualSolution, SocpBackend, SocpOptions, SolveStats, SolveStatus,
};

#[derive(Debug, thiserror::Error)]
pub enum ConicError {
    #[error("inconsistent program dimensions: {0}")]
    Dimension(String),
}
