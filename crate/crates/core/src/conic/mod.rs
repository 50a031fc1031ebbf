//! Conic-program IR, its text format, and the solver contract.

mod program;
mod solver;
pub mod text;

pub use program::{AffineExpr, Cone, ConeConstraint, ConicProgram, Defect, Diagnostics, VarId};
pub use solver::{solve, ClarabelSolver, ConicSolver, SolveStatus, Solution, SolverSettings};
