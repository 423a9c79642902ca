//! Optimization substrate: an LP solver with dual certificates and a local
//! box-constrained NLP solver.

pub mod lp;
pub mod nlp;

pub use lp::{solve_lp, solve_lp_with, LinearProgram, LpError, LpOptions, LpSolution, SparseMatrix};
pub use nlp::{fd_gradient, solve_box_nlp, BoxNlp, LinearIneq, NlpError, NlpSolution, NlpStatus};
