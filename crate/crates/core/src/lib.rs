//! Higher-order averaging for time-switched piecewise-smooth systems and the
//! Lyapunov–Schmidt reduction of their periodic-orbit problem.
//!
//! A model is `x' = sum_i eps^i F_i(t, x) + eps^(k+1) R(t, x, eps)` on
//! `[0, T)`, with each `F_i` smooth on the zones `[t_{j-1}, t_j)`, together
//! with a chart `alpha -> (alpha, beta(alpha))` of a manifold of periodic
//! orbits of the unperturbed system. The pipeline computes the averaged
//! functions `g_0..g_k`, the bifurcation functions `f_1..f_k`, certifies
//! simple zeros of the first nonvanishing `f_i` and checks the predicted
//! orbits against direct shooting on the full system.

pub mod averaging;
pub mod examples;
pub mod lsreduction;
pub mod model;
pub mod odeint;
pub mod roots;
pub mod verify;

pub use averaging::{averaged_functions, averaged_functions_bell, AveragedResult, AveragingError};
pub use lsreduction::{assemble_bifurcation, bifurcation_function, AssemblyForm, BifurcationAssembly, LsError};
pub use model::{load_system, load_system_file, AnalysisOptions, Model, ModelError, PiecewiseSystem};
pub use odeint::{IntegrationError, Tolerances};
pub use roots::{ZeroCertificate, ZeroStatus};
pub use verify::{convergence_order, VerificationRecord, VerifyError};
