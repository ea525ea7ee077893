//! Online drift-plus-penalty controller for MEC-enabled satellite-aerial-terrestrial
//! networks, solved per slot by generalized Benders decomposition with an
//! annealed QUBO master problem.

pub mod annealer;
pub mod baselines;
pub mod decision;
pub mod error;
pub mod experiment;
pub mod hqcgbd;
pub mod lyapunov;
pub mod master;
pub mod oracle;
pub mod scenario;
pub mod subproblem;

pub use decision::{Allocation, Assignment, Choice};
pub use error::{ConfigError, MasterError, ModelError, SolveError, SubproblemError};
pub use lyapunov::{ControlParams, QueueState};
pub use scenario::{NetworkConfig, SlotState};
