//! Carbon-aware offloading of ML inference tasks between a cloud and edge
//! servers, with emission rights bought on spot and future markets.
//!
//! The crate contains the system model, a dense simplex solver, the relaxed
//! subproblems and their rounding, the online policies, trace ingestion and
//! a trace-driven simulator with sweep support.

pub mod cost;
pub mod error;
pub mod ingest;
pub mod lp;
pub mod lyapunov;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod rounding;
pub mod sim;
pub mod subproblem;

pub use error::{Error, Result};
pub use ingest::{load_trace, parse_trace, TraceTable};
pub use model::{SimConfig, SlotObservation};
pub use policy::PolicyKind;
pub use sim::{run_simulation, sweep, SimReport, SweepParam};
