//! Experience-driven day-ahead voltage control for radial distribution
//! feeders.

// `!(a < b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod devices;
pub mod experience;
pub mod harness;
pub mod network;
pub mod retrieval;
pub mod scenario;

pub use devices::{ActionSchedule, DeviceSpecs, OltcSpec, OpCountReport, ScSpec};
pub use experience::{Experience, ExperienceId, ExperienceStore};
pub use harness::{DispatchSummary, Environment, RewardConfig};
pub use network::solver::{solve_power_flow, SolverOptions, VoltageSolution};
pub use network::{BusId, CaseInjection, Network};
pub use scenario::{BusAllocation, Dataset, DayProfile, Forecast};
pub use retrieval::{retrieve, RetrievalResult};
