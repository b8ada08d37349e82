pub mod accounting;
pub mod chain;
pub mod consensus;
pub mod consortium;
pub mod contract;
pub mod ledger;
pub mod sim;

pub type Tick = u64;
pub type Phyli = i64;

pub use sim::{run_scenario, MetricsReport, Scenario, SimError, Simulation};
