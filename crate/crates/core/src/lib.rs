//! Carbon-aware scaling for elastic batch jobs.
//!
//! The crate is organised bottom-up:
//!
//! - [`trace`]: grid carbon-intensity time series (ingest, slice, perturb, summarize).
//! - [`profile`]: marginal capacity curves built from throughput measurements.
//! - [`scheduler`]: the greedy carbon-scaling policy, baselines, accounting and an
//!   exhaustive oracle used to check optimality.
//! - [`sim`]: a slot-by-slot execution engine with forecast error, profile error,
//!   procurement denial and deviation-triggered replanning, plus sweep drivers.
//! - [`fixture`]: JSON job/curve documents shared by the CLI and the advisor service.

pub mod fixture;
pub mod profile;
pub mod scheduler;
pub mod sim;
pub mod trace;

pub use profile::{MarginalCapacityCurve, PowerModel, ThroughputProfile};
pub use scheduler::{JobSpec, Policy, Schedule, ScheduleMetrics};
pub use sim::{SimConfig, SimResult};
pub use trace::{CarbonTrace, RegionStats};

/// Absolute slack used when comparing accumulated work against a requirement.
///
/// Work values are sums of a handful of marginals, so rounding noise stays many
/// orders of magnitude below this.
pub const WORK_EPS: f64 = 1e-9;

/// Deterministic generator for one named random stream derived from a seed.
pub(crate) fn seeded_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
