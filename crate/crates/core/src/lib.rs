//! Trajectory data model, scenario DSL, coarse window filter, knowledge base,
//! program synthesis loop and benchmark metrics for scenario mining.

pub mod coarse;
pub mod dsl;
pub mod kb;
pub mod metrics;
pub mod smeb;
pub mod synth;
pub mod traj;
