//! Seeded multi-node simulation and the eventual-consensus check.

mod canonical;
mod consensus;
mod engine;
mod explore;
mod scenario;

pub use canonical::{canonical_run, CanonicalRun};
pub use consensus::{
    consensus_check, diverging_roles, AgentConsensus, AgentView, ConsensusError, ConsensusReport,
};
pub use engine::{run_scenario, simulate, trace_to_ndjson, Simulation, TraceEntry, DRAIN_LIMIT};
pub use explore::{explore, Counterexample, Exploration, Limits};
pub use scenario::{
    projected_definition, AgentMemory, AgentSpec, MachineRegistry, PartitionWindow, Scenario,
    ScenarioError, Strategies, Strategy,
};
