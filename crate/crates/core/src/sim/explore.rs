use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::eventlog::{to_ndjson, EventRecord, RecordKey};

use super::consensus::ConsensusReport;
use super::engine::Simulation;
use super::scenario::{MachineRegistry, Scenario, ScenarioError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Limits {
    pub max_agents: usize,
    pub max_events: usize,
    pub max_states: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_agents: 3,
            max_events: 8,
            max_states: 2_000_000,
        }
    }
}

/// A schedule that ends without consensus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Counterexample {
    pub schedule: Vec<String>,
    pub report: ConsensusReport,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Exploration {
    pub states: usize,
    pub terminals: usize,
    pub diverging_terminals: usize,
    pub counterexample: Option<Counterexample>,
}

impl Exploration {
    pub fn all_converged(&self) -> bool {
        self.diverging_terminals == 0
    }
}

/// Enumerates every interleaving of agent actions and single-record
/// deliveries (partitions are ignored) and checks consensus in every state
/// where nothing is left to do.
pub fn explore(
    scenario: &Scenario,
    registry: &MachineRegistry,
    limits: Limits,
) -> Result<Exploration, ScenarioError> {
    if scenario.agents.len() > limits.max_agents {
        return Err(ScenarioError::LimitExceeded(format!(
            "{} agents, at most {} allowed",
            scenario.agents.len(),
            limits.max_agents
        )));
    }
    let sim = Simulation::new(scenario, registry)?;
    let mut search = Search {
        limits,
        seen: HashSet::new(),
        out: Exploration::default(),
        schedule: Vec::new(),
    };
    search.visit(sim)?;
    Ok(search.out)
}

struct Search {
    limits: Limits,
    seen: HashSet<String>,
    out: Exploration,
    schedule: Vec<String>,
}

fn state_key(sim: &Simulation) -> String {
    let mut key = String::new();
    for agent in &sim.agents {
        key.push_str(&to_ndjson(agent.log.known()));
        key.push_str(&format!(
            "{:?}{}|",
            agent.memory.acted,
            agent.runner.is_settled()
        ));
    }
    key
}

impl Search {
    fn visit(&mut self, sim: Simulation) -> Result<(), ScenarioError> {
        if !self.seen.insert(state_key(&sim)) {
            return Ok(());
        }
        self.out.states += 1;
        if self.out.states > self.limits.max_states {
            return Err(ScenarioError::LimitExceeded(format!(
                "more than {} states",
                self.limits.max_states
            )));
        }
        let emitted: usize = sim.agents.iter().map(|a| a.log.own().len()).sum();
        if emitted > self.limits.max_events {
            return Err(ScenarioError::LimitExceeded(format!(
                "{emitted} events emitted, at most {} allowed",
                self.limits.max_events
            )));
        }

        let mut terminal = true;
        for i in 0..sim.agents.len() {
            if sim.decision(i).is_none() {
                continue;
            }
            terminal = false;
            let mut next = sim.clone();
            let entry = next.act(i, 0)?.expect("decided");
            self.schedule
                .push(serde_json::to_string(&entry).expect("serializes"));
            self.visit(next)?;
            self.schedule.pop();
        }
        for to in 0..sim.agents.len() {
            let mut offers: BTreeMap<RecordKey, (usize, EventRecord)> = BTreeMap::new();
            for from in 0..sim.agents.len() {
                if from == to {
                    continue;
                }
                for record in sim.missing(from, to) {
                    offers.entry(record.key()).or_insert((from, record));
                }
            }
            for (from, record) in offers.into_values() {
                terminal = false;
                let mut next = sim.clone();
                let entry = next.deliver(from, to, vec![record], 0)?;
                self.schedule
                    .push(serde_json::to_string(&entry).expect("serializes"));
                self.visit(next)?;
                self.schedule.pop();
            }
        }

        if terminal {
            self.out.terminals += 1;
            let report = sim.consensus()?;
            if !report.converged {
                self.out.diverging_terminals += 1;
                if self.out.counterexample.is_none() {
                    self.out.counterexample = Some(Counterexample {
                        schedule: self.schedule.clone(),
                        report,
                    });
                }
            }
        }
        Ok(())
    }
}
