use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use crate::eventlog::{EventRecord, NodeLog, RecordKey};
use crate::model::{Command, NodeId};
use crate::runner::{MachineDefinition, Runner};

use super::consensus::{consensus_check, AgentView, ConsensusReport};
use super::scenario::{AgentMemory, MachineRegistry, Scenario, ScenarioError};

/// Rounds of the post-heal drain before giving up.
pub const DRAIN_LIMIT: u64 = 10_000;

/// One scheduler action.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TraceEntry {
    #[serde(rename_all = "camelCase")]
    Invoke {
        step: u64,
        agent_id: String,
        cmd: Command,
        args: Value,
        records: Vec<EventRecord>,
    },
    Deliver {
        step: u64,
        from: NodeId,
        to: NodeId,
        records: Vec<RecordKey>,
    },
    Noop {
        step: u64,
    },
    Heal {
        step: u64,
    },
}

pub fn trace_to_ndjson(trace: &[TraceEntry]) -> String {
    let mut out = String::new();
    for entry in trace {
        out.push_str(&serde_json::to_string(entry).expect("trace entry serializes"));
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub(crate) struct Agent {
    pub(crate) id: String,
    pub(crate) runner: Runner,
    pub(crate) log: NodeLog,
    pub(crate) memory: AgentMemory,
}

/// The live state of a scenario: one node log, runner and memory per agent.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub(crate) scenario: Arc<Scenario>,
    pub(crate) agents: Vec<Agent>,
}

impl Simulation {
    pub fn new(scenario: &Scenario, registry: &MachineRegistry) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let mut agents = Vec::with_capacity(scenario.agents.len());
        for spec in &scenario.agents {
            let (def, payload): (Arc<MachineDefinition>, Value) =
                registry.resolve(spec, &scenario.protocol, &scenario.subs)?;
            let runner = Runner::new(def, payload, &scenario.session_id)
                .with_subscriptions(scenario.subs.get(&spec.role).clone());
            agents.push(Agent {
                id: spec.agent_id.clone(),
                runner,
                log: NodeLog::new(spec.node_id.clone()),
                memory: AgentMemory::new(&spec.strategy),
            });
        }
        Ok(Self {
            scenario: Arc::new(scenario.clone()),
            agents,
        })
    }

    /// The command agent `i` would invoke now.
    pub(crate) fn decision(&self, i: usize) -> Option<(usize, Command, Value)> {
        let agent = &self.agents[i];
        if !agent.runner.is_settled() {
            return None;
        }
        self.scenario.agents[i]
            .strategy
            .decide(&agent.id, &agent.runner.state(), &agent.memory)
    }

    pub(crate) fn act(&mut self, i: usize, step: u64) -> Result<Option<TraceEntry>, ScenarioError> {
        let Some((strategy, cmd, args)) = self.decision(i) else {
            return Ok(None);
        };
        let agent = &mut self.agents[i];
        let records = agent.runner.invoke(&cmd, &args, &mut agent.log)?;
        agent.runner.advance(records.clone())?;
        agent.memory.acted[strategy] = true;
        Ok(Some(TraceEntry::Invoke {
            step,
            agent_id: agent.id.clone(),
            cmd,
            args,
            records,
        }))
    }

    pub(crate) fn missing(&self, from: usize, to: usize) -> Vec<EventRecord> {
        self.agents[from].log.missing_at(&self.agents[to].log)
    }

    pub(crate) fn deliver(
        &mut self,
        from: usize,
        to: usize,
        records: Vec<EventRecord>,
        step: u64,
    ) -> Result<TraceEntry, ScenarioError> {
        let keys = records.iter().map(EventRecord::key).collect();
        let agent = &mut self.agents[to];
        let fresh = agent
            .log
            .receive(records)
            .map_err(crate::runner::RunnerError::from)?;
        agent.runner.advance(fresh)?;
        Ok(TraceEntry::Deliver {
            step,
            from: self.agents[from].log.node_id().clone(),
            to: self.agents[to].log.node_id().clone(),
            records: keys,
        })
    }

    pub fn consensus(&self) -> Result<ConsensusReport, ScenarioError> {
        let views: Vec<AgentView> = self
            .agents
            .iter()
            .zip(&self.scenario.agents)
            .map(|(agent, spec)| AgentView {
                agent_id: &agent.id,
                role: &spec.role,
                runner: &agent.runner,
            })
            .collect();
        let logs: Vec<&NodeLog> = self.agents.iter().map(|a| &a.log).collect();
        Ok(consensus_check(
            &self.scenario.protocol,
            &self.scenario.subs,
            &self.scenario.session_id,
            &views,
            &logs,
        )?)
    }

    pub fn runner(&self, agent_id: &str) -> Option<&Runner> {
        self.agents
            .iter()
            .find(|a| a.id == agent_id)
            .map(|a| &a.runner)
    }

    pub fn node_log(&self, agent_id: &str) -> Option<&NodeLog> {
        self.agents
            .iter()
            .find(|a| a.id == agent_id)
            .map(|a| &a.log)
    }
}

enum Action {
    Act(usize),
    Deliver(usize, usize),
    Noop,
}

/// Picks a non-empty subset of `records`, keeping their order.
fn random_subset(rng: &mut ChaCha8Rng, records: Vec<EventRecord>) -> Vec<EventRecord> {
    loop {
        let picked: Vec<EventRecord> = records
            .iter()
            .filter(|_| rng.gen_range(0..2u32) == 1)
            .cloned()
            .collect();
        if !picked.is_empty() {
            return picked;
        }
    }
}

/// Runs the scheduler for `maxSteps`, heals, drains to quiescence and checks
/// consensus.
pub fn run_scenario(
    scenario: &Scenario,
    registry: &MachineRegistry,
) -> Result<(Vec<TraceEntry>, ConsensusReport), ScenarioError> {
    let (trace, sim) = simulate(scenario, registry)?;
    Ok((trace, sim.consensus()?))
}

/// Like [`run_scenario`] but returns the final simulation instead of the report.
pub fn simulate(
    scenario: &Scenario,
    registry: &MachineRegistry,
) -> Result<(Vec<TraceEntry>, Simulation), ScenarioError> {
    let mut sim = Simulation::new(scenario, registry)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut trace = Vec::new();
    let n = sim.agents.len();

    for step in 0..scenario.max_steps {
        let groups = scenario.groups_at(step);
        let mut actions = Vec::new();
        for i in 0..n {
            if sim.decision(i).is_some() {
                actions.push(Action::Act(i));
            }
        }
        for from in 0..n {
            for to in 0..n {
                if from != to && groups[from] == groups[to] && !sim.missing(from, to).is_empty() {
                    actions.push(Action::Deliver(from, to));
                }
            }
        }
        actions.push(Action::Noop);
        let entry = match actions[rng.gen_range(0..actions.len())] {
            Action::Act(i) => sim.act(i, step)?.expect("agent decided to act"),
            Action::Deliver(from, to) => {
                let records = random_subset(&mut rng, sim.missing(from, to));
                sim.deliver(from, to, records, step)?
            }
            Action::Noop => TraceEntry::Noop { step },
        };
        trace.push(entry);
    }

    let mut step = scenario.max_steps;
    trace.push(TraceEntry::Heal { step });
    for _ in 0..DRAIN_LIMIT {
        let mut busy = false;
        for from in 0..n {
            for to in 0..n {
                if from == to {
                    continue;
                }
                let missing = sim.missing(from, to);
                if !missing.is_empty() {
                    step += 1;
                    trace.push(sim.deliver(from, to, missing, step)?);
                    busy = true;
                }
            }
        }
        if busy {
            continue;
        }
        for i in 0..n {
            if let Some(entry) = sim.act(i, step + 1)? {
                step += 1;
                trace.push(entry);
                busy = true;
            }
        }
        if !busy {
            return Ok((trace, sim));
        }
    }
    Err(ScenarioError::NoQuiescence(DRAIN_LIMIT))
}
