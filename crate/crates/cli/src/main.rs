use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use swarm_core::dot::{protocol_to_dot, shape_to_dot};
use swarm_core::model::{CheckResult, Diagnostic, Role};
use swarm_core::projection::ProjectionError;
use swarm_core::sim::{run_scenario, trace_to_ndjson, ConsensusReport, MachineRegistry, Scenario};
use swarm_core::{
    check_projection, check_swarm_protocol, parse_machine_shape, parse_protocol,
    parse_subscriptions, project, ParseError, Subscriptions, SwarmProtocol,
};

#[derive(Parser)]
#[command(
    name = "swarm",
    version,
    about = "Check, project and simulate swarm protocols"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a protocol and subscription for well-formedness.
    Check {
        protocol: PathBuf,
        subs: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print a role's projected machine.
    Project {
        protocol: PathBuf,
        subs: PathBuf,
        #[arg(long)]
        role: String,
        #[arg(long)]
        dot: bool,
    },
    /// Check a machine shape against a role's projection.
    CheckMachine {
        protocol: PathBuf,
        subs: PathBuf,
        #[arg(long)]
        role: String,
        machine: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run a scenario for one seed or a range of seeds.
    Simulate {
        scenario: PathBuf,
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Inclusive range `A..B`.
        #[arg(long, value_parser = parse_seed_range)]
        seeds: Option<(u64, u64)>,
        #[arg(long, conflicts_with = "seeds")]
        trace: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Print a protocol as a DOT digraph.
    Dot { protocol: PathBuf },
}

fn parse_seed_range(text: &str) -> Result<(u64, u64), String> {
    let (a, b) = text
        .split_once("..")
        .ok_or_else(|| format!("expected A..B, got `{text}`"))?;
    let a: u64 = a
        .parse()
        .map_err(|e| format!("bad range start `{a}`: {e}"))?;
    let b: u64 = b.parse().map_err(|e| format!("bad range end `{b}`: {e}"))?;
    if a > b {
        return Err(format!("empty range {a}..{b}"));
    }
    Ok((a, b))
}

/// An error that ends the process with exit code 2.
struct Fatal(String);

impl From<ParseError> for Fatal {
    fn from(e: ParseError) -> Self {
        Fatal(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Fatal> {
    fs::read_to_string(path).map_err(|e| Fatal(format!("{}: {e}", path.display())))
}

fn parse_in<T>(path: &Path, parse: fn(&str) -> Result<T, ParseError>) -> Result<T, Fatal> {
    parse(&read(path)?).map_err(|e| Fatal(format!("{}: {e}", path.display())))
}

fn load(protocol: &Path, subs: &Path) -> Result<(SwarmProtocol, Subscriptions), Fatal> {
    Ok((
        parse_in(protocol, parse_protocol)?,
        parse_in(subs, parse_subscriptions)?,
    ))
}

fn role(name: &str) -> Result<Role, Fatal> {
    name.parse().map_err(|e| Fatal(format!("--role: {e}")))
}

fn describe(d: &Diagnostic) -> String {
    let mut line = d.code.as_str().to_owned();
    if let Some(t) = d.transition {
        line.push_str(&format!(" transition={t}"));
    }
    if let Some(s) = &d.state {
        line.push_str(&format!(" state={s}"));
    }
    if let Some(r) = &d.role {
        line.push_str(&format!(" role={r}"));
    }
    if let Some(e) = &d.event_type {
        line.push_str(&format!(" event={e}"));
    }
    if let Some(path) = &d.path {
        let path: Vec<&str> = path.iter().map(|e| e.as_str()).collect();
        line.push_str(&format!(" path={}", json!(path)));
    }
    format!("{line}: {}", d.message)
}

fn report(result: &CheckResult, as_json: bool) -> u8 {
    if as_json {
        println!("{}", result.to_json());
    } else if result.is_ok() {
        println!("OK");
    } else {
        for d in result.errors() {
            println!("{}", describe(d));
        }
    }
    u8::from(!result.is_ok())
}

fn print_consensus(seed: u64, r: &ConsensusReport) {
    let verdict = if r.converged {
        "converged"
    } else {
        "NOT converged"
    };
    println!("seed {seed}: {verdict}");
    for (agent, a) in &r.per_agent {
        println!(
            "  {agent} ({}): state {} expected {}{}",
            a.role,
            a.final_state,
            a.expected_state,
            if a.matches { "" } else { "  MISMATCH" }
        );
    }
    for d in &r.divergences {
        println!("  {d}");
    }
}

fn run(cli: Cli) -> Result<u8, Fatal> {
    match cli.command {
        Cmd::Check {
            protocol,
            subs,
            json,
        } => {
            let (p, s) = load(&protocol, &subs)?;
            let result = check_swarm_protocol(&p, &s).map_err(|e| Fatal(e.to_string()))?;
            Ok(report(&result, json))
        }
        Cmd::Project {
            protocol,
            subs,
            role: r,
            dot,
        } => {
            let (p, s) = load(&protocol, &subs)?;
            match project(&p, &s, &role(&r)?) {
                Ok(m) if dot => print!("{}", shape_to_dot(&m.shape)),
                Ok(m) => println!("{}", m.shape.to_json()),
                Err(e @ ProjectionError::MissingSubscription(_)) => {
                    return Err(Fatal(e.to_string()))
                }
                Err(e) => {
                    eprintln!("{e}");
                    return Ok(1);
                }
            }
            Ok(0)
        }
        Cmd::CheckMachine {
            protocol,
            subs,
            role: r,
            machine,
            json,
        } => {
            let (p, s) = load(&protocol, &subs)?;
            let shape = parse_in(&machine, parse_machine_shape)?;
            match check_projection(&p, &s, &role(&r)?, &shape) {
                Ok(result) => Ok(report(&result, json)),
                Err(e @ ProjectionError::MissingSubscription(_)) => Err(Fatal(e.to_string())),
                Err(e) => {
                    eprintln!("{e}");
                    Ok(1)
                }
            }
        }
        Cmd::Simulate {
            scenario,
            seed,
            seeds,
            trace,
            json,
        } => {
            let mut sc = parse_in(&scenario, Scenario::from_json)?;
            let registry = MachineRegistry::builtin();
            let seeds: Vec<u64> = match (seed, seeds) {
                (_, Some((a, b))) => (a..=b).collect(),
                (Some(n), None) => vec![n],
                (None, None) => vec![sc.seed],
            };
            let mut failed = Vec::new();
            let mut reports = Vec::new();
            for n in seeds {
                sc.seed = n;
                let (entries, r) =
                    run_scenario(&sc, &registry).map_err(|e| Fatal(e.to_string()))?;
                if let Some(path) = &trace {
                    fs::write(path, trace_to_ndjson(&entries))
                        .map_err(|e| Fatal(format!("{}: {e}", path.display())))?;
                }
                if !r.converged {
                    failed.push(n);
                }
                if !json {
                    print_consensus(n, &r);
                }
                reports.push(json!({ "seed": n, "report": r }));
            }
            if json {
                let out = match reports.as_slice() {
                    [one] => one["report"].clone(),
                    _ => json!(reports),
                };
                println!("{}", serde_json::to_string_pretty(&out).expect("json"));
            } else if reports.len() > 1 {
                println!(
                    "{} of {} seeds converged; not converged: {failed:?}",
                    reports.len() - failed.len(),
                    reports.len()
                );
            }
            Ok(u8::from(!failed.is_empty()))
        }
        Cmd::Dot { protocol } => {
            let p = parse_in(&protocol, parse_protocol)?;
            print!("{}", protocol_to_dot(&p));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Fatal(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
