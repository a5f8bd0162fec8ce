//! Runs a scenario against a policy set and produces the metrics trace and
//! decision log.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::control::{ControlError, ControlLoop};
use crate::execution::{Dispatch, ManagedSystem};
use crate::knowledge::Decision;
use crate::loopcore::Clock;
use crate::planning::{PolicyEngine, PolicyError};
use crate::scenario::{parse_scenario, Scenario, ScenarioError};
use crate::simfarm::{Farm, FarmMetrics};
use crate::{ElementId, Tick};

const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Scenario { path: String, source: ScenarioError },
    #[error("{path}: {source}")]
    Policy { path: String, source: PolicyError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Setup(String),
    #[error("invariant `{invariant}` violated at t={at}: {detail}")]
    Invariant {
        invariant: &'static str,
        at: Tick,
        detail: String,
    },
}

impl RunError {
    /// 2 for invariant violations during the run, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Invariant { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub duration: Option<Tick>,
    pub concurrent_exec: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<FarmMetrics>,
    pub decisions: Vec<Decision>,
    pub final_servers: Vec<ElementId>,
    pub max_active_servers: usize,
}

impl RunOutput {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(FarmMetrics::CSV_HEADER);
        out.push('\n');
        for row in &self.metrics {
            out.push_str(&row.to_csv_row());
            out.push('\n');
        }
        out
    }

    pub fn decision_log(&self) -> String {
        self.decisions.iter().map(|d| format!("{d}\n")).collect()
    }

    /// Writes `metrics.csv` and `decisions.log` into `dir`, creating it.
    pub fn write_to(&self, dir: &Path) -> Result<(), RunError> {
        let io = |path: PathBuf| move |source| RunError::Io {
            path: path.display().to_string(),
            source,
        };
        fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
        let metrics = dir.join("metrics.csv");
        fs::write(&metrics, self.metrics_csv()).map_err(io(metrics.clone()))?;
        let decisions = dir.join("decisions.log");
        fs::write(&decisions, self.decision_log()).map_err(io(decisions.clone()))?;
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, RunError> {
    parse_scenario(&read(path)?).map_err(|source| RunError::Scenario {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_policies(path: &Path) -> Result<PolicyEngine, RunError> {
    PolicyEngine::from_text(&read(path)?).map_err(|source| RunError::Policy {
        path: path.display().to_string(),
        source,
    })
}

/// Static checks. Returns warnings; errors abort.
pub fn validate(scenario: &Scenario, policies: &PolicyEngine) -> Vec<String> {
    let mut warnings = Vec::new();
    for event in policies.events() {
        if !scenario.symptoms.iter().any(|s| s.event_name == event) {
            warnings.push(format!("policy event `{event}` matches no declared symptom"));
        }
    }
    for s in &scenario.symptoms {
        if !policies.rules().iter().any(|r| r.event == s.event_name) {
            warnings.push(format!("symptom `{}` has no policy rule", s.event_name));
        }
    }
    warnings
}

#[derive(Debug)]
enum Event {
    Tick,
    Fault(ElementId),
}

fn violation(invariant: &'static str, at: Tick, detail: String) -> RunError {
    RunError::Invariant { invariant, at, detail }
}

fn loop_error(at: Tick) -> impl Fn(ControlError) -> RunError {
    move |e| violation("loop", at, e.to_string())
}

fn check_tick(farm: &Farm, lp: &ControlLoop, rows: &[FarmMetrics], at: Tick) -> Result<(), RunError> {
    if let Some(r) = rows.iter().find(|r| !(0.0..=1.0).contains(&r.load)) {
        return Err(violation("load bounds", at, format!("{} load {}", r.server_id, r.load)));
    }
    let totals = farm.totals();
    if (totals.throughput + totals.dropped - totals.arrival_rate).abs() > TOLERANCE
        || totals.throughput > totals.arrival_rate + TOLERANCE
    {
        return Err(violation("conservation", at, format!("{totals:?}")));
    }
    let config = farm.config();
    let n = farm.active_servers();
    if n < config.min_servers.min(config.initial_servers) || n > config.max_servers {
        return Err(violation("server bounds", at, format!("{n} servers")));
    }
    if lp.provisioned() != farm.elements() {
        return Err(violation(
            "wiring matches topology",
            at,
            format!("loop {:?} vs farm {:?}", lp.provisioned(), farm.elements()),
        ));
    }
    Ok(())
}

/// Runs the whole scenario on the logical clock.
pub fn simulate(scenario: &Scenario, policies: &PolicyEngine, opts: &RunOptions) -> Result<RunOutput, RunError> {
    let mut scenario = scenario.clone();
    if let Some(seed) = opts.seed {
        scenario.seed = seed;
    }
    if let Some(duration) = opts.duration {
        scenario.duration = duration;
    }
    let mut farm = scenario.build_farm().map_err(|e| RunError::Setup(e.to_string()))?;
    let mut knowledge = scenario.knowledge();
    *knowledge.policies_mut() = policies.clone();
    let dispatch = if opts.concurrent_exec {
        Dispatch::Threaded
    } else {
        Dispatch::Deterministic
    };
    let mut lp = ControlLoop::standard(knowledge, scenario.topology, scenario.sensors.clone(), dispatch)
        .map_err(|e| RunError::Setup(e.to_string()))?;
    lp.reconcile(&farm, 0).map_err(|e| RunError::Setup(e.to_string()))?;

    let mut clock = Clock::new();
    for t in 0..scenario.duration {
        clock.schedule(t, Event::Tick).expect("clock starts at 0");
    }
    for (server, at) in &scenario.faults {
        clock
            .schedule(*at, Event::Fault(server.clone()))
            .expect("clock starts at 0");
    }

    let mut metrics = Vec::new();
    let mut max_active = farm.active_servers();
    while let Some((t, event)) = clock.pop_until(Tick::MAX) {
        match event {
            Event::Tick => {
                let rows = farm.step(t);
                lp.observe(t, &mut farm).map_err(loop_error(t))?;
                check_tick(&farm, &lp, &rows, t)?;
                max_active = max_active.max(farm.active_servers());
                metrics.extend(rows);
            }
            Event::Fault(server) => {
                if let Err(e) = farm.inject_fault(&server, t) {
                    log::warn!("t={t} fault not injected: {e}");
                }
            }
        }
    }
    log::info!(
        "finished {} ticks: {} servers, {} decisions",
        scenario.duration,
        farm.active_servers(),
        lp.knowledge().decisions().len()
    );
    Ok(RunOutput {
        metrics,
        decisions: lp.knowledge().decisions().to_vec(),
        final_servers: farm.elements(),
        max_active_servers: max_active,
    })
}

/// Loads both files, runs, and writes the outputs into `out`.
pub fn run(
    scenario_path: &Path,
    policy_path: &Path,
    out: &Path,
    opts: &RunOptions,
) -> Result<RunOutput, RunError> {
    let scenario = load_scenario(scenario_path)?;
    let policies = load_policies(policy_path)?;
    for w in validate(&scenario, &policies) {
        log::warn!("{w}");
    }
    let output = simulate(&scenario, &policies, opts)?;
    output.write_to(out)?;
    Ok(output)
}
