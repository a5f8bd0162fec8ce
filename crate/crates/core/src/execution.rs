//! Executor, effectors, restore points and rollback.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Mutex;

use thiserror::Error;

use crate::knowledge::{Decision, DecisionKind, Knowledge};
use crate::loopcore::ComponentId;
use crate::monitoring::PropertySource;
use crate::planning::{Action, ChangePlan, PlannedStep, Verb};
use crate::{ElementId, Tick};

/// Why the managed system refused a change.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EffectError {
    #[error("no-such-element {0}")]
    NoSuchElement(ElementId),
    #[error("element {0} already exists")]
    ElementExists(ElementId),
    #[error("capacity: at most {max} elements")]
    Capacity { max: usize },
    #[error("min-elements: at least {min} elements")]
    MinElements { min: usize },
    #[error("unknown property {0}")]
    UnknownProperty(String),
    #[error("invalid value {value} for {name}")]
    InvalidValue { name: String, value: f64 },
    #[error("no target resolved")]
    NoTarget,
}

/// System-scoped property values plus the element set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SystemSnapshot {
    pub properties: BTreeMap<String, f64>,
    pub topology: BTreeSet<ElementId>,
}

/// The system a loop adapts. Everything the executor may change is reachable
/// through this trait, so a snapshot taken here is complete.
pub trait ManagedSystem: PropertySource + Send {
    fn elements(&self) -> Vec<ElementId>;
    fn add_element(&mut self) -> Result<ElementId, EffectError>;
    fn remove_element(&mut self, id: &ElementId) -> Result<(), EffectError>;
    /// Returns the previous value.
    fn set_property(&mut self, name: &str, value: f64) -> Result<f64, EffectError>;
    fn snapshot(&self) -> SystemSnapshot;
    /// Recreates a removed element with the values recorded in `snapshot`.
    fn restore_element(&mut self, id: &ElementId, snapshot: &SystemSnapshot) -> Result<(), EffectError>;
}

/// A change that was applied, with enough data to invert it.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    ElementAdded(ElementId),
    ElementRemoved(ElementId),
    PropertySet { name: String, previous: f64, value: f64 },
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Effect::ElementAdded(id) => write!(f, "added({id})"),
            Effect::ElementRemoved(id) => write!(f, "removed({id})"),
            Effect::PropertySet { name, value, .. } => write!(f, "set({name}={value})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Applied,
    Failed(String),
    Skipped,
}

impl fmt::Display for StepOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepOutcome::Applied => f.write_str("applied"),
            StepOutcome::Failed(reason) => write!(f, "failed({reason})"),
            StepOutcome::Skipped => f.write_str("skipped"),
        }
    }
}

/// Applies actions of the verbs it advertises to the managed system.
#[derive(Debug, Clone)]
pub struct Effector {
    pub id: ComponentId,
    pub verbs: BTreeSet<Verb>,
    /// Name of the managed system this effector is bound to.
    pub target: String,
}

impl Effector {
    pub fn new(id: ComponentId, verbs: impl IntoIterator<Item = Verb>, target: impl Into<String>) -> Self {
        Effector {
            id,
            verbs: verbs.into_iter().collect(),
            target: target.into(),
        }
    }

    pub fn handles(&self, verb: Verb) -> bool {
        self.verbs.contains(&verb)
    }

    /// Mutates the system once. Not idempotent.
    pub fn apply_effect(
        &self,
        step: &PlannedStep,
        system: &mut dyn ManagedSystem,
    ) -> Result<Effect, EffectError> {
        match &step.action {
            Action::AddServer => system.add_element().map(Effect::ElementAdded),
            Action::RemoveServer(_) => {
                let id = step.target.clone().ok_or(EffectError::NoTarget)?;
                system.remove_element(&id)?;
                Ok(Effect::ElementRemoved(id))
            }
            Action::SetProperty { property, value } => {
                let previous = system.set_property(property, *value)?;
                Ok(Effect::PropertySet {
                    name: property.clone(),
                    previous,
                    value: *value,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestorePoint {
    pub id: u64,
    pub taken_at: Tick,
    pub snapshot: SystemSnapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionReport {
    pub plan_id: u64,
    pub event: String,
    pub element: ElementId,
    pub outcomes: Vec<StepOutcome>,
    /// Changes in the order they hit the system.
    pub effects: Vec<Effect>,
    pub started_at: Tick,
    pub finished_at: Tick,
    pub restore_point_id: u64,
    pub rollback: bool,
}

impl ExecutionReport {
    pub fn succeeded(&self) -> bool {
        self.outcomes.iter().all(|o| *o == StepOutcome::Applied)
    }

    fn summary(&self) -> String {
        let outcomes: Vec<String> = self.outcomes.iter().map(|o| o.to_string()).collect();
        let prefix = if self.rollback { "rollback " } else { "" };
        format!(
            "{prefix}plan={} rp={} outcomes=[{}]",
            self.plan_id,
            self.restore_point_id,
            outcomes.join(", ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecutionError {
    #[error("no wired effector handles `{0}`")]
    Uncovered(Verb),
    #[error("plan {0} was already executed")]
    AlreadyExecuted(u64),
    #[error("restore point {0} does not exist")]
    MissingRestorePoint(u64),
    #[error("cannot restore element {element}: {reason}")]
    Irrecoverable { element: ElementId, reason: String },
}

/// How steps inside a concurrent group are dispatched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dispatch {
    /// One context, group members in step order.
    #[default]
    Deterministic,
    /// One scoped thread per group member, serialized through a mutex.
    Threaded,
}

#[derive(Debug)]
pub struct Executor {
    id: ComponentId,
    effectors: Vec<Effector>,
    executed: BTreeSet<u64>,
    dispatch: Dispatch,
}

impl Executor {
    pub fn new(id: ComponentId) -> Self {
        Executor {
            id,
            effectors: Vec::new(),
            executed: BTreeSet::new(),
            dispatch: Dispatch::Deterministic,
        }
    }

    pub fn with_dispatch(mut self, dispatch: Dispatch) -> Self {
        self.dispatch = dispatch;
        self
    }

    pub fn id(&self) -> &ComponentId {
        &self.id
    }

    pub fn wire(&mut self, effector: Effector) {
        self.effectors.retain(|e| e.id != effector.id);
        self.effectors.push(effector);
    }

    pub fn unwire(&mut self, name: &str) -> bool {
        let before = self.effectors.len();
        self.effectors.retain(|e| e.id.name() != name);
        before != self.effectors.len()
    }

    pub fn effectors(&self) -> &[Effector] {
        &self.effectors
    }

    fn effector_for(&self, verb: Verb) -> Result<&Effector, ExecutionError> {
        self.effectors
            .iter()
            .find(|e| e.handles(verb))
            .ok_or(ExecutionError::Uncovered(verb))
    }

    /// Takes a restore point, runs the plan's dispatch groups in order and
    /// records the report in `knowledge`. A failed step aborts the groups
    /// after its own; steps of the same group all run.
    pub fn execute(
        &mut self,
        plan: &ChangePlan,
        system: &mut dyn ManagedSystem,
        knowledge: &mut Knowledge,
        now: Tick,
    ) -> Result<ExecutionReport, ExecutionError> {
        if self.executed.contains(&plan.id) {
            return Err(ExecutionError::AlreadyExecuted(plan.id));
        }
        let effectors = plan
            .steps
            .iter()
            .map(|s| self.effector_for(s.action.verb()))
            .collect::<Result<Vec<_>, _>>()?;
        let rp = knowledge.take_restore_point(system.snapshot(), now);
        let mut outcomes = vec![StepOutcome::Skipped; plan.steps.len()];
        let mut effects = Vec::new();
        for group in plan.dispatch.groups(plan.steps.len()) {
            let results = if self.dispatch == Dispatch::Threaded && group.len() > 1 {
                apply_threaded(&plan.steps, &effectors, group.clone(), system)
            } else {
                group
                    .clone()
                    .map(|i| (i, effectors[i].apply_effect(&plan.steps[i], system)))
                    .collect()
            };
            let mut failed = false;
            for (i, result) in results {
                outcomes[i] = match result {
                    Ok(effect) => {
                        effects.push(effect);
                        StepOutcome::Applied
                    }
                    Err(e) => {
                        failed = true;
                        StepOutcome::Failed(e.to_string())
                    }
                };
            }
            if failed {
                break;
            }
        }
        self.executed.insert(plan.id);
        let report = ExecutionReport {
            plan_id: plan.id,
            event: plan.request.event_name.clone(),
            element: plan.request.element.clone(),
            outcomes,
            effects,
            started_at: now,
            finished_at: now,
            restore_point_id: rp.id,
            rollback: false,
        };
        finish(knowledge, &report);
        Ok(report)
    }

    /// Returns the system to restore point `rp_id`: the effects of the plan
    /// run from it are inverted newest first, then any remaining property or
    /// topology difference is written directly.
    pub fn rollback(
        &mut self,
        rp_id: u64,
        system: &mut dyn ManagedSystem,
        knowledge: &mut Knowledge,
        now: Tick,
    ) -> Result<ExecutionReport, ExecutionError> {
        let rp = knowledge
            .restore_point(rp_id)
            .cloned()
            .ok_or(ExecutionError::MissingRestorePoint(rp_id))?;
        let original = knowledge.report_for(rp_id).cloned();
        let target = &rp.snapshot;
        let mut outcomes = Vec::new();
        let mut effects = Vec::new();
        let mut record = |r: Result<Effect, EffectError>| match r {
            Ok(e) => {
                effects.push(e);
                outcomes.push(StepOutcome::Applied);
            }
            Err(e) => outcomes.push(StepOutcome::Failed(e.to_string())),
        };
        if let Some(report) = &original {
            for effect in report.effects.iter().rev() {
                record(invert(effect, system, target));
            }
        }
        let current = system.snapshot();
        for id in current.topology.difference(&target.topology) {
            record(system.remove_element(id).map(|_| Effect::ElementRemoved(id.clone())));
        }
        for id in target.topology.difference(&current.topology) {
            record(
                system
                    .restore_element(id, target)
                    .map(|_| Effect::ElementAdded(id.clone())),
            );
        }
        let current = system.snapshot();
        for (name, &value) in &target.properties {
            if current.properties.get(name).map(|v| v.to_bits()) != Some(value.to_bits()) {
                record(system.set_property(name, value).map(|previous| Effect::PropertySet {
                    name: name.clone(),
                    previous,
                    value,
                }));
            }
        }
        let after = system.snapshot();
        if let Some(element) = target.topology.symmetric_difference(&after.topology).next() {
            return Err(ExecutionError::Irrecoverable {
                element: element.clone(),
                reason: "topology differs after rollback".into(),
            });
        }
        let (plan_id, event, element) = match &original {
            Some(r) => (r.plan_id, r.event.clone(), r.element.clone()),
            None => (0, "rollback".to_string(), ElementId::new("*")),
        };
        let report = ExecutionReport {
            plan_id,
            event,
            element,
            outcomes,
            effects,
            started_at: now,
            finished_at: now,
            restore_point_id: rp_id,
            rollback: true,
        };
        finish(knowledge, &report);
        Ok(report)
    }
}

fn invert(
    effect: &Effect,
    system: &mut dyn ManagedSystem,
    target: &SystemSnapshot,
) -> Result<Effect, EffectError> {
    match effect {
        Effect::ElementAdded(id) => system.remove_element(id).map(|_| Effect::ElementRemoved(id.clone())),
        Effect::ElementRemoved(id) => system
            .restore_element(id, target)
            .map(|_| Effect::ElementAdded(id.clone())),
        Effect::PropertySet { name, previous, .. } => {
            system.set_property(name, *previous).map(|p| Effect::PropertySet {
                name: name.clone(),
                previous: p,
                value: *previous,
            })
        }
    }
}

fn apply_threaded(
    steps: &[PlannedStep],
    effectors: &[&Effector],
    group: std::ops::Range<usize>,
    system: &mut dyn ManagedSystem,
) -> Vec<(usize, Result<Effect, EffectError>)> {
    let gate = Mutex::new((system, Vec::new()));
    std::thread::scope(|scope| {
        for i in group {
            let gate = &gate;
            let (step, effector) = (&steps[i], effectors[i]);
            scope.spawn(move || {
                let mut guard = gate.lock().unwrap_or_else(|e| e.into_inner());
                let (system, results) = &mut *guard;
                let result = effector.apply_effect(step, &mut **system);
                results.push((i, result));
            });
        }
    });
    let (_, results) = gate.into_inner().unwrap_or_else(|e| e.into_inner());
    results
}

fn finish(knowledge: &mut Knowledge, report: &ExecutionReport) {
    knowledge.record_report(report);
    knowledge.log_decision(Decision {
        at: report.finished_at,
        kind: DecisionKind::Report,
        event: report.event.clone(),
        element: report.element.to_string(),
        detail: report.summary(),
    });
}
