//! Observer-wired MAPE-K control loop components.
//!
//! The managing system is assembled from sensors, monitors, analyzers,
//! planners, executors and effectors that talk to each other only through
//! [`loopcore::Bus`] subscriptions, and share one [`knowledge::Knowledge`]
//! base. [`simfarm`] provides a deterministic managed system (a load-balanced
//! server farm) that the loop can be run against; [`scenario`] and
//! [`runner`] turn scenario and policy files into a full simulation run.

pub mod analysis;
pub mod control;
pub mod execution;
pub mod knowledge;
pub mod loopcore;
pub mod monitoring;
pub mod planning;
pub mod runner;
pub mod scenario;
pub mod simfarm;

use std::fmt;

/// Logical time. One tick is one simulated second.
pub type Tick = u64;

/// Identifier of a managed element (for the server farm, a server).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ElementId(String);

impl ElementId {
    pub fn new(id: impl Into<String>) -> Self {
        ElementId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ElementId {
    fn from(s: &str) -> Self {
        ElementId(s.to_string())
    }
}

pub use analysis::{AdaptationRequest, Analyzer, Symptom, SymptomKind, SymptomRepository, SymptomScope};
pub use control::{ControlLoop, LoopTopology, SensorTemplate};
pub use execution::{
    Effect, Effector, ExecutionReport, Executor, ManagedSystem, RestorePoint, StepOutcome,
    SystemSnapshot,
};
pub use knowledge::{Decision, DecisionKind, Knowledge, KnowledgeView, SystemStateLog};
pub use loopcore::{Bus, Clock, ComponentId, ComponentKind, Subscription};
pub use monitoring::{
    Monitor, PropertyDescriptor, Reading, RuntimeState, Sample, Scope, Sensor, SensorMode,
    StateKey, Threshold,
};
pub use planning::{Action, ChangePlan, DispatchMode, PolicyEngine, PolicyRule, Planner, Selector};
pub use simfarm::{Farm, FarmConfig, FarmMetrics, Workload};
