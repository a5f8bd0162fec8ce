//! Assembles components into a running loop and drives it over the bus.
//!
//! A [`ControlLoop`] owns every component and the knowledge base. Components
//! only interact through bus subscriptions; the loop drains the bus after
//! each sensor emission, so a reading is fully handled (monitored, analyzed,
//! planned, executed) before the next sensor is observed.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::analysis::{AdaptationRequest, AnalysisError, Analyzer};
use crate::execution::{Dispatch, Effector, ExecutionError, ExecutionReport, Executor, ManagedSystem};
use crate::knowledge::{Knowledge, KnowledgeError};
use crate::loopcore::{Bus, ComponentId, ComponentKind, LoopError, Payload, PayloadKind, Subscription};
use crate::monitoring::{Monitor, MonitoringError, PropertyDescriptor, Reading, RuntimeState, Sensor, SensorMode, StateKey};
use crate::planning::{ChangePlan, PlanDecision, Planner, Verb};
use crate::{ElementId, Tick};

pub const MAIN_MONITOR: &str = "main";
pub const ANALYZER: &str = "analyzer";
pub const PLANNER: &str = "planner";
pub const EXECUTOR: &str = "executor";
pub const EFFECTOR: &str = "effector";

/// What travels over the loop's bus.
#[derive(Debug, Clone)]
pub enum Message {
    Reading(Reading),
    State(RuntimeState),
    Request(AdaptationRequest),
    Plan(ChangePlan),
    Report(ExecutionReport),
}

impl Payload for Message {
    fn kind(&self) -> PayloadKind {
        match self {
            Message::Reading(_) => PayloadKind::Reading,
            Message::State(_) => PayloadKind::RuntimeState,
            Message::Request(_) => PayloadKind::AdaptationRequest,
            Message::Plan(_) => PayloadKind::ChangePlan,
            Message::Report(_) => PayloadKind::ExecutionReport,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error(transparent)]
    Wiring(#[from] LoopError),
    #[error(transparent)]
    Monitoring(#[from] MonitoringError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Execution(#[from] ExecutionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoopTopology {
    /// Every sensor feeds the main monitor.
    #[default]
    SingleLoop,
    /// Each element gets its own sub-monitor, registered as a child of the
    /// main monitor.
    Hierarchical,
}

/// Sensor created for every element of the managed system.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTemplate {
    pub name: String,
    pub property: String,
    pub unit: String,
    pub mode: SensorMode,
}

impl SensorTemplate {
    pub fn new(name: impl Into<String>, property: impl Into<String>, mode: SensorMode) -> Self {
        SensorTemplate {
            name: name.into(),
            property: property.into(),
            unit: String::new(),
            mode,
        }
    }

    fn sensor_name(&self, element: &ElementId) -> String {
        format!("{}_{element}", self.name)
    }
}

#[derive(Debug, Clone)]
struct Binding {
    element: ElementId,
    sensors: Vec<String>,
    sub_monitor: Option<String>,
}

/// Counters for one `observe` call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TickSummary {
    pub readings: usize,
    pub requests: usize,
    pub plans: usize,
    pub reports: usize,
}

#[derive(Debug)]
pub struct ControlLoop {
    bus: Bus<Message>,
    sensors: BTreeMap<String, Sensor>,
    monitors: BTreeMap<String, Monitor>,
    analyzers: BTreeMap<String, Analyzer>,
    planners: BTreeMap<String, Planner>,
    executors: BTreeMap<String, Executor>,
    effectors: BTreeMap<String, Effector>,
    knowledge: Knowledge,
    topology: LoopTopology,
    templates: Vec<SensorTemplate>,
    bindings: Vec<Binding>,
}

impl ControlLoop {
    /// A loop with no components.
    pub fn empty(knowledge: Knowledge) -> Self {
        ControlLoop {
            bus: Bus::new(),
            sensors: BTreeMap::new(),
            monitors: BTreeMap::new(),
            analyzers: BTreeMap::new(),
            planners: BTreeMap::new(),
            executors: BTreeMap::new(),
            effectors: BTreeMap::new(),
            knowledge,
            topology: LoopTopology::SingleLoop,
            templates: Vec::new(),
            bindings: Vec::new(),
        }
    }

    /// The standard pipeline: main monitor → analyzer → planner → executor →
    /// effector, with one sensor per template and element once
    /// [`ControlLoop::reconcile`] runs.
    pub fn standard(
        knowledge: Knowledge,
        topology: LoopTopology,
        templates: Vec<SensorTemplate>,
        dispatch: Dispatch,
    ) -> Result<Self, ControlError> {
        let mut lp = ControlLoop::empty(knowledge);
        lp.topology = topology;
        lp.templates = templates;
        lp.add_monitor(Monitor::new(ComponentId::monitor(MAIN_MONITOR)))?;
        lp.add_analyzer(Analyzer::new(ComponentId::analyzer(ANALYZER)))?;
        lp.add_planner(Planner::new(ComponentId::planner(PLANNER)))?;
        lp.add_executor(Executor::new(ComponentId::executor(EXECUTOR)).with_dispatch(dispatch))?;
        lp.add_effector(Effector::new(
            ComponentId::effector(EFFECTOR),
            [Verb::AddServer, Verb::RemoveServer, Verb::SetProperty],
            "farm",
        ))?;
        lp.connect(MAIN_MONITOR, ANALYZER, 0)?;
        lp.connect(ANALYZER, PLANNER, 0)?;
        lp.connect(PLANNER, EXECUTOR, 0)?;
        lp.connect(EXECUTOR, EFFECTOR, 0)?;
        Ok(lp)
    }

    pub fn knowledge(&self) -> &Knowledge {
        &self.knowledge
    }

    pub fn knowledge_mut(&mut self) -> &mut Knowledge {
        &mut self.knowledge
    }

    pub fn bus(&self) -> &Bus<Message> {
        &self.bus
    }

    pub fn enable_trace(&mut self) {
        self.bus.enable_trace();
    }

    pub fn topology(&self) -> LoopTopology {
        self.topology
    }

    pub fn monitor(&self, name: &str) -> Option<&Monitor> {
        self.monitors.get(name)
    }

    pub fn sensor(&self, name: &str) -> Option<&Sensor> {
        self.sensors.get(name)
    }

    pub fn sensor_names(&self) -> impl Iterator<Item = &str> {
        self.sensors.keys().map(String::as_str)
    }

    /// Elements the loop currently has sensors for, in provisioning order.
    pub fn provisioned(&self) -> Vec<ElementId> {
        self.bindings.iter().map(|b| b.element.clone()).collect()
    }

    pub fn add_sensor(&mut self, sensor: Sensor) -> Result<(), ControlError> {
        self.bus.add_component(sensor.id().clone())?;
        self.sensors.insert(sensor.id().name().to_string(), sensor);
        Ok(())
    }

    pub fn add_monitor(&mut self, monitor: Monitor) -> Result<(), ControlError> {
        self.bus.add_component(monitor.id().clone())?;
        self.monitors.insert(monitor.id().name().to_string(), monitor);
        Ok(())
    }

    pub fn add_analyzer(&mut self, analyzer: Analyzer) -> Result<(), ControlError> {
        self.bus.add_component(analyzer.id().clone())?;
        self.analyzers.insert(analyzer.id().name().to_string(), analyzer);
        Ok(())
    }

    pub fn add_planner(&mut self, planner: Planner) -> Result<(), ControlError> {
        self.bus.add_component(planner.id().clone())?;
        self.planners.insert(planner.id().name().to_string(), planner);
        Ok(())
    }

    pub fn add_executor(&mut self, executor: Executor) -> Result<(), ControlError> {
        self.bus.add_component(executor.id().clone())?;
        self.executors.insert(executor.id().name().to_string(), executor);
        Ok(())
    }

    pub fn add_effector(&mut self, effector: Effector) -> Result<(), ControlError> {
        self.bus.add_component(effector.id.clone())?;
        self.effectors.insert(effector.id.name().to_string(), effector);
        Ok(())
    }

    /// Removes a component and every subscription touching it.
    pub fn remove_component(&mut self, name: &str) -> Option<ComponentId> {
        let id = self.bus.remove_component(name)?;
        match id.kind() {
            ComponentKind::Sensor => drop(self.sensors.remove(name)),
            ComponentKind::Monitor => {
                self.monitors.remove(name);
                for m in self.monitors.values_mut() {
                    m.unregister_child(name);
                }
            }
            ComponentKind::Analyzer => drop(self.analyzers.remove(name)),
            ComponentKind::Planner => drop(self.planners.remove(name)),
            ComponentKind::Executor => drop(self.executors.remove(name)),
            ComponentKind::Effector => {
                self.effectors.remove(name);
                for ex in self.executors.values_mut() {
                    ex.unwire(name);
                }
            }
        }
        Some(id)
    }

    /// Subscribes `observer` to `subject` and performs the role-specific
    /// setup: a monitor learns the property of a sensor it observes or
    /// adopts a monitor it observes as a child; an executor wires an
    /// effector it observes.
    pub fn connect(&mut self, subject: &str, observer: &str, now: Tick) -> Result<Subscription, ControlError> {
        let sub = self.bus.register(subject, observer, now)?;
        match (sub.subject.kind(), sub.observer.kind()) {
            (ComponentKind::Sensor, ComponentKind::Monitor) => {
                let key = self.sensors[subject].key().clone();
                let monitor = self.monitors.get_mut(observer).expect("registered monitor");
                if !monitor.properties().any(|p| p.key() == key) {
                    let desc = PropertyDescriptor::system(key.property.clone(), "", key.element.clone());
                    monitor.register_property(desc)?;
                }
            }
            (ComponentKind::Monitor, ComponentKind::Monitor) => {
                self.monitors
                    .get_mut(observer)
                    .expect("registered monitor")
                    .register_child(subject);
            }
            (ComponentKind::Executor, ComponentKind::Effector) => {
                let effector = self.effectors[observer].clone();
                self.executors
                    .get_mut(subject)
                    .expect("registered executor")
                    .wire(effector);
            }
            _ => {}
        }
        Ok(sub)
    }

    /// Inverse of [`ControlLoop::connect`].
    pub fn disconnect(&mut self, subject: &str, observer: &str) -> bool {
        let Some(kinds) = self
            .bus
            .component(subject)
            .zip(self.bus.component(observer))
            .map(|(s, o)| (s.kind(), o.kind()))
        else {
            return false;
        };
        if !self.bus.unregister(subject, observer) {
            return false;
        }
        match kinds {
            (ComponentKind::Monitor, ComponentKind::Monitor) => {
                if let Some(m) = self.monitors.get_mut(observer) {
                    m.unregister_child(subject);
                }
            }
            (ComponentKind::Executor, ComponentKind::Effector) => {
                if let Some(ex) = self.executors.get_mut(subject) {
                    ex.unwire(observer);
                }
            }
            _ => {}
        }
        true
    }

    /// Brings sensors and monitors in line with the system's current
    /// elements: new elements are provisioned, vanished ones torn down.
    pub fn reconcile(&mut self, system: &dyn ManagedSystem, now: Tick) -> Result<(), ControlError> {
        let current = system.elements();
        let gone: Vec<ElementId> = self
            .bindings
            .iter()
            .map(|b| b.element.clone())
            .filter(|e| !current.contains(e))
            .collect();
        for element in gone {
            self.deprovision(&element);
        }
        for element in current {
            if !self.bindings.iter().any(|b| b.element == element) {
                self.provision(element, now)?;
            }
        }
        Ok(())
    }

    fn provision(&mut self, element: ElementId, now: Tick) -> Result<(), ControlError> {
        let feed = match self.topology {
            LoopTopology::SingleLoop => MAIN_MONITOR.to_string(),
            LoopTopology::Hierarchical => {
                let name = format!("monitor_{element}");
                self.add_monitor(Monitor::new(ComponentId::monitor(&name)))?;
                self.connect(&name, MAIN_MONITOR, now)?;
                name
            }
        };
        let mut sensors = Vec::new();
        for t in self.templates.clone() {
            let name = t.sensor_name(&element);
            let key = StateKey::new(t.property.clone(), element.clone());
            self.add_sensor(Sensor::new(ComponentId::sensor(&name), key, t.mode)?)?;
            self.connect(&name, &feed, now)?;
            sensors.push(name);
        }
        log::debug!("t={now} provisioned {element}");
        self.bindings.push(Binding {
            element,
            sensors,
            sub_monitor: (self.topology == LoopTopology::Hierarchical).then_some(feed),
        });
        Ok(())
    }

    fn deprovision(&mut self, element: &ElementId) {
        let Some(i) = self.bindings.iter().position(|b| &b.element == element) else {
            return;
        };
        let binding = self.bindings.remove(i);
        for name in &binding.sensors {
            let key = self.sensors.get(name).map(|s| s.key().clone());
            self.remove_component(name);
            if let (Some(key), None) = (key, &binding.sub_monitor) {
                if let Some(main) = self.monitors.get_mut(MAIN_MONITOR) {
                    main.unregister_property(&key);
                }
            }
        }
        if let Some(sub) = &binding.sub_monitor {
            self.remove_component(sub);
        }
        log::debug!("deprovisioned {element}");
    }

    /// Lets every sensor observe the system at `now`, handling each emitted
    /// reading to completion before the next sensor runs. Sensors added
    /// during the tick first observe at the next tick.
    pub fn observe(&mut self, now: Tick, system: &mut dyn ManagedSystem) -> Result<TickSummary, ControlError> {
        let mut summary = TickSummary::default();
        let order: Vec<String> = self.bindings.iter().flat_map(|b| b.sensors.clone()).collect();
        for name in order {
            let Some(sensor) = self.sensors.get_mut(&name) else {
                continue;
            };
            let Some(value) = system.read(sensor.key()) else {
                continue;
            };
            if let Some(reading) = sensor.observe(value, now)? {
                summary.readings += 1;
                self.bus.notify(&name, Message::Reading(reading), now)?;
                self.drain(system, &mut summary)?;
            }
        }
        Ok(summary)
    }

    /// Publishes a reading on behalf of sensor `name`, bypassing its mode.
    pub fn inject(&mut self, name: &str, reading: Reading, system: &mut dyn ManagedSystem) -> Result<TickSummary, ControlError> {
        let mut summary = TickSummary::default();
        let at = reading.at;
        self.bus.notify(name, Message::Reading(reading), at)?;
        self.drain(system, &mut summary)?;
        Ok(summary)
    }

    fn drain(&mut self, system: &mut dyn ManagedSystem, summary: &mut TickSummary) -> Result<(), ControlError> {
        while let Some(delivery) = self.bus.next_delivery() {
            let to = delivery.to.name().to_string();
            let (from, at) = (delivery.note.from.name().to_string(), delivery.note.at);
            match (delivery.to.kind(), delivery.note.payload) {
                (ComponentKind::Monitor, Message::Reading(r)) => {
                    let monitor = self.monitors.get_mut(&to).expect("registered monitor");
                    if let Some(state) = monitor.receive(&r)? {
                        self.publish_state(&to, state, at)?;
                    }
                }
                (ComponentKind::Monitor, Message::State(child)) => {
                    let monitor = self.monitors.get_mut(&to).expect("registered monitor");
                    let state = monitor.aggregate(&from, &child)?;
                    self.publish_state(&to, state, at)?;
                }
                (ComponentKind::Analyzer, Message::State(state)) => {
                    let requests = self.analyzers[&to].analyze(&state, &mut self.knowledge)?;
                    for req in requests {
                        summary.requests += 1;
                        self.bus.notify(&to, Message::Request(req), at)?;
                    }
                }
                (ComponentKind::Planner, Message::Request(req)) => {
                    let topology = system.elements();
                    let decision = self.planners[&to].plan(&req, &mut self.knowledge, &topology, at);
                    if let PlanDecision::Plan(plan) = decision {
                        summary.plans += 1;
                        self.bus.notify(&to, Message::Plan(plan), at)?;
                    }
                }
                (ComponentKind::Executor, Message::Plan(plan)) => {
                    let executor = self.executors.get_mut(&to).expect("registered executor");
                    executor.execute(&plan, system, &mut self.knowledge, at)?;
                    summary.reports += 1;
                    self.reconcile(system, at)?;
                }
                (kind, payload) => {
                    log::trace!("t={at} {kind} `{to}` ignores {}", payload.kind());
                }
            }
        }
        Ok(())
    }

    /// Logs the state if an analyzer consumes it, then notifies observers.
    fn publish_state(&mut self, monitor: &str, state: RuntimeState, at: Tick) -> Result<(), ControlError> {
        let feeds_analysis = self
            .bus
            .observers_of(monitor)
            .iter()
            .any(|o| o.kind() == ComponentKind::Analyzer);
        if feeds_analysis {
            self.knowledge.append_state(state.clone())?;
        }
        self.bus.notify(monitor, Message::State(state), at)?;
        Ok(())
    }

    /// Rolls the system back to restore point `rp_id` and rewires the loop.
    pub fn rollback(
        &mut self,
        rp_id: u64,
        system: &mut dyn ManagedSystem,
        now: Tick,
    ) -> Result<ExecutionReport, ControlError> {
        let executor = self
            .executors
            .get_mut(EXECUTOR)
            .ok_or_else(|| LoopError::UnknownComponent(EXECUTOR.to_string()))?;
        let report = executor.rollback(rp_id, system, &mut self.knowledge, now)?;
        self.reconcile(system, now)?;
        Ok(report)
    }
}
