//! Sensors, properties and monitors.
//!
//! A [`Sensor`] watches one property of one managed element and decides when
//! an observation becomes a [`Reading`]. A [`Monitor`] merges readings (or
//! the states of child monitors) into a [`RuntimeState`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use thiserror::Error;

use crate::knowledge::SharedKnowledge;
use crate::loopcore::ComponentId;
use crate::{ElementId, Tick};

/// Relative slack so that a change of exactly `relative_delta` counts despite
/// binary rounding.
const DELTA_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// The loop can change it.
    System,
    /// External context the loop can only observe.
    Environment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyDescriptor {
    pub name: String,
    pub scope: Scope,
    pub unit: String,
    pub attached_to: ElementId,
}

impl PropertyDescriptor {
    pub fn system(name: impl Into<String>, unit: impl Into<String>, element: ElementId) -> Self {
        PropertyDescriptor {
            name: name.into(),
            scope: Scope::System,
            unit: unit.into(),
            attached_to: element,
        }
    }

    pub fn key(&self) -> StateKey {
        StateKey::new(self.name.clone(), self.attached_to.clone())
    }
}

/// Lower/upper bounds on a property value.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Threshold {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Threshold {
    pub fn upper(upper: f64) -> Self {
        Threshold { lower: None, upper: Some(upper) }
    }

    pub fn lower(lower: f64) -> Self {
        Threshold { lower: Some(lower), upper: None }
    }

    pub fn validate(&self) -> Result<(), MonitoringError> {
        match (self.lower, self.upper) {
            (None, None) => Err(MonitoringError::InvalidConfig(
                "threshold needs a lower or an upper bound".into(),
            )),
            (Some(l), Some(u)) if l.partial_cmp(&u) != Some(std::cmp::Ordering::Less) => Err(MonitoringError::InvalidConfig(format!(
                "threshold lower bound {l} must be below upper bound {u}"
            ))),
            (l, u) if l.is_some_and(|v| !v.is_finite()) || u.is_some_and(|v| !v.is_finite()) => {
                Err(MonitoringError::InvalidConfig("threshold bounds must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

/// A (property, element) pair: the key of a runtime state entry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateKey {
    pub property: String,
    pub element: ElementId,
}

impl StateKey {
    pub fn new(property: impl Into<String>, element: impl Into<ElementId>) -> Self {
        StateKey {
            property: property.into(),
            element: element.into(),
        }
    }
}

impl From<String> for ElementId {
    fn from(s: String) -> Self {
        ElementId::new(s)
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.property, self.element)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub at: Tick,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reading {
    pub key: StateKey,
    pub value: f64,
    pub at: Tick,
    pub sensor: ComponentId,
}

/// Latest value of every observed (property, element) pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuntimeState {
    pub at: Tick,
    pub entries: BTreeMap<StateKey, Sample>,
}

impl RuntimeState {
    pub fn get(&self, key: &StateKey) -> Option<&Sample> {
        self.entries.get(key)
    }

    pub fn value(&self, property: &str, element: &ElementId) -> Option<f64> {
        self.entries
            .get(&StateKey::new(property, element.clone()))
            .map(|s| s.value)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries of one property, in element order.
    pub fn property(&self, property: &str) -> impl Iterator<Item = (&ElementId, &Sample)> {
        let property = property.to_string();
        self.entries
            .iter()
            .filter(move |(k, _)| k.property == property)
            .map(|(k, s)| (&k.element, s))
    }

    pub fn elements(&self) -> Vec<ElementId> {
        let set: std::collections::BTreeSet<&ElementId> =
            self.entries.keys().map(|k| &k.element).collect();
        set.into_iter().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitoringError {
    #[error("measurement error: {key} produced a non-finite value")]
    NonFinite { key: StateKey },
    #[error("sensor source for {0} is detached or silent")]
    Stale(StateKey),
    #[error("property {0} is not registered with this monitor")]
    UnknownProperty(StateKey),
    #[error("property {0} is already registered")]
    DuplicateProperty(StateKey),
    #[error("monitor `{0}` is not a registered child")]
    UnregisteredChild(String),
    #[error("child `{child}` reports {key}, which another source already owns")]
    OverlappingChild { child: String, key: StateKey },
    #[error("invalid sensor configuration: {0}")]
    InvalidConfig(String),
}

/// Anything a sensor can read a current value from.
pub trait PropertySource {
    /// `None` when the source is gone or not answering.
    fn read(&self, key: &StateKey) -> Option<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SensorMode {
    /// Emit at most once per `period` ticks.
    TimeTriggered { period: Tick },
    /// Emit when the value moved by at least `relative_delta` relative to the
    /// last emitted value, or at all when that value was 0. With a
    /// `fallback_period` the sensor also emits when that many ticks passed
    /// without an emission.
    EventTriggered {
        relative_delta: f64,
        fallback_period: Option<Tick>,
    },
    /// Only emits when polled.
    OnDemand,
}

impl SensorMode {
    pub fn validate(&self) -> Result<(), MonitoringError> {
        match *self {
            SensorMode::TimeTriggered { period: 0 } => {
                Err(MonitoringError::InvalidConfig("period must be positive".into()))
            }
            SensorMode::EventTriggered { relative_delta, .. }
                if !(relative_delta > 0.0 && relative_delta < 1.0) =>
            {
                Err(MonitoringError::InvalidConfig(format!(
                    "relative delta {relative_delta} outside (0, 1)"
                )))
            }
            SensorMode::EventTriggered { fallback_period: Some(0), .. } => Err(
                MonitoringError::InvalidConfig("fallback period must be positive".into()),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sensor {
    id: ComponentId,
    key: StateKey,
    mode: SensorMode,
    last_emit_at: Option<Tick>,
    last_emitted: Option<f64>,
}

impl Sensor {
    pub fn new(id: ComponentId, key: StateKey, mode: SensorMode) -> Result<Self, MonitoringError> {
        mode.validate()?;
        Ok(Sensor {
            id,
            key,
            mode,
            last_emit_at: None,
            last_emitted: None,
        })
    }

    pub fn id(&self) -> &ComponentId {
        &self.id
    }

    pub fn key(&self) -> &StateKey {
        &self.key
    }

    pub fn mode(&self) -> SensorMode {
        self.mode
    }

    pub fn last_emitted(&self) -> Option<f64> {
        self.last_emitted
    }

    fn should_emit(&self, value: f64, at: Tick) -> bool {
        match self.mode {
            SensorMode::OnDemand => false,
            SensorMode::TimeTriggered { period } => match self.last_emit_at {
                None => true,
                Some(last) => at.saturating_sub(last) >= period,
            },
            SensorMode::EventTriggered {
                relative_delta,
                fallback_period,
            } => {
                let (Some(last), Some(last_at)) = (self.last_emitted, self.last_emit_at) else {
                    return true;
                };
                if last == 0.0 {
                    if value != 0.0 {
                        return true;
                    }
                } else if (value - last).abs() >= relative_delta * last.abs() * (1.0 - DELTA_TOLERANCE) {
                    return true;
                }
                fallback_period.is_some_and(|p| at.saturating_sub(last_at) >= p)
            }
        }
    }

    fn emit(&mut self, value: f64, at: Tick) -> Reading {
        self.last_emit_at = Some(at);
        self.last_emitted = Some(value);
        Reading {
            key: self.key.clone(),
            value,
            at,
            sensor: self.id.clone(),
        }
    }

    /// Offers one observation; returns the reading if the sensor's mode says
    /// it should be published.
    pub fn observe(&mut self, value: f64, at: Tick) -> Result<Option<Reading>, MonitoringError> {
        if !value.is_finite() {
            return Err(MonitoringError::NonFinite { key: self.key.clone() });
        }
        Ok(self.should_emit(value, at).then(|| self.emit(value, at)))
    }

    /// Reads the source right now, whatever the mode.
    pub fn poll(&mut self, source: &dyn PropertySource, at: Tick) -> Result<Reading, MonitoringError> {
        let value = source
            .read(&self.key)
            .ok_or_else(|| MonitoringError::Stale(self.key.clone()))?;
        if !value.is_finite() {
            return Err(MonitoringError::NonFinite { key: self.key.clone() });
        }
        Ok(self.emit(value, at))
    }
}

/// Filters and merges readings into a runtime state. A monitor can also
/// aggregate the states of child monitors registered with it.
#[derive(Debug, Clone)]
pub struct Monitor {
    id: ComponentId,
    properties: BTreeMap<StateKey, PropertyDescriptor>,
    direct: BTreeMap<StateKey, Sample>,
    children: BTreeMap<String, RuntimeState>,
    last_accepted: BTreeMap<StateKey, Sample>,
    state: RuntimeState,
}

impl Monitor {
    pub fn new(id: ComponentId) -> Self {
        Monitor {
            id,
            properties: BTreeMap::new(),
            direct: BTreeMap::new(),
            children: BTreeMap::new(),
            last_accepted: BTreeMap::new(),
            state: RuntimeState::default(),
        }
    }

    pub fn id(&self) -> &ComponentId {
        &self.id
    }

    pub fn state(&self) -> &RuntimeState {
        &self.state
    }

    pub fn properties(&self) -> impl Iterator<Item = &PropertyDescriptor> {
        self.properties.values()
    }

    pub fn register_property(&mut self, desc: PropertyDescriptor) -> Result<(), MonitoringError> {
        let key = desc.key();
        if self.properties.contains_key(&key) {
            return Err(MonitoringError::DuplicateProperty(key));
        }
        self.properties.insert(key, desc);
        Ok(())
    }

    /// Forgets a property and its current value.
    pub fn unregister_property(&mut self, key: &StateKey) -> bool {
        let known = self.properties.remove(key).is_some();
        self.direct.remove(key);
        self.last_accepted.remove(key);
        self.rebuild(self.state.at);
        known
    }

    pub fn register_child(&mut self, child: &str) {
        self.children.entry(child.to_string()).or_default();
    }

    /// Drops a child monitor and everything it reported.
    pub fn unregister_child(&mut self, child: &str) -> bool {
        let known = self.children.remove(child).is_some();
        self.rebuild(self.state.at);
        known
    }

    pub fn children(&self) -> impl Iterator<Item = &str> {
        self.children.keys().map(String::as_str)
    }

    pub fn child_state(&self, child: &str) -> Option<&RuntimeState> {
        self.children.get(child)
    }

    /// False iff the reading repeats the last accepted reading for its key.
    pub fn filter(&self, reading: &Reading) -> bool {
        match self.last_accepted.get(&reading.key) {
            Some(last) => !(last.at == reading.at && last.value == reading.value),
            None => true,
        }
    }

    /// Merges a reading into the state (last writer wins per key).
    pub fn update(&mut self, reading: &Reading) -> Result<RuntimeState, MonitoringError> {
        if !self.properties.contains_key(&reading.key) {
            return Err(MonitoringError::UnknownProperty(reading.key.clone()));
        }
        if !reading.value.is_finite() {
            return Err(MonitoringError::NonFinite { key: reading.key.clone() });
        }
        let sample = Sample {
            value: reading.value,
            at: reading.at,
        };
        self.direct.insert(reading.key.clone(), sample);
        self.last_accepted.insert(reading.key.clone(), sample);
        self.rebuild(self.state.at.max(reading.at));
        Ok(self.state.clone())
    }

    /// `filter` then `update`; `None` when the reading was dropped.
    pub fn receive(&mut self, reading: &Reading) -> Result<Option<RuntimeState>, MonitoringError> {
        if !self.filter(reading) {
            return Ok(None);
        }
        self.update(reading).map(Some)
    }

    /// Replaces a child's contribution with its latest state.
    pub fn aggregate(
        &mut self,
        child: &str,
        child_state: &RuntimeState,
    ) -> Result<RuntimeState, MonitoringError> {
        if !self.children.contains_key(child) {
            return Err(MonitoringError::UnregisteredChild(child.to_string()));
        }
        for key in child_state.entries.keys() {
            let owned_elsewhere = self.direct.contains_key(key)
                || self
                    .children
                    .iter()
                    .any(|(name, s)| name != child && s.entries.contains_key(key));
            if owned_elsewhere {
                return Err(MonitoringError::OverlappingChild {
                    child: child.to_string(),
                    key: key.clone(),
                });
            }
        }
        self.children.insert(child.to_string(), child_state.clone());
        self.rebuild(self.state.at.max(child_state.at));
        Ok(self.state.clone())
    }

    fn rebuild(&mut self, at: Tick) {
        let mut entries = self.direct.clone();
        for state in self.children.values() {
            entries.extend(state.entries.iter().map(|(k, s)| (k.clone(), *s)));
        }
        self.state = RuntimeState { at, entries };
    }
}

/// A monitor that many threads may feed at once. Updates are mutually
/// exclusive and the resulting state is appended to the knowledge log while
/// the monitor is still held, so log order equals update order.
#[derive(Debug)]
pub struct SharedMonitor {
    inner: Mutex<Monitor>,
}

impl SharedMonitor {
    pub fn new(monitor: Monitor) -> Self {
        SharedMonitor {
            inner: Mutex::new(monitor),
        }
    }

    pub fn update(
        &self,
        reading: &Reading,
        knowledge: &SharedKnowledge,
    ) -> Result<Option<RuntimeState>, crate::knowledge::KnowledgeError> {
        let mut monitor = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let Some(state) = monitor.receive(reading)? else {
            return Ok(None);
        };
        knowledge.mutate(|k| k.append_state(state.clone()))?;
        Ok(Some(state))
    }

    pub fn into_inner(self) -> Monitor {
        self.inner.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}
