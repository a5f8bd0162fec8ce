//! Component identity, observer/subject wiring and the logical clock.
//!
//! Every component of a loop is registered on a [`Bus`] under a unique name.
//! Subscriptions connect a subject to its observers; [`Bus::notify`] queues
//! one delivery per observer and the owner of the bus drains the queue with
//! [`Bus::next_delivery`], so all callbacks run serialized and in a fixed
//! order. [`Clock`] is a discrete-event queue over logical ticks.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ComponentKind {
    Sensor,
    Monitor,
    Analyzer,
    Planner,
    Executor,
    Effector,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 6] = [
        ComponentKind::Sensor,
        ComponentKind::Monitor,
        ComponentKind::Analyzer,
        ComponentKind::Planner,
        ComponentKind::Executor,
        ComponentKind::Effector,
    ];

    /// The payload a component of this kind publishes, if any.
    pub fn emits(self) -> Option<PayloadKind> {
        match self {
            ComponentKind::Sensor => Some(PayloadKind::Reading),
            ComponentKind::Monitor => Some(PayloadKind::RuntimeState),
            ComponentKind::Analyzer => Some(PayloadKind::AdaptationRequest),
            ComponentKind::Planner => Some(PayloadKind::ChangePlan),
            ComponentKind::Executor => Some(PayloadKind::ExecutionReport),
            ComponentKind::Effector => None,
        }
    }

    /// Next stage of the sensor → monitor → analyzer → planner → executor →
    /// effector pipeline.
    pub fn downstream(self) -> Option<ComponentKind> {
        match self {
            ComponentKind::Sensor => Some(ComponentKind::Monitor),
            ComponentKind::Monitor => Some(ComponentKind::Analyzer),
            ComponentKind::Analyzer => Some(ComponentKind::Planner),
            ComponentKind::Planner => Some(ComponentKind::Executor),
            ComponentKind::Executor => Some(ComponentKind::Effector),
            ComponentKind::Effector => None,
        }
    }

    /// Whether `observer` may subscribe to `subject`: same kind, or the
    /// observer is the subject's pipeline successor.
    pub fn can_observe(subject: ComponentKind, observer: ComponentKind) -> bool {
        subject == observer || subject.downstream() == Some(observer)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentKind::Sensor => "sensor",
            ComponentKind::Monitor => "monitor",
            ComponentKind::Analyzer => "analyzer",
            ComponentKind::Planner => "planner",
            ComponentKind::Executor => "executor",
            ComponentKind::Effector => "effector",
        }
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    Reading,
    RuntimeState,
    AdaptationRequest,
    ChangePlan,
    ExecutionReport,
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PayloadKind::Reading => "reading",
            PayloadKind::RuntimeState => "runtime_state",
            PayloadKind::AdaptationRequest => "adaptation_request",
            PayloadKind::ChangePlan => "change_plan",
            PayloadKind::ExecutionReport => "execution_report",
        };
        f.write_str(s)
    }
}

/// Anything that can travel over a [`Bus`].
pub trait Payload: Clone {
    fn kind(&self) -> PayloadKind;
}

/// Name and role of a loop component. The kind never changes after creation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentId {
    name: Arc<str>,
    kind: ComponentKind,
}

impl ComponentId {
    pub fn new(name: impl AsRef<str>, kind: ComponentKind) -> Self {
        ComponentId {
            name: Arc::from(name.as_ref()),
            kind,
        }
    }

    pub fn sensor(name: impl AsRef<str>) -> Self {
        Self::new(name, ComponentKind::Sensor)
    }

    pub fn monitor(name: impl AsRef<str>) -> Self {
        Self::new(name, ComponentKind::Monitor)
    }

    pub fn analyzer(name: impl AsRef<str>) -> Self {
        Self::new(name, ComponentKind::Analyzer)
    }

    pub fn planner(name: impl AsRef<str>) -> Self {
        Self::new(name, ComponentKind::Planner)
    }

    pub fn executor(name: impl AsRef<str>) -> Self {
        Self::new(name, ComponentKind::Executor)
    }

    pub fn effector(name: impl AsRef<str>) -> Self {
        Self::new(name, ComponentKind::Effector)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ComponentKind {
        self.kind
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub subject: ComponentId,
    pub observer: ComponentId,
    pub created_at: Tick,
    seq: u64,
}

#[derive(Debug, Clone)]
pub struct Notification<P> {
    pub from: ComponentId,
    pub payload: P,
    pub at: Tick,
}

#[derive(Debug, Clone)]
pub struct Delivery<P> {
    pub to: ComponentId,
    pub note: Notification<P>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoopError {
    #[error("unknown component `{0}`")]
    UnknownComponent(String),
    #[error("component `{0}` is already registered")]
    DuplicateComponent(String),
    #[error("cannot wire {observer_kind} `{observer}` to observe {subject_kind} `{subject}`")]
    IncompatibleKinds {
        subject: String,
        subject_kind: ComponentKind,
        observer: String,
        observer_kind: ComponentKind,
    },
    #[error("{sender} cannot publish a {payload} payload")]
    PayloadMismatch { sender: ComponentId, payload: PayloadKind },
    #[error("cannot schedule at tick {at}, clock is already at {now}")]
    ScheduledInPast { at: Tick, now: Tick },
}

/// Component registry plus subscription table and delivery queue.
#[derive(Debug)]
pub struct Bus<P> {
    components: BTreeMap<String, ComponentId>,
    subscriptions: Vec<Subscription>,
    next_seq: u64,
    outbox: VecDeque<Delivery<P>>,
    trace: Option<Vec<String>>,
}

impl<P> Default for Bus<P> {
    fn default() -> Self {
        Bus {
            components: BTreeMap::new(),
            subscriptions: Vec::new(),
            next_seq: 0,
            outbox: VecDeque::new(),
            trace: None,
        }
    }
}

impl<P: Payload> Bus<P> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record every delivery handed out by [`Bus::next_delivery`].
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[String] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn add_component(&mut self, id: ComponentId) -> Result<(), LoopError> {
        if self.components.contains_key(id.name()) {
            return Err(LoopError::DuplicateComponent(id.name().to_string()));
        }
        self.components.insert(id.name().to_string(), id);
        Ok(())
    }

    /// Drops a component together with all of its subscriptions and any
    /// queued deliveries to or from it.
    pub fn remove_component(&mut self, name: &str) -> Option<ComponentId> {
        let id = self.components.remove(name)?;
        self.subscriptions
            .retain(|s| s.subject.name() != name && s.observer.name() != name);
        self.outbox
            .retain(|d| d.to.name() != name && d.note.from.name() != name);
        Some(id)
    }

    pub fn component(&self, name: &str) -> Option<&ComponentId> {
        self.components.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.components.contains_key(name)
    }

    pub fn components(&self) -> impl Iterator<Item = &ComponentId> {
        self.components.values()
    }

    fn lookup(&self, name: &str) -> Result<&ComponentId, LoopError> {
        self.components
            .get(name)
            .ok_or_else(|| LoopError::UnknownComponent(name.to_string()))
    }

    pub fn register(
        &mut self,
        subject: &str,
        observer: &str,
        now: Tick,
    ) -> Result<Subscription, LoopError> {
        let subject = self.lookup(subject)?.clone();
        let observer = self.lookup(observer)?.clone();
        if let Some(existing) = self
            .subscriptions
            .iter()
            .find(|s| s.subject == subject && s.observer == observer)
        {
            return Ok(existing.clone());
        }
        if !ComponentKind::can_observe(subject.kind(), observer.kind()) {
            return Err(LoopError::IncompatibleKinds {
                subject: subject.name().to_string(),
                subject_kind: subject.kind(),
                observer: observer.name().to_string(),
                observer_kind: observer.kind(),
            });
        }
        let sub = Subscription {
            subject,
            observer,
            created_at: now,
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.subscriptions.push(sub.clone());
        Ok(sub)
    }

    /// Removes the subscription if present. Deliveries from `subject` to
    /// `observer` that are still queued are discarded.
    pub fn unregister(&mut self, subject: &str, observer: &str) -> bool {
        let before = self.subscriptions.len();
        self.subscriptions
            .retain(|s| !(s.subject.name() == subject && s.observer.name() == observer));
        if self.subscriptions.len() == before {
            return false;
        }
        self.outbox
            .retain(|d| !(d.note.from.name() == subject && d.to.name() == observer));
        true
    }

    pub fn is_registered(&self, subject: &str, observer: &str) -> bool {
        self.subscriptions
            .iter()
            .any(|s| s.subject.name() == subject && s.observer.name() == observer)
    }

    pub fn subscriptions(&self) -> &[Subscription] {
        &self.subscriptions
    }

    /// Observers of `subject` in ascending (created_at, registration) order.
    pub fn observers_of(&self, subject: &str) -> Vec<ComponentId> {
        let mut subs: Vec<&Subscription> = self
            .subscriptions
            .iter()
            .filter(|s| s.subject.name() == subject)
            .collect();
        subs.sort_by_key(|s| (s.created_at, s.seq));
        subs.into_iter().map(|s| s.observer.clone()).collect()
    }

    pub fn subjects_of(&self, observer: &str) -> Vec<ComponentId> {
        self.subscriptions
            .iter()
            .filter(|s| s.observer.name() == observer)
            .map(|s| s.subject.clone())
            .collect()
    }

    /// Queues `payload` once for every current observer of `subject` and
    /// returns the number of deliveries.
    pub fn notify(&mut self, subject: &str, payload: P, now: Tick) -> Result<usize, LoopError> {
        let from = self.lookup(subject)?.clone();
        if from.kind().emits() != Some(payload.kind()) {
            return Err(LoopError::PayloadMismatch {
                sender: from,
                payload: payload.kind(),
            });
        }
        let observers = self.observers_of(subject);
        for to in &observers {
            self.outbox.push_back(Delivery {
                to: to.clone(),
                note: Notification {
                    from: from.clone(),
                    payload: payload.clone(),
                    at: now,
                },
            });
        }
        Ok(observers.len())
    }

    pub fn next_delivery(&mut self) -> Option<Delivery<P>> {
        let d = self.outbox.pop_front()?;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(format!(
                "t={} {} -> {} {}",
                d.note.at,
                d.note.from,
                d.to,
                d.note.payload.kind()
            ));
        }
        Some(d)
    }

    pub fn pending(&self) -> usize {
        self.outbox.len()
    }
}

/// Discrete-event queue over logical time. Events fire in (time, insertion)
/// order.
#[derive(Debug)]
pub struct Clock<E> {
    now: Tick,
    seq: u64,
    pending: BTreeMap<(Tick, u64), E>,
}

impl<E> Default for Clock<E> {
    fn default() -> Self {
        Clock {
            now: 0,
            seq: 0,
            pending: BTreeMap::new(),
        }
    }
}

impl<E> Clock<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn schedule(&mut self, at: Tick, event: E) -> Result<(), LoopError> {
        if at < self.now {
            return Err(LoopError::ScheduledInPast { at, now: self.now });
        }
        self.pending.insert((at, self.seq), event);
        self.seq += 1;
        Ok(())
    }

    /// Fires the earliest event with time ≤ `limit`, moving the clock to
    /// that event's time.
    pub fn pop_until(&mut self, limit: Tick) -> Option<(Tick, E)> {
        let (&(at, seq), _) = self.pending.first_key_value()?;
        if at > limit {
            return None;
        }
        let event = self.pending.remove(&(at, seq))?;
        self.now = at;
        Some((at, event))
    }

    /// Fires every event with time ≤ `t`, then sets the clock to `t`.
    pub fn advance_to(&mut self, t: Tick) -> Result<Vec<(Tick, E)>, LoopError> {
        if t < self.now {
            return Err(LoopError::ScheduledInPast { at: t, now: self.now });
        }
        let mut fired = Vec::new();
        while let Some(ev) = self.pop_until(t) {
            fired.push(ev);
        }
        self.now = t;
        Ok(fired)
    }
}
