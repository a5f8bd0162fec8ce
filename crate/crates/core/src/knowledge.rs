//! The shared knowledge base: state history, symptom and policy stores,
//! restore points, adaptation bookkeeping and the decision log.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::analysis::SymptomRepository;
use crate::execution::{ExecutionReport, RestorePoint, SystemSnapshot};
use crate::monitoring::{MonitoringError, RuntimeState};
use crate::planning::PolicyEngine;
use crate::{ElementId, Tick};

pub const DEFAULT_LOG_CAPACITY: usize = 100_000;
pub const RESTORE_POINT_RETENTION: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KnowledgeError {
    #[error("state at tick {at} would precede the last logged state at tick {last}")]
    TimeRegression { at: Tick, last: Tick },
    #[error(transparent)]
    Monitoring(#[from] MonitoringError),
}

/// Append-only history of runtime states, bounded to the newest `capacity`
/// entries.
#[derive(Debug, Clone)]
pub struct SystemStateLog {
    entries: VecDeque<RuntimeState>,
    capacity: usize,
}

impl Default for SystemStateLog {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_LOG_CAPACITY)
    }
}

impl SystemStateLog {
    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity > 0, "log capacity must be positive");
        SystemStateLog {
            entries: VecDeque::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn latest(&self) -> Option<&RuntimeState> {
        self.entries.back()
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &RuntimeState> + ExactSizeIterator {
        self.entries.iter()
    }

    pub fn append(&mut self, state: RuntimeState) -> Result<(), KnowledgeError> {
        if let Some(last) = self.entries.back() {
            if state.at < last.at {
                return Err(KnowledgeError::TimeRegression {
                    at: state.at,
                    last: last.at,
                });
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(state);
        Ok(())
    }

    /// Entries with `now - duration <= at <= now`, oldest first. Both bounds
    /// are inclusive.
    pub fn window(&self, duration: Tick, now: Tick) -> Vec<&RuntimeState> {
        let start = now.saturating_sub(duration);
        let lo = self.entries.partition_point(|s| s.at < start);
        let hi = self.entries.partition_point(|s| s.at <= now);
        self.entries.range(lo..hi.max(lo)).collect()
    }

    /// The newest entry with `at <= t`.
    pub fn latest_at_or_before(&self, t: Tick) -> Option<&RuntimeState> {
        let idx = self.entries.partition_point(|s| s.at <= t);
        idx.checked_sub(1).and_then(|i| self.entries.get(i))
    }
}

/// Read-only projection handed to policy conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeView {
    pub latest: RuntimeState,
    pub active_servers: usize,
    pub cost: f64,
    pub last_reading_at: BTreeMap<ElementId, Tick>,
}

impl KnowledgeView {
    /// Resolves a condition variable.
    ///
    /// Known names: `active_servers`, `cost`, `<property>_<element>` for a
    /// current value, and `max_<property>` / `min_<property>` /
    /// `avg_<property>` over all elements.
    pub fn variable(&self, name: &str) -> Option<f64> {
        match name {
            "active_servers" => return Some(self.active_servers as f64),
            "cost" => return Some(self.cost),
            _ => {}
        }
        for (prefix, agg) in [("max_", Agg::Max), ("min_", Agg::Min), ("avg_", Agg::Avg)] {
            if let Some(property) = name.strip_prefix(prefix) {
                if let Some(v) = self.aggregate(property, agg) {
                    return Some(v);
                }
            }
        }
        self.latest
            .entries
            .iter()
            .find(|(k, _)| {
                name.len() == k.property.len() + 1 + k.element.as_str().len()
                    && name.starts_with(k.property.as_str())
                    && name[k.property.len()..].starts_with('_')
                    && name.ends_with(k.element.as_str())
            })
            .map(|(_, s)| s.value)
    }

    fn aggregate(&self, property: &str, agg: Agg) -> Option<f64> {
        let values: Vec<f64> = self.latest.property(property).map(|(_, s)| s.value).collect();
        if values.is_empty() {
            return None;
        }
        Some(match agg {
            Agg::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Agg::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Agg::Avg => values.iter().sum::<f64>() / values.len() as f64,
        })
    }
}

#[derive(Clone, Copy)]
enum Agg {
    Max,
    Min,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionKind {
    Request,
    Plan,
    Report,
    Noop,
}

impl fmt::Display for DecisionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecisionKind::Request => "request",
            DecisionKind::Plan => "plan",
            DecisionKind::Report => "report",
            DecisionKind::Noop => "noop",
        })
    }
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub at: Tick,
    pub kind: DecisionKind,
    pub event: String,
    pub element: String,
    pub detail: String,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} kind={} event={} element={} detail={}",
            self.at, self.kind, self.event, self.element, self.detail
        )
    }
}

/// Which (event, element) requests are in flight and when adaptations
/// finished.
#[derive(Debug, Clone, Default)]
pub struct Resolutions {
    unresolved: BTreeSet<(String, ElementId)>,
    resolved_at: BTreeMap<(String, ElementId), Tick>,
    last_adaptation_at: Option<Tick>,
}

impl Resolutions {
    pub fn is_unresolved(&self, event: &str, element: &ElementId) -> bool {
        self.unresolved.contains(&(event.to_string(), element.clone()))
    }

    pub fn resolved_at(&self, event: &str, element: &ElementId) -> Option<Tick> {
        self.resolved_at
            .get(&(event.to_string(), element.clone()))
            .copied()
    }

    /// Finish time of the most recent execution report.
    pub fn last_adaptation_at(&self) -> Option<Tick> {
        self.last_adaptation_at
    }

    pub fn mark_raised(&mut self, event: &str, element: &ElementId) {
        self.unresolved.insert((event.to_string(), element.clone()));
    }

    pub fn resolve(&mut self, event: &str, element: &ElementId, at: Tick) {
        let key = (event.to_string(), element.clone());
        self.unresolved.remove(&key);
        self.resolved_at.insert(key, at);
        self.last_adaptation_at = Some(self.last_adaptation_at.map_or(at, |t| t.max(at)));
    }

    pub fn unresolved(&self) -> impl Iterator<Item = &(String, ElementId)> {
        self.unresolved.iter()
    }
}

#[derive(Debug, Clone)]
pub struct Knowledge {
    log: SystemStateLog,
    symptoms: SymptomRepository,
    policies: PolicyEngine,
    restore_points: VecDeque<RestorePoint>,
    reports: VecDeque<ExecutionReport>,
    next_restore_id: u64,
    next_plan_id: u64,
    resolutions: Resolutions,
    decisions: Vec<Decision>,
    cost_per_server: f64,
}

impl Default for Knowledge {
    fn default() -> Self {
        Self::new(DEFAULT_LOG_CAPACITY, 1.0)
    }
}

impl Knowledge {
    pub fn new(log_capacity: usize, cost_per_server: f64) -> Self {
        Knowledge {
            log: SystemStateLog::with_capacity(log_capacity),
            symptoms: SymptomRepository::default(),
            policies: PolicyEngine::default(),
            restore_points: VecDeque::new(),
            reports: VecDeque::new(),
            next_restore_id: 1,
            next_plan_id: 1,
            resolutions: Resolutions::default(),
            decisions: Vec::new(),
            cost_per_server,
        }
    }

    pub fn log(&self) -> &SystemStateLog {
        &self.log
    }

    pub fn append_state(&mut self, state: RuntimeState) -> Result<(), KnowledgeError> {
        self.log.append(state)
    }

    pub fn symptoms(&self) -> &SymptomRepository {
        &self.symptoms
    }

    pub fn symptoms_mut(&mut self) -> &mut SymptomRepository {
        &mut self.symptoms
    }

    pub fn policies(&self) -> &PolicyEngine {
        &self.policies
    }

    pub fn policies_mut(&mut self) -> &mut PolicyEngine {
        &mut self.policies
    }

    pub fn cost_per_server(&self) -> f64 {
        self.cost_per_server
    }

    /// Derived variables over the latest logged state and the given
    /// topology. Computed on every call.
    pub fn view(&self, topology: &[ElementId]) -> KnowledgeView {
        let latest = self.log.latest().cloned().unwrap_or_default();
        let mut last_reading_at = BTreeMap::new();
        for (key, sample) in &latest.entries {
            let t = last_reading_at.entry(key.element.clone()).or_insert(sample.at);
            *t = (*t).max(sample.at);
        }
        let active_servers = topology.len();
        KnowledgeView {
            latest,
            active_servers,
            cost: active_servers as f64 * self.cost_per_server,
            last_reading_at,
        }
    }

    pub fn take_restore_point(&mut self, snapshot: SystemSnapshot, now: Tick) -> RestorePoint {
        let rp = RestorePoint {
            id: self.next_restore_id,
            taken_at: now,
            snapshot,
        };
        self.next_restore_id += 1;
        if self.restore_points.len() == RESTORE_POINT_RETENTION {
            self.restore_points.pop_front();
        }
        self.restore_points.push_back(rp.clone());
        rp
    }

    pub fn restore_point(&self, id: u64) -> Option<&RestorePoint> {
        self.restore_points.iter().find(|rp| rp.id == id)
    }

    pub fn restore_points(&self) -> impl Iterator<Item = &RestorePoint> {
        self.restore_points.iter()
    }

    /// The report of the plan that was executed from restore point `id`.
    pub fn report_for(&self, restore_point: u64) -> Option<&ExecutionReport> {
        self.reports
            .iter()
            .rev()
            .find(|r| r.restore_point_id == restore_point && !r.rollback)
    }

    /// Stores a report and resolves the request that produced it.
    pub fn record_report(&mut self, report: &ExecutionReport) {
        if !report.rollback {
            self.resolutions
                .resolve(&report.event, &report.element, report.finished_at);
        }
        if self.reports.len() == RESTORE_POINT_RETENTION {
            self.reports.pop_front();
        }
        self.reports.push_back(report.clone());
    }

    pub fn resolutions(&self) -> &Resolutions {
        &self.resolutions
    }

    pub fn resolutions_mut(&mut self) -> &mut Resolutions {
        &mut self.resolutions
    }

    pub fn next_plan_id(&mut self) -> u64 {
        let id = self.next_plan_id;
        self.next_plan_id += 1;
        id
    }

    pub fn log_decision(&mut self, decision: Decision) {
        log::debug!("{decision}");
        self.decisions.push(decision);
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }
}

/// Knowledge behind a single mutation gate, for use from several threads.
#[derive(Debug, Clone, Default)]
pub struct SharedKnowledge(Arc<RwLock<Knowledge>>);

impl SharedKnowledge {
    pub fn new(knowledge: Knowledge) -> Self {
        SharedKnowledge(Arc::new(RwLock::new(knowledge)))
    }

    pub fn mutate<R>(&self, f: impl FnOnce(&mut Knowledge) -> R) -> R {
        let mut guard = self.0.write().unwrap_or_else(|e| e.into_inner());
        f(&mut guard)
    }

    pub fn read<R>(&self, f: impl FnOnce(&Knowledge) -> R) -> R {
        let guard = self.0.read().unwrap_or_else(|e| e.into_inner());
        f(&guard)
    }
}
