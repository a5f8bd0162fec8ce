//! A deterministic load-balanced server farm used as the managed system.
//!
//! The workload is a piecewise-constant arrival rate split across servers in
//! proportion to their routing weight. Each server's load is its assigned
//! rate over its capacity, capped at 1. Unresponsive servers keep receiving
//! traffic but drop it, and their properties can no longer be read.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::execution::{EffectError, ManagedSystem, SystemSnapshot};
use crate::monitoring::{PropertySource, StateKey};
use crate::{ElementId, Tick};

const LATENCY_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FarmError {
    #[error("unknown server {0}")]
    UnknownServer(ElementId),
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("invalid farm config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FarmConfig {
    pub initial_servers: usize,
    /// Requests per second a new server can serve.
    pub capacity: f64,
    pub min_servers: usize,
    pub max_servers: usize,
    pub base_latency_ms: f64,
    pub timeout_latency_ms: f64,
    pub cost_per_server: f64,
    /// Relative amplitude of uniform noise on the arrival rate; 0 disables it.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for FarmConfig {
    fn default() -> Self {
        FarmConfig {
            initial_servers: 1,
            capacity: 100.0,
            min_servers: 1,
            max_servers: 64,
            base_latency_ms: 10.0,
            timeout_latency_ms: 5000.0,
            cost_per_server: 1.0,
            jitter: 0.0,
            seed: 0,
        }
    }
}

impl FarmConfig {
    pub fn validate(&self) -> Result<(), FarmError> {
        let bad = |m: String| Err(FarmError::InvalidConfig(m));
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return bad(format!("capacity {} must be positive", self.capacity));
        }
        if self.min_servers > self.max_servers {
            return bad(format!(
                "min_servers {} exceeds max_servers {}",
                self.min_servers, self.max_servers
            ));
        }
        if self.initial_servers < self.min_servers || self.initial_servers > self.max_servers {
            return bad(format!(
                "initial_servers {} outside [{}, {}]",
                self.initial_servers, self.min_servers, self.max_servers
            ));
        }
        if !(self.base_latency_ms.is_finite() && self.base_latency_ms > 0.0) {
            return bad("base_latency_ms must be positive".into());
        }
        if !(self.timeout_latency_ms.is_finite() && self.timeout_latency_ms >= self.base_latency_ms) {
            return bad("timeout_latency_ms must be at least base_latency_ms".into());
        }
        if !(self.cost_per_server.is_finite() && self.cost_per_server >= 0.0) {
            return bad("cost_per_server must be non-negative".into());
        }
        if !(self.jitter.is_finite() && (0.0..1.0).contains(&self.jitter)) {
            return bad("jitter must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Piecewise-constant total arrival rate. Zero before the first breakpoint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Workload {
    breakpoints: Vec<(Tick, f64)>,
}

impl Workload {
    pub fn new(breakpoints: Vec<(Tick, f64)>) -> Result<Self, FarmError> {
        for w in breakpoints.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(FarmError::InvalidWorkload(format!(
                    "breakpoint times must increase ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some((t, r)) = breakpoints.iter().find(|(_, r)| !(r.is_finite() && *r >= 0.0)) {
            return Err(FarmError::InvalidWorkload(format!("rate {r} at {t} must be >= 0")));
        }
        Ok(Workload { breakpoints })
    }

    pub fn constant(rate: f64) -> Result<Self, FarmError> {
        Self::new(vec![(0, rate)])
    }

    pub fn rate_at(&self, t: Tick) -> f64 {
        let idx = self.breakpoints.partition_point(|(at, _)| *at <= t);
        idx.checked_sub(1).map_or(0.0, |i| self.breakpoints[i].1)
    }

    pub fn breakpoints(&self) -> &[(Tick, f64)] {
        &self.breakpoints
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerStatus {
    Active,
    Unresponsive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Server {
    pub id: ElementId,
    pub capacity: f64,
    pub status: ServerStatus,
    pub routing_weight: f64,
    pub assigned_rate: f64,
    pub load: f64,
    pub throughput: f64,
    pub latency_ms: f64,
}

impl Server {
    fn new(id: ElementId, capacity: f64, routing_weight: f64) -> Self {
        Server {
            id,
            capacity,
            status: ServerStatus::Active,
            routing_weight,
            assigned_rate: 0.0,
            load: 0.0,
            throughput: 0.0,
            latency_ms: 0.0,
        }
    }
}

/// One metrics row: one server at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct FarmMetrics {
    pub t: Tick,
    /// Empty when the farm has no server.
    pub server_id: String,
    pub load: f64,
    pub throughput: f64,
    pub latency_ms: Option<f64>,
    pub active_servers: usize,
    pub cost: f64,
    /// `;`-separated farm events since the previous step, on the tick's first row.
    pub event: String,
}

impl FarmMetrics {
    pub const CSV_HEADER: &'static str = "t,server_id,load,throughput,latency_ms,active_servers,cost,event";

    pub fn to_csv_row(&self) -> String {
        let latency = self.latency_ms.map(|l| format!("{l:.3}")).unwrap_or_default();
        format!(
            "{},{},{:.4},{:.3},{},{},{:.2},{}",
            self.t, self.server_id, self.load, self.throughput, latency, self.active_servers, self.cost, self.event
        )
    }
}

/// Totals of the most recent step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepTotals {
    pub arrival_rate: f64,
    pub throughput: f64,
    pub dropped: f64,
}

#[derive(Debug, Clone)]
pub struct Farm {
    config: FarmConfig,
    default_capacity: f64,
    workload: Workload,
    servers: Vec<Server>,
    removed: BTreeSet<ElementId>,
    next_id: usize,
    now: Tick,
    pending_events: Vec<String>,
    pending_faults: Vec<(Tick, ElementId)>,
    totals: StepTotals,
    rng: ChaCha8Rng,
}

impl Farm {
    pub fn new(config: FarmConfig, workload: Workload) -> Result<Self, FarmError> {
        config.validate()?;
        let mut farm = Farm {
            default_capacity: config.capacity,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            workload,
            servers: Vec::new(),
            removed: BTreeSet::new(),
            next_id: 0,
            now: 0,
            pending_events: Vec::new(),
            pending_faults: Vec::new(),
            totals: StepTotals::default(),
        };
        for _ in 0..farm.config.initial_servers {
            farm.spawn();
        }
        farm.pending_events.clear();
        Ok(farm)
    }

    pub fn config(&self) -> &FarmConfig {
        &self.config
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn servers(&self) -> &[Server] {
        &self.servers
    }

    pub fn server(&self, id: &ElementId) -> Option<&Server> {
        self.servers.iter().find(|s| &s.id == id)
    }

    pub fn active_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn totals(&self) -> StepTotals {
        self.totals
    }

    fn spawn(&mut self) -> ElementId {
        self.next_id += 1;
        let id = ElementId::new(format!("s{}", self.next_id));
        self.servers.push(Server::new(id.clone(), self.default_capacity, 1.0));
        self.pending_events.push(format!("add_server:{id}"));
        id
    }

    fn position(&self, id: &ElementId) -> Option<usize> {
        self.servers.iter().position(|s| &s.id == id)
    }

    /// Marks `id` unresponsive from tick `at` on. A fault at or before the
    /// current tick applies immediately; later ones apply when `step` reaches
    /// them.
    pub fn inject_fault(&mut self, id: &ElementId, at: Tick) -> Result<(), FarmError> {
        if self.position(id).is_none() {
            return Err(FarmError::UnknownServer(id.clone()));
        }
        if at <= self.now {
            self.apply_fault(id);
        } else {
            self.pending_faults.push((at, id.clone()));
        }
        Ok(())
    }

    fn apply_fault(&mut self, id: &ElementId) {
        if let Some(i) = self.position(id) {
            self.servers[i].status = ServerStatus::Unresponsive;
            self.pending_events.push(format!("fault:{id}"));
        }
    }

    /// Advances to tick `t`, redistributes the arrival rate and returns one
    /// metrics row per server.
    pub fn step(&mut self, t: Tick) -> Vec<FarmMetrics> {
        self.now = self.now.max(t);
        let due: Vec<ElementId> = self
            .pending_faults
            .iter()
            .filter(|(at, _)| *at <= self.now)
            .map(|(_, id)| id.clone())
            .collect();
        self.pending_faults.retain(|(at, _)| *at > self.now);
        for id in &due {
            self.apply_fault(id);
        }

        let mut rate = self.workload.rate_at(self.now);
        if self.config.jitter > 0.0 {
            let j = self.config.jitter;
            rate *= 1.0 + self.rng.gen_range(-j..=j);
        }
        let total_weight: f64 = self.servers.iter().map(|s| s.routing_weight).sum();
        let (base, timeout) = (self.config.base_latency_ms, self.config.timeout_latency_ms);
        let mut throughput = 0.0;
        for s in &mut self.servers {
            s.assigned_rate = if total_weight > 0.0 {
                rate * s.routing_weight / total_weight
            } else {
                0.0
            };
            s.load = (s.assigned_rate / s.capacity).min(1.0);
            match s.status {
                ServerStatus::Active => {
                    s.throughput = s.assigned_rate.min(s.capacity);
                    s.latency_ms = (base / (1.0 - s.load).max(LATENCY_EPSILON)).min(timeout);
                }
                ServerStatus::Unresponsive => {
                    s.throughput = 0.0;
                    s.latency_ms = timeout;
                }
            }
            throughput += s.throughput;
        }
        self.totals = StepTotals {
            arrival_rate: rate,
            throughput,
            dropped: rate - throughput,
        };

        let active = self.servers.len();
        let cost = active as f64 * self.config.cost_per_server;
        let mut event = self.pending_events.join(";");
        self.pending_events.clear();
        if self.servers.is_empty() {
            return vec![FarmMetrics {
                t: self.now,
                server_id: String::new(),
                load: 0.0,
                throughput: 0.0,
                latency_ms: None,
                active_servers: 0,
                cost,
                event,
            }];
        }
        self.servers
            .iter()
            .map(|s| FarmMetrics {
                t: self.now,
                server_id: s.id.to_string(),
                load: s.load,
                throughput: s.throughput,
                latency_ms: Some(s.latency_ms),
                active_servers: active,
                cost,
                event: std::mem::take(&mut event),
            })
            .collect()
    }
}

impl PropertySource for Farm {
    fn read(&self, key: &StateKey) -> Option<f64> {
        let s = self.server(&key.element)?;
        if s.status == ServerStatus::Unresponsive {
            return None;
        }
        match key.property.as_str() {
            "load" => Some(s.load),
            "throughput" => Some(s.throughput),
            "latency_ms" => Some(s.latency_ms),
            "routing_weight" => Some(s.routing_weight),
            "capacity" => Some(s.capacity),
            _ => None,
        }
    }
}

enum Setting {
    DefaultCapacity,
    Capacity(usize),
    RoutingWeight(usize),
}

impl Farm {
    fn setting(&self, name: &str) -> Option<Setting> {
        if name == "default_capacity" {
            return Some(Setting::DefaultCapacity);
        }
        if let Some(id) = name.strip_prefix("capacity_") {
            return self.position(&ElementId::from(id)).map(Setting::Capacity);
        }
        if let Some(id) = name.strip_prefix("routing_weight_") {
            return self.position(&ElementId::from(id)).map(Setting::RoutingWeight);
        }
        None
    }
}

impl ManagedSystem for Farm {
    fn elements(&self) -> Vec<ElementId> {
        self.servers.iter().map(|s| s.id.clone()).collect()
    }

    fn add_element(&mut self) -> Result<ElementId, EffectError> {
        if self.servers.len() >= self.config.max_servers {
            return Err(EffectError::Capacity {
                max: self.config.max_servers,
            });
        }
        Ok(self.spawn())
    }

    fn remove_element(&mut self, id: &ElementId) -> Result<(), EffectError> {
        let i = self
            .position(id)
            .ok_or_else(|| EffectError::NoSuchElement(id.clone()))?;
        if self.servers.len() <= self.config.min_servers {
            return Err(EffectError::MinElements {
                min: self.config.min_servers,
            });
        }
        self.servers.remove(i);
        self.removed.insert(id.clone());
        self.pending_faults.retain(|(_, f)| f != id);
        self.pending_events.push(format!("remove_server:{id}"));
        Ok(())
    }

    fn set_property(&mut self, name: &str, value: f64) -> Result<f64, EffectError> {
        let setting = self
            .setting(name)
            .ok_or_else(|| EffectError::UnknownProperty(name.to_string()))?;
        let invalid = || EffectError::InvalidValue {
            name: name.to_string(),
            value,
        };
        if !value.is_finite() {
            return Err(invalid());
        }
        let slot = match setting {
            Setting::DefaultCapacity | Setting::Capacity(_) if value <= 0.0 => return Err(invalid()),
            Setting::RoutingWeight(_) if value < 0.0 => return Err(invalid()),
            Setting::DefaultCapacity => &mut self.default_capacity,
            Setting::Capacity(i) => &mut self.servers[i].capacity,
            Setting::RoutingWeight(i) => &mut self.servers[i].routing_weight,
        };
        Ok(std::mem::replace(slot, value))
    }

    fn snapshot(&self) -> SystemSnapshot {
        let mut snap = SystemSnapshot::default();
        snap.properties
            .insert("default_capacity".into(), self.default_capacity);
        for s in &self.servers {
            snap.properties.insert(format!("capacity_{}", s.id), s.capacity);
            snap.properties
                .insert(format!("routing_weight_{}", s.id), s.routing_weight);
            snap.topology.insert(s.id.clone());
        }
        snap
    }

    fn restore_element(&mut self, id: &ElementId, snapshot: &SystemSnapshot) -> Result<(), EffectError> {
        if self.position(id).is_some() {
            return Err(EffectError::ElementExists(id.clone()));
        }
        if self.servers.len() >= self.config.max_servers {
            return Err(EffectError::Capacity {
                max: self.config.max_servers,
            });
        }
        let prop = |p: &str| snapshot.properties.get(&format!("{p}_{id}")).copied();
        let server = Server::new(
            id.clone(),
            prop("capacity").unwrap_or(self.default_capacity),
            prop("routing_weight").unwrap_or(1.0),
        );
        self.servers.push(server);
        self.removed.remove(id);
        self.pending_events.push(format!("restore_server:{id}"));
        Ok(())
    }
}

impl fmt::Display for Farm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "farm t={} servers=[", self.now)?;
        for (i, s) in self.servers.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}:{:.2}", s.id, s.load)?;
        }
        f.write_str("]")
    }
}
