//! Scenario files: flat `key = value` lines, `#` starts a comment.
//!
//! ```text
//! duration = 4000
//! farm.initial_servers = 1
//! sensor.load.delta = 0.20
//! symptom.high_load.kind = threshold_above
//! symptom.high_load.upper = 0.70
//! workload.at.0 = 40
//! workload.at.2000 = 400
//! ```

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use thiserror::Error;

use crate::analysis::{Symptom, SymptomKind, SymptomScope};
use crate::control::{LoopTopology, SensorTemplate};
use crate::knowledge::{Knowledge, DEFAULT_LOG_CAPACITY};
use crate::monitoring::{SensorMode, Threshold};
use crate::simfarm::{Farm, FarmConfig, FarmError, Workload};
use crate::{ElementId, Tick};

pub const DEFAULT_SENSOR_DELTA: f64 = 0.20;
pub const DEFAULT_FALLBACK_PERIOD: Tick = 300;
pub const DEFAULT_SENSOR_PERIOD: Tick = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}` (first set on line {first})")]
    DuplicateKey { line: usize, key: String, first: usize },
    #[error("line {line}: invalid value for `{key}`: {message}")]
    InvalidValue { line: usize, key: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub duration: Tick,
    pub seed: u64,
    pub topology: LoopTopology,
    pub farm: FarmConfig,
    pub workload: Workload,
    pub sensors: Vec<SensorTemplate>,
    pub symptoms: Vec<Symptom>,
    pub log_capacity: usize,
    pub faults: Vec<(ElementId, Tick)>,
}

impl Scenario {
    pub fn knowledge(&self) -> Knowledge {
        let mut k = Knowledge::new(self.log_capacity, self.farm.cost_per_server);
        for s in &self.symptoms {
            k.symptoms_mut()
                .add_symptom(s.clone())
                .expect("symptoms validated at load time");
        }
        k
    }

    pub fn build_farm(&self) -> Result<Farm, FarmError> {
        let mut config = self.farm.clone();
        config.seed = self.seed;
        Farm::new(config, self.workload.clone())
    }

    /// Properties some sensor observes.
    pub fn observed_properties(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.sensors.iter().map(|s| s.property.as_str()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Debug, Default)]
struct SensorDraft {
    property: Option<String>,
    mode: Option<String>,
    delta: Option<f64>,
    period: Option<Tick>,
    line: usize,
}

#[derive(Debug, Default)]
struct SymptomDraft {
    kind: Option<SymptomKind>,
    property: Option<String>,
    upper: Option<f64>,
    lower: Option<f64>,
    window: Option<Tick>,
    scope: Option<SymptomScope>,
    line: usize,
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
}

impl Entry<'_> {
    fn invalid(&self, message: impl Into<String>) -> ScenarioError {
        ScenarioError::InvalidValue {
            line: self.line,
            key: self.key.to_string(),
            message: message.into(),
        }
    }

    fn parse<T: FromStr>(&self, what: &str) -> Result<T, ScenarioError> {
        self.value
            .parse()
            .map_err(|_| self.invalid(format!("expected {what}, found `{}`", self.value)))
    }

    fn tick(&self) -> Result<Tick, ScenarioError> {
        self.parse("a non-negative integer")
    }

    fn count(&self) -> Result<usize, ScenarioError> {
        self.parse("a non-negative integer")
    }

    fn number(&self) -> Result<f64, ScenarioError> {
        let v: f64 = self.parse("a number")?;
        if !v.is_finite() {
            return Err(self.invalid("value must be finite"));
        }
        Ok(v)
    }

    fn ident(&self) -> Result<String, ScenarioError> {
        if !is_ident(self.value) {
            return Err(self.invalid(format!("expected a name, found `{}`", self.value)));
        }
        Ok(self.value.to_string())
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut duration = None;
    let mut seed = 0;
    let mut topology = LoopTopology::SingleLoop;
    let mut farm = FarmConfig::default();
    let mut log_capacity = DEFAULT_LOG_CAPACITY;
    let mut breakpoints: BTreeMap<Tick, (f64, usize)> = BTreeMap::new();
    let mut sensors: Vec<(String, SensorDraft)> = Vec::new();
    let mut symptoms: Vec<(String, SymptomDraft)> = Vec::new();
    let mut faults = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ScenarioError::Syntax {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ScenarioError::Syntax {
                line,
                message: "key and value must be non-empty".into(),
            });
        }
        if let Some(&first) = seen.get(key) {
            return Err(ScenarioError::DuplicateKey {
                line,
                key: key.to_string(),
                first,
            });
        }
        seen.insert(key.to_string(), line);
        let e = Entry { line, key, value };
        let unknown = || ScenarioError::UnknownKey {
            line,
            key: key.to_string(),
        };
        let parts: Vec<&str> = key.split('.').collect();
        match parts.as_slice() {
            ["duration"] => duration = Some(e.tick()?),
            ["seed"] => seed = e.parse("an unsigned integer")?,
            ["topology"] => {
                topology = match value {
                    "single_loop" => LoopTopology::SingleLoop,
                    "hierarchical" => LoopTopology::Hierarchical,
                    _ => return Err(e.invalid("expected `single_loop` or `hierarchical`")),
                }
            }
            ["cost_per_server"] => farm.cost_per_server = e.number()?,
            ["knowledge", "log_capacity"] => {
                log_capacity = e.count()?;
                if log_capacity == 0 {
                    return Err(e.invalid("capacity must be positive"));
                }
            }
            ["farm", field] => match *field {
                "initial_servers" => farm.initial_servers = e.count()?,
                "capacity" => farm.capacity = e.number()?,
                "min_servers" => farm.min_servers = e.count()?,
                "max_servers" => farm.max_servers = e.count()?,
                "base_latency_ms" => farm.base_latency_ms = e.number()?,
                "timeout_latency_ms" => farm.timeout_latency_ms = e.number()?,
                _ => return Err(unknown()),
            },
            ["workload", "jitter"] => farm.jitter = e.number()?,
            ["workload", "at", t] => {
                let at: Tick = t.parse().map_err(|_| e.invalid(format!("`{t}` is not a tick")))?;
                let rate = e.number()?;
                if let Some((_, first)) = breakpoints.insert(at, (rate, line)) {
                    return Err(ScenarioError::DuplicateKey {
                        line,
                        key: key.to_string(),
                        first,
                    });
                }
            }
            ["sensor", id, field] if is_ident(id) => {
                let draft = draft_for(&mut sensors, id, line);
                match *field {
                    "property" => draft.property = Some(e.ident()?),
                    "mode" => draft.mode = Some(e.ident()?),
                    "delta" => draft.delta = Some(e.number()?),
                    "period" => draft.period = Some(e.tick()?),
                    _ => return Err(unknown()),
                }
            }
            ["symptom", name, field] if is_ident(name) => {
                let draft = draft_for(&mut symptoms, name, line);
                match *field {
                    "kind" => draft.kind = Some(SymptomKind::from_str(value).map_err(|m| e.invalid(m))?),
                    "property" => draft.property = Some(e.ident()?),
                    "upper" => draft.upper = Some(e.number()?),
                    "lower" => draft.lower = Some(e.number()?),
                    "window" => draft.window = Some(e.tick()?),
                    "scope" => {
                        draft.scope = Some(match value {
                            "per_element" => SymptomScope::PerElement,
                            "global" => SymptomScope::Global,
                            _ => return Err(e.invalid("expected `per_element` or `global`")),
                        })
                    }
                    _ => return Err(unknown()),
                }
            }
            ["fault", server, "unresponsive"] if is_ident(server) => {
                faults.push((ElementId::new(*server), e.tick()?));
            }
            _ => return Err(unknown()),
        }
    }

    let duration = duration.ok_or_else(|| ScenarioError::Invalid("`duration` is required".into()))?;
    if duration == 0 {
        return Err(ScenarioError::Invalid("`duration` must be positive".into()));
    }
    farm.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let workload = Workload::new(breakpoints.into_iter().map(|(t, (r, _))| (t, r)).collect())
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;

    let sensors = if sensors.is_empty() {
        vec![default_sensor()]
    } else {
        sensors
            .into_iter()
            .map(|(id, d)| build_sensor(id, d))
            .collect::<Result<_, _>>()?
    };
    let symptoms: Vec<Symptom> = symptoms
        .into_iter()
        .map(|(name, d)| build_symptom(name, d))
        .collect::<Result<_, _>>()?;
    for s in &symptoms {
        if !sensors.iter().any(|t| t.property == s.property) {
            return Err(ScenarioError::Invalid(format!(
                "symptom `{}` watches `{}`, which no sensor observes",
                s.event_name, s.property
            )));
        }
    }
    let initial: Vec<ElementId> = (1..=farm.initial_servers)
        .map(|i| ElementId::new(format!("s{i}")))
        .collect();
    for (server, _) in &faults {
        if !initial.contains(server) {
            return Err(ScenarioError::Invalid(format!(
                "fault targets `{server}`, which is not an initial server"
            )));
        }
    }

    Ok(Scenario {
        duration,
        seed,
        topology,
        farm,
        workload,
        sensors,
        symptoms,
        log_capacity,
        faults,
    })
}

fn draft_for<'a, D>(drafts: &'a mut Vec<(String, D)>, id: &str, line: usize) -> &'a mut D
where
    D: Default + HasLine,
{
    let i = match drafts.iter().position(|(n, _)| n == id) {
        Some(i) => i,
        None => {
            let mut d = D::default();
            d.set_line(line);
            drafts.push((id.to_string(), d));
            drafts.len() - 1
        }
    };
    &mut drafts[i].1
}

trait HasLine {
    fn set_line(&mut self, line: usize);
}

impl HasLine for SensorDraft {
    fn set_line(&mut self, line: usize) {
        self.line = line;
    }
}

impl HasLine for SymptomDraft {
    fn set_line(&mut self, line: usize) {
        self.line = line;
    }
}

fn default_sensor() -> SensorTemplate {
    SensorTemplate::new(
        "load",
        "load",
        SensorMode::EventTriggered {
            relative_delta: DEFAULT_SENSOR_DELTA,
            fallback_period: Some(DEFAULT_FALLBACK_PERIOD),
        },
    )
}

fn build_sensor(id: String, d: SensorDraft) -> Result<SensorTemplate, ScenarioError> {
    let fail = |m: String| ScenarioError::Invalid(format!("sensor `{id}` (line {}): {m}", d.line));
    let mode = match d.mode.as_deref().unwrap_or("event_triggered") {
        "event_triggered" => SensorMode::EventTriggered {
            relative_delta: d.delta.unwrap_or(DEFAULT_SENSOR_DELTA),
            fallback_period: match d.period {
                Some(0) => None,
                Some(p) => Some(p),
                None => Some(DEFAULT_FALLBACK_PERIOD),
            },
        },
        "time_triggered" => SensorMode::TimeTriggered {
            period: d.period.unwrap_or(DEFAULT_SENSOR_PERIOD),
        },
        "on_demand" => SensorMode::OnDemand,
        other => return Err(fail(format!("unknown mode `{other}`"))),
    };
    if d.delta.is_some() && !matches!(mode, SensorMode::EventTriggered { .. }) {
        return Err(fail("`delta` only applies to event_triggered sensors".into()));
    }
    mode.validate().map_err(|e| fail(e.to_string()))?;
    Ok(SensorTemplate::new(
        id.clone(),
        d.property.unwrap_or_else(|| "load".to_string()),
        mode,
    ))
}

fn build_symptom(name: String, d: SymptomDraft) -> Result<Symptom, ScenarioError> {
    let fail = |m: String| ScenarioError::Invalid(format!("symptom `{name}` (line {}): {m}", d.line));
    let kind = d.kind.ok_or_else(|| fail("`kind` is required".into()))?;
    let threshold = Threshold {
        lower: d.lower,
        upper: d.upper,
    };
    if d.lower.is_some() || d.upper.is_some() {
        threshold.validate().map_err(|e| fail(e.to_string()))?;
    }
    let symptom = Symptom {
        event_name: name.clone(),
        kind,
        property: d.property.clone().unwrap_or_else(|| "load".to_string()),
        threshold,
        window: d.window,
        scope: d.scope.unwrap_or_default(),
    };
    symptom.validate().map_err(|e| fail(e.to_string()))?;
    Ok(symptom)
}
