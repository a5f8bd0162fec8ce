//! Symptoms, the symptom repository and the analyzer.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::knowledge::{Decision, DecisionKind, Knowledge, Resolutions, SystemStateLog};
use crate::loopcore::ComponentId;
use crate::monitoring::{RuntimeState, Threshold};
use crate::{ElementId, Tick};

/// Look-back used to count occurrences of a `threshold_above` symptom.
pub const DEFAULT_OCCURRENCE_WINDOW: Tick = 7200;

/// Element id reported by globally scoped symptoms.
pub const GLOBAL_ELEMENT: &str = "*";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymptomKind {
    /// Latest value above the upper bound.
    ThresholdAbove,
    /// Below the lower bound for a whole window.
    ThresholdBelowSustained,
    /// No new reading for longer than the window.
    Stale,
}

impl SymptomKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SymptomKind::ThresholdAbove => "threshold_above",
            SymptomKind::ThresholdBelowSustained => "threshold_below_sustained",
            SymptomKind::Stale => "stale",
        }
    }
}

impl std::str::FromStr for SymptomKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "threshold_above" => Ok(SymptomKind::ThresholdAbove),
            "threshold_below_sustained" => Ok(SymptomKind::ThresholdBelowSustained),
            "stale" => Ok(SymptomKind::Stale),
            other => Err(format!("unknown symptom kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SymptomScope {
    #[default]
    PerElement,
    /// Evaluated on the mean over all elements (thresholds) or on the newest
    /// reading of any element (staleness).
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Symptom {
    pub event_name: String,
    pub kind: SymptomKind,
    pub property: String,
    pub threshold: Threshold,
    pub window: Option<Tick>,
    pub scope: SymptomScope,
}

impl Symptom {
    pub fn threshold_above(event: &str, property: &str, upper: f64) -> Self {
        Symptom {
            event_name: event.into(),
            kind: SymptomKind::ThresholdAbove,
            property: property.into(),
            threshold: Threshold::upper(upper),
            window: None,
            scope: SymptomScope::PerElement,
        }
    }

    pub fn below_sustained(event: &str, property: &str, lower: f64, window: Tick) -> Self {
        Symptom {
            event_name: event.into(),
            kind: SymptomKind::ThresholdBelowSustained,
            property: property.into(),
            threshold: Threshold::lower(lower),
            window: Some(window),
            scope: SymptomScope::PerElement,
        }
    }

    pub fn stale(event: &str, property: &str, window: Tick) -> Self {
        Symptom {
            event_name: event.into(),
            kind: SymptomKind::Stale,
            property: property.into(),
            threshold: Threshold::default(),
            window: Some(window),
            scope: SymptomScope::PerElement,
        }
    }

    pub fn with_scope(mut self, scope: SymptomScope) -> Self {
        self.scope = scope;
        self
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |why: &str| {
            Err(AnalysisError::Malformed {
                event: self.event_name.clone(),
                reason: why.to_string(),
            })
        };
        if self.event_name.is_empty() {
            return bad("empty event name");
        }
        if self.property.is_empty() {
            return bad("empty property");
        }
        if self.window == Some(0) {
            return bad("window must be positive");
        }
        let (lower, upper) = (self.threshold.lower, self.threshold.upper);
        if lower.is_some_and(|v| !v.is_finite()) || upper.is_some_and(|v| !v.is_finite()) {
            return bad("threshold bounds must be finite");
        }
        if let (Some(l), Some(u)) = (lower, upper) {
            if l >= u {
                return bad("lower bound must be below upper bound");
            }
        }
        match self.kind {
            SymptomKind::ThresholdAbove if upper.is_none() => bad("threshold_above needs an upper bound"),
            SymptomKind::ThresholdBelowSustained if lower.is_none() => {
                bad("threshold_below_sustained needs a lower bound")
            }
            SymptomKind::ThresholdBelowSustained | SymptomKind::Stale if self.window.is_none() => {
                bad("a window is required")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdaptationRequest {
    pub event_name: String,
    pub element: ElementId,
    pub window: (Tick, Tick),
    pub occurrences: usize,
    pub raised_at: Tick,
}

impl fmt::Display for AdaptationRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "window={}..{} occurrences={}",
            self.window.0, self.window.1, self.occurrences
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("symptom `{0}` is already defined")]
    Duplicate(String),
    #[error("symptom `{event}` is malformed: {reason}")]
    Malformed { event: String, reason: String },
    #[error("symptom `{event}` references unknown property `{property}`")]
    UnknownProperty { event: String, property: String },
}

/// Symptoms keyed by event name, evaluated in insertion order.
#[derive(Debug, Clone, Default)]
pub struct SymptomRepository {
    symptoms: Vec<Symptom>,
}

impl SymptomRepository {
    pub fn add_symptom(&mut self, symptom: Symptom) -> Result<(), AnalysisError> {
        symptom.validate()?;
        if self.get(&symptom.event_name).is_some() {
            return Err(AnalysisError::Duplicate(symptom.event_name));
        }
        self.symptoms.push(symptom);
        Ok(())
    }

    pub fn get(&self, event: &str) -> Option<&Symptom> {
        self.symptoms.iter().find(|s| s.event_name == event)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Symptom> {
        self.symptoms.iter()
    }

    pub fn len(&self) -> usize {
        self.symptoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symptoms.is_empty()
    }
}

/// One element for which a symptom's condition holds.
#[derive(Debug, Clone, PartialEq)]
pub struct SymptomMatch {
    pub element: ElementId,
    pub window: (Tick, Tick),
    pub occurrences: usize,
    /// Time of the newest reading the match is based on.
    pub evidence_at: Tick,
}

impl SymptomMatch {
    fn into_request(self, event: &str, now: Tick) -> AdaptationRequest {
        AdaptationRequest {
            event_name: event.to_string(),
            element: self.element,
            window: self.window,
            occurrences: self.occurrences,
            raised_at: now,
        }
    }
}

/// The value a symptom looks at in one state for one in-scope element.
fn scoped_value(s: &Symptom, state: &RuntimeState, element: &ElementId) -> Option<f64> {
    match s.scope {
        SymptomScope::PerElement => state.value(&s.property, element),
        SymptomScope::Global => {
            let (sum, n) = state
                .property(&s.property)
                .fold((0.0, 0usize), |(sum, n), (_, x)| (sum + x.value, n + 1));
            (n > 0).then(|| sum / n as f64)
        }
    }
}

/// In-scope elements of the latest state with the time of their reading.
fn scoped_elements(s: &Symptom, latest: &RuntimeState) -> Vec<(ElementId, Tick)> {
    match s.scope {
        SymptomScope::PerElement => latest
            .property(&s.property)
            .map(|(e, sample)| (e.clone(), sample.at))
            .collect(),
        SymptomScope::Global => latest
            .property(&s.property)
            .map(|(_, sample)| sample.at)
            .max()
            .map(|at| vec![(ElementId::new(GLOBAL_ELEMENT), at)])
            .unwrap_or_default(),
    }
}

/// Every in-scope element for which `s` holds at time `now`, in element
/// order. Only log entries with `at <= now` are considered.
pub fn symptom_matches(s: &Symptom, log: &SystemStateLog, now: Tick) -> Vec<SymptomMatch> {
    let Some(latest) = log.latest_at_or_before(now) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (element, evidence_at) in scoped_elements(s, latest) {
        let m = match s.kind {
            SymptomKind::ThresholdAbove => {
                let Some(upper) = s.threshold.upper else { continue };
                if !scoped_value(s, latest, &element).is_some_and(|v| v > upper) {
                    continue;
                }
                let occurrences = log
                    .window(DEFAULT_OCCURRENCE_WINDOW, now)
                    .into_iter()
                    .filter(|st| scoped_value(s, st, &element).is_some_and(|v| v > upper))
                    .count();
                SymptomMatch {
                    element,
                    window: (now.saturating_sub(DEFAULT_OCCURRENCE_WINDOW), now),
                    occurrences,
                    evidence_at,
                }
            }
            SymptomKind::ThresholdBelowSustained => {
                let (Some(lower), Some(window)) = (s.threshold.lower, s.window) else {
                    continue;
                };
                let Some(start) = now.checked_sub(window) else { continue };
                let below = |st: &RuntimeState| scoped_value(s, st, &element).is_some_and(|v| v < lower);
                // the state in effect at the window start must already be low
                let Some(carried) = log.latest_at_or_before(start) else { continue };
                if !below(carried) {
                    continue;
                }
                let in_window = log.window(window, now);
                if in_window.is_empty() || !in_window.iter().all(|st| below(st)) {
                    continue;
                }
                SymptomMatch {
                    element,
                    window: (start, now),
                    occurrences: in_window.len(),
                    evidence_at,
                }
            }
            SymptomKind::Stale => {
                let Some(window) = s.window else { continue };
                if now.saturating_sub(evidence_at) <= window {
                    continue;
                }
                SymptomMatch {
                    element,
                    window: (evidence_at, now),
                    occurrences: 1,
                    evidence_at,
                }
            }
        };
        out.push(m);
    }
    out
}

/// The first element for which `s` holds, as a request.
pub fn evaluate_symptom(s: &Symptom, log: &SystemStateLog, now: Tick) -> Option<AdaptationRequest> {
    symptom_matches(s, log, now)
        .into_iter()
        .next()
        .map(|m| m.into_request(&s.event_name, now))
}

/// Whether an earlier request suppresses `m`.
///
/// A request stays blocked while unresolved. After resolution, threshold
/// symptoms need a reading taken after the most recent adaptation, and
/// staleness needs a full window to pass since its own resolution.
pub fn is_blocked(s: &Symptom, m: &SymptomMatch, resolutions: &Resolutions, now: Tick) -> bool {
    if resolutions.is_unresolved(&s.event_name, &m.element) {
        return true;
    }
    match s.kind {
        SymptomKind::Stale => {
            let window = s.window.unwrap_or(0);
            resolutions
                .resolved_at(&s.event_name, &m.element)
                .is_some_and(|r| now.saturating_sub(r) <= window)
        }
        _ => resolutions
            .last_adaptation_at()
            .is_some_and(|t| m.evidence_at <= t),
    }
}

#[derive(Debug, Clone)]
pub struct Analyzer {
    id: ComponentId,
    known_properties: Option<BTreeSet<String>>,
}

impl Analyzer {
    pub fn new(id: ComponentId) -> Self {
        Analyzer {
            id,
            known_properties: None,
        }
    }

    /// Restricts symptoms to the given properties; others become
    /// configuration errors.
    pub fn with_properties<I, S>(mut self, properties: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.known_properties = Some(properties.into_iter().map(Into::into).collect());
        self
    }

    pub fn id(&self) -> &ComponentId {
        &self.id
    }

    fn check(&self, s: &Symptom) -> Result<(), AnalysisError> {
        match &self.known_properties {
            Some(known) if !known.contains(&s.property) => Err(AnalysisError::UnknownProperty {
                event: s.event_name.clone(),
                property: s.property.clone(),
            }),
            _ => Ok(()),
        }
    }

    pub fn evaluate(
        &self,
        s: &Symptom,
        log: &SystemStateLog,
        now: Tick,
    ) -> Result<Option<AdaptationRequest>, AnalysisError> {
        self.check(s)?;
        Ok(evaluate_symptom(s, log, now))
    }

    /// Evaluates every symptom of the repository against the logged history
    /// at `state.at` and raises at most one request per symptom, skipping
    /// blocked (event, element) pairs.
    pub fn analyze(
        &self,
        state: &RuntimeState,
        knowledge: &mut Knowledge,
    ) -> Result<Vec<AdaptationRequest>, AnalysisError> {
        let now = state.at;
        let mut raised = Vec::new();
        for s in knowledge.symptoms().iter() {
            self.check(s)?;
            let hit = symptom_matches(s, knowledge.log(), now)
                .into_iter()
                .find(|m| !is_blocked(s, m, knowledge.resolutions(), now));
            if let Some(m) = hit {
                raised.push(m.into_request(&s.event_name, now));
            }
        }
        for req in &raised {
            knowledge
                .resolutions_mut()
                .mark_raised(&req.event_name, &req.element);
            knowledge.log_decision(Decision {
                at: now,
                kind: DecisionKind::Request,
                event: req.event_name.clone(),
                element: req.element.to_string(),
                detail: req.to_string(),
            });
        }
        Ok(raised)
    }
}
