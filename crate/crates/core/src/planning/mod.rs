//! Event-condition-action policies and the planner that turns adaptation
//! requests into change plans.

mod parser;

use std::fmt;

use thiserror::Error;

pub use parser::{parse_policy, parse_rule};

use crate::analysis::AdaptationRequest;
use crate::knowledge::{Decision, DecisionKind, Knowledge, KnowledgeView};
use crate::loopcore::ComponentId;
use crate::{ElementId, Tick};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}, column {column}: unknown action `{verb}`")]
    UnknownVerb {
        line: usize,
        column: usize,
        verb: String,
    },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error("invalid rule: {0}")]
    Rule(String),
    #[error("no rule at index {index} (engine has {len})")]
    BadIndex { index: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConditionError {
    #[error("unresolvable variable `{0}`")]
    Unresolved(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    fn apply(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    True,
    Not(Box<Condition>),
    And(Vec<Condition>),
    Or(Vec<Condition>),
    Compare {
        variable: String,
        op: CmpOp,
        value: f64,
    },
}

impl Condition {
    /// Left-to-right, short-circuiting evaluation.
    pub fn evaluate(&self, view: &KnowledgeView) -> Result<bool, ConditionError> {
        match self {
            Condition::True => Ok(true),
            Condition::Not(inner) => Ok(!inner.evaluate(view)?),
            Condition::And(parts) => {
                for p in parts {
                    if !p.evaluate(view)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Condition::Or(parts) => {
                for p in parts {
                    if p.evaluate(view)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Condition::Compare { variable, op, value } => {
                let lhs = view
                    .variable(variable)
                    .ok_or_else(|| ConditionError::Unresolved(variable.clone()))?;
                Ok(op.apply(lhs, *value))
            }
        }
    }

    fn fmt_disj(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Or(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" or ")?;
                    }
                    p.fmt_conj(f)?;
                }
                Ok(())
            }
            other => other.fmt_conj(f),
        }
    }

    fn fmt_conj(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::And(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" and ")?;
                    }
                    p.fmt_atom(f)?;
                }
                Ok(())
            }
            other => other.fmt_atom(f),
        }
    }

    fn fmt_atom(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::True => f.write_str("true"),
            Condition::Not(inner) => {
                f.write_str("not ")?;
                inner.fmt_atom(f)
            }
            Condition::Compare { variable, op, value } => {
                write!(f, "{variable} {} {value}", op.as_str())
            }
            Condition::And(_) | Condition::Or(_) => {
                f.write_str("(")?;
                self.fmt_disj(f)?;
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_disj(f)
    }
}

/// Which server a `remove_server` action targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    /// The element named in the adaptation request.
    TriggeringElement,
    /// The element with the lowest current `load`.
    LowestLoad,
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Selector::TriggeringElement => "triggering_element",
            Selector::LowestLoad => "lowest_load",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Verb {
    AddServer,
    RemoveServer,
    SetProperty,
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verb::AddServer => "add_server",
            Verb::RemoveServer => "remove_server",
            Verb::SetProperty => "set_property",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    AddServer,
    RemoveServer(Selector),
    SetProperty { property: String, value: f64 },
}

impl Action {
    pub fn verb(&self) -> Verb {
        match self {
            Action::AddServer => Verb::AddServer,
            Action::RemoveServer(_) => Verb::RemoveServer,
            Action::SetProperty { .. } => Verb::SetProperty,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::AddServer => f.write_str("add_server"),
            Action::RemoveServer(sel) => write!(f, "remove_server({sel})"),
            Action::SetProperty { property, value } => write!(f, "set_property({property}, {value})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum DispatchMode {
    #[default]
    Sequential,
    Concurrent,
    /// Sizes of consecutive groups; groups run in order, the steps inside a
    /// group run concurrently.
    Mixed(Vec<usize>),
}

impl DispatchMode {
    /// Step index ranges, one per dispatch group.
    pub fn groups(&self, steps: usize) -> Vec<std::ops::Range<usize>> {
        match self {
            DispatchMode::Sequential => (0..steps).map(|i| i..i + 1).collect(),
            DispatchMode::Concurrent => std::iter::once(0..steps).collect(),
            DispatchMode::Mixed(sizes) => {
                let mut start = 0;
                sizes
                    .iter()
                    .map(|&n| {
                        let r = start..start + n;
                        start += n;
                        r
                    })
                    .collect()
            }
        }
    }
}

impl fmt::Display for DispatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DispatchMode::Sequential => f.write_str("sequential"),
            DispatchMode::Concurrent => f.write_str("concurrent"),
            DispatchMode::Mixed(sizes) => {
                f.write_str("mixed(")?;
                for (i, n) in sizes.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{n}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// `on <event> if <condition> do <actions>`. Priority is the rule's
/// position in the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRule {
    pub event: String,
    pub condition: Condition,
    pub actions: Vec<Action>,
    pub mode: DispatchMode,
}

impl PolicyRule {
    pub fn validate(&self) -> Result<(), String> {
        if self.actions.is_empty() {
            return Err("a rule needs at least one action".into());
        }
        if let DispatchMode::Mixed(sizes) = &self.mode {
            if sizes.contains(&0) {
                return Err("mixed groups must not be empty".into());
            }
            let total: usize = sizes.iter().sum();
            if total != self.actions.len() {
                return Err(format!(
                    "mixed groups cover {total} steps but the rule has {} actions",
                    self.actions.len()
                ));
            }
        }
        Ok(())
    }
}

impl fmt::Display for PolicyRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "on {} if {} do ", self.event, self.condition)?;
        for (i, a) in self.actions.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        if self.mode != DispatchMode::Sequential {
            write!(f, " ; mode = {}", self.mode)?;
        }
        Ok(())
    }
}

/// Renders rules in policy-file syntax, one per line.
pub fn print_policy(rules: &[PolicyRule]) -> String {
    rules.iter().map(|r| format!("{r}\n")).collect()
}

/// Ordered rule store. Replacement is all-or-nothing.
#[derive(Debug, Clone, Default)]
pub struct PolicyEngine {
    rules: Vec<PolicyRule>,
}

impl PolicyEngine {
    pub fn from_text(text: &str) -> Result<Self, PolicyError> {
        let mut engine = PolicyEngine::default();
        engine.load_policies(parse_policy(text)?)?;
        Ok(engine)
    }

    pub fn rules(&self) -> &[PolicyRule] {
        &self.rules
    }

    pub fn load_policies(&mut self, rules: Vec<PolicyRule>) -> Result<(), PolicyError> {
        for r in &rules {
            r.validate().map_err(PolicyError::Rule)?;
        }
        self.rules = rules;
        Ok(())
    }

    /// Replaces rule `index`, or appends when `index` equals the rule count.
    pub fn modify_policy(&mut self, index: usize, rule: PolicyRule) -> Result<(), PolicyError> {
        rule.validate().map_err(PolicyError::Rule)?;
        let len = self.rules.len();
        match index.cmp(&len) {
            std::cmp::Ordering::Less => self.rules[index] = rule,
            std::cmp::Ordering::Equal => self.rules.push(rule),
            std::cmp::Ordering::Greater => return Err(PolicyError::BadIndex { index, len }),
        }
        Ok(())
    }

    /// Events referenced by the rules, in first-use order.
    pub fn events(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rules {
            if !out.contains(&r.event.as_str()) {
                out.push(&r.event);
            }
        }
        out
    }
}

/// One plan step with its target resolved at planning time.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedStep {
    pub action: Action,
    pub target: Option<ElementId>,
}

impl fmt::Display for PlannedStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.action, &self.target) {
            (Action::RemoveServer(_), Some(t)) => write!(f, "remove_server({t})"),
            (Action::RemoveServer(sel), None) => write!(f, "remove_server({sel}:none)"),
            (a, _) => write!(f, "{a}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangePlan {
    pub id: u64,
    pub request: AdaptationRequest,
    pub rule_index: usize,
    pub steps: Vec<PlannedStep>,
    pub dispatch: DispatchMode,
    pub created_at: Tick,
}

impl ChangePlan {
    pub fn steps_summary(&self) -> String {
        let steps: Vec<String> = self.steps.iter().map(|s| s.to_string()).collect();
        format!("[{}]", steps.join(", "))
    }
}

/// Outcome of planning one request.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanDecision {
    Plan(ChangePlan),
    NoOp { reason: String },
}

impl PlanDecision {
    pub fn plan(self) -> Option<ChangePlan> {
        match self {
            PlanDecision::Plan(p) => Some(p),
            PlanDecision::NoOp { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Planner {
    id: ComponentId,
}

fn resolve_target(
    action: &Action,
    request: &AdaptationRequest,
    view: &KnowledgeView,
) -> Option<ElementId> {
    match action {
        Action::RemoveServer(Selector::TriggeringElement) => Some(request.element.clone()),
        Action::RemoveServer(Selector::LowestLoad) => {
            let mut best: Option<(&ElementId, f64)> = None;
            for (element, sample) in view.latest.property("load") {
                if best.is_none_or(|(_, v)| sample.value < v) {
                    best = Some((element, sample.value));
                }
            }
            best.map(|(e, _)| e.clone())
        }
        Action::AddServer | Action::SetProperty { .. } => None,
    }
}

impl Planner {
    pub fn new(id: ComponentId) -> Self {
        Planner { id }
    }

    pub fn id(&self) -> &ComponentId {
        &self.id
    }

    /// First rule (in priority order) whose event matches and whose condition
    /// holds produces the plan. Rules whose condition cannot be evaluated are
    /// skipped. The decision is logged to the knowledge base.
    pub fn plan(
        &self,
        request: &AdaptationRequest,
        knowledge: &mut Knowledge,
        topology: &[ElementId],
        now: Tick,
    ) -> PlanDecision {
        let view = knowledge.view(topology);
        let mut notes = Vec::new();
        let mut chosen = None;
        for (index, rule) in knowledge.policies().rules().iter().enumerate() {
            if rule.event != request.event_name {
                continue;
            }
            match rule.condition.evaluate(&view) {
                Ok(true) => {
                    chosen = Some((index, rule.clone()));
                    break;
                }
                Ok(false) => notes.push(format!("rule {index} condition false ({})", rule.condition)),
                Err(e) => {
                    log::warn!("t={now} skipping rule {index} for {}: {e}", request.event_name);
                    notes.push(format!("rule {index} skipped: {e}"));
                }
            }
        }
        let Some((rule_index, rule)) = chosen else {
            let reason = if notes.is_empty() {
                "no rule for event".to_string()
            } else {
                notes.join("; ")
            };
            knowledge.log_decision(Decision {
                at: now,
                kind: DecisionKind::Noop,
                event: request.event_name.clone(),
                element: request.element.to_string(),
                detail: reason.clone(),
            });
            return PlanDecision::NoOp { reason };
        };
        let steps = rule
            .actions
            .iter()
            .map(|a| PlannedStep {
                action: a.clone(),
                target: resolve_target(a, request, &view),
            })
            .collect();
        let plan = ChangePlan {
            id: knowledge.next_plan_id(),
            request: request.clone(),
            rule_index,
            steps,
            dispatch: rule.mode.clone(),
            created_at: now,
        };
        knowledge.log_decision(Decision {
            at: now,
            kind: DecisionKind::Plan,
            event: request.event_name.clone(),
            element: request.element.to_string(),
            detail: format!(
                "plan={} rule={} mode={} steps={}",
                plan.id,
                rule_index,
                plan.dispatch,
                plan.steps_summary()
            ),
        });
        PlanDecision::Plan(plan)
    }
}
