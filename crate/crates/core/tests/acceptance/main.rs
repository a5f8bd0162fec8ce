//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod oracles;
mod reference;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mapek::analysis::{AdaptationRequest, Analyzer, Symptom, SymptomKind};
use mapek::control::{ControlLoop, MAIN_MONITOR};
use mapek::execution::{Dispatch, Effector, Executor, ManagedSystem};
use mapek::knowledge::{DecisionKind, Knowledge, SharedKnowledge};
use mapek::monitoring::{
    Monitor, PropertyDescriptor, RuntimeState, Sample, Sensor, SensorMode, SharedMonitor, StateKey,
};
use mapek::planning::{Action, ChangePlan, DispatchMode, PlannedStep, PolicyEngine, Selector, Verb};
use mapek::runner::{simulate, RunOptions, RunOutput};
use mapek::scenario::{parse_scenario, Scenario};
use mapek::simfarm::Farm;
use mapek::{ComponentId, ElementId, Tick};

use oracles::OracleSymptom;
use reference::Kind;

/// One sensor fallback period: the timing tolerance of criteria 3 and 9.
const SENSOR_CYCLE: Tick = 300;
const STALE_WINDOW: Tick = 300;
const FAULT_AT: Tick = 1000;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn scenario_text(name: &str) -> String {
    std::fs::read_to_string(scenarios_dir().join(name)).expect("scenario file")
}

fn scenario(name: &str) -> Scenario {
    parse_scenario(&scenario_text(name)).expect("valid scenario")
}

fn policies() -> PolicyEngine {
    PolicyEngine::from_text(&scenario_text("vle.pol")).expect("valid policy")
}

fn timed_run(s: &Scenario) -> (RunOutput, Duration) {
    let start = Instant::now();
    let out = simulate(s, &policies(), &RunOptions::default()).expect("run succeeds");
    (out, start.elapsed())
}

/// Add/remove decisions of a run, from its plan lines.
fn adaptations(out: &RunOutput) -> Vec<(Tick, Kind)> {
    out.decisions
        .iter()
        .filter(|d| d.kind == DecisionKind::Plan)
        .map(|d| {
            let kind = if d.detail.contains("add_server") { Kind::Add } else { Kind::Remove };
            (d.at, kind)
        })
        .collect()
}

/// Same tick order as the runner: step, observe, then faults due at `t`.
fn drive(s: &Scenario, mut hook: impl FnMut(Tick, &ControlLoop, &mut Farm)) -> (ControlLoop, Farm) {
    let mut farm = s.build_farm().unwrap();
    let mut k = s.knowledge();
    *k.policies_mut() = policies();
    let mut lp = ControlLoop::standard(k, s.topology, s.sensors.clone(), Dispatch::Deterministic).unwrap();
    lp.enable_trace();
    lp.reconcile(&farm, 0).unwrap();
    for t in 0..s.duration {
        farm.step(t);
        lp.observe(t, &mut farm).unwrap();
        hook(t, &lp, &mut farm);
        for (server, at) in &s.faults {
            if *at == t {
                farm.inject_fault(server, t).unwrap();
            }
        }
    }
    (lp, farm)
}

fn criterion_1() -> Outcome {
    let (out, elapsed) = timed_run(&scenario("scaleup.scn"));
    let adds = adaptations(&out);
    ensure!(adds.iter().all(|(_, k)| *k == Kind::Add), "unexpected removal in {adds:?}");
    ensure!(adds.len() == 4, "expected 4 additions (1 -> 5 servers), got {}", adds.len());
    ensure!(out.max_active_servers == 5, "peak of {} servers", out.max_active_servers);
    ensure!(
        out.metrics.iter().all(|m| m.active_servers <= 5),
        "metrics show more than 5 servers"
    );
    for (t, _) in &adds {
        let hot = out.metrics.iter().any(|m| m.t == *t && m.load > 0.70);
        ensure!(hot, "addition at t={t} without a server above 0.70");
        let applied = out.decisions.iter().any(|d| {
            d.at == *t && d.kind == DecisionKind::Report && d.detail.contains("outcomes=[applied]")
        });
        ensure!(applied, "addition at t={t} has no applied report");
    }
    let last_add = adds.last().unwrap().0;
    let noops = out
        .decisions
        .iter()
        .filter(|d| d.kind == DecisionKind::Noop && d.at >= last_add)
        .count();
    ensure!(noops > 0, "no no-op logged at the cap");
    let steady = out.metrics.iter().filter(|m| m.t >= 2100);
    ensure!(
        steady.clone().all(|m| (m.load - 0.80).abs() < 1e-12),
        "load not steady at 0.80 after the ramp"
    );
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "adds at {:?}, {noops} no-ops at cap, {elapsed:.2?}",
        adds.iter().map(|a| a.0).collect::<Vec<_>>()
    ))
}

/// Per-tick load series per server from the metrics trace.
fn series(out: &RunOutput) -> BTreeMap<String, oracles::Series> {
    let mut by_server: BTreeMap<String, oracles::Series> = BTreeMap::new();
    for m in &out.metrics {
        by_server.entry(m.server_id.clone()).or_default().insert(m.t, m.load);
    }
    by_server
}

fn first_very_low(out: &RunOutput) -> Option<Tick> {
    out.decisions
        .iter()
        .find(|d| d.kind == DecisionKind::Request && d.event == "very_low_load")
        .map(|d| d.at)
}

fn check_sustain(s: &Scenario, label: &str) -> Result<(Tick, RunOutput, Duration), String> {
    let (out, elapsed) = timed_run(s);
    let expected = series(&out)
        .values()
        .filter_map(|ser| oracles::first_sustained_low(ser, 0.05, 7200, 0))
        .min()
        .ok_or(format!("{label}: oracle finds no sustained window"))?;
    let got = first_very_low(&out).ok_or(format!("{label}: very_low_load never raised"))?;
    ensure!(
        got >= expected && got <= expected + SENSOR_CYCLE,
        "{label}: very_low_load at {got}, oracle window completes at {expected}"
    );
    Ok((expected, out, elapsed))
}

fn criterion_2() -> Outcome {
    let s = scenario("scaledown.scn");
    let (expected, out, elapsed) = check_sustain(&s, "with spike")?;
    let mut calm = s.clone();
    let calm_points: Vec<(Tick, f64)> = s
        .workload
        .breakpoints()
        .iter()
        .copied()
        .filter(|(t, _)| *t != 6600 && *t != 6610)
        .collect();
    calm.workload = mapek::Workload::new(calm_points).unwrap();
    let (calm_expected, _, _) = check_sustain(&calm, "without spike")?;
    ensure!(
        calm_expected < expected,
        "spike did not reset the sustain ({calm_expected} vs {expected})"
    );
    let spike_peak = out
        .metrics
        .iter()
        .filter(|m| (6600..6610).contains(&m.t))
        .map(|m| m.load)
        .fold(0.0, f64::max);
    ensure!((spike_peak - 0.10).abs() < 1e-12, "spike load {spike_peak}, expected 0.10");
    let removals = adaptations(&out).iter().filter(|(_, k)| *k == Kind::Remove).count();
    ensure!(out.max_active_servers == 5, "never reached 5 servers");
    ensure!(out.final_servers.len() == 1, "ended with {} servers", out.final_servers.len());
    ensure!(removals == 4, "{removals} removals");
    ensure!(out.metrics.iter().all(|m| m.active_servers >= 1), "dropped below min_servers");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "first very_low_load at {} (oracle {expected}, {calm_expected} without spike), 5 -> 1 servers, {elapsed:.2?}",
        first_very_low(&out).unwrap()
    ))
}

fn criterion_3() -> Outcome {
    let s = scenario("unresponsive.scn");
    ensure!(s.faults == [(ElementId::from("s2"), FAULT_AT)], "scenario fault changed");
    let (lp, farm) = drive(&s, |_, _, _| {});
    let k = lp.knowledge();
    let requests: Vec<_> = k
        .decisions()
        .iter()
        .filter(|d| d.kind == DecisionKind::Request && d.event == "unresponsive")
        .collect();
    ensure!(requests.len() == 1, "{} stale requests", requests.len());
    let raised = requests[0].at;
    let eligible = FAULT_AT + STALE_WINDOW;
    let first_cycle = k
        .log()
        .iter()
        .map(|st| st.at)
        .find(|&at| at > eligible)
        .ok_or("no analyzer cycle after eligibility")?;
    ensure!(raised == first_cycle, "raised at {raised}, first cycle after {eligible} is {first_cycle}");
    ensure!(raised <= eligible + 1 + SENSOR_CYCLE, "raised at {raised}, too late");
    let plans: Vec<_> = k.decisions().iter().filter(|d| d.kind == DecisionKind::Plan).collect();
    ensure!(plans.len() == 1, "{} plans", plans.len());
    ensure!(
        plans[0].element == "s2" && plans[0].detail.contains("remove_server(s2)"),
        "wrong plan: {}",
        plans[0]
    );
    ensure!(
        farm.elements() == [ElementId::from("s1"), ElementId::from("s3")],
        "farm ended with {:?}",
        farm.elements()
    );
    Ok(format!("stale request at t={raised} (eligible after {eligible}), one removal of s2"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut emitted_total = 0;
    for trace in 0..200 {
        let len = rng.gen_range(20..300);
        let mut values: Vec<i64> = Vec::with_capacity(len);
        let mut v: i64 = rng.gen_range(0..2000);
        for _ in 0..len {
            v = match rng.gen_range(0..10) {
                0 => 0,
                1 if v % 5 == 0 => v + v / 5,
                2 if v % 5 == 0 => v - v / 5,
                3 => rng.gen_range(0..2000),
                _ => (v + rng.gen_range(-150..=150)).max(0),
            };
            values.push(v);
        }
        let expected = oracles::emitted_indices(&values, 1, 5);
        let mut sensor = Sensor::new(
            ComponentId::sensor("probe"),
            StateKey::new("load", "s1"),
            SensorMode::EventTriggered {
                relative_delta: 0.20,
                fallback_period: None,
            },
        )
        .unwrap();
        let got: Vec<usize> = values
            .iter()
            .enumerate()
            .filter_map(|(i, &milli)| {
                sensor
                    .observe(milli as f64 / 1000.0, i as Tick)
                    .unwrap()
                    .map(|_| i)
            })
            .collect();
        ensure!(got == expected, "trace {trace}: emitted {got:?}, oracle {expected:?}");
        emitted_total += got.len();
    }
    Ok(format!("200 traces, {emitted_total} emissions, 0 discrepancies"))
}

fn random_symptoms(rng: &mut ChaCha8Rng) -> Vec<(Symptom, OracleSymptom)> {
    let upper = rng.gen_range(50..90) as f64 / 100.0;
    let lower = rng.gen_range(10..40) as f64 / 100.0;
    let sustain = rng.gen_range(50..300);
    let stale = rng.gen_range(30..150);
    vec![
        (Symptom::threshold_above("hi", "load", upper), OracleSymptom::Above { upper }),
        (
            Symptom::below_sustained("lo", "load", lower, sustain),
            OracleSymptom::BelowSustained { lower, window: sustain },
        ),
        (Symptom::stale("st", "load", stale), OracleSymptom::Stale { window: stale }),
    ]
}

/// Independent model of request suppression.
#[derive(Default)]
struct Suppression {
    open: Vec<(String, String)>,
    resolved: BTreeMap<(String, String), Tick>,
    last_adaptation: Option<Tick>,
}

impl Suppression {
    fn blocked(&self, event: &str, kind: SymptomKind, window: Tick, element: &str, evidence: Tick, now: Tick) -> bool {
        let key = (event.to_string(), element.to_string());
        if self.open.contains(&key) {
            return true;
        }
        match kind {
            SymptomKind::Stale => self.resolved.get(&key).is_some_and(|&r| now - r <= window),
            _ => self.last_adaptation.is_some_and(|a| evidence <= a),
        }
    }
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut raised_total, mut detections, mut discrepancies) = (0, 0, 0);
    let mut first_problem = None;
    for log_no in 0..100 {
        let symptoms = random_symptoms(&mut rng);
        let mut k = Knowledge::default();
        for (s, _) in &symptoms {
            k.symptoms_mut().add_symptom(s.clone()).unwrap();
        }
        let analyzer = Analyzer::new(ComponentId::analyzer("a"));
        let mut model = Suppression::default();
        let mut states: Vec<RuntimeState> = Vec::new();
        let mut current: BTreeMap<StateKey, Sample> = BTreeMap::new();
        let elements = rng.gen_range(1..=4);
        let mut now: Tick = 0;
        for _ in 0..rng.gen_range(50..250) {
            now += rng.gen_range(0..40);
            for e in 0..elements {
                if rng.gen_bool(0.5) {
                    let value = if rng.gen_bool(0.5) { rng.gen_range(0.0..0.5) } else { rng.gen_range(0.0..1.0) };
                    current.insert(StateKey::new("load", format!("e{e}")), Sample { value, at: now });
                }
            }
            if rng.gen_bool(0.02) {
                let gone = StateKey::new("load", format!("e{}", rng.gen_range(0..elements)));
                current.remove(&gone);
            }
            let state = RuntimeState { at: now, entries: current.clone() };
            states.push(state.clone());
            k.append_state(state.clone()).unwrap();
            let requests = analyzer.analyze(&state, &mut k).unwrap();
            for (s, oracle) in &symptoms {
                let holds = oracles::holding(&states, *oracle, "load", now);
                detections += holds.len();
                let window = s.window.unwrap_or(0);
                let expected = holds.iter().find(|e| {
                    let evidence = state.entries[&StateKey::new("load", e.as_str())].at;
                    !model.blocked(&s.event_name, s.kind, window, e, evidence, now)
                });
                let got: Vec<&AdaptationRequest> =
                    requests.iter().filter(|r| r.event_name == s.event_name).collect();
                raised_total += got.len();
                let got_element = got.first().map(|r| r.element.as_str().to_string());
                let sound = got.iter().all(|r| holds.contains(&r.element.as_str().to_string()));
                if got.len() > 1 || !sound || got_element.as_ref() != expected {
                    discrepancies += 1;
                    first_problem.get_or_insert(format!(
                        "log {log_no} t={now} {}: raised {got_element:?}, oracle holds {holds:?} expects {expected:?}",
                        s.event_name
                    ));
                }
                if let Some(e) = got_element {
                    model.open.push((s.event_name.clone(), e));
                }
            }
            if !model.open.is_empty() && rng.gen_bool(0.3) {
                let (event, element) = model.open.remove(rng.gen_range(0..model.open.len()));
                k.resolutions_mut().resolve(&event, &ElementId::new(element.clone()), now);
                model.resolved.insert((event, element), now);
                model.last_adaptation = Some(model.last_adaptation.map_or(now, |a| a.max(now)));
            }
        }
    }
    ensure!(discrepancies == 0, "{discrepancies} discrepancies, first: {}", first_problem.unwrap());
    Ok(format!("100 logs, {raised_total} requests, {detections} oracle detections, 0 discrepancies"))
}

fn criterion_6() -> Outcome {
    let s = parse_scenario(
        "duration = 1200\n\
         topology = hierarchical\n\
         farm.initial_servers = 2\n\
         farm.max_servers = 8\n\
         symptom.high_load.kind = threshold_above\n\
         symptom.high_load.upper = 0.70\n\
         symptom.unresponsive.kind = stale\n\
         symptom.unresponsive.window = 300\n\
         workload.at.0 = 160\n",
    )
    .unwrap();
    let key = StateKey::new("load", "s3");
    let mut added_at = None;
    let mut seen_at = None;
    let mut removed_at = None;
    let mut present_after_removal = false;
    let s3 = ElementId::from("s3");
    let (lp, _) = drive(&s, |t, lp, farm| {
        // the added server goes silent shortly after joining
        if t == FAULT_AT / 10 && farm.server(&s3).is_some() {
            farm.inject_fault(&s3, t).unwrap();
        }
        let has_server = farm.server(&s3).is_some();
        let in_state = lp.monitor(MAIN_MONITOR).unwrap().state().get(&key).is_some();
        if has_server && added_at.is_none() {
            added_at = Some(t);
        }
        if in_state && seen_at.is_none() {
            seen_at = Some(t);
        }
        if added_at.is_some() && !has_server && removed_at.is_none() {
            removed_at = Some(t);
        }
        if removed_at.is_some() && in_state {
            present_after_removal = true;
        }
    });
    let added = added_at.ok_or("s3 never added")?;
    let seen = seen_at.ok_or("s3 never reached the main monitor")?;
    ensure!(seen <= added + SENSOR_CYCLE, "s3 visible at {seen}, added at {added}");
    let removed = removed_at.ok_or("s3 never removed")?;
    ensure!(!present_after_removal, "s3 still in the main state after removal");
    ensure!(lp.monitor("monitor_s3").is_none(), "sub-monitor survived removal");
    let trace = lp.bus().trace();
    let plan_idx = trace
        .iter()
        .rposition(|l| l.starts_with(&format!("t={removed} ")) && l.contains("-> executor:executor"))
        .ok_or("removal plan delivery not traced")?;
    let late = trace[plan_idx..].iter().find(|l| l.contains("monitor:monitor_s3 ->"));
    ensure!(late.is_none(), "delivery after removal: {}", late.unwrap());
    Ok(format!("s3 added at {added}, aggregated at {seen}, removed at {removed}, no later deliveries"))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let base = scenario("unresponsive.scn");
    let mut applied = 0;
    for case in 0..50 {
        let mut config = base.farm.clone();
        config.initial_servers = rng.gen_range(1..=5);
        config.max_servers = 6;
        let mut farm = Farm::new(config, base.workload.clone()).unwrap();
        for id in farm.elements() {
            farm.set_property(&format!("capacity_{id}"), rng.gen_range(10.0..200.0)).unwrap();
            farm.set_property(&format!("routing_weight_{id}"), rng.gen_range(0.0..3.0)).unwrap();
        }
        farm.step(rng.gen_range(0..2000));
        let before = farm.snapshot();
        let mut steps = Vec::new();
        for _ in 0..rng.gen_range(1..6) {
            let ids = farm.elements();
            let pick = |rng: &mut ChaCha8Rng| -> ElementId {
                if rng.gen_bool(0.85) {
                    ids[rng.gen_range(0..ids.len())].clone()
                } else {
                    ElementId::from("s99")
                }
            };
            let step = match rng.gen_range(0..4) {
                0 => PlannedStep { action: Action::AddServer, target: None },
                1 => PlannedStep {
                    action: Action::RemoveServer(Selector::TriggeringElement),
                    target: Some(pick(&mut rng)),
                },
                2 => PlannedStep {
                    action: Action::SetProperty {
                        property: format!("routing_weight_{}", pick(&mut rng)),
                        value: rng.gen_range(0.0..5.0),
                    },
                    target: None,
                },
                _ => PlannedStep {
                    action: Action::SetProperty {
                        property: "default_capacity".into(),
                        value: rng.gen_range(1.0..500.0),
                    },
                    target: None,
                },
            };
            steps.push(step);
        }
        let n = steps.len();
        let dispatch = match rng.gen_range(0..3) {
            0 => DispatchMode::Sequential,
            1 => DispatchMode::Concurrent,
            _ => {
                let first = rng.gen_range(1..=n);
                if first == n { DispatchMode::Mixed(vec![n]) } else { DispatchMode::Mixed(vec![first, n - first]) }
            }
        };
        let plan = ChangePlan {
            id: case + 1,
            request: AdaptationRequest {
                event_name: "random".into(),
                element: "s1".into(),
                window: (0, 0),
                occurrences: 1,
                raised_at: 0,
            },
            rule_index: 0,
            steps,
            dispatch,
            created_at: 0,
        };
        let mut k = Knowledge::default();
        let mut ex = Executor::new(ComponentId::executor("x"));
        ex.wire(Effector::new(
            ComponentId::effector("e"),
            [Verb::AddServer, Verb::RemoveServer, Verb::SetProperty],
            "farm",
        ));
        let report = ex.execute(&plan, &mut farm, &mut k, 1).map_err(|e| e.to_string())?;
        applied += report.effects.len();
        ex.rollback(report.restore_point_id, &mut farm, &mut k, 2)
            .map_err(|e| format!("case {case}: {e}"))?;
        let after = farm.snapshot();
        let bits = |s: &mapek::SystemSnapshot| {
            s.properties.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect::<Vec<_>>()
        };
        ensure!(after.topology == before.topology, "case {case}: topology {:?} vs {:?}", after.topology, before.topology);
        ensure!(bits(&after) == bits(&before), "case {case}: properties differ");
    }
    Ok(format!("50 plans, {applied} applied effects undone bit-exact"))
}

fn criterion_8() -> Outcome {
    let mut cases: Vec<(String, Scenario)> = ["scaleup.scn", "scaledown.scn", "unresponsive.scn"]
        .iter()
        .map(|n| (n.to_string(), scenario(n)))
        .collect();
    let mut jittered = scenario("scaleup.scn");
    jittered.farm.jitter = 0.05;
    cases.push(("scaleup.scn with jitter".into(), jittered));
    for (name, s) in &cases {
        let opts = RunOptions { seed: Some(42), ..Default::default() };
        let a = simulate(s, &policies(), &opts).unwrap();
        let b = simulate(s, &policies(), &opts).unwrap();
        ensure!(a.metrics_csv() == b.metrics_csv(), "{name}: metrics differ");
        ensure!(a.decision_log() == b.decision_log(), "{name}: decision logs differ");
    }
    Ok(format!("{} scenarios byte-identical across reruns", cases.len()))
}

fn criterion_9() -> Outcome {
    let source = include_str!("reference.rs");
    let lines = source.lines().count();
    ensure!(lines <= 200, "reference controller has {lines} lines");
    let mut summary = Vec::new();
    for name in ["scaleup.scn", "scaledown.scn"] {
        let s = scenario(name);
        let (out, _) = timed_run(&s);
        let framework = adaptations(&out);
        let oracle = reference::run(s.build_farm().unwrap(), s.duration);
        ensure!(
            framework.len() == oracle.len(),
            "{name}: framework {framework:?} vs reference {oracle:?}"
        );
        for (f, r) in framework.iter().zip(&oracle) {
            ensure!(f.1 == r.1, "{name}: kind mismatch {f:?} vs {r:?}");
            ensure!(f.0.abs_diff(r.0) <= SENSOR_CYCLE, "{name}: timing {f:?} vs {r:?}");
        }
        let worst = framework.iter().zip(&oracle).map(|(f, r)| f.0.abs_diff(r.0)).max().unwrap_or(0);
        summary.push(format!("{name}: {} decisions, max |dt| {worst}", framework.len()));
    }
    Ok(format!("{} (reference {lines} lines)", summary.join(", ")))
}

fn criterion_10() -> Outcome {
    const SENSORS: usize = 8;
    const TOTAL: usize = 10_000;
    let mut main = Monitor::new(ComponentId::monitor("main"));
    for i in 0..SENSORS {
        main.register_property(PropertyDescriptor::system("load", "", ElementId::new(format!("s{i}"))))
            .unwrap();
    }
    let monitor = Arc::new(SharedMonitor::new(main));
    let knowledge = SharedKnowledge::new(Knowledge::default());
    let handles: Vec<_> = (0..SENSORS)
        .map(|i| {
            let (monitor, knowledge) = (Arc::clone(&monitor), knowledge.clone());
            std::thread::spawn(move || {
                let mut sensor = Sensor::new(
                    ComponentId::sensor(format!("load_s{i}")),
                    StateKey::new("load", format!("s{i}")),
                    SensorMode::EventTriggered { relative_delta: 0.2, fallback_period: None },
                )
                .unwrap();
                let (mut accepted, mut errors) = (0, 0);
                for n in 0..TOTAL / SENSORS {
                    let value = if n % 2 == 0 { 0.2 } else { 0.8 };
                    let Some(reading) = sensor.observe(value, n as Tick).unwrap() else { continue };
                    match monitor.update(&reading, &knowledge) {
                        Ok(Some(_)) => accepted += 1,
                        Ok(None) => {}
                        Err(_) => errors += 1,
                    }
                }
                (accepted, errors)
            })
        })
        .collect();
    let (mut accepted, mut errors) = (0, 0);
    for h in handles {
        let (a, e) = h.join().map_err(|_| "sensor thread panicked")?;
        accepted += a;
        errors += e;
    }
    ensure!(errors == 0, "{errors} rejected readings");
    ensure!(accepted == TOTAL, "{accepted} accepted readings");
    knowledge.read(|k| {
        let log = k.log();
        ensure!(log.len() == TOTAL, "log length {}", log.len());
        let ordered = log.iter().zip(log.iter().skip(1)).all(|(a, b)| a.at <= b.at);
        ensure!(ordered, "log timestamps decrease");
        let sane = log.iter().all(|s| s.len() <= SENSORS && s.entries.values().all(|x| x.value.is_finite()));
        ensure!(sane, "malformed state in log");
        let last = log.latest().unwrap();
        ensure!(last.len() == SENSORS, "final state has {} entries", last.len());
        let expected_last = TOTAL / SENSORS - 1;
        ensure!(
            last.entries.values().all(|x| x.at == expected_last as Tick && x.value == 0.8),
            "final state is not the last reading of every sensor"
        );
        Ok(())
    })?;
    Ok(format!("{SENSORS} threads, {TOTAL} readings, log length {TOTAL}"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("scale-up with cap", criterion_1),
        ("sustained scale-down", criterion_2),
        ("unresponsive removal", criterion_3),
        ("sensor emission oracle", criterion_4),
        ("analyzer soundness/completeness", criterion_5),
        ("hierarchical wiring", criterion_6),
        ("rollback round-trip", criterion_7),
        ("determinism", criterion_8),
        ("oracle equivalence", criterion_9),
        ("concurrent-mode safety", criterion_10),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {reason}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
