//! Monolithic reference controller: direct if/else over the farm with the
//! same thresholds, no loop components.

use std::collections::{BTreeMap, BTreeSet};

use mapek::execution::ManagedSystem;
use mapek::monitoring::{PropertySource, StateKey};
use mapek::simfarm::Farm;
use mapek::{ElementId, Tick};

pub const UPPER: f64 = 0.70;
pub const LOWER: f64 = 0.05;
pub const SUSTAIN: Tick = 7200;
pub const DELTA: f64 = 0.20;
pub const HEARTBEAT: Tick = 300;
pub const CAP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Add,
    Remove,
}

#[derive(Default)]
struct Controller {
    /// Last reported value and its time, per server.
    last: BTreeMap<ElementId, (f64, Tick)>,
    /// Start of the current run of low reports, per server.
    low_since: BTreeMap<ElementId, Tick>,
    /// Requests that hit a false condition stay suppressed.
    suppressed: BTreeSet<(bool, ElementId)>,
    last_adaptation: Option<Tick>,
    decisions: Vec<(Tick, Kind)>,
}

impl Controller {
    fn sensor_fires(&self, id: &ElementId, v: f64, t: Tick) -> bool {
        match self.last.get(id) {
            None => true,
            Some(&(prev, at)) => {
                let moved = if prev == 0.0 {
                    v != 0.0
                } else {
                    (v - prev).abs() >= DELTA * prev.abs() * (1.0 - 1e-9)
                };
                moved || t - at >= HEARTBEAT
            }
        }
    }

    fn fresh(&self, at: Tick) -> bool {
        self.last_adaptation.is_none_or(|a| at > a)
    }

    fn report(&mut self, id: ElementId, v: f64, t: Tick) {
        self.last.insert(id.clone(), (v, t));
        if v < LOWER {
            self.low_since.entry(id).or_insert(t);
        } else {
            self.low_since.remove(&id);
        }
    }

    fn react(&mut self, farm: &mut Farm, t: Tick) {
        let hot = self
            .last
            .iter()
            .find(|(id, &(v, at))| v > UPPER && self.fresh(at) && !self.suppressed.contains(&(true, (*id).clone())))
            .map(|(id, _)| id.clone());
        if let Some(id) = hot {
            if farm.elements().len() < CAP {
                farm.add_element().expect("below cap");
                self.decisions.push((t, Kind::Add));
                self.last_adaptation = Some(t);
            } else {
                self.suppressed.insert((true, id));
            }
        }
        let idle = self
            .last
            .iter()
            .find(|(id, &(_, at))| {
                self.low_since.get(*id).is_some_and(|&b| t >= b + SUSTAIN)
                    && self.fresh(at)
                    && !self.suppressed.contains(&(false, (*id).clone()))
            })
            .map(|(id, _)| id.clone());
        if let Some(id) = idle {
            if farm.elements().len() > 1 {
                let mut lowest: Option<(&ElementId, f64)> = None;
                for (x, &(v, _)) in &self.last {
                    if lowest.is_none_or(|(_, best)| v < best) {
                        lowest = Some((x, v));
                    }
                }
                let victim = lowest.expect("servers reported").0.clone();
                farm.remove_element(&victim).expect("above minimum");
                self.last.remove(&victim);
                self.low_since.remove(&victim);
                self.decisions.push((t, Kind::Remove));
                self.last_adaptation = Some(t);
            } else {
                self.suppressed.insert((false, id));
            }
        }
    }
}

/// Runs the farm for `duration` ticks and returns the add/remove decisions.
pub fn run(mut farm: Farm, duration: Tick) -> Vec<(Tick, Kind)> {
    let mut c = Controller::default();
    for t in 0..duration {
        farm.step(t);
        for id in farm.elements() {
            if farm.server(&id).is_none() {
                continue;
            }
            let Some(v) = farm.read(&StateKey::new("load", id.clone())) else {
                continue;
            };
            if c.sensor_fires(&id, v, t) {
                c.report(id, v, t);
                c.react(&mut farm, t);
            }
        }
    }
    c.decisions
}
