//! Brute-force oracles, written without reusing library logic.

use std::collections::BTreeMap;

use mapek::{RuntimeState, Tick};

/// Event-triggered emission over integer milli-unit values: emit the first
/// value, any non-zero value after a zero, and any value that moved by at
/// least `num/den` of the last emitted one.
pub fn emitted_indices(values: &[i64], num: i64, den: i64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last: Option<i64> = None;
    for (i, &v) in values.iter().enumerate() {
        let emit = match last {
            None => true,
            Some(0) => v != 0,
            Some(l) => den * (v - l).abs() >= num * l.abs(),
        };
        if emit {
            out.push(i);
            last = Some(v);
        }
    }
    out
}

/// Per-tick load samples for one server: `tick -> load`.
pub type Series = BTreeMap<Tick, f64>;

/// First tick `now` at which every tick of `[now - window, now]` has a load
/// below `lower` (the server existing throughout), scanning from `from`.
pub fn first_sustained_low(series: &Series, lower: f64, window: Tick, from: Tick) -> Option<Tick> {
    let (&first, _) = series.iter().next()?;
    let (&last, _) = series.iter().next_back()?;
    let mut now = from.max(first + window);
    while now <= last {
        let start = now - window;
        match (start..=now).rev().find(|t| !series.get(t).is_some_and(|&v| v < lower)) {
            None => return Some(now),
            // no window containing `bad` can qualify
            Some(bad) => now = bad + window + 1,
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleSymptom {
    Above { upper: f64 },
    BelowSustained { lower: f64, window: Tick },
    Stale { window: Tick },
}

/// Elements (in ascending order) for which the symptom holds at `now`,
/// scanning the full list of logged states.
pub fn holding(states: &[RuntimeState], symptom: OracleSymptom, property: &str, now: Tick) -> Vec<String> {
    let Some(latest) = states.iter().rfind(|s| s.at <= now) else {
        return Vec::new();
    };
    let value = |s: &RuntimeState, e: &str| {
        s.entries
            .iter()
            .find(|(k, _)| k.property == property && k.element.as_str() == e)
            .map(|(_, sample)| (sample.value, sample.at))
    };
    let mut elements: Vec<String> = latest
        .entries
        .keys()
        .filter(|k| k.property == property)
        .map(|k| k.element.as_str().to_string())
        .collect();
    elements.sort();
    elements.dedup();
    elements
        .into_iter()
        .filter(|e| match symptom {
            OracleSymptom::Above { upper } => value(latest, e).is_some_and(|(v, _)| v > upper),
            OracleSymptom::Stale { window } => value(latest, e).is_some_and(|(_, at)| now - at > window),
            OracleSymptom::BelowSustained { lower, window } => {
                if now < window {
                    return false;
                }
                let start = now - window;
                let low = |s: &RuntimeState| value(s, e).is_some_and(|(v, _)| v < lower);
                let carried = states.iter().rfind(|s| s.at <= start);
                let inside: Vec<&RuntimeState> =
                    states.iter().filter(|s| s.at >= start && s.at <= now).collect();
                carried.is_some_and(low) && !inside.is_empty() && inside.iter().all(|s| low(s))
            }
        })
        .collect()
}
