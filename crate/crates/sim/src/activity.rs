//! Turn an activity plan into log events, keeping an independent record of
//! what the plan means for each learning metric.

use std::collections::BTreeMap;

use mmtl_core::simlog::LogEvent;
use serde::{Deserialize, Serialize};

use crate::spec::ActivityPlan;
use crate::SimError;

const START: &str = "carbon_dioxide";

/// One full pass around the cycle: (zone, from, to).
const CYCLE: [(&str, &str, &str); 4] = [
    ("chloroplast", "carbon_dioxide", "sugar"),
    ("mouse", "sugar", "water"),
    ("roots", "water", "oxygen"),
    ("mouse", "oxygen", "carbon_dioxide"),
];

/// Metrics the plan produces by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedMetrics {
    pub first_transition_latency: Option<f64>,
    pub successful_transitions: usize,
    pub cycles_completed: usize,
    pub mean_transition_interval: Option<f64>,
    pub time_share_per_molecule: BTreeMap<String, f64>,
    pub initial_time_share_per_molecule: BTreeMap<String, f64>,
}

struct Planner<'a> {
    student: &'a str,
    night: &'a [[f64; 2]],
    step: f64,
    events: Vec<LogEvent>,
    /// (time, molecule) whenever the embodied molecule changes.
    states: Vec<(f64, String)>,
    successes: Vec<f64>,
    failures_left: usize,
}

impl Planner<'_> {
    /// First time at or after `t` that is clearly daytime; the boundaries
    /// themselves count as night.
    fn daylight(&self, mut t: f64) -> f64 {
        while let Some([_, b]) = self.night.iter().find(|[a, b]| t >= *a && t <= *b) {
            t = *b + 0.4 * self.step;
        }
        t
    }

    /// Emit a valid move at `t` (pushed past night when it needs light).
    /// Returns the actual time.
    fn valid_move(&mut self, t: f64, (zone, from, to): (&str, &str, &str)) -> f64 {
        let t = if zone == "chloroplast" { self.daylight(t) } else { t };
        self.events.push(LogEvent::zone(t - 0.4 * self.step, self.student, zone));
        if self.failures_left > 0 {
            self.failures_left -= 1;
            self.events.push(LogEvent::attempt(t - 0.2 * self.step, self.student, from, to, false));
        }
        self.events.push(LogEvent::attempt(t, self.student, from, to, true));
        self.states.push((t, to.to_string()));
        self.successes.push(t);
        t
    }
}

/// Events and planned metrics for one student's plan. `session_end` bounds
/// the time shares.
pub fn plan_activity(
    student: &str,
    plan: &ActivityPlan,
    night: &[[f64; 2]],
    session_end: f64,
) -> Result<(Vec<LogEvent>, PlannedMetrics), SimError> {
    let mut p = Planner {
        student,
        night,
        step: plan.step_seconds,
        events: vec![LogEvent::avatar(plan.start, student, START)],
        states: vec![(plan.start, START.to_string())],
        successes: Vec::new(),
        failures_left: plan.failures,
    };

    let mut t = plan.start + plan.first_transition_after;
    let mut cycle_done_at = None;
    for c in 0..plan.cycles {
        for (k, step) in CYCLE.into_iter().enumerate() {
            t = p.valid_move(t, step) + plan.step_seconds;
            if c == 0 && k == 3 {
                cycle_done_at = Some(t - plan.step_seconds);
            }
        }
    }

    // Remaining successes run as partial chains from carbon dioxide that stop
    // at oxygen and restart without closing the cycle.
    let mut extra = plan.successes - 4 * plan.cycles;
    let mut invalid_left = plan.invalid_successes;
    let mut first_chain = true;
    while extra > 0 {
        if !first_chain {
            let r = t - 0.5 * plan.step_seconds;
            if invalid_left > 0 {
                invalid_left -= 1;
                // Reported as a success but the mouse is the only way back.
                p.events.push(LogEvent::attempt(r, student, "oxygen", START, true));
            } else {
                p.events.push(LogEvent::avatar(r, student, START));
            }
            p.states.push((r, START.to_string()));
        }
        for &step in CYCLE.iter().take(3).take(extra) {
            t = p.valid_move(t, step) + plan.step_seconds;
            extra -= 1;
        }
        first_chain = false;
    }
    if invalid_left > 0 {
        return Err(SimError::SpecViolation(format!(
            "{student}: more invalid successes than chain restarts"
        )));
    }
    if p.failures_left > 0 {
        return Err(SimError::SpecViolation(format!("{student}: more failures than moves")));
    }
    if let Some(last) = p.events.iter().map(|e| e.time).reduce(f64::max) {
        if last >= session_end {
            return Err(SimError::SpecViolation(format!("{student}: activity runs past the session end")));
        }
    }

    let successes = p.successes.len();
    let metrics = PlannedMetrics {
        first_transition_latency: p.successes.first().map(|s| s - plan.start),
        successful_transitions: successes,
        cycles_completed: plan.cycles,
        mean_transition_interval: (successes >= 2)
            .then(|| (p.successes[successes - 1] - p.successes[0]) / (successes - 1) as f64),
        time_share_per_molecule: time_shares(&p.states, session_end),
        initial_time_share_per_molecule: time_shares(&p.states, cycle_done_at.unwrap_or(session_end)),
    };
    let mut events = p.events;
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok((events, metrics))
}

/// Fraction of `[first change, until]` spent in each molecule.
fn time_shares(states: &[(f64, String)], until: f64) -> BTreeMap<String, f64> {
    let mut held: BTreeMap<String, f64> = BTreeMap::new();
    for (i, (t, m)) in states.iter().enumerate() {
        let next = states.get(i + 1).map_or(until, |s| s.0.min(until));
        if next > *t {
            *held.entry(m.clone()).or_default() += next - t;
        }
    }
    let total: f64 = held.values().sum();
    held.into_iter().map(|(m, d)| (m, d / total)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(cycles: usize, successes: usize) -> ActivityPlan {
        ActivityPlan {
            start: 2.0,
            first_transition_after: 10.0,
            step_seconds: 4.0,
            cycles,
            successes,
            failures: 2,
            invalid_successes: 1,
        }
    }

    #[test]
    fn counts_follow_the_plan() {
        let (events, m) = plan_activity("s", &plan(2, 13), &[], 200.0).unwrap();
        assert_eq!(m.successful_transitions, 13);
        assert_eq!(m.cycles_completed, 2);
        assert_eq!(m.first_transition_latency, Some(10.0));
        assert!(events.windows(2).all(|w| w[0].time <= w[1].time));
        let total: f64 = m.time_share_per_molecule.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn night_delays_light_reactions() {
        let p = ActivityPlan { invalid_successes: 0, ..plan(1, 4) };
        let (_, m) = plan_activity("s", &p, &[[5.0, 30.0]], 200.0).unwrap();
        // First move needs light: pushed to 30 + 0.4 * 4.
        assert_eq!(m.first_transition_latency, Some(31.6 - 2.0));
    }

    #[test]
    fn overlong_plan_rejected() {
        assert!(plan_activity("s", &plan(8, 40), &[], 50.0).is_err());
    }
}
