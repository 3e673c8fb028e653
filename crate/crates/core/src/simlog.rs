//! Simulation log interpretation: embodied molecule states, transition
//! outcomes checked against a rule table, day/night system state, and
//! per-student learning metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimlogError {
    #[error("line {line}: malformed event: {reason}")]
    MalformedEvent { line: usize, reason: String },
    #[error("line {line}: unknown event kind `{kind}`")]
    UnknownKind { line: usize, kind: String },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("no state data for student `{0}`")]
    NoStateData(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimState {
    Day,
    Night,
}

impl fmt::Display for SimState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimState::Day => "day",
            SimState::Night => "night",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventPayload {
    AvatarChange { molecule: String },
    ZoneEnter { zone: String },
    TransitionAttempt { from: String, to: String, success: bool },
    SimState { state: SimState },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEvent {
    pub time: f64,
    /// Absent only for system events.
    pub student_id: Option<String>,
    pub payload: EventPayload,
}

/// Flat JSON Lines form: `{"t": 3.0, "sid": "s1", "kind": "avatar_change", "molecule": "water"}`.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sid: Option<String>,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    molecule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    zone: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    from: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    to: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    success: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    state: Option<SimState>,
}

const KINDS: [&str; 4] = ["avatar_change", "zone_enter", "transition_attempt", "sim_state"];

impl LogEvent {
    pub fn avatar(time: f64, student: &str, molecule: &str) -> Self {
        LogEvent {
            time,
            student_id: Some(student.into()),
            payload: EventPayload::AvatarChange { molecule: molecule.into() },
        }
    }

    pub fn zone(time: f64, student: &str, zone: &str) -> Self {
        LogEvent { time, student_id: Some(student.into()), payload: EventPayload::ZoneEnter { zone: zone.into() } }
    }

    pub fn attempt(time: f64, student: &str, from: &str, to: &str, success: bool) -> Self {
        LogEvent {
            time,
            student_id: Some(student.into()),
            payload: EventPayload::TransitionAttempt { from: from.into(), to: to.into(), success },
        }
    }

    pub fn sim_state(time: f64, state: SimState) -> Self {
        LogEvent { time, student_id: None, payload: EventPayload::SimState { state } }
    }

    pub fn kind(&self) -> &'static str {
        match self.payload {
            EventPayload::AvatarChange { .. } => KINDS[0],
            EventPayload::ZoneEnter { .. } => KINDS[1],
            EventPayload::TransitionAttempt { .. } => KINDS[2],
            EventPayload::SimState { .. } => KINDS[3],
        }
    }

    /// Serialize to one JSON Lines record.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_raw()).expect("plain struct serializes")
    }

    fn to_raw(&self) -> RawEvent {
        let mut raw = RawEvent { t: self.time, sid: self.student_id.clone(), kind: self.kind().into(), ..Default::default() };
        match &self.payload {
            EventPayload::AvatarChange { molecule } => raw.molecule = Some(molecule.clone()),
            EventPayload::ZoneEnter { zone } => raw.zone = Some(zone.clone()),
            EventPayload::TransitionAttempt { from, to, success } => {
                raw.from = Some(from.clone());
                raw.to = Some(to.clone());
                raw.success = Some(*success);
            }
            EventPayload::SimState { state } => raw.state = Some(*state),
        }
        raw
    }

    fn molecules(&self) -> Vec<&str> {
        match &self.payload {
            EventPayload::AvatarChange { molecule } => vec![molecule],
            EventPayload::TransitionAttempt { from, to, .. } => vec![from, to],
            _ => Vec::new(),
        }
    }
}

enum EventFault {
    UnknownKind(String),
    Malformed(String),
}

fn event_from_value(value: serde_json::Value) -> Result<LogEvent, EventFault> {
    let malformed = EventFault::Malformed;
    let kind = value
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| malformed("missing `kind`".into()))?;
    if !KINDS.contains(&kind) {
        return Err(EventFault::UnknownKind(kind.into()));
    }
    let raw: RawEvent = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    if !(raw.t.is_finite() && raw.t >= 0.0) {
        return Err(malformed("`t` must be finite and non-negative".into()));
    }
    let need = |v: Option<String>, field: &str| v.ok_or_else(|| malformed(format!("`{}` requires `{field}`", raw.kind)));
    let payload = match raw.kind.as_str() {
        "avatar_change" => EventPayload::AvatarChange { molecule: need(raw.molecule.clone(), "molecule")? },
        "zone_enter" => EventPayload::ZoneEnter { zone: need(raw.zone.clone(), "zone")? },
        "transition_attempt" => EventPayload::TransitionAttempt {
            from: need(raw.from.clone(), "from")?,
            to: need(raw.to.clone(), "to")?,
            success: raw.success.ok_or_else(|| malformed("`transition_attempt` requires `success`".into()))?,
        },
        _ => EventPayload::SimState {
            state: raw.state.ok_or_else(|| malformed("`sim_state` requires `state`".into()))?,
        },
    };
    let is_system = matches!(payload, EventPayload::SimState { .. });
    match (&raw.sid, is_system) {
        (Some(_), true) => return Err(malformed("`sim_state` events carry no `sid`".into())),
        (None, false) => return Err(malformed(format!("`{}` requires `sid`", raw.kind))),
        _ => {}
    }
    Ok(LogEvent { time: raw.t, student_id: raw.sid, payload })
}

fn parse_line(line_no: usize, text: &str) -> Result<LogEvent, SimlogError> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| SimlogError::MalformedEvent { line: line_no, reason: e.to_string() })?;
    event_from_value(value).map_err(|f| match f {
        EventFault::UnknownKind(kind) => SimlogError::UnknownKind { line: line_no, kind },
        EventFault::Malformed(reason) => SimlogError::MalformedEvent { line: line_no, reason },
    })
}

impl Serialize for LogEvent {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_raw().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LogEvent {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        event_from_value(value).map_err(|f| match f {
            EventFault::UnknownKind(kind) => serde::de::Error::custom(format!("unknown event kind `{kind}`")),
            EventFault::Malformed(reason) => serde::de::Error::custom(reason),
        })
    }
}

/// Parse JSON Lines. Events come back sorted by time, equal times in input
/// order. With a model, molecule names are checked against it.
pub fn parse_log<R: BufRead>(source: R, model: Option<&ModelSpec>) -> Result<Vec<LogEvent>, SimlogError> {
    let mut events = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| SimlogError::MalformedEvent { line: line_no, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let event = parse_line(line_no, &line)?;
        if let Some(m) = model {
            for mol in event.molecules() {
                if !m.molecules.contains(mol) {
                    return Err(SimlogError::MalformedEvent {
                        line: line_no,
                        reason: format!("unknown molecule `{mol}`"),
                    });
                }
            }
        }
        events.push(event);
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(events)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRule {
    pub from: String,
    pub zone: String,
    /// Light condition the transformation needs, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requires: Option<SimState>,
    pub to: String,
}

/// The simulation's molecule model and its transformation rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_molecules")]
    pub molecules: BTreeSet<String>,
    pub zones: BTreeSet<String>,
    pub rules: Vec<TransitionRule>,
    pub cycle_start: String,
}

fn default_molecules() -> BTreeSet<String> {
    ["oxygen", "water", "sugar", "carbon_dioxide"].into_iter().map(String::from).collect()
}

impl ModelSpec {
    /// Sample photosynthesis model: carbon dioxide becomes sugar in the
    /// chloroplast by day, sugar is respired by the mouse into water, water
    /// taken up at the roots becomes oxygen, and the mouse breathes oxygen
    /// back out as carbon dioxide. Water can also split in the chloroplast
    /// by day.
    pub fn photosynthesis() -> Self {
        let rule = |from: &str, zone: &str, requires: Option<SimState>, to: &str| TransitionRule {
            from: from.into(),
            zone: zone.into(),
            requires,
            to: to.into(),
        };
        ModelSpec {
            molecules: default_molecules(),
            zones: ["chloroplast", "roots", "mouse"].into_iter().map(String::from).collect(),
            rules: vec![
                rule("carbon_dioxide", "chloroplast", Some(SimState::Day), "sugar"),
                rule("sugar", "mouse", None, "water"),
                rule("water", "roots", None, "oxygen"),
                rule("oxygen", "mouse", None, "carbon_dioxide"),
                rule("water", "chloroplast", Some(SimState::Day), "oxygen"),
            ],
            cycle_start: "carbon_dioxide".into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SimlogError> {
        let m: ModelSpec = serde_json::from_str(text).map_err(|e| SimlogError::InvalidModel(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), SimlogError> {
        let bad = |s: String| Err(SimlogError::InvalidModel(s));
        if !self.molecules.contains(&self.cycle_start) {
            return bad(format!("cycle_start `{}` is not a molecule", self.cycle_start));
        }
        for (i, r) in self.rules.iter().enumerate() {
            for m in [&r.from, &r.to] {
                if !self.molecules.contains(m) {
                    return bad(format!("rules[{i}]: unknown molecule `{m}`"));
                }
            }
            if !self.zones.contains(&r.zone) {
                return bad(format!("rules[{i}]: unknown zone `{}`", r.zone));
            }
        }
        Ok(())
    }

    fn allows(&self, from: &str, to: &str, zone: Option<&str>, state: SimState) -> bool {
        self.rules.iter().any(|r| {
            r.from == from && r.to == to && Some(r.zone.as_str()) == zone && r.requires.is_none_or(|s| s == state)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateInterval {
    pub start: f64,
    pub end: f64,
    pub molecule: String,
}

/// Embodied-molecule intervals for one student from the first avatar change
/// to `session_end`. Successful transition attempts also change state.
pub fn state_intervals(events: &[LogEvent], student_id: &str, session_end: f64) -> Vec<StateInterval> {
    let mut changes: Vec<(f64, &str)> = Vec::new();
    for e in events.iter().filter(|e| e.student_id.as_deref() == Some(student_id)) {
        match &e.payload {
            EventPayload::AvatarChange { molecule } => changes.push((e.time, molecule)),
            EventPayload::TransitionAttempt { to, success: true, .. } if !changes.is_empty() => {
                changes.push((e.time, to))
            }
            _ => {}
        }
    }
    let mut out: Vec<StateInterval> = Vec::new();
    for (i, (start, molecule)) in changes.iter().enumerate() {
        let end = changes.get(i + 1).map(|c| c.0).unwrap_or(session_end).min(session_end);
        if end <= *start {
            continue;
        }
        match out.last_mut() {
            Some(prev) if prev.molecule == *molecule && prev.end == *start => prev.end = end,
            _ => out.push(StateInterval { start: *start, end, molecule: molecule.to_string() }),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    ValidSuccess,
    /// The log reports success but the rule table disagrees.
    InvalidMarkedSuccess,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionOutcome {
    pub time: f64,
    pub student_id: String,
    pub from: String,
    pub to: String,
    pub zone: Option<String>,
    pub sim_state: SimState,
    pub outcome: OutcomeKind,
}

/// Check each transition attempt against the rule table using the student's
/// current molecule, last zone entered, and the current light condition.
/// The log's success flag stays authoritative for state tracking.
pub fn validate_transitions(events: &[LogEvent], model: &ModelSpec) -> Vec<TransitionOutcome> {
    let mut light = SimState::Day;
    let mut molecule: HashMap<&str, &str> = HashMap::new();
    let mut zone: HashMap<&str, &str> = HashMap::new();
    let mut out = Vec::new();
    for e in events {
        let sid = e.student_id.as_deref().unwrap_or_default();
        match &e.payload {
            EventPayload::SimState { state } => light = *state,
            EventPayload::AvatarChange { molecule: m } => {
                molecule.insert(sid, m);
            }
            EventPayload::ZoneEnter { zone: z } => {
                zone.insert(sid, z);
            }
            EventPayload::TransitionAttempt { from, to, success } => {
                let at = zone.get(sid).copied();
                let consistent = molecule.get(sid).is_none_or(|m| m == from);
                let allowed = consistent && model.allows(from, to, at, light);
                let outcome = match (*success, allowed) {
                    (true, true) => OutcomeKind::ValidSuccess,
                    (true, false) => OutcomeKind::InvalidMarkedSuccess,
                    (false, _) => OutcomeKind::Failure,
                };
                if *success {
                    molecule.insert(sid, to);
                }
                out.push(TransitionOutcome {
                    time: e.time,
                    student_id: sid.to_string(),
                    from: from.clone(),
                    to: to.clone(),
                    zone: at.map(String::from),
                    sim_state: light,
                    outcome,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemInterval {
    pub start: f64,
    pub end: f64,
    pub state: SimState,
}

/// Day/night intervals tiling `[0, session_end]`; the session starts in day.
pub fn system_state_lane(events: &[LogEvent], session_end: f64) -> Vec<SystemInterval> {
    let mut out = vec![SystemInterval { start: 0.0, end: session_end, state: SimState::Day }];
    for e in events {
        let EventPayload::SimState { state } = e.payload else {
            continue;
        };
        if e.time >= session_end {
            break;
        }
        let last = out.last_mut().expect("non-empty");
        if last.state == state {
            continue;
        }
        if e.time <= last.start {
            last.state = state;
            // The relabelled interval may now equal its predecessor.
            if out.len() >= 2 && out[out.len() - 2].state == state {
                out.pop();
            }
            continue;
        }
        last.end = e.time;
        out.push(SystemInterval { start: e.time, end: session_end, state });
    }
    if let Some(last) = out.last_mut() {
        last.end = session_end;
    }
    out
}

/// What the time shares over the "initial" period cover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialWindow {
    /// From the first avatar change until the first completed cycle (or the
    /// end of the data when no cycle completes).
    #[default]
    FirstCycle,
    /// A fixed number of seconds from the first avatar change.
    Seconds(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentMetrics {
    pub first_transition_latency: Option<f64>,
    pub successful_transitions: usize,
    pub cycles_completed: usize,
    pub time_share_per_molecule: BTreeMap<String, f64>,
    pub initial_time_share_per_molecule: BTreeMap<String, f64>,
    pub mean_transition_interval: Option<f64>,
    pub invalid_marked_successes: usize,
    pub failed_attempts: usize,
}

fn shares(intervals: &[StateInterval], from: f64, to: f64) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, f64> = BTreeMap::new();
    for i in intervals {
        let d = i.end.min(to) - i.start.max(from);
        if d > 0.0 {
            *acc.entry(i.molecule.clone()).or_default() += d;
        }
    }
    let total: f64 = acc.values().sum();
    if total > 0.0 {
        acc.values_mut().for_each(|v| *v /= total);
    }
    acc
}

/// Aggregate one student's metrics. `outcomes` must belong to that student.
pub fn compute_metrics(
    student_id: &str,
    intervals: &[StateInterval],
    outcomes: &[TransitionOutcome],
    model: &ModelSpec,
    initial: InitialWindow,
) -> Result<StudentMetrics, SimlogError> {
    let (Some(first), Some(last)) = (intervals.first(), intervals.last()) else {
        return Err(SimlogError::NoStateData(student_id.to_string()));
    };
    let valid: Vec<&TransitionOutcome> =
        outcomes.iter().filter(|o| o.outcome == OutcomeKind::ValidSuccess).collect();

    // A cycle completes on a valid transition into the cycle start after the
    // student had already embodied it earlier.
    let start = &model.cycle_start;
    let completions: Vec<f64> = valid
        .iter()
        .filter(|o| &o.to == start && &o.from != start)
        .filter(|o| intervals.iter().any(|i| &i.molecule == start && i.start < o.time))
        .map(|o| o.time)
        .collect();

    let mean_transition_interval = (valid.len() >= 2).then(|| {
        let span = valid.last().unwrap().time - valid[0].time;
        span / (valid.len() - 1) as f64
    });
    let initial_end = match initial {
        InitialWindow::FirstCycle => completions.first().copied().unwrap_or(last.end),
        InitialWindow::Seconds(s) => first.start + s,
    };

    Ok(StudentMetrics {
        first_transition_latency: valid.first().map(|o| o.time - first.start),
        successful_transitions: valid.len(),
        cycles_completed: completions.len(),
        time_share_per_molecule: shares(intervals, first.start, last.end),
        initial_time_share_per_molecule: shares(intervals, first.start, initial_end),
        mean_transition_interval,
        invalid_marked_successes: outcomes.iter().filter(|o| o.outcome == OutcomeKind::InvalidMarkedSuccess).count(),
        failed_attempts: outcomes.iter().filter(|o| o.outcome == OutcomeKind::Failure).count(),
    })
}

/// Every student id appearing in the log, sorted.
pub fn students(events: &[LogEvent]) -> BTreeSet<String> {
    events.iter().filter_map(|e| e.student_id.clone()).collect()
}

/// Point events for a student's action lane: zone entries and transition
/// attempts with their checked outcome.
pub fn action_markers(events: &[LogEvent], outcomes: &[TransitionOutcome], student_id: &str) -> Vec<(f64, String)> {
    let mut out: Vec<(f64, String)> = events
        .iter()
        .filter(|e| e.student_id.as_deref() == Some(student_id))
        .filter_map(|e| match &e.payload {
            EventPayload::ZoneEnter { zone } => Some((e.time, format!("zone:{zone}"))),
            _ => None,
        })
        .collect();
    out.extend(
        outcomes
            .iter()
            .filter(|o| o.student_id == student_id)
            .map(|o| (o.time, format!("{}->{}:{}", o.from, o.to, outcome_tag(o.outcome)))),
    );
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn outcome_tag(k: OutcomeKind) -> &'static str {
    match k {
        OutcomeKind::ValidSuccess => "valid_success",
        OutcomeKind::InvalidMarkedSuccess => "invalid_marked_success",
        OutcomeKind::Failure => "failure",
    }
}
