//! Fully observed trajectories and the JSON Lines dataset format.
//!
//! A dataset file holds an optional header line `{"variables": [...]}`
//! followed by one trajectory per line:
//!
//! ```text
//! {"initial": {"X": "x0", "Y": "y1"}, "end_time": 6.0, "events": [[0.73, "X", "x1"]]}
//! ```

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{CtbnError, Result};
use crate::model::{specs_from_entries, specs_to_entries, variable_index, VariableEntry, VariableSpec};

/// `var` jumps to state `value` at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub var: usize,
    pub value: usize,
}

impl Event {
    pub fn new(time: f64, var: usize, value: usize) -> Self {
        Self { time, var, value }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: Vec<usize>,
    pub end_time: f64,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn new(initial: Vec<usize>, end_time: f64, events: Vec<Event>) -> Self {
        Self {
            initial,
            end_time,
            events,
        }
    }

    /// Full assignment at time `t`, reflecting every event with time `<= t`.
    pub fn state_at(&self, t: f64) -> Result<Vec<usize>> {
        if !(0.0..=self.end_time).contains(&t) {
            return Err(CtbnError::InvalidArgument(format!(
                "time {t} outside [0, {}]",
                self.end_time
            )));
        }
        let upto = self.events.partition_point(|e| e.time <= t);
        let mut state = self.initial.clone();
        for e in &self.events[..upto] {
            state[e.var] = e.value;
        }
        Ok(state)
    }

    /// Keeps the first `n` events and ends the observation at the last kept
    /// event. With `n = 0` or fewer events than `n`, returns a clone.
    pub fn truncated_to_events(&self, n: usize) -> Trajectory {
        if n == 0 || n >= self.events.len() {
            return self.clone();
        }
        Trajectory {
            initial: self.initial.clone(),
            end_time: self.events[n - 1].time,
            events: self.events[..n].to_vec(),
        }
    }

    /// Visits the piecewise-constant segments `(start, end, state)` in order.
    /// The state passed for a segment is the assignment on `[start, end)`.
    pub fn for_each_segment(&self, mut f: impl FnMut(f64, f64, &[usize])) {
        let mut state = self.initial.clone();
        let mut start = 0.0;
        for e in &self.events {
            f(start, e.time, &state);
            state[e.var] = e.value;
            start = e.time;
        }
        f(start, self.end_time, &state);
    }
}

/// A broken trajectory invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryViolation {
    InitialLength { expected: usize, found: usize },
    InitialState { var: usize, value: usize },
    EndTime(f64),
    UnknownVariable { index: usize },
    UnknownState { index: usize, value: usize },
    TimeOutOfRange { index: usize, time: f64 },
    Simultaneous { index: usize, time: f64 },
    OutOfOrder { index: usize, time: f64 },
    NoChange { index: usize },
}

impl fmt::Display for TrajectoryViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TrajectoryViolation::*;
        match self {
            InitialLength { expected, found } => {
                write!(f, "initial assignment has {found} values, expected {expected}")
            }
            InitialState { var, value } => write!(f, "initial value {value} of variable {var} out of range"),
            EndTime(t) => write!(f, "end_time {t} must be positive and finite"),
            UnknownVariable { index } => write!(f, "event {index} names an unknown variable"),
            UnknownState { index, value } => write!(f, "event {index} sets unknown state {value}"),
            TimeOutOfRange { index, time } => write!(f, "event {index} at {time} outside (0, end_time]"),
            Simultaneous { index, time } => {
                write!(f, "event {index} shares timestamp {time} with the previous event")
            }
            OutOfOrder { index, time } => write!(f, "event {index} at {time} precedes the previous event"),
            NoChange { index } => write!(f, "event {index} does not change its variable"),
        }
    }
}

pub fn validate_trajectory(traj: &Trajectory, specs: &[VariableSpec]) -> Vec<TrajectoryViolation> {
    use TrajectoryViolation::*;
    let mut out = Vec::new();
    if traj.initial.len() != specs.len() {
        out.push(InitialLength {
            expected: specs.len(),
            found: traj.initial.len(),
        });
        return out;
    }
    for (var, &value) in traj.initial.iter().enumerate() {
        if value >= specs[var].card() {
            out.push(InitialState { var, value });
        }
    }
    if !(traj.end_time > 0.0 && traj.end_time.is_finite()) {
        out.push(EndTime(traj.end_time));
    }
    let mut state = traj.initial.clone();
    let mut prev: Option<f64> = None;
    for (index, e) in traj.events.iter().enumerate() {
        if !(e.time > 0.0 && e.time <= traj.end_time) {
            out.push(TimeOutOfRange { index, time: e.time });
        }
        if let Some(p) = prev {
            if e.time == p {
                out.push(Simultaneous { index, time: e.time });
            } else if e.time < p {
                out.push(OutOfOrder { index, time: e.time });
            }
        }
        prev = Some(e.time);
        if e.var >= specs.len() {
            out.push(UnknownVariable { index });
            continue;
        }
        if e.value >= specs[e.var].card() {
            out.push(UnknownState { index, value: e.value });
            continue;
        }
        if state[e.var] == e.value {
            out.push(NoChange { index });
        }
        state[e.var] = e.value;
    }
    out
}

/// Trajectories over a shared variable universe.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    specs: Vec<VariableSpec>,
    trajectories: Vec<Trajectory>,
}

impl Dataset {
    /// Fails on the first trajectory that breaks an invariant.
    pub fn new(specs: Vec<VariableSpec>, trajectories: Vec<Trajectory>) -> Result<Self> {
        for (i, t) in trajectories.iter().enumerate() {
            if let Some(v) = validate_trajectory(t, &specs).first() {
                return Err(CtbnError::Invalid(format!("trajectory {i}: {v}")));
            }
        }
        Ok(Self { specs, trajectories })
    }

    pub fn empty(specs: Vec<VariableSpec>) -> Self {
        Self {
            specs,
            trajectories: Vec::new(),
        }
    }

    pub fn specs(&self) -> &[VariableSpec] {
        &self.specs
    }

    pub fn n_vars(&self) -> usize {
        self.specs.len()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.trajectories.iter().map(|t| t.events.len()).sum()
    }

    pub fn total_time(&self) -> f64 {
        self.trajectories.iter().map(|t| t.end_time).sum()
    }

    /// Same universe, selected trajectories.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            specs: self.specs.clone(),
            trajectories: self.trajectories[range].to_vec(),
        }
    }

    /// Union of two datasets over the same universe.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.specs != other.specs {
            return Err(CtbnError::ShapeMismatch("datasets use different variables".into()));
        }
        let mut trajectories = self.trajectories.clone();
        trajectories.extend(other.trajectories.iter().cloned());
        Ok(Dataset {
            specs: self.specs.clone(),
            trajectories,
        })
    }

    pub fn map_trajectories(&self, f: impl Fn(&Trajectory) -> Trajectory) -> Result<Dataset> {
        Dataset::new(self.specs.clone(), self.trajectories.iter().map(f).collect())
    }

    /// Writes the header line and one line per trajectory.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(
            &mut out,
            &Header {
                variables: specs_to_entries(&self.specs),
            },
        )?;
        out.write_all(b"\n")?;
        for t in &self.trajectories {
            let line = TrajectoryLine {
                initial: t
                    .initial
                    .iter()
                    .enumerate()
                    .map(|(v, &s)| (self.specs[v].name().to_string(), self.specs[v].states()[s].clone()))
                    .collect(),
                end_time: t.end_time,
                events: t
                    .events
                    .iter()
                    .map(|e| {
                        (
                            e.time,
                            self.specs[e.var].name().to_string(),
                            self.specs[e.var].states()[e.value].clone(),
                        )
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Parses a dataset. The variable universe comes from the header line
    /// when present, otherwise from `specs`; when both are given they must
    /// agree.
    pub fn read_jsonl<R: BufRead>(input: R, specs: Option<&[VariableSpec]>) -> Result<Dataset> {
        let mut universe: Option<Vec<VariableSpec>> = None;
        let mut trajectories = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            let text = line.trim();
            if text.is_empty() {
                continue;
            }
            let parse_err = |message: String| CtbnError::Parse { line: lineno, message };
            if universe.is_none() {
                if let Ok(h) = serde_json::from_str::<Header>(text) {
                    let declared = specs_from_entries(h.variables).map_err(|e| parse_err(e.to_string()))?;
                    if let Some(given) = specs {
                        if given != declared.as_slice() {
                            return Err(parse_err("header variables differ from the supplied model".into()));
                        }
                    }
                    universe = Some(declared);
                    continue;
                }
                universe = Some(
                    specs
                        .map(<[VariableSpec]>::to_vec)
                        .ok_or_else(|| parse_err("no variable header and no model supplied".into()))?,
                );
            }
            let specs = universe.as_deref().expect("set above");
            let raw: TrajectoryLine = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
            let traj = raw.resolve(specs).map_err(|e| parse_err(e.to_string()))?;
            if let Some(v) = validate_trajectory(&traj, specs).first() {
                return Err(parse_err(v.to_string()));
            }
            trajectories.push(traj);
        }
        let specs = match universe {
            Some(u) => u,
            None => specs.map(<[VariableSpec]>::to_vec).ok_or_else(|| CtbnError::Parse {
                line: 0,
                message: "empty file with no model supplied".into(),
            })?,
        };
        Ok(Dataset { specs, trajectories })
    }
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    dataset.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>, specs: Option<&[VariableSpec]>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    Dataset::read_jsonl(BufReader::new(file), specs)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    variables: Vec<VariableEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryLine {
    initial: IndexMap<String, String>,
    end_time: f64,
    events: Vec<(f64, String, String)>,
}

impl TrajectoryLine {
    fn resolve(self, specs: &[VariableSpec]) -> Result<Trajectory> {
        let mut initial = vec![usize::MAX; specs.len()];
        for (name, label) in &self.initial {
            let v = variable_index(specs, name)?;
            initial[v] = state_of(specs, v, label)?;
        }
        if let Some(v) = initial.iter().position(|&s| s == usize::MAX) {
            return Err(CtbnError::Invalid(format!(
                "initial assignment misses `{}`",
                specs[v].name()
            )));
        }
        let events = self
            .events
            .iter()
            .map(|(time, name, label)| {
                let v = variable_index(specs, name)?;
                Ok(Event::new(*time, v, state_of(specs, v, label)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory::new(initial, self.end_time, events))
    }
}

fn state_of(specs: &[VariableSpec], v: usize, label: &str) -> Result<usize> {
    specs[v].state_index(label).ok_or_else(|| CtbnError::UnknownState {
        variable: specs[v].name().to_string(),
        state: label.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<VariableSpec> {
        vec![VariableSpec::binary("X"), VariableSpec::binary("Y")]
    }

    #[test]
    fn simultaneous_events_are_rejected() {
        let t = Trajectory::new(vec![0, 0], 5.0, vec![Event::new(1.0, 0, 1), Event::new(1.0, 1, 1)]);
        let v = validate_trajectory(&t, &specs());
        assert_eq!(v, vec![TrajectoryViolation::Simultaneous { index: 1, time: 1.0 }]);
    }

    #[test]
    fn no_change_event_is_rejected() {
        let t = Trajectory::new(vec![0, 0], 5.0, vec![Event::new(1.0, 0, 0)]);
        assert_eq!(
            validate_trajectory(&t, &specs()),
            vec![TrajectoryViolation::NoChange { index: 0 }]
        );
    }

    #[test]
    fn empty_trajectory_is_valid() {
        let t = Trajectory::new(vec![0, 1], 5.0, vec![]);
        assert!(validate_trajectory(&t, &specs()).is_empty());
    }

    #[test]
    fn event_times_must_lie_in_the_window() {
        let t = Trajectory::new(vec![0, 0], 2.0, vec![Event::new(0.0, 0, 1), Event::new(2.5, 0, 0)]);
        let v = validate_trajectory(&t, &specs());
        assert_eq!(v.len(), 2);
        assert!(v
            .iter()
            .all(|x| matches!(x, TrajectoryViolation::TimeOutOfRange { .. })));
    }

    #[test]
    fn state_at_is_right_continuous() {
        let t = Trajectory::new(vec![0, 0], 3.0, vec![Event::new(1.0, 0, 1)]);
        assert_eq!(t.state_at(0.0).unwrap(), vec![0, 0]);
        assert_eq!(t.state_at(0.999).unwrap(), vec![0, 0]);
        assert_eq!(t.state_at(1.0).unwrap(), vec![1, 0]);
        assert!(t.state_at(3.5).is_err());
        assert!(t.state_at(-0.1).is_err());
    }

    #[test]
    fn segments_cover_the_window() {
        let t = Trajectory::new(
            vec![0, 0],
            4.0,
            vec![Event::new(0.5, 1, 1), Event::new(1.25, 0, 1), Event::new(3.0, 1, 0)],
        );
        let mut total = 0.0;
        let mut prev_end = 0.0;
        t.for_each_segment(|s, e, _| {
            assert_eq!(s, prev_end);
            total += e - s;
            prev_end = e;
        });
        assert_eq!(total, 4.0);
    }

    #[test]
    fn round_trip_two_trajectories() {
        let d = Dataset::new(
            specs(),
            vec![
                Trajectory::new(
                    vec![0, 1],
                    6.0,
                    vec![Event::new(0.1 + 0.2, 0, 1), Event::new(1.0 / 3.0, 1, 0)],
                ),
                Trajectory::new(vec![1, 1], 2.5, vec![]),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_jsonl(&mut buf).unwrap();
        let back = Dataset::read_jsonl(&buf[..], None).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let d = Dataset::empty(specs());
        let mut buf = Vec::new();
        d.write_jsonl(&mut buf).unwrap();
        let back = Dataset::read_jsonl(&buf[..], None).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.specs(), d.specs());
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text = "{\"variables\": [{\"name\": \"X\", \"states\": [\"a\", \"b\"]}]}\n\
                    {\"initial\": {\"X\": \"a\"}, \"end_time\": 1.0, \"events\": []}\n\
                    {\"initial\": {\"X\": \"a\"}, \"end_time\": \n";
        match Dataset::read_jsonl(text.as_bytes(), None) {
            Err(CtbnError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_labels_are_errors() {
        let s = vec![VariableSpec::new("X", vec!["a".into(), "b".into()]).unwrap()];
        let bad_state = "{\"initial\": {\"X\": \"c\"}, \"end_time\": 1.0, \"events\": []}\n";
        assert!(matches!(
            Dataset::read_jsonl(bad_state.as_bytes(), Some(&s)),
            Err(CtbnError::Parse { line: 1, .. })
        ));
        let bad_var = "{\"initial\": {\"X\": \"a\"}, \"end_time\": 1.0, \"events\": [[0.5, \"Z\", \"b\"]]}\n";
        assert!(Dataset::read_jsonl(bad_var.as_bytes(), Some(&s)).is_err());
        let ties = "{\"initial\": {\"X\": \"a\"}, \"end_time\": 1.0, \"events\": [[0.5, \"X\", \"b\"], [0.5, \"X\", \"a\"]]}\n";
        assert!(Dataset::read_jsonl(ties.as_bytes(), Some(&s)).is_err());
    }
}
