//! OLTC and shunt-capacitor specifications, day-ahead schedules and
//! operation-count accounting.
//!
//! Operation counting rule: a device performs one operation in every hour
//! whose state differs from the previous hour, and the first hour is compared
//! against the device's initial state. A multi-position tap jump within one
//! hour is a single operation.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{BusId, CapacitorPlacement, Network};

/// Hours in a day-ahead schedule.
pub const HOURS: usize = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("tap {tap} out of range [0, {max}]")]
    TapOutOfRange { tap: usize, max: usize },
    #[error("invalid device specification: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OltcSpec {
    pub num_taps: usize,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub max_daily_ops: usize,
    pub initial_tap: usize,
}

impl Default for OltcSpec {
    fn default() -> Self {
        Self {
            num_taps: 11,
            ratio_min: 0.97,
            ratio_max: 1.03,
            max_daily_ops: 6,
            initial_tap: 5,
        }
    }
}

impl OltcSpec {
    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.num_taps < 2 {
            return Err(DeviceError::InvalidSpec(format!(
                "num_taps must be >= 2, got {}",
                self.num_taps
            )));
        }
        if !(self.ratio_min < self.ratio_max) {
            return Err(DeviceError::InvalidSpec(format!(
                "ratio_min {} must be below ratio_max {}",
                self.ratio_min, self.ratio_max
            )));
        }
        if self.initial_tap >= self.num_taps {
            return Err(DeviceError::InvalidSpec(format!(
                "initial tap {} out of range",
                self.initial_tap
            )));
        }
        Ok(())
    }

    pub fn max_tap(&self) -> usize {
        self.num_taps - 1
    }

    /// Voltage change per tap position, p.u.
    pub fn step(&self) -> f64 {
        (self.ratio_max - self.ratio_min) / (self.num_taps - 1) as f64
    }

    pub fn tap_ratio(&self, tap: usize) -> Result<f64, DeviceError> {
        if tap >= self.num_taps {
            return Err(DeviceError::TapOutOfRange {
                tap,
                max: self.max_tap(),
            });
        }
        if tap == self.max_tap() {
            return Ok(self.ratio_max);
        }
        Ok(self.ratio_min + tap as f64 * self.step())
    }
}

/// Free-function form of [`OltcSpec::tap_ratio`].
pub fn tap_ratio(spec: &OltcSpec, tap: usize) -> Result<f64, DeviceError> {
    spec.tap_ratio(tap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScSpec {
    pub bus: BusId,
    pub q_mvar: f64,
    pub max_daily_ops: usize,
    pub initial_state: bool,
}

impl ScSpec {
    pub fn new(bus: BusId, q_mvar: f64) -> Self {
        Self {
            bus,
            q_mvar,
            max_daily_ops: 4,
            initial_state: false,
        }
    }
}

/// The controllable devices of one feeder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpecs {
    pub oltc: OltcSpec,
    pub scs: Vec<ScSpec>,
}

impl DeviceSpecs {
    /// Default OLTC plus one capacitor per `sc` entry of the network, in
    /// document order.
    pub fn from_network(net: &Network) -> Self {
        let scs = net
            .buses()
            .iter()
            .filter_map(|b| b.sc.map(|sc| ScSpec::new(b.id, sc.q_mvar)))
            .collect();
        Self {
            oltc: OltcSpec::default(),
            scs,
        }
    }

    pub fn with_limits(mut self, oltc_ops: usize, sc_ops: usize) -> Self {
        self.oltc.max_daily_ops = oltc_ops;
        for sc in &mut self.scs {
            sc.max_daily_ops = sc_ops;
        }
        self
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        self.oltc.validate()?;
        for sc in &self.scs {
            if !(sc.q_mvar.is_finite() && sc.q_mvar > 0.0) {
                return Err(DeviceError::InvalidSpec(format!(
                    "capacitor at bus {} must have positive q_mvar",
                    sc.bus
                )));
            }
        }
        Ok(())
    }

    pub fn capacitor_placements(&self) -> Vec<CapacitorPlacement> {
        self.scs
            .iter()
            .map(|sc| CapacitorPlacement {
                bus: sc.bus,
                q_mvar: sc.q_mvar,
            })
            .collect()
    }

    /// Schedule that holds every device at its initial state all day.
    pub fn static_schedule(&self) -> ActionSchedule {
        ActionSchedule {
            oltc_tap: vec![self.oltc.initial_tap; HOURS],
            sc_state: self
                .scs
                .iter()
                .map(|sc| vec![sc.initial_state; HOURS])
                .collect(),
        }
    }
}

/// OLTC tap indices and capacitor on/off states per hour.
///
/// Serialized as `{"oltc_tap": [..], "sc_state": [[0|1, ..], ..]}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionSchedule {
    pub oltc_tap: Vec<usize>,
    #[serde(with = "bit_rows")]
    pub sc_state: Vec<Vec<bool>>,
}

mod bit_rows {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(rows: &[Vec<bool>], s: S) -> Result<S::Ok, S::Error> {
        let ints: Vec<Vec<u8>> = rows
            .iter()
            .map(|r| r.iter().map(|&b| u8::from(b)).collect())
            .collect();
        serde::Serialize::serialize(&ints, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<bool>>, D::Error> {
        let ints = Vec::<Vec<u8>>::deserialize(d)?;
        ints.into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|v| match v {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(D::Error::custom(format!(
                            "capacitor state must be 0 or 1, got {other}"
                        ))),
                    })
                    .collect()
            })
            .collect()
    }
}

impl ActionSchedule {
    pub fn len(&self) -> usize {
        self.oltc_tap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oltc_tap.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("schedule serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCountReport {
    pub oltc_ops: usize,
    pub sc_ops: Vec<usize>,
}

pub(crate) fn transitions<T: PartialEq + Copy>(initial: T, states: &[T]) -> usize {
    let mut prev = initial;
    let mut ops = 0;
    for &s in states {
        if s != prev {
            ops += 1;
        }
        prev = s;
    }
    ops
}

/// Counts operations, including the change from the initial state into the
/// first hour. Works on hourly or expanded schedules alike.
pub fn count_operations(schedule: &ActionSchedule, specs: &DeviceSpecs) -> OpCountReport {
    OpCountReport {
        oltc_ops: transitions(specs.oltc.initial_tap, &schedule.oltc_tap),
        sc_ops: schedule
            .sc_state
            .iter()
            .enumerate()
            .map(|(m, row)| {
                let initial = specs.scs.get(m).is_some_and(|sc| sc.initial_state);
                transitions(initial, row)
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    OltcLength(usize),
    ScRowCount { expected: usize, got: usize },
    ScLength { sc: usize, len: usize },
    TapOutOfRange { hour: usize, tap: usize },
    OltcOps { ops: usize, max: usize },
    ScOps { sc: usize, ops: usize, max: usize },
}

impl Violation {
    /// Structural problems, as opposed to operation-count limits.
    pub fn is_structural(&self) -> bool {
        !matches!(self, Violation::OltcOps { .. } | Violation::ScOps { .. })
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OltcLength(len) => write!(f, "oltc_tap length {len} \u{2260} {HOURS}"),
            Violation::ScRowCount { expected, got } => {
                write!(f, "sc_state has {got} rows, expected {expected}")
            }
            Violation::ScLength { sc, len } => {
                write!(f, "sc_state[{sc}] length {len} \u{2260} {HOURS}")
            }
            Violation::TapOutOfRange { hour, tap } => {
                write!(f, "tap out of range: hour {hour} has tap {tap}")
            }
            Violation::OltcOps { ops, max } => write!(f, "oltc ops {ops} > {max}"),
            Violation::ScOps { sc, ops, max } => write!(f, "sc {sc} ops {ops} > {max}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScheduleVerdict {
    pub violations: Vec<Violation>,
}

impl ScheduleVerdict {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn describe(&self) -> String {
        self.violations
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Checks lengths, tap range and every operation-count limit.
pub fn validate_schedule(schedule: &ActionSchedule, specs: &DeviceSpecs) -> ScheduleVerdict {
    let mut violations = Vec::new();
    if schedule.oltc_tap.len() != HOURS {
        violations.push(Violation::OltcLength(schedule.oltc_tap.len()));
    }
    if schedule.sc_state.len() != specs.scs.len() {
        violations.push(Violation::ScRowCount {
            expected: specs.scs.len(),
            got: schedule.sc_state.len(),
        });
    }
    for (sc, row) in schedule.sc_state.iter().enumerate() {
        if row.len() != HOURS {
            violations.push(Violation::ScLength { sc, len: row.len() });
        }
    }
    for (hour, &tap) in schedule.oltc_tap.iter().enumerate() {
        if tap >= specs.oltc.num_taps {
            violations.push(Violation::TapOutOfRange { hour, tap });
        }
    }
    let counts = count_operations(schedule, specs);
    if counts.oltc_ops > specs.oltc.max_daily_ops {
        violations.push(Violation::OltcOps {
            ops: counts.oltc_ops,
            max: specs.oltc.max_daily_ops,
        });
    }
    for (sc, (&ops, spec)) in counts.sc_ops.iter().zip(&specs.scs).enumerate() {
        if ops > spec.max_daily_ops {
            violations.push(Violation::ScOps {
                sc,
                ops,
                max: spec.max_daily_ops,
            });
        }
    }
    ScheduleVerdict { violations }
}

/// Repeats each hourly action `steps_per_hour` times.
pub fn expand_to_steps(schedule: &ActionSchedule, steps_per_hour: usize) -> ActionSchedule {
    let repeat = |n: usize| steps_per_hour.max(1) * n;
    ActionSchedule {
        oltc_tap: schedule
            .oltc_tap
            .iter()
            .flat_map(|&t| std::iter::repeat_n(t, repeat(1)))
            .collect(),
        sc_state: schedule
            .sc_state
            .iter()
            .map(|row| {
                row.iter()
                    .flat_map(|&s| std::iter::repeat_n(s, repeat(1)))
                    .collect()
            })
            .collect(),
    }
}

/// Reduces the number of state changes in `states` to at most `max_ops` by
/// repeatedly absorbing the shortest run into a neighbour (the initial state
/// counts as a fixed left neighbour). Among neighbours the one with the
/// closest value wins, the left one on ties.
pub fn limit_transitions(states: &mut [usize], initial: usize, max_ops: usize) {
    loop {
        // Runs as (start, end_exclusive, value).
        let mut runs: Vec<(usize, usize, usize)> = Vec::new();
        for (i, &s) in states.iter().enumerate() {
            match runs.last_mut() {
                Some(run) if run.2 == s => run.1 = i + 1,
                _ => runs.push((i, i + 1, s)),
            }
        }
        let ops = transitions(initial, states);
        if ops <= max_ops || runs.is_empty() {
            return;
        }
        // Candidate runs: every run except one already equal to `initial` at
        // the start (it costs nothing).
        let pick = runs
            .iter()
            .enumerate()
            .filter(|(k, r)| !(*k == 0 && r.2 == initial))
            .min_by_key(|(k, r)| (r.1 - r.0, *k))
            .map(|(k, _)| k)
            .expect("ops > 0 implies a costly run");
        let (start, end, value) = runs[pick];
        let left = if pick == 0 { initial } else { runs[pick - 1].2 };
        let target = match runs.get(pick + 1) {
            Some(right) if right.2.abs_diff(value) < left.abs_diff(value) => right.2,
            _ => left,
        };
        states[start..end].iter_mut().for_each(|s| *s = target);
    }
}

/// Brings a schedule within every operation-count limit, clamping taps into
/// range first. Lengths are left untouched.
pub fn enforce_limits(schedule: &mut ActionSchedule, specs: &DeviceSpecs) {
    let max_tap = specs.oltc.max_tap();
    schedule
        .oltc_tap
        .iter_mut()
        .for_each(|t| *t = (*t).min(max_tap));
    limit_transitions(
        &mut schedule.oltc_tap,
        specs.oltc.initial_tap,
        specs.oltc.max_daily_ops,
    );
    for (row, sc) in schedule.sc_state.iter_mut().zip(&specs.scs) {
        let mut as_int: Vec<usize> = row.iter().map(|&b| usize::from(b)).collect();
        limit_transitions(&mut as_int, usize::from(sc.initial_state), sc.max_daily_ops);
        row.iter_mut()
            .zip(as_int)
            .for_each(|(b, v)| *b = v == 1);
    }
}
