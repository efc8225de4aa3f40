//! Shared domain types: impact classes, 5-minute time steps, incidents and
//! the feature vectors that flow through selection, prompting and scoring.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of one time step in minutes.
pub const STEP_MINUTES: i64 = 5;
/// Number of 5-minute steps in a day.
pub const SLOTS_PER_DAY: i64 = 288;

/// Impact of an incident on upstream traffic, ordered `Mild < Moderate < Severe`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImpactClass {
    Mild,
    Moderate,
    Severe,
}

impl ImpactClass {
    pub const ALL: [ImpactClass; 3] = [
        ImpactClass::Mild,
        ImpactClass::Moderate,
        ImpactClass::Severe,
    ];

    pub fn index(self) -> usize {
        match self {
            ImpactClass::Mild => 0,
            ImpactClass::Moderate => 1,
            ImpactClass::Severe => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Lowercase class word as it appears in prompts and model responses.
    pub fn word(self) -> &'static str {
        match self {
            ImpactClass::Mild => "mild",
            ImpactClass::Moderate => "moderate",
            ImpactClass::Severe => "severe",
        }
    }

    /// Classes adjacent in the ordering.
    pub fn neighbors(self) -> &'static [ImpactClass] {
        match self {
            ImpactClass::Mild => &[ImpactClass::Moderate],
            ImpactClass::Moderate => &[ImpactClass::Mild, ImpactClass::Severe],
            ImpactClass::Severe => &[ImpactClass::Moderate],
        }
    }

    /// The class farthest away in the ordering. Moderate is equidistant from
    /// both ends and maps to Mild.
    pub fn most_distant(self) -> ImpactClass {
        match self {
            ImpactClass::Mild => ImpactClass::Severe,
            ImpactClass::Moderate => ImpactClass::Mild,
            ImpactClass::Severe => ImpactClass::Mild,
        }
    }
}

impl fmt::Display for ImpactClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

impl FromStr for ImpactClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mild" => Ok(ImpactClass::Mild),
            "moderate" => Ok(ImpactClass::Moderate),
            "severe" => Ok(ImpactClass::Severe),
            other => Err(Error::InvalidInput(format!(
                "unknown impact class `{other}`"
            ))),
        }
    }
}

/// One value per impact class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerClass<T> {
    pub mild: T,
    pub moderate: T,
    pub severe: T,
}

impl<T> PerClass<T> {
    pub fn from_fn(mut f: impl FnMut(ImpactClass) -> T) -> Self {
        PerClass {
            mild: f(ImpactClass::Mild),
            moderate: f(ImpactClass::Moderate),
            severe: f(ImpactClass::Severe),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(ImpactClass, &T) -> U) -> PerClass<U> {
        PerClass::from_fn(|c| f(c, &self[c]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ImpactClass, &T)> {
        ImpactClass::ALL.into_iter().map(move |c| (c, &self[c]))
    }
}

impl<T> Index<ImpactClass> for PerClass<T> {
    type Output = T;

    fn index(&self, class: ImpactClass) -> &T {
        match class {
            ImpactClass::Mild => &self.mild,
            ImpactClass::Moderate => &self.moderate,
            ImpactClass::Severe => &self.severe,
        }
    }
}

impl<T> IndexMut<ImpactClass> for PerClass<T> {
    fn index_mut(&mut self, class: ImpactClass) -> &mut T {
        match class {
            ImpactClass::Mild => &mut self.mild,
            ImpactClass::Moderate => &mut self.moderate,
            ImpactClass::Severe => &mut self.severe,
        }
    }
}

/// Upper bounds of the Mild and Moderate bands of the overall speed decrease ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub mild_max: f64,
    pub moderate_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            mild_max: 0.2,
            moderate_max: 0.5,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mild_max.is_finite()
            && self.moderate_max.is_finite()
            && self.mild_max > 0.0
            && self.mild_max < self.moderate_max;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "thresholds must satisfy 0 < mild_max < moderate_max, got {} / {}",
                self.mild_max, self.moderate_max
            )))
        }
    }

    /// Mild for `delta <= mild_max`, Moderate up to and including
    /// `moderate_max`, Severe above.
    pub fn classify(&self, delta: f64) -> Result<ImpactClass> {
        if !delta.is_finite() || delta < 0.0 {
            return Err(Error::InvalidInput(format!(
                "speed decrease ratio must be finite and >= 0, got {delta}"
            )));
        }
        Ok(if delta <= self.mild_max {
            ImpactClass::Mild
        } else if delta <= self.moderate_max {
            ImpactClass::Moderate
        } else {
            ImpactClass::Severe
        })
    }
}

/// Classify an overall speed decrease ratio with the default 0.2 / 0.5 thresholds.
pub fn impact_class_from_ratio(delta: f64) -> Result<ImpactClass> {
    Thresholds::default().classify(delta)
}

/// Index of a 5-minute bin counted from the dataset epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimeStep(pub i64);

impl TimeStep {
    pub fn index(self) -> i64 {
        self.0
    }

    pub fn slot_of_day(self) -> usize {
        self.0.rem_euclid(SLOTS_PER_DAY) as usize
    }

    pub fn offset(self, steps: i64) -> TimeStep {
        TimeStep(self.0 + steps)
    }
}

/// Maps wall-clock timestamps onto [`TimeStep`]s. The epoch is a midnight, so
/// `slot_of_day` agrees with the clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    epoch: NaiveDateTime,
}

impl Timeline {
    /// Timeline whose epoch is the first midnight at or before `earliest`.
    pub fn starting_at(earliest: NaiveDateTime) -> Self {
        Timeline {
            epoch: earliest.date().and_time(NaiveTime::MIN),
        }
    }

    pub fn epoch(&self) -> NaiveDateTime {
        self.epoch
    }

    /// The step whose half-open interval `[start, start + 5 min)` contains `ts`.
    pub fn step_of(&self, ts: NaiveDateTime) -> TimeStep {
        let minutes = (ts - self.epoch).num_seconds().div_euclid(60);
        TimeStep(minutes.div_euclid(STEP_MINUTES))
    }

    pub fn start_of(&self, step: TimeStep) -> NaiveDateTime {
        self.epoch + Duration::minutes(step.0 * STEP_MINUTES)
    }

    pub fn end_of(&self, step: TimeStep) -> NaiveDateTime {
        self.start_of(step.offset(1))
    }

    pub fn date_of(&self, step: TimeStep) -> NaiveDate {
        self.start_of(step).date()
    }

    /// Step at whose end a prediction is made: the step containing the first report.
    pub fn prediction_step(&self, first_report: NaiveDateTime) -> TimeStep {
        self.step_of(first_report)
    }
}

/// Direction of travel. Northbound and eastbound mileposts increase along travel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "N")]
    North,
    #[serde(rename = "S")]
    South,
    #[serde(rename = "E")]
    East,
    #[serde(rename = "W")]
    West,
}

impl Direction {
    pub fn mileposts_increase(self) -> bool {
        matches!(self, Direction::North | Direction::East)
    }

    pub fn code(self) -> &'static str {
        match self {
            Direction::North => "N",
            Direction::South => "S",
            Direction::East => "E",
            Direction::West => "W",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "N" | "NB" | "NORTH" => Ok(Direction::North),
            "S" | "SB" | "SOUTH" => Ok(Direction::South),
            "E" | "EB" | "EAST" => Ok(Direction::East),
            "W" | "WB" | "WEST" => Ok(Direction::West),
            other => Err(Error::InvalidInput(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub time: NaiveDateTime,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub id: String,
    pub first_report_time: NaiveDateTime,
    pub roadway_id: String,
    pub direction: Direction,
    pub milepost: f64,
    /// Sorted ascending by time.
    pub log_lines: Vec<LogLine>,
}

/// Attributes extracted from an incident log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentFeatures {
    pub incident_time: NaiveTime,
    pub num_vehicles: u32,
    pub num_lanes_blocked: u32,
    /// Extra flags (large truck, ambulance/tow, weather). Kept for audit, never
    /// used for prediction.
    #[serde(default)]
    pub extended: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficFeatures {
    /// Mean relative speed upstream in the three steps before the incident, mph.
    pub pre_incident_relative_speed: f64,
    /// Overall speed decrease ratio at the prediction step.
    pub initial_decrease_ratio: f64,
}

/// The five features used for distances, prompts and baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub incident_time: NaiveTime,
    pub num_vehicles: u32,
    pub num_lanes_blocked: u32,
    pub pre_incident_relative_speed: f64,
    pub initial_decrease_ratio: f64,
}

/// Width of [`FeatureVector::coordinates`].
pub const COORDINATE_DIMS: usize = 6;

impl FeatureVector {
    pub fn new(incident: &IncidentFeatures, traffic: &TrafficFeatures) -> Self {
        FeatureVector {
            incident_time: incident.incident_time,
            num_vehicles: incident.num_vehicles,
            num_lanes_blocked: incident.num_lanes_blocked,
            pre_incident_relative_speed: traffic.pre_incident_relative_speed,
            initial_decrease_ratio: traffic.initial_decrease_ratio,
        }
    }

    pub fn minute_of_day(&self) -> u32 {
        self.incident_time.hour() * 60 + self.incident_time.minute()
    }

    /// Numeric coordinates before normalization. Time of day is encoded as
    /// `(sin, cos)` of its angle so that 23:55 and 00:05 are close.
    pub fn coordinates(&self) -> [f64; COORDINATE_DIMS] {
        let seconds = self.incident_time.num_seconds_from_midnight() as f64;
        let angle = seconds / 86_400.0 * std::f64::consts::TAU;
        [
            angle.sin(),
            angle.cos(),
            self.num_vehicles as f64,
            self.num_lanes_blocked as f64,
            self.pre_incident_relative_speed,
            self.initial_decrease_ratio,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub incident_id: String,
    pub features: FeatureVector,
    pub horizon_minutes: u32,
    pub truth: ImpactClass,
}

/// Checks that a horizon is a positive multiple of 5 minutes and returns it in steps.
pub fn horizon_steps(horizon_minutes: u32) -> Result<i64> {
    if horizon_minutes == 0 || i64::from(horizon_minutes) % STEP_MINUTES != 0 {
        return Err(Error::InvalidInput(format!(
            "horizon must be a positive multiple of {STEP_MINUTES} minutes, got {horizon_minutes}"
        )));
    }
    Ok(i64::from(horizon_minutes) / STEP_MINUTES)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionTask {
    pub incident_id: String,
    pub prediction_step: TimeStep,
    pub horizon_minutes: u32,
}

impl PredictionTask {
    pub fn new(incident: &Incident, timeline: &Timeline, horizon_minutes: u32) -> Result<Self> {
        horizon_steps(horizon_minutes)?;
        Ok(PredictionTask {
            incident_id: incident.id.clone(),
            prediction_step: timeline.prediction_step(incident.first_report_time),
            horizon_minutes,
        })
    }

    pub fn target_step(&self) -> TimeStep {
        self.prediction_step
            .offset(i64::from(self.horizon_minutes) / STEP_MINUTES)
    }
}
