//! Speed-based incident impact: historical profiles, relative speeds, the
//! pre-incident relative speed, per-sensor speed decrease ratios and the
//! overall ratio that defines the ground-truth impact class.

use std::collections::HashMap;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    horizon_steps, Direction, ImpactClass, Incident, Thresholds, TimeStep, Timeline,
    TrafficFeatures, SLOTS_PER_DAY,
};

/// Steps before the incident step used for the pre-incident relative speed.
pub const PRE_INCIDENT_STEPS: i64 = 3;
/// Default length of the upstream stretch, miles.
pub const DEFAULT_SPAN_MILES: f64 = 2.0;

const MILEPOST_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorMeta {
    pub sensor_id: String,
    pub roadway_id: String,
    pub direction: Direction,
    pub milepost: f64,
}

/// Speeds of one sensor on a dense step grid starting at `start`; `None` is a gap.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSpeedSeries {
    pub meta: SensorMeta,
    start: TimeStep,
    speeds: Vec<Option<f64>>,
}

impl SensorSpeedSeries {
    pub fn new(meta: SensorMeta, start: TimeStep, speeds: Vec<Option<f64>>) -> Result<Self> {
        if let Some(bad) = speeds
            .iter()
            .flatten()
            .find(|v| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidInput(format!(
                "sensor {}: invalid speed {bad}",
                meta.sensor_id
            )));
        }
        Ok(SensorSpeedSeries {
            meta,
            start,
            speeds,
        })
    }

    pub fn start(&self) -> TimeStep {
        self.start
    }

    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    pub fn get(&self, step: TimeStep) -> Option<f64> {
        let offset = step.index() - self.start.index();
        if offset < 0 {
            return None;
        }
        self.speeds.get(offset as usize).copied().flatten()
    }

    /// Removes a reading, turning it into a gap.
    pub fn clear(&mut self, step: TimeStep) {
        let offset = step.index() - self.start.index();
        if offset >= 0 {
            if let Some(slot) = self.speeds.get_mut(offset as usize) {
                *slot = None;
            }
        }
    }

    /// All present readings in step order.
    pub fn readings(&self) -> impl Iterator<Item = (TimeStep, f64)> + '_ {
        self.speeds
            .iter()
            .enumerate()
            .filter_map(move |(i, v)| v.map(|v| (self.start.offset(i as i64), v)))
    }
}

/// Speed series for a sensor network on one timeline.
#[derive(Debug, Clone)]
pub struct SpeedData {
    pub timeline: Timeline,
    series: Vec<SensorSpeedSeries>,
    index: HashMap<String, usize>,
}

impl SpeedData {
    pub fn new(timeline: Timeline, series: Vec<SensorSpeedSeries>) -> Result<Self> {
        let mut index = HashMap::with_capacity(series.len());
        for (i, s) in series.iter().enumerate() {
            if index.insert(s.meta.sensor_id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate sensor id {}",
                    s.meta.sensor_id
                )));
            }
        }
        Ok(SpeedData {
            timeline,
            series,
            index,
        })
    }

    pub fn series(&self) -> &[SensorSpeedSeries] {
        &self.series
    }

    pub fn series_mut(&mut self) -> &mut [SensorSpeedSeries] {
        &mut self.series
    }

    pub fn get(&self, sensor_id: &str) -> Option<&SensorSpeedSeries> {
        self.index.get(sensor_id).map(|&i| &self.series[i])
    }

    pub fn sensors(&self) -> impl Iterator<Item = &SensorMeta> {
        self.series.iter().map(|s| &s.meta)
    }

    pub fn speed(&self, sensor_id: &str, step: TimeStep) -> Option<f64> {
        self.get(sensor_id).and_then(|s| s.get(step))
    }

    /// First and last calendar day with a step in the data.
    pub fn date_span(&self) -> Option<DateRange> {
        let first = self
            .series
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.start)
            .min()?;
        let last = self
            .series
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.start.offset(s.len() as i64 - 1))
            .max()?;
        Some(DateRange {
            start: self.timeline.date_of(first),
            end: self.timeline.date_of(last),
        })
    }
}

/// Inclusive range of calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

#[derive(Debug, Clone, Default)]
struct SlotStats {
    mean: Vec<f64>,
    support: Vec<u32>,
}

/// Historical average speed per sensor and 5-minute slot of the day,
/// optionally split into weekday and weekend profiles.
#[derive(Debug, Clone)]
pub struct HistoricalProfile {
    timeline: Timeline,
    split_weekends: bool,
    sensors: HashMap<String, SlotStats>,
}

impl HistoricalProfile {
    fn slot_key(&self, step: TimeStep) -> usize {
        let slot = step.slot_of_day();
        if self.split_weekends && is_weekend(self.timeline.date_of(step)) {
            slot + SLOTS_PER_DAY as usize
        } else {
            slot
        }
    }

    /// Historical mean speed for the sensor at the slot of `step`.
    pub fn mean_at(&self, sensor_id: &str, step: TimeStep) -> Option<f64> {
        let key = self.slot_key(step);
        let stats = self.sensors.get(sensor_id)?;
        (stats.support[key] > 0).then(|| stats.mean[key])
    }

    pub fn support_at(&self, sensor_id: &str, step: TimeStep) -> u32 {
        let key = self.slot_key(step);
        self.sensors.get(sensor_id).map_or(0, |s| s.support[key])
    }

    /// Mean by raw slot-of-day for the all-days profile.
    pub fn mean_speed(&self, sensor_id: &str, slot: usize) -> Option<f64> {
        let stats = self.sensors.get(sensor_id)?;
        (stats.support.get(slot).copied().unwrap_or(0) > 0).then(|| stats.mean[slot])
    }

    pub fn support_count(&self, sensor_id: &str, slot: usize) -> u32 {
        self.sensors
            .get(sensor_id)
            .and_then(|s| s.support.get(slot).copied())
            .unwrap_or(0)
    }

    pub fn timeline(&self) -> &Timeline {
        &self.timeline
    }
}

fn is_weekend(date: NaiveDate) -> bool {
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Averages every sensor's readings by slot of day over the days in `period`.
/// Gaps are skipped; slots without observations (or with a zero mean) stay absent.
pub fn build_historical_profile(
    data: &SpeedData,
    period: DateRange,
    split_weekends: bool,
) -> Result<HistoricalProfile> {
    if data.series().is_empty() {
        return Err(Error::InvalidInput(
            "no speed series to build a historical profile from".into(),
        ));
    }
    if period.start > period.end {
        return Err(Error::InvalidInput(format!(
            "empty period {} .. {}",
            period.start, period.end
        )));
    }
    let width = if split_weekends {
        2 * SLOTS_PER_DAY
    } else {
        SLOTS_PER_DAY
    } as usize;
    let mut profile = HistoricalProfile {
        timeline: data.timeline,
        split_weekends,
        sensors: HashMap::new(),
    };
    for series in data.series() {
        let mut sums = vec![0.0; width];
        let mut support = vec![0u32; width];
        for (step, speed) in series.readings() {
            if !period.contains(data.timeline.date_of(step)) {
                continue;
            }
            let key = profile.slot_key(step);
            sums[key] += speed;
            support[key] += 1;
        }
        let mut mean = vec![0.0; width];
        for key in 0..width {
            if support[key] > 0 {
                mean[key] = sums[key] / f64::from(support[key]);
                if mean[key] <= 0.0 {
                    support[key] = 0;
                }
            }
        }
        if support.iter().any(|&n| n > 0) {
            profile
                .sensors
                .insert(series.meta.sensor_id.clone(), SlotStats { mean, support });
        }
    }
    Ok(profile)
}

/// Measured speed minus the historical mean at that slot, mph.
pub fn relative_speed(
    profile: &HistoricalProfile,
    sensor_id: &str,
    step: TimeStep,
    measured: f64,
) -> Result<f64> {
    let mean = profile
        .mean_at(sensor_id, step)
        .ok_or_else(|| Error::MissingHistory {
            sensor: sensor_id.to_string(),
            slot: step.slot_of_day(),
        })?;
    Ok(measured - mean)
}

/// Sensors on the incident's roadway and direction within `span_miles`
/// upstream (against travel) of the incident, nearest first. The interval is
/// closed at both ends.
pub fn upstream_sensors<'a>(
    sensors: impl IntoIterator<Item = &'a SensorMeta>,
    incident: &Incident,
    span_miles: f64,
) -> Result<Vec<SensorMeta>> {
    let increasing = incident.direction.mileposts_increase();
    let mut found: Vec<(f64, &SensorMeta)> = sensors
        .into_iter()
        .filter(|s| s.roadway_id == incident.roadway_id && s.direction == incident.direction)
        .filter_map(|s| {
            // distance measured against the direction of travel
            let behind = if increasing {
                incident.milepost - s.milepost
            } else {
                s.milepost - incident.milepost
            };
            (behind >= -MILEPOST_EPS && behind <= span_miles + MILEPOST_EPS)
                .then_some((behind.max(0.0), s))
        })
        .collect();
    if found.is_empty() {
        return Err(Error::NoUpstreamCoverage {
            incident: incident.id.clone(),
        });
    }
    found.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| a.1.sensor_id.cmp(&b.1.sensor_id))
    });
    Ok(found.into_iter().map(|(_, s)| s.clone()).collect())
}

/// Mean relative speed over every available (sensor, step) pair in the three
/// steps before `incident_step`.
pub fn pre_incident_relative_speed(
    profile: &HistoricalProfile,
    data: &SpeedData,
    upstream: &[SensorMeta],
    incident_step: TimeStep,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for sensor in upstream {
        for back in 1..=PRE_INCIDENT_STEPS {
            let step = incident_step.offset(-back);
            let (Some(measured), Some(mean)) = (
                data.speed(&sensor.sensor_id, step),
                profile.mean_at(&sensor.sensor_id, step),
            ) else {
                continue;
            };
            sum += measured - mean;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData(format!(
            "no upstream readings with history in the {PRE_INCIDENT_STEPS} steps before step {}",
            incident_step.index()
        )));
    }
    Ok(sum / n as f64)
}

/// `max((rho - v_r) / v_hat, 0)`.
pub fn speed_decrease_ratio(rho: f64, relative: f64, historical: f64) -> Result<f64> {
    if !(rho.is_finite() && relative.is_finite() && historical.is_finite()) || historical <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "speed decrease ratio needs finite inputs and a positive historical speed \
             (rho {rho}, relative {relative}, historical {historical})"
        )));
    }
    Ok(((rho - relative) / historical).max(0.0))
}

/// Mean of the per-sensor speed decrease ratios at `step` over the upstream
/// sensors that have both a reading and a historical mean.
pub fn overall_speed_decrease_ratio(
    profile: &HistoricalProfile,
    data: &SpeedData,
    upstream: &[SensorMeta],
    rho: f64,
    step: TimeStep,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for sensor in upstream {
        let (Some(measured), Some(mean)) = (
            data.speed(&sensor.sensor_id, step),
            profile.mean_at(&sensor.sensor_id, step),
        ) else {
            continue;
        };
        sum += speed_decrease_ratio(rho, measured - mean, mean)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InsufficientData(format!(
            "no upstream readings with history at step {}",
            step.index()
        )));
    }
    Ok(sum / n as f64)
}

/// Bundles the inputs shared by every per-incident traffic computation.
#[derive(Debug, Clone, Copy)]
pub struct TrafficContext<'a> {
    pub data: &'a SpeedData,
    pub profile: &'a HistoricalProfile,
    pub span_miles: f64,
    pub thresholds: Thresholds,
}

impl<'a> TrafficContext<'a> {
    pub fn new(data: &'a SpeedData, profile: &'a HistoricalProfile) -> Self {
        TrafficContext {
            data,
            profile,
            span_miles: DEFAULT_SPAN_MILES,
            thresholds: Thresholds::default(),
        }
    }

    pub fn upstream(&self, incident: &Incident) -> Result<Vec<SensorMeta>> {
        upstream_sensors(self.data.sensors(), incident, self.span_miles)
    }

    pub fn incident_step(&self, incident: &Incident) -> TimeStep {
        self.data
            .timeline
            .prediction_step(incident.first_report_time)
    }

    pub fn traffic_features(&self, incident: &Incident) -> Result<TrafficFeatures> {
        build_traffic_features(
            self.profile,
            self.data,
            incident,
            self.incident_step(incident),
            self.span_miles,
        )
    }

    /// Overall speed decrease ratio `horizon_minutes` after the prediction step.
    pub fn target_ratio(&self, incident: &Incident, horizon_minutes: u32) -> Result<f64> {
        let upstream = self.upstream(incident)?;
        let step = self.incident_step(incident);
        let rho = pre_incident_relative_speed(self.profile, self.data, &upstream, step)?;
        let target = step.offset(horizon_steps(horizon_minutes)?);
        overall_speed_decrease_ratio(self.profile, self.data, &upstream, rho, target)
    }

    pub fn label(&self, incident: &Incident, horizon_minutes: u32) -> Result<ImpactClass> {
        self.thresholds
            .classify(self.target_ratio(incident, horizon_minutes)?)
    }
}

/// Ground-truth impact class at `horizon_minutes` after the prediction step.
pub fn label_ground_truth(
    profile: &HistoricalProfile,
    data: &SpeedData,
    incident: &Incident,
    horizon_minutes: u32,
    thresholds: Thresholds,
) -> Result<ImpactClass> {
    TrafficContext {
        data,
        profile,
        span_miles: DEFAULT_SPAN_MILES,
        thresholds,
    }
    .label(incident, horizon_minutes)
}

/// Pre-incident relative speed and the overall decrease ratio at `prediction_step`.
pub fn build_traffic_features(
    profile: &HistoricalProfile,
    data: &SpeedData,
    incident: &Incident,
    prediction_step: TimeStep,
    span_miles: f64,
) -> Result<TrafficFeatures> {
    let upstream = upstream_sensors(data.sensors(), incident, span_miles)?;
    let rho = pre_incident_relative_speed(profile, data, &upstream, prediction_step)?;
    let initial = overall_speed_decrease_ratio(profile, data, &upstream, rho, prediction_step)?;
    Ok(TrafficFeatures {
        pre_incident_relative_speed: rho,
        initial_decrease_ratio: initial,
    })
}
