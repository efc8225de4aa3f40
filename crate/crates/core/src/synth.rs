//! Synthetic corridors, speeds and incident logs with designed impact classes.
//!
//! Every corridor carries a smooth diurnal speed profile plus noise. Each
//! incident overwrites the speeds of its upstream sensors around the report
//! time so that the labeling procedure recovers the designed class, and gets
//! an operator log whose counts match the designed features.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{write_incidents, write_sensor_meta, write_speed_csv};
use crate::error::{Error, Result};
use crate::extraction::rules::{FLAG_ADVERSE_WEATHER, FLAG_AMBULANCE_OR_TOW, FLAG_LARGE_TRUCK};
use crate::model::{
    horizon_steps, Direction, ImpactClass, Incident, LogLine, PerClass, Thresholds, TimeStep,
    Timeline, SLOTS_PER_DAY, STEP_MINUTES,
};
use crate::rng::{self, Rng};
use crate::traffic::{
    upstream_sensors, SensorMeta, SensorSpeedSeries, SpeedData, DEFAULT_SPAN_MILES,
};

/// Lowest speed a designed drop may produce, mph.
const MIN_DESIGN_SPEED: f64 = 2.0;
/// Steps before the incident step that carry the designed pre-incident speed.
const PRE_STEPS: i64 = 3;
const RECOVERY_STEPS: i64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub rng_seed: u64,
    pub start_date: NaiveDate,
    pub days: u32,
    /// Roadway names; even positions run N/S, odd positions E/W.
    pub roadways: Vec<String>,
    pub corridor_miles: f64,
    pub sensor_spacing_miles: f64,
    pub free_flow_mph: f64,
    /// Largest diurnal slowdown at the peaks, mph.
    pub peak_drop_mph: f64,
    pub noise_sd_mph: f64,
    pub gap_probability: f64,
    pub incidents: usize,
    pub class_mix: PerClass<f64>,
    /// Range of the designed overall decrease ratio at the horizons.
    pub bands: PerClass<[f64; 2]>,
    /// Ratio at the prediction step as a fraction of the designed peak.
    pub initial_fraction: [f64; 2],
    /// Range of the designed pre-incident relative speed per class, mph.
    pub pre_incident_speed: PerClass<[f64; 2]>,
    /// Upstream stretch whose speeds are overwritten, miles.
    pub drop_extent_miles: f64,
    /// How long the full drop lasts after it builds up, minutes.
    pub drop_duration_minutes: u32,
    pub horizons: Vec<u32>,
    pub thresholds: Thresholds,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rng_seed: 7,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            days: 42,
            roadways: vec!["I-880".into(), "SR-92".into()],
            corridor_miles: 15.0,
            sensor_spacing_miles: 0.5,
            free_flow_mph: 65.0,
            peak_drop_mph: 15.0,
            noise_sd_mph: 1.0,
            gap_probability: 0.0005,
            incidents: 500,
            class_mix: PerClass {
                mild: 0.896,
                moderate: 0.083,
                severe: 0.021,
            },
            bands: PerClass {
                mild: [0.02, 0.12],
                moderate: [0.28, 0.42],
                severe: [0.6, 0.75],
            },
            initial_fraction: [0.5, 0.6],
            pre_incident_speed: PerClass {
                mild: [-2.0, 3.0],
                moderate: [-6.0, -2.0],
                severe: [-9.0, -5.0],
            },
            drop_extent_miles: DEFAULT_SPAN_MILES,
            drop_duration_minutes: 45,
            horizons: vec![15, 30],
            thresholds: Thresholds::default(),
        }
    }
}

fn ordered(range: [f64; 2], name: &str) -> Result<()> {
    if !(range[0].is_finite() && range[1].is_finite() && range[0] <= range[1]) {
        return Err(Error::Config(format!(
            "{name} must be an ordered pair of finite numbers, got {range:?}"
        )));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.days == 0 {
            return fail("days must be positive".into());
        }
        if self.roadways.is_empty() {
            return fail("at least one roadway is required".into());
        }
        if self.sensor_spacing_miles.is_nan() || self.sensor_spacing_miles <= 0.0 {
            return fail("sensor_spacing_miles must be positive".into());
        }
        if self.corridor_miles
            < 2.0 * self.drop_extent_miles.max(DEFAULT_SPAN_MILES) + self.sensor_spacing_miles
        {
            return fail(format!(
                "corridor_miles {} leaves no room for incidents",
                self.corridor_miles
            ));
        }
        if !(self.free_flow_mph > 0.0
            && self.peak_drop_mph >= 0.0
            && self.peak_drop_mph < self.free_flow_mph)
        {
            return fail("need free_flow_mph > peak_drop_mph >= 0".into());
        }
        if self.noise_sd_mph.is_nan()
            || self.noise_sd_mph < 0.0
            || !(0.0..1.0).contains(&self.gap_probability)
        {
            return fail("noise_sd_mph must be >= 0 and gap_probability in [0, 1)".into());
        }
        if self.class_mix.iter().any(|(_, &p)| p.is_nan() || p < 0.0)
            || self.class_mix.iter().map(|(_, p)| p).sum::<f64>() <= 0.0
        {
            return fail("class_mix must be non-negative with a positive sum".into());
        }
        ordered(self.initial_fraction, "initial_fraction")?;
        if !(self.initial_fraction[0] > 0.0 && self.initial_fraction[1] <= 1.0) {
            return fail("initial_fraction must lie in (0, 1]".into());
        }
        self.thresholds.validate()?;
        if self.horizons.is_empty() {
            return fail("at least one horizon is required".into());
        }
        for &h in &self.horizons {
            horizon_steps(h)?;
        }
        let longest = *self.horizons.iter().max().expect("non-empty");
        if self.drop_duration_minutes < longest + 2 * STEP_MINUTES as u32 {
            return fail(format!(
                "drop_duration_minutes must cover the longest horizon ({longest}) plus 10 minutes"
            ));
        }
        let slowest_base = self.free_flow_mph - self.peak_drop_mph;
        for (class, band) in self.bands.iter() {
            ordered(*band, &format!("{class} band"))?;
            ordered(
                self.pre_incident_speed[class],
                &format!("{class} pre_incident_speed"),
            )?;
            if band[0] < 0.0 {
                return fail(format!("{class} band must be non-negative"));
            }
            for edge in band {
                if self.thresholds.classify(*edge)? != class {
                    return fail(format!("{class} band {band:?} crosses a class threshold"));
                }
            }
            // the deepest drop must keep speeds positive from the slowest base
            let lowest = slowest_base * (1.0 - band[1]) + self.pre_incident_speed[class][0];
            if self.class_mix[class] > 0.0 && lowest < MIN_DESIGN_SPEED {
                return fail(format!(
                    "{class} band {band:?} is infeasible: a {:.0}% drop from {slowest_base} mph with pre-incident speed {} leaves {lowest:.1} mph",
                    band[1] * 100.0,
                    self.pre_incident_speed[class][0]
                ));
            }
        }
        Ok(())
    }

    fn directions(&self, road_index: usize) -> [Direction; 2] {
        if road_index % 2 == 0 {
            [Direction::North, Direction::South]
        } else {
            [Direction::East, Direction::West]
        }
    }

    fn total_steps(&self) -> i64 {
        i64::from(self.days) * SLOTS_PER_DAY
    }

    /// Steps of the full drop, starting two steps after the incident step.
    fn plateau_steps(&self) -> i64 {
        i64::from(self.drop_duration_minutes) / STEP_MINUTES
    }
}

/// Designed attributes of one synthetic incident.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub incident_id: String,
    pub designed_class: ImpactClass,
    pub designed_peak_ratio: f64,
    pub designed_initial_ratio: f64,
    pub designed_pre_incident_speed: f64,
    pub num_vehicles: u32,
    pub num_lanes_blocked: u32,
    pub extended: BTreeMap<String, bool>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub speed: SpeedData,
    pub incidents: Vec<Incident>,
    pub truth: Vec<TruthRecord>,
}

/// Where a dataset lives on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthPaths {
    pub sensors: PathBuf,
    pub speeds: PathBuf,
    pub incidents: PathBuf,
    pub glossary: PathBuf,
    pub truth: PathBuf,
}

impl SynthPaths {
    pub fn in_dir(dir: &Path) -> Self {
        SynthPaths {
            sensors: dir.join("sensors.csv"),
            speeds: dir.join("speeds.csv"),
            incidents: dir.join("incidents.txt"),
            glossary: dir.join("glossary.tsv"),
            truth: dir.join("truth.jsonl"),
        }
    }
}

/// Abbreviations used by the generated logs.
pub const GLOSSARY: [(&str, &str); 15] = [
    ("TC", "traffic collision"),
    ("VEH", "vehicle"),
    ("VEHS", "vehicles"),
    ("LN", "lane"),
    ("LNS", "lanes"),
    ("BLKG", "blocking"),
    ("BLKD", "blocked"),
    ("RS", "right shoulder"),
    ("CD", "center divider"),
    ("1141", "ambulance requested"),
    ("1185", "tow truck requested"),
    ("ENRT", "en route"),
    ("RDWY", "roadway"),
    ("ADDL", "additional"),
    ("SIG ALERT", "sig alert"),
];

pub fn glossary_tsv() -> String {
    let mut out = String::from("# abbreviation\texpansion\n");
    for (k, v) in GLOSSARY {
        out.push_str(&format!("{k}\t{v}\n"));
    }
    out
}

fn bump(minutes: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((minutes - center) / width).powi(2)).exp()
}

/// Expected speed of a sensor at a slot of day.
fn base_speed(config: &SynthConfig, sensitivity: f64, slot: usize) -> f64 {
    let minutes = slot as f64 * STEP_MINUTES as f64;
    let peaks = (bump(minutes, 8.0 * 60.0, 60.0) + bump(minutes, 17.5 * 60.0, 75.0)).min(1.0);
    config.free_flow_mph - config.peak_drop_mph * sensitivity * peaks
}

fn build_sensors(config: &SynthConfig) -> Vec<SensorMeta> {
    let count = (config.corridor_miles / config.sensor_spacing_miles + 1e-9).floor() as usize + 1;
    let mut out = Vec::new();
    for (r, road) in config.roadways.iter().enumerate() {
        for dir in config.directions(r) {
            for k in 0..count {
                out.push(SensorMeta {
                    sensor_id: format!("R{r}{}{k:03}", dir.code()),
                    roadway_id: road.clone(),
                    direction: dir,
                    milepost: (k as f64 * config.sensor_spacing_miles * 1000.0).round() / 1000.0,
                });
            }
        }
    }
    out
}

fn largest_remainder(mix: &PerClass<f64>, n: usize) -> PerClass<usize> {
    let total: f64 = mix.iter().map(|(_, p)| p).sum();
    let exact = mix.map(|_, p| p / total * n as f64);
    let mut counts = exact.map(|_, e| e.floor() as usize);
    let mut left = n - counts.iter().map(|(_, c)| c).sum::<usize>();
    let mut order: Vec<ImpactClass> = ImpactClass::ALL.to_vec();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    for class in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        counts[class] += 1;
        left -= 1;
    }
    counts
}

struct Placement {
    class: ImpactClass,
    corridor: usize,
    milepost: f64,
    step: i64,
    report_offset_min: i64,
}

struct Design {
    class: ImpactClass,
    peak: f64,
    initial: f64,
    rho: f64,
    vehicles: u32,
    lanes: u32,
    large_truck: bool,
    ambulance: bool,
    weather: bool,
}

fn design(config: &SynthConfig, class: ImpactClass, rng: &mut Rng) -> Design {
    let band = config.bands[class];
    let peak = rng.random_range(band[0]..=band[1]);
    let initial = peak * rng.random_range(config.initial_fraction[0]..=config.initial_fraction[1]);
    let (vehicles, lanes) = match class {
        ImpactClass::Mild => (rng.random_range(1..=2), 0),
        ImpactClass::Moderate => (rng.random_range(2..=3), 1),
        ImpactClass::Severe => (rng.random_range(4..=5), rng.random_range(2..=3)),
    };
    Design {
        class,
        peak,
        initial,
        rho: rng.random_range(
            config.pre_incident_speed[class][0]..=config.pre_incident_speed[class][1],
        ),
        vehicles,
        lanes,
        large_truck: rng.random_bool(if class == ImpactClass::Severe {
            0.4
        } else {
            0.1
        }),
        ambulance: rng.random_bool(match class {
            ImpactClass::Mild => 0.2,
            ImpactClass::Moderate => 0.5,
            ImpactClass::Severe => 0.9,
        }),
        weather: rng.random_bool(0.1),
    }
}

const NUMBER_WORDS: [&str; 6] = ["ZERO", "ONE", "TWO", "THREE", "FOUR", "FIVE"];

/// Operator log consistent with the design up to the end of the report step,
/// followed by later lines that would change the counts.
fn write_log(
    d: &Design,
    report: NaiveDateTime,
    cutoff: NaiveDateTime,
    rng: &mut Rng,
) -> Vec<LogLine> {
    let mut early: Vec<String> = Vec::new();
    early.push(match (d.vehicles, rng.random_range(0..3)) {
        (1, _) => "SOLO VEH TC".to_string(),
        (n, 0) => format!("TC {n} VEHS"),
        (n, 1) => format!("{} VEH TC", NUMBER_WORDS[n as usize]),
        (n, _) => format!("TC INVOLVING {n} VEHS"),
    });
    if d.lanes == 0 {
        early.push(if rng.random_bool(0.5) {
            "VEHS ON RS".into()
        } else {
            "ALL VEHS OFF TO RS".into()
        });
    } else {
        let first = rng.random_range(1..=(5 - d.lanes));
        let numbers: Vec<String> = (first..first + d.lanes).map(|n| format!("#{n}")).collect();
        early.push(match rng.random_range(0..3) {
            0 => format!(
                "BLKG {} {}",
                numbers.join(" "),
                if d.lanes == 1 { "LN" } else { "LNS" }
            ),
            1 if d.lanes > 1 => format!("{} LNS BLKD", d.lanes),
            _ => format!(
                "{} {} BLKD",
                numbers.join(" "),
                if d.lanes == 1 { "LN" } else { "LNS" }
            ),
        });
    }
    if d.large_truck {
        early.push("BIG RIG INVOLVED".into());
    }
    if d.ambulance {
        early.push("1141 ENRT".into());
    }
    if d.weather {
        early.push("RDWY WET, LIGHT RAIN".into());
    }
    let mut lines: Vec<LogLine> = early
        .into_iter()
        .enumerate()
        .map(|(k, text)| LogLine {
            time: (report + Duration::minutes(k as i64)).min(cutoff),
            text,
        })
        .collect();
    let late = [
        (
            3,
            format!("ADDL VEH INVOLVED, {} VEHS TOTAL", d.vehicles + 2),
        ),
        (8, "1185 ENRT".to_string()),
        (25, "ALL LNS OPEN".to_string()),
    ];
    for (minutes, text) in late {
        lines.push(LogLine {
            time: cutoff + Duration::minutes(minutes),
            text,
        });
    }
    if d.class == ImpactClass::Severe {
        lines.push(LogLine {
            time: cutoff + Duration::minutes(4),
            text: "SIG ALERT ISSUED".into(),
        });
        lines.sort_by_key(|l| l.time);
    }
    lines
}

/// Per-sensor base profile by slot of day, and the noisy speeds with gaps.
type Baseline = (Vec<Vec<f64>>, Vec<Vec<Option<f64>>>);

fn generate_baseline(config: &SynthConfig, sensors: &[SensorMeta]) -> Result<Baseline> {
    let noise = Normal::new(0.0, config.noise_sd_mph).map_err(|e| Error::Config(e.to_string()))?;
    let seed = rng::derive_seed(config.rng_seed, &[1]);
    let total = config.total_steps() as usize;
    let rows: Vec<(Vec<f64>, Vec<Option<f64>>)> = (0..sensors.len())
        .into_par_iter()
        .map(|s| {
            let mut r = rng::stream(seed, s as u64);
            let sensitivity = r.random_range(0.7..=1.0);
            let base: Vec<f64> = (0..SLOTS_PER_DAY as usize)
                .map(|slot| base_speed(config, sensitivity, slot))
                .collect();
            let speeds = (0..total)
                .map(|i| {
                    let v = (base[i % SLOTS_PER_DAY as usize] + noise.sample(&mut r)).max(1.0);
                    (!r.random_bool(config.gap_probability)).then_some(v)
                })
                .collect();
            (base, speeds)
        })
        .collect();
    Ok(rows.into_iter().unzip())
}

pub fn synth_dataset(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let sensors = build_sensors(config);
    let (base, mut speeds) = generate_baseline(config, &sensors)?;
    let timeline = Timeline::starting_at(config.start_date.and_hms_opt(0, 0, 0).expect("midnight"));
    let corridors: Vec<(String, Direction)> = config
        .roadways
        .iter()
        .enumerate()
        .flat_map(|(r, road)| {
            config
                .directions(r)
                .into_iter()
                .map(move |d| (road.clone(), d))
        })
        .collect();

    let mut r = rng::stream(config.rng_seed, 2);
    let counts = largest_remainder(&config.class_mix, config.incidents);
    // each class is spread evenly over the days so any chronological split sees all of them
    let mut targets: Vec<(ImpactClass, f64)> = Vec::with_capacity(config.incidents);
    for class in ImpactClass::ALL {
        for j in 0..counts[class] {
            targets.push((class, (j as f64 + r.random::<f64>()) / counts[class] as f64));
        }
    }
    targets.shuffle(&mut r);

    let window_after = 2 + config.plateau_steps() + RECOVERY_STEPS;
    let total = config.total_steps();
    let separation = config.drop_extent_miles.max(DEFAULT_SPAN_MILES) + config.sensor_spacing_miles;
    let (lo_mp, hi_mp) = (
        DEFAULT_SPAN_MILES,
        config.corridor_miles - DEFAULT_SPAN_MILES,
    );
    let mut placements: Vec<Placement> = Vec::with_capacity(targets.len());
    let cyclic = |a: i64, b: i64| {
        let d = (a - b).rem_euclid(SLOTS_PER_DAY);
        d.min(SLOTS_PER_DAY - d)
    };
    for &(class, fraction) in &targets {
        let day = ((fraction * f64::from(config.days)) as i64).min(i64::from(config.days) - 1);
        let day_start = (day * SLOTS_PER_DAY).max(PRE_STEPS);
        let day_end = ((day + 1) * SLOTS_PER_DAY).min(total - window_after);
        let mut placed = None;
        for attempt in 0..20_000 {
            // keep the target day and heavier incidents apart in time of day while that is feasible
            let strict = attempt < 10_000 && day_start < day_end;
            let corridor = r.random_range(0..corridors.len());
            let milepost = (r.random_range(lo_mp..=hi_mp) * 10.0).round() / 10.0;
            let step = if strict {
                r.random_range(day_start..day_end)
            } else {
                r.random_range(PRE_STEPS..total - window_after)
            };
            // heavier drops would bias the historical mean at the same time of day on other days
            let clash = placements.iter().any(|p| {
                p.corridor == corridor
                    && (p.milepost - milepost).abs() < separation
                    && ((p.step - step).abs() <= window_after + PRE_STEPS
                        || (strict
                            && (p.class != ImpactClass::Mild || class != ImpactClass::Mild)
                            && cyclic(p.step, step) <= window_after + PRE_STEPS))
            });
            if !clash {
                placed = Some(Placement {
                    class,
                    corridor,
                    milepost,
                    step,
                    report_offset_min: r.random_range(0..STEP_MINUTES),
                });
                break;
            }
        }
        placements.push(placed.ok_or_else(|| {
            Error::Config(format!(
                "cannot place {} non-overlapping incidents; add days or corridor length",
                targets.len()
            ))
        })?);
    }

    let index_of: BTreeMap<&str, usize> = sensors
        .iter()
        .enumerate()
        .map(|(i, s)| (s.sensor_id.as_str(), i))
        .collect();
    let mut drafts: Vec<(Incident, TruthRecord)> = Vec::with_capacity(targets.len());
    for p in &placements {
        let d = design(config, p.class, &mut r);
        let (road, direction) = corridors[p.corridor].clone();
        let step = TimeStep(p.step);
        let report = timeline.start_of(step) + Duration::minutes(p.report_offset_min);
        let mut incident = Incident {
            id: String::new(),
            first_report_time: report,
            roadway_id: road,
            direction,
            milepost: p.milepost,
            log_lines: Vec::new(),
        };
        let upstream = upstream_sensors(&sensors, &incident, config.drop_extent_miles)?;
        let count = upstream.len();
        // nearer sensors drop further; weights average to one
        let mut weights: Vec<f64> = (0..count)
            .map(|k| {
                if count > 1 {
                    1.1 - 0.2 * k as f64 / (count - 1) as f64
                } else {
                    1.0
                }
            })
            .collect();
        let slowest = upstream
            .iter()
            .map(|s| {
                (p.step..=p.step + window_after)
                    .map(|t| base[index_of[s.sensor_id.as_str()]][TimeStep(t).slot_of_day()])
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min);
        if slowest * (1.0 - d.peak * weights[0]) + d.rho < MIN_DESIGN_SPEED {
            weights.iter_mut().for_each(|w| *w = 1.0);
        }
        for (meta, w) in upstream.iter().zip(&weights) {
            let s = index_of[meta.sensor_id.as_str()];
            let noise_sd = config.noise_sd_mph * 0.3;
            for t in p.step - PRE_STEPS..=p.step + window_after {
                let offset = t - p.step;
                let ratio = match offset {
                    o if o < 0 => 0.0,
                    0 => d.initial,
                    1 => 0.5 * (d.initial + d.peak),
                    o if o <= 1 + config.plateau_steps() => d.peak,
                    o => d.peak * (window_after - o + 1) as f64 / (RECOVERY_STEPS + 1) as f64,
                };
                let b = base[s][TimeStep(t).slot_of_day()];
                let jitter = if noise_sd > 0.0 {
                    r.random_range(-noise_sd..=noise_sd)
                } else {
                    0.0
                };
                let v = b * (1.0 - ratio * w) + d.rho + jitter;
                speeds[s][t as usize] = Some(v.max(0.0));
            }
        }
        let cutoff = timeline.end_of(step);
        incident.log_lines = write_log(&d, report, cutoff, &mut r);
        let extended = [
            (FLAG_LARGE_TRUCK, d.large_truck),
            (FLAG_AMBULANCE_OR_TOW, d.ambulance),
            (FLAG_ADVERSE_WEATHER, d.weather),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let truth = TruthRecord {
            incident_id: String::new(),
            designed_class: d.class,
            designed_peak_ratio: d.peak,
            designed_initial_ratio: d.initial,
            designed_pre_incident_speed: d.rho,
            num_vehicles: d.vehicles,
            num_lanes_blocked: d.lanes,
            extended,
        };
        drafts.push((incident, truth));
    }
    drafts.sort_by(|a, b| {
        a.0.first_report_time
            .cmp(&b.0.first_report_time)
            .then(a.0.roadway_id.cmp(&b.0.roadway_id))
            .then(a.0.milepost.total_cmp(&b.0.milepost))
    });
    let (mut incidents, mut truth): (Vec<Incident>, Vec<TruthRecord>) = drafts.into_iter().unzip();
    for (i, (inc, t)) in incidents.iter_mut().zip(truth.iter_mut()).enumerate() {
        inc.id = format!("INC-{:05}", i + 1);
        t.incident_id = inc.id.clone();
    }

    let series = sensors
        .into_iter()
        .zip(speeds)
        .map(|(meta, s)| SensorSpeedSeries::new(meta, TimeStep(0), s))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthDataset {
        config: config.clone(),
        speed: SpeedData::new(timeline, series)?,
        incidents,
        truth,
    })
}

pub fn write_dataset(dir: &Path, dataset: &SynthDataset) -> Result<SynthPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = SynthPaths::in_dir(dir);
    let sensors: Vec<SensorMeta> = dataset.speed.sensors().cloned().collect();
    write_sensor_meta(&paths.sensors, &sensors)?;
    write_speed_csv(&paths.speeds, &dataset.speed)?;
    write_incidents(&paths.incidents, &dataset.incidents)?;
    std::fs::write(&paths.glossary, glossary_tsv()).map_err(|e| Error::io(&paths.glossary, e))?;
    let mut truth = String::new();
    for t in &dataset.truth {
        truth.push_str(&serde_json::to_string(t)?);
        truth.push('\n');
    }
    std::fs::write(&paths.truth, truth).map_err(|e| Error::io(&paths.truth, e))?;
    Ok(paths)
}

pub fn load_truth(path: &Path) -> Result<Vec<TruthRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, n + 1, e.to_string())))
        .collect()
}

/// Slot of day of a timestamp, for tests and diagnostics.
pub fn slot_of(ts: NaiveDateTime) -> usize {
    ((ts.hour() * 60 + ts.minute()) as i64 / STEP_MINUTES) as usize
}
