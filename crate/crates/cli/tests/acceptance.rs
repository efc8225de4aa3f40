//! Acceptance checks. Prints one line per criterion and exits non-zero when
//! any of them fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use impact_core::config::RunConfig;
use impact_core::data::chronological_split;
use impact_core::eval::{f1_scores, ConfusionMatrix};
use impact_core::gateway::{render_user_prompt, Gateway, ImpactPredictor, ProviderConfig, Query};
use impact_core::rng::{seeded, stream};
use impact_core::selection::{
    class_centroids, evaluate_candidate, filter_outliers, generate_candidates,
    near_boundary_subset, random_examples, sample_example_set, select_examples, select_top_k,
    CandidateResult, EmbeddedPool, SamplingFrame, SelectionConfig,
};
use impact_core::synth::{synth_dataset, SynthConfig};
use impact_core::traffic::{
    build_historical_profile, DateRange, SensorMeta, SensorSpeedSeries, SpeedData, TrafficContext,
};
use impact_core::{
    impact_class_from_ratio, Direction, FeatureVector, ImpactClass, Incident, LabeledExample,
    Thresholds, TimeStep, Timeline,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

type Outcome = Result<String, String>;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Verdict {
    let start = Instant::now();
    let outcome = f();
    let took = start.elapsed();
    match outcome {
        Ok(_) if took > limit => Verdict::Fail(format!("took {took:.2?}, limit {limit:?}")),
        Ok(detail) => Verdict::Pass(format!("{detail} ({took:.2?})")),
        Err(e) => Verdict::Fail(e),
    }
}

// 1

fn metric_oracle() -> Outcome {
    let matrix = ConfusionMatrix::from_rows([[432, 73, 4], [8, 21, 7], [1, 2, 8]]);
    let f1 = f1_scores(&matrix);
    check(
        (f1.macro_f1 - 0.59).abs() <= 0.005,
        format!("macro F1 {:.4}", f1.macro_f1),
    )?;
    check(
        (f1.weighted_f1 - 0.86).abs() <= 0.01,
        format!("weighted F1 {:.4}", f1.weighted_f1),
    )?;
    Ok(format!(
        "macro {:.4}, weighted {:.4}",
        f1.macro_f1, f1.weighted_f1
    ))
}

// 2

const SLOTS: i64 = 288;

struct Fixture {
    data: SpeedData,
    period: DateRange,
    incident: Incident,
    horizon: u32,
}

fn random_fixture(seed: u64, clamp: bool) -> Fixture {
    let mut r = stream(seed, 11);
    let days = r.random_range(2..=4i64);
    let epoch = NaiveDate::from_ymd_opt(2024, 3, 4)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let timeline = Timeline::starting_at(epoch);
    let direction = [
        Direction::North,
        Direction::South,
        Direction::East,
        Direction::West,
    ][r.random_range(0..4)];
    let milepost = (r.random_range(50..=100) as f64) / 10.0;
    let report_minute = (days - 1) * 1440 + r.random_range(30..1300);
    let report = epoch
        + chrono::Duration::minutes(report_minute)
        + chrono::Duration::seconds(r.random_range(0..60));
    let horizon = if r.random_bool(0.5) { 15 } else { 30 };
    let step = report_minute / 5;
    let target = step + i64::from(horizon) / 5;

    let n_sensors = r.random_range(1..=7);
    let mut series = Vec::new();
    for s in 0..n_sensors {
        let (roadway, dir) = match r.random_range(0..10) {
            0 => ("R2", direction),
            1 => ("R1", opposite(direction)),
            _ => ("R1", direction),
        };
        let mp = match r.random_range(0..8) {
            0 => milepost - 2.0,
            1 => milepost + 2.0,
            2 => milepost,
            _ => milepost + (r.random_range(-30..=30) as f64) / 10.0,
        };
        let gap = r.random_range(0.0..0.3);
        let mut speeds: Vec<Option<f64>> = (0..days * SLOTS)
            .map(|_| (!r.random_bool(gap)).then(|| r.random_range(10.0..75.0)))
            .collect();
        if clamp {
            // every day has a reading at the target slot, far below the spike
            for d in 0..days {
                let t = (d * SLOTS + target.rem_euclid(SLOTS)) as usize;
                speeds[t] = Some(if t as i64 == target {
                    500.0
                } else {
                    r.random_range(10.0..75.0)
                });
            }
        }
        let meta = SensorMeta {
            sensor_id: format!("S{s}"),
            roadway_id: roadway.into(),
            direction: dir,
            milepost: mp,
        };
        series.push(SensorSpeedSeries::new(meta, TimeStep(0), speeds).unwrap());
    }
    let data = SpeedData::new(timeline, series).unwrap();
    let period = DateRange {
        start: epoch.date(),
        end: epoch.date() + chrono::Duration::days(days - 1),
    };
    let incident = Incident {
        id: format!("F{seed}"),
        first_report_time: report,
        roadway_id: "R1".into(),
        direction,
        milepost,
        log_lines: vec![],
    };
    Fixture {
        data,
        period,
        incident,
        horizon,
    }
}

fn opposite(d: Direction) -> Direction {
    match d {
        Direction::North => Direction::South,
        Direction::South => Direction::North,
        Direction::East => Direction::West,
        Direction::West => Direction::East,
    }
}

/// Straight evaluation of the overall speed decrease ratio from raw readings.
fn brute_force_ratio(f: &Fixture) -> Option<f64> {
    let epoch = f.data.timeline.epoch();
    let step = (f.incident.first_report_time - epoch)
        .num_seconds()
        .div_euclid(300);
    let target = step + i64::from(f.horizon) / 5;
    let forward = matches!(f.incident.direction, Direction::North | Direction::East);
    let series: Vec<&SensorSpeedSeries> = f
        .data
        .series()
        .iter()
        .filter(|s| {
            s.meta.roadway_id == f.incident.roadway_id && s.meta.direction == f.incident.direction
        })
        .filter(|s| {
            let behind = if forward {
                f.incident.milepost - s.meta.milepost
            } else {
                s.meta.milepost - f.incident.milepost
            };
            (-1e-9..=2.0 + 1e-9).contains(&behind)
        })
        .collect();
    let days = (f.period.end - f.period.start).num_days() + 1;
    let grid = |s: &SensorSpeedSeries| {
        let mut g = vec![None; (days * SLOTS) as usize];
        for (k, v) in s.readings() {
            g[k.0 as usize] = Some(v);
        }
        g
    };
    let series: Vec<Vec<Option<f64>>> = series.into_iter().map(grid).collect();
    let reading = |s: &Vec<Option<f64>>, t: i64| s.get(t as usize).copied().flatten();
    let mean = |s: &Vec<Option<f64>>, t: i64| {
        let slot = t.rem_euclid(SLOTS);
        let vals: Vec<f64> = (0..days)
            .filter_map(|d| reading(s, d * SLOTS + slot))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let mut pre = Vec::new();
    for s in &series {
        for back in 1..=3 {
            if let (Some(v), Some(m)) = (reading(s, step - back), mean(s, step - back)) {
                pre.push(v - m);
            }
        }
    }
    if pre.is_empty() {
        return None;
    }
    let rho = pre.iter().sum::<f64>() / pre.len() as f64;
    let deltas: Vec<f64> = series
        .iter()
        .filter_map(|s| Some((reading(s, target)?, mean(s, target)?)))
        .map(|(v, m)| ((rho - (v - m)) / m).max(0.0))
        .collect();
    (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64)
}

fn ratio_oracle() -> Outcome {
    let mut compared = 0;
    let mut undefined = 0;
    let mut clamped = 0;
    for seed in 0..1000u64 {
        let clamp = seed % 10 == 0;
        let f = random_fixture(seed, clamp);
        let profile =
            build_historical_profile(&f.data, f.period, false).map_err(|e| e.to_string())?;
        let ctx = TrafficContext {
            data: &f.data,
            profile: &profile,
            span_miles: 2.0,
            thresholds: Thresholds::default(),
        };
        let got = ctx.target_ratio(&f.incident, f.horizon);
        match (brute_force_ratio(&f), got) {
            (Some(want), Ok(got)) => {
                check(
                    (want - got).abs() <= 1e-9,
                    format!("fixture {seed}: pipeline {got}, oracle {want}"),
                )?;
                if clamp {
                    check(got == 0.0, format!("fixture {seed}: clamp case gave {got}"))?;
                    clamped += 1;
                }
                compared += 1;
            }
            (None, Err(_)) => undefined += 1,
            (want, got) => {
                return Err(format!("fixture {seed}: oracle {want:?}, pipeline {got:?}"))
            }
        }
    }
    check(
        clamped > 50,
        format!("only {clamped} clamp fixtures were defined"),
    )?;
    Ok(format!(
        "{compared} fixtures agree, {clamped} clamped to 0, {undefined} undefined on both sides"
    ))
}

// 3

fn labeling_partition() -> Outcome {
    let mut previous = ImpactClass::Mild;
    for i in 0..=30_000u32 {
        let delta = f64::from(i) * 1e-4;
        let class = impact_class_from_ratio(delta).map_err(|e| e.to_string())?;
        let expected = if delta <= 0.2 {
            ImpactClass::Mild
        } else if delta <= 0.5 {
            ImpactClass::Moderate
        } else {
            ImpactClass::Severe
        };
        check(
            class == expected,
            format!("{delta}: {class}, expected {expected}"),
        )?;
        check(
            class.index() >= previous.index(),
            format!("class decreased at {delta}"),
        )?;
        previous = class;
    }
    let edges = [
        (0.2, ImpactClass::Mild),
        (0.5, ImpactClass::Moderate),
        (f64::from_bits(0.5f64.to_bits() + 1), ImpactClass::Severe),
    ];
    for (delta, want) in edges {
        let got = impact_class_from_ratio(delta).map_err(|e| e.to_string())?;
        check(got == want, format!("{delta}: {got}, expected {want}"))?;
    }
    let checked = deepening_never_lowers()?;
    Ok(format!(
        "partition of [0, 3] holds; {checked} deepened incidents keep or raise their class"
    ))
}

/// Profile from the first half of the days; incidents from the second half
/// get their target-step readings scaled down step by step.
fn deepening_never_lowers() -> Result<usize, String> {
    let config = SynthConfig {
        incidents: 440,
        days: 28,
        ..SynthConfig::default()
    };
    let dataset = synth_dataset(&config).map_err(|e| e.to_string())?;
    let start = config.start_date;
    let half = start + chrono::Duration::days(13);
    let profile = build_historical_profile(&dataset.speed, DateRange { start, end: half }, false)
        .map_err(|e| e.to_string())?;
    let base = TrafficContext::new(&dataset.speed, &profile);
    let mut checked = 0;
    for incident in dataset
        .incidents
        .iter()
        .filter(|i| i.first_report_time.date() > half)
        .take(200)
    {
        let upstream = base.upstream(incident).map_err(|e| e.to_string())?;
        for horizon in [15u32, 30] {
            let target = base.incident_step(incident).offset(i64::from(horizon) / 5);
            let mut last: Option<ImpactClass> = None;
            for factor in [1.0, 0.9, 0.75, 0.5, 0.3, 0.1] {
                let series = upstream
                    .iter()
                    .map(|meta| {
                        // only the steps around the incident matter once the profile is fixed
                        let original = dataset.speed.get(&meta.sensor_id).unwrap();
                        let start = target.offset(-12);
                        let speeds = (0..16)
                            .map(|i| {
                                let step = start.offset(i);
                                original
                                    .get(step)
                                    .map(|v| if step == target { v * factor } else { v })
                            })
                            .collect();
                        SensorSpeedSeries::new(meta.clone(), start, speeds).unwrap()
                    })
                    .collect();
                let data =
                    SpeedData::new(dataset.speed.timeline, series).map_err(|e| e.to_string())?;
                let class = TrafficContext::new(&data, &profile)
                    .label(incident, horizon)
                    .map_err(|e| e.to_string())?;
                if let Some(prev) = last {
                    check(
                        class.index() >= prev.index(),
                        format!(
                            "{} at {horizon} min fell from {prev} to {class} at factor {factor}",
                            incident.id
                        ),
                    )?;
                }
                last = Some(class);
            }
        }
        checked += 1;
    }
    check(
        checked == 200,
        format!("only {checked} incidents in the second half"),
    )?;
    Ok(checked)
}

// 4

fn example(id: usize, truth: ImpactClass, r: &mut impl Rng) -> LabeledExample {
    let c = truth.index() as f64;
    let minute = r.random_range(0..1440u32);
    LabeledExample {
        incident_id: format!("E{id:03}"),
        features: FeatureVector {
            incident_time: NaiveTime::from_hms_opt(minute / 60, minute % 60, 0).unwrap(),
            num_vehicles: r.random_range(1..=2) + truth.index() as u32,
            num_lanes_blocked: r.random_range(0..=1) + truth.index() as u32,
            pre_incident_relative_speed: r.random_range(-8.0..4.0) - 2.0 * c,
            initial_decrease_ratio: (0.08 + 0.2 * c + r.random_range(-0.15..0.15)).max(0.0),
        },
        horizon_minutes: 15,
        truth,
    }
}

fn small_pool(seed: u64) -> Vec<LabeledExample> {
    let mut r = seeded(seed);
    let n = r.random_range(9..=30);
    (0..n)
        .map(|i| example(i, ImpactClass::from_index(i % 3).unwrap(), &mut r))
        .collect()
}

fn oracle_coords(pool: &[LabeledExample]) -> Vec<Vec<f64>> {
    let raw: Vec<[f64; 6]> = pool.iter().map(|e| e.features.coordinates()).collect();
    let n = raw.len() as f64;
    let mut cols = Vec::new();
    for d in 0..6 {
        let mean = raw.iter().map(|x| x[d]).sum::<f64>() / n;
        let sd = (raw.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 1e-12 * mean.abs().max(1.0) {
            cols.push((d, mean, sd));
        }
    }
    raw.iter()
        .map(|x| cols.iter().map(|&(d, m, s)| (x[d] - m) / s).collect())
        .collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn adjacent(class: ImpactClass) -> Vec<ImpactClass> {
    match class {
        ImpactClass::Mild => vec![ImpactClass::Moderate],
        ImpactClass::Moderate => vec![ImpactClass::Mild, ImpactClass::Severe],
        ImpactClass::Severe => vec![ImpactClass::Moderate],
    }
}

fn selection_oracle() -> Outcome {
    let mut sampled = 0;
    for seed in 0..200u64 {
        let examples = small_pool(seed);
        let coords = oracle_coords(&examples);
        let centroid = |c: ImpactClass| {
            let members: Vec<&Vec<f64>> = coords
                .iter()
                .zip(&examples)
                .filter(|(_, e)| e.truth == c)
                .map(|(x, _)| x)
                .collect();
            let dims = members[0].len();
            (0..dims)
                .map(|d| members.iter().map(|x| x[d]).sum::<f64>() / members.len() as f64)
                .collect::<Vec<f64>>()
        };
        let centroids: BTreeMap<usize, Vec<f64>> = ImpactClass::ALL
            .iter()
            .map(|&c| (c.index(), centroid(c)))
            .collect();
        let mut outliers = Vec::new();
        let mut kept = Vec::new();
        for (i, x) in coords.iter().enumerate() {
            let own = distance(x, &centroids[&examples[i].truth.index()]);
            let foreign = ImpactClass::ALL
                .iter()
                .filter(|&&c| c != examples[i].truth)
                .any(|&c| distance(x, &centroids[&c.index()]) < own);
            if foreign {
                outliers.push(i);
            } else {
                kept.push(i);
            }
        }

        let pool = EmbeddedPool::new(examples.clone()).map_err(|e| e.to_string())?;
        let cents = class_centroids(&pool).map_err(|e| e.to_string())?;
        let split = filter_outliers(&pool, &cents);
        check(
            split.outliers == outliers,
            format!(
                "seed {seed}: outliers {:?} vs oracle {outliers:?}",
                split.outliers
            ),
        )?;
        check(
            split.non_outliers == kept,
            format!("seed {seed}: non-outliers differ"),
        )?;

        for fraction in [0.25, 0.5, 1.0] {
            let subset = near_boundary_subset(&pool, &split.non_outliers, &cents, fraction);
            for class in ImpactClass::ALL {
                let mut scored: Vec<(f64, usize)> = kept
                    .iter()
                    .copied()
                    .filter(|&i| examples[i].truth == class)
                    .map(|i| {
                        let d = adjacent(class)
                            .iter()
                            .map(|n| distance(&coords[i], &centroids[&n.index()]))
                            .fold(f64::INFINITY, f64::min);
                        (d, i)
                    })
                    .collect();
                scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let keep = (fraction * scored.len() as f64).ceil() as usize;
                let want: Vec<usize> = scored[..keep].iter().map(|&(_, i)| i).collect();
                check(
                    subset[class] == want,
                    format!("seed {seed}, {class}, fraction {fraction}: near-boundary differs"),
                )?;
            }
        }

        let frame = SamplingFrame::build(&pool, 0.5).map_err(|e| e.to_string())?;
        let available = |c: ImpactClass| kept.iter().filter(|&&i| examples[i].truth == c).count();
        let feasible = ImpactClass::ALL.iter().all(|&c| available(c) >= 4);
        match sample_example_set(&frame, 12, &mut stream(seed, 3)) {
            Ok(draw) => {
                check(
                    feasible,
                    format!("seed {seed}: drew from a class with fewer than 4 usable members"),
                )?;
                let mut unique = draw.clone();
                unique.sort_unstable();
                unique.dedup();
                check(
                    unique.len() == 12,
                    format!("seed {seed}: draw repeats examples"),
                )?;
                for class in ImpactClass::ALL {
                    let n = draw.iter().filter(|&&i| examples[i].truth == class).count();
                    check(
                        n == 4,
                        format!("seed {seed}: {n} {class} examples in a 12-example draw"),
                    )?;
                    check(
                        draw.iter().all(|i| !outliers.contains(i)),
                        format!("seed {seed}: outlier sampled"),
                    )?;
                }
                sampled += 1;
            }
            Err(_) => check(
                !feasible,
                format!("seed {seed}: sampling failed on a feasible pool"),
            )?,
        }
    }
    check(
        sampled >= 50,
        format!("only {sampled} pools could be sampled"),
    )?;

    let mut r = seeded(99);
    let examples: Vec<LabeledExample> = (0..30)
        .map(|i| example(i, ImpactClass::from_index(i % 3).unwrap(), &mut r))
        .collect();
    let pool = EmbeddedPool::new(examples).map_err(|e| e.to_string())?;
    let frame = SamplingFrame::build(&pool, 1.0).map_err(|e| e.to_string())?;
    let config = SelectionConfig {
        m: 12,
        k_top: 2,
        n_candidates: 30,
        ..SelectionConfig::default()
    };
    let draws = generate_candidates(&frame, &config).map_err(|e| e.to_string())?;
    let results: Vec<CandidateResult> = draws
        .iter()
        .enumerate()
        .map(|(i, d)| CandidateResult {
            candidate_index: i,
            examples: d.iter().map(|&j| pool.examples[j].clone()).collect(),
            validation_score: r.random_range(0.0..1.0),
            failures: 0,
        })
        .collect();
    let top = select_top_k(&results, 2);
    check(
        top.len() == 24,
        format!("select_top_k emitted {} examples", top.len()),
    )?;
    for class in ImpactClass::ALL {
        let n = top.iter().filter(|e| e.truth == class).count();
        check(n == 8, format!("{n} {class} examples in the final prompt"))?;
    }
    Ok(format!(
        "200 pools match the oracles, {sampled} stratified draws, top-2 of m=12 gives 24 (8/8/8)"
    ))
}

// 5

const GOLDEN_PROMPT: &str = "A traffic collision incident occurred at 4:49 PM. Three vehicles are involved. \
One lane is blocked currently. The pre-incident traffic speed was 12 mph below the historical mean speed for the \
time of the day. The initial decrease in speed in the first few minutes after the incident is 8.75%. Predict what \
would be the impact after 15 minutes.";

fn golden_prompt() -> Outcome {
    let features = FeatureVector {
        incident_time: NaiveTime::from_hms_opt(16, 49, 0).unwrap(),
        num_vehicles: 3,
        num_lanes_blocked: 1,
        pre_incident_relative_speed: -12.0,
        initial_decrease_ratio: 0.0875,
    };
    let text = render_user_prompt(&features, 15);
    check(text == GOLDEN_PROMPT, format!("rendered {text:?}"))?;
    Ok("byte-identical".into())
}

// 6 and 8

fn impact(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_impact"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "impact {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    files
}

struct EndToEnd {
    _dir: tempfile::TempDir,
    config: PathBuf,
    data: PathBuf,
    out: PathBuf,
}

fn end_to_end() -> (Outcome, Option<EndToEnd>) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let config = dir.path().join("run.toml");
    let mut run_config = RunConfig::default();
    run_config.selection.validation_per_class = 2;
    std::fs::write(&config, run_config.to_toml().unwrap()).unwrap();
    let outcome = (|| {
        impact(&[
            "synth",
            "--incidents",
            "500",
            "--out",
            data.to_str().unwrap(),
        ])?;
        let mut trees = Vec::new();
        for i in 0..2 {
            let out = dir.path().join(format!("out{i}"));
            impact(&[
                "run",
                "--config",
                config.to_str().unwrap(),
                "--data",
                data.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])?;
            let mut files = BTreeMap::new();
            for sub in ["selections", "predictions", "reports", "labels", "features"] {
                for (path, bytes) in tree(&out.join(sub)) {
                    files.insert(Path::new(sub).join(path), bytes);
                }
            }
            trees.push(files);
        }
        check(!trees[0].is_empty(), "no output files")?;
        let differing: Vec<String> = trees[0]
            .iter()
            .filter(|(p, b)| trees[1].get(*p) != Some(*b))
            .map(|(p, _)| p.display().to_string())
            .collect();
        check(
            differing.is_empty() && trees[0].len() == trees[1].len(),
            format!("runs differ in {differing:?}"),
        )?;
        let metrics: serde_json::Value =
            serde_json::from_slice(&trees[0][Path::new("reports/metrics.json")])
                .map_err(|e| e.to_string())?;
        let mut scores = Vec::new();
        for report in metrics["averaged"]
            .as_array()
            .ok_or("metrics.json lacks `averaged`")?
        {
            if report["model_id"] == "mock-centroid" {
                let f1 = report["macro_f1"].as_f64().unwrap_or(0.0);
                let h = report["horizon_minutes"].as_u64().unwrap_or(0);
                check(f1 > 0.9, format!("mock macro F1 {f1:.3} at {h} min"))?;
                scores.push(format!("{h} min {f1:.3}"));
            }
        }
        check(scores.len() == 2, "missing mock rows in metrics.json")?;
        Ok(format!(
            "{} files identical across runs; mock macro F1 {}",
            trees[0].len(),
            scores.join(", ")
        ))
    })();
    let out = dir.path().join("out0");
    (
        outcome,
        Some(EndToEnd {
            _dir: dir,
            config,
            data,
            out,
        }),
    )
}

fn k_sweep(e2e: &EndToEnd) -> Outcome {
    let stdout = impact(&[
        "sweep-k",
        "0,1,2,3",
        "--config",
        e2e.config.to_str().unwrap(),
        "--data",
        e2e.data.to_str().unwrap(),
        "--out",
        e2e.out.to_str().unwrap(),
    ])?;
    let table =
        std::fs::read_to_string(e2e.out.join("reports/table_iv.txt")).map_err(|e| e.to_string())?;
    check(
        table == stdout,
        "printed table differs from reports/table_iv.txt",
    )?;
    let header = table.lines().next().unwrap_or_default();
    for n in [0, 12, 24, 36] {
        check(
            header.contains(&format!("{n} examples")),
            format!("header lacks {n} examples: {header}"),
        )?;
    }
    let rows = table
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .count();
    check(rows >= 2, format!("{rows} rows"))?;
    Ok(format!("columns 0/12/24/36 examples, {rows} rows"))
}

// 7

/// Three classes around separate centres; a share of labels is flipped so the
/// pool contains examples sitting deep inside another class.
fn contaminated_pool(seed: u64) -> Vec<LabeledExample> {
    let mut r = seeded(seed);
    let mut out = Vec::new();
    for (class, n) in [
        (ImpactClass::Mild, 240),
        (ImpactClass::Moderate, 90),
        (ImpactClass::Severe, 60),
    ] {
        for _ in 0..n {
            let id = out.len();
            let mut e = example(id, class, &mut r);
            if r.random_bool(0.2) {
                let others: Vec<ImpactClass> = ImpactClass::ALL
                    .into_iter()
                    .filter(|&c| c != class)
                    .collect();
                e.truth = *others.choose(&mut r).unwrap();
            }
            out.push(e);
        }
    }
    out.shuffle(&mut r);
    out
}

fn selection_vs_random() -> Outcome {
    let gateway = Gateway::from_config(&ProviderConfig::mock()).map_err(|e| e.to_string())?;
    let mut diffs = Vec::new();
    for seed in 0..10u64 {
        let training = contaminated_pool(seed);
        let config = SelectionConfig {
            rng_seed: seed,
            ..SelectionConfig::default()
        };
        let outcome = select_examples(&training, &config, &gateway).map_err(|e| e.to_string())?;
        let validation: Vec<LabeledExample> = training
            .iter()
            .filter(|e| outcome.validation_ids.contains(&e.incident_id))
            .cloned()
            .collect();
        let rest: Vec<LabeledExample> = training
            .iter()
            .filter(|e| !outcome.validation_ids.contains(&e.incident_id))
            .cloned()
            .collect();
        let selected = outcome.final_examples();
        let random = random_examples(&rest, 24, &mut stream(seed, 7)).map_err(|e| e.to_string())?;
        let (sel, _) =
            evaluate_candidate(&selected, &validation, &gateway).map_err(|e| e.to_string())?;
        let (rnd, _) =
            evaluate_candidate(&random, &validation, &gateway).map_err(|e| e.to_string())?;
        diffs.push(sel - rnd);
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    check(
        mean >= 0.0,
        format!("mean accuracy difference {mean:.3} ({diffs:.3?})"),
    )?;
    let wins = diffs.iter().filter(|&&d| d >= 0.0).count();
    Ok(format!(
        "mean accuracy gain {mean:+.3}, selected >= random on {wins}/10 seeds"
    ))
}

// 9

fn split_fidelity() -> Outcome {
    let t0 = NaiveDate::from_ymd_opt(2023, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let mut r = seeded(2777);
    let mut incidents: Vec<Incident> = (0..2777)
        .map(|i| Incident {
            id: format!("I{i:05}"),
            first_report_time: t0 + chrono::Duration::minutes(r.random_range(0..525_600)),
            roadway_id: "I-880".into(),
            direction: Direction::North,
            milepost: 1.0,
            log_lines: vec![],
        })
        .collect();
    incidents.shuffle(&mut r);
    let (train, test) = chronological_split(&incidents, 0.8).map_err(|e| e.to_string())?;
    check(
        (train.len(), test.len()) == (2221, 556),
        format!("{} / {}", train.len(), test.len()),
    )?;
    let last_train: NaiveDateTime = train.iter().map(|i| i.first_report_time).max().unwrap();
    let first_test = test.iter().map(|i| i.first_report_time).min().unwrap();
    check(
        last_train <= first_test,
        "training set reaches past the test set",
    )?;
    Ok("2221 / 556, training strictly earlier".into())
}

// 10

fn live_smoke() -> Verdict {
    let defaults = [
        ("openai", "gpt-4.1"),
        ("anthropic", "claude-3-7-sonnet-20250219"),
        ("gemini", "gemini-2.0-flash"),
    ];
    if std::env::var("IMPACT_LIVE_SMOKE").map_or(true, |v| v != "1") {
        return Verdict::Skip(
            "set IMPACT_LIVE_SMOKE=1 and a provider key to call a hosted model".into(),
        );
    }
    let Some((provider, model)) = defaults.iter().find(|(p, _)| {
        std::env::var(format!("{}_API_KEY", p.to_ascii_uppercase()))
            .is_ok_and(|k| !k.trim().is_empty())
    }) else {
        return Verdict::Skip("no OPENAI_API_KEY, ANTHROPIC_API_KEY or GEMINI_API_KEY set".into());
    };
    let model = std::env::var("IMPACT_LIVE_MODEL").unwrap_or_else(|_| model.to_string());
    let config = ProviderConfig {
        provider_name: provider.to_string(),
        model_id: model.clone(),
        max_in_flight: 2,
        ..ProviderConfig::default()
    };
    let start = Instant::now();
    let outcome = (|| {
        let gateway = Gateway::from_config(&config).map_err(|e| e.to_string())?;
        let pool = contaminated_pool(1);
        let examples: Vec<LabeledExample> = ImpactClass::ALL
            .iter()
            .flat_map(|&c| pool.iter().filter(move |e| e.truth == c).take(8).cloned())
            .collect();
        let mut unparseable = 0;
        for e in pool.iter().rev().take(10) {
            let query = Query {
                incident_id: &e.incident_id,
                features: &e.features,
                horizon_minutes: 15,
            };
            match gateway.predict(&examples, &query) {
                Ok(_) => {}
                Err(impact_core::Error::UnparseableResponse { .. }) => unparseable += 1,
                Err(err) => return Err(err.to_string()),
            }
        }
        check(
            unparseable == 0,
            format!("{unparseable} unparseable responses"),
        )?;
        Ok(format!("{provider}/{model}: 10 predictions parsed"))
    })();
    match outcome {
        Ok(d) => Verdict::Pass(format!("{d} ({:.2?})", start.elapsed())),
        Err(e) => Verdict::Fail(e),
    }
}

fn main() -> ExitCode {
    let mut e2e = None;
    let v6 = timed(Duration::from_secs(120), || {
        let (outcome, state) = end_to_end();
        e2e = state;
        outcome
    });
    let v8 = match &e2e {
        Some(state) => timed(Duration::from_secs(60), || k_sweep(state)),
        None => Verdict::Fail("end-to-end run did not produce an output directory".into()),
    };
    let verdicts: Vec<(u32, &str, Verdict)> = vec![
        (
            1,
            "metric oracle",
            timed(Duration::from_secs(1), metric_oracle),
        ),
        (
            2,
            "speed decrease ratio oracle",
            timed(Duration::from_secs(10), ratio_oracle),
        ),
        (
            3,
            "labeling partition and monotonicity",
            timed(Duration::from_secs(10), labeling_partition),
        ),
        (
            4,
            "selection brute-force equivalence",
            timed(Duration::from_secs(5), selection_oracle),
        ),
        (
            5,
            "golden prompt",
            timed(Duration::from_secs(1), golden_prompt),
        ),
        (6, "offline end-to-end", v6),
        (
            7,
            "selection vs random",
            timed(Duration::from_secs(60), selection_vs_random),
        ),
        (8, "k-sweep harness", v8),
        (
            9,
            "split fidelity",
            timed(Duration::from_secs(1), split_fidelity),
        ),
        (10, "live smoke", live_smoke()),
    ];

    let mut failed = 0;
    for (n, name, verdict) in &verdicts {
        match verdict {
            Verdict::Pass(d) => println!("criterion {n:>2} PASS  {name}: {d}"),
            Verdict::Skip(d) => println!("criterion {n:>2} SKIP  {name}: {d}"),
            Verdict::Fail(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
