//! Sensor metadata and wide-format speed CSV files.
//!
//! `sensors.csv` has columns `sensor_id,roadway_id,direction,milepost`. The
//! speed file has a `timestamp` column followed by one column per sensor;
//! rows are 5 minutes apart and a blank cell is a gap.

use std::collections::HashMap;
use std::path::Path;

use chrono::{Duration, NaiveDateTime, Timelike};

use crate::error::{Error, Result};
use crate::model::{TimeStep, Timeline, STEP_MINUTES};
use crate::traffic::{SensorMeta, SensorSpeedSeries, SpeedData};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M";

pub fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    let text = text.trim();
    [
        "%Y-%m-%d %H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%dT%H:%M:%S",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(text, f).ok())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format(format!("{}: {other:?}", path.display())),
        })
}

fn record_line(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

pub fn load_sensor_meta(path: &Path) -> Result<Vec<SensorMeta>> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(path, 1, format!("missing column `{name}`")))
    };
    let (id, road, dir, mp) = (
        column("sensor_id")?,
        column("roadway_id")?,
        column("direction")?,
        column("milepost")?,
    );
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            Error::parse(
                path,
                e.position().map_or(0, |p| p.line() as usize),
                e.to_string(),
            )
        })?;
        let line = record_line(&record);
        let field = |i: usize| record.get(i).unwrap_or("");
        out.push(SensorMeta {
            sensor_id: field(id).to_string(),
            roadway_id: field(road).to_string(),
            direction: field(dir)
                .parse()
                .map_err(|e: Error| Error::parse(path, line, e.to_string()))?,
            milepost: field(mp).parse().map_err(|_| {
                Error::parse(path, line, format!("invalid milepost `{}`", field(mp)))
            })?,
        });
    }
    Ok(out)
}

/// Loads a wide speed file against the sensor metadata. Columns without
/// metadata are rejected; sensors without a column are skipped.
pub fn load_speed_csv(meta_path: &Path, speed_path: &Path) -> Result<SpeedData> {
    let metas = load_sensor_meta(meta_path)?;
    let by_id: HashMap<&str, &SensorMeta> =
        metas.iter().map(|m| (m.sensor_id.as_str(), m)).collect();
    let mut reader = csv_reader(speed_path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(speed_path, 1, e.to_string()))?
        .clone();
    if headers.get(0) != Some("timestamp") {
        return Err(Error::parse(
            speed_path,
            1,
            "first column must be `timestamp`",
        ));
    }
    let mut columns: Vec<&SensorMeta> = Vec::new();
    for name in headers.iter().skip(1) {
        let meta = by_id.get(name).ok_or_else(|| {
            Error::Format(format!(
                "{}: sensor `{name}` has no metadata",
                speed_path.display()
            ))
        })?;
        columns.push(meta);
    }
    let mut speeds: Vec<Vec<Option<f64>>> = vec![Vec::new(); columns.len()];
    let mut first: Option<NaiveDateTime> = None;
    let mut previous: Option<NaiveDateTime> = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            Error::parse(
                speed_path,
                e.position().map_or(0, |p| p.line() as usize),
                e.to_string(),
            )
        })?;
        let line = record_line(&record);
        let ts = parse_timestamp(&record[0]).ok_or_else(|| {
            Error::parse(
                speed_path,
                line,
                format!("invalid timestamp `{}`", &record[0]),
            )
        })?;
        match previous {
            None => {
                if ts.minute() as i64 % STEP_MINUTES != 0 || ts.second() != 0 {
                    return Err(Error::Format(format!(
                        "{}:{line}: first timestamp {ts} is not on a {STEP_MINUTES}-minute boundary",
                        speed_path.display()
                    )));
                }
                first = Some(ts);
            }
            Some(prev) if ts == prev => {
                return Err(Error::Format(format!(
                    "{}:{line}: duplicate timestamp {ts}",
                    speed_path.display()
                )))
            }
            Some(prev) if ts != prev + Duration::minutes(STEP_MINUTES) => {
                return Err(Error::Format(format!(
                    "{}:{line}: expected {} after {prev}, found {ts}",
                    speed_path.display(),
                    prev + Duration::minutes(STEP_MINUTES)
                )))
            }
            Some(_) => {}
        }
        previous = Some(ts);
        if record.len() != columns.len() + 1 {
            return Err(Error::parse(
                speed_path,
                line,
                format!(
                    "expected {} fields, found {}",
                    columns.len() + 1,
                    record.len()
                ),
            ));
        }
        for (i, cell) in record.iter().skip(1).enumerate() {
            let value = if cell.is_empty() {
                None
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::parse(speed_path, line, format!("invalid speed `{cell}`"))
                })?;
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::parse(
                        speed_path,
                        line,
                        format!("invalid speed `{cell}`"),
                    ));
                }
                Some(v)
            };
            speeds[i].push(value);
        }
    }
    let first =
        first.ok_or_else(|| Error::Format(format!("{}: no speed rows", speed_path.display())))?;
    let timeline = Timeline::starting_at(first);
    let start = timeline.step_of(first);
    let series = columns
        .into_iter()
        .zip(speeds)
        .map(|(meta, s)| SensorSpeedSeries::new(meta.clone(), start, s))
        .collect::<Result<Vec<_>>>()?;
    SpeedData::new(timeline, series)
}

pub fn write_sensor_meta(path: &Path, sensors: &[SensorMeta]) -> Result<()> {
    let mut out = String::from("sensor_id,roadway_id,direction,milepost\n");
    for s in sensors {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.sensor_id,
            s.roadway_id,
            s.direction.code(),
            s.milepost
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes every series on the union of their step ranges, speeds at 0.01 mph.
pub fn write_speed_csv(path: &Path, data: &SpeedData) -> Result<()> {
    let series = data.series();
    let first = series.iter().map(|s| s.start().index()).min().unwrap_or(0);
    let last = series
        .iter()
        .map(|s| s.start().index() + s.len() as i64)
        .max()
        .unwrap_or(0);
    let mut out = String::with_capacity(((last - first) as usize + 1) * (series.len() * 7 + 17));
    out.push_str("timestamp");
    for s in series {
        out.push(',');
        out.push_str(&s.meta.sensor_id);
    }
    out.push('\n');
    for step in first..last {
        let step = TimeStep(step);
        out.push_str(
            &data
                .timeline
                .start_of(step)
                .format(TIMESTAMP_FORMAT)
                .to_string(),
        );
        for s in series {
            out.push(',');
            if let Some(v) = s.get(step) {
                out.push_str(&format!("{v:.2}"));
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
