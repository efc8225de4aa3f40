//! Plain-text incident records.
//!
//! ```text
//! incident: INC-0001
//! reported: 2024-03-04 08:08
//! roadway: I-880
//! direction: N
//! milepost: 12.5
//!   2024-03-04 08:08 | TC 3 VEHS
//!   2024-03-04 08:09 | BLKG #1 LN
//! ```
//!
//! Header lines are `key: value`; indented lines are log entries. Lines
//! starting with `#` and blank lines are ignored.

use std::path::Path;

use crate::data::speed::{parse_timestamp, TIMESTAMP_FORMAT};
use crate::error::{Error, Result};
use crate::model::{Incident, LogLine};

/// Incidents closer than this to the start of a roadway are dropped.
pub const MIN_MILEPOST: f64 = 2.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IncidentLoad {
    pub incidents: Vec<Incident>,
    /// Incidents dropped for lying within the first miles of a roadway.
    pub dropped_near_start: usize,
    /// Incidents whose log lines had to be re-sorted.
    pub resorted: usize,
}

#[derive(Default)]
struct Draft {
    line: usize,
    id: Option<String>,
    reported: Option<String>,
    roadway: Option<String>,
    direction: Option<String>,
    milepost: Option<String>,
    log: Vec<LogLine>,
}

impl Draft {
    fn finish(self, path: &Path) -> Result<Incident> {
        let need = |v: Option<String>, name: &str| {
            v.ok_or_else(|| {
                Error::parse(
                    path,
                    self.line,
                    format!("incident is missing field `{name}`"),
                )
            })
        };
        let id = need(self.id, "incident")?;
        let reported = need(self.reported, "reported")?;
        let first_report_time = parse_timestamp(&reported).ok_or_else(|| {
            Error::parse(
                path,
                self.line,
                format!("invalid `reported` timestamp `{reported}`"),
            )
        })?;
        let direction = need(self.direction, "direction")?;
        let milepost = need(self.milepost, "milepost")?;
        Ok(Incident {
            id,
            first_report_time,
            roadway_id: need(self.roadway, "roadway")?,
            direction: direction
                .parse()
                .map_err(|e: Error| Error::parse(path, self.line, e.to_string()))?,
            milepost: milepost.parse().map_err(|_| {
                Error::parse(path, self.line, format!("invalid milepost `{milepost}`"))
            })?,
            log_lines: self.log,
        })
    }
}

pub fn parse_incidents(text: &str, path: &Path) -> Result<IncidentLoad> {
    let mut drafts: Vec<Draft> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        if raw.starts_with(char::is_whitespace) {
            let draft = drafts
                .last_mut()
                .ok_or_else(|| Error::parse(path, line_no, "log line before any incident"))?;
            let (ts, text) = raw.trim().split_once('|').ok_or_else(|| {
                Error::parse(path, line_no, "log line must be `timestamp | text`")
            })?;
            let time = parse_timestamp(ts).ok_or_else(|| {
                Error::parse(
                    path,
                    line_no,
                    format!("invalid log timestamp `{}`", ts.trim()),
                )
            })?;
            draft.log.push(LogLine {
                time,
                text: text.trim().to_string(),
            });
            continue;
        }
        let (key, value) = raw
            .split_once(':')
            .ok_or_else(|| Error::parse(path, line_no, "expected `key: value` header"))?;
        let value = value.trim().to_string();
        let key = key.trim().to_ascii_lowercase();
        if key == "incident" {
            drafts.push(Draft {
                line: line_no,
                id: Some(value),
                ..Draft::default()
            });
            continue;
        }
        let draft = drafts
            .last_mut()
            .ok_or_else(|| Error::parse(path, line_no, "header before `incident:`"))?;
        let slot = match key.as_str() {
            "reported" => &mut draft.reported,
            "roadway" => &mut draft.roadway,
            "direction" => &mut draft.direction,
            "milepost" => &mut draft.milepost,
            "log" => continue,
            other => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("unknown field `{other}`"),
                ))
            }
        };
        if slot.replace(value).is_some() {
            return Err(Error::parse(
                path,
                line_no,
                format!("duplicate field `{key}`"),
            ));
        }
    }
    let mut load = IncidentLoad::default();
    for draft in drafts {
        let mut incident = draft.finish(path)?;
        if incident.milepost < MIN_MILEPOST {
            load.dropped_near_start += 1;
            continue;
        }
        if incident.log_lines.windows(2).any(|w| w[0].time > w[1].time) {
            log::warn!(
                "{}: log lines of incident {} are out of order; re-sorting",
                path.display(),
                incident.id
            );
            incident.log_lines.sort_by_key(|l| l.time);
            load.resorted += 1;
        }
        load.incidents.push(incident);
    }
    if load.dropped_near_start > 0 {
        log::info!(
            "{}: dropped {} incidents within the first {MIN_MILEPOST} miles",
            path.display(),
            load.dropped_near_start
        );
    }
    Ok(load)
}

pub fn load_incidents(path: &Path) -> Result<IncidentLoad> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_incidents(&text, path)
}

pub fn render_incidents(incidents: &[Incident]) -> String {
    let mut out = String::new();
    for (i, inc) in incidents.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "incident: {}\nreported: {}\nroadway: {}\ndirection: {}\nmilepost: {}\n",
            inc.id,
            inc.first_report_time.format(TIMESTAMP_FORMAT),
            inc.roadway_id,
            inc.direction.code(),
            inc.milepost
        ));
        for l in &inc.log_lines {
            out.push_str(&format!(
                "  {} | {}\n",
                l.time.format(TIMESTAMP_FORMAT),
                l.text
            ));
        }
    }
    out
}

pub fn write_incidents(path: &Path, incidents: &[Incident]) -> Result<()> {
    std::fs::write(path, render_incidents(incidents)).map_err(|e| Error::io(path, e))
}
