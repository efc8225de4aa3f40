//! Incident features from operator logs.
//!
//! Logs are cut at the prediction time, abbreviations are expanded with the
//! glossary, and the counts are read either by a chat model or by the
//! pattern-based fallback in [`rules`].

pub mod glossary;
pub mod rules;

use chrono::{NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Gateway, PromptPair};
use crate::model::{Incident, IncidentFeatures, LogLine, TimeStep, Timeline};

pub use glossary::{expand_glossary, Glossary};
pub use rules::{extract_features_rules, LogAttributes, FLAGS};

pub const SCHEMA_VERSION: &str = "extract-v1";

/// First line of every extraction system prompt.
pub const INSTRUCTION_HEADER: &str = "You extract structured facts from traffic incident logs.";

const INSTRUCTION_BODY: &str = "\
Read the log below and report what is known at the time of the last line.
Reply with exactly these five lines and nothing else:
vehicles: <number of vehicles involved>
lanes_blocked: <number of travel lanes currently blocked, 0 if none>
large_truck: <yes|no>
ambulance_or_tow: <yes|no>
adverse_weather: <yes|no>
Use `unknown` for a count the log does not state.";

const CLARIFICATION: &str = "\n\nRespond only with the five `key: value` lines.";

/// Log lines whose timestamp is at or before the end of `prediction_step`.
pub fn truncate_log_to(
    incident: &Incident,
    timeline: &Timeline,
    prediction_step: TimeStep,
) -> Result<Vec<LogLine>> {
    truncate_log_at(incident, timeline.end_of(prediction_step))
}

pub fn truncate_log_at(incident: &Incident, cutoff: NaiveDateTime) -> Result<Vec<LogLine>> {
    let lines: Vec<LogLine> = incident
        .log_lines
        .iter()
        .filter(|l| l.time <= cutoff)
        .cloned()
        .collect();
    if lines.is_empty() {
        return Err(Error::EmptyLog {
            incident: incident.id.clone(),
        });
    }
    Ok(lines)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRequest {
    pub incident_id: String,
    pub incident_time: NaiveTime,
    pub expanded_log_text: String,
    pub schema_version: String,
}

impl ExtractionRequest {
    /// Truncates the log at the prediction time and expands every line.
    pub fn build(incident: &Incident, timeline: &Timeline, glossary: &Glossary) -> Result<Self> {
        let step = timeline.prediction_step(incident.first_report_time);
        let lines = truncate_log_to(incident, timeline, step)?;
        let expanded_log_text = lines
            .iter()
            .map(|l| format!("[{}] {}", l.time.format("%H:%M"), glossary.expand(&l.text)))
            .collect::<Vec<_>>()
            .join("\n");
        let t = incident.first_report_time.time();
        Ok(ExtractionRequest {
            incident_id: incident.id.clone(),
            incident_time: NaiveTime::from_hms_opt(t.hour(), t.minute(), 0).expect("valid time"),
            expanded_log_text,
            schema_version: SCHEMA_VERSION.to_string(),
        })
    }

    pub fn prompt(&self) -> PromptPair {
        PromptPair {
            system_text: format!("{INSTRUCTION_HEADER}\n{INSTRUCTION_BODY}"),
            user_text: self.expanded_log_text.clone(),
        }
    }

    pub fn into_features(&self, attrs: LogAttributes) -> IncidentFeatures {
        IncidentFeatures {
            incident_time: self.incident_time,
            num_vehicles: attrs.num_vehicles,
            num_lanes_blocked: attrs.num_lanes_blocked,
            extended: attrs.extended,
        }
    }
}

/// The response a well-behaved model gives for `attrs`.
pub fn format_response(attrs: &LogAttributes) -> String {
    let mut out = format!(
        "vehicles: {}\nlanes_blocked: {}\n",
        attrs.num_vehicles, attrs.num_lanes_blocked
    );
    for flag in FLAGS {
        let yes = attrs.extended.get(flag).copied().unwrap_or(false);
        out.push_str(&format!("{flag}: {}\n", if yes { "yes" } else { "no" }));
    }
    out
}

fn parse_count(value: &str, default: u32) -> Option<u32> {
    match value {
        "unknown" | "none" | "n/a" | "" => Some(default),
        v => v.parse().ok(),
    }
}

fn parse_flag(value: &str) -> Option<bool> {
    match value {
        "yes" | "true" => Some(true),
        "no" | "false" | "unknown" => Some(false),
        _ => None,
    }
}

/// Parses the strict `key: value` reply. Blank lines and code fences are
/// ignored; any other line must be a `key: value` pair, and both counts must be
/// present.
pub fn parse_response(raw: &str) -> Result<LogAttributes> {
    let fail = || Error::ExtractionParse {
        raw: raw.to_string(),
    };
    let mut vehicles = None;
    let mut lanes = None;
    let mut attrs = LogAttributes::default();
    for line in raw.lines().map(str::trim) {
        if line.is_empty() || line.starts_with("```") {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(fail)?;
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim().trim_end_matches('.').to_ascii_lowercase();
        match key.as_str() {
            "vehicles" => vehicles = Some(parse_count(&value, 1).ok_or_else(fail)?),
            "lanes_blocked" => lanes = Some(parse_count(&value, 0).ok_or_else(fail)?),
            k if FLAGS.contains(&k) => {
                attrs
                    .extended
                    .insert(key.clone(), parse_flag(&value).ok_or_else(fail)?);
            }
            _ => {}
        }
    }
    attrs.num_vehicles = vehicles.ok_or_else(fail)?;
    attrs.num_lanes_blocked = lanes.ok_or_else(fail)?;
    for flag in FLAGS {
        attrs.extended.entry(flag.to_string()).or_insert(false);
    }
    Ok(attrs)
}

/// Asks the model through `gateway`; an unparseable reply is retried once.
pub fn extract_features_llm(
    request: &ExtractionRequest,
    gateway: &Gateway,
) -> Result<IncidentFeatures> {
    let unavailable = |e: Error| match e {
        Error::ProviderUnavailable { .. } | Error::MissingCredential { .. } => {
            Error::ExtractionUnavailable(e.to_string())
        }
        other => other,
    };
    let prompt = request.prompt();
    let raw = gateway.complete(&prompt).map_err(unavailable)?;
    let attrs = match parse_response(&raw) {
        Ok(a) => a,
        Err(_) => {
            log::debug!(
                "unparseable extraction for {}, asking again",
                request.incident_id
            );
            let retry = PromptPair {
                system_text: prompt.system_text,
                user_text: format!("{}{CLARIFICATION}", prompt.user_text),
            };
            parse_response(&gateway.complete(&retry).map_err(unavailable)?)?
        }
    };
    Ok(request.into_features(attrs))
}

/// How incident features are read from logs.
#[derive(Clone, Copy)]
pub enum Extractor<'a> {
    Rules,
    Llm(&'a Gateway),
}

impl Extractor<'_> {
    pub fn extract(&self, request: &ExtractionRequest) -> Result<IncidentFeatures> {
        match self {
            Extractor::Rules => {
                Ok(request.into_features(extract_features_rules(&request.expanded_log_text)))
            }
            Extractor::Llm(gateway) => extract_features_llm(request, gateway),
        }
    }
}
