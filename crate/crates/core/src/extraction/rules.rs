//! Pattern-based reading of vehicle and lane counts from expanded log text.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Counts and flags read from a log, before the incident time is attached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogAttributes {
    pub num_vehicles: u32,
    pub num_lanes_blocked: u32,
    pub extended: BTreeMap<String, bool>,
}

impl Default for LogAttributes {
    fn default() -> Self {
        LogAttributes {
            num_vehicles: 1,
            num_lanes_blocked: 0,
            extended: BTreeMap::new(),
        }
    }
}

pub const FLAG_LARGE_TRUCK: &str = "large_truck";
pub const FLAG_AMBULANCE_OR_TOW: &str = "ambulance_or_tow";
pub const FLAG_ADVERSE_WEATHER: &str = "adverse_weather";
pub const FLAGS: [&str; 3] = [
    FLAG_LARGE_TRUCK,
    FLAG_AMBULANCE_OR_TOW,
    FLAG_ADVERSE_WEATHER,
];

const NUMBER_WORDS: [&str; 11] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

fn number(token: &str) -> Option<u32> {
    token.parse().ok().or_else(|| {
        NUMBER_WORDS
            .iter()
            .position(|w| *w == token)
            .map(|i| i as u32)
    })
}

struct Patterns {
    vehicle_count: Regex,
    vehicle_number: Regex,
    solo: Regex,
    lane_number: Regex,
    lane_count: Regex,
    blocking: Regex,
    not_blocking: Regex,
    lanes_open: Regex,
    large_truck: Regex,
    ambulance_or_tow: Regex,
    adverse_weather: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let words = NUMBER_WORDS.join("|");
        let re = |s: &str| Regex::new(s).expect("valid regex");
        Patterns {
            vehicle_count: re(&format!(r"\b(\d{{1,2}}|{words})\s*-?\s*(?:vehicles?|vehs?|cars?)\b")),
            vehicle_number: re(r"\b(?:vehicles?|vehs?|v)\s*#\s*(\d{1,2})\b"),
            solo: re(r"\bsolo\s+(?:vehicle|veh)\b"),
            lane_number: re(r"#\s*(\d)\b"),
            lane_count: re(&format!(r"\b(\d|{words})\s+(?:lanes?|lns?)\b")),
            blocking: re(r"\b(?:block\w*|blkd|blkg|closed|closure)\b"),
            not_blocking: re(r"\b(?:not|no longer|nothing)\s+block\w*|\bno\s+(?:lanes?\s+)?block\w*"),
            lanes_open: re(r"\ball\s+lanes?\s+(?:are\s+)?(?:open\w*|reopen\w*|clear\w*)|\blanes?\s+(?:are\s+)?(?:reopened|cleared)\b"),
            large_truck: re(r"\b(?:big\s+rig|semi(?:\s+truck)?|tractor[\s-]+trailer|large\s+truck|truck\s+and\s+trailer|commercial\s+vehicle|18\s+wheeler)\b"),
            ambulance_or_tow: re(r"\b(?:ambulance|tow|paramedics?|medics?|fire\s+department)\b"),
            adverse_weather: re(r"\b(?:rain\w*|wet|fog\w*|snow\w*|ice|icy|hail|flood\w*|slick)\b"),
        }
    })
}

/// Lanes blocked according to one line, if the line speaks about blockage.
fn lanes_on_line(line: &str, p: &Patterns) -> Option<u32> {
    if p.lanes_open.is_match(line) || p.not_blocking.is_match(line) {
        return Some(0);
    }
    if !p.blocking.is_match(line) {
        return None;
    }
    // vehicle enumerations share the `#N` notation with lane numbers
    let cleaned = p.vehicle_number.replace_all(line, " ");
    let mut numbered: Vec<u32> = p
        .lane_number
        .captures_iter(&cleaned)
        .filter_map(|c| c[1].parse().ok())
        .collect();
    numbered.sort_unstable();
    numbered.dedup();
    let unnumbered = p.lane_number.replace_all(&cleaned, " ");
    let counted = p
        .lane_count
        .captures_iter(&unnumbered)
        .filter_map(|c| number(&c[1]))
        .max();
    let lanes = (numbered.len() as u32).max(counted.unwrap_or(0));
    (lanes > 0).then_some(lanes)
}

/// Reads counts and flags from expanded log text. The vehicle count is the
/// largest count mentioned; the lane count follows the most recent line that
/// mentions blockage. Silence gives one vehicle and no blocked lanes.
pub fn extract_features_rules(expanded_log: &str) -> LogAttributes {
    let p = patterns();
    let text = expanded_log.to_lowercase();
    let mut vehicles: Option<u32> = None;
    let mut lanes: Option<u32> = None;
    let mut bump = |n: u32| vehicles = Some(vehicles.map_or(n, |v| v.max(n)));
    for line in text.lines() {
        for c in p.vehicle_count.captures_iter(line) {
            if let Some(n) = number(&c[1]) {
                bump(n);
            }
        }
        for c in p.vehicle_number.captures_iter(line) {
            if let Ok(n) = c[1].parse() {
                bump(n);
            }
        }
        if p.solo.is_match(line) {
            bump(1);
        }
        if let Some(n) = lanes_on_line(line, p) {
            lanes = Some(n);
        }
    }
    let extended = [
        (FLAG_LARGE_TRUCK, &p.large_truck),
        (FLAG_AMBULANCE_OR_TOW, &p.ambulance_or_tow),
        (FLAG_ADVERSE_WEATHER, &p.adverse_weather),
    ]
    .into_iter()
    .map(|(k, re)| (k.to_string(), re.is_match(&text)))
    .collect();
    LogAttributes {
        num_vehicles: vehicles.filter(|&v| v > 0).unwrap_or(1),
        num_lanes_blocked: lanes.unwrap_or(0),
        extended,
    }
}
