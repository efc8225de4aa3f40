//! Rendering of the user and system prompts.

use std::path::Path;

use chrono::Timelike;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{FeatureVector, LabeledExample, Thresholds};

const BUILTIN_TEMPLATE: &str = include_str!("../../templates/system_prompt_v1.txt");
pub const BUILTIN_SCAFFOLD_VERSION: &str = "builtin-v1";

/// System and user message of one model call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system_text: String,
    pub user_text: String,
}

/// System prompt template. Placeholders: `{{mild_max}}`, `{{moderate_max}}`
/// and `{{examples}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptScaffold {
    pub version: String,
    template: String,
}

impl Default for PromptScaffold {
    fn default() -> Self {
        PromptScaffold {
            version: BUILTIN_SCAFFOLD_VERSION.to_string(),
            template: BUILTIN_TEMPLATE.to_string(),
        }
    }
}

impl PromptScaffold {
    pub fn new(version: impl Into<String>, template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        if !template.contains("{{examples}}") {
            return Err(Error::Config(
                "prompt scaffold lacks the {{examples}} placeholder".into(),
            ));
        }
        Ok(PromptScaffold {
            version: version.into(),
            template,
        })
    }

    /// Loads a template file; the version is the file stem plus a content digest.
    pub fn from_file(path: &Path) -> Result<Self> {
        let template = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let digest = hex::encode(Sha256::digest(template.as_bytes()));
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("scaffold");
        Self::new(format!("{stem}-{}", &digest[..12]), template)
    }

    pub fn render(&self, examples: &[LabeledExample], thresholds: &Thresholds) -> String {
        let block = if examples.is_empty() {
            String::new()
        } else {
            let mut block = String::from("\nExamples of correct predictions:\n");
            for (i, ex) in examples.iter().enumerate() {
                block.push_str(&format!(
                    "\nExample {}:\n{}\nImpact: {}\n",
                    i + 1,
                    render_user_prompt(&ex.features, ex.horizon_minutes),
                    ex.truth.word()
                ));
            }
            block
        };
        let text = self
            .template
            .replace("{{mild_max}}", &trim_number(thresholds.mild_max))
            .replace("{{moderate_max}}", &trim_number(thresholds.moderate_max))
            .replace("{{examples}}", &block);
        format!("{}\n", text.trim_end())
    }
}

fn trim_number(v: f64) -> String {
    // 0.2 -> "0.2", 0.25 -> "0.25"; no locale involvement
    let s = format!("{v:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// System prompt with the built-in scaffold and default thresholds.
pub fn render_system_prompt(examples: &[LabeledExample], _horizon_minutes: u32) -> String {
    PromptScaffold::default().render(examples, &Thresholds::default())
}

const SMALL_NUMBERS: [&str; 10] = [
    "no", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

fn count_word(n: u32) -> String {
    match SMALL_NUMBERS.get(n as usize) {
        Some(w) => w.to_string(),
        None => n.to_string(),
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn counted(n: u32, singular: &str, plural: &str) -> String {
    let noun = if n == 1 { singular } else { plural };
    let verb = if n == 1 { "is" } else { "are" };
    format!("{} {noun} {verb}", capitalize(&count_word(n)))
}

fn clock_time(features: &FeatureVector) -> String {
    let t = features.incident_time;
    let (pm, hour) = t.hour12();
    format!("{hour}:{:02} {}", t.minute(), if pm { "PM" } else { "AM" })
}

fn pre_incident_phrase(rho: f64) -> String {
    let magnitude = rho.abs().round();
    if magnitude == 0.0 {
        "about the same as the historical mean speed".to_string()
    } else {
        let side = if rho < 0.0 { "below" } else { "above" };
        format!("{magnitude:.0} mph {side} the historical mean speed")
    }
}

/// Natural-language description of one incident at a prediction horizon.
pub fn render_user_prompt(features: &FeatureVector, horizon_minutes: u32) -> String {
    format!(
        "A traffic collision incident occurred at {}. {} involved. {} blocked currently. \
         The pre-incident traffic speed was {} for the time of the day. \
         The initial decrease in speed in the first few minutes after the incident is {:.2}%. \
         Predict what would be the impact after {} minutes.",
        clock_time(features),
        counted(features.num_vehicles, "vehicle", "vehicles"),
        counted(features.num_lanes_blocked, "lane", "lanes"),
        pre_incident_phrase(features.pre_incident_relative_speed),
        features.initial_decrease_ratio * 100.0,
        horizon_minutes
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ImpactClass;
    use chrono::NaiveTime;

    fn fv(h: u32, m: u32, veh: u32, lanes: u32, rho: f64, delta: f64) -> FeatureVector {
        FeatureVector {
            incident_time: NaiveTime::from_hms_opt(h, m, 0).unwrap(),
            num_vehicles: veh,
            num_lanes_blocked: lanes,
            pre_incident_relative_speed: rho,
            initial_decrease_ratio: delta,
        }
    }

    #[test]
    fn quiet_incident_branches() {
        let text = render_user_prompt(&fv(9, 0, 1, 0, 0.0, 0.0), 30);
        assert_eq!(
            text,
            "A traffic collision incident occurred at 9:00 AM. One vehicle is involved. \
             No lanes are blocked currently. The pre-incident traffic speed was about the same as the \
             historical mean speed for the time of the day. The initial decrease in speed in the first \
             few minutes after the incident is 0.00%. Predict what would be the impact after 30 minutes."
        );
    }

    #[test]
    fn number_formatting() {
        let text = render_user_prompt(&fv(0, 5, 12, 2, 4.6, 0.5), 15);
        assert!(text.contains("12:05 AM"));
        assert!(text.contains("12 vehicles are involved."));
        assert!(text.contains("Two lanes are blocked currently."));
        assert!(text.contains("5 mph above the historical mean speed"));
        assert!(text.contains("50.00%"));
        let noon = render_user_prompt(&fv(12, 30, 2, 1, -0.4, 0.0), 15);
        assert!(noon.contains("12:30 PM"));
        assert!(noon.contains("about the same as"));
    }

    #[test]
    fn system_prompt_without_examples() {
        let text = render_system_prompt(&[], 15);
        assert!(text.contains(
            "A higher number of blocked lanes may probably cause a bigger decrease in speed."
        ));
        assert!(text.contains("single word: mild, moderate or severe"));
        assert!(text.contains("at most 0.2."));
        assert!(!text.contains("Example 1:"));
        assert!(!text.contains("{{"));
    }

    #[test]
    fn system_prompt_lists_examples_in_order() {
        let examples: Vec<LabeledExample> = (0..24)
            .map(|i| LabeledExample {
                incident_id: format!("e{i}"),
                features: fv(8, i, 1 + i % 3, i % 2, -(i as f64), 0.01 * i as f64),
                horizon_minutes: 15,
                truth: ImpactClass::ALL[i as usize % 3],
            })
            .collect();
        let text = render_system_prompt(&examples, 15);
        assert!(text.contains("Example 24:"));
        let mut last = 0;
        for (i, ex) in examples.iter().enumerate() {
            let block = format!(
                "Example {}:\n{}\nImpact: {}\n",
                i + 1,
                render_user_prompt(&ex.features, 15),
                ex.truth
            );
            let at = text.find(&block).expect("example block present");
            assert!(at >= last);
            last = at;
        }
        assert_eq!(text, render_system_prompt(&examples, 15));
    }

    #[test]
    fn scaffold_requires_placeholder() {
        assert!(PromptScaffold::new("x", "no placeholder").is_err());
        let s =
            PromptScaffold::new("x", "Rules {{mild_max}}/{{moderate_max}}.{{examples}}").unwrap();
        let t = Thresholds {
            mild_max: 0.25,
            moderate_max: 0.6,
        };
        assert_eq!(s.render(&[], &t), "Rules 0.25/0.6.\n");
    }
}
