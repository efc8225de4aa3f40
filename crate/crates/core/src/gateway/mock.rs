//! Deterministic offline stand-in for a chat model.
//!
//! The mock reads the same prompts a real model would: it parses the example
//! blocks out of the system prompt and the incident out of the user prompt,
//! then answers with the class of the nearest z-scored class centroid. Without
//! examples it applies the class thresholds to the initial decrease ratio.
//! Extraction prompts are answered with the rule-based extractor.

use std::sync::OnceLock;

use chrono::NaiveTime;
use regex::Regex;

use super::{LlmProvider, PromptPair, ProviderError};
use crate::extraction;
use crate::model::{FeatureVector, ImpactClass, LabeledExample, PerClass, Thresholds};
use crate::normalize::{euclidean, Normalizer};

pub struct MockProvider {
    model_id: String,
    thresholds: Thresholds,
}

impl MockProvider {
    pub fn new(model_id: impl Into<String>) -> Self {
        MockProvider {
            model_id: model_id.into(),
            thresholds: Thresholds::default(),
        }
    }

    pub fn with_thresholds(mut self, thresholds: Thresholds) -> Self {
        self.thresholds = thresholds;
        self
    }
}

impl LlmProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, prompt: &PromptPair) -> Result<String, ProviderError> {
        if prompt
            .system_text
            .starts_with(extraction::INSTRUCTION_HEADER)
        {
            let features = extraction::extract_features_rules(&prompt.user_text);
            return Ok(extraction::format_response(&features));
        }
        let Some((features, _horizon)) = parse_user_prompt(&prompt.user_text) else {
            return Ok("unknown".to_string());
        };
        let examples = parse_examples(&prompt.system_text);
        let class = if examples.is_empty() {
            self.thresholds
                .classify(features.initial_decrease_ratio)
                .unwrap_or(ImpactClass::Mild)
        } else {
            mock_predict(&features, &examples)
        };
        Ok(class.word().to_string())
    }
}

/// Nearest-centroid vote over `examples` in the z-scored space fitted on them.
/// Ties go to the milder class; a degenerate example set falls back to its
/// majority class, and an empty one to Mild.
pub fn mock_predict(features: &FeatureVector, examples: &[LabeledExample]) -> ImpactClass {
    let Ok(normalizer) = Normalizer::fit_vectors(examples.iter().map(|e| &e.features)) else {
        return majority_class(examples);
    };
    let mut sums: PerClass<Vec<f64>> = PerClass::from_fn(|_| vec![0.0; normalizer.dims()]);
    let mut counts = PerClass::<usize>::default();
    for ex in examples {
        counts[ex.truth] += 1;
        for (s, v) in sums[ex.truth]
            .iter_mut()
            .zip(normalizer.transform(&ex.features))
        {
            *s += v;
        }
    }
    let query = normalizer.transform(features);
    let mut best: Option<(f64, ImpactClass)> = None;
    for class in ImpactClass::ALL {
        if counts[class] == 0 {
            continue;
        }
        let centroid: Vec<f64> = sums[class]
            .iter()
            .map(|s| s / counts[class] as f64)
            .collect();
        let d = euclidean(&query, &centroid);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, class));
        }
    }
    best.map_or(ImpactClass::Mild, |(_, c)| c)
}

fn majority_class(examples: &[LabeledExample]) -> ImpactClass {
    let mut counts = PerClass::<usize>::default();
    for ex in examples {
        counts[ex.truth] += 1;
    }
    // max_by_key keeps the last maximum; iterate from Severe down so ties land on the milder class
    ImpactClass::ALL
        .into_iter()
        .rev()
        .max_by_key(|&c| counts[c])
        .unwrap_or(ImpactClass::Mild)
}

fn user_prompt_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"A traffic collision incident occurred at (\d{1,2}):(\d{2}) (AM|PM)\. (\w+) vehicles? (?:is|are) involved\. (\w+) lanes? (?:is|are) blocked currently\. The pre-incident traffic speed was (?:(\d+) mph (below|above)|about the same as) the historical mean speed for the time of the day\. The initial decrease in speed in the first few minutes after the incident is (\d+\.\d+)%\. Predict what would be the impact after (\d+) minutes\.",
        )
        .expect("valid regex")
    })
}

fn example_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?m)^Example \d+:\n(.+)\nImpact: (mild|moderate|severe)$")
            .expect("valid regex")
    })
}

fn count_from_word(word: &str) -> Option<u32> {
    const WORDS: [&str; 10] = [
        "no", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
    ];
    let lower = word.to_ascii_lowercase();
    WORDS
        .iter()
        .position(|w| *w == lower)
        .map(|i| i as u32)
        .or_else(|| lower.parse().ok())
}

/// Recovers the features and horizon from a rendered user prompt. Values come
/// back at the precision the prompt shows them.
pub fn parse_user_prompt(text: &str) -> Option<(FeatureVector, u32)> {
    let caps = user_prompt_regex().captures(text)?;
    let hour12: u32 = caps[1].parse().ok()?;
    let minute: u32 = caps[2].parse().ok()?;
    let hour = match (&caps[3], hour12) {
        ("AM", 12) => 0,
        ("AM", h) => h,
        ("PM", 12) => 12,
        (_, h) => h + 12,
    };
    let rho = match (caps.get(6), caps.get(7)) {
        (Some(m), Some(side)) => {
            let v: f64 = m.as_str().parse().ok()?;
            if side.as_str() == "below" {
                -v
            } else {
                v
            }
        }
        _ => 0.0,
    };
    let percent: f64 = caps[8].parse().ok()?;
    Some((
        FeatureVector {
            incident_time: NaiveTime::from_hms_opt(hour, minute, 0)?,
            num_vehicles: count_from_word(&caps[4])?,
            num_lanes_blocked: count_from_word(&caps[5])?,
            pre_incident_relative_speed: rho,
            initial_decrease_ratio: percent / 100.0,
        },
        caps[9].parse().ok()?,
    ))
}

/// Example blocks of a rendered system prompt.
pub fn parse_examples(system_text: &str) -> Vec<LabeledExample> {
    example_regex()
        .captures_iter(system_text)
        .enumerate()
        .filter_map(|(i, caps)| {
            let (features, horizon) = parse_user_prompt(&caps[1])?;
            Some(LabeledExample {
                incident_id: format!("example-{}", i + 1),
                features,
                horizon_minutes: horizon,
                truth: caps[2].parse().ok()?,
            })
        })
        .collect()
}
