use crate::error::{Error, Result};
use crate::model::ImpactClass;

/// Accepts a response iff exactly one of the class words appears in it as a
/// whole word (case and punctuation are ignored).
pub fn parse_prediction(raw: &str) -> Result<ImpactClass> {
    let lowered = raw.to_lowercase();
    let mut found: Option<ImpactClass> = None;
    for word in lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        let class = match word {
            "mild" => ImpactClass::Mild,
            "moderate" => ImpactClass::Moderate,
            "severe" => ImpactClass::Severe,
            _ => continue,
        };
        match found {
            Some(prev) if prev != class => {
                return Err(Error::UnparseableResponse {
                    raw: raw.to_string(),
                })
            }
            _ => found = Some(class),
        }
    }
    found.ok_or_else(|| Error::UnparseableResponse {
        raw: raw.to_string(),
    })
}
