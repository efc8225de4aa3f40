//! Abbreviation and code expansion for incident log text.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    /// Lowercased alphanumeric runs of the key.
    words: Vec<String>,
    /// Text between consecutive words, exactly as in the key.
    separators: Vec<String>,
    expansion: String,
}

/// Maps abbreviations and codes to their expansions. Matching is
/// case-insensitive and bounded by non-alphanumeric characters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Glossary {
    entries: Vec<Entry>,
    by_first_word: HashMap<String, Vec<usize>>,
}

/// Alternating split into alphanumeric runs and the text between them.
fn segments(text: &str) -> Vec<(bool, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut current: Option<bool> = None;
    for (i, c) in text.char_indices() {
        let is_word = c.is_alphanumeric();
        match current {
            Some(w) if w == is_word => {}
            Some(w) => {
                out.push((w, &text[start..i]));
                start = i;
                current = Some(is_word);
            }
            None => current = Some(is_word),
        }
    }
    if let Some(w) = current {
        out.push((w, &text[start..]));
    }
    out
}

impl Glossary {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut glossary = Glossary::default();
        let mut seen: HashMap<String, String> = HashMap::new();
        for (key, expansion) in pairs {
            let key = key.trim();
            let segs = segments(key);
            if segs.is_empty() || !segs.first().unwrap().0 || !segs.last().unwrap().0 {
                return Err(Error::InvalidInput(format!(
                    "glossary key `{key}` must start and end with a letter or digit"
                )));
            }
            let folded = key.to_lowercase();
            match seen.get(&folded) {
                Some(prev) if *prev != expansion => {
                    return Err(Error::InvalidInput(format!(
                        "glossary key `{key}` has conflicting expansions `{prev}` and `{expansion}`"
                    )))
                }
                Some(_) => continue,
                None => {
                    seen.insert(folded, expansion.clone());
                }
            }
            let words: Vec<String> = segs
                .iter()
                .filter(|s| s.0)
                .map(|s| s.1.to_lowercase())
                .collect();
            let separators: Vec<String> = segs
                .iter()
                .filter(|s| !s.0)
                .map(|s| s.1.to_string())
                .collect();
            let idx = glossary.entries.len();
            glossary
                .by_first_word
                .entry(words[0].clone())
                .or_default()
                .push(idx);
            glossary.entries.push(Entry {
                words,
                separators,
                expansion,
            });
        }
        let entries = &glossary.entries;
        for candidates in glossary.by_first_word.values_mut() {
            // longest key first
            candidates.sort_by(|&a, &b| {
                let len = |e: &Entry| {
                    e.words.iter().map(String::len).sum::<usize>()
                        + e.separators.iter().map(String::len).sum::<usize>()
                };
                len(&entries[b]).cmp(&len(&entries[a])).then(a.cmp(&b))
            });
        }
        Ok(glossary)
    }

    /// Reads a two-column UTF-8 TSV (`key<TAB>expansion`); `#` lines are comments.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, path)
    }

    pub fn parse_tsv(text: &str, path: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, expansion)) = line.split_once('\t') else {
                return Err(Error::parse(path, n + 1, "expected `key<TAB>expansion`"));
            };
            if key.trim().is_empty() {
                return Err(Error::parse(path, n + 1, "empty glossary key"));
            }
            pairs.push((key.trim().to_string(), expansion.trim().to_string()));
        }
        Self::new(pairs).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn matches_at(&self, segs: &[(bool, &str)], at: usize, entry: &Entry) -> Option<usize> {
        // segs[at] is a word; returns the index one past the last matched segment
        let mut pos = at;
        for (k, word) in entry.words.iter().enumerate() {
            let seg = segs.get(pos)?;
            if !seg.0 || seg.1.to_lowercase() != *word {
                return None;
            }
            pos += 1;
            if k + 1 < entry.words.len() {
                let sep = segs.get(pos)?;
                if sep.0 || sep.1 != entry.separators[k] {
                    return None;
                }
                pos += 1;
            }
        }
        Some(pos)
    }

    /// Replaces every whole-token key occurrence in one left-to-right pass.
    /// At each position the longest matching key wins; expansions are not
    /// re-scanned.
    pub fn expand(&self, line: &str) -> String {
        let segs = segments(line);
        let mut out = String::with_capacity(line.len());
        let mut i = 0;
        while i < segs.len() {
            let (is_word, text) = segs[i];
            if is_word {
                let replacement =
                    self.by_first_word
                        .get(&text.to_lowercase())
                        .and_then(|candidates| {
                            candidates.iter().find_map(|&e| {
                                self.matches_at(&segs, i, &self.entries[e])
                                    .map(|end| (end, &self.entries[e].expansion))
                            })
                        });
                if let Some((end, expansion)) = replacement {
                    out.push_str(expansion);
                    i = end;
                    continue;
                }
            }
            out.push_str(text);
            i += 1;
        }
        out
    }
}

pub fn expand_glossary(raw_line: &str, glossary: &Glossary) -> String {
    glossary.expand(raw_line)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn glossary(pairs: &[(&str, &str)]) -> Glossary {
        Glossary::new(pairs.iter().map(|(k, v)| (k.to_string(), v.to_string()))).unwrap()
    }

    #[test]
    fn expands_codes_and_abbreviations() {
        let g = glossary(&[("1141", "ambulance requested"), ("enrt", "en route")]);
        assert_eq!(
            expand_glossary("1141 enrt", &g),
            "ambulance requested en route"
        );
        assert_eq!(
            expand_glossary("1141 ENRT.", &g),
            "ambulance requested en route."
        );
    }

    #[test]
    fn unknown_tokens_pass_through() {
        let g = glossary(&[("TC", "traffic collision")]);
        assert_eq!(expand_glossary("nothing to see", &g), "nothing to see");
        assert_eq!(expand_glossary("ATC notified", &g), "ATC notified");
        assert_eq!(expand_glossary("TC-ATC", &g), "traffic collision-ATC");
    }

    #[test]
    fn longest_key_wins() {
        let g = glossary(&[
            ("SIG", "signal"),
            ("SIG ALERT", "major incident alert"),
            ("LN", "lane"),
            ("LNS", "lanes"),
        ]);
        assert_eq!(g.expand("SIG ALERT ISSUED"), "major incident alert ISSUED");
        assert_eq!(g.expand("SIG OUT"), "signal OUT");
        assert_eq!(g.expand("2 LNS / #1 LN"), "2 lanes / #1 lane");
    }

    #[test]
    fn single_pass() {
        let g = glossary(&[("A", "B"), ("B", "C")]);
        assert_eq!(g.expand("A B"), "B C");
    }

    #[test]
    fn conflicting_duplicates_rejected() {
        let err = Glossary::new(vec![
            ("RS".into(), "right shoulder".into()),
            ("rs".into(), "road side".into()),
        ]);
        assert!(err.is_err());
        let ok = Glossary::new(vec![
            ("RS".into(), "right shoulder".into()),
            ("rs".into(), "right shoulder".into()),
        ]);
        assert_eq!(ok.unwrap().len(), 1);
        assert!(Glossary::new(vec![("#1".into(), "x".into())]).is_err());
    }

    #[test]
    fn tsv_parsing() {
        let text = "# CHP codes\n1141\tambulance requested\n\nENRT\ten route\n";
        let g = Glossary::parse_tsv(text, Path::new("g.tsv")).unwrap();
        assert_eq!(g.len(), 2);
        let err = Glossary::parse_tsv("1141 ambulance\n", Path::new("g.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    proptest! {
        #[test]
        fn idempotent_when_expansions_are_key_free(words in proptest::collection::vec("[a-z]{1,6}|TC|1141|enrt|[0-9]{1,3}", 0..12)) {
            let g = glossary(&[("TC", "traffic collision"), ("1141", "ambulance requested"), ("enrt", "en route")]);
            let line = words.join(" ");
            let once = g.expand(&line);
            prop_assert_eq!(g.expand(&once), once);
        }
    }
}
