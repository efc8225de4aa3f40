//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::ResampleConfig;
use crate::error::{Error, Result};
use crate::gateway::ProviderConfig;
use crate::model::{horizon_steps, Thresholds};
use crate::selection::SelectionConfig;
use crate::synth::SynthConfig;
use crate::traffic::DEFAULT_SPAN_MILES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub sensors: PathBuf,
    pub speeds: PathBuf,
    pub incidents: PathBuf,
    /// Tab-separated abbreviation list; logs are used verbatim when absent.
    pub glossary: Option<PathBuf>,
    /// Prompt template file; the built-in scaffold is used when absent.
    pub scaffold: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            sensors: "data/sensors.csv".into(),
            speeds: "data/speeds.csv".into(),
            incidents: "data/incidents.txt".into(),
            glossary: Some("data/glossary.tsv".into()),
            scaffold: None,
            output_dir: "out".into(),
        }
    }
}

impl PathsConfig {
    /// Paths of a generated dataset directory, with outputs in `output_dir`.
    pub fn for_dataset(data_dir: &Path, output_dir: &Path) -> Self {
        let files = crate::synth::SynthPaths::in_dir(data_dir);
        PathsConfig {
            sensors: files.sensors,
            speeds: files.speeds,
            incidents: files.incidents,
            glossary: Some(files.glossary),
            scaffold: None,
            output_dir: output_dir.to_path_buf(),
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.sensors);
        fix(&mut self.speeds);
        fix(&mut self.incidents);
        fix(&mut self.output_dir);
        if let Some(p) = self.glossary.as_mut() {
            fix(p);
        }
        if let Some(p) = self.scaffold.as_mut() {
            fix(p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionMode {
    Rules,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    pub mode: ExtractionMode,
    /// Provider for `llm` mode; the first prediction provider when absent.
    pub provider: Option<ProviderConfig>,
    /// Fall back to the rules extractor when the provider is unavailable.
    pub fallback_to_rules: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            mode: ExtractionMode::Rules,
            provider: None,
            fallback_to_rules: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub nearest_centroid: bool,
    pub knn: bool,
    pub knn_neighbors: usize,
    pub resample: ResampleConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            nearest_centroid: true,
            knn: true,
            knn_neighbors: 5,
            resample: ResampleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    /// Fraction of incidents, earliest first, used for training.
    pub split_fraction: f64,
    pub horizons: Vec<u32>,
    pub thresholds: Thresholds,
    pub span_miles: f64,
    /// Separate weekday and weekend historical profiles.
    pub split_weekends: bool,
    pub selection: SelectionConfig,
    pub providers: Vec<ProviderConfig>,
    pub extraction: ExtractionConfig,
    pub baselines: BaselineConfig,
    /// Prediction repetitions averaged in the reports.
    pub runs: usize,
    /// `k_top` values for the example-count sweep.
    pub k_sweep: Vec<usize>,
    /// Uniformly random examples used against the selected ones.
    pub random_examples: usize,
    pub rng_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: PathsConfig::default(),
            split_fraction: 0.8,
            horizons: vec![15, 30],
            thresholds: Thresholds::default(),
            span_miles: DEFAULT_SPAN_MILES,
            split_weekends: false,
            selection: SelectionConfig::default(),
            providers: vec![ProviderConfig::mock()],
            extraction: ExtractionConfig::default(),
            baselines: BaselineConfig::default(),
            runs: 3,
            k_sweep: vec![0, 1, 2, 3],
            random_examples: 24,
            rng_seed: 0,
        }
    }
}

impl RunConfig {
    /// Reads a TOML file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        config
            .paths
            .resolve(path.parent().unwrap_or(Path::new(".")));
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction must be in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if self.horizons.is_empty() {
            return Err(Error::Config("at least one horizon is required".into()));
        }
        for &h in &self.horizons {
            horizon_steps(h).map_err(|e| Error::Config(e.to_string()))?;
        }
        let mut seen = self.horizons.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.horizons.len() {
            return Err(Error::Config("horizons contain duplicates".into()));
        }
        if self.span_miles.is_nan() || self.span_miles <= 0.0 {
            return Err(Error::Config("span_miles must be positive".into()));
        }
        self.thresholds.validate()?;
        self.selection.validate()?;
        self.baselines.resample.validate()?;
        if self.baselines.knn && self.baselines.knn_neighbors == 0 {
            return Err(Error::Config("knn_neighbors must be at least 1".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        let mut labels: Vec<&str> = self.providers.iter().map(|p| p.label()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.providers.len() {
            return Err(Error::Config("provider labels must be unique".into()));
        }
        if self
            .k_sweep
            .iter()
            .any(|&k| k > self.selection.n_candidates)
        {
            return Err(Error::Config(
                "k_sweep values cannot exceed selection.n_candidates".into(),
            ));
        }
        if self.extraction.mode == ExtractionMode::Llm
            && self.extraction.provider.is_none()
            && self.providers.is_empty()
        {
            return Err(Error::Config("llm extraction needs a provider".into()));
        }
        Ok(())
    }

    /// Replaces the global seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

impl SynthConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: SynthConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let config = RunConfig::default();
        config.validate().unwrap();
        let text = config.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);
        assert_eq!(back.hash(), config.hash());
    }

    #[test]
    fn partial_file_fills_defaults_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "rng_seed = 9\nhorizons = [15]\n[paths]\nincidents = \"x/inc.txt\"\n[selection]\nm = 6\n\
             [[providers]]\nprovider_name = \"mock\"\nmodel_id = \"m1\"\n",
        )
        .unwrap();
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.rng_seed, 9);
        assert_eq!(config.selection.m, 6);
        assert_eq!(config.selection.n_candidates, 30);
        assert_eq!(config.paths.incidents, dir.path().join("x/inc.txt"));
        assert_eq!(config.providers[0].model_id, "m1");
    }

    #[test]
    fn rejects_bad_values() {
        let bad = |f: fn(&mut RunConfig)| {
            let mut c = RunConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.split_fraction = 1.0));
        assert!(bad(|c| c.horizons = vec![12]));
        assert!(bad(|c| c.horizons = vec![15, 15]));
        assert!(bad(|c| c.runs = 0));
        assert!(bad(|c| c.providers.push(ProviderConfig::mock())));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "unknown_key = 1\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn synth_config_from_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("synth.toml");
        std::fs::write(
            &path,
            "incidents = 50\ndays = 10\n[class_mix]\nmild = 0.5\nmoderate = 0.3\nsevere = 0.2\n",
        )
        .unwrap();
        let c = SynthConfig::load(&path).unwrap();
        assert_eq!((c.incidents, c.days), (50, 10));
        assert_eq!(c.class_mix.severe, 0.2);
        std::fs::write(
            &path,
            "[bands]\nmild = [0.0, 0.1]\nmoderate = [0.3, 0.4]\nsevere = [0.6, 0.99]\n",
        )
        .unwrap();
        assert!(
            matches!(SynthConfig::load(&path), Err(Error::Config(m)) if m.contains("infeasible"))
        );
    }
}
