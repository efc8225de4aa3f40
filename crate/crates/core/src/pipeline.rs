//! Stage orchestration: label, extract, select, predict, evaluate.
//!
//! Every stage reads its inputs from the data files or from artifacts of the
//! previous stages under the output directory, so a run can be resumed from
//! any stage. Each completed stage appends one line to `manifest.jsonl`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::baselines::{combined_resample, Knn, NearestCentroid, ResampleConfig};
use crate::config::{ExtractionMode, RunConfig};
use crate::data::{chronological_split, load_incidents, load_speed_csv};
use crate::error::{Error, Result, StageContext};
use crate::eval::{
    confusion_matrix_of, emit_report, f1_scores, render_comparison, render_table_iv,
    ComparisonPoint, PredictionRecord, ReportBundle, SweepPoint,
};
use crate::extraction::{ExtractionRequest, Extractor, Glossary};
use crate::gateway::{Gateway, ImpactPredictor, PromptScaffold, ProviderConfig, Query};
use crate::model::{
    FeatureVector, ImpactClass, Incident, IncidentFeatures, LabeledExample, TrafficFeatures,
};
use crate::rng::{self, derive_seed, tag_of};
use crate::selection::{random_examples, select_examples, SelectionConfig, SelectionOutcome};
use crate::traffic::{build_historical_profile, DateRange, SpeedData, TrafficContext};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Test,
}

/// Ground truth and traffic features of one incident at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub incident_id: String,
    pub partition: Partition,
    pub horizon_minutes: u32,
    pub truth: ImpactClass,
    pub target_ratio: f64,
    pub traffic: TrafficFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub incident_id: String,
    pub partition: Partition,
    pub features: IncidentFeatures,
    /// `rules`, `llm` or `rules-fallback`.
    pub extractor: String,
}

/// An incident left out of a stage, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub incident_id: String,
    pub reason: String,
}

/// Directory layout of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

/// Keeps model labels usable as file names.
pub fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }
    pub fn labels(&self) -> PathBuf {
        self.root.join("labels").join("labels.jsonl")
    }
    pub fn features(&self) -> PathBuf {
        self.root.join("features").join("features.jsonl")
    }
    pub fn selection(&self, model: &str, horizon: u32) -> PathBuf {
        self.root
            .join("selections")
            .join(format!("{}_h{horizon}.json", file_stem(model)))
    }
    pub fn predictions(&self, model: &str, horizon: u32, run: usize) -> PathBuf {
        self.root
            .join("predictions")
            .join(format!("{}_h{horizon}_run{run}.jsonl", file_stem(model)))
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn sweep(&self) -> PathBuf {
        self.reports().join("sweep.json")
    }
    pub fn comparison(&self) -> PathBuf {
        self.reports().join("comparison.json")
    }
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, n + 1, e.to_string())))
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(
        path,
        (serde_json::to_string_pretty(value)? + "\n").as_bytes(),
    )
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Data files loaded and split chronologically.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub speed: SpeedData,
    pub train: Vec<Incident>,
    pub test: Vec<Incident>,
    pub dropped_near_start: usize,
    pub glossary: Glossary,
}

impl Inputs {
    pub fn train_ids(&self) -> BTreeSet<String> {
        self.train.iter().map(|i| i.id.clone()).collect()
    }

    fn all(&self) -> impl Iterator<Item = (&Incident, Partition)> {
        self.train
            .iter()
            .map(|i| (i, Partition::Train))
            .chain(self.test.iter().map(|i| (i, Partition::Test)))
    }
}

/// Fails when any example is not a training incident.
pub fn assert_training_only(
    stage: &str,
    examples: &[LabeledExample],
    train_ids: &BTreeSet<String>,
) -> Result<()> {
    match examples
        .iter()
        .find(|e| !train_ids.contains(&e.incident_id))
    {
        Some(e) => Err(Error::Leakage {
            stage: stage.to_string(),
            incident: e.incident_id.clone(),
        }),
        None => Ok(()),
    }
}

/// Joins labels and features for one horizon and partition, in label order.
pub fn assemble_examples(
    labels: &[LabelRecord],
    features: &[FeatureRecord],
    horizon_minutes: u32,
    partition: Partition,
) -> Vec<LabeledExample> {
    let by_id: BTreeMap<&str, &FeatureRecord> = features
        .iter()
        .map(|f| (f.incident_id.as_str(), f))
        .collect();
    labels
        .iter()
        .filter(|l| l.horizon_minutes == horizon_minutes && l.partition == partition)
        .filter_map(|l| {
            let f = by_id.get(l.incident_id.as_str())?;
            Some(LabeledExample {
                incident_id: l.incident_id.clone(),
                features: FeatureVector::new(&f.features, &l.traffic),
                horizon_minutes,
                truth: l.truth,
            })
        })
        .collect()
}

/// Predictions for every test example with one prompt example set. An
/// unparseable answer becomes an abstention; any other failure aborts.
pub fn predict_with(
    predictor: &dyn ImpactPredictor,
    model_id: &str,
    examples: &[LabeledExample],
    test: &[LabeledExample],
    run_index: usize,
) -> Result<Vec<PredictionRecord>> {
    test.par_iter()
        .map(|t| {
            let query = Query {
                incident_id: &t.incident_id,
                features: &t.features,
                horizon_minutes: t.horizon_minutes,
            };
            let (predicted, raw) = match predictor.predict(examples, &query) {
                Ok(p) => (Some(p.class), p.raw_response),
                Err(Error::UnparseableResponse { raw }) => {
                    log::warn!(
                        "{model_id}: unparseable answer for {}: {raw:?}",
                        t.incident_id
                    );
                    (None, raw)
                }
                Err(e) => return Err(e),
            };
            Ok(PredictionRecord::new(
                model_id,
                t.horizon_minutes,
                run_index,
                &t.incident_id,
                t.truth,
                predicted,
                &raw,
            ))
        })
        .collect()
}

fn macro_f1(records: &[PredictionRecord]) -> f64 {
    f1_scores(&confusion_matrix_of(records)).macro_f1
}

pub struct Pipeline {
    pub config: RunConfig,
    pub layout: Layout,
    scaffold: PromptScaffold,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let scaffold = match &config.paths.scaffold {
            Some(path) => PromptScaffold::from_file(path)?,
            None => PromptScaffold::default(),
        };
        let layout = Layout::new(&config.paths.output_dir);
        Ok(Pipeline {
            config,
            layout,
            scaffold,
        })
    }

    fn append_manifest(&self, stage: &str, details: Value) -> Result<()> {
        std::fs::create_dir_all(&self.layout.root).map_err(|e| Error::io(&self.layout.root, e))?;
        let entry = json!({
            "stage": stage,
            "finished_at": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            "config_hash": self.config.hash(),
            "code_version": CODE_VERSION,
            "scaffold_version": self.scaffold.version,
            "rng_seed": self.config.rng_seed,
            "details": details,
        });
        let path = self.layout.manifest();
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(file, "{entry}").map_err(|e| Error::io(&path, e))
    }

    pub fn gateway(&self, provider: &ProviderConfig) -> Result<Gateway> {
        Ok(Gateway::from_config(provider)
            .stage("gateway")?
            .with_scaffold(self.scaffold.clone())
            .with_thresholds(self.config.thresholds))
    }

    pub fn load_inputs(&self) -> Result<Inputs> {
        let paths = &self.config.paths;
        let speed = load_speed_csv(&paths.sensors, &paths.speeds)?;
        let load = load_incidents(&paths.incidents)?;
        if load.dropped_near_start > 0 {
            log::info!(
                "dropped {} incidents near the start of their roadway",
                load.dropped_near_start
            );
        }
        let (train, test) = chronological_split(&load.incidents, self.config.split_fraction)?;
        let glossary = match &paths.glossary {
            Some(path) => Glossary::load(path)?,
            None => Glossary::default(),
        };
        Ok(Inputs {
            speed,
            train,
            test,
            dropped_near_start: load.dropped_near_start,
            glossary,
        })
    }

    /// Days used for the historical profile: those before the first test
    /// incident's day, or through that day if nothing precedes it.
    pub fn profile_period(&self, inputs: &Inputs) -> Result<DateRange> {
        let span = inputs
            .speed
            .date_span()
            .ok_or_else(|| Error::InsufficientData("speed data is empty".into()))?;
        let Some(first_test) = inputs.test.iter().map(|i| i.first_report_time.date()).min() else {
            return Ok(span);
        };
        let end = first_test
            .pred_opt()
            .filter(|d| *d >= span.start)
            .unwrap_or(first_test);
        Ok(DateRange {
            start: span.start,
            end: end.min(span.end),
        })
    }

    pub fn label(&self, inputs: &Inputs) -> Result<Vec<LabelRecord>> {
        let stage = || "label";
        let period = self.profile_period(inputs).stage(stage())?;
        let profile = build_historical_profile(&inputs.speed, period, self.config.split_weekends)
            .stage(stage())?;
        let ctx = TrafficContext {
            data: &inputs.speed,
            profile: &profile,
            span_miles: self.config.span_miles,
            thresholds: self.config.thresholds,
        };
        let horizons = &self.config.horizons;
        let all: Vec<(&Incident, Partition)> = inputs.all().collect();
        let outcomes: Vec<Result<Vec<LabelRecord>, Skipped>> = all
            .par_iter()
            .map(|&(incident, partition)| {
                let skip = |e: Error| Skipped {
                    incident_id: incident.id.clone(),
                    reason: e.to_string(),
                };
                let traffic = ctx.traffic_features(incident).map_err(skip)?;
                horizons
                    .iter()
                    .map(|&h| {
                        let ratio = ctx.target_ratio(incident, h).map_err(skip)?;
                        Ok(LabelRecord {
                            incident_id: incident.id.clone(),
                            partition,
                            horizon_minutes: h,
                            truth: self.config.thresholds.classify(ratio).map_err(skip)?,
                            target_ratio: ratio,
                            traffic,
                        })
                    })
                    .collect()
            })
            .collect();
        let mut records = Vec::new();
        let mut skipped = Vec::new();
        for outcome in outcomes {
            match outcome {
                Ok(r) => records.extend(r),
                Err(s) => {
                    log::warn!("skipping {}: {}", s.incident_id, s.reason);
                    skipped.push(s);
                }
            }
        }
        write_jsonl(&self.layout.labels(), &records).stage(stage())?;
        let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for r in &records {
            let key = format!("{:?}_h{}", r.partition, r.horizon_minutes).to_lowercase();
            *counts
                .entry(key)
                .or_default()
                .entry(r.truth.to_string())
                .or_default() += 1;
        }
        self.append_manifest(
            stage(),
            json!({
                "train_incidents": inputs.train.len(),
                "test_incidents": inputs.test.len(),
                "dropped_near_start": inputs.dropped_near_start,
                "profile_period": period,
                "class_counts": counts,
                "skipped": skipped,
            }),
        )?;
        Ok(records)
    }

    pub fn extract(&self, inputs: &Inputs) -> Result<Vec<FeatureRecord>> {
        let stage = "extract";
        let extraction = &self.config.extraction;
        let gateway = match extraction.mode {
            ExtractionMode::Rules => None,
            ExtractionMode::Llm => {
                let provider = extraction
                    .provider
                    .as_ref()
                    .or(self.config.providers.first())
                    .expect("validated");
                match self.gateway(provider) {
                    Ok(g) => Some(g),
                    Err(e) if extraction.fallback_to_rules => {
                        log::warn!("llm extraction unavailable ({e}); using rules");
                        None
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        let timeline = inputs.speed.timeline;
        let all: Vec<(&Incident, Partition)> = inputs.all().collect();
        let outcomes: Vec<Result<Option<FeatureRecord>>> = all
            .par_iter()
            .map(|&(incident, partition)| {
                let request = match ExtractionRequest::build(incident, &timeline, &inputs.glossary)
                {
                    Ok(r) => r,
                    Err(Error::EmptyLog { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let (features, extractor) = match &gateway {
                    None => (Extractor::Rules.extract(&request)?, "rules"),
                    Some(g) => match Extractor::Llm(g).extract(&request) {
                        Ok(f) => (f, "llm"),
                        Err(
                            e @ (Error::ExtractionUnavailable(_) | Error::ExtractionParse { .. }),
                        ) if extraction.fallback_to_rules => {
                            log::warn!("{}: {e}; using rules", incident.id);
                            (Extractor::Rules.extract(&request)?, "rules-fallback")
                        }
                        Err(e) => return Err(e),
                    },
                };
                Ok(Some(FeatureRecord {
                    incident_id: incident.id.clone(),
                    partition,
                    features,
                    extractor: extractor.into(),
                }))
            })
            .collect();
        let mut records = Vec::new();
        let mut empty = Vec::new();
        for ((incident, _), outcome) in all.iter().zip(outcomes) {
            match outcome.stage(stage)? {
                Some(r) => records.push(r),
                None => empty.push(incident.id.clone()),
            }
        }
        write_jsonl(&self.layout.features(), &records).stage(stage)?;
        let mut by_extractor: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &records {
            *by_extractor.entry(r.extractor.as_str()).or_default() += 1;
        }
        self.append_manifest(
            stage,
            json!({ "extracted": records.len(), "by_extractor": by_extractor, "empty_log": empty }),
        )?;
        Ok(records)
    }

    pub fn load_labels(&self) -> Result<Vec<LabelRecord>> {
        read_jsonl(&self.layout.labels()).map_err(|e| Error::Stage {
            stage: "label",
            source: Box::new(e),
        })
    }

    pub fn load_features(&self) -> Result<Vec<FeatureRecord>> {
        read_jsonl(&self.layout.features()).map_err(|e| Error::Stage {
            stage: "extract",
            source: Box::new(e),
        })
    }

    fn examples(&self, horizon: u32, partition: Partition) -> Result<Vec<LabeledExample>> {
        Ok(assemble_examples(
            &self.load_labels()?,
            &self.load_features()?,
            horizon,
            partition,
        ))
    }

    fn train_ids(&self) -> Result<BTreeSet<String>> {
        Ok(self
            .load_labels()?
            .into_iter()
            .filter(|l| l.partition == Partition::Train)
            .map(|l| l.incident_id)
            .collect())
    }

    fn selection_config(&self, horizon: u32) -> SelectionConfig {
        let mut config = self.config.selection.clone();
        config.rng_seed = derive_seed(
            self.config.rng_seed,
            &[tag_of("selection"), config.rng_seed, u64::from(horizon)],
        );
        config
    }

    pub fn select(&self) -> Result<()> {
        let stage = "select";
        let train_ids = self.train_ids()?;
        let mut details = Vec::new();
        for provider in &self.config.providers {
            let gateway = self.gateway(provider)?;
            for &h in &self.config.horizons {
                let train = self.examples(h, Partition::Train)?;
                assert_training_only(stage, &train, &train_ids)?;
                let outcome =
                    select_examples(&train, &self.selection_config(h), &gateway).stage(stage)?;
                write_json(&self.layout.selection(provider.label(), h), &outcome).stage(stage)?;
                let best = outcome
                    .ranking
                    .first()
                    .map(|&i| outcome.candidates[i].validation_score);
                details.push(json!({
                    "model": provider.label(),
                    "horizon": h,
                    "outliers": outcome.outlier_ids.len(),
                    "best_validation_accuracy": best,
                    "calls": gateway.call_count(),
                }));
            }
        }
        self.append_manifest(stage, json!({ "selections": details }))
    }

    pub fn load_selection(&self, model: &str, horizon: u32) -> Result<SelectionOutcome> {
        let path = self.layout.selection(model, horizon);
        read_json(&path).map_err(|e| Error::Stage {
            stage: "select",
            source: Box::new(e),
        })
    }

    /// Model ids of the enabled baselines.
    pub fn baseline_ids(&self) -> Vec<String> {
        let b = &self.config.baselines;
        let mut ids = Vec::new();
        if b.nearest_centroid {
            ids.push("nearest-centroid".to_string());
        }
        if b.knn {
            ids.push(format!("knn-{}", b.knn_neighbors));
        }
        ids
    }

    /// Every model id in report order.
    pub fn model_ids(&self) -> Vec<String> {
        self.config
            .providers
            .iter()
            .map(|p| p.label().to_string())
            .chain(self.baseline_ids())
            .collect()
    }

    pub fn predict(&self) -> Result<()> {
        let stage = "predict";
        let train_ids = self.train_ids()?;
        let mut details = Vec::new();
        for provider in &self.config.providers {
            let gateway = self.gateway(provider)?;
            for &h in &self.config.horizons {
                let examples = self.load_selection(provider.label(), h)?.final_examples();
                assert_training_only(stage, &examples, &train_ids)?;
                let test = self.examples(h, Partition::Test)?;
                for run in 0..self.config.runs {
                    let records = predict_with(&gateway, provider.label(), &examples, &test, run)
                        .stage(stage)?;
                    write_jsonl(&self.layout.predictions(provider.label(), h, run), &records)
                        .stage(stage)?;
                }
            }
            details.push(json!({ "model": provider.label(), "calls": gateway.call_count(), "peak_in_flight": gateway.peak_in_flight() }));
        }
        let baselines = self.predict_baselines(&train_ids).stage(stage)?;
        self.append_manifest(
            stage,
            json!({ "providers": details, "baselines": baselines }),
        )
    }

    fn predict_baselines(&self, train_ids: &BTreeSet<String>) -> Result<Vec<Value>> {
        let b = &self.config.baselines;
        let mut summaries = Vec::new();
        if !b.nearest_centroid && !b.knn {
            return Ok(summaries);
        }
        for &h in &self.config.horizons {
            let train = self.examples(h, Partition::Train)?;
            assert_training_only("baselines", &train, train_ids)?;
            let test = self.examples(h, Partition::Test)?;
            for run in 0..self.config.runs {
                let resample = ResampleConfig {
                    rng_seed: derive_seed(
                        self.config.rng_seed,
                        &[
                            tag_of("resample"),
                            b.resample.rng_seed,
                            u64::from(h),
                            run as u64,
                        ],
                    ),
                    ..b.resample.clone()
                };
                let balanced = combined_resample(&train, &resample)?;
                let mut counts = BTreeMap::new();
                for e in &balanced {
                    *counts.entry(e.truth.to_string()).or_insert(0usize) += 1;
                }
                let mut summary = json!({ "horizon": h, "run": run, "resampled_counts": counts });
                if b.nearest_centroid {
                    let model = NearestCentroid::fit(&balanced)?;
                    let records =
                        classify_all("nearest-centroid", &test, run, |f| model.predict(f));
                    write_jsonl(
                        &self.layout.predictions("nearest-centroid", h, run),
                        &records,
                    )?;
                    summary["nearest_centroid"] = serde_json::to_value(&model.centroids)?;
                }
                if b.knn {
                    let id = format!("knn-{}", b.knn_neighbors);
                    let model = Knn::fit(&balanced, b.knn_neighbors)?;
                    let records = classify_all(&id, &test, run, |f| model.predict(f));
                    write_jsonl(&self.layout.predictions(&id, h, run), &records)?;
                    summary["knn_reference_points"] = json!(balanced.len());
                }
                summaries.push(summary);
            }
        }
        Ok(summaries)
    }

    /// All prediction records present on disk, in report order.
    pub fn load_predictions(&self) -> Result<Vec<PredictionRecord>> {
        let mut records = Vec::new();
        for model in self.model_ids() {
            for &h in &self.config.horizons {
                for run in 0..self.config.runs {
                    let path = self.layout.predictions(&model, h, run);
                    if path.exists() {
                        records.extend(read_jsonl::<PredictionRecord>(&path)?);
                    } else {
                        log::warn!("no predictions at {}", path.display());
                    }
                }
            }
        }
        if records.is_empty() {
            return Err(Error::InsufficientData(
                "no prediction records found; run the predict stage first".into(),
            ));
        }
        Ok(records)
    }

    pub fn evaluate(&self) -> Result<ReportBundle> {
        let stage = "evaluate";
        let mut bundle =
            ReportBundle::from_records(self.load_predictions().stage(stage)?).stage(stage)?;
        if self.layout.sweep().exists() {
            bundle.sweep = read_json(&self.layout.sweep()).stage(stage)?;
        }
        if self.layout.comparison().exists() {
            bundle.comparison = read_json(&self.layout.comparison()).stage(stage)?;
        }
        emit_report(&self.layout.reports(), &bundle).stage(stage)?;
        let summary: Vec<Value> = bundle
            .averaged
            .iter()
            .map(|r| json!({ "model": r.model_id, "horizon": r.horizon_minutes, "macro_f1": r.macro_f1, "weighted_f1": r.weighted_f1, "abstain": r.abstain }))
            .collect();
        self.append_manifest(
            stage,
            json!({ "records": bundle.records.len(), "averaged": summary }),
        )?;
        Ok(bundle)
    }

    /// Test-set macro F1 with the examples of the best `k` candidates, for each `k`.
    pub fn sweep_k(&self, ks: &[usize]) -> Result<Vec<SweepPoint>> {
        let stage = "sweep-k";
        let train_ids = self.train_ids()?;
        let mut points = Vec::new();
        for provider in &self.config.providers {
            let gateway = self.gateway(provider)?;
            for &h in &self.config.horizons {
                let outcome = self.load_selection(provider.label(), h)?;
                let test = self.examples(h, Partition::Test)?;
                for &k in ks {
                    if k > outcome.candidates.len() {
                        return Err(Error::Config(format!(
                            "k = {k} exceeds the {} candidates",
                            outcome.candidates.len()
                        )))
                        .stage(stage);
                    }
                    let examples = outcome.top_k(k);
                    assert_training_only(stage, &examples, &train_ids)?;
                    let records = predict_with(&gateway, provider.label(), &examples, &test, 0)
                        .stage(stage)?;
                    points.push(SweepPoint {
                        model_id: provider.label().to_string(),
                        horizon_minutes: h,
                        k_top: k,
                        num_examples: examples.len(),
                        macro_f1: macro_f1(&records),
                    });
                }
            }
        }
        write_json(&self.layout.sweep(), &points).stage(stage)?;
        write_atomic(
            &self.layout.reports().join("table_iv.txt"),
            render_table_iv(&points).as_bytes(),
        )
        .stage(stage)?;
        self.append_manifest(stage, json!({ "k": ks, "points": points.len() }))?;
        Ok(points)
    }

    /// Test-set macro F1 of the selected examples against uniformly random
    /// training examples.
    pub fn compare_random(&self) -> Result<Vec<ComparisonPoint>> {
        let stage = "compare-random";
        let train_ids = self.train_ids()?;
        let mut points = Vec::new();
        for provider in &self.config.providers {
            let gateway = self.gateway(provider)?;
            for &h in &self.config.horizons {
                let selected = self.load_selection(provider.label(), h)?.final_examples();
                let train = self.examples(h, Partition::Train)?;
                let mut r = rng::stream(
                    derive_seed(self.config.rng_seed, &[tag_of("random-examples")]),
                    u64::from(h),
                );
                let random =
                    random_examples(&train, self.config.random_examples, &mut r).stage(stage)?;
                assert_training_only(stage, &random, &train_ids)?;
                assert_training_only(stage, &selected, &train_ids)?;
                let test = self.examples(h, Partition::Test)?;
                let with_selected =
                    predict_with(&gateway, provider.label(), &selected, &test, 0).stage(stage)?;
                let with_random =
                    predict_with(&gateway, provider.label(), &random, &test, 0).stage(stage)?;
                points.push(ComparisonPoint {
                    model_id: provider.label().to_string(),
                    horizon_minutes: h,
                    num_examples: random.len(),
                    selected_macro_f1: macro_f1(&with_selected),
                    random_macro_f1: macro_f1(&with_random),
                });
            }
        }
        write_json(&self.layout.comparison(), &points).stage(stage)?;
        write_atomic(
            &self.layout.reports().join("selection_vs_random.txt"),
            render_comparison(&points).as_bytes(),
        )
        .stage(stage)?;
        self.append_manifest(stage, json!({ "points": points.len() }))?;
        Ok(points)
    }

    /// Label, extract, select, predict, then the sweep and comparison when
    /// configured, then evaluate.
    pub fn run(&self) -> Result<ReportBundle> {
        for provider in &self.config.providers {
            self.gateway(provider)?;
        }
        let inputs = self.load_inputs().stage("load")?;
        self.label(&inputs)?;
        self.extract(&inputs)?;
        self.select()?;
        self.predict()?;
        if !self.config.k_sweep.is_empty() && !self.config.providers.is_empty() {
            self.sweep_k(&self.config.k_sweep)?;
        }
        if self.config.random_examples > 0 && !self.config.providers.is_empty() {
            self.compare_random()?;
        }
        self.evaluate()
    }
}

fn classify_all(
    model_id: &str,
    test: &[LabeledExample],
    run: usize,
    predict: impl Fn(&FeatureVector) -> ImpactClass + Sync,
) -> Vec<PredictionRecord> {
    test.par_iter()
        .map(|t| {
            let class = predict(&t.features);
            PredictionRecord::new(
                model_id,
                t.horizon_minutes,
                run,
                &t.incident_id,
                t.truth,
                Some(class),
                class.word(),
            )
        })
        .collect()
}
