//! Confusion matrices, F1 scores, run averaging and report files.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ImpactClass, PerClass};

/// One test-set prediction. `predicted` is `None` when the model gave no
/// usable answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub model_id: String,
    pub horizon_minutes: u32,
    pub run_index: usize,
    pub incident_id: String,
    pub truth: ImpactClass,
    pub predicted: Option<ImpactClass>,
    pub raw_response_digest: String,
}

pub fn digest(raw_response: &str) -> String {
    hex::encode(Sha256::digest(raw_response.as_bytes()))
}

impl PredictionRecord {
    pub fn new(
        model_id: &str,
        horizon_minutes: u32,
        run_index: usize,
        incident_id: &str,
        truth: ImpactClass,
        predicted: Option<ImpactClass>,
        raw_response: &str,
    ) -> Self {
        PredictionRecord {
            model_id: model_id.to_string(),
            horizon_minutes,
            run_index,
            incident_id: incident_id.to_string(),
            truth,
            predicted,
            raw_response_digest: digest(raw_response),
        }
    }
}

/// Rows are actual classes, columns predicted classes. Abstentions are
/// placed in the column of the class farthest from the truth and also
/// tallied separately.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
    pub abstain: u64,
}

impl ConfusionMatrix {
    pub fn from_rows(counts: [[u64; 3]; 3]) -> Self {
        ConfusionMatrix { counts, abstain: 0 }
    }

    pub fn add(&mut self, truth: ImpactClass, predicted: Option<ImpactClass>) {
        let column = predicted.unwrap_or_else(|| truth.most_distant());
        if predicted.is_none() {
            self.abstain += 1;
        }
        self.counts[truth.index()][column.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self) -> PerClass<u64> {
        PerClass::from_fn(|c| self.counts[c.index()].iter().sum())
    }

    pub fn predicted_totals(&self) -> PerClass<u64> {
        PerClass::from_fn(|c| self.counts.iter().map(|row| row[c.index()]).sum())
    }
}

pub fn confusion_matrix(
    pairs: impl IntoIterator<Item = (ImpactClass, Option<ImpactClass>)>,
) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::default();
    for (truth, predicted) in pairs {
        m.add(truth, predicted);
    }
    m
}

pub fn confusion_matrix_of(records: &[PredictionRecord]) -> ConfusionMatrix {
    confusion_matrix(records.iter().map(|r| (r.truth, r.predicted)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub per_class: PerClass<f64>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub support: PerClass<u64>,
}

/// Per-class F1 with 0 for classes that have neither support nor predictions.
pub fn f1_scores(matrix: &ConfusionMatrix) -> F1Scores {
    let support = matrix.support();
    let predicted = matrix.predicted_totals();
    let per_class = PerClass::from_fn(|c| {
        let tp = matrix.counts[c.index()][c.index()] as f64;
        let denom = (support[c] + predicted[c]) as f64;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    });
    let macro_f1 = ImpactClass::ALL.iter().map(|&c| per_class[c]).sum::<f64>() / 3.0;
    let total = matrix.total() as f64;
    let weighted_f1 = if total == 0.0 {
        0.0
    } else {
        ImpactClass::ALL
            .iter()
            .map(|&c| support[c] as f64 * per_class[c])
            .sum::<f64>()
            / total
    };
    F1Scores {
        per_class,
        macro_f1,
        weighted_f1,
        support,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_id: String,
    pub horizon_minutes: u32,
    /// `None` for an average over runs.
    pub run_index: Option<usize>,
    pub runs: usize,
    pub per_class_f1: PerClass<f64>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub support: PerClass<u64>,
    pub abstain: u64,
    pub confusion: Option<ConfusionMatrix>,
}

impl MetricReport {
    pub fn from_matrix(
        model_id: &str,
        horizon_minutes: u32,
        run_index: usize,
        matrix: ConfusionMatrix,
    ) -> Self {
        let f1 = f1_scores(&matrix);
        MetricReport {
            model_id: model_id.to_string(),
            horizon_minutes,
            run_index: Some(run_index),
            runs: 1,
            per_class_f1: f1.per_class,
            macro_f1: f1.macro_f1,
            weighted_f1: f1.weighted_f1,
            support: f1.support,
            abstain: matrix.abstain,
            confusion: Some(matrix),
        }
    }
}

/// Metric reports for every (model, horizon, run) group in `records`, in
/// order of first appearance.
pub fn reports_from_records(records: &[PredictionRecord]) -> Vec<MetricReport> {
    let mut keys: Vec<(&str, u32, usize)> = Vec::new();
    for r in records {
        let key = (r.model_id.as_str(), r.horizon_minutes, r.run_index);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(model, horizon, run)| {
            let matrix = confusion_matrix(
                records
                    .iter()
                    .filter(|r| {
                        r.model_id == model && r.horizon_minutes == horizon && r.run_index == run
                    })
                    .map(|r| (r.truth, r.predicted)),
            );
            MetricReport::from_matrix(model, horizon, run, matrix)
        })
        .collect()
}

/// Mean of each metric over runs of one model and horizon; supports and
/// abstentions are summed.
pub fn average_runs(reports: &[MetricReport]) -> Result<MetricReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidInput("no reports to average".into()))?;
    if let Some(other) = reports
        .iter()
        .find(|r| r.model_id != first.model_id || r.horizon_minutes != first.horizon_minutes)
    {
        return Err(Error::InvalidInput(format!(
            "cannot average {} @ {} min with {} @ {} min",
            first.model_id, first.horizon_minutes, other.model_id, other.horizon_minutes
        )));
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(MetricReport {
        model_id: first.model_id.clone(),
        horizon_minutes: first.horizon_minutes,
        run_index: None,
        runs: reports.iter().map(|r| r.runs).sum(),
        per_class_f1: PerClass::from_fn(|c| mean(&|r| r.per_class_f1[c])),
        macro_f1: mean(&|r| r.macro_f1),
        weighted_f1: mean(&|r| r.weighted_f1),
        support: PerClass::from_fn(|c| reports.iter().map(|r| r.support[c]).sum()),
        abstain: reports.iter().map(|r| r.abstain).sum(),
        confusion: None,
    })
}

/// Averages every (model, horizon) group, in order of first appearance.
pub fn average_groups(reports: &[MetricReport]) -> Result<Vec<MetricReport>> {
    let mut keys: Vec<(&str, u32)> = Vec::new();
    for r in reports {
        if !keys.contains(&(r.model_id.as_str(), r.horizon_minutes)) {
            keys.push((r.model_id.as_str(), r.horizon_minutes));
        }
    }
    keys.into_iter()
        .map(|(m, h)| {
            let group: Vec<MetricReport> = reports
                .iter()
                .filter(|r| r.model_id == m && r.horizon_minutes == h)
                .cloned()
                .collect();
            average_runs(&group)
        })
        .collect()
}

/// One cell of the example-count sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub model_id: String,
    pub horizon_minutes: u32,
    pub k_top: usize,
    pub num_examples: usize,
    pub macro_f1: f64,
}

/// Selected versus random examples for one model and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPoint {
    pub model_id: String,
    pub horizon_minutes: u32,
    pub num_examples: usize,
    pub selected_macro_f1: f64,
    pub random_macro_f1: f64,
}

/// Everything one evaluation writes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub records: Vec<PredictionRecord>,
    pub per_run: Vec<MetricReport>,
    pub averaged: Vec<MetricReport>,
    pub sweep: Vec<SweepPoint>,
    pub comparison: Vec<ComparisonPoint>,
}

impl ReportBundle {
    pub fn from_records(records: Vec<PredictionRecord>) -> Result<Self> {
        let per_run = reports_from_records(&records);
        let averaged = average_groups(&per_run)?;
        Ok(ReportBundle {
            records,
            per_run,
            averaged,
            sweep: Vec::new(),
            comparison: Vec::new(),
        })
    }
}

fn horizons(items: impl Iterator<Item = u32>) -> Vec<u32> {
    items.collect::<BTreeSet<_>>().into_iter().collect()
}

/// Rows grouped by horizon, models in order of first appearance.
pub fn render_table_iii(averaged: &[MetricReport]) -> String {
    let width = averaged
        .iter()
        .map(|r| r.model_id.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8}  {:<width$}  {:>13}  {:>10}",
        "Horizon", "Model", "F1 (weighted)", "F1 (macro)"
    );
    for h in horizons(averaged.iter().map(|r| r.horizon_minutes)) {
        for (i, r) in averaged
            .iter()
            .filter(|r| r.horizon_minutes == h)
            .enumerate()
        {
            let label = if i == 0 { h.to_string() } else { String::new() };
            let _ = writeln!(
                out,
                "{label:<8}  {:<width$}  {:>13.2}  {:>10.2}",
                r.model_id, r.weighted_f1, r.macro_f1
            );
        }
    }
    out
}

pub fn render_table_iv(sweep: &[SweepPoint]) -> String {
    let counts: Vec<usize> = sweep
        .iter()
        .map(|p| p.num_examples)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let width = sweep
        .iter()
        .map(|p| p.model_id.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let mut out = String::new();
    let _ = write!(out, "{:<8}  {:<width$}", "Horizon", "Model");
    for c in &counts {
        let _ = write!(out, "  {:>12}", format!("{c} examples"));
    }
    out.push('\n');
    for h in horizons(sweep.iter().map(|p| p.horizon_minutes)) {
        let mut models: Vec<&str> = Vec::new();
        for p in sweep.iter().filter(|p| p.horizon_minutes == h) {
            if !models.contains(&p.model_id.as_str()) {
                models.push(&p.model_id);
            }
        }
        for (i, m) in models.into_iter().enumerate() {
            let label = if i == 0 { h.to_string() } else { String::new() };
            let _ = write!(out, "{label:<8}  {m:<width$}");
            for c in &counts {
                match sweep
                    .iter()
                    .find(|p| p.horizon_minutes == h && p.model_id == m && p.num_examples == *c)
                {
                    Some(p) => {
                        let _ = write!(out, "  {:>12.2}", p.macro_f1);
                    }
                    None => {
                        let _ = write!(out, "  {:>12}", "-");
                    }
                }
            }
            out.push('\n');
        }
    }
    out
}

pub fn render_comparison(points: &[ComparisonPoint]) -> String {
    let width = points
        .iter()
        .map(|p| p.model_id.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8}  {:<width$}  {:>8}  {:>8}  {:>6}",
        "Horizon", "Model", "Selected", "Random", "Diff"
    );
    for p in points {
        let _ = writeln!(
            out,
            "{:<8}  {:<width$}  {:>8.2}  {:>8.2}  {:>+6.2}",
            p.horizon_minutes,
            p.model_id,
            p.selected_macro_f1,
            p.random_macro_f1,
            p.selected_macro_f1 - p.random_macro_f1
        );
    }
    out
}

fn render_summary_csv(reports: &[MetricReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Format(e.to_string());
    w.write_record([
        "horizon_minutes",
        "model_id",
        "runs",
        "weighted_f1",
        "macro_f1",
        "f1_mild",
        "f1_moderate",
        "f1_severe",
        "abstain",
    ])
    .map_err(io)?;
    for r in reports {
        w.write_record([
            r.horizon_minutes.to_string(),
            r.model_id.clone(),
            r.runs.to_string(),
            format!("{:.2}", r.weighted_f1),
            format!("{:.2}", r.macro_f1),
            format!("{:.2}", r.per_class_f1.mild),
            format!("{:.2}", r.per_class_f1.moderate),
            format!("{:.2}", r.per_class_f1.severe),
            r.abstain.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `results.jsonl`, `metrics.json`, `summary.csv`, `table_iii.txt`
/// and, when present, `table_iv.txt` and `selection_vs_random.txt`.
pub fn emit_report(dir: &Path, bundle: &ReportBundle) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut lines = String::new();
    for r in &bundle.records {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    write(&dir.join("results.jsonl"), &lines)?;
    let metrics = serde_json::json!({
        "per_run": bundle.per_run,
        "averaged": bundle.averaged,
        "sweep": bundle.sweep,
        "comparison": bundle.comparison,
    });
    write(
        &dir.join("metrics.json"),
        &(serde_json::to_string_pretty(&metrics)? + "\n"),
    )?;
    write(
        &dir.join("summary.csv"),
        &render_summary_csv(&bundle.averaged)?,
    )?;
    if !bundle.averaged.is_empty() {
        write(
            &dir.join("table_iii.txt"),
            &render_table_iii(&bundle.averaged),
        )?;
    }
    if !bundle.sweep.is_empty() {
        write(&dir.join("table_iv.txt"), &render_table_iv(&bundle.sweep))?;
    }
    if !bundle.comparison.is_empty() {
        write(
            &dir.join("selection_vs_random.txt"),
            &render_comparison(&bundle.comparison),
        )?;
    }
    Ok(())
}

pub fn load_results(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, n + 1, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ImpactClass::*;

    const FIG4: [[u64; 3]; 3] = [[432, 73, 4], [8, 21, 7], [1, 2, 8]];

    #[test]
    fn figure_four_scores() {
        let f = f1_scores(&ConfusionMatrix::from_rows(FIG4));
        // hand computation: 2TP / (row + column)
        assert!((f.per_class.mild - 864.0 / 950.0).abs() < 1e-12);
        assert!((f.per_class.moderate - 42.0 / 132.0).abs() < 1e-12);
        assert!((f.per_class.severe - 16.0 / 30.0).abs() < 1e-12);
        assert!((f.macro_f1 - 0.59).abs() < 0.005);
        assert!((f.weighted_f1 - 0.86).abs() < 0.01);
        let w = (509.0 * 864.0 / 950.0 + 36.0 * 42.0 / 132.0 + 11.0 * 16.0 / 30.0) / 556.0;
        assert!((f.weighted_f1 - w).abs() < 1e-12);
    }

    #[test]
    fn replayed_pairs_rebuild_the_matrix() {
        let mut pairs = Vec::new();
        for (t, row) in FIG4.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    pairs.push((
                        ImpactClass::from_index(t).unwrap(),
                        ImpactClass::from_index(p),
                    ));
                }
            }
        }
        let m = confusion_matrix(pairs);
        assert_eq!(m.counts, FIG4);
        assert_eq!(m.total(), 556);
        assert_eq!(
            m.support(),
            PerClass {
                mild: 509,
                moderate: 36,
                severe: 11
            }
        );
        assert_eq!(confusion_matrix(Vec::new()), ConfusionMatrix::default());
    }

    #[test]
    fn abstentions_count_as_most_distant() {
        let m = confusion_matrix([
            (Mild, None),
            (Severe, None),
            (Moderate, None),
            (Moderate, Some(Moderate)),
        ]);
        assert_eq!(m.abstain, 3);
        assert_eq!(m.counts[0][2], 1);
        assert_eq!(m.counts[2][0], 1);
        assert_eq!(m.counts[1][0], 1);
    }

    #[test]
    fn edge_cases() {
        let perfect = f1_scores(&ConfusionMatrix::from_rows([
            [5, 0, 0],
            [0, 3, 0],
            [0, 0, 1],
        ]));
        assert_eq!(perfect.macro_f1, 1.0);
        assert_eq!(perfect.weighted_f1, 1.0);
        let empty_class = f1_scores(&ConfusionMatrix::from_rows([
            [5, 0, 0],
            [0, 5, 0],
            [0, 0, 0],
        ]));
        assert_eq!(empty_class.per_class.severe, 0.0);
        assert!((empty_class.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn macro_is_permutation_invariant() {
        let f = f1_scores(&ConfusionMatrix::from_rows(FIG4));
        let perm = [2, 0, 1];
        let mut permuted = [[0u64; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                permuted[perm[r]][perm[c]] = FIG4[r][c];
            }
        }
        let g = f1_scores(&ConfusionMatrix::from_rows(permuted));
        assert!((f.macro_f1 - g.macro_f1).abs() < 1e-12);
    }

    fn report(model: &str, horizon: u32, macro_f1: f64) -> MetricReport {
        let mut r = MetricReport::from_matrix(model, horizon, 0, ConfusionMatrix::from_rows(FIG4));
        r.macro_f1 = macro_f1;
        r
    }

    #[test]
    fn averaging() {
        let avg = average_runs(&[
            report("m", 15, 0.58),
            report("m", 15, 0.59),
            report("m", 15, 0.60),
        ])
        .unwrap();
        assert!((avg.macro_f1 - 0.59).abs() < 1e-12);
        assert_eq!(avg.runs, 3);
        assert_eq!(avg.support.mild, 3 * 509);
        let single = average_runs(&[report("m", 15, 0.5)]).unwrap();
        assert_eq!(single.macro_f1, 0.5);
        assert!(average_runs(&[report("m", 15, 0.5), report("m", 30, 0.5)]).is_err());
        assert!(average_runs(&[]).is_err());
    }

    #[test]
    fn table_layout() {
        let rows = vec![
            report("gpt", 15, 0.59),
            report("claude", 15, 0.53),
            report("gpt", 30, 0.45),
        ];
        let table = render_table_iii(&rows);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(
            lines[1].starts_with("15") && lines[1].contains("gpt") && lines[1].ends_with("0.59")
        );
        assert!(lines[2].starts_with(' ') && lines[2].contains("claude"));
        assert!(lines[3].starts_with("30"));
    }

    #[test]
    fn emitted_results_reproduce_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = Vec::new();
        for (i, (t, p)) in [
            (Mild, Some(Mild)),
            (Moderate, Some(Mild)),
            (Severe, None),
            (Moderate, Some(Moderate)),
        ]
        .into_iter()
        .enumerate()
        {
            records.push(PredictionRecord::new(
                "mock",
                15,
                0,
                &format!("i{i}"),
                t,
                p,
                t.word(),
            ));
        }
        let bundle = ReportBundle::from_records(records).unwrap();
        emit_report(dir.path(), &bundle).unwrap();
        let reloaded = load_results(&dir.path().join("results.jsonl")).unwrap();
        assert_eq!(reloaded, bundle.records);
        assert_eq!(reports_from_records(&reloaded), bundle.per_run);
        let first = std::fs::read(dir.path().join("metrics.json")).unwrap();
        emit_report(dir.path(), &bundle).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join("metrics.json")).unwrap(),
            first
        );
        assert!(dir.path().join("table_iii.txt").exists());
        assert!(!dir.path().join("table_iv.txt").exists());
    }
}
