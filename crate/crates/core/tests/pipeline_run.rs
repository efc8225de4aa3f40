use impact_core::config::{PathsConfig, RunConfig};
use impact_core::pipeline::{Partition, Pipeline};
use impact_core::synth::{load_truth, synth_dataset, write_dataset, SynthConfig, SynthPaths};

fn run_on_synthetic(dir: &std::path::Path) -> (Pipeline, impact_core::eval::ReportBundle) {
    let data = dir.join("data");
    write_dataset(&data, &synth_dataset(&SynthConfig::default()).unwrap()).unwrap();
    let mut config = RunConfig {
        paths: PathsConfig::for_dataset(&data, &dir.join("out")),
        runs: 2,
        k_sweep: vec![1, 2],
        ..RunConfig::default()
    };
    config.selection.validation_per_class = 2;
    let pipeline = Pipeline::new(config).unwrap();
    let bundle = pipeline.run().unwrap();
    (pipeline, bundle)
}

#[test]
fn selections_only_use_training_incidents() {
    let dir = tempfile::tempdir().unwrap();
    let (pipeline, bundle) = run_on_synthetic(dir.path());
    let labels = pipeline.load_labels().unwrap();
    let train: std::collections::BTreeSet<_> = labels
        .iter()
        .filter(|l| l.partition == Partition::Train)
        .map(|l| l.incident_id.clone())
        .collect();
    for h in [15, 30] {
        let outcome = pipeline.load_selection("mock-centroid", h).unwrap();
        for e in outcome.final_examples() {
            assert!(
                train.contains(&e.incident_id),
                "{} is not a training incident",
                e.incident_id
            );
        }
        assert!(outcome.validation_ids.iter().all(|id| train.contains(id)));
    }
    let tested: std::collections::BTreeSet<_> = bundle
        .records
        .iter()
        .map(|r| r.incident_id.clone())
        .collect();
    assert!(tested.is_disjoint(&train));
}

#[test]
fn labels_follow_the_designed_classes() {
    let dir = tempfile::tempdir().unwrap();
    let (pipeline, bundle) = run_on_synthetic(dir.path());
    let truth = load_truth(&SynthPaths::in_dir(&dir.path().join("data")).truth).unwrap();
    let designed: std::collections::HashMap<_, _> = truth
        .iter()
        .map(|t| (t.incident_id.clone(), t.designed_class))
        .collect();
    let labels = pipeline.load_labels().unwrap();
    let agree = labels
        .iter()
        .filter(|l| designed.get(&l.incident_id) == Some(&l.truth))
        .count();
    assert!(
        agree as f64 >= 0.95 * labels.len() as f64,
        "{agree} of {} labels agree",
        labels.len()
    );

    // two repetitions per (model, horizon), averaged into one row each
    assert!(bundle.averaged.iter().all(|r| r.runs == 2));
    assert_eq!(bundle.sweep.iter().map(|p| p.num_examples).max(), Some(24));
}
