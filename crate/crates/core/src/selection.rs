//! In-context example selection.
//!
//! The labelled pool is z-scored, class centroids are computed, examples that
//! sit closer to a foreign centroid than to their own are dropped as outliers,
//! and each class keeps the fraction of its remaining members closest to its
//! neighbouring class(es). Candidate prompts draw `m / 3` of these
//! near-boundary examples per class, are scored on a class-balanced validation
//! set, and the `k_top` best candidates are concatenated into the final prompt.

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{ImpactPredictor, Query};
use crate::model::{ImpactClass, LabeledExample, PerClass};
use crate::normalize::{euclidean, fit_normalizer, Normalizer};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Examples per candidate prompt; a multiple of 3.
    pub m: usize,
    pub n_candidates: usize,
    pub k_top: usize,
    pub near_boundary_fraction: f64,
    /// Validation incidents drawn per class from the training set.
    pub validation_per_class: usize,
    pub rng_seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            m: 12,
            n_candidates: 30,
            k_top: 2,
            near_boundary_fraction: 0.5,
            validation_per_class: 20,
            rng_seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m % 3 != 0 {
            return Err(Error::Config(format!(
                "m must be a positive multiple of 3, got {}",
                self.m
            )));
        }
        if self.n_candidates == 0 || self.k_top > self.n_candidates {
            return Err(Error::Config(format!(
                "need 0 < n_candidates and k_top <= n_candidates, got {} / {}",
                self.n_candidates, self.k_top
            )));
        }
        if !(self.near_boundary_fraction > 0.0 && self.near_boundary_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "near_boundary_fraction must be in (0, 1], got {}",
                self.near_boundary_fraction
            )));
        }
        if self.validation_per_class == 0 {
            return Err(Error::Config(
                "validation_per_class must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A labelled pool together with its normalized coordinates.
#[derive(Debug, Clone)]
pub struct EmbeddedPool {
    pub examples: Vec<LabeledExample>,
    pub coords: Vec<Vec<f64>>,
    pub normalizer: Normalizer,
}

impl EmbeddedPool {
    pub fn new(examples: Vec<LabeledExample>) -> Result<Self> {
        let normalizer = fit_normalizer(&examples)?;
        Ok(Self::with_normalizer(examples, normalizer))
    }

    pub fn with_normalizer(examples: Vec<LabeledExample>, normalizer: Normalizer) -> Self {
        let coords = examples
            .iter()
            .map(|e| normalizer.transform(&e.features))
            .collect();
        EmbeddedPool {
            examples,
            coords,
            normalizer,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_of(&self, i: usize) -> ImpactClass {
        self.examples[i].truth
    }
}

/// Per-class arithmetic mean in normalized space.
pub fn class_centroids(pool: &EmbeddedPool) -> Result<PerClass<Vec<f64>>> {
    let dims = pool.normalizer.dims();
    let mut sums = PerClass::from_fn(|_| vec![0.0; dims]);
    let mut counts = PerClass::<usize>::default();
    for (i, coords) in pool.coords.iter().enumerate() {
        let class = pool.class_of(i);
        counts[class] += 1;
        for (s, v) in sums[class].iter_mut().zip(coords) {
            *s += v;
        }
    }
    if let Some(missing) = ImpactClass::ALL.into_iter().find(|&c| counts[c] == 0) {
        return Err(Error::MissingClass(missing));
    }
    Ok(sums.map(|c, s| s.iter().map(|v| v / counts[c] as f64).collect()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlierSplit {
    pub non_outliers: Vec<usize>,
    pub outliers: Vec<usize>,
}

/// An example is an outlier when some other class's centroid is strictly
/// closer than its own. Ties keep the example.
pub fn filter_outliers(pool: &EmbeddedPool, centroids: &PerClass<Vec<f64>>) -> OutlierSplit {
    let mut split = OutlierSplit::default();
    for (i, coords) in pool.coords.iter().enumerate() {
        let own_class = pool.class_of(i);
        let own = euclidean(coords, &centroids[own_class]);
        let nearest_other = ImpactClass::ALL
            .into_iter()
            .filter(|&c| c != own_class)
            .map(|c| euclidean(coords, &centroids[c]))
            .fold(f64::INFINITY, f64::min);
        if nearest_other < own {
            split.outliers.push(i);
        } else {
            split.non_outliers.push(i);
        }
    }
    split
}

/// Distance from a point to the nearest centroid of a neighbouring class.
pub fn boundary_distance(
    class: ImpactClass,
    coords: &[f64],
    centroids: &PerClass<Vec<f64>>,
) -> f64 {
    class
        .neighbors()
        .iter()
        .map(|&n| euclidean(coords, &centroids[n]))
        .fold(f64::INFINITY, f64::min)
}

/// For each class, the `ceil(fraction * size)` non-outliers closest to the
/// neighbouring class, nearest first (ties by pool position).
pub fn near_boundary_subset(
    pool: &EmbeddedPool,
    non_outliers: &[usize],
    centroids: &PerClass<Vec<f64>>,
    fraction: f64,
) -> PerClass<Vec<usize>> {
    let ranked = rank_by_boundary(pool, non_outliers, centroids);
    ranked.map(|_, members| {
        let keep = (fraction * members.len() as f64).ceil() as usize;
        members[..keep.min(members.len())].to_vec()
    })
}

fn rank_by_boundary(
    pool: &EmbeddedPool,
    members: &[usize],
    centroids: &PerClass<Vec<f64>>,
) -> PerClass<Vec<usize>> {
    PerClass::from_fn(|class| {
        let mut scored: Vec<(f64, usize)> = members
            .iter()
            .copied()
            .filter(|&i| pool.class_of(i) == class)
            .map(|i| (boundary_distance(class, &pool.coords[i], centroids), i))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.into_iter().map(|(_, i)| i).collect()
    })
}

/// Where candidate examples come from: the near-boundary members of each
/// class, topped up from the class's other non-outliers when short.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingFrame {
    pub near_boundary: PerClass<Vec<usize>>,
    pub reserve: PerClass<Vec<usize>>,
    pub outliers: Vec<usize>,
}

impl SamplingFrame {
    pub fn build(pool: &EmbeddedPool, fraction: f64) -> Result<Self> {
        let centroids = class_centroids(pool)?;
        let split = filter_outliers(pool, &centroids);
        let ranked = rank_by_boundary(pool, &split.non_outliers, &centroids);
        let near_boundary = near_boundary_subset(pool, &split.non_outliers, &centroids, fraction);
        let reserve = ranked.map(|c, members| members[near_boundary[c].len()..].to_vec());
        Ok(SamplingFrame {
            near_boundary,
            reserve,
            outliers: split.outliers,
        })
    }
}

/// Draws `m / 3` examples per class without replacement and shuffles them.
pub fn sample_example_set(frame: &SamplingFrame, m: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if m % 3 != 0 {
        return Err(Error::InvalidInput(format!(
            "m must be a multiple of 3, got {m}"
        )));
    }
    let per_class = m / 3;
    let mut chosen = Vec::with_capacity(m);
    for class in ImpactClass::ALL {
        let near = &frame.near_boundary[class];
        let reserve = &frame.reserve[class];
        if near.len() >= per_class {
            chosen.extend(
                index::sample(rng, near.len(), per_class)
                    .into_iter()
                    .map(|i| near[i]),
            );
        } else {
            let short = per_class - near.len();
            if reserve.len() < short {
                return Err(Error::InsufficientClass {
                    class,
                    needed: per_class,
                    available: near.len() + reserve.len(),
                });
            }
            chosen.extend(near.iter().copied());
            chosen.extend(
                index::sample(rng, reserve.len(), short)
                    .into_iter()
                    .map(|i| reserve[i]),
            );
        }
    }
    chosen.shuffle(rng);
    Ok(chosen)
}

/// The generator used for candidate `candidate_index`.
pub fn candidate_rng(seed: u64, candidate_index: usize) -> Rng {
    rng::stream(seed, candidate_index as u64)
}

pub fn generate_candidates(
    frame: &SamplingFrame,
    config: &SelectionConfig,
) -> Result<Vec<Vec<usize>>> {
    (0..config.n_candidates)
        .map(|i| sample_example_set(frame, config.m, &mut candidate_rng(config.rng_seed, i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub candidate_index: usize,
    pub examples: Vec<LabeledExample>,
    pub validation_score: f64,
    /// Validation predictions that failed to parse (scored as incorrect).
    pub failures: usize,
}

/// Accuracy of `predictor` on `validation` with `candidate` as the prompt
/// examples, plus the number of unparseable answers. Unparseable answers count
/// as wrong; transport and configuration failures abort.
pub fn evaluate_candidate(
    candidate: &[LabeledExample],
    validation: &[LabeledExample],
    predictor: &dyn ImpactPredictor,
) -> Result<(f64, usize)> {
    if validation.is_empty() {
        return Err(Error::InvalidInput("empty validation set".into()));
    }
    let outcomes: Vec<Result<Option<bool>>> = validation
        .par_iter()
        .map(|v| {
            let query = Query {
                incident_id: &v.incident_id,
                features: &v.features,
                horizon_minutes: v.horizon_minutes,
            };
            match predictor.predict(candidate, &query) {
                Ok(p) => Ok(Some(p.class == v.truth)),
                Err(Error::UnparseableResponse { raw }) => {
                    log::warn!(
                        "validation prediction for {} unparseable: {raw:?}",
                        v.incident_id
                    );
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut correct = 0usize;
    let mut failures = 0usize;
    for outcome in outcomes {
        match outcome? {
            Some(true) => correct += 1,
            Some(false) => {}
            None => failures += 1,
        }
    }
    Ok((correct as f64 / validation.len() as f64, failures))
}

/// Orders by score descending (ties: lower candidate index first) and
/// concatenates the first `k_top` example lists.
pub fn select_top_k(results: &[CandidateResult], k_top: usize) -> Vec<LabeledExample> {
    rank_candidates(results)
        .into_iter()
        .take(k_top)
        .flat_map(|i| results[i].examples.iter().cloned())
        .collect()
}

/// Positions into `results`, best first.
pub fn rank_candidates(results: &[CandidateResult]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| {
        results[b]
            .validation_score
            .total_cmp(&results[a].validation_score)
            .then(results[a].candidate_index.cmp(&results[b].candidate_index))
    });
    order
}

/// Stratified validation draw of `per_class` examples per class; the rest of
/// the training set (original order) becomes the example pool.
pub fn split_validation(
    training: &[LabeledExample],
    per_class: usize,
    rng: &mut Rng,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    let mut in_validation = vec![false; training.len()];
    let mut validation = Vec::with_capacity(3 * per_class);
    for class in ImpactClass::ALL {
        let members: Vec<usize> = (0..training.len())
            .filter(|&i| training[i].truth == class)
            .collect();
        if members.len() < per_class {
            return Err(Error::InsufficientClass {
                class,
                needed: per_class,
                available: members.len(),
            });
        }
        for pick in index::sample(rng, members.len(), per_class) {
            in_validation[members[pick]] = true;
            validation.push(training[members[pick]].clone());
        }
    }
    let pool = training
        .iter()
        .zip(&in_validation)
        .filter(|(_, &v)| !v)
        .map(|(e, _)| e.clone())
        .collect();
    Ok((validation, pool))
}

/// `count` examples drawn uniformly without replacement.
pub fn random_examples(
    training: &[LabeledExample],
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<LabeledExample>> {
    if training.len() < count {
        return Err(Error::InvalidInput(format!(
            "cannot draw {count} examples from {}",
            training.len()
        )));
    }
    Ok(index::sample(rng, training.len(), count)
        .into_iter()
        .map(|i| training[i].clone())
        .collect())
}

/// Everything the selection procedure produced, kept for the run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub config: SelectionConfig,
    pub validation_ids: Vec<String>,
    pub outlier_ids: Vec<String>,
    pub near_boundary_ids: PerClass<Vec<String>>,
    pub normalizer: Normalizer,
    pub candidates: Vec<CandidateResult>,
    /// Positions into `candidates`, best first.
    pub ranking: Vec<usize>,
}

impl SelectionOutcome {
    /// The combined prompt examples of the `k` best candidates.
    pub fn top_k(&self, k: usize) -> Vec<LabeledExample> {
        self.ranking
            .iter()
            .take(k)
            .flat_map(|&i| self.candidates[i].examples.iter().cloned())
            .collect()
    }

    pub fn final_examples(&self) -> Vec<LabeledExample> {
        self.top_k(self.config.k_top)
    }
}

/// Runs the whole selection procedure on a training set.
pub fn select_examples(
    training: &[LabeledExample],
    config: &SelectionConfig,
    predictor: &dyn ImpactPredictor,
) -> Result<SelectionOutcome> {
    config.validate()?;
    let mut split_rng = rng::stream(config.rng_seed, u64::MAX);
    let (validation, pool) =
        split_validation(training, config.validation_per_class, &mut split_rng)?;
    let pool = EmbeddedPool::new(pool)?;
    let frame = SamplingFrame::build(&pool, config.near_boundary_fraction)?;
    let draws = generate_candidates(&frame, config)?;
    let candidates = draws
        .par_iter()
        .enumerate()
        .map(|(candidate_index, draw)| {
            let examples: Vec<LabeledExample> =
                draw.iter().map(|&i| pool.examples[i].clone()).collect();
            let (validation_score, failures) =
                evaluate_candidate(&examples, &validation, predictor)?;
            Ok(CandidateResult {
                candidate_index,
                examples,
                validation_score,
                failures,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ranking = rank_candidates(&candidates);
    let ids = |idx: &[usize]| {
        idx.iter()
            .map(|&i| pool.examples[i].incident_id.clone())
            .collect::<Vec<_>>()
    };
    Ok(SelectionOutcome {
        config: config.clone(),
        validation_ids: validation.iter().map(|e| e.incident_id.clone()).collect(),
        outlier_ids: ids(&frame.outliers),
        near_boundary_ids: frame.near_boundary.map(|_, v| ids(v)),
        normalizer: pool.normalizer.clone(),
        candidates,
        ranking,
    })
}
