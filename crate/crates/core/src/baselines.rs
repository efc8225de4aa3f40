//! Trained reference classifiers and class-imbalance resampling.

use chrono::NaiveTime;
use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureVector, ImpactClass, LabeledExample, PerClass};
use crate::normalize::{euclidean, Normalizer};
use crate::rng::{self, Rng};

/// Interpolation space for SMOTE: minute of day, vehicles, lanes, rho, delta.
const INTERP_DIMS: usize = 5;
const INTEGER_DIMS: [usize; 3] = [0, 1, 2];

fn interp_row(f: &FeatureVector) -> [f64; INTERP_DIMS] {
    [
        f.minute_of_day() as f64,
        f.num_vehicles as f64,
        f.num_lanes_blocked as f64,
        f.pre_incident_relative_speed,
        f.initial_decrease_ratio,
    ]
}

fn from_interp_row(row: &[f64]) -> FeatureVector {
    let minute = (row[0].round() as i64).clamp(0, 1439) as u32;
    FeatureVector {
        incident_time: NaiveTime::from_hms_opt(minute / 60, minute % 60, 0)
            .expect("minute within a day"),
        num_vehicles: row[1].round().max(0.0) as u32,
        num_lanes_blocked: row[2].round().max(0.0) as u32,
        pre_incident_relative_speed: row[3],
        initial_decrease_ratio: row[4],
    }
}

/// Indices of the `k` nearest other members of `i` (ties by position).
fn nearest_neighbors(space: &[Vec<f64>], i: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = (0..space.len())
        .filter(|&j| j != i)
        .map(|j| (euclidean(&space[i], &space[j]), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Neighbour search space: z-scored coordinates, or raw ones when every
/// member is identical.
fn search_space(minority: &[FeatureVector]) -> Vec<Vec<f64>> {
    match Normalizer::fit_vectors(minority) {
        Ok(n) => minority.iter().map(|f| n.transform(f)).collect(),
        Err(_) => minority.iter().map(|f| f.coordinates().to_vec()).collect(),
    }
}

/// SMOTE over feature vectors. Each new point lies on the segment from a
/// random member to one of its `k_neighbors` nearest same-class neighbours,
/// with count features rounded after interpolation.
pub fn smote_synthesize(
    minority: &[FeatureVector],
    k_neighbors: usize,
    n_new: usize,
    rng: &mut Rng,
) -> Result<Vec<FeatureVector>> {
    if minority.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "SMOTE needs at least 2 members, got {}",
            minority.len()
        )));
    }
    if k_neighbors == 0 || k_neighbors > minority.len() - 1 {
        return Err(Error::InvalidInput(format!(
            "k_neighbors must be in 1..={}, got {k_neighbors}",
            minority.len() - 1
        )));
    }
    let space = search_space(minority);
    let neighbors: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| nearest_neighbors(&space, i, k_neighbors))
        .collect();
    let rows: Vec<[f64; INTERP_DIMS]> = minority.iter().map(interp_row).collect();
    Ok((0..n_new)
        .map(|_| {
            let i = rng.random_range(0..minority.len());
            let j = neighbors[i][rng.random_range(0..k_neighbors)];
            let lambda: f64 = rng.random_range(0.0..=1.0);
            let mut row: Vec<f64> = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| a + lambda * (b - a))
                .collect();
            for d in INTEGER_DIMS {
                row[d] = row[d].round();
            }
            from_interp_row(&row)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleConfig {
    /// Fraction of the majority class kept. `None` keeps twice the largest
    /// minority class (capped at the whole class).
    pub undersample_ratio: Option<f64>,
    pub smote_neighbors: usize,
    /// Final size of every class. `None` matches the majority after undersampling.
    pub target_per_class: Option<usize>,
    pub rng_seed: u64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        ResampleConfig {
            undersample_ratio: None,
            smote_neighbors: 5,
            target_per_class: None,
            rng_seed: 0,
        }
    }
}

impl ResampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smote_neighbors == 0 {
            return Err(Error::Config("smote_neighbors must be at least 1".into()));
        }
        if let Some(r) = self.undersample_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!(
                    "undersample_ratio must be in (0, 1], got {r}"
                )));
            }
        }
        if self.target_per_class == Some(0) {
            return Err(Error::Config("target_per_class must be positive".into()));
        }
        Ok(())
    }
}

/// Undersamples the majority class, then brings every class to the same size:
/// smaller classes are filled with SMOTE points, larger ones are subsampled.
/// Retained originals are returned unchanged; output is grouped by class.
pub fn combined_resample(
    train: &[LabeledExample],
    config: &ResampleConfig,
) -> Result<Vec<LabeledExample>> {
    config.validate()?;
    let by_class: PerClass<Vec<&LabeledExample>> =
        PerClass::from_fn(|c| train.iter().filter(|e| e.truth == c).collect());
    for (class, members) in by_class.iter() {
        if members.len() < 2 {
            return Err(Error::InsufficientClass {
                class,
                needed: 2,
                available: members.len(),
            });
        }
    }
    let majority = ImpactClass::ALL
        .into_iter()
        .rev()
        .max_by_key(|&c| by_class[c].len())
        .expect("three classes");
    let largest_minority = ImpactClass::ALL
        .into_iter()
        .filter(|&c| c != majority)
        .map(|c| by_class[c].len())
        .max()
        .unwrap_or(0);
    let majority_len = by_class[majority].len();
    let ratio = config
        .undersample_ratio
        .unwrap_or_else(|| (2.0 * largest_minority as f64 / majority_len as f64).min(1.0));
    let kept_majority = ((ratio * majority_len as f64).round() as usize).clamp(1, majority_len);
    let target = config.target_per_class.unwrap_or(kept_majority);

    let mut out = Vec::with_capacity(3 * target);
    for class in ImpactClass::ALL {
        let mut rng = rng::stream(config.rng_seed, class.index() as u64);
        let members = &by_class[class];
        if members.len() >= target {
            let mut picks = index::sample(&mut rng, members.len(), target).into_vec();
            picks.sort_unstable();
            out.extend(picks.into_iter().map(|i| members[i].clone()));
            continue;
        }
        out.extend(members.iter().map(|e| (*e).clone()));
        let features: Vec<FeatureVector> = members.iter().map(|e| e.features).collect();
        let k = config.smote_neighbors.min(members.len() - 1);
        let synthetic = smote_synthesize(&features, k, target - members.len(), &mut rng)?;
        let horizon = members[0].horizon_minutes;
        out.extend(
            synthetic
                .into_iter()
                .enumerate()
                .map(|(n, features)| LabeledExample {
                    incident_id: format!("smote-{}-{n}", class.word()),
                    features,
                    horizon_minutes: horizon,
                    truth: class,
                }),
        );
    }
    Ok(out)
}

/// Shuffled copy, for callers that need mixed class order.
pub fn shuffled(mut examples: Vec<LabeledExample>, seed: u64) -> Vec<LabeledExample> {
    examples.shuffle(&mut rng::seeded(seed));
    examples
}

fn milder_first_argmin(scores: impl Iterator<Item = (ImpactClass, f64)>) -> ImpactClass {
    let mut best: Option<(ImpactClass, f64)> = None;
    for (class, d) in scores {
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((class, d));
        }
    }
    best.map_or(ImpactClass::Mild, |(c, _)| c)
}

/// Class of the nearest z-scored class centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestCentroid {
    pub normalizer: Normalizer,
    pub centroids: PerClass<Vec<f64>>,
}

impl NearestCentroid {
    pub fn fit(train: &[LabeledExample]) -> Result<Self> {
        let normalizer = Normalizer::fit_vectors(train.iter().map(|e| &e.features))?;
        let mut sums = PerClass::from_fn(|_| vec![0.0; normalizer.dims()]);
        let mut counts = PerClass::<usize>::default();
        for e in train {
            counts[e.truth] += 1;
            for (s, v) in sums[e.truth]
                .iter_mut()
                .zip(normalizer.transform(&e.features))
            {
                *s += v;
            }
        }
        if let Some(missing) = ImpactClass::ALL.into_iter().find(|&c| counts[c] == 0) {
            return Err(Error::MissingClass(missing));
        }
        let centroids = sums.map(|c, s| s.iter().map(|v| v / counts[c] as f64).collect());
        Ok(NearestCentroid {
            normalizer,
            centroids,
        })
    }

    /// Ties go to the milder class.
    pub fn predict(&self, features: &FeatureVector) -> ImpactClass {
        let q = self.normalizer.transform(features);
        milder_first_argmin(
            ImpactClass::ALL
                .into_iter()
                .map(|c| (c, euclidean(&q, &self.centroids[c]))),
        )
    }
}

pub fn nearest_centroid_fit(train: &[LabeledExample]) -> Result<NearestCentroid> {
    NearestCentroid::fit(train)
}

pub fn nearest_centroid_predict(model: &NearestCentroid, features: &FeatureVector) -> ImpactClass {
    model.predict(features)
}

/// Majority vote of the `k` nearest z-scored training points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub normalizer: Normalizer,
    coords: Vec<Vec<f64>>,
    classes: Vec<ImpactClass>,
}

impl Knn {
    pub fn fit(train: &[LabeledExample], k: usize) -> Result<Self> {
        if k == 0 || train.len() < k {
            return Err(Error::InvalidInput(format!(
                "k_nn = {k} needs at least {k} training examples, got {}",
                train.len()
            )));
        }
        let normalizer = Normalizer::fit_vectors(train.iter().map(|e| &e.features))?;
        Ok(Knn {
            k,
            coords: train
                .iter()
                .map(|e| normalizer.transform(&e.features))
                .collect(),
            classes: train.iter().map(|e| e.truth).collect(),
            normalizer,
        })
    }

    /// Distance ties among neighbours go to the earlier training example;
    /// vote ties go to the milder class.
    pub fn predict(&self, features: &FeatureVector) -> ImpactClass {
        let q = self.normalizer.transform(features);
        let mut order: Vec<(f64, usize)> = self
            .coords
            .iter()
            .enumerate()
            .map(|(i, c)| (euclidean(&q, c), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = PerClass::<usize>::default();
        for &(_, i) in order.iter().take(self.k) {
            votes[self.classes[i]] += 1;
        }
        milder_first_argmin(
            ImpactClass::ALL
                .into_iter()
                .map(|c| (c, -(votes[c] as f64))),
        )
    }
}

pub fn knn_predict(
    train: &[LabeledExample],
    features: &FeatureVector,
    k_nn: usize,
) -> Result<ImpactClass> {
    Ok(Knn::fit(train, k_nn)?.predict(features))
}
