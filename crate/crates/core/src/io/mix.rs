//! One-class mixtures: all (or a capped sample) of one class as inliers plus
//! a seeded sample of the remaining classes as outliers.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::idx::LabeledImageSet;
use crate::error::{ensure, Error, Result};
use crate::image::ImageSet;
use crate::metrics::Label;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixSpec {
    pub inlier_class: u32,
    /// Fraction of the final mixture that is outliers, in `[0, 0.5]`.
    pub p: f64,
    pub seed: u64,
    pub max_inliers: Option<usize>,
}

impl Default for MixSpec {
    fn default() -> Self {
        Self {
            inlier_class: 0,
            p: 0.1,
            seed: 0,
            max_inliers: None,
        }
    }
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!((0.0..=0.5).contains(&self.p), Config, "outlier proportion p = {} outside [0, 0.5]", self.p);
        ensure!(self.seed <= i64::MAX as u64, Config, "mix seed {} exceeds {}", self.seed, i64::MAX);
        ensure!(self.max_inliers != Some(0), Config, "max_inliers must be positive");
        Ok(())
    }

    /// `round(n_in · p / (1 − p))`.
    pub fn outlier_count(&self, inliers: usize) -> usize {
        (inliers as f64 * self.p / (1.0 - self.p)).round() as usize
    }
}

/// Evaluation-only labels for a mixture, aligned with its images.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub labels: Vec<Label>,
    /// Index of each mixture sample in the source set.
    pub source_index: Vec<usize>,
}

impl GroundTruth {
    pub fn outliers(&self) -> usize {
        self.labels.iter().filter(|&&l| l == Label::Outlier).count()
    }
}

/// Training images and their ground truth, kept apart so the trainer only
/// ever sees [`ImageSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct MixedDataset {
    pub images: ImageSet,
    pub truth: GroundTruth,
}

impl MixedDataset {
    pub fn len(&self) -> usize {
        self.truth.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.labels.is_empty()
    }
}

pub fn mix_dataset(full: &LabeledImageSet, spec: &MixSpec) -> Result<MixedDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (class, pool): (Vec<usize>, Vec<usize>) = (0..full.len()).partition(|&i| full.labels[i] == spec.inlier_class);
    if class.is_empty() {
        return Err(Error::Config(format!(
            "class {} does not occur in {}",
            spec.inlier_class, full.provenance
        )));
    }
    let inliers: Vec<usize> = match spec.max_inliers {
        Some(cap) if cap < class.len() => {
            let mut picked: Vec<usize> = index::sample(&mut rng, class.len(), cap).into_iter().map(|i| class[i]).collect();
            picked.sort_unstable();
            picked
        }
        _ => class,
    };
    let n_out = spec.outlier_count(inliers.len());
    if n_out > pool.len() {
        return Err(Error::Config(format!(
            "{n_out} outliers needed but only {} samples outside class {}",
            pool.len(),
            spec.inlier_class
        )));
    }
    let outliers = index::sample(&mut rng, pool.len(), n_out).into_iter().map(|i| pool[i]);

    let mut order: Vec<(usize, Label)> = inliers
        .iter()
        .map(|&i| (i, Label::Inlier))
        .chain(outliers.map(|i| (i, Label::Outlier)))
        .collect();
    order.shuffle(&mut rng);

    let source_index: Vec<usize> = order.iter().map(|o| o.0).collect();
    Ok(MixedDataset {
        images: full.images.select(&source_index),
        truth: GroundTruth {
            labels: order.iter().map(|o| o.1).collect(),
            source_index,
        },
    })
}
