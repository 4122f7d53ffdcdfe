//! Outlier scores and their evaluation.
//!
//! A sample's score is `‖f − f̂‖²`, where `f̂` is the soft memory read for the
//! sample's relevancy row; higher means more outlier-like. Outliers are the
//! positive class for AUROC.

use std::fmt;
use std::str::FromStr;

use crate::error::{ensure, Error, Result};
use crate::image::ImageSet;
use crate::memory::MemoryBank;
use crate::numeric::{self, Tensor};
use crate::trainer::TrainState;

/// Images encoded per forward pass when scoring.
const SCORE_CHUNK: usize = 256;

/// Added to the score range so equal scores do not divide by zero.
pub const HISTOGRAM_EPS: f64 = 1e-12;
pub const HISTOGRAM_BINS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Inlier,
    Outlier,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Inlier => "inlier",
            Label::Outlier => "outlier",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inlier" | "0" => Ok(Label::Inlier),
            "outlier" | "1" => Ok(Label::Outlier),
            other => Err(Error::Format(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreRecord {
    pub id: u64,
    pub score: f64,
    /// Ground truth, when known.
    pub label: Option<Label>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub inliers: usize,
    pub outliers: usize,
}

/// Scores for `features` / `relevancy` rows against `memory`.
pub fn score_features(memory: &MemoryBank, features: &Tensor, relevancy: &Tensor) -> Result<Vec<f64>> {
    if !memory.is_initialized() {
        return Err(Error::State("memory bank is uninitialized; nothing to score against".into()));
    }
    ensure!(
        features.rows() == relevancy.rows(),
        Contract,
        "{} feature rows but {} relevancy rows",
        features.rows(),
        relevancy.rows()
    );
    features
        .row_iter()
        .zip(relevancy.row_iter())
        .map(|(f, c)| {
            let read = memory.read_soft(c)?;
            Ok(numeric::squared_distance(f, &read))
        })
        .collect()
}

fn check_input_shape(state: &TrainState, images: &ImageSet) -> Result<()> {
    ensure!(
        images.shape() == state.config.encoder.input_shape,
        Contract,
        "images of shape {:?}, checkpoint expects {:?}",
        images.shape(),
        state.config.encoder.input_shape
    );
    Ok(())
}

/// Scores every image with the query tower and the trained memory. Ids are
/// positions in `images`; labels are left empty.
pub fn score(state: &TrainState, images: &ImageSet) -> Result<Vec<ScoreRecord>> {
    if !state.memory.is_initialized() {
        return Err(Error::State("checkpoint has no initialized memory bank".into()));
    }
    check_input_shape(state, images)?;
    let mut records = Vec::with_capacity(images.len());
    let ids: Vec<usize> = (0..images.len()).collect();
    for chunk in ids.chunks(SCORE_CHUNK) {
        let out = state.query.encode(&images.batch(chunk))?;
        let scores = score_features(&state.memory, &out.features, &out.relevancy)?;
        records.extend(chunk.iter().zip(scores).map(|(&id, score)| ScoreRecord {
            id: id as u64,
            score,
            label: None,
        }));
    }
    Ok(records)
}

/// Query-tower features `f` for every image, one row each.
pub fn features(state: &TrainState, images: &ImageSet) -> Result<Tensor> {
    check_input_shape(state, images)?;
    let ids: Vec<usize> = (0..images.len()).collect();
    let mut data = Vec::with_capacity(images.len() * state.config.encoder.feature_dim);
    for chunk in ids.chunks(SCORE_CHUNK) {
        data.extend(state.query.encode(&images.batch(chunk))?.features.into_data());
    }
    Tensor::matrix(images.len(), state.config.encoder.feature_dim, data)
}

fn labeled(records: &[ScoreRecord]) -> Result<Vec<(u64, f64, Label)>> {
    records
        .iter()
        .map(|r| match r.label {
            Some(l) if r.score.is_finite() => Ok((r.id, r.score, l)),
            Some(_) => Err(Error::InvalidValue(format!("score of record {} is {}", r.id, r.score))),
            None => Err(Error::Contract(format!("record {} has no ground-truth label", r.id))),
        })
        .collect()
}

/// Probability that a random outlier outscores a random inlier, ties
/// counting one half.
pub fn auroc(records: &[ScoreRecord]) -> Result<f64> {
    let mut rows = labeled(records)?;
    let pos = rows.iter().filter(|r| r.2 == Label::Outlier).count() as u128;
    let neg = rows.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes, got {pos} outliers and {neg} inliers"
        )));
    }
    rows.sort_by(|a, b| a.1.total_cmp(&b.1));
    // Twice the Mann-Whitney U, kept integral.
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < rows.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < rows.len() && rows[j].1 == rows[i].1 {
            match rows[j].2 {
                Label::Outlier => p += 1,
                Label::Inlier => n += 1,
            }
            j += 1;
        }
        twice_u += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

/// Average precision with `positive` as the relevant class. Outlier-positive
/// ranks by descending score, inlier-positive by ascending score; ties are
/// ordered by id.
pub fn aupr(records: &[ScoreRecord], positive: Label) -> Result<f64> {
    let mut rows = labeled(records)?;
    let positives = rows.iter().filter(|r| r.2 == positive).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric(format!("AUPR with no {positive} records")));
    }
    rows.sort_by(|a, b| {
        let by_score = match positive {
            Label::Outlier => b.1.total_cmp(&a.1),
            Label::Inlier => a.1.total_cmp(&b.1),
        };
        by_score.then(a.0.cmp(&b.0))
    });
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, r) in rows.iter().enumerate() {
        if r.2 == positive {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

pub fn evaluate(records: &[ScoreRecord]) -> Result<MetricsReport> {
    let rows = labeled(records)?;
    let outliers = rows.iter().filter(|r| r.2 == Label::Outlier).count();
    Ok(MetricsReport {
        auroc: auroc(records)?,
        aupr_in: aupr(records, Label::Inlier)?,
        aupr_out: aupr(records, Label::Outlier)?,
        inliers: rows.len() - outliers,
        outliers,
    })
}

/// Per-class counts of min-max normalized similarities in 100 equal bins.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimilarityHistogram {
    pub inliers: Vec<u64>,
    pub outliers: Vec<u64>,
}

impl SimilarityHistogram {
    /// `[lo, hi)` of bin `b`; the last bin also contains 1.
    pub fn bin_edges(b: usize) -> (f64, f64) {
        (b as f64 / HISTOGRAM_BINS as f64, (b + 1) as f64 / HISTOGRAM_BINS as f64)
    }
}

/// Bin holding similarity `s ∈ [0, 1]`, consistent with [`SimilarityHistogram::bin_edges`].
pub fn similarity_bin(s: f64) -> usize {
    let last = HISTOGRAM_BINS - 1;
    let mut b = ((s * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(last);
    while b < last && s >= SimilarityHistogram::bin_edges(b).1 {
        b += 1;
    }
    while b > 0 && s < SimilarityHistogram::bin_edges(b).0 {
        b -= 1;
    }
    b
}

/// `s = 1 − (score − min) / (max − min + ε)` for each record.
pub fn similarities(records: &[ScoreRecord]) -> Result<Vec<f64>> {
    ensure!(records.len() >= 2, Contract, "a histogram needs at least two records");
    ensure!(
        records.iter().all(|r| r.score.is_finite()),
        InvalidValue,
        "scores must be finite"
    );
    let min = records.iter().map(|r| r.score).fold(f64::INFINITY, f64::min);
    let max = records.iter().map(|r| r.score).fold(f64::NEG_INFINITY, f64::max);
    let range = max - min + HISTOGRAM_EPS;
    Ok(records
        .iter()
        .map(|r| (1.0 - (r.score - min) / range).clamp(0.0, 1.0))
        .collect())
}

pub fn similarity_histogram(records: &[ScoreRecord]) -> Result<SimilarityHistogram> {
    let rows = labeled(records)?;
    let sims = similarities(records)?;
    let mut hist = SimilarityHistogram {
        inliers: vec![0; HISTOGRAM_BINS],
        outliers: vec![0; HISTOGRAM_BINS],
    };
    for (s, r) in sims.iter().zip(&rows) {
        let counts = match r.2 {
            Label::Inlier => &mut hist.inliers,
            Label::Outlier => &mut hist.outliers,
        };
        counts[similarity_bin(*s)] += 1;
    }
    Ok(hist)
}

/// Orders records by id.
pub fn sort_by_id(records: &mut [ScoreRecord]) {
    records.sort_by_key(|r| r.id);
}
