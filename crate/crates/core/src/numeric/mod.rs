//! Dense `f64` tensors, a reverse-mode gradient tape and the Adam optimizer.
//!
//! Everything is double precision. A [`Tape`] is built for one forward pass,
//! differentiated once with [`Tape::backward`] and then dropped.

mod adam;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Norms at or below this are rejected by [`l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Contract("softmax of an empty vector".into()));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidValue(format!("softmax input contains {bad}")));
    }
    let mut out = vec![0.0; v.len()];
    softmax_into(v, &mut out);
    Ok(out)
}

/// Softmax without validation. Input must be non-empty and finite.
pub(crate) fn softmax_into(v: &[f64], out: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if !(norm > NORM_EPS) {
        return Err(Error::DegenerateVector {
            norm,
            eps: NORM_EPS,
        });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
