//! Seeded two-pattern toy data: Gaussian blobs (class 0) and oriented
//! stripe textures (class 1).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::idx::LabeledImageSet;
use crate::error::Result;
use crate::image::ImageSet;

pub const SIDE: usize = 16;
pub const BLOB_CLASS: u32 = 0;
pub const STRIPE_CLASS: u32 = 1;

/// Peak pixel noise added to every image.
const NOISE: f64 = 0.05;

fn finish(rng: &mut ChaCha8Rng, mut px: Vec<f64>) -> Vec<f64> {
    for p in &mut px {
        *p = (*p + rng.random_range(-NOISE..=NOISE)).clamp(0.0, 1.0);
    }
    px
}

/// A Gaussian bump with random centre, width and brightness.
pub fn blob(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let lo = SIDE as f64 * 0.3;
    let hi = SIDE as f64 * 0.7;
    let (cy, cx) = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
    let sigma = rng.random_range(1.5..=2.5);
    let amp = rng.random_range(0.7..=1.0);
    let px = (0..SIDE * SIDE)
        .map(|i| {
            let (y, x) = ((i / SIDE) as f64, (i % SIDE) as f64);
            let d2 = (y - cy).powi(2) + (x - cx).powi(2);
            amp * (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    finish(rng, px)
}

/// A sinusoidal grating with random orientation, period and phase.
pub fn stripes(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let theta = rng.random_range(0.0..PI);
    let period = rng.random_range(3.0..=6.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let amp = rng.random_range(0.7..=1.0);
    let (s, c) = theta.sin_cos();
    let px = (0..SIDE * SIDE)
        .map(|i| {
            let (y, x) = ((i / SIDE) as f64, (i % SIDE) as f64);
            let t = 2.0 * PI * (x * c + y * s) / period + phase;
            amp * 0.5 * (1.0 + t.sin())
        })
        .collect();
    finish(rng, px)
}

/// `blobs` blob images followed by `stripe_count` stripe images.
pub fn two_pattern(blobs: usize, stripe_count: usize, seed: u64) -> Result<LabeledImageSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity((blobs + stripe_count) * SIDE * SIDE);
    let mut labels = Vec::with_capacity(blobs + stripe_count);
    for _ in 0..blobs {
        pixels.extend(blob(&mut rng));
    }
    for _ in 0..stripe_count {
        pixels.extend(stripes(&mut rng));
    }
    labels.resize(blobs, BLOB_CLASS);
    labels.resize(blobs + stripe_count, STRIPE_CLASS);
    let images = ImageSet::new([SIDE, SIDE, 1], pixels)?;
    LabeledImageSet::new(images, labels, format!("synthetic two-pattern (seed {seed})"))
}
