//! Stochastic image transformations for building `(x_q, x_k)` pairs.
//!
//! Transforms run in a fixed order: flip, rotate, crop-and-resize, contrast,
//! blur. Every random draw comes from a ChaCha stream keyed by
//! `(seed, epoch, sample index)`; the two views of a pair use streams 0 and 1
//! of that key.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub rotate_prob: f64,
    /// Degrees, `[lo, hi]`.
    pub rotate_degrees: [f64; 2],
    pub crop_prob: f64,
    /// Side length of the crop as a fraction of the image side.
    pub crop_scale: [f64; 2],
    pub contrast_prob: f64,
    pub contrast_factor: [f64; 2],
    pub blur_prob: f64,
    /// Odd kernel width.
    pub blur_kernel: usize,
    pub blur_sigma: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            rotate_prob: 1.0,
            rotate_degrees: [-15.0, 15.0],
            crop_prob: 1.0,
            crop_scale: [0.8, 1.0],
            contrast_prob: 1.0,
            contrast_factor: [0.6, 1.4],
            blur_prob: 0.5,
            blur_kernel: 3,
            blur_sigma: [0.1, 1.0],
        }
    }
}

impl AugmentConfig {
    /// A configuration under which `augment` returns its input unchanged.
    pub fn identity() -> Self {
        Self {
            flip_prob: 0.0,
            rotate_prob: 0.0,
            rotate_degrees: [0.0, 0.0],
            crop_prob: 0.0,
            crop_scale: [1.0, 1.0],
            contrast_prob: 0.0,
            contrast_factor: [1.0, 1.0],
            blur_prob: 0.0,
            blur_kernel: 1,
            blur_sigma: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("flip_prob", self.flip_prob),
            ("rotate_prob", self.rotate_prob),
            ("crop_prob", self.crop_prob),
            ("contrast_prob", self.contrast_prob),
            ("blur_prob", self.blur_prob),
        ] {
            ensure!((0.0..=1.0).contains(&p), Config, "augment.{name} = {p} is not a probability");
        }
        for (name, [lo, hi]) in [
            ("rotate_degrees", self.rotate_degrees),
            ("crop_scale", self.crop_scale),
            ("contrast_factor", self.contrast_factor),
            ("blur_sigma", self.blur_sigma),
        ] {
            ensure!(
                lo.is_finite() && hi.is_finite() && lo <= hi,
                Config,
                "augment.{name} = [{lo}, {hi}] is not an ordered range"
            );
        }
        let [lo, hi] = self.crop_scale;
        ensure!(lo > 0.0 && hi <= 1.0, Config, "augment.crop_scale must lie in (0, 1]");
        ensure!(self.contrast_factor[0] >= 0.0, Config, "augment.contrast_factor must be non-negative");
        ensure!(self.blur_sigma[0] > 0.0, Config, "augment.blur_sigma must be positive");
        ensure!(
            self.blur_kernel % 2 == 1,
            Config,
            "augment.blur_kernel = {} must be odd",
            self.blur_kernel
        );
        Ok(())
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key for one sample's random streams.
pub fn sample_key(seed: u64, epoch: u64, index: u64) -> [u8; 32] {
    let mut state = seed;
    for word in [epoch, index] {
        state = splitmix64(&mut state) ^ word;
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// Stream `stream` of the generator for `(seed, epoch, index)`.
pub fn sample_rng(seed: u64, epoch: u64, index: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(sample_key(seed, epoch, index));
    rng.set_stream(stream);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn coin(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// Applies one random draw of every enabled transform.
pub fn augment(config: &AugmentConfig, image: &Image, rng: &mut ChaCha8Rng) -> Result<Image> {
    let [h, w, c] = image.shape();
    if config.crop_prob > 0.0 && config.crop_scale[0] < 1.0 {
        let side = crop_side(h.min(w), config.crop_scale[0]);
        ensure!(
            side >= 2,
            Contract,
            "{h}x{w} image is too small for crop scale {}",
            config.crop_scale[0]
        );
    }
    ensure!(
        image.pixels().iter().all(|p| (0.0..=1.0).contains(p)),
        Contract,
        "pixel values must lie in [0, 1]"
    );

    let mut px = image.pixels().to_vec();
    if coin(rng, config.flip_prob) {
        px = flip_horizontal(&px, h, w, c);
    }
    if coin(rng, config.rotate_prob) {
        let degrees = uniform(rng, config.rotate_degrees);
        if degrees != 0.0 {
            px = rotate(&px, h, w, c, degrees.to_radians());
        }
    }
    if coin(rng, config.crop_prob) {
        let scale = uniform(rng, config.crop_scale);
        let (ch, cw) = (crop_side(h, scale), crop_side(w, scale));
        let y0 = rng.random_range(0..=h - ch);
        let x0 = rng.random_range(0..=w - cw);
        if (ch, cw) != (h, w) {
            px = crop_resize(&px, [h, w, c], [y0, x0, ch, cw]);
        }
    }
    if coin(rng, config.contrast_prob) {
        let factor = uniform(rng, config.contrast_factor);
        if factor != 1.0 {
            adjust_contrast(&mut px, c, factor);
        }
    }
    if coin(rng, config.blur_prob) {
        let sigma = uniform(rng, config.blur_sigma);
        if config.blur_kernel > 1 {
            px = gaussian_blur(&px, h, w, c, config.blur_kernel, sigma);
        }
    }
    for p in &mut px {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(Image::from_raw(h, w, c, px))
}

/// Two independent views of `image`, drawn from `query_rng` and `key_rng`.
pub fn make_pair_with(
    config: &AugmentConfig,
    image: &Image,
    query_rng: &mut ChaCha8Rng,
    key_rng: &mut ChaCha8Rng,
) -> Result<(Image, Image)> {
    let q = augment(config, image, query_rng)?;
    let k = augment(config, image, key_rng)?;
    Ok((q, k))
}

/// The pair for sample `index` in `epoch`, using streams 0 and 1 of its key.
pub fn make_pair(
    config: &AugmentConfig,
    image: &Image,
    seed: u64,
    epoch: u64,
    index: u64,
) -> Result<(Image, Image)> {
    let mut rq = sample_rng(seed, epoch, index, 0);
    let mut rk = sample_rng(seed, epoch, index, 1);
    make_pair_with(config, image, &mut rq, &mut rk)
}

fn crop_side(side: usize, scale: f64) -> usize {
    ((side as f64 * scale).round() as usize).clamp(1, side)
}

pub fn flip_horizontal(px: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; px.len()];
    for y in 0..h {
        for x in 0..w {
            let src = (y * w + (w - 1 - x)) * c;
            let dst = (y * w + x) * c;
            out[dst..dst + c].copy_from_slice(&px[src..src + c]);
        }
    }
    out
}

/// Bilinear sample at fractional `(y, x)`; outside the image reads as 0.
fn sample_zero(px: &[f64], h: usize, w: usize, c: usize, y: f64, x: f64, ch: usize) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (ty, tx) = (y - y0, x - x0);
    let mut acc = 0.0;
    for (dy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
        for (dx, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
            let (yy, xx) = (y0 + dy, x0 + dx);
            if yy >= 0.0 && xx >= 0.0 && (yy as usize) < h && (xx as usize) < w {
                acc += wy * wx * px[((yy as usize) * w + xx as usize) * c + ch];
            }
        }
    }
    acc
}

/// Rotation about the image centre by `theta` radians (counter-clockwise).
pub fn rotate(px: &[f64], h: usize, w: usize, c: usize, theta: f64) -> Vec<f64> {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = theta.sin_cos();
    let mut out = vec![0.0; px.len()];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            for ch in 0..c {
                out[(y * w + x) * c + ch] = sample_zero(px, h, w, c, sy, sx, ch);
            }
        }
    }
    out
}

/// Crops `[y0, x0, ch, cw]` and resizes it back to `h × w` bilinearly.
pub fn crop_resize(px: &[f64], [h, w, c]: [usize; 3], [y0, x0, ch, cw]: [usize; 4]) -> Vec<f64> {
    let coord = |dst: usize, dst_len: usize, src_len: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = vec![0.0; px.len()];
    for y in 0..h {
        let (ya, yb, ty) = coord(y, h, ch);
        for x in 0..w {
            let (xa, xb, tx) = coord(x, w, cw);
            for k in 0..c {
                let at = |yy: usize, xx: usize| px[((y0 + yy) * w + x0 + xx) * c + k];
                let top = at(ya, xa) * (1.0 - tx) + at(ya, xb) * tx;
                let bottom = at(yb, xa) * (1.0 - tx) + at(yb, xb) * tx;
                out[(y * w + x) * c + k] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    out
}

/// Scales each channel's deviation from its mean by `factor`.
pub fn adjust_contrast(px: &mut [f64], c: usize, factor: f64) {
    let n = (px.len() / c) as f64;
    for k in 0..c {
        let mean = px.iter().skip(k).step_by(c).sum::<f64>() / n;
        for p in px.iter_mut().skip(k).step_by(c) {
            *p = mean + factor * (*p - mean);
        }
    }
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(px: &[f64], h: usize, w: usize, c: usize, kernel: usize, sigma: f64) -> Vec<f64> {
    let r = (kernel / 2) as isize;
    let mut weights: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);

    let pass = |src: &[f64], along_x: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                for k in 0..c {
                    let mut acc = 0.0;
                    for (i, wt) in weights.iter().enumerate() {
                        let d = i as isize - r;
                        let (yy, xx) = if along_x {
                            (y, (x as isize + d).clamp(0, w as isize - 1) as usize)
                        } else {
                            ((y as isize + d).clamp(0, h as isize - 1) as usize, x)
                        };
                        acc += wt * src[(yy * w + xx) * c + k];
                    }
                    out[(y * w + x) * c + k] = acc;
                }
            }
        }
        out
    };
    let horizontal = pass(px, true);
    pass(&horizontal, false)
}
