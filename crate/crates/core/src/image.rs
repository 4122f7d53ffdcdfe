//! Owned images and image collections, `H × W × C` with pixels in `[0, 1]`.

use crate::error::{ensure, Result};
use crate::numeric::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        ensure!(
            height * width * channels == pixels.len() && channels > 0,
            Contract,
            "{height}x{width}x{channels} image needs {} pixels, got {}",
            height * width * channels,
            pixels.len()
        );
        ensure!(
            pixels.iter().all(|p| (0.0..=1.0).contains(p)),
            Contract,
            "pixel values must lie in [0, 1]"
        );
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    /// Skips the range check; callers guarantee pixels are in `[0, 1]`.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(height * width * channels, pixels.len());
        Self {
            height,
            width,
            channels,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }
}

/// A collection of same-shaped images stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    shape: [usize; 3],
    pixels: Vec<f64>,
}

impl ImageSet {
    pub fn new(shape: [usize; 3], pixels: Vec<f64>) -> Result<Self> {
        let per: usize = shape.iter().product();
        ensure!(per > 0, Contract, "image shape {shape:?} is empty");
        ensure!(
            pixels.len().is_multiple_of(per),
            Contract,
            "{} pixels is not a whole number of {shape:?} images",
            pixels.len()
        );
        ensure!(
            pixels.iter().all(|p| (0.0..=1.0).contains(p)),
            Contract,
            "pixel values must lie in [0, 1]"
        );
        Ok(Self { shape, pixels })
    }

    pub fn from_images(shape: [usize; 3], images: &[Image]) -> Result<Self> {
        ensure!(
            images.iter().all(|im| im.shape() == shape),
            Contract,
            "images do not all have shape {shape:?}"
        );
        let pixels = images.iter().flat_map(|im| im.pixels.iter().copied()).collect();
        Ok(Self { shape, pixels })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn image_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / self.image_len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn image(&self, i: usize) -> Image {
        let [h, w, c] = self.shape;
        Image::from_raw(h, w, c, self.pixels(i).to_vec())
    }

    /// Subset in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let pixels = indices.iter().flat_map(|&i| self.pixels(i).iter().copied()).collect();
        Self {
            shape: self.shape,
            pixels,
        }
    }

    /// `[N, H, W, C]` tensor of the selected images.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let [h, w, c] = self.shape;
        let data = indices.iter().flat_map(|&i| self.pixels(i).iter().copied()).collect();
        Tensor::new(&[indices.len(), h, w, c], data).expect("batch shape")
    }

    pub fn to_tensor(&self) -> Tensor {
        let [h, w, c] = self.shape;
        Tensor::new(&[self.len(), h, w, c], self.pixels.clone()).expect("set shape")
    }
}

/// Stacks images into an `[N, H, W, C]` tensor.
pub fn stack(images: &[Image]) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(crate::Error::Contract("cannot stack zero images".into()));
    };
    let shape = first.shape();
    ensure!(
        images.iter().all(|im| im.shape() == shape),
        Contract,
        "images differ in shape"
    );
    let data = images.iter().flat_map(|im| im.pixels.iter().copied()).collect();
    let [h, w, c] = shape;
    Tensor::new(&[images.len(), h, w, c], data)
}
