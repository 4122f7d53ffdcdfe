//! IDX (MNIST distribution format) images and labels.

use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use crate::error::{ensure, Error, Result};
use crate::image::ImageSet;

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

/// Images with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    pub images: ImageSet,
    pub labels: Vec<u32>,
    /// Where the set came from, e.g. a file path.
    pub provenance: String,
}

impl LabeledImageSet {
    pub fn new(images: ImageSet, labels: Vec<u32>, provenance: impl Into<String>) -> Result<Self> {
        ensure!(
            images.len() == labels.len(),
            Format,
            "{} images but {} labels",
            images.len(),
            labels.len()
        );
        Ok(Self {
            images,
            labels,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

fn read_magic(r: &mut impl Read, expected: u32, path: &Path) -> Result<()> {
    let magic = read_u32(r)?;
    if magic != expected {
        return Err(Error::Format(format!(
            "{}: magic number {magic}, expected {expected}",
            path.display()
        )));
    }
    Ok(())
}

/// Reads an IDX image file and its label file; pixels are scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledImageSet> {
    let bytes = fs::read(images_path)?;
    let mut r = Cursor::new(bytes.as_slice());
    read_magic(&mut r, IMAGES_MAGIC, images_path)?;
    let n = read_u32(&mut r)? as usize;
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let mut raw = vec![0u8; n * rows * cols];
    r.read_exact(&mut raw)?;

    let bytes = fs::read(labels_path)?;
    let mut r = Cursor::new(bytes.as_slice());
    read_magic(&mut r, LABELS_MAGIC, labels_path)?;
    let m = read_u32(&mut r)? as usize;
    if m != n {
        return Err(Error::Format(format!(
            "{} holds {n} images but {} holds {m} labels",
            images_path.display(),
            labels_path.display()
        )));
    }
    let mut labels = vec![0u8; m];
    r.read_exact(&mut labels)?;

    let pixels = raw.iter().map(|&b| b as f64 / 255.0).collect();
    let images = ImageSet::new([rows, cols, 1], pixels)?;
    LabeledImageSet::new(
        images,
        labels.into_iter().map(u32::from).collect(),
        images_path.display().to_string(),
    )
}

/// Writes a set in IDX format; pixels are rounded to bytes.
pub fn write_idx(set: &LabeledImageSet, images_path: &Path, labels_path: &Path) -> Result<()> {
    let [h, w, c] = set.images.shape();
    ensure!(c == 1, Contract, "IDX images must have one channel, got {c}");
    let mut out = Vec::with_capacity(16 + set.len() * h * w);
    for v in [IMAGES_MAGIC, set.len() as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for i in 0..set.len() {
        out.extend(set.images.pixels(i).iter().map(|p| (p * 255.0).round() as u8));
    }
    fs::write(images_path, out)?;

    let mut out = Vec::with_capacity(8 + set.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(set.len() as u32).to_be_bytes());
    for &l in &set.labels {
        ensure!(l <= 255, Contract, "label {l} does not fit in a byte");
        out.push(l as u8);
    }
    fs::write(labels_path, out)?;
    Ok(())
}

/// Which half of an MNIST-style data directory to read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

fn find(dir: &Path, stem: &str, kind: &str) -> Result<PathBuf> {
    for name in [format!("{stem}-{kind}-ubyte"), format!("{stem}.{kind}-ubyte")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("no {stem}-{kind}-ubyte file in {}", dir.display()),
    )))
}

/// Paths of the image and label files for `split` in `dir`. Accepts both
/// `train-images-idx3-ubyte` and `train-images.idx3-ubyte` spellings.
pub fn idx_paths(dir: &Path, split: Split) -> Result<(PathBuf, PathBuf)> {
    let p = split.prefix();
    Ok((find(dir, &format!("{p}-images"), "idx3")?, find(dir, &format!("{p}-labels"), "idx1")?))
}

pub fn load_idx_dir(dir: &Path, split: Split) -> Result<LabeledImageSet> {
    let (images, labels) = idx_paths(dir, split)?;
    load_idx(&images, &labels)
}
