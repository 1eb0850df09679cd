//! Image datasets: sorted directories of image files or procedurally
//! generated blobs with known factors.
//!
//! Every image is delivered as an `(H, W, C)` array scaled to `[-1, 1]`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::FilterType;
use image::{DynamicImage, ImageReader};
use ndarray::{Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "gif", "tif", "tiff", "webp"];

/// Maps an 8-bit intensity to `[-1, 1]`.
pub fn scale(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Inverse of [`scale`], rounding and clamping to the 8-bit range.
pub fn unscale(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Where images come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Directory(PathBuf),
    Synthetic,
}

impl FromStr for DatasetSource {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(if s == "synthetic" {
            DatasetSource::Synthetic
        } else {
            DatasetSource::Directory(PathBuf::from(s))
        })
    }
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSource::Directory(p) => write!(f, "{}", p.display()),
            DatasetSource::Synthetic => f.write_str("synthetic"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub source: DatasetSource,
    pub height: usize,
    pub width: usize,
    /// 3 for RGB, 1 for grayscale.
    pub channels: usize,
    pub train_count: usize,
    pub test_count: usize,
    /// Seeds the synthetic generator. Unused for directories.
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument(format!("resolution {}x{}", self.height, self.width)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidArgument(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.train_count == 0 {
            return Err(Error::InvalidArgument("train_count must be positive".into()));
        }
        Ok(())
    }
}

/// Ground-truth factors of a synthetic blob image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobFactors {
    /// Horizontal centre as a fraction of the width.
    pub x: f64,
    /// Vertical centre as a fraction of the height.
    pub y: f64,
    /// Hue in `[0, 1)`.
    pub hue: f64,
}

impl BlobFactors {
    /// Factors for image `index` of the generator seeded with `seed`.
    pub fn for_index(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Self {
            x: rng.random_range(0.25..0.75),
            y: rng.random_range(0.25..0.75),
            hue: rng.random_range(0.0..1.0),
        }
    }

    /// Renders the blob as 8-bit RGB, row-major `(h, w, 3)`.
    pub fn render(&self, height: usize, width: usize) -> Vec<u8> {
        let color = hue_to_rgb(self.hue);
        let background = [0.1, 0.1, 0.1];
        let sigma = height.min(width) as f64 / 8.0;
        let (cx, cy) = (self.x * width as f64, self.y * height as f64);
        let mut out = Vec::with_capacity(height * width * 3);
        for i in 0..height {
            for j in 0..width {
                let (dy, dx) = (i as f64 + 0.5 - cy, j as f64 + 0.5 - cx);
                let a = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                for c in 0..3 {
                    let v = background[c] * (1.0 - a) + color[c] * a;
                    out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        out
    }
}

fn hue_to_rgb(h: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let x = 1.0 - (h6 % 2.0 - 1.0).abs();
    match h6 as u32 {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

#[derive(Debug, Clone)]
enum Items {
    Files(Vec<PathBuf>),
    /// Generator seed and the global indices of the images.
    Synthetic { seed: u64, indices: std::ops::Range<u64> },
}

/// One side of a split. Images are produced on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    items: Items,
    height: usize,
    width: usize,
    channels: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        match &self.items {
            Items::Files(f) => f.len(),
            Items::Synthetic { indices, .. } => (indices.end - indices.start) as usize,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(H, W, C)` of every image.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Source files, if the set comes from a directory.
    pub fn files(&self) -> Option<&[PathBuf]> {
        match &self.items {
            Items::Files(f) => Some(f),
            Items::Synthetic { .. } => None,
        }
    }

    /// Ground-truth factors, if the set is synthetic.
    pub fn factors(&self, i: usize) -> Option<BlobFactors> {
        match &self.items {
            Items::Synthetic { seed, indices } if i < self.len() => {
                Some(BlobFactors::for_index(*seed, indices.start + i as u64))
            }
            _ => None,
        }
    }

    pub fn get(&self, i: usize) -> Result<Array3<f32>> {
        if i >= self.len() {
            return Err(Error::InvalidArgument(format!("image index {i} out of range for {} images", self.len())));
        }
        let (h, w, c) = (self.height, self.width, self.channels);
        let bytes = match &self.items {
            Items::Files(files) => decode_file(&files[i], h, w, c)?,
            Items::Synthetic { seed, indices } => {
                let rgb = BlobFactors::for_index(*seed, indices.start + i as u64).render(h, w);
                if c == 3 {
                    rgb
                } else {
                    rgb.chunks(3)
                        .map(|p| ((p[0] as u32 * 299 + p[1] as u32 * 587 + p[2] as u32 * 114 + 500) / 1000) as u8)
                        .collect()
                }
            }
        };
        Ok(Array3::from_shape_vec((h, w, c), bytes.into_iter().map(scale).collect()).expect("decoded size"))
    }

    /// Stacks the listed images into an NHWC batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Array4<f32>> {
        let mut out = Array4::zeros((indices.len(), self.height, self.width, self.channels));
        for (mut slot, &i) in out.axis_iter_mut(Axis(0)).zip(indices) {
            slot.assign(&self.get(i)?);
        }
        Ok(out)
    }
}

fn decode_file(path: &Path, h: usize, w: usize, c: usize) -> Result<Vec<u8>> {
    let img = ImageReader::open(path)?.with_guessed_format()?.decode()?;
    let img = if img.width() as usize != w || img.height() as usize != h {
        img.resize_exact(w as u32, h as u32, FilterType::Triangle)
    } else {
        img
    };
    Ok(match c {
        1 => DynamicImage::ImageLuma8(img.to_luma8()).into_bytes(),
        _ => img.to_rgb8().into_raw(),
    })
}

/// Image files directly under `root`, sorted by file name.
pub fn list_images(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::Dataset {
            root: root.to_path_buf(),
            problems: vec!["not a readable directory".into()],
        });
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Builds the train and test sets. Train takes the first `train_count`
/// images in order, test the next `test_count`.
///
/// Directory files that will be used are checked up front by reading their
/// headers; every unreadable file is reported in one error.
pub fn load_split(spec: &DatasetSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let required = spec.train_count + spec.test_count;
    let make = |items| Dataset {
        items,
        height: spec.height,
        width: spec.width,
        channels: spec.channels,
    };
    match &spec.source {
        DatasetSource::Synthetic => {
            let (t, n) = (spec.train_count as u64, required as u64);
            Ok((
                make(Items::Synthetic {
                    seed: spec.seed,
                    indices: 0..t,
                }),
                make(Items::Synthetic {
                    seed: spec.seed,
                    indices: t..n,
                }),
            ))
        }
        DatasetSource::Directory(root) => {
            let mut files = list_images(root)?;
            if files.len() < required {
                return Err(Error::DatasetCount {
                    available: files.len(),
                    required,
                });
            }
            files.truncate(required);
            let problems: Vec<String> = files
                .iter()
                .filter_map(|f| {
                    let dims = ImageReader::open(f)
                        .and_then(|r| r.with_guessed_format())
                        .map_err(image::ImageError::from)
                        .and_then(|r| r.into_dimensions());
                    match dims {
                        Ok(_) => None,
                        Err(e) => Some(format!("{}: {e}", f.display())),
                    }
                })
                .collect();
            if !problems.is_empty() {
                return Err(Error::Dataset {
                    root: root.clone(),
                    problems,
                });
            }
            let test = files.split_off(spec.train_count);
            Ok((make(Items::Files(files)), make(Items::Files(test))))
        }
    }
}

/// Position in a shuffled pass over a dataset. Each epoch uses a fresh
/// permutation seeded from the master seed and the epoch number; a partial
/// batch at the end of an epoch is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochCursor {
    pub seed: u64,
    pub epoch: u64,
    pub position: usize,
}

impl EpochCursor {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            epoch: 0,
            position: 0,
        }
    }

    pub fn permutation(&self, len: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_da7a);
        rng.set_stream(self.epoch);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Indices of the next batch.
    pub fn next_batch(&mut self, len: usize, batch: usize) -> Result<Vec<usize>> {
        if batch == 0 || batch > len {
            return Err(Error::InvalidArgument(format!("batch size {batch} for {len} images")));
        }
        if self.position + batch > len {
            self.epoch += 1;
            self.position = 0;
        }
        let order = self.permutation(len);
        let out = order[self.position..self.position + batch].to_vec();
        self.position += batch;
        Ok(out)
    }
}
