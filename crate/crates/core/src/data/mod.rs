//! Images, masks, patches, augmentation, dataset splits and a synthetic
//! histology-like generator.
//!
//! Images are `C×H×W` floats in `[0, 1]`; masks are `H×W` class indices.
//! On disk images are 8-bit PNG (RGB or grey) or the raw float container
//! described in [`io`]; masks are 8-bit single-channel PNG.

mod augment;
pub mod io;
mod manifest;
mod synth;

pub use augment::{augment, gaussian_blur, AugmentParams};
pub use manifest::{
    build_manifest, load_split, write_synth_dataset, DatasetManifest, ManifestEntry, SplitFractions, SplitTag,
    MANIFEST_FILE,
};
pub use synth::{synth_generate, SynthSample, SYNTH_CLASSES, SYNTH_SHARES};

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradcore::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major `C×H×W`.
    pub data: Vec<f64>,
}

impl ImageBuf {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width || channels == 0 {
            return Err(Error::Data(format!(
                "image buffer of {} values does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn at(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[(c * self.height + r) * self.width + col]
    }

    pub fn at_mut(&mut self, c: usize, r: usize, col: usize) -> &mut f64 {
        &mut self.data[(c * self.height + r) * self.width + col]
    }

    /// The `size×size` window with top-left corner `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, size: usize) -> ImageBuf {
        let mut data = Vec::with_capacity(self.channels * size * size);
        for c in 0..self.channels {
            for r in row..row + size {
                let start = (c * self.height + r) * self.width + col;
                data.extend_from_slice(&self.data[start..start + size]);
            }
        }
        ImageBuf { channels: self.channels, height: size, width: size, data }
    }

    /// Mean of each channel.
    pub fn channel_means(&self) -> Vec<f64> {
        let p = (self.height * self.width) as f64;
        self.data.chunks(self.height * self.width).map(|c| c.iter().sum::<f64>() / p).collect()
    }

    pub fn clamp_unit(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl IndexMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Data(format!(
                "mask of {} values does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn at(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.width + c]
    }

    pub fn crop(&self, row: usize, col: usize, size: usize) -> IndexMask {
        let mut data = Vec::with_capacity(size * size);
        for r in row..row + size {
            data.extend_from_slice(&self.data[r * self.width + col..r * self.width + col + size]);
        }
        IndexMask { height: size, width: size, data }
    }

    /// Errors with the first coordinate whose class is `>= num_classes`.
    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self.data.iter().position(|&v| v as usize >= num_classes) {
            Some(i) => Err(Error::Data(format!(
                "mask value {} at (row {}, col {}) is not below num_classes = {num_classes}",
                self.data[i],
                i / self.width,
                i % self.width
            ))),
            None => Ok(()),
        }
    }

    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for &v in &self.data {
            if let Some(c) = counts.get_mut(v as usize) {
                *c += 1;
            }
        }
        counts
    }
}

/// Where a patch came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub source: String,
    pub row: usize,
    pub col: usize,
}

/// A square crop of an image and, for labeled data, its mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image: ImageBuf,
    pub mask: Option<IndexMask>,
    pub provenance: Provenance,
}

/// Cuts every `patch_size` window whose top-left corner lies on the
/// `stride` grid and that fits entirely inside the image. Images smaller
/// than the patch give no patches (with a warning).
pub fn extract_patches(
    image: &ImageBuf,
    mask: Option<&IndexMask>,
    patch_size: usize,
    stride: usize,
    source: &str,
) -> Result<Vec<Patch>> {
    if stride == 0 || patch_size == 0 {
        return Err(Error::Config(format!(
            "patch size and stride must be positive, got {patch_size} and {stride}"
        )));
    }
    if let Some(m) = mask {
        if (m.height, m.width) != (image.height, image.width) {
            return Err(Error::Data(format!(
                "{source}: mask is {}x{} but image is {}x{}",
                m.height, m.width, image.height, image.width
            )));
        }
    }
    if image.height < patch_size || image.width < patch_size {
        warn!(
            "{source}: {}x{} image is smaller than patch size {patch_size}; skipped",
            image.height, image.width
        );
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for row in (0..=image.height - patch_size).step_by(stride) {
        for col in (0..=image.width - patch_size).step_by(stride) {
            out.push(Patch {
                image: image.crop(row, col, patch_size),
                mask: mask.map(|m| m.crop(row, col, patch_size)),
                provenance: Provenance { source: source.to_string(), row, col },
            });
        }
    }
    Ok(out)
}

/// `[C, H, W]` one-hot encoding of an index mask.
pub fn one_hot_mask(mask: &IndexMask, num_classes: usize) -> Result<Tensor> {
    mask.check_classes(num_classes)?;
    let p = mask.height * mask.width;
    let mut data = vec![0.0; num_classes * p];
    for (i, &v) in mask.data.iter().enumerate() {
        data[v as usize * p + i] = 1.0;
    }
    Tensor::from_vec(&[num_classes, mask.height, mask.width], data)
}

/// Stacks same-sized images into `[N, C, H, W]`.
pub fn stack_images(images: &[&ImageBuf]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for im in images {
        if (im.channels, im.height, im.width) != (first.channels, first.height, first.width) {
            return Err(Error::Data("images in a batch must share one size".into()));
        }
        data.extend_from_slice(&im.data);
    }
    Tensor::from_vec(&[images.len(), first.channels, first.height, first.width], data)
}

/// Stacks masks into a one-hot `[N, C, H, W]` tensor.
pub fn stack_masks(masks: &[&IndexMask], num_classes: usize) -> Result<Tensor> {
    let first = masks.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let mut data = Vec::with_capacity(masks.len() * num_classes * first.data.len());
    for m in masks {
        if (m.height, m.width) != (first.height, first.width) {
            return Err(Error::Data("masks in a batch must share one size".into()));
        }
        data.extend(one_hot_mask(m, num_classes)?.to_vec());
    }
    Tensor::from_vec(&[masks.len(), num_classes, first.height, first.width], data)
}

/// Independent random stream for item `index` under a global seed, so that
/// per-item randomness does not depend on processing order.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
