//! Flips, colour jitter and Gaussian blur.

use rand::Rng;

use super::{ImageBuf, IndexMask, Patch};

/// One draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub blur_sigma: f64,
}

impl AugmentParams {
    pub const JITTER: (f64, f64) = (0.8, 1.2);
    pub const MAX_BLUR: f64 = 1.0;

    /// Leaves every patch unchanged.
    pub fn identity() -> Self {
        Self { hflip: false, vflip: false, brightness: 1.0, contrast: 1.0, saturation: 1.0, blur_sigma: 0.0 }
    }

    pub fn sample(rng: &mut impl Rng) -> Self {
        let (lo, hi) = Self::JITTER;
        Self {
            hflip: rng.gen_bool(0.5),
            vflip: rng.gen_bool(0.5),
            brightness: rng.gen_range(lo..=hi),
            contrast: rng.gen_range(lo..=hi),
            saturation: rng.gen_range(lo..=hi),
            blur_sigma: rng.gen_range(0.0..=Self::MAX_BLUR),
        }
    }

    pub fn apply(&self, patch: &mut Patch) {
        if self.hflip {
            flip_image(&mut patch.image, true);
            if let Some(m) = patch.mask.as_mut() {
                flip_mask(m, true);
            }
        }
        if self.vflip {
            flip_image(&mut patch.image, false);
            if let Some(m) = patch.mask.as_mut() {
                flip_mask(m, false);
            }
        }
        let img = &mut patch.image;
        if self.brightness != 1.0 {
            img.data.iter_mut().for_each(|v| *v *= self.brightness);
        }
        if self.contrast != 1.0 {
            let mean = luminance(img).iter().sum::<f64>() / (img.height * img.width) as f64;
            img.data.iter_mut().for_each(|v| *v = (*v - mean) * self.contrast + mean);
        }
        if self.saturation != 1.0 && img.channels == 3 {
            let grey = luminance(img);
            let p = grey.len();
            for (i, v) in img.data.iter_mut().enumerate() {
                let g = grey[i % p];
                *v = g + (*v - g) * self.saturation;
            }
        }
        if self.blur_sigma > 0.0 {
            gaussian_blur(img, self.blur_sigma);
        }
        img.clamp_unit();
    }
}

/// Samples parameters from `rng` and applies them to a copy of `patch`.
pub fn augment(patch: &Patch, rng: &mut impl Rng) -> Patch {
    let mut out = patch.clone();
    AugmentParams::sample(rng).apply(&mut out);
    out
}

fn luminance(img: &ImageBuf) -> Vec<f64> {
    let p = img.height * img.width;
    if img.channels != 3 {
        return img.data[..p].to_vec();
    }
    (0..p)
        .map(|i| 0.299 * img.data[i] + 0.587 * img.data[p + i] + 0.114 * img.data[2 * p + i])
        .collect()
}

fn flip_image(img: &mut ImageBuf, horizontal: bool) {
    let (h, w) = (img.height, img.width);
    for plane in img.data.chunks_mut(h * w) {
        flip_plane(plane, h, w, horizontal);
    }
}

fn flip_mask(m: &mut IndexMask, horizontal: bool) {
    flip_plane(&mut m.data, m.height, m.width, horizontal);
}

fn flip_plane<T>(plane: &mut [T], h: usize, w: usize, horizontal: bool) {
    if horizontal {
        plane.chunks_mut(w).for_each(|row| row.reverse());
    } else {
        for r in 0..h / 2 {
            let (top, bottom) = plane.split_at_mut((h - 1 - r) * w);
            top[r * w..(r + 1) * w].swap_with_slice(&mut bottom[..w]);
        }
    }
}

/// Separable Gaussian blur with radius `⌈3σ⌉` and mirrored borders.
pub fn gaussian_blur(img: &mut ImageBuf, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w) = (img.height as isize, img.width as isize);
    let reflect = |i: isize, n: isize| -> usize {
        let period = 2 * n;
        let mut j = i.rem_euclid(period.max(1));
        if j >= n {
            j = period - 1 - j;
        }
        j as usize
    };
    let mut tmp = vec![0.0; (h * w) as usize];
    for plane in img.data.chunks_mut((h * w) as usize) {
        for r in 0..h {
            for c in 0..w {
                tmp[(r * w + c) as usize] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &kv)| kv * plane[(r * w) as usize + reflect(c + k as isize - radius, w)])
                    .sum();
            }
        }
        for r in 0..h {
            for c in 0..w {
                plane[(r * w + c) as usize] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &kv)| kv * tmp[reflect(r + k as isize - radius, h) * w as usize + c as usize])
                    .sum();
            }
        }
    }
}
