//! Volumes, synthetic cases and the per-iteration sample pipeline.

mod degrade;
mod phantom;
mod volume;

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

pub use degrade::{degrade_mask, DEFAULT_SEVERITIES, MAX_BLOBS, MAX_FLIP_PROB, MAX_RADIUS};
pub use phantom::{gen_phantom, Phantom, PhantomParams, MIN_CLASS_FRACTION};
pub use volume::{LabelVolume, Volume};

use crate::math::sqrt;
use crate::{Error, Result, Tensor};

/// `[C, dx, dy, dz]` indicator encoding of `labels`.
pub fn one_hot(labels: &LabelVolume, num_classes: usize) -> Result<Tensor> {
    let n = labels.len();
    let mut data = alloc::vec![0.0; num_classes * n];
    for (i, &l) in labels.data().iter().enumerate() {
        let l = l as usize;
        if l >= num_classes {
            return Err(Error::OutOfRange(format!("label {l} with {num_classes} classes")));
        }
        data[l * n + i] = 1.0;
    }
    let d = labels.dims();
    Tensor::new(alloc::vec![num_classes, d[0], d[1], d[2]], data)
}

/// Per-voxel argmax over the leading channel axis; first maximum wins.
pub fn argmax_channels(t: &Tensor) -> Result<LabelVolume> {
    let s = t.shape();
    if s.len() != 4 || s[0] == 0 || s[0] > 256 {
        return Err(Error::InvalidArgument(format!("expected [C, dx, dy, dz] with 1..=256 channels, got {s:?}")));
    }
    let n = s[1] * s[2] * s[3];
    let d = t.data();
    let labels = (0..n)
        .map(|i| {
            let mut best = 0;
            for c in 1..s[0] {
                if d[c * n + i] > d[best * n + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    Volume::new([s[1], s[2], s[3]], labels)
}

/// 1 where `mask` agrees with `gt`, 0 where it does not.
pub fn make_error_map(mask: &LabelVolume, gt: &LabelVolume) -> Result<LabelVolume> {
    if mask.dims() != gt.dims() {
        return Err(Error::ShapeMismatch {
            op: "make_error_map",
            lhs: mask.dims().to_vec(),
            rhs: gt.dims().to_vec(),
        });
    }
    let data = mask.data().iter().zip(gt.data()).map(|(a, b)| u8::from(a == b)).collect();
    Volume::new(mask.dims(), data)
}

/// Z-score standardization over the whole volume followed by min-max
/// rescaling to [0, 1]. A constant volume maps to 0.5 everywhere.
pub fn preprocess(image: &Volume<f64>) -> Volume<f64> {
    let n = image.len() as f64;
    let mean = image.data().iter().sum::<f64>() / n;
    let std = sqrt(image.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
    if !(std > 0.0) {
        return image.map(|_| 0.5);
    }
    let z = image.map(|v| (v - mean) / std);
    let lo = z.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return image.map(|_| 0.5);
    }
    z.map(|v| (v - lo) / (hi - lo))
}

/// One training or evaluation example: an image with a generated mask and
/// every target derived from it, all on the same grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Volume<f64>,
    pub mask: LabelVolume,
    pub gt: LabelVolume,
    /// 1 = correct, 0 = error.
    pub error_map: LabelVolume,
    pub boundary: Volume<f64>,
}

impl Sample {
    /// Derives the error map and boundary target from `mask` and `gt`.
    pub fn new(image: Volume<f64>, mask: LabelVolume, gt: LabelVolume, num_classes: usize) -> Result<Self> {
        if image.dims() != mask.dims() {
            return Err(Error::ShapeMismatch {
                op: "sample",
                lhs: image.dims().to_vec(),
                rhs: mask.dims().to_vec(),
            });
        }
        let error_map = make_error_map(&mask, &gt)?;
        let boundary = crate::boundary::boundary_target(&mask, num_classes)?;
        Ok(Self {
            image,
            mask,
            gt,
            error_map,
            boundary,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.image.dims()
    }

    fn crop(&self, offset: [isize; 3], size: [usize; 3]) -> Self {
        Self {
            image: self.image.crop(offset, size, 0.0),
            mask: self.mask.crop(offset, size, 0),
            gt: self.gt.crop(offset, size, 0),
            error_map: self.error_map.crop(offset, size, 1),
            boundary: self.boundary.crop(offset, size, 0.0),
        }
    }

    fn flip(&self, axis: usize) -> Self {
        Self {
            image: self.image.flip(axis),
            mask: self.mask.flip(axis),
            gt: self.gt.flip(axis),
            error_map: self.error_map.flip(axis),
            boundary: self.boundary.flip(axis),
        }
    }
}

/// Crops every volume of `sample` at one shared random offset. Axes shorter
/// than the crop are zero-padded: the sample sits at a random position
/// inside the padded extent, and padded error-map voxels are correct.
pub fn random_crop(sample: &Sample, crop: [usize; 3], rng: &mut impl Rng) -> Sample {
    let dims = sample.dims();
    let offset: [isize; 3] = core::array::from_fn(|a| {
        let (d, c) = (dims[a] as i64, crop[a] as i64);
        let off = if d >= c { rng.random_range(0..=d - c) } else { -rng.random_range(0..=c - d) };
        off as isize
    });
    sample.crop(offset, crop)
}

/// Mirrors every volume along each listed axis with probability 0.5.
/// Returns the sample and the axes actually flipped.
pub fn mirror_flip(sample: &Sample, axes: &[usize], rng: &mut impl Rng) -> Result<(Sample, Vec<usize>)> {
    if let Some(&a) = axes.iter().find(|&&a| a > 2) {
        return Err(Error::InvalidAxis { axis: a, rank: 3 });
    }
    let mut out = sample.clone();
    let mut flipped = Vec::new();
    for &axis in axes {
        if rng.random_bool(0.5) {
            out = out.flip(axis);
            flipped.push(axis);
        }
    }
    Ok((out, flipped))
}
