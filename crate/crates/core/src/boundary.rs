//! Enhanced class-boundary targets: a 3D Sobel magnitude over the one-hot
//! mask, rescaled so every boundary voxel lies in (0.5, 1].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{one_hot, LabelVolume, Volume};
use crate::math::sqrt;
use crate::{Error, Result, Tensor};

const DERIV: [f64; 3] = [-1.0, 0.0, 1.0];
const SMOOTH: [f64; 3] = [1.0, 2.0, 1.0];

/// One 3-tap pass along `axis` with replicate padding.
fn pass(src: &[f64], dims: [usize; 3], axis: usize, taps: &[f64; 3]) -> Vec<f64> {
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    let mut out = vec![0.0; src.len()];
    for x in 0..dims[0] {
        for y in 0..dims[1] {
            for z in 0..dims[2] {
                let i = (x * dims[1] + y) * dims[2] + z;
                let pos = [x, y, z][axis];
                let lo = if pos == 0 { i } else { i - stride };
                let hi = if pos + 1 == dims[axis] { i } else { i + stride };
                out[i] = taps[0] * src[lo] + taps[1] * src[i] + taps[2] * src[hi];
            }
        }
    }
    out
}

fn check_one_hot(mask: &Tensor) -> Result<[usize; 4]> {
    let s = mask.shape();
    if s.len() != 4 {
        return Err(Error::NotOneHot(format!("expected [C, dx, dy, dz], got {s:?}")));
    }
    let shape = [s[0], s[1], s[2], s[3]];
    let n = s[1] * s[2] * s[3];
    let d = mask.data();
    for i in 0..n {
        let mut sum = 0.0;
        for c in 0..s[0] {
            let v = d[c * n + i];
            if v != 0.0 && v != 1.0 {
                return Err(Error::NotOneHot(format!("value {v} at channel {c}, voxel {i}")));
            }
            sum += v;
        }
        if sum != 1.0 {
            return Err(Error::NotOneHot(format!("voxel {i} has {sum} active channels")));
        }
    }
    Ok(shape)
}

/// Sobel gradient magnitude per channel of a one-hot mask, combined by the
/// voxelwise maximum over channels.
pub fn sobel3d(mask: &Tensor) -> Result<Volume<f64>> {
    let [c, dx, dy, dz] = check_one_hot(mask)?;
    let dims = [dx, dy, dz];
    let n = dx * dy * dz;
    let mut s = vec![0.0f64; n];
    for ch in 0..c {
        let src = &mask.data()[ch * n..(ch + 1) * n];
        let mut mag2 = vec![0.0; n];
        for axis in 0..3 {
            let mut g = src.to_vec();
            for a in 0..3 {
                g = pass(&g, dims, a, if a == axis { &DERIV } else { &SMOOTH });
            }
            for (m, v) in mag2.iter_mut().zip(&g) {
                *m += v * v;
            }
        }
        for (out, m) in s.iter_mut().zip(mag2) {
            *out = out.max(sqrt(m));
        }
    }
    Volume::new(dims, s)
}

/// `b = (s + max s) / (2 max s)` where `s > 0`, else 0. An all-zero input
/// yields an all-zero target.
pub fn enhance_boundary(s: &Volume<f64>) -> Result<Volume<f64>> {
    if let Some(&bad) = s.data().iter().find(|&&v| !(v >= 0.0)) {
        return Err(Error::OutOfRange(format!("gradient magnitude {bad} is negative or NaN")));
    }
    let max = s.data().iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(s.map(|_| 0.0));
    }
    Ok(s.map(|&v| if v > 0.0 { (v + max) / (2.0 * max) } else { 0.0 }))
}

/// Enhanced boundary of a label mask.
pub fn boundary_target(mask: &LabelVolume, num_classes: usize) -> Result<Volume<f64>> {
    enhance_boundary(&sobel3d(&one_hot(mask, num_classes)?)?)
}
