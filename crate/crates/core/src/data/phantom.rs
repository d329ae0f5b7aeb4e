//! Synthetic anatomy: nested, rotated, wobbly ellipsoid shells with a
//! class-dependent intensity, a smooth bias field and Gaussian noise.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::volume::{LabelVolume, Volume};
use crate::math::{cos, sin, sqrt};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct PhantomParams {
    pub dims: [usize; 3],
    /// Background plus `num_classes − 1` tissues.
    pub num_classes: usize,
    pub noise_sigma: f64,
    pub bias_amplitude: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            num_classes: 4,
            noise_sigma: 0.06,
            bias_amplitude: 0.08,
        }
    }
}

impl PhantomParams {
    /// Spacing between consecutive class means; classes span [0, 1].
    pub fn class_spacing(&self) -> f64 {
        1.0 / (self.num_classes - 1) as f64
    }

    pub fn class_mean(&self, class: u8) -> f64 {
        class as f64 * self.class_spacing()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 16) {
            return Err(Error::InvalidConfig(format!("phantom extents must be at least 16, got {:?}", self.dims)));
        }
        if self.num_classes < 2 || self.num_classes > u8::MAX as usize {
            return Err(Error::InvalidConfig(format!("unsupported class count {}", self.num_classes)));
        }
        if !(self.noise_sigma >= 0.0) || self.class_spacing() < 2.0 * self.noise_sigma {
            return Err(Error::InvalidConfig(format!(
                "class means {} apart need noise sigma at most half that, got {}",
                self.class_spacing(),
                self.noise_sigma
            )));
        }
        if !(self.bias_amplitude >= 0.0) {
            return Err(Error::InvalidConfig("bias amplitude must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub image: Volume<f64>,
    pub labels: LabelVolume,
}

/// Minimum fraction of voxels each tissue class must occupy.
pub const MIN_CLASS_FRACTION: f64 = 0.01;
const MAX_ATTEMPTS: usize = 64;

struct Shell {
    center: [f64; 3],
    radii: [f64; 3],
    wobble: f64,
    freq: [f64; 3],
    phase: [f64; 3],
}

impl Shell {
    fn contains(&self, rot: &[[f64; 3]; 3], p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let q: [f64; 3] = core::array::from_fn(|i| rot[i][0] * d[0] + rot[i][1] * d[1] + rot[i][2] * d[2]);
        let rho2: f64 = (0..3).map(|a| (q[a] / self.radii[a]) * (q[a] / self.radii[a])).sum();
        let norm = sqrt(q.iter().map(|v| v * v).sum::<f64>()).max(1e-9);
        let w = 1.0
            + self.wobble
                * sin(self.freq[0] * q[0] / norm + self.phase[0])
                * sin(self.freq[1] * q[1] / norm + self.phase[1])
                * sin(self.freq[2] * q[2] / norm + self.phase[2]);
        rho2 <= w * w
    }
}

fn rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let tau = core::f64::consts::TAU;
    let (a, b, c) = (rng.random_range(0.0..tau), rng.random_range(0.0..tau), rng.random_range(0.0..tau));
    let rz = [[cos(a), -sin(a), 0.0], [sin(a), cos(a), 0.0], [0.0, 0.0, 1.0]];
    let ry = [[cos(b), 0.0, sin(b)], [0.0, 1.0, 0.0], [-sin(b), 0.0, cos(b)]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cos(c), -sin(c)], [0.0, sin(c), cos(c)]];
    let mul = |m: [[f64; 3]; 3], n: [[f64; 3]; 3]| -> [[f64; 3]; 3] {
        core::array::from_fn(|i| core::array::from_fn(|j| (0..3).map(|k| m[i][k] * n[k][j]).sum()))
    };
    mul(mul(rz, ry), rx)
}

fn draw_labels(params: &PhantomParams, rng: &mut impl Rng) -> LabelVolume {
    let dims = params.dims;
    let dimf = dims.map(|d| d as f64);
    let rot = rotation(rng);
    let center: [f64; 3] = core::array::from_fn(|a| dimf[a] / 2.0 - 0.5 + rng.random_range(-0.05..0.05) * dimf[a]);
    let outer: [f64; 3] = core::array::from_fn(|a| dimf[a] * rng.random_range(0.30..0.42));
    let tissues = params.num_classes - 1;
    let shrink = rng.random_range(0.55..0.7) / tissues as f64;
    let shells: Vec<Shell> = (0..tissues)
        .map(|k| {
            let s = 1.0 - k as f64 * shrink;
            Shell {
                center: core::array::from_fn(|a| center[a] + if k == 0 { 0.0 } else { rng.random_range(-1.0..1.0) }),
                radii: core::array::from_fn(|a| outer[a] * s * rng.random_range(0.95..1.05)),
                wobble: rng.random_range(0.0..0.12),
                freq: core::array::from_fn(|_| rng.random_range(1.0..4.0)),
                phase: core::array::from_fn(|_| rng.random_range(0.0..core::f64::consts::TAU)),
            }
        })
        .collect();
    let mut labels = LabelVolume::filled(dims, 0);
    for x in 0..dims[0] {
        for y in 0..dims[1] {
            for z in 0..dims[2] {
                let p = [x as f64, y as f64, z as f64];
                let mut label = 0u8;
                for (k, shell) in shells.iter().enumerate() {
                    if shell.contains(&rot, p) {
                        label = (k + 1) as u8;
                    }
                }
                labels.set(x, y, z, label);
            }
        }
    }
    labels
}

pub(crate) fn class_counts(labels: &LabelVolume, num_classes: usize) -> Vec<usize> {
    let mut counts = alloc::vec![0usize; num_classes];
    for &l in labels.data() {
        counts[l as usize] += 1;
    }
    counts
}

/// Generates one phantom from the `Phantom` stream of `seed`. Label draws
/// are repeated until every tissue class covers at least
/// [`MIN_CLASS_FRACTION`] of the volume.
pub fn gen_phantom(seed: u64, params: &PhantomParams) -> Result<Phantom> {
    params.validate()?;
    let mut rng = rng::stream(seed, Purpose::Phantom, 0);
    let n = params.dims.iter().product::<usize>() as f64;
    let mut labels = None;
    for _ in 0..MAX_ATTEMPTS {
        let candidate = draw_labels(params, &mut rng);
        let counts = class_counts(&candidate, params.num_classes);
        if counts[1..].iter().all(|&c| c as f64 >= MIN_CLASS_FRACTION * n) {
            labels = Some(candidate);
            break;
        }
    }
    let labels = labels.ok_or_else(|| {
        Error::InvalidConfig(format!("no phantom with every class above 1% after {MAX_ATTEMPTS} draws"))
    })?;

    let dimf = params.dims.map(|d| d as f64);
    let tau = core::f64::consts::TAU;
    let waves: Vec<([f64; 3], f64)> = (0..3)
        .map(|_| {
            (
                core::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                rng.random_range(0.0..tau),
            )
        })
        .collect();
    let noise = Normal::new(0.0, params.noise_sigma).map_err(|e| Error::InvalidConfig(format!("{e}")))?;
    let mut image = Volume::filled(params.dims, 0.0);
    for x in 0..params.dims[0] {
        for y in 0..params.dims[1] {
            for z in 0..params.dims[2] {
                let p = [x as f64 / dimf[0], y as f64 / dimf[1], z as f64 / dimf[2]];
                let bias: f64 = waves
                    .iter()
                    .map(|(k, ph)| cos(tau * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2]) + ph))
                    .sum::<f64>()
                    * params.bias_amplitude
                    / waves.len() as f64;
                let v = params.class_mean(*labels.get(x, y, z)) + bias + noise.sample(&mut rng);
                image.set(x, y, z, v);
            }
        }
    }
    Ok(Phantom { image, labels })
}
