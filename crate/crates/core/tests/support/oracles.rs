//! Brute-force loop evaluations of conv3d, transposed_conv3d and the Sobel
//! layer, compared against the library on randomized configurations.

use aepnet_core::boundary::sobel3d;
use aepnet_core::data::{one_hot, Volume};
use aepnet_core::nn::{conv3d, transposed_conv3d, ConvSpec};
use aepnet_core::rng::{stream, Purpose};
use aepnet_core::{Graph, Tensor};
use rand::Rng;

pub const TOL: f64 = 1e-10;

fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn loop_conv(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec, out: [usize; 3]) -> Vec<f64> {
    let s = x.shape();
    let (ci, dims) = (s[0], [s[1], s[2], s[3]]);
    let k = spec.kernel;
    let at = |c: usize, p: [isize; 3]| -> f64 {
        if (0..3).any(|a| p[a] < 0 || p[a] >= dims[a] as isize) {
            return 0.0;
        }
        let [px, py, pz] = p.map(|v| v as usize);
        x.data()[((c * dims[0] + px) * dims[1] + py) * dims[2] + pz]
    };
    let mut y = Vec::new();
    for o in 0..spec.out_channels {
        for ox in 0..out[0] {
            for oy in 0..out[1] {
                for oz in 0..out[2] {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for kx in 0..k[0] {
                            for ky in 0..k[1] {
                                for kz in 0..k[2] {
                                    let p = [
                                        (ox * spec.stride + kx) as isize - spec.padding as isize,
                                        (oy * spec.stride + ky) as isize - spec.padding as isize,
                                        (oz * spec.stride + kz) as isize - spec.padding as isize,
                                    ];
                                    let wi = (((o * ci + c) * k[0] + kx) * k[1] + ky) * k[2] + kz;
                                    acc += w.data()[wi] * at(c, p);
                                }
                            }
                        }
                    }
                    y.push(acc);
                }
            }
        }
    }
    y
}

fn loop_transposed(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec, out: [usize; 3]) -> Vec<f64> {
    let s = x.shape();
    let (ci, dims) = (s[0], [s[1], s[2], s[3]]);
    let (co, k) = (spec.out_channels, spec.kernel);
    let mut y = vec![0.0; co * out[0] * out[1] * out[2]];
    for o in 0..co {
        let base = o * out[0] * out[1] * out[2];
        y[base..base + out[0] * out[1] * out[2]].iter_mut().for_each(|v| *v = b.data()[o]);
        for c in 0..ci {
            for ix in 0..dims[0] {
                for iy in 0..dims[1] {
                    for iz in 0..dims[2] {
                        let v = x.data()[((c * dims[0] + ix) * dims[1] + iy) * dims[2] + iz];
                        for kx in 0..k[0] {
                            for ky in 0..k[1] {
                                for kz in 0..k[2] {
                                    let (px, py, pz) =
                                        (ix * spec.stride + kx, iy * spec.stride + ky, iz * spec.stride + kz);
                                    let wi = (((c * co + o) * k[0] + kx) * k[1] + ky) * k[2] + kz;
                                    y[base + (px * out[1] + py) * out[2] + pz] += w.data()[wi] * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest |library - loop| over `configs` random conv3d configurations.
pub fn conv3d_worst(configs: u64) -> f64 {
    let mut worst = 0.0f64;
    for case in 0..configs {
        let mut rng = stream(11, Purpose::Sample, case);
        let spec = ConvSpec {
            in_channels: rng.random_range(1..4),
            out_channels: rng.random_range(1..4),
            kernel: [rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4)],
            stride: rng.random_range(1..3),
            padding: rng.random_range(0..3),
        };
        let dims: [usize; 3] = std::array::from_fn(|a| rng.random_range(spec.kernel[a].max(1)..8));
        let out = spec.output_dims(dims).unwrap();
        let x = random_tensor(&mut rng, &[spec.in_channels, dims[0], dims[1], dims[2]]);
        let w = random_tensor(&mut rng, &spec.weight_shape());
        let b = random_tensor(&mut rng, &[spec.out_channels]);
        let g = Graph::new();
        let y = conv3d(g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()), &spec).unwrap();
        assert_eq!(y.shape(), vec![spec.out_channels, out[0], out[1], out[2]], "{spec:?} {dims:?}");
        worst = worst.max(max_abs_diff(y.value().data(), &loop_conv(&x, &w, &b, &spec, out)));
    }
    worst
}

pub fn transposed_worst(configs: u64) -> f64 {
    let mut worst = 0.0f64;
    for case in 0..configs {
        let mut rng = stream(12, Purpose::Sample, case);
        let spec = ConvSpec {
            in_channels: rng.random_range(1..4),
            out_channels: rng.random_range(1..4),
            kernel: [rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4)],
            stride: rng.random_range(1..4),
            padding: 0,
        };
        let dims: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..6));
        let out = spec.transposed_output_dims(dims);
        let x = random_tensor(&mut rng, &[spec.in_channels, dims[0], dims[1], dims[2]]);
        let w = random_tensor(&mut rng, &spec.transposed_weight_shape());
        let b = random_tensor(&mut rng, &[spec.out_channels]);
        let g = Graph::new();
        let y = transposed_conv3d(g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()), &spec).unwrap();
        assert_eq!(y.shape(), vec![spec.out_channels, out[0], out[1], out[2]], "{spec:?} {dims:?}");
        worst = worst.max(max_abs_diff(y.value().data(), &loop_transposed(&x, &w, &b, &spec, out)));
    }
    worst
}

/// Full 3×3×3 Sobel kernels written out per axis: derivative taps along the
/// axis, smoothing taps across it.
fn sobel_kernels() -> [[[[f64; 3]; 3]; 3]; 3] {
    let d = [-1.0, 0.0, 1.0];
    let s = [1.0, 2.0, 1.0];
    let mut k = [[[[0.0; 3]; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for l in 0..3 {
                k[0][i][j][l] = d[i] * s[j] * s[l];
                k[1][i][j][l] = s[i] * d[j] * s[l];
                k[2][i][j][l] = s[i] * s[j] * d[l];
            }
        }
    }
    k
}

fn loop_sobel(labels: &Volume<u8>, classes: usize) -> Vec<f64> {
    let dims = labels.dims();
    let k = sobel_kernels();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut out = vec![0.0f64; labels.len()];
    for c in 0..classes {
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                for z in 0..dims[2] {
                    let mut g = [0.0; 3];
                    for i in 0..3 {
                        for j in 0..3 {
                            for l in 0..3 {
                                let px = clamp(x as isize + i as isize - 1, dims[0]);
                                let py = clamp(y as isize + j as isize - 1, dims[1]);
                                let pz = clamp(z as isize + l as isize - 1, dims[2]);
                                let v = f64::from(*labels.get(px, py, pz) as usize == c);
                                for a in 0..3 {
                                    g[a] += k[a][i][j][l] * v;
                                }
                            }
                        }
                    }
                    let m = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                    let idx = labels.index(x, y, z);
                    out[idx] = out[idx].max(m);
                }
            }
        }
    }
    out
}

pub fn sobel_worst(configs: u64) -> f64 {
    let mut worst = 0.0f64;
    for case in 0..configs {
        let mut rng = stream(13, Purpose::Sample, case);
        let classes = rng.random_range(2..5usize);
        let dims: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..9));
        let n = dims.iter().product();
        let labels = Volume::new(dims, (0..n).map(|_| rng.random_range(0..classes) as u8).collect()).unwrap();
        let s = sobel3d(&one_hot(&labels, classes).unwrap()).unwrap();
        worst = worst.max(max_abs_diff(s.data(), &loop_sobel(&labels, classes)));
    }
    worst
}
