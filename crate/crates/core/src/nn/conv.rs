use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Op, Var};
use crate::{Error, Result, Tensor};

/// Geometry of a 3D convolution with cubic-or-not kernel and isotropic
/// stride and zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn cubic(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: [kernel; 3],
            stride,
            padding,
        }
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Weight shape `[out, in, kd, kh, kw]`.
    pub fn weight_shape(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels,
            self.kernel[0],
            self.kernel[1],
            self.kernel[2],
        ]
    }

    /// Weight shape `[in, out, kd, kh, kw]` of the transposed convolution.
    pub fn transposed_weight_shape(&self) -> Vec<usize> {
        vec![
            self.in_channels,
            self.out_channels,
            self.kernel[0],
            self.kernel[1],
            self.kernel[2],
        ]
    }

    /// `floor((n + 2·padding − kernel) / stride) + 1`, or `None` when that
    /// would be below one.
    pub fn output_extent(&self, axis: usize, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        let k = self.kernel[axis];
        if self.stride == 0 || padded < k {
            return None;
        }
        Some((padded - k) / self.stride + 1)
    }

    pub fn output_dims(&self, dims: [usize; 3]) -> Option<[usize; 3]> {
        Some([
            self.output_extent(0, dims[0])?,
            self.output_extent(1, dims[1])?,
            self.output_extent(2, dims[2])?,
        ])
    }

    /// `stride·(n − 1) + kernel` per axis.
    pub fn transposed_output_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        core::array::from_fn(|a| self.stride * (dims[a] - 1) + self.kernel[a])
    }
}

/// `c = a·b + beta·c` for row-major matrices, with optional transposes.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every access made through these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Valid output positions `[lo, hi)` along one axis for kernel offset `k`:
/// those with `0 <= o·stride + k − pad < n`.
fn valid_range(out: usize, n: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if n + pad > k {
        ((n + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Geometry shared by `im2col` and `col2im`.
#[derive(Clone, Copy)]
struct Patches {
    channels: usize,
    dims: [usize; 3],
    out: [usize; 3],
    kernel: [usize; 3],
    stride: usize,
    pad: usize,
}

impl Patches {
    fn rows(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    fn cols(&self) -> usize {
        self.out.iter().product()
    }

    /// Visits every (column row, output row, input row) triple. `f` receives
    /// the column slice offset, the input row offset, and the kernel offset
    /// along the fastest axis.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize, (usize, usize))) {
        let [d, h, w] = self.dims;
        let [od, oh, ow] = self.out;
        let [kd, kh, kw] = self.kernel;
        let ncols = self.cols();
        let mut row = 0;
        for c in 0..self.channels {
            for a in 0..kd {
                let (z0, z1) = valid_range(od, d, a, self.stride, self.pad);
                for b in 0..kh {
                    let (y0, y1) = valid_range(oh, h, b, self.stride, self.pad);
                    for e in 0..kw {
                        let xr = valid_range(ow, w, e, self.stride, self.pad);
                        if xr.0 >= xr.1 {
                            row += 1;
                            continue;
                        }
                        for z in z0..z1 {
                            let iz = z * self.stride + a - self.pad;
                            for y in y0..y1 {
                                let iy = y * self.stride + b - self.pad;
                                let col_off = row * ncols + (z * oh + y) * ow;
                                let src_off = ((c * d + iz) * h + iy) * w;
                                f(col_off, src_off, e, xr);
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let mut col = vec![0.0; self.rows() * self.cols()];
        let (s, p) = (self.stride, self.pad);
        self.for_each_row(|col_off, src_off, e, (x0, x1)| {
            if s == 1 {
                let src = &x[src_off + x0 + e - p..src_off + x1 + e - p];
                col[col_off + x0..col_off + x1].copy_from_slice(src);
            } else {
                for o in x0..x1 {
                    col[col_off + o] = x[src_off + o * s + e - p];
                }
            }
        });
        col
    }

    fn col2im(&self, col: &[f64], x: &mut [f64]) {
        let (s, p) = (self.stride, self.pad);
        self.for_each_row(|col_off, src_off, e, (x0, x1)| {
            if s == 1 {
                let dst = &mut x[src_off + x0 + e - p..src_off + x1 + e - p];
                for (d, v) in dst.iter_mut().zip(&col[col_off + x0..col_off + x1]) {
                    *d += v;
                }
            } else {
                for o in x0..x1 {
                    x[src_off + o * s + e - p] += col[col_off + o];
                }
            }
        });
    }
}

fn spatial(t: &Tensor) -> [usize; 3] {
    let s = t.shape();
    [s[1], s[2], s[3]]
}

fn check_rank4(t: &Tensor, op: &'static str) -> Result<()> {
    if t.rank() != 4 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![0; 4],
            rhs: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], per_channel: usize) {
    for (chunk, &b) in out.chunks_mut(per_channel).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn channel_sums(g: &Tensor, channels: usize) -> Tensor {
    let n = g.len() / channels;
    Tensor::from_vec(g.data().chunks(n).map(|c| c.iter().sum()).collect())
}

struct Conv3d {
    spec: ConvSpec,
    patches: Option<Patches>,
}

impl Op for Conv3d {
    fn name(&self) -> &'static str {
        "conv3d"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
        let spec = self.spec;
        check_rank4(x, "conv3d")?;
        if x.shape()[0] != spec.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv3d",
                lhs: vec![spec.in_channels],
                rhs: x.shape().to_vec(),
            });
        }
        if w.shape() != spec.weight_shape().as_slice() || b.shape() != [spec.out_channels] {
            return Err(Error::ShapeMismatch {
                op: "conv3d",
                lhs: spec.weight_shape(),
                rhs: w.shape().to_vec(),
            });
        }
        let dims = spatial(x);
        let out = spec
            .output_dims(dims)
            .ok_or_else(|| Error::InvalidArgument(format!("conv3d output extent < 1 for input {dims:?} and {spec:?}")))?;
        let patches = Patches {
            channels: spec.in_channels,
            dims,
            out,
            kernel: spec.kernel,
            stride: spec.stride,
            pad: spec.padding,
        };
        let col = patches.im2col(x.data());
        let n = patches.cols();
        let mut y = vec![0.0; spec.out_channels * n];
        gemm(spec.out_channels, patches.rows(), n, w.data(), false, &col, false, 0.0, &mut y);
        add_channel_bias(&mut y, b.data(), n);
        self.patches = Some(patches);
        Tensor::new(vec![spec.out_channels, out[0], out[1], out[2]], y)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, wants: &[bool]) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let p = self.patches.expect("forward ran");
        let (co, k, n) = (self.spec.out_channels, p.rows(), p.cols());
        let gx = wants[0].then(|| {
            let mut gcol = vec![0.0; k * n];
            gemm(k, co, n, w.data(), true, grad.data(), false, 0.0, &mut gcol);
            let mut gx = Tensor::zeros(x.shape());
            p.col2im(&gcol, gx.data_mut());
            gx
        });
        let gw = wants[1].then(|| {
            let col = p.im2col(x.data());
            let mut gw = vec![0.0; co * k];
            gemm(co, n, k, grad.data(), false, &col, true, 0.0, &mut gw);
            Tensor::new(w.shape().to_vec(), gw).expect("weight shape")
        });
        let gb = wants[2].then(|| channel_sums(grad, co));
        vec![gx, gw, gb]
    }
}

struct TransposedConv3d {
    spec: ConvSpec,
    patches: Option<Patches>,
}

impl Op for TransposedConv3d {
    fn name(&self) -> &'static str {
        "transposed_conv3d"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
        let spec = self.spec;
        check_rank4(x, "transposed_conv3d")?;
        if spec.padding != 0 || spec.stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "transposed_conv3d supports zero padding and positive stride only, got {spec:?}"
            )));
        }
        if x.shape()[0] != spec.in_channels
            || w.shape() != spec.transposed_weight_shape().as_slice()
            || b.shape() != [spec.out_channels]
        {
            return Err(Error::ShapeMismatch {
                op: "transposed_conv3d",
                lhs: spec.transposed_weight_shape(),
                rhs: x.shape().to_vec(),
            });
        }
        let in_dims = spatial(x);
        let out = spec.transposed_output_dims(in_dims);
        // The transposed convolution is the adjoint of a convolution that maps
        // the output volume back onto the input grid.
        let patches = Patches {
            channels: spec.out_channels,
            dims: out,
            out: in_dims,
            kernel: spec.kernel,
            stride: spec.stride,
            pad: 0,
        };
        let (ci, rows, n_in) = (spec.in_channels, patches.rows(), patches.cols());
        let mut cols = vec![0.0; rows * n_in];
        gemm(rows, ci, n_in, w.data(), true, x.data(), false, 0.0, &mut cols);
        let mut y = Tensor::zeros(&[spec.out_channels, out[0], out[1], out[2]]);
        patches.col2im(&cols, y.data_mut());
        let per = out.iter().product();
        add_channel_bias(y.data_mut(), b.data(), per);
        self.patches = Some(patches);
        Ok(y)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, wants: &[bool]) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let p = self.patches.expect("forward ran");
        let (ci, rows, n_in) = (self.spec.in_channels, p.rows(), p.cols());
        let gcol = (wants[0] || wants[1]).then(|| p.im2col(grad.data()));
        let gx = wants[0].then(|| {
            let mut gx = vec![0.0; ci * n_in];
            gemm(ci, rows, n_in, w.data(), false, gcol.as_ref().unwrap(), false, 0.0, &mut gx);
            Tensor::new(x.shape().to_vec(), gx).expect("input shape")
        });
        let gw = wants[1].then(|| {
            let mut gw = vec![0.0; ci * rows];
            gemm(ci, n_in, rows, x.data(), false, gcol.as_ref().unwrap(), true, 0.0, &mut gw);
            Tensor::new(w.shape().to_vec(), gw).expect("weight shape")
        });
        let gb = wants[2].then(|| channel_sums(grad, self.spec.out_channels));
        vec![gx, gw, gb]
    }
}

/// Cross-correlation of `x: [C_in, D, H, W]` with `weight: [C_out, C_in, kd, kh, kw]`.
pub fn conv3d<'g>(x: Var<'g>, weight: Var<'g>, bias: Var<'g>, spec: &ConvSpec) -> Result<Var<'g>> {
    let op = Conv3d {
        spec: *spec,
        patches: None,
    };
    x.graph().apply(op, &[x, weight, bias])
}

/// Transposed convolution with `weight: [C_in, C_out, kd, kh, kw]`; each
/// spatial extent becomes `stride·(n − 1) + kernel`.
pub fn transposed_conv3d<'g>(x: Var<'g>, weight: Var<'g>, bias: Var<'g>, spec: &ConvSpec) -> Result<Var<'g>> {
    let op = TransposedConv3d {
        spec: *spec,
        patches: None,
    };
    x.graph().apply(op, &[x, weight, bias])
}
