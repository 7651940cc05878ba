//! 2-D convolution over `[N, C, H, W]` tensors, lowered to im2col + GEMM.
//!
//! Every reduction runs in a fixed order, so repeated calls on identical
//! inputs are bit-identical.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        ConvGeometry {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvGeometry {
            stride,
            padding,
            dilation,
        }
    }

    /// Output extent along one axis, or `None` if the kernel does not fit.
    pub fn output_len(&self, input: usize, kernel: usize) -> Option<usize> {
        if self.stride == 0 || self.dilation == 0 || kernel == 0 {
            return None;
        }
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

/// Weights `[out_ch, in_ch, kh, kw]`, bias `[out_ch]` and the sampling geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weights: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, padding: usize, dilation: usize) -> Result<Self> {
        let p = ConvParams {
            weights,
            bias,
            stride,
            padding,
            dilation,
        };
        check_weights("conv2d", &p.weights, &p.bias)?;
        Ok(p)
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry::new(self.stride, self.padding, self.dilation)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_forward(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    conv2d(input, &p.weights, &p.bias, p.geometry())
}

pub fn conv2d_backward(input: &Tensor, p: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads> {
    conv2d_grad(input, &p.weights, p.geometry(), grad_out, true)
}

fn check_weights(op: &'static str, weights: &Tensor, bias: &Tensor) -> Result<[usize; 4]> {
    let w = weights.dims4(op)?;
    if bias.len() != w[0] {
        return Err(Error::shape(op, "bias length", w[0], bias.len()));
    }
    Ok(w)
}

/// Resolved dimensions of one convolution call.
#[derive(Clone, Copy, Debug)]
struct Plan {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    g: ConvGeometry,
}

impl Plan {
    fn new(op: &'static str, input: &Tensor, weights: &Tensor, g: ConvGeometry) -> Result<Plan> {
        let [n, c, h, w] = input.dims4(op)?;
        let [k, wc, kh, kw] = weights.dims4(op)?;
        if wc != c {
            return Err(Error::shape(op, "input channels", wc, c));
        }
        if g.stride == 0 || g.dilation == 0 {
            return Err(Error::invalid(op, "stride and dilation must be positive"));
        }
        let oh = g
            .output_len(h, kh)
            .ok_or_else(|| Error::invalid(op, format!("kernel height {kh} does not fit input height {h}")))?;
        let ow = g
            .output_len(w, kw)
            .ok_or_else(|| Error::invalid(op, format!("kernel width {kw} does not fit input width {w}")))?;
        Ok(Plan {
            n,
            c,
            h,
            w,
            k,
            kh,
            kw,
            oh,
            ow,
            g,
        })
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// 1×1, stride 1, unpadded: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.g.stride == 1 && self.g.padding == 0
    }

    fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        self.im2col_rows(image, 0..self.oh, cols);
    }

    /// Column matrix restricted to output rows `rows`; each column-matrix
    /// row then holds `rows.len() · ow` entries.
    fn im2col_rows(&self, image: &[f64], rows: std::ops::Range<usize>, cols: &mut [f64]) {
        let (s, p, d) = (
            self.g.stride as isize,
            self.g.padding as isize,
            self.g.dilation as isize,
        );
        let npix = rows.len() * self.ow;
        for c in 0..self.c {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * npix..(row + 1) * npix];
                    for (r, oy) in rows.clone().enumerate() {
                        let y = oy as isize * s - p + ki as isize * d;
                        let dst_row = &mut dst[r * self.ow..(r + 1) * self.ow];
                        if y < 0 || y >= self.h as isize {
                            dst_row.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[y as usize * self.w..(y as usize + 1) * self.w];
                        for (ox, v) in dst_row.iter_mut().enumerate() {
                            let x = ox as isize * s - p + kj as isize * d;
                            *v = if x < 0 || x >= self.w as isize {
                                0.0
                            } else {
                                src[x as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let (s, p, d) = (
            self.g.stride as isize,
            self.g.padding as isize,
            self.g.dilation as isize,
        );
        let npix = self.out_pixels();
        for c in 0..self.c {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * npix..(row + 1) * npix];
                    for oy in 0..self.oh {
                        let y = oy as isize * s - p + ki as isize * d;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[y as usize * self.w..(y as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let x = ox as isize * s - p + kj as isize * d;
                            if x >= 0 && x < self.w as isize {
                                dst[x as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c[m×n] = a[m×k] · b[k×n] + beta · c`, all row-major unless strides say otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    gemm_strided(m, k, n, a, (rsa, csa), b, (rsb, csb), beta, c, n);
}

/// [`gemm`] into a destination whose rows are `ldc` apart.
#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    debug_assert!(m == 0 || c.len() >= (m - 1) * ldc + n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for row in 0..m {
            c[row * ldc..row * ldc + n].iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    // SAFETY: the caller-provided strides describe matrices that lie within
    // `a`, `b` and `c`, which the debug assertions above and the slice
    // lengths established by the callers guarantee.
    unsafe {
        ::gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            1,
            ldc as isize,
            beta != 0.0,
            a.as_ptr(),
            csa as isize,
            rsa as isize,
            b.as_ptr(),
            csb as isize,
            rsb as isize,
            beta,
            1.0,
            false,
            false,
            false,
            ::gemm::Parallelism::None,
        );
    }
}

/// Target size, in elements, of one band of the forward column matrix, and
/// the fewest output pixels a band may hold (narrower GEMMs run slowly).
const COLUMN_BLOCK: usize = 1 << 17;
const MIN_BAND_PIXELS: usize = 2048;

pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor, g: ConvGeometry) -> Result<Tensor> {
    check_weights("conv2d_forward", weights, bias)?;
    let pl = Plan::new("conv2d_forward", input, weights, g)?;
    let (ckk, npix) = (pl.patch_len(), pl.out_pixels());
    let mut out = vec![0.0; pl.n * pl.k * npix];
    // the column matrix is built a band of output rows at a time so it
    // stays cache-sized on large maps
    let band = (COLUMN_BLOCK / (ckk * pl.ow).max(1))
        .max(MIN_BAND_PIXELS.div_ceil(pl.ow.max(1)))
        .clamp(1, pl.oh.max(1));
    let mut cols = if pl.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; ckk * band * pl.ow]
    };
    let in_stride = pl.c * pl.h * pl.w;
    for b in 0..pl.n {
        let image = &input.data()[b * in_stride..(b + 1) * in_stride];
        let dst = &mut out[b * pl.k * npix..(b + 1) * pl.k * npix];
        for (k, row) in dst.chunks_exact_mut(npix).enumerate() {
            row.iter_mut().for_each(|v| *v = bias.data()[k]);
        }
        if pl.is_pointwise() {
            gemm(pl.k, ckk, npix, weights.data(), (ckk, 1), image, (npix, 1), 1.0, dst);
            continue;
        }
        for oy in (0..pl.oh).step_by(band) {
            let rows = oy..(oy + band).min(pl.oh);
            let width = rows.len() * pl.ow;
            let cols = &mut cols[..ckk * width];
            pl.im2col_rows(image, rows, cols);
            let start = oy * pl.ow;
            gemm_strided(
                pl.k,
                ckk,
                width,
                weights.data(),
                (ckk, 1),
                cols,
                (width, 1),
                1.0,
                &mut dst[start..],
                npix,
            );
        }
    }
    Tensor::new(vec![pl.n, pl.k, pl.oh, pl.ow], out)
}

/// Gradients of [`conv2d`]. The input gradient is skipped when
/// `need_input` is false (e.g. for the first layer of a network).
pub fn conv2d_grad(
    input: &Tensor,
    weights: &Tensor,
    g: ConvGeometry,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let pl = Plan::new("conv2d_backward", input, weights, g)?;
    let expected = [pl.n, pl.k, pl.oh, pl.ow];
    let got = grad_out.dims4("conv2d_backward")?;
    for (axis, (&e, &o)) in ["batch", "output channels", "output height", "output width"]
        .iter()
        .zip(expected.iter().zip(&got))
    {
        if e != o {
            return Err(Error::shape("conv2d_backward", format!("grad_out {axis}"), e, o));
        }
    }
    let (ckk, npix) = (pl.patch_len(), pl.out_pixels());
    let mut gw = vec![0.0; pl.k * ckk];
    let mut gb = vec![0.0; pl.k];
    let mut gin = if need_input { vec![0.0; input.len()] } else { Vec::new() };
    let mut cols = if pl.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; ckk * npix]
    };
    let mut gcols = if need_input && !pl.is_pointwise() {
        vec![0.0; ckk * npix]
    } else {
        Vec::new()
    };
    let in_stride = pl.c * pl.h * pl.w;
    for b in 0..pl.n {
        let image = &input.data()[b * in_stride..(b + 1) * in_stride];
        let go = &grad_out.data()[b * pl.k * npix..(b + 1) * pl.k * npix];
        for (k, row) in go.chunks_exact(npix).enumerate() {
            gb[k] += row.iter().sum::<f64>();
        }
        let colm: &[f64] = if pl.is_pointwise() {
            image
        } else {
            pl.im2col(image, &mut cols);
            &cols
        };
        // dW += dY · colsᵀ
        gemm(pl.k, npix, ckk, go, (npix, 1), colm, (1, npix), 1.0, &mut gw);
        if need_input {
            let gimg = &mut gin[b * in_stride..(b + 1) * in_stride];
            if pl.is_pointwise() {
                // dX = Wᵀ · dY directly into the image plane
                gemm(ckk, pl.k, npix, weights.data(), (1, ckk), go, (npix, 1), 0.0, gimg);
            } else {
                gemm(
                    ckk,
                    pl.k,
                    npix,
                    weights.data(),
                    (1, ckk),
                    go,
                    (npix, 1),
                    0.0,
                    &mut gcols,
                );
                pl.col2im(&gcols, gimg);
            }
        }
    }
    Ok(ConvGrads {
        input: if need_input {
            Some(Tensor::new(input.shape().to_vec(), gin)?)
        } else {
            None
        },
        weights: Tensor::new(weights.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![pl.k], gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: Tensor, b: Vec<f64>, stride: usize, padding: usize) -> ConvParams {
        ConvParams::new(w, Tensor::vector(b), stride, padding, 1).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let p = params(Tensor::filled(&[1, 1, 1, 1], 1.0), vec![0.0], 1, 0);
        assert_eq!(conv2d_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| (i + 1) as f64);
        let p = params(Tensor::filled(&[1, 1, 3, 3], 1.0), vec![0.0], 1, 0);
        let y = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[45.0]);
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let p = params(Tensor::zeros(&[1, 3, 3, 3]), vec![0.0], 1, 1);
        let err = conv2d_forward(&x, &p).unwrap_err().to_string();
        assert!(err.contains("input channels"), "{err}");
    }

    #[test]
    fn kernel_larger_than_input_is_rejected() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let p = params(Tensor::zeros(&[1, 1, 3, 3]), vec![0.0], 1, 0);
        assert!(conv2d_forward(&x, &p).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let x = Tensor::from_fn(&[1, 2, 5, 5], |i| (i as f64).sin());
        let p = params(
            Tensor::from_fn(&[3, 2, 3, 3], |i| (i as f64).cos()),
            vec![0.1, 0.2, 0.3],
            2,
            1,
        );
        let y = conv2d_forward(&x, &p).unwrap();
        let g = conv2d_backward(&x, &p, &Tensor::zeros(y.shape())).unwrap();
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_case_grad_weight_is_product() {
        let x = Tensor::scalar(3.0).reshape(vec![1, 1, 1, 1]).unwrap();
        let p = params(Tensor::filled(&[1, 1, 1, 1], 2.0), vec![0.5], 1, 0);
        let go = Tensor::filled(&[1, 1, 1, 1], 0.25);
        let g = conv2d_backward(&x, &p, &go).unwrap();
        assert_eq!(g.weights.data(), &[0.75]);
        assert_eq!(g.bias.data(), &[0.25]);
        assert_eq!(g.input.unwrap().data(), &[0.5]);
    }

    #[test]
    fn grad_out_shape_checked() {
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        let p = params(Tensor::zeros(&[1, 1, 3, 3]), vec![0.0], 1, 1);
        assert!(conv2d_backward(&x, &p, &Tensor::zeros(&[1, 1, 3, 4])).is_err());
    }

    #[test]
    fn odd_kernel_same_padding_preserves_size() {
        for k in [1usize, 3, 5] {
            let g = ConvGeometry::new(1, (k - 1) / 2, 1);
            assert_eq!(g.output_len(17, k), Some(17));
        }
    }
}
