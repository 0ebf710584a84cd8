use ndarray::{Array2, Array4, Axis, Ix2, Ix4};
use rand::Rng;

use super::{Mode, Module, Param};
use crate::{Error, Result, Scalar};

/// Output length of a convolution along one axis, or `None` when the
/// kernel does not fit.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.n * self.oh * self.ow
    }
}

/// Unfolds `x` (NCHW, standard layout) into a `[C*k*k, N*OH*OW]` matrix.
fn im2col<T: Scalar>(x: &[T], g: Geometry) -> Array2<T> {
    let (rows, ncols) = (g.rows(), g.cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let plane = g.oh * g.ow;
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.n {
                    let src = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let base = n * plane + oy * g.ow;
                        for ox in 0..g.ow {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[base + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((rows, ncols), cols).expect("im2col shape")
}

/// Adjoint of [`im2col`]: scatters columns back onto an NCHW image.
fn col2im<T: Scalar>(cols: &Array2<T>, g: Geometry) -> Array4<T> {
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let ncols = g.cols();
    let plane = g.oh * g.ow;
    let mut out = vec![T::zero(); g.n * g.c * g.h * g.w];
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let col_row = &src[row * ncols..(row + 1) * ncols];
                for n in 0..g.n {
                    let img = (n * g.c + c) * g.h * g.w;
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = img + iy as usize * g.w;
                        let base = n * plane + oy * g.ow;
                        for ox in 0..g.ow {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                let d = &mut out[dst_row + ix as usize];
                                *d = *d + col_row[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((g.n, g.c, g.h, g.w), out).expect("col2im shape")
}

/// `[N, C, H, W]` -> `[C, N*H*W]`.
fn channels_first<T: Scalar>(x: &Array4<T>) -> Array2<T> {
    let (n, c, h, w) = x.dim();
    x.view()
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, n * h * w))
        .expect("contiguous")
}

/// `[C, N*H*W]` -> `[N, C, H, W]`.
fn batch_first<T: Scalar>(m: Array2<T>, n: usize, h: usize, w: usize) -> Array4<T> {
    let c = m.nrows();
    m.into_shape_with_order((c, n, h, w))
        .expect("contiguous")
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
}

fn add_bias<T: Scalar>(y: &mut Array4<T>, bias: &ndarray::ArrayD<T>) {
    for (mut ch, &b) in y.axis_iter_mut(Axis(1)).zip(bias.iter()) {
        ch.mapv_inplace(|v| v + b);
    }
}

fn accumulate_bias_grad<T: Scalar>(grad: &mut ndarray::ArrayD<T>, dy: &Array4<T>) {
    for (g, ch) in grad.iter_mut().zip(dy.axis_iter(Axis(1))) {
        *g = *g + ch.sum();
    }
}

fn standard<T: Scalar>(x: &Array4<T>) -> std::borrow::Cow<'_, [T]> {
    match x.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(x.iter().copied().collect()),
    }
}

#[derive(Clone)]
struct ConvCache<T> {
    cols: Array2<T>,
    geometry: Geometry,
}

/// 2-D convolution over NCHW batches, implemented as im2col + GEMM.
#[derive(Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    cache: Vec<ConvCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = Param::uniform(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            fan_in,
            rng,
        );
        let bias = bias.then(|| Param::uniform(format!("{name}.bias"), &[out_channels], fan_in, rng));
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            cache: Vec::new(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            conv_output_size(h, self.kernel, self.stride, self.pad)?,
            conv_output_size(w, self.kernel, self.stride, self.pad)?,
        ))
    }

    fn weight_matrix(&self) -> Array2<T> {
        let rows = self.in_channels * self.kernel * self.kernel;
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_channels, rows))
            .expect("contiguous weight")
            .to_owned()
    }

    pub fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Result<Array4<T>> {
        let (n, c, h, w) = x.dim();
        if c != self.in_channels {
            return Err(Error::arg(format!(
                "{}: expected {} input channels, got {c}",
                self.weight.name, self.in_channels
            )));
        }
        let (oh, ow) = self.output_hw(h, w).ok_or_else(|| {
            Error::arg(format!("{}: input {h}x{w} smaller than kernel", self.weight.name))
        })?;
        let geometry = Geometry {
            n,
            c,
            h,
            w,
            k: self.kernel,
            stride: self.stride,
            pad: self.pad,
            oh,
            ow,
        };
        let cols = im2col(&standard(x), geometry);
        let y = self.weight_matrix().dot(&cols);
        let mut y = batch_first(y, n, oh, ow);
        if let Some(b) = &self.bias {
            add_bias(&mut y, &b.value);
        }
        if mode.record {
            self.cache.push(ConvCache { cols, geometry });
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let ConvCache { cols, geometry } = self.cache.pop().expect("conv backward without forward");
        let dy_mat = channels_first(dy);
        let dw = dy_mat.dot(&cols.t());
        let mut wgrad = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((self.out_channels, geometry.rows()))
            .expect("contiguous grad");
        wgrad.scaled_add(T::one(), &dw);
        if let Some(b) = &mut self.bias {
            accumulate_bias_grad(&mut b.grad, dy);
        }
        let dcols = self.weight_matrix().t().dot(&dy_mat);
        col2im(&dcols, geometry)
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

#[derive(Clone)]
struct DeconvCache<T> {
    x_mat: Array2<T>,
    geometry: Geometry,
}

/// Transposed convolution (the adjoint of [`Conv2d`] with the same geometry).
///
/// With `kernel = 4, stride = 2, pad = 1` it exactly doubles spatial size.
#[derive(Clone)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    cache: Vec<DeconvCache<T>>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = out_channels * kernel * kernel;
        let weight = Param::uniform(
            format!("{name}.weight"),
            &[in_channels, out_channels, kernel, kernel],
            fan_in,
            rng,
        );
        let bias = bias.then(|| Param::uniform(format!("{name}.bias"), &[out_channels], fan_in, rng));
        ConvTranspose2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            cache: Vec::new(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let out = |i: usize| ((i - 1) * self.stride + self.kernel).checked_sub(2 * self.pad);
        if h == 0 || w == 0 {
            return None;
        }
        Some((out(h)?, out(w)?))
    }

    fn weight_matrix(&self) -> ndarray::ArrayView2<'_, T> {
        let rows = self.out_channels * self.kernel * self.kernel;
        self.weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("4-d weight")
            .into_shape_with_order((self.in_channels, rows))
            .expect("contiguous weight")
            .into_dimensionality::<Ix2>()
            .expect("2-d")
    }

    pub fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Result<Array4<T>> {
        let (n, c, h, w) = x.dim();
        if c != self.in_channels {
            return Err(Error::arg(format!(
                "{}: expected {} input channels, got {c}",
                self.weight.name, self.in_channels
            )));
        }
        let (oh, ow) = self
            .output_hw(h, w)
            .ok_or_else(|| Error::arg(format!("{}: empty input", self.weight.name)))?;
        // Geometry of the equivalent forward convolution: image = our output.
        let geometry = Geometry {
            n,
            c: self.out_channels,
            h: oh,
            w: ow,
            k: self.kernel,
            stride: self.stride,
            pad: self.pad,
            oh: h,
            ow: w,
        };
        let x_mat = channels_first(x);
        let cols = self.weight_matrix().t().dot(&x_mat);
        let mut y = col2im(&cols, geometry);
        if let Some(b) = &self.bias {
            add_bias(&mut y, &b.value);
        }
        if mode.record {
            self.cache.push(DeconvCache { x_mat, geometry });
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let DeconvCache { x_mat, geometry } =
            self.cache.pop().expect("deconv backward without forward");
        let dcols = im2col(&standard(dy), geometry);
        let dw = x_mat.dot(&dcols.t());
        let rows = geometry.rows();
        let mut wgrad = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((self.in_channels, rows))
            .expect("contiguous grad");
        wgrad.scaled_add(T::one(), &dw);
        if let Some(b) = &mut self.bias {
            accumulate_bias_grad(&mut b.grad, dy);
        }
        let dx = self.weight_matrix().dot(&dcols);
        batch_first(dx, geometry.n, geometry.oh, geometry.ow)
    }
}

impl<T: Scalar> Module<T> for ConvTranspose2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}
