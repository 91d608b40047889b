//! im2col convolution kernels.
//!
//! Convolution weights are `O×C×K×K`; transposed-convolution weights are
//! `I×O×K×K` (input channels first), so a deconvolution is exactly the adjoint
//! of the convolution sharing its weight tensor.

use crate::error::{Error, Result};

use super::Tensor;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

pub(crate) fn conv_geometry(
    op: &'static str,
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Geometry> {
    if stride == 0 {
        return Err(Error::dim(op, "stride must be positive"));
    }
    if height + 2 * padding < kernel || width + 2 * padding < kernel {
        return Err(Error::dim(
            op,
            format!("padded input {}x{} smaller than kernel {kernel}", height + 2 * padding, width + 2 * padding),
        ));
    }
    Ok(Geometry {
        channels,
        height,
        width,
        kernel,
        stride,
        padding,
        out_h: (height + 2 * padding - kernel) / stride + 1,
        out_w: (width + 2 * padding - kernel) / stride + 1,
    })
}

/// `c = a·b + beta·c` for row-major `c` (`m×n`); `a` is `m×k` and `b` is
/// `k×n` under the given (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    // SAFETY: the asserted slice extents cover every index touched by the
    // given shapes and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(g: &Geometry, input: &[f64], cols: &mut [f64]) {
    let ncols = g.col_cols();
    let (k, s, p) = (g.kernel, g.stride as isize, g.padding as isize);
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let iy = oy as isize * s - p + ky as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s - p + kx as isize;
                        *d = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back onto the image.
fn col2im(g: &Geometry, cols: &[f64], out: &mut [f64]) {
    let ncols = g.col_cols();
    let (k, s, p) = (g.kernel, g.stride as isize, g.padding as isize);
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let iy = oy as isize * s - p + ky as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = ox as isize * s - p + kx as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_weight(op: &'static str, weight: &Tensor, in_channels: usize, weight_in_axis: usize) -> Result<(usize, usize)> {
    let (a, b, kh, kw) = weight.nchw().map_err(|_| {
        Error::dim(op, format!("weight must be 4-D, got {:?}", weight.dims()))
    })?;
    if kh != kw {
        return Err(Error::dim(op, format!("kernel must be square, got {kh}x{kw}")));
    }
    let w_in = if weight_in_axis == 0 { a } else { b };
    if w_in != in_channels {
        return Err(Error::dim(
            op,
            format!("input has {in_channels} channels (axis 1) but weight expects {w_in} (weight axis {weight_in_axis})"),
        ));
    }
    Ok((a, b))
}

pub(crate) fn conv2d_forward(input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw()?;
    let (out_c, _) = check_weight("conv2d", weight, c, 1)?;
    let k = weight.dims()[2];
    let g = conv_geometry("conv2d", c, h, w, k, stride, padding)?;
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * ncols];
    let mut out = vec![0.0; n * out_c * ncols];
    for i in 0..n {
        im2col(&g, &input.data()[i * c * h * w..(i + 1) * c * h * w], &mut cols);
        gemm(
            out_c,
            rows,
            ncols,
            weight.data(),
            (rows, 1),
            &cols,
            (ncols, 1),
            0.0,
            &mut out[i * out_c * ncols..(i + 1) * out_c * ncols],
        );
    }
    Tensor::new(vec![n, out_c, g.out_h, g.out_w], out)
}

pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
    need_input: bool,
    need_weight: bool,
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let (n, c, h, w) = input.nchw()?;
    let out_c = weight.dims()[0];
    let k = weight.dims()[2];
    let g = conv_geometry("conv2d", c, h, w, k, stride, padding)?;
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * ncols];
    let mut dx = need_input.then(|| vec![0.0; input.len()]);
    let mut dw = need_weight.then(|| vec![0.0; weight.len()]);
    for i in 0..n {
        let dy = &grad_out.data()[i * out_c * ncols..(i + 1) * out_c * ncols];
        if let Some(dw) = dw.as_mut() {
            im2col(&g, &input.data()[i * c * h * w..(i + 1) * c * h * w], &mut cols);
            // dW (O×rows) += dY (O×ncols) · colsᵀ (ncols×rows)
            gemm(out_c, ncols, rows, dy, (ncols, 1), &cols, (1, ncols), 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            // dcols (rows×ncols) = Wᵀ (rows×O) · dY (O×ncols)
            gemm(rows, out_c, ncols, weight.data(), (1, rows), dy, (ncols, 1), 0.0, &mut cols);
            col2im(&g, &cols, &mut dx[i * c * h * w..(i + 1) * c * h * w]);
        }
    }
    Ok((
        dx.map(|d| Tensor::new(input.dims().to_vec(), d)).transpose()?,
        dw.map(|d| Tensor::new(weight.dims().to_vec(), d)).transpose()?,
    ))
}

/// Output extent of a transposed convolution: `(h − 1)·s − 2p + k`.
pub(crate) fn deconv_out_size(op: &'static str, h: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let full = (h - 1) * stride + kernel;
    if stride == 0 || full <= 2 * padding {
        return Err(Error::dim(
            op,
            format!("input extent {h} with K{kernel} S{stride} P{padding} yields an empty output"),
        ));
    }
    Ok(full - 2 * padding)
}

pub(crate) fn deconv2d_forward(input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw()?;
    let (_, out_c) = check_weight("deconv2d", weight, c, 0)?;
    let k = weight.dims()[2];
    let oh = deconv_out_size("deconv2d", h, k, stride, padding)?;
    let ow = deconv_out_size("deconv2d", w, k, stride, padding)?;
    // Geometry of the adjoint convolution mapping the output back onto the input grid.
    let g = conv_geometry("deconv2d", out_c, oh, ow, k, stride, padding)?;
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * ncols];
    let mut out = vec![0.0; n * out_c * oh * ow];
    for i in 0..n {
        let x = &input.data()[i * c * ncols..(i + 1) * c * ncols];
        // cols (rows×hw) = Wᵀ (rows×I) · X (I×hw)
        gemm(rows, c, ncols, weight.data(), (1, rows), x, (ncols, 1), 0.0, &mut cols);
        col2im(&g, &cols, &mut out[i * out_c * oh * ow..(i + 1) * out_c * oh * ow]);
    }
    Tensor::new(vec![n, out_c, oh, ow], out)
}

pub(crate) fn deconv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
    need_input: bool,
    need_weight: bool,
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let (n, c, _, _) = input.nchw()?;
    let (_, out_c, oh, ow) = grad_out.nchw()?;
    let k = weight.dims()[2];
    let g = conv_geometry("deconv2d", out_c, oh, ow, k, stride, padding)?;
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * ncols];
    let mut dx = need_input.then(|| vec![0.0; input.len()]);
    let mut dw = need_weight.then(|| vec![0.0; weight.len()]);
    for i in 0..n {
        im2col(&g, &grad_out.data()[i * out_c * oh * ow..(i + 1) * out_c * oh * ow], &mut cols);
        if let Some(dx) = dx.as_mut() {
            // dX (I×hw) = W (I×rows) · cols (rows×hw)
            gemm(c, rows, ncols, weight.data(), (rows, 1), &cols, (ncols, 1), 0.0, &mut dx[i * c * ncols..(i + 1) * c * ncols]);
        }
        if let Some(dw) = dw.as_mut() {
            let x = &input.data()[i * c * ncols..(i + 1) * c * ncols];
            // dW (I×rows) += X (I×hw) · colsᵀ (hw×rows)
            gemm(c, ncols, rows, x, (ncols, 1), &cols, (1, ncols), 1.0, dw);
        }
    }
    Ok((
        dx.map(|d| Tensor::new(input.dims().to_vec(), d)).transpose()?,
        dw.map(|d| Tensor::new(weight.dims().to_vec(), d)).transpose()?,
    ))
}
