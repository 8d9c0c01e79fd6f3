//! 2-D convolution via im2col + gemm.

use crate::error::{contract, Result};
use crate::tensor::{Real, Tensor};

/// Stride, dilation and zero padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub const UNIT: Self = Self { stride: 1, dilation: 1, padding: 0 };

    pub fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        Self { stride, dilation, padding }
    }

    /// Same-size geometry for an odd kernel at the given dilation.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self { stride: 1, dilation, padding: dilation * (kernel - 1) / 2 }
    }

    pub fn out_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

struct Plan {
    n: usize,
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    geom: ConvGeom,
}

impl Plan {
    fn new<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, geom: ConvGeom) -> Result<Self> {
        let (n, in_c, h, w) = input.dims4()?;
        let (out_c, k_in, kh, kw) = kernel.dims4()?;
        if k_in != in_c {
            contract!("conv2d kernel expects {k_in} input channels, input has {in_c}");
        }
        if geom.stride == 0 || geom.dilation == 0 {
            contract!("conv2d stride and dilation must be >= 1, got {geom:?}");
        }
        let (Some(ho), Some(wo)) = (geom.out_extent(h, kh), geom.out_extent(w, kw)) else {
            contract!("conv2d output would be empty for {h}×{w} input, {kh}×{kw} kernel, {geom:?}");
        };
        Ok(Self { n, in_c, h, w, out_c, kh, kw, ho, wo, geom })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.geom.stride == 1 && self.geom.padding == 0
    }

    fn rows(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Input coordinate touched by output index `o` and kernel tap `k`, if inside.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.geom.stride + k * self.geom.dilation) as isize - self.geom.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    fn im2col<T: Real>(&self, image: &[T], col: &mut [T]) {
        let cols = self.cols();
        for c in 0..self.in_c {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for dy in 0..self.kh {
                for dx in 0..self.kw {
                    let row = (c * self.kh + dy) * self.kw + dx;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for oy in 0..self.ho {
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        match self.src(oy, dy, self.h) {
                            None => line.fill(T::zero()),
                            Some(iy) => {
                                let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match self.src(ox, dx, self.w) {
                                        Some(ix) => src_row[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, col: &[T], image: &mut [T]) {
        let cols = self.cols();
        for c in 0..self.in_c {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for dy in 0..self.kh {
                for dx in 0..self.kw {
                    let row = (c * self.kh + dy) * self.kw + dx;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oy in 0..self.ho {
                        let Some(iy) = self.src(oy, dy, self.h) else { continue };
                        let line = &src[oy * self.wo..(oy + 1) * self.wo];
                        let dst_row = &mut plane[iy * self.w..(iy + 1) * self.w];
                        for (ox, &g) in line.iter().enumerate() {
                            if let Some(ix) = self.src(ox, dx, self.w) {
                                dst_row[ix] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out[n,o,y,x] = bias[o] + Σ input[n,i,y·s−p+dy·d, x·s−p+dx·d]·kernel[o,i,dy,dx]`
/// with zero fill outside the input.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let plan = Plan::new(input, kernel, geom)?;
    if let Some(b) = bias {
        if b.shape() != [plan.out_c] {
            contract!("conv2d bias shape {:?} does not match {} output channels", b.shape(), plan.out_c);
        }
    }
    let (rows, cols) = (plan.rows(), plan.cols());
    let in_plane = plan.in_c * plan.h * plan.w;
    let out_plane = plan.out_c * cols;
    let mut out = vec![T::zero(); plan.n * out_plane];
    let mut col = if plan.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * cols] };
    for n in 0..plan.n {
        let image = &input.data()[n * in_plane..(n + 1) * in_plane];
        let rhs: &[T] = if plan.is_pointwise() {
            image
        } else {
            plan.im2col(image, &mut col);
            &col
        };
        let dst = &mut out[n * out_plane..(n + 1) * out_plane];
        T::gemm(plan.out_c, rows, cols, kernel.data(), rows as isize, 1, rhs, cols as isize, 1, T::zero(), dst);
        if let Some(b) = bias {
            for (o, chunk) in dst.chunks_mut(cols).enumerate() {
                let bo = b.data()[o];
                chunk.iter_mut().for_each(|v| *v += bo);
            }
        }
    }
    Tensor::new(&[plan.n, plan.out_c, plan.ho, plan.wo], out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: ConvGeom,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let plan = Plan::new(input, kernel, geom)?;
    if grad_out.shape() != [plan.n, plan.out_c, plan.ho, plan.wo] {
        contract!("conv2d gradient shape {:?} does not match output", grad_out.shape());
    }
    let (rows, cols) = (plan.rows(), plan.cols());
    let in_plane = plan.in_c * plan.h * plan.w;
    let out_plane = plan.out_c * cols;
    let mut d_kernel = vec![T::zero(); kernel.numel()];
    let mut d_input = vec![T::zero(); if need_input { input.numel() } else { 0 }];
    let mut d_bias = vec![T::zero(); plan.out_c];
    let mut col = vec![T::zero(); if plan.is_pointwise() { 0 } else { rows * cols }];
    let mut d_col = vec![T::zero(); if need_input && !plan.is_pointwise() { rows * cols } else { 0 }];

    for n in 0..plan.n {
        let image = &input.data()[n * in_plane..(n + 1) * in_plane];
        let g = &grad_out.data()[n * out_plane..(n + 1) * out_plane];
        for (o, chunk) in g.chunks(cols).enumerate() {
            d_bias[o] += crate::tensor::pairwise_sum(chunk);
        }
        let rhs: &[T] = if plan.is_pointwise() {
            image
        } else {
            plan.im2col(image, &mut col);
            &col
        };
        // dK += g · colᵀ
        T::gemm(plan.out_c, cols, rows, g, cols as isize, 1, rhs, 1, cols as isize, T::one(), &mut d_kernel);
        if need_input {
            let dst = &mut d_input[n * in_plane..(n + 1) * in_plane];
            if plan.is_pointwise() {
                // dX = Kᵀ · g
                T::gemm(rows, plan.out_c, cols, kernel.data(), 1, rows as isize, g, cols as isize, 1, T::zero(), dst);
            } else {
                T::gemm(rows, plan.out_c, cols, kernel.data(), 1, rows as isize, g, cols as isize, 1, T::zero(), &mut d_col);
                plan.col2im(&d_col, dst);
            }
        }
    }
    Ok(ConvGrads {
        input: if need_input { Tensor::new(input.shape(), d_input)? } else { Tensor::zeros(input.shape()) },
        kernel: Tensor::new(kernel.shape(), d_kernel)?,
        bias: Tensor::new(&[plan.out_c], d_bias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_ones_kernel() {
        let input = Tensor::<f32>::from_fn(&[1, 1, 3, 3], |i| (i + 1) as f32);
        let kernel = Tensor::ones(&[1, 1, 2, 2]);
        let out = conv2d(&input, &kernel, None, ConvGeom::UNIT).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert_eq!(out.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let input = Tensor::<f32>::from_fn(&[2, 1, 4, 5], |i| (i as f32).sin());
        let kernel = Tensor::ones(&[1, 1, 1, 1]);
        let bias = Tensor::zeros(&[1]);
        let out = conv2d(&input, &kernel, Some(&bias), ConvGeom::UNIT).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn dilated_same_padding_keeps_size() {
        let input = Tensor::<f32>::zeros(&[1, 1, 5, 5]);
        let kernel = Tensor::zeros(&[1, 1, 3, 3]);
        let out = conv2d(&input, &kernel, None, ConvGeom::new(1, 2, 2)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 5, 5]);
        assert_eq!(ConvGeom::same(3, 3), ConvGeom::new(1, 3, 3));
    }

    #[test]
    fn rejects_channel_mismatch_and_empty_output() {
        let input = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        assert!(conv2d(&input, &Tensor::zeros(&[1, 3, 1, 1]), None, ConvGeom::UNIT).is_err());
        assert!(conv2d(&input, &Tensor::zeros(&[1, 2, 5, 5]), None, ConvGeom::UNIT).is_err());
        assert!(conv2d(&input, &Tensor::zeros(&[1, 2, 1, 1]), None, ConvGeom::new(0, 1, 0)).is_err());
    }
}
