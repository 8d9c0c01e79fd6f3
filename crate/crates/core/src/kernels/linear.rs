//! Global average pooling and fully connected layers.

use crate::error::{contract, Result};
use crate::tensor::{pairwise_sum, Real, Tensor};

/// `out[n,c] = mean over (h,w) of input[n,c,h,w]`.
///
/// The mean is taken relative to the plane's first value, so constant planes
/// pool to exactly their value.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let area = T::from_usize(h * w).unwrap();
    let mut shifted = vec![T::zero(); h * w];
    let out = input
        .data()
        .chunks(h * w)
        .map(|p| {
            let origin = p[0];
            for (s, &v) in shifted.iter_mut().zip(p) {
                *s = v - origin;
            }
            origin + pairwise_sum(&shifted) / area
        })
        .collect();
    Tensor::new(&[n, c], out)
}

pub fn global_avg_pool_backward<T: Real>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape else { contract!("pool input must be rank 4") };
    let area = T::from_usize(h * w).unwrap();
    let mut out = Vec::with_capacity(n * c * h * w);
    for &g in grad_out.data() {
        out.extend(std::iter::repeat(g / area).take(h * w));
    }
    Tensor::new(input_shape, out)
}

/// `out = input · weightᵀ + bias` for `input` N×Cin and `weight` Cout×Cin.
pub fn affine<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, cin) = input.dims2()?;
    let (cout, wcin) = weight.dims2()?;
    if wcin != cin || bias.shape() != [cout] {
        contract!(
            "affine shapes disagree: input {:?}, weight {:?}, bias {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        );
    }
    let mut out = vec![T::zero(); n * cout];
    for row in out.chunks_mut(cout) {
        row.copy_from_slice(bias.data());
    }
    T::gemm(n, cin, cout, input.data(), cin as isize, 1, weight.data(), 1, cin as isize, T::one(), &mut out);
    Tensor::new(&[n, cout], out)
}

pub struct AffineGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn affine_backward<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, grad_out: &Tensor<T>) -> Result<AffineGrads<T>> {
    let (n, cin) = input.dims2()?;
    let (cout, _) = weight.dims2()?;
    let g = grad_out.data();
    let mut d_input = vec![T::zero(); n * cin];
    T::gemm(n, cout, cin, g, cout as isize, 1, weight.data(), cin as isize, 1, T::zero(), &mut d_input);
    let mut d_weight = vec![T::zero(); cout * cin];
    T::gemm(cout, n, cin, g, 1, cout as isize, input.data(), cin as isize, 1, T::zero(), &mut d_weight);
    let mut d_bias = vec![T::zero(); cout];
    for row in g.chunks(cout) {
        for (d, &v) in d_bias.iter_mut().zip(row) {
            *d += v;
        }
    }
    Ok(AffineGrads {
        input: Tensor::new(&[n, cin], d_input)?,
        weight: Tensor::new(&[cout, cin], d_weight)?,
        bias: Tensor::new(&[cout], d_bias)?,
    })
}
