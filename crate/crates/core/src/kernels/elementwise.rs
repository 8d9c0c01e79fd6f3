//! Pointwise maps, broadcasts and channel concatenation.

use crate::error::{contract, Result};
use crate::tensor::{pairwise_sum, Real, Tensor};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        contract!("add needs identical shapes, got {:?} and {:?}", a.shape(), b.shape());
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

/// Splits a rank ≥ 2 shape into (outer = dim 0, channels = dim 1, inner = rest).
fn axis1(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        contract!("channel operations need rank >= 2, got {shape:?}");
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

/// Scale factor per (batch, channel) for [`mul_channel`]: either one vector
/// shared by the batch (`[C]`) or one row per image (`[N, C]`).
fn channel_scale<'a, T: Real>(a: &Tensor<T>, b: &'a Tensor<T>) -> Result<impl Fn(usize, usize) -> T + 'a> {
    let (n, c, _) = axis1(a.shape())?;
    let per_image = match b.shape() {
        [bc] if *bc == c => false,
        [bn, bc] if *bn == n && *bc == c => true,
        other => contract!("mul_channel weight shape {other:?} does not match {c} channels of {:?}", a.shape()),
    };
    Ok(move |i: usize, ch: usize| if per_image { b.data()[i * c + ch] } else { b.data()[ch] })
}

/// `out[n,c,…] = a[n,c,…] · b[c]` (or `b[n,c]`), broadcast over the spatial extent.
pub fn mul_channel<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, inner) = axis1(a.shape())?;
    let scale = channel_scale(a, b)?;
    let mut out = a.clone();
    for i in 0..n {
        for ch in 0..c {
            let s = scale(i, ch);
            let base = (i * c + ch) * inner;
            out.data_mut()[base..base + inner].iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok(out)
}

/// Gradients of [`mul_channel`] with respect to `a` and `b`.
pub fn mul_channel_backward<T: Real>(a: &Tensor<T>, b: &Tensor<T>, g: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, inner) = axis1(a.shape())?;
    let da = mul_channel(g, b)?;
    let mut db = Tensor::zeros(b.shape());
    let per_image = b.shape().len() == 2;
    let mut prod = vec![T::zero(); inner];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * inner;
            for ((p, &x), &gv) in prod.iter_mut().zip(&a.data()[base..base + inner]).zip(&g.data()[base..base + inner]) {
                *p = x * gv;
            }
            let idx = if per_image { i * c + ch } else { ch };
            db.data_mut()[idx] += pairwise_sum(&prod);
        }
    }
    Ok((da, db))
}

/// Mean absolute difference, as a one-element tensor.
pub fn l1_diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        contract!("l1_diff needs identical shapes, got {:?} and {:?}", a.shape(), b.shape());
    }
    let diffs: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).collect();
    Ok(Tensor::scalar(pairwise_sum(&diffs) / T::from_usize(diffs.len()).unwrap()))
}

/// Gradient of [`l1_diff`] with respect to `a`; the gradient for `b` is its negation.
pub fn l1_diff_backward<T: Real>(a: &Tensor<T>, b: &Tensor<T>, g: T) -> Tensor<T> {
    let scale = g / T::from_usize(a.numel()).unwrap();
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            if x > y {
                scale
            } else if x < y {
                -scale
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

/// Stacks tensors along axis 1 in argument order.
pub fn concat<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = parts.first() else { contract!("concat of zero tensors") };
    let (n, _, inner) = axis1(first.shape())?;
    let mut channels = 0;
    for p in parts {
        let (pn, pc, pi) = axis1(p.shape())?;
        if pn != n || pi != inner || p.shape().len() != first.shape().len() || p.shape()[2..] != first.shape()[2..] {
            contract!("concat parts disagree outside the channel axis: {:?} vs {:?}", first.shape(), p.shape());
        }
        channels += pc;
    }
    let mut data = Vec::with_capacity(n * channels * inner);
    for i in 0..n {
        for p in parts {
            let pc = p.shape()[1];
            data.extend_from_slice(&p.data()[i * pc * inner..(i + 1) * pc * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[1] = channels;
    Tensor::new(&shape, data)
}

/// Channels `[start, start + len)` along axis 1.
pub fn narrow<T: Real>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (n, c, inner) = axis1(x.shape())?;
    if len == 0 || start + len > c {
        contract!("channel range {start}..{} out of bounds for {c}", start + len);
    }
    let mut data = Vec::with_capacity(n * len * inner);
    for i in 0..n {
        let base = (i * c + start) * inner;
        data.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[1] = len;
    Tensor::new(&shape, data)
}

/// Adds `g` into channels `[start, start + g.C)` of `dst`.
pub fn narrow_backward_into<T: Real>(dst: &mut Tensor<T>, start: usize, g: &Tensor<T>) -> Result<()> {
    let (n, c, inner) = axis1(dst.shape())?;
    let len = g.shape()[1];
    for i in 0..n {
        let base = (i * c + start) * inner;
        let src = &g.data()[i * len * inner..(i + 1) * len * inner];
        for (d, &v) in dst.data_mut()[base..base + len * inner].iter_mut().zip(src) {
            *d += v;
        }
    }
    Ok(())
}
