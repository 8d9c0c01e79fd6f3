//! Fidelity metrics on images with values in [0, 1].

use crate::error::{contract, Result};
use crate::tensor::{Real, Tensor};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        contract!("metric inputs differ in shape: {:?} vs {:?}", a.shape(), b.shape());
    }
    let sq: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64().unwrap() - y.to_f64().unwrap();
            d * d
        })
        .collect();
    Ok(crate::tensor::pairwise_sum(&sq) / sq.len() as f64)
}

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP`] (zero MSE included).
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        contract!("psnr peak must be positive, got {peak}");
    }
    let mse = mse(a, b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size / 2) as f64;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Structural similarity with an 11×11 Gaussian window (σ = 1.5), `L = 1`,
/// averaged over all valid window positions, channels and batch items.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        contract!("ssim inputs differ in shape: {:?} vs {:?}", a.shape(), b.shape());
    }
    let (_, _, h, w) = a.dims4()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        contract!("ssim needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}");
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (c1, c2) = ((K1 * 1.0).powi(2), (K2 * 1.0).powi(2));
    let mut scores = Vec::new();
    for (pa, pb) in a.data().chunks(h * w).zip(b.data().chunks(h * w)) {
        let x: Vec<f64> = pa.iter().map(|v| v.to_f64().unwrap()).collect();
        let y: Vec<f64> = pb.iter().map(|v| v.to_f64().unwrap()).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mu_x = filter_valid(&x, h, w, &taps);
        let mu_y = filter_valid(&y, h, w, &taps);
        let xx = filter_valid(&prod(&x, &x), h, w, &taps);
        let yy = filter_valid(&prod(&y, &y), h, w, &taps);
        let xy = filter_valid(&prod(&x, &y), h, w, &taps);
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let (vx, vy, cov) = (xx[i] - mx * mx, yy[i] - my * my, xy[i] - mx * my);
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            scores.push(num / den);
        }
    }
    Ok(crate::tensor::pairwise_sum(&scores) / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_reference_values() {
        let a = Tensor::<f64>::full(&[1, 3, 4, 4], 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let c = a.map(|v| v + 1.0);
        assert!(psnr(&a, &c, 1.0).unwrap().abs() < 1e-12);
        assert!(psnr(&a, &b, 0.0).is_err());
    }

    #[test]
    fn ssim_identity_and_anticorrelation() {
        let a = Tensor::<f64>::from_fn(&[1, 1, 16, 16], |i| ((i / 16 + i % 16) % 2) as f64);
        // SSIM of a signal with itself: num == den exactly in every window
        // only up to rounding, so allow the last few ulps.
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 0.0);
        assert!(ssim(&Tensor::<f64>::zeros(&[1, 1, 10, 20]), &Tensor::zeros(&[1, 1, 10, 20])).is_err());
    }

    #[test]
    fn gaussian_taps_normalized_and_symmetric() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t[0], t[10]);
    }
}
