//! PSNR and SSIM that ignore masked (metal) pixels.

use crate::ctsim::{Mask, WINDOW_HU};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported when the unmasked images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check(a: &Tensor<f32>, b: &Tensor<f32>, mask: Option<&Mask>) -> Result<(usize, usize)> {
    let [h, w] = *a.shape() else {
        return Err(Error::dim(format!("expected an H×W image, got {:?}", a.shape())));
    };
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("images differ in shape: {:?} vs {:?}", a.shape(), b.shape())));
    }
    if let Some(m) = mask {
        if m.shape() != (h, w) {
            return Err(Error::dim("mask shape differs from image"));
        }
    }
    Ok((h, w))
}

/// `10·log10(range² / MSE)` over pixels outside `mask`.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>, mask: Option<&Mask>, data_range: f64) -> Result<f64> {
    check(a, b, mask)?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (p, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        if mask.is_some_and(|m| m.data()[p]) {
            continue;
        }
        let d = x as f64 - y as f64;
        sum += d * d;
        count += 1;
    }
    if count == 0 {
        return Err(Error::arg("no unmasked pixels to compare"));
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (data_range * data_range / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> =
        (0..SSIM_WINDOW).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let total: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / total).collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for gi in &g {
        for gj in &g {
            w.push(gi * gj);
        }
    }
    w
}

/// Mean Gaussian-windowed SSIM over every full window free of masked
/// pixels. Inputs are expected in `[0, 1]`.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>, mask: Option<&Mask>) -> Result<f64> {
    let (h, w) = check(a, b, mask)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::arg(format!("images smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window")));
    }
    let win = gaussian_window();
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let (ad, bd) = (a.data(), b.data());

    // Masked-pixel prefix sums for O(1) window checks.
    let mut blocked = vec![0usize; (h + 1) * (w + 1)];
    for i in 0..h {
        for j in 0..w {
            let m = mask.is_some_and(|m| m.data()[i * w + j]) as usize;
            blocked[(i + 1) * (w + 1) + j + 1] =
                m + blocked[i * (w + 1) + j + 1] + blocked[(i + 1) * (w + 1) + j] - blocked[i * (w + 1) + j];
        }
    }
    let k = SSIM_WINDOW;
    let mut total = 0.0f64;
    let mut count = 0usize;
    for i in 0..=h - k {
        for j in 0..=w - k {
            let inside = blocked[(i + k) * (w + 1) + j + k] + blocked[i * (w + 1) + j]
                - blocked[i * (w + 1) + j + k]
                - blocked[(i + k) * (w + 1) + j];
            if inside > 0 {
                continue;
            }
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for di in 0..k {
                for dj in 0..k {
                    let p = (i + di) * w + j + dj;
                    let g = win[di * k + dj];
                    let (x, y) = (ad[p] as f64, bd[p] as f64);
                    ma += g * x;
                    mb += g * y;
                    saa += g * x * x;
                    sbb += g * y * y;
                    sab += g * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::arg("no SSIM window avoids the mask"));
    }
    Ok(total / count as f64)
}

/// HU image clamped to the display window and mapped onto `[0, 1]`.
pub fn hu_to_display(image: &Tensor<f32>) -> Tensor<f32> {
    let (lo, hi) = WINDOW_HU;
    image.map(|v| (v.clamp(lo, hi) - lo) / (hi - lo))
}

/// Masked PSNR (dB, range 1) and SSIM ×100 of HU images on the display window.
pub fn score_hu(output: &Tensor<f32>, reference: &Tensor<f32>, mask: Option<&Mask>) -> Result<(f64, f64)> {
    let (o, r) = (hu_to_display(output), hu_to_display(reference));
    Ok((psnr(&o, &r, mask, 1.0)?, 100.0 * ssim(&o, &r, mask)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_hit_cap_and_unit_ssim() {
        let a = Tensor::from_fn([16, 16], |p| ((p * 37) % 11) as f32 / 11.0);
        assert_eq!(psnr(&a, &a, None, 1.0).unwrap(), PSNR_CAP_DB);
        assert_eq!(ssim(&a, &a, None).unwrap(), 1.0);
    }

    #[test]
    fn full_range_error_is_zero_db() {
        let a = Tensor::zeros([4, 4]);
        let b = Tensor::full([4, 4], 2.0f32);
        assert!(psnr(&a, &b, None, 2.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn fully_masked_is_an_error() {
        let a = Tensor::zeros([12, 12]);
        let m = Mask::from_fn(12, 12, |_, _| true);
        assert!(psnr(&a, &a, Some(&m), 1.0).is_err());
        assert!(ssim(&a, &a, Some(&m)).is_err());
    }

    #[test]
    fn window_weights_sum_to_one() {
        assert!((gaussian_window().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
