//! L2 error in CIELab, PSNR and SSIM, each restricted to a validity mask.

use serde::{Deserialize, Serialize};

use super::color::srgb_to_lab_pixel;
use super::{Image, ImagingError, Mask, Result};

/// Reported PSNR when the images are (numerically) identical.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub lab_l2: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricsRecord {
    pub fn compute(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<Self> {
        Ok(Self {
            lab_l2: lab_l2_error(a, b, mask)?,
            psnr: psnr(a, b, mask)?,
            ssim: ssim(a, b, mask)?,
        })
    }

    /// Column-wise mean of several records.
    pub fn mean(records: &[MetricsRecord]) -> Option<MetricsRecord> {
        if records.is_empty() {
            return None;
        }
        let n = records.len() as f64;
        Some(MetricsRecord {
            lab_l2: records.iter().map(|r| r.lab_l2).sum::<f64>() / n,
            psnr: records.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: records.iter().map(|r| r.ssim).sum::<f64>() / n,
        })
    }
}

fn check(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<()> {
    a.same_size(b)?;
    if let Some(m) = mask {
        m.check_size(a)?;
    }
    Ok(())
}

fn valid(mask: Option<&Mask>, x: usize, y: usize) -> bool {
    mask.is_none_or(|m| m.get(x, y))
}

/// Sum of per-pixel CIELab distances and the number of valid pixels.
pub fn lab_l2_sum(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<(f64, usize)> {
    check(a, b, mask)?;
    let mut total = 0.0;
    let mut count = 0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if valid(mask, x, y) {
                total +=
                    srgb_to_lab_pixel(a.pixel(x, y)).distance(&srgb_to_lab_pixel(b.pixel(x, y)));
                count += 1;
            }
        }
    }
    Ok((total, count))
}

/// Mean Euclidean CIELab distance over valid pixels.
pub fn lab_l2_error(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<f64> {
    let (total, count) = lab_l2_sum(a, b, mask)?;
    if count == 0 {
        return Err(ImagingError::EmptyMask);
    }
    Ok(total / count as f64)
}

/// `10 log10(1 / MSE)` over valid RGB samples with peak 1.0, capped at
/// [`PSNR_CAP`] when the MSE falls below 1e-10.
pub fn psnr(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<f64> {
    check(a, b, mask)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        for y in 0..a.height() {
            for x in 0..a.width() {
                if valid(mask, x, y) {
                    let d = a.get(x, y, c) - b.get(x, y, c);
                    total += d * d;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(ImagingError::EmptyMask);
    }
    let mse = total / count as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn luma(img: &Image) -> Vec<f64> {
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    (0..r.len())
        .map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i])
        .collect()
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" filtering: output is `(h - 10) x (w - 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = k
                .iter()
                .zip(&row[x..x + SSIM_WINDOW])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * horiz[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Single-scale SSIM on Rec. 601 luma with an 11x11 Gaussian window
/// (sigma 1.5), averaged over window placements that lie entirely inside
/// the valid region.
pub fn ssim(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<f64> {
    check(a, b, mask)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(ImagingError::RegionSmallerThanWindow {
            window: SSIM_WINDOW,
        });
    }
    let ya = luma(a);
    let yb = luma(b);
    let k = gaussian_kernel();
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let prod: Vec<f64> = ya.iter().zip(&yb).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&ya, w, h, &k);
    let mu_b = filter_valid(&yb, w, h, &k);
    let e_aa = filter_valid(&sq(&ya), w, h, &k);
    let e_bb = filter_valid(&sq(&yb), w, h, &k);
    let e_ab = filter_valid(&prod, w, h, &k);

    // Summed-area table of the mask to test whole windows.
    let integral = mask.map(|m| {
        let mut s = vec![0usize; (w + 1) * (h + 1)];
        for y in 0..h {
            for x in 0..w {
                s[(y + 1) * (w + 1) + x + 1] =
                    m.get(x, y) as usize + s[y * (w + 1) + x + 1] + s[(y + 1) * (w + 1) + x]
                        - s[y * (w + 1) + x];
            }
        }
        s
    });
    let window_valid = |x: usize, y: usize| match &integral {
        None => true,
        Some(s) => {
            let (x1, y1) = (x + SSIM_WINDOW, y + SSIM_WINDOW);
            s[y1 * (w + 1) + x1] + s[y * (w + 1) + x] - s[y * (w + 1) + x1] - s[y1 * (w + 1) + x]
                == SSIM_WINDOW * SSIM_WINDOW
        }
    };

    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..oh {
        for x in 0..ow {
            if !window_valid(x, y) {
                continue;
            }
            let i = y * ow + x;
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    if count == 0 {
        return Err(ImagingError::RegionSmallerThanWindow {
            window: SSIM_WINDOW,
        });
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y, c| {
            0.5 + 0.3 * ((x as f64 * 0.7 + c as f64).sin() * (y as f64 * 0.45).cos())
        })
    }

    #[test]
    fn psnr_reference_values() {
        let a = Image::filled(4, 4, [0.5; 3]);
        let b = Image::filled(4, 4, [0.6; 3]);
        assert!((psnr(&a, &b, None).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, None).unwrap(), PSNR_CAP);
        let c = Image::filled(4, 4, [0.0; 3]);
        assert!((psnr(&a, &c, None).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = pattern(20, 16);
        assert!((ssim(&a, &a, None).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_negative_is_low() {
        let a = pattern(24, 24);
        let neg = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &neg, None).unwrap() < 0.5);
    }

    #[test]
    fn ssim_needs_a_full_window() {
        let a = pattern(10, 30);
        assert!(matches!(
            ssim(&a, &a, None),
            Err(ImagingError::RegionSmallerThanWindow { .. })
        ));
        let b = pattern(20, 20);
        let m = Mask::top_left(20, 20, 10, 20);
        assert!(ssim(&b, &b, Some(&m)).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = pattern(12, 12);
        let b = pattern(12, 13);
        assert!(matches!(
            psnr(&a, &b, None),
            Err(ImagingError::DimensionMismatch { .. })
        ));
        assert!(lab_l2_error(&a, &b, None).is_err());
        assert!(ssim(&a, &b, None).is_err());
    }

    #[test]
    fn lab_identical_is_zero() {
        let a = pattern(6, 5);
        assert_eq!(lab_l2_error(&a, &a, None).unwrap(), 0.0);
    }
}
