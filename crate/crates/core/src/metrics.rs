//! Restoration quality measures: PSNR, SSIM, ENL and the ratio image.

use crate::error::{Error, Result};
use crate::image::{Image, IntensityImage};
use crate::numeric::sum_compensated;

/// Peak value assumed for 8-bit imagery.
pub const PEAK: f64 = 255.0;

/// Rectangular window `[top, top+height) x [left, left+width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self {
            top,
            left,
            height,
            width,
        }
    }

    fn check<D>(&self, img: &Image<D>) -> Result<()> {
        if self.height == 0
            || self.width == 0
            || self.top + self.height > img.height()
            || self.left + self.width > img.width()
        {
            return Err(Error::invalid(
                "region",
                format!(
                    "{}x{} at ({}, {}) is empty or outside the {}x{} image",
                    self.height,
                    self.width,
                    self.top,
                    self.left,
                    img.height(),
                    img.width()
                ),
            ));
        }
        Ok(())
    }
}

/// `10 log10(255^2 N / ||u - u_hat||^2)`; `+inf` when the images are equal.
pub fn psnr(u: &IntensityImage, u_hat: &IntensityImage) -> Result<f64> {
    u.check_shape(u_hat)?;
    let sse = sum_compensated(u.data().iter().zip(u_hat.data()).map(|(a, b)| (a - b) * (a - b)));
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK * u.len() as f64 / sse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable 'valid' correlation of a row-major `w x h` array.
fn filter_valid(data: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for r in 0..h {
        let src = &data[r * w..(r + 1) * w];
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().zip(&src[c..c + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(r + i) * ow + c])
                .sum();
        }
    }
    out
}

/// Mean structural similarity over all 11x11 Gaussian windows (sigma 1.5)
/// lying fully inside the image, with `K1 = 0.01`, `K2 = 0.03` and range 255.
pub fn ssim(u: &IntensityImage, u_hat: &IntensityImage) -> Result<f64> {
    u.check_shape(u_hat)?;
    let (w, h) = (u.width(), u.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            reason: format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}"),
        });
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let a = u.data();
    let b = u_hat.data();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    };
    let mu_a = filter_valid(a, w, h, &taps);
    let mu_b = filter_valid(b, w, h, &taps);
    let aa = filter_valid(&prod(&|x, _| x * x), w, h, &taps);
    let bb = filter_valid(&prod(&|_, y| y * y), w, h, &taps);
    let ab = filter_valid(&prod(&|x, y| x * y), w, h, &taps);
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let map = (0..mu_a.len()).map(|i| ssim_term(mu_a[i], mu_b[i], aa[i], bb[i], ab[i], c1, c2));
    Ok(sum_compensated(map) / mu_a.len() as f64)
}

#[inline]
fn ssim_term(ma: f64, mb: f64, aa: f64, bb: f64, ab: f64, c1: f64, c2: f64) -> f64 {
    let va = aa - ma * ma;
    let vb = bb - mb * mb;
    let cov = ab - ma * mb;
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Equivalent number of looks `mean^2 / variance` (population variance) over
/// a region; `+inf` for a constant region.
pub fn enl(img: &IntensityImage, region: &Region) -> Result<f64> {
    region.check(img)?;
    let values: Vec<f64> = (region.top..region.top + region.height)
        .flat_map(|r| (region.left..region.left + region.width).map(move |c| (r, c)))
        .map(|(r, c)| img.get(r, c))
        .collect();
    let n = values.len() as f64;
    let mean = sum_compensated(values.iter().copied()) / n;
    let var = sum_compensated(values.iter().map(|v| (v - mean) * (v - mean))) / n;
    if var == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(mean * mean / var)
}

/// Pointwise quotient `u / u_hat`.
pub fn ratio_image(u: &IntensityImage, u_hat: &IntensityImage) -> Result<IntensityImage> {
    u.check_shape(u_hat)?;
    if let Some((index, &value)) = u_hat.data().iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::NonPositivePixel { index, value });
    }
    let data = u.data().iter().zip(u_hat.data()).map(|(a, b)| a / b).collect();
    Image::new(u.width(), u.height(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{apply_gamma_noise, gamma_noise_field, NoiseSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn textured(w: usize, h: usize, seed: u64) -> IntensityImage {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        IntensityImage::from_fn(w, h, |r, c| {
            (100.0 + 60.0 * ((r as f64) * 0.3).sin() * ((c as f64) * 0.2).cos() + rng.random_range(-20.0..20.0))
                .clamp(0.0, 255.0)
        })
    }

    #[test]
    fn psnr_examples() {
        let u = textured(16, 16, 1);
        let plus1 = u.map(|v| v + 1.0);
        assert!((psnr(&u, &plus1).unwrap() - 48.130_803_608_679_1).abs() < 1e-9);
        assert_eq!(psnr(&u, &u).unwrap(), f64::INFINITY);
        let plus255 = u.map(|v| v + 255.0);
        assert!(psnr(&u, &plus255).unwrap().abs() < 1e-12);
        assert!(psnr(&u, &IntensityImage::zeros(3, 3)).is_err());
    }

    #[test]
    fn ssim_examples() {
        let u = textured(32, 24, 2);
        assert!((ssim(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        let inv = u.map(|v| 255.0 - v);
        assert!(ssim(&u, &inv).unwrap() < 1.0);
        assert!(ssim(&u, &IntensityImage::zeros(32, 23)).is_err());
    }

    /// Direct windowed SSIM with the full 2-D kernel at every window.
    fn ssim_oracle(a: &IntensityImage, b: &IntensityImage) -> f64 {
        let k = SSIM_WINDOW;
        let g = gaussian_taps(k, SSIM_SIGMA);
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..=a.height() - k {
            for c in 0..=a.width() - k {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        ma += g[i] * g[j] * a.get(r + i, c + j);
                        mb += g[i] * g[j] * b.get(r + i, c + j);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = g[i] * g[j];
                        let (x, y) = (a.get(r + i, c + j) - ma, b.get(r + i, c + j) - mb);
                        va += wt * x * x;
                        vb += wt * y * y;
                        cov += wt * x * y;
                    }
                }
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_windowed_oracle() {
        let a = textured(30, 27, 3);
        let b = apply_gamma_noise(&a, NoiseSpec::new(3, 4).unwrap()).unwrap();
        let fast = ssim(&a, &b).unwrap();
        let slow = ssim_oracle(&a, &b);
        assert!((fast - slow).abs() <= 1e-9, "{fast} vs {slow}");
    }

    #[test]
    fn enl_examples() {
        let img = IntensityImage::filled(8, 8, 7.0);
        assert_eq!(enl(&img, &Region::new(1, 1, 4, 4)).unwrap(), f64::INFINITY);
        let img = IntensityImage::new(2, 1, vec![1.0, 3.0]).unwrap();
        assert_eq!(enl(&img, &Region::new(0, 0, 1, 2)).unwrap(), 4.0);
        assert!(enl(&img, &Region::new(0, 0, 2, 2)).is_err());
    }

    #[test]
    fn enl_estimates_looks() {
        let eta = gamma_noise_field(100, 100, NoiseSpec::new(5, 77).unwrap()).unwrap();
        let noisy = eta.map(|v| 120.0 * v);
        let e = enl(&noisy, &Region::new(0, 0, 100, 100)).unwrap();
        assert!((e - 5.0).abs() <= 0.5, "ENL {e}");
    }

    #[test]
    fn ratio_examples() {
        let u = textured(9, 7, 5).map(|v| v + 1.0);
        assert!(ratio_image(&u, &u).unwrap().data().iter().all(|&r| r == 1.0));
        let half = u.map(|v| v / 2.0);
        assert!(ratio_image(&u, &half).unwrap().data().iter().all(|&r| r == 2.0));
        assert!(ratio_image(&u, &IntensityImage::zeros(9, 7)).is_err());
    }

    #[test]
    fn ratio_recovers_noise_bit_exactly() {
        // power-of-two intensities make the product and quotient exact
        let u = IntensityImage::from_fn(32, 32, |r, c| 2f64.powi(((r + c) % 9) as i32 - 2));
        let spec = NoiseSpec::new(3, 2024).unwrap();
        let v = apply_gamma_noise(&u, spec).unwrap();
        let eta = gamma_noise_field(32, 32, spec).unwrap();
        assert_eq!(ratio_image(&v, &u).unwrap(), eta);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn metrics_are_symmetric(seed in 0u64..1000) {
            let a = textured(14, 13, seed);
            let b = textured(14, 13, seed + 1);
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() <= 1e-14);
        }

        #[test]
        fn ratio_recovers_noise_to_rounding(seed in 0u64..1000, looks in 1u32..6) {
            let u = textured(16, 16, seed).map(|v| v + 0.5);
            let spec = NoiseSpec::new(looks, seed).unwrap();
            let v = apply_gamma_noise(&u, spec).unwrap();
            let eta = gamma_noise_field(16, 16, spec).unwrap();
            for (r, e) in ratio_image(&v, &u).unwrap().data().iter().zip(eta.data()) {
                prop_assert!((r - e).abs() <= 2.0 * f64::EPSILON * e);
            }
        }
    }
}
