//! Robustness perturbations: brightness, contrast and Gaussian blur, applied
//! to a configurable fraction of training images.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::PlotSeries;
use crate::raster::{quantize_channel, RgbRaster};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AugmentPlan {
    /// Proportion of images to perturb.
    pub fraction: f64,
    pub brightness_delta: i32,
    pub contrast_factor: f64,
    pub blur_sigma: f64,
    pub seed: u64,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        Self {
            fraction: 0.2,
            brightness_delta: -100,
            contrast_factor: 1.5,
            blur_sigma: 1.5,
            seed: 0,
        }
    }
}

impl AugmentPlan {
    pub fn validate(&self) -> crate::Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(crate::CoreError::InvalidConfig(format!(
                "augment fraction {} outside [0, 1]",
                self.fraction
            )));
        }
        if self.contrast_factor <= 0.0 {
            return Err(crate::CoreError::InvalidConfig(
                "contrast factor must be positive".into(),
            ));
        }
        if self.blur_sigma < 0.0 {
            return Err(crate::CoreError::InvalidConfig(
                "blur sigma must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Adds a constant to every channel, clamped to [0, 255].
pub fn adjust_brightness(img: &RgbRaster, delta: i32) -> RgbRaster {
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (i32::from(*v) + delta).clamp(0, 255) as u8;
    }
    out
}

/// Multiplies every channel by `k` (rounding half away from zero), clamped.
pub fn adjust_contrast(img: &RgbRaster, k: f64) -> RgbRaster {
    assert!(k > 0.0, "contrast factor must be positive");
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = quantize_channel(k * f64::from(*v));
    }
    out
}

/// Normalized discrete Gaussian kernel with radius ceil(3*sigma).
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= sum;
    }
    kernel
}

/// Reflected index for symmetric boundary handling (-1 maps to 0, -2 to 1).
fn reflect(i: i64, n: i64) -> usize {
    let mut i = i;
    // period of the symmetric reflection is 2n
    let period = 2 * n;
    i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Separable Gaussian convolution with symmetric-reflection edge handling;
/// sigma = 0 is the identity.
pub fn gaussian_blur(img: &RgbRaster, sigma: f64) -> RgbRaster {
    if sigma == 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let w = img.width() as i64;
    let h = img.height() as i64;

    // horizontal pass into float buffer
    let mut tmp = vec![0.0f64; (w * h * 3) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (ki, kw) in kernel.iter().enumerate() {
                let sx = reflect(x + ki as i64 - radius, w) as u32;
                let px = img.get(sx, y as u32);
                for c in 0..3 {
                    acc[c] += kw * f64::from(px[c]);
                }
            }
            let o = ((y * w + x) * 3) as usize;
            tmp[o..o + 3].copy_from_slice(&acc);
        }
    }

    // vertical pass with final quantization
    let mut out = RgbRaster::new(img.width(), img.height());
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (ki, kw) in kernel.iter().enumerate() {
                let sy = reflect(y + ki as i64 - radius, h);
                let o = ((sy as i64 * w + x) * 3) as usize;
                for c in 0..3 {
                    acc[c] += kw * tmp[o + c];
                }
            }
            out.set(
                x as u32,
                y as u32,
                [
                    quantize_channel(acc[0]),
                    quantize_channel(acc[1]),
                    quantize_channel(acc[2]),
                ],
            );
        }
    }
    out
}

/// The three perturbations of the augmentation plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturbation {
    Brightness,
    Contrast,
    Blur,
}

/// Perturbs exactly floor(fraction * total images), each image by exactly
/// one perturbation chosen uniformly; selection is deterministic under the
/// plan's seed and all other images are returned untouched.
pub fn augment_dataset(series: &[PlotSeries], plan: &AugmentPlan) -> crate::Result<Vec<PlotSeries>> {
    plan.validate()?;
    let total: usize = series.iter().map(|s| s.snips.len()).sum();
    let count = (plan.fraction * total as f64).floor() as usize;

    let mut slots: Vec<(usize, usize)> = series
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.snips.len()).map(move |j| (i, j)))
        .collect();
    let mut rng = stream(plan.seed, &[crate::rng::hash_tag("augment")]);
    slots.shuffle(&mut rng);
    let chosen: Vec<((usize, usize), Perturbation)> = slots
        .into_iter()
        .take(count)
        .map(|slot| {
            let p = match rng.gen_range(0..3u8) {
                0 => Perturbation::Brightness,
                1 => Perturbation::Contrast,
                _ => Perturbation::Blur,
            };
            (slot, p)
        })
        .collect();

    let mut out = series.to_vec();
    for ((i, j), p) in chosen {
        let img = &out[i].snips[j].image;
        out[i].snips[j].image = match p {
            Perturbation::Brightness => adjust_brightness(img, plan.brightness_delta),
            Perturbation::Contrast => adjust_contrast(img, plan.contrast_factor),
            Perturbation::Blur => gaussian_blur(img, plan.blur_sigma),
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{PlotSnip, SNIP_LEN, SNIP_WID};

    fn px_raster(rgb: [u8; 3]) -> RgbRaster {
        RgbRaster::filled(4, 2, rgb)
    }

    #[test]
    fn brightness_zero_is_identity() {
        let img = px_raster([5, 100, 250]);
        assert_eq!(adjust_brightness(&img, 0), img);
    }

    #[test]
    fn brightness_clamps_at_zero() {
        let img = px_raster([0, 0, 0]);
        assert_eq!(adjust_brightness(&img, -100), img);
    }

    #[test]
    fn brightness_worked_value() {
        let img = px_raster([150, 200, 90]);
        let out = adjust_brightness(&img, -100);
        assert_eq!(out.get(0, 0), [50, 100, 0]);
    }

    #[test]
    fn contrast_one_is_identity() {
        let img = px_raster([3, 128, 255]);
        assert_eq!(adjust_contrast(&img, 1.0), img);
    }

    #[test]
    fn contrast_worked_value() {
        let img = px_raster([100, 180, 40]);
        let out = adjust_contrast(&img, 1.5);
        assert_eq!(out.get(0, 0), [150, 255, 60]);
    }

    #[test]
    fn contrast_saturated_unchanged() {
        let img = px_raster([255, 255, 255]);
        assert_eq!(adjust_contrast(&img, 2.7), img);
    }

    #[test]
    fn blur_zero_is_identity() {
        let img = px_raster([10, 20, 30]);
        assert_eq!(gaussian_blur(&img, 0.0), img);
    }

    #[test]
    fn blur_constant_stays_constant() {
        let img = RgbRaster::filled(9, 9, [40, 90, 140]);
        assert_eq!(gaussian_blur(&img, 1.5), img);
    }

    #[test]
    fn blur_impulse_center_weight() {
        // independent evaluation of the discrete kernel
        let sigma = 1.0;
        let radius = 3i64;
        let raw: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / 2.0).exp())
            .collect();
        let sum: f64 = raw.iter().sum();
        let k0 = raw[radius as usize] / sum;
        let kernel = gaussian_kernel(sigma);
        assert!((kernel[kernel.len() / 2] - k0).abs() < 1e-6);

        let mut img = RgbRaster::new(15, 15);
        img.set(7, 7, [255, 255, 255]);
        let out = gaussian_blur(&img, sigma);
        let expect = quantize_channel(255.0 * k0 * k0);
        assert_eq!(out.get(7, 7)[0], expect);
    }

    #[test]
    fn blur_preserves_mean_within_one_unit() {
        let mut img = RgbRaster::new(16, 12);
        for y in 0..12 {
            for x in 0..16 {
                img.set(x, y, [((x * 16 + y) % 256) as u8, 100, (x * 7) as u8]);
            }
        }
        let before = img.channel_means();
        let after = gaussian_blur(&img, 1.5).channel_means();
        for c in 0..3 {
            assert!((before[c] - after[c]).abs() <= 1.0);
        }
    }

    #[test]
    fn brightness_and_contrast_are_monotone_per_pixel() {
        // channel ordering preserved before clamping
        let img = {
            let mut r = RgbRaster::new(1, 1);
            r.set(0, 0, [30, 90, 200]);
            r
        };
        for out in [adjust_brightness(&img, -50), adjust_contrast(&img, 1.2)] {
            let [r, g, b] = out.get(0, 0);
            assert!(r <= g && g <= b);
        }
    }

    fn series_of(n_snips: usize, plots: usize) -> Vec<PlotSeries> {
        // checkerboard so every perturbation (including blur) visibly
        // changes the image
        let mut image = RgbRaster::new(SNIP_LEN, SNIP_WID);
        for y in 0..SNIP_WID {
            for x in 0..SNIP_LEN {
                let v = if (x + y) % 2 == 0 { 220 } else { 40 };
                image.set(x, y, [v, v, v]);
            }
        }
        (0..plots)
            .map(|p| PlotSeries {
                plot_id: format!("p{p}"),
                environment_id: "e".into(),
                snips: (0..n_snips)
                    .map(|j| PlotSnip {
                        plot_id: format!("p{p}"),
                        environment_id: "e".into(),
                        flight_day: j as i32,
                        image: image.clone(),
                    })
                    .collect(),
                rm_day: None,
            })
            .collect()
    }

    fn count_changed(a: &[PlotSeries], b: &[PlotSeries]) -> usize {
        a.iter()
            .zip(b)
            .flat_map(|(sa, sb)| sa.snips.iter().zip(&sb.snips))
            .filter(|(x, y)| x.image != y.image)
            .count()
    }

    #[test]
    fn fraction_zero_is_identity() {
        let data = series_of(5, 4);
        let plan = AugmentPlan {
            fraction: 0.0,
            ..AugmentPlan::default()
        };
        let out = augment_dataset(&data, &plan).unwrap();
        assert_eq!(count_changed(&data, &out), 0);
    }

    #[test]
    fn fraction_selects_exact_count() {
        let data = series_of(5, 20); // 100 images
        let plan = AugmentPlan::default(); // 0.2
        let out = augment_dataset(&data, &plan).unwrap();
        // every perturbation changes a mid-gray image
        assert_eq!(count_changed(&data, &out), 20);
    }

    #[test]
    fn fraction_one_perturbs_everything() {
        let data = series_of(5, 4);
        let plan = AugmentPlan {
            fraction: 1.0,
            ..AugmentPlan::default()
        };
        let out = augment_dataset(&data, &plan).unwrap();
        assert_eq!(count_changed(&data, &out), 20);
    }

    #[test]
    fn augment_is_deterministic() {
        let data = series_of(5, 6);
        let plan = AugmentPlan::default();
        let a = augment_dataset(&data, &plan).unwrap();
        let b = augment_dataset(&data, &plan).unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            for (x, y) in sa.snips.iter().zip(&sb.snips) {
                assert_eq!(x.image, y.image);
            }
        }
    }
}
