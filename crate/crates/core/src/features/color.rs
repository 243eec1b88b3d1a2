use serde::{Deserialize, Serialize};

use super::BinaryMask;
use crate::error::{Error, Result};
use crate::preprocess::ImageRaster;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    /// Excess kurtosis (0 for a Gaussian).
    pub kurtosis: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ColorStats {
    pub channels: [ChannelStats; 3],
}

impl ColorStats {
    /// `[R mean, R std, R skew, R kurt, G mean, ...]`.
    pub fn to_array(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for (c, s) in self.channels.iter().enumerate() {
            out[4 * c..4 * c + 4].copy_from_slice(&[s.mean, s.std, s.skewness, s.kurtosis]);
        }
        out
    }
}

/// Population moments. A channel whose variance is negligible relative to
/// its mean reports skewness and kurtosis 0.
pub fn moments(values: &[f64]) -> ChannelStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let std = m2.sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        return ChannelStats {
            mean,
            std,
            skewness: 0.0,
            kurtosis: 0.0,
        };
    }
    ChannelStats {
        mean,
        std,
        skewness: m3 / (std * std * std),
        kurtosis: m4 / (m2 * m2) - 3.0,
    }
}

fn check_dims(img: &ImageRaster, mask: &BinaryMask) -> Result<()> {
    if img.width() != mask.width() || img.height() != mask.height() {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} vs mask {}x{}",
            img.width(),
            img.height(),
            mask.width(),
            mask.height()
        )));
    }
    if mask.count() == 0 {
        return Err(Error::NoFruitDetected);
    }
    Ok(())
}

pub fn color_stats(img: &ImageRaster, mask: &BinaryMask) -> Result<ColorStats> {
    check_dims(img, mask)?;
    let mut planes: [Vec<f64>; 3] = Default::default();
    for (x, y) in mask.foreground() {
        let p = img.pixel(x, y);
        for c in 0..3 {
            planes[c].push(p[c]);
        }
    }
    Ok(ColorStats {
        channels: [moments(&planes[0]), moments(&planes[1]), moments(&planes[2])],
    })
}

/// Shannon entropy (bits) of the 256-bin foreground luma histogram.
pub fn entropy(img: &ImageRaster, mask: &BinaryMask) -> Result<f64> {
    check_dims(img, mask)?;
    let mut hist = [0u64; 256];
    let mut n = 0u64;
    for (x, y) in mask.foreground() {
        let bin = (img.luminance(x, y) * 255.0).floor().clamp(0.0, 255.0) as usize;
        hist[bin] += 1;
        n += 1;
    }
    let n = n as f64;
    Ok(hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::PixelStage;

    fn strip(values: &[f64]) -> (ImageRaster, BinaryMask) {
        let data = values.iter().flat_map(|&v| [v, v, v]).collect();
        let img = ImageRaster::new(values.len(), 1, PixelStage::Normalized, data).unwrap();
        (img, BinaryMask::from_fn(values.len(), 1, |_, _| true))
    }

    #[test]
    fn constant_channel_convention() {
        let (img, mask) = strip(&[0.5; 10]);
        let s = color_stats(&img, &mask).unwrap().channels[0];
        assert_eq!(s.mean, 0.5);
        assert_eq!((s.std, s.skewness, s.kurtosis), (0.0, 0.0, 0.0));
        let (img, mask) = strip(&[0.1; 7]);
        let s = color_stats(&img, &mask).unwrap().channels[1];
        assert_eq!((s.skewness, s.kurtosis), (0.0, 0.0));
    }

    #[test]
    fn symmetric_two_point_distribution() {
        let vals: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 0.2 } else { 0.8 }).collect();
        let (img, mask) = strip(&vals);
        let s = color_stats(&img, &mask).unwrap().channels[2];
        assert!((s.mean - 0.5).abs() < 1e-12);
        assert!((s.std - 0.3).abs() < 1e-12);
        assert!(s.skewness.abs() < 1e-9);
        assert!((s.kurtosis + 2.0).abs() < 1e-9);
    }

    #[test]
    fn skewed_four_values_match_direct_moments() {
        let vals = [0.1, 0.1, 0.1, 0.7];
        let (img, mask) = strip(&vals);
        let s = color_stats(&img, &mask).unwrap().channels[0];
        // Oracle: deviations are -0.15 (x3) and 0.45.
        let m2 = (3.0 * 0.15f64.powi(2) + 0.45f64.powi(2)) / 4.0;
        let m3 = (3.0 * (-0.15f64).powi(3) + 0.45f64.powi(3)) / 4.0;
        let m4 = (3.0 * 0.15f64.powi(4) + 0.45f64.powi(4)) / 4.0;
        assert!((s.mean - 0.25).abs() < 1e-12);
        assert!((s.skewness - m3 / m2.powf(1.5)).abs() < 1e-9);
        assert!((s.kurtosis - (m4 / (m2 * m2) - 3.0)).abs() < 1e-9);
        assert!((s.skewness - 2.0 / 3f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn stats_ignore_pixel_order() {
        let vals: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64 / 49.0).collect();
        let mut rev = vals.clone();
        rev.reverse();
        let (a, ma) = strip(&vals);
        let (b, mb) = strip(&rev);
        let (sa, sb) = (color_stats(&a, &ma).unwrap(), color_stats(&b, &mb).unwrap());
        for (x, y) in sa.to_array().iter().zip(sb.to_array()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_cases() {
        let (img, mask) = strip(&[0.3; 9]);
        assert_eq!(entropy(&img, &mask).unwrap(), 0.0);

        let all: Vec<f64> = (0..256).map(|b| (b as f64 + 0.5) / 255.0).collect();
        let (img, mask) = strip(&all);
        assert!((entropy(&img, &mask).unwrap() - 8.0).abs() < 1e-12);

        let four: Vec<f64> = (0..40).map(|i| [0.1, 0.3, 0.6, 0.9][i % 4]).collect();
        let (img, mask) = strip(&four);
        assert!((entropy(&img, &mask).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_mask_is_rejected() {
        let (img, _) = strip(&[0.1, 0.2]);
        let mask = BinaryMask::from_fn(3, 1, |_, _| true);
        assert!(color_stats(&img, &mask).is_err());
    }
}
