//! Image and spectral preprocessing: bilinear resize, 0–1 normalisation,
//! separable Gaussian smoothing and dark/white reflectance calibration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;
pub const SPECTRAL_CHANNELS: usize = 18;
/// Upper clamp for calibrated reflectance; specular readings may exceed white.
pub const REFLECTANCE_CEILING: f64 = 1.2;

/// AS7265x channel centres in nanometres.
pub const WAVELENGTHS_NM: [f64; SPECTRAL_CHANNELS] = [
    410.0, 435.0, 460.0, 485.0, 510.0, 535.0, 560.0, 585.0, 610.0, 645.0, 680.0, 705.0, 730.0,
    760.0, 810.0, 860.0, 900.0, 940.0,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelStage {
    /// Integer-valued samples in `0..=255`.
    Raw,
    /// Real samples in `[0, 1]`.
    Normalized,
}

/// Row-major interleaved RGB raster.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRaster {
    width: usize,
    height: usize,
    stage: PixelStage,
    data: Vec<f64>,
}

impl ImageRaster {
    pub fn new(width: usize, height: usize, stage: PixelStage, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions(format!("{width}x{height}")));
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::InvalidDimensions(format!(
                "{width}x{height}x3 needs {} values, got {}",
                width * height * CHANNELS,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            stage,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, stage: PixelStage, value: f64) -> Result<Self> {
        Self::new(width, height, stage, vec![value; width * height * CHANNELS])
    }

    pub fn from_raw_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            PixelStage::Raw,
            bytes.iter().map(|&b| f64::from(b)).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn stage(&self) -> PixelStage {
        self.stage
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// ITU-R BT.601 luma of pixel `(x, y)`.
    #[inline]
    pub fn luminance(&self, x: usize, y: usize) -> f64 {
        let [r, g, b] = self.pixel(x, y);
        luma(r, g, b)
    }

    /// Raw samples rounded and clamped to bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Sub-image with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidDimensions(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + width * CHANNELS]);
        }
        Self::new(width, height, self.stage, data)
    }

    /// Planar channel-major copy (`[c][y][x]`), the layout the CNN consumes.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * CHANNELS];
        for (p, px) in self.data.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                out[c * plane + p] = px[c];
            }
        }
        out
    }
}

#[inline]
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Bilinear resize with pixel-centre alignment.
pub fn resize(img: &ImageRaster, target_w: usize, target_h: usize) -> Result<ImageRaster> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::InvalidDimensions(format!(
            "target {target_w}x{target_h}"
        )));
    }
    if target_w == img.width && target_h == img.height {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / target_w as f64;
    let sy = img.height as f64 / target_h as f64;
    let taps = |t: usize, scale: f64, len: usize| {
        let pos = ((t as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, pos - i0 as f64)
    };
    let mut data = Vec::with_capacity(target_w * target_h * CHANNELS);
    for y in 0..target_h {
        let (y0, y1, fy) = taps(y, sy, img.height);
        for x in 0..target_w {
            let (x0, x1, fx) = taps(x, sx, img.width);
            let (a, b, c, d) = (
                img.pixel(x0, y0),
                img.pixel(x1, y0),
                img.pixel(x0, y1),
                img.pixel(x1, y1),
            );
            for ch in 0..CHANNELS {
                let top = (1.0 - fx) * a[ch] + fx * b[ch];
                let bottom = (1.0 - fx) * c[ch] + fx * d[ch];
                data.push((1.0 - fy) * top + fy * bottom);
            }
        }
    }
    ImageRaster::new(target_w, target_h, img.stage, data)
}

/// Scale raw 8-bit samples into `[0, 1]`.
pub fn normalize(img: &ImageRaster) -> Result<ImageRaster> {
    if img.stage == PixelStage::Normalized {
        return Err(Error::DoubleNormalization);
    }
    let data = img
        .data
        .iter()
        .map(|&v| (v / 255.0).clamp(0.0, 1.0))
        .collect();
    ImageRaster::new(img.width, img.height, PixelStage::Normalized, data)
}

/// Normalised Gaussian taps for offsets `-radius..=radius`, radius = ceil(3σ).
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
#[inline]
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Separable Gaussian blur per channel with reflect padding.
pub fn gaussian_smooth(img: &ImageRaster, sigma: f64) -> Result<ImageRaster> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::NegativeSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (img.width, img.height);
    let (lo, hi) = img
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });

    let mut horizontal = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; CHANNELS];
            for (t, &kv) in kernel.iter().enumerate() {
                let sx = reflect(x as i64 + t as i64 - radius, w);
                let i = (y * w + sx) * CHANNELS;
                for c in 0..CHANNELS {
                    acc[c] += kv * img.data[i + c];
                }
            }
            let o = (y * w + x) * CHANNELS;
            horizontal[o..o + CHANNELS].copy_from_slice(&acc);
        }
    }

    let mut out = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; CHANNELS];
            for (t, &kv) in kernel.iter().enumerate() {
                let sy = reflect(y as i64 + t as i64 - radius, h);
                let i = (sy * w + x) * CHANNELS;
                for c in 0..CHANNELS {
                    acc[c] += kv * horizontal[i + c];
                }
            }
            let o = (y * w + x) * CHANNELS;
            for c in 0..CHANNELS {
                out[o + c] = acc[c].clamp(lo, hi);
            }
        }
    }
    ImageRaster::new(w, h, img.stage, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralKind {
    Raw,
    Calibrated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReading {
    pub values: [f64; SPECTRAL_CHANNELS],
    pub kind: SpectralKind,
}

impl SpectralReading {
    pub fn raw(values: [f64; SPECTRAL_CHANNELS]) -> Self {
        Self {
            values,
            kind: SpectralKind::Raw,
        }
    }
}

/// Dark (shutter closed) and white (full reflectance tile) sensor readings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReference {
    pub dark: [f64; SPECTRAL_CHANNELS],
    pub white: [f64; SPECTRAL_CHANNELS],
}

impl CalibrationReference {
    pub fn new(dark: [f64; SPECTRAL_CHANNELS], white: [f64; SPECTRAL_CHANNELS]) -> Result<Self> {
        let reference = Self { dark, white };
        reference.validate()?;
        Ok(reference)
    }

    pub fn validate(&self) -> Result<()> {
        match (0..SPECTRAL_CHANNELS).find(|&i| self.white[i] <= self.dark[i]) {
            Some(channel) => Err(Error::DegenerateReference { channel }),
            None => Ok(()),
        }
    }

    /// Both references re-measured under an additive baseline shift.
    pub fn shifted(&self, offset: &[f64; SPECTRAL_CHANNELS]) -> Self {
        let mut out = self.clone();
        for i in 0..SPECTRAL_CHANNELS {
            out.dark[i] += offset[i];
            out.white[i] += offset[i];
        }
        out
    }
}

/// `(raw - dark) / (white - dark)`, clamped to `[0, 1.2]`.
pub fn calibrate_spectral(
    raw: &SpectralReading,
    reference: &CalibrationReference,
) -> Result<SpectralReading> {
    if raw.kind != SpectralKind::Raw {
        return Err(Error::SpectralKind { expected: "raw" });
    }
    reference.validate()?;
    let mut values = [0.0; SPECTRAL_CHANNELS];
    for (i, v) in values.iter_mut().enumerate() {
        let r = (raw.values[i] - reference.dark[i]) / (reference.white[i] - reference.dark[i]);
        *v = r.clamp(0.0, REFLECTANCE_CEILING);
    }
    Ok(SpectralReading {
        values,
        kind: SpectralKind::Calibrated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> CalibrationReference {
        let mut dark = [0.0; SPECTRAL_CHANNELS];
        let mut white = [0.0; SPECTRAL_CHANNELS];
        for i in 0..SPECTRAL_CHANNELS {
            dark[i] = 0.03 + 0.001 * i as f64;
            white[i] = 0.85 + 0.004 * i as f64;
        }
        CalibrationReference::new(dark, white).unwrap()
    }

    fn checkerboard(n: usize) -> ImageRaster {
        let mut img = ImageRaster::filled(n, n, PixelStage::Normalized, 0.0).unwrap();
        for y in 0..n {
            for x in 0..n {
                let v = if (x + y) % 2 == 0 { 1.0 } else { 0.25 };
                img.set_pixel(x, y, [v, v * 0.5, 1.0 - v]);
            }
        }
        img
    }

    #[test]
    fn resize_identity_is_bit_identical() {
        let img = checkerboard(7);
        assert_eq!(resize(&img, 7, 7).unwrap(), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = ImageRaster::filled(13, 9, PixelStage::Normalized, 0.37).unwrap();
        for (w, h) in [(1, 1), (5, 31), (64, 64), (4, 2)] {
            let out = resize(&img, w, h).unwrap();
            assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
        }
    }

    #[test]
    fn resize_halving_checkerboard_averages_blocks() {
        let img = checkerboard(4);
        let out = resize(&img, 2, 2).unwrap();
        for by in 0..2 {
            for bx in 0..2 {
                let mut mean = [0.0; 3];
                for dy in 0..2 {
                    for dx in 0..2 {
                        let p = img.pixel(2 * bx + dx, 2 * by + dy);
                        for c in 0..3 {
                            mean[c] += p[c] / 4.0;
                        }
                    }
                }
                let got = out.pixel(bx, by);
                for c in 0..3 {
                    assert!((got[c] - mean[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn resize_rejects_zero_target() {
        assert!(matches!(
            resize(&checkerboard(4), 0, 3),
            Err(Error::InvalidDimensions(_))
        ));
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let zero = ImageRaster::filled(3, 2, PixelStage::Raw, 0.0).unwrap();
        assert!(normalize(&zero).unwrap().data().iter().all(|&v| v == 0.0));
        let full = ImageRaster::filled(3, 2, PixelStage::Raw, 255.0).unwrap();
        assert!(normalize(&full).unwrap().data().iter().all(|&v| v == 1.0));
        let mid = ImageRaster::filled(1, 1, PixelStage::Raw, 128.0).unwrap();
        let v = normalize(&mid).unwrap().data()[0];
        assert!((v - 0.50196).abs() < 1e-5);
        assert_eq!(v, 128.0 / 255.0);
    }

    #[test]
    fn normalize_twice_is_an_error() {
        let img = ImageRaster::filled(2, 2, PixelStage::Raw, 9.0).unwrap();
        let once = normalize(&img).unwrap();
        assert!(matches!(normalize(&once), Err(Error::DoubleNormalization)));
    }

    #[test]
    fn smoothing_with_zero_sigma_is_identity() {
        let img = checkerboard(6);
        assert_eq!(gaussian_smooth(&img, 0.0).unwrap(), img);
    }

    #[test]
    fn smoothing_keeps_constant_image() {
        let img = ImageRaster::filled(9, 5, PixelStage::Normalized, 0.6).unwrap();
        for sigma in [0.3, 0.8, 2.5, 10.0] {
            let out = gaussian_smooth(&img, sigma).unwrap();
            assert!(out.data().iter().all(|&v| (v - 0.6).abs() < 1e-12));
        }
    }

    #[test]
    fn smoothing_conserves_interior_point_mass() {
        let mut img = ImageRaster::filled(21, 21, PixelStage::Normalized, 0.0).unwrap();
        img.set_pixel(10, 10, [1.0, 0.5, 0.25]);
        let out = gaussian_smooth(&img, 1.0).unwrap();
        for (c, expected) in [1.0, 0.5, 0.25].into_iter().enumerate() {
            let mass: f64 = out.data().iter().skip(c).step_by(3).sum();
            assert!((mass - expected).abs() < 1e-9, "channel {c}: {mass}");
        }
    }

    #[test]
    fn smoothing_rejects_negative_sigma() {
        assert!(matches!(
            gaussian_smooth(&checkerboard(3), -0.1),
            Err(Error::NegativeSigma(_))
        ));
    }

    #[test]
    fn kernel_radius_is_ceil_three_sigma() {
        assert_eq!(gaussian_kernel(0.8).len(), 2 * 3 + 1);
        assert_eq!(gaussian_kernel(1.0).len(), 7);
        assert_eq!(gaussian_kernel(1.01).len(), 2 * 4 + 1);
        assert!((gaussian_kernel(1.7).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn calibration_endpoints() {
        let r = reference();
        let white = calibrate_spectral(&SpectralReading::raw(r.white), &r).unwrap();
        assert!(white.values.iter().all(|&v| v == 1.0));
        assert_eq!(white.kind, SpectralKind::Calibrated);
        let dark = calibrate_spectral(&SpectralReading::raw(r.dark), &r).unwrap();
        assert!(dark.values.iter().all(|&v| v == 0.0));
        let mut mid = [0.0; SPECTRAL_CHANNELS];
        for i in 0..SPECTRAL_CHANNELS {
            mid[i] = 0.5 * (r.dark[i] + r.white[i]);
        }
        let mid = calibrate_spectral(&SpectralReading::raw(mid), &r).unwrap();
        assert!(mid.values.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn calibration_rejects_degenerate_reference() {
        let mut r = reference();
        r.white[4] = r.dark[4];
        assert!(matches!(
            calibrate_spectral(&SpectralReading::raw([0.5; 18]), &r),
            Err(Error::DegenerateReference { channel: 4 })
        ));
        assert!(CalibrationReference::new(r.dark, r.white).is_err());
    }

    #[test]
    fn calibration_clamps_to_ceiling() {
        let r = reference();
        let out = calibrate_spectral(&SpectralReading::raw([5.0; 18]), &r).unwrap();
        assert!(out.values.iter().all(|&v| v == REFLECTANCE_CEILING));
        let out = calibrate_spectral(&SpectralReading::raw([-1.0; 18]), &r).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn calibrating_calibrated_reading_fails() {
        let r = reference();
        let once = calibrate_spectral(&SpectralReading::raw(r.white), &r).unwrap();
        assert!(calibrate_spectral(&once, &r).is_err());
    }

    fn image_strategy() -> impl Strategy<Value = ImageRaster> {
        (2usize..12, 2usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f64..1.0, w * h * 3).prop_map(move |data| {
                ImageRaster::new(w, h, PixelStage::Normalized, data).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn smoothing_never_expands_range(img in image_strategy(), sigma in 0.1f64..3.0) {
            let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = gaussian_smooth(&img, sigma).unwrap();
            prop_assert!(out.data().iter().all(|&v| v >= lo && v <= hi));
        }

        #[test]
        fn resize_twice_to_same_dims_is_idempotent(img in image_strategy(), w in 1usize..16, h in 1usize..16) {
            let once = resize(&img, w, h).unwrap();
            let twice = resize(&once, w, h).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn resize_preserves_value_range(img in image_strategy(), w in 1usize..16, h in 1usize..16) {
            let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = resize(&img, w, h).unwrap();
            prop_assert!(out.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        }

        #[test]
        fn calibration_is_scale_invariant(
            raw in proptest::array::uniform18(0.0f64..2.0),
            scale in 0.1f64..20.0,
        ) {
            let r = reference();
            let base = calibrate_spectral(&SpectralReading::raw(raw), &r).unwrap();
            let mut scaled_raw = raw;
            let mut scaled = r.clone();
            for i in 0..SPECTRAL_CHANNELS {
                scaled_raw[i] *= scale;
                scaled.dark[i] *= scale;
                scaled.white[i] *= scale;
            }
            let other = calibrate_spectral(&SpectralReading::raw(scaled_raw), &scaled).unwrap();
            for i in 0..SPECTRAL_CHANNELS {
                prop_assert!((base.values[i] - other.values[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smoothing_preserves_mean_of_constant_padded_interior_image() {
        // Interior-dominated content on a constant surround.
        let mut img = ImageRaster::filled(40, 40, PixelStage::Normalized, 0.2).unwrap();
        for y in 15..25 {
            for x in 15..25 {
                let v = 0.2 + 0.05 * ((x * 7 + y * 3) % 11) as f64;
                img.set_pixel(x, y, [v, v, v]);
            }
        }
        let mean = |i: &ImageRaster| i.data().iter().sum::<f64>() / i.data().len() as f64;
        let out = gaussian_smooth(&img, 0.8).unwrap();
        assert!((mean(&img) - mean(&out)).abs() < 1e-6);
    }
}
