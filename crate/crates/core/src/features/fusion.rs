//! Frozen 46-slot feature layout, scaler and CSV export.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ColorStats, GeometricFeatures};
use crate::error::{Error, Result};
use crate::preprocess::{SpectralKind, SpectralReading, SPECTRAL_CHANNELS};

pub const FEATURE_LAYOUT: &str = "fv46/1";
pub const FEATURE_COUNT: usize = 46;

/// Slot names for [`FEATURE_LAYOUT`].
pub const SLOT_NAMES: [&str; FEATURE_COUNT] = [
    "area",
    "perimeter",
    "major_axis",
    "minor_axis",
    "eccentricity",
    "solidity",
    "convex_area",
    "aspect_ratio",
    "r_mean",
    "r_std",
    "r_skew",
    "r_kurt",
    "g_mean",
    "g_std",
    "g_skew",
    "g_kurt",
    "b_mean",
    "b_std",
    "b_skew",
    "b_kurt",
    "entropy",
    "wav_ll2",
    "wav_lh1",
    "wav_hl1",
    "wav_hh1",
    "wav_lh2",
    "wav_hl2",
    "wav_hh2",
    "spec_410",
    "spec_435",
    "spec_460",
    "spec_485",
    "spec_510",
    "spec_535",
    "spec_560",
    "spec_585",
    "spec_610",
    "spec_645",
    "spec_680",
    "spec_705",
    "spec_730",
    "spec_760",
    "spec_810",
    "spec_860",
    "spec_900",
    "spec_940",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub layout: String,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_COUNT {
            return Err(Error::ShapeMismatch(format!(
                "feature vector has {} slots, expected {FEATURE_COUNT}",
                values.len()
            )));
        }
        Ok(Self {
            layout: FEATURE_LAYOUT.to_string(),
            values,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct FeatureParts {
    pub geometry: Option<GeometricFeatures>,
    pub color: Option<ColorStats>,
    pub entropy: Option<f64>,
    pub wavelet: Option<[f64; 7]>,
    pub spectral: Option<SpectralReading>,
}

/// Per-slot z-score with training-set statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Population statistics. Each slot's values are sorted before summing so
    /// the result does not depend on sample order. Zero spread maps to scale 1.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::NoSamples)?;
        let dim = first.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::LengthMismatch(dim, bad.len()));
        }
        let n = rows.len() as f64;
        let mut mean = Vec::with_capacity(dim);
        let mut scale = Vec::with_capacity(dim);
        let mut col = Vec::with_capacity(rows.len());
        for j in 0..dim {
            col.clear();
            col.extend(rows.iter().map(|r| r[j]));
            col.sort_by(f64::total_cmp);
            let m = col.iter().sum::<f64>() / n;
            let mut dev: Vec<f64> = col.iter().map(|v| (v - m) * (v - m)).collect();
            dev.sort_by(f64::total_cmp);
            let sd = (dev.iter().sum::<f64>() / n).sqrt();
            mean.push(m);
            scale.push(if sd > 1e-12 * m.abs().max(1.0) { sd } else { 1.0 });
        }
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.dim() {
            return Err(Error::LengthMismatch(self.dim(), values.len()));
        }
        Ok(values
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

pub fn fuse(parts: &FeatureParts, scaler: Option<&Standardizer>) -> Result<FeatureVector> {
    let geometry = parts.geometry.ok_or(Error::IncompleteFusionInput("geometry"))?;
    let color = parts.color.ok_or(Error::IncompleteFusionInput("color"))?;
    let entropy = parts.entropy.ok_or(Error::IncompleteFusionInput("entropy"))?;
    let wavelet = parts.wavelet.ok_or(Error::IncompleteFusionInput("wavelet"))?;
    let spectral = parts
        .spectral
        .as_ref()
        .ok_or(Error::IncompleteFusionInput("spectral"))?;
    if spectral.kind != SpectralKind::Calibrated {
        return Err(Error::UncalibratedInput);
    }
    let mut values = Vec::with_capacity(FEATURE_COUNT);
    values.extend_from_slice(&geometry.to_array());
    values.extend_from_slice(&color.to_array());
    values.push(entropy);
    values.extend_from_slice(&wavelet);
    values.extend_from_slice(&spectral.values);
    debug_assert_eq!(values.len(), 28 + SPECTRAL_CHANNELS);
    if let Some(s) = scaler {
        values = s.transform(&values)?;
    }
    FeatureVector::new(values)
}

/// One row in the exported feature table.
pub struct FeatureRow<'a> {
    pub id: u64,
    pub variety: &'a str,
    pub ripeness: &'a str,
    pub spoiled: bool,
    pub days_to_expiry: u32,
    pub features: &'a FeatureVector,
}

pub fn feature_table_csv(rows: &[FeatureRow<'_>]) -> String {
    let mut out = String::from("id,variety,ripeness,spoiled,days_to_expiry");
    for name in SLOT_NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            r.id, r.variety, r.ripeness, r.spoiled as u8, r.days_to_expiry
        );
        for v in &r.features.values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ChannelStats;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn parts() -> FeatureParts {
        let mut values = [0.0; SPECTRAL_CHANNELS];
        for (i, v) in values.iter_mut().enumerate() {
            *v = 0.1 + 0.01 * i as f64;
        }
        FeatureParts {
            geometry: Some(GeometricFeatures {
                area: 100.0,
                perimeter: 36.0,
                major_axis: 12.0,
                minor_axis: 10.0,
                eccentricity: 0.55,
                solidity: 0.99,
                convex_area: 101.0,
                aspect_ratio: 1.2,
            }),
            color: Some(ColorStats {
                channels: [ChannelStats {
                    mean: 0.5,
                    std: 0.1,
                    skewness: 0.2,
                    kurtosis: -0.3,
                }; 3],
            }),
            entropy: Some(4.5),
            wavelet: Some([1.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6]),
            spectral: Some(SpectralReading {
                values,
                kind: SpectralKind::Calibrated,
            }),
        }
    }

    #[test]
    fn identity_scaler_is_verbatim() {
        let p = parts();
        let plain = fuse(&p, None).unwrap();
        let scaled = fuse(&p, Some(&Standardizer::identity(FEATURE_COUNT))).unwrap();
        assert_eq!(plain, scaled);
        assert_eq!(plain.values.len(), 46);
        assert_eq!(plain.values[0], 100.0);
        assert_eq!(plain.values[20], 4.5);
        assert_eq!(plain.values[21], 1.0);
        assert_eq!(plain.values[28], 0.1);
        assert_eq!(plain.layout, FEATURE_LAYOUT);
    }

    #[test]
    fn missing_modality_is_named() {
        let mut p = parts();
        p.wavelet = None;
        let err = fuse(&p, None).unwrap_err().to_string();
        assert!(err.contains("incomplete fusion input"), "{err}");
        assert!(err.contains("wavelet"));
    }

    fn random_rows(seed: u64) -> Vec<Vec<f64>> {
        let mut rng = crate::seed::rng(seed);
        (0..50)
            .map(|_| {
                (0..FEATURE_COUNT)
                    .map(|j| j as f64 * 10.0 + rng.random::<f64>() * (j + 1) as f64)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn fitted_scaler_standardises_training_set() {
        let rows = random_rows(1);
        let s = Standardizer::fit(&rows).unwrap();
        let t: Vec<Vec<f64>> = rows.iter().map(|r| s.transform(r).unwrap()).collect();
        let n = t.len() as f64;
        for j in 0..FEATURE_COUNT {
            let m = t.iter().map(|r| r[j]).sum::<f64>() / n;
            let v = t.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            assert!(m.abs() < 1e-9);
            assert!((v.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn scaler_ignores_sample_order() {
        let rows = random_rows(2);
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut crate::seed::rng(9));
        assert_eq!(Standardizer::fit(&rows).unwrap(), Standardizer::fit(&shuffled).unwrap());
    }

    #[test]
    fn constant_slot_keeps_unit_scale() {
        let rows = vec![vec![3.0, 1.0], vec![3.0, 2.0]];
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.scale[0], 1.0);
        assert_eq!(s.transform(&[3.0, 1.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn csv_has_all_slots() {
        let fv = fuse(&parts(), None).unwrap();
        let csv = feature_table_csv(&[FeatureRow {
            id: 3,
            variety: "AJWA",
            ripeness: "TAMAR",
            spoiled: false,
            days_to_expiry: 40,
            features: &fv,
        }]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap().split(',').count(), 51);
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 51);
        assert_eq!(row[..3], ["3", "AJWA", "TAMAR"]);
    }
}
