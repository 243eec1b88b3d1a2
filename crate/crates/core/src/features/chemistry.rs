//! Affine spectral regressors for moisture, TSS and sugar.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{SpectralKind, SpectralReading, SPECTRAL_CHANNELS};

pub const TARGETS: [&str; 3] = ["moisture", "tss", "sugar"];
const BOUNDS: [(f64, f64); 3] = [(0.0, 100.0), (0.0, 100.0), (0.0, 100.0)];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChemistryEstimate {
    pub moisture: f64,
    pub tss: f64,
    pub sugar: f64,
}

impl ChemistryEstimate {
    pub fn to_array(self) -> [f64; 3] {
        [self.moisture, self.tss, self.sugar]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChemistryModel {
    /// One row of 18 weights per target.
    pub weights: Vec<[f64; SPECTRAL_CHANNELS]>,
    pub bias: [f64; 3],
}

impl ChemistryModel {
    pub fn constant(bias: [f64; 3]) -> Self {
        Self {
            weights: vec![[0.0; SPECTRAL_CHANNELS]; 3],
            bias,
        }
    }

    /// Ordinary least squares per target (SVD solve, so collinear channels
    /// fall back to the minimum-norm solution).
    pub fn fit(readings: &[SpectralReading], targets: &[[f64; 3]]) -> Result<Self> {
        if readings.len() != targets.len() {
            return Err(Error::LengthMismatch(readings.len(), targets.len()));
        }
        if readings.len() <= SPECTRAL_CHANNELS {
            return Err(Error::FitFailed(format!(
                "need more than {SPECTRAL_CHANNELS} readings, got {}",
                readings.len()
            )));
        }
        if readings.iter().any(|r| r.kind != SpectralKind::Calibrated) {
            return Err(Error::UncalibratedInput);
        }
        let n = readings.len();
        let cols = SPECTRAL_CHANNELS + 1;
        let x = DMatrix::from_fn(n, cols, |i, j| {
            if j < SPECTRAL_CHANNELS {
                readings[i].values[j]
            } else {
                1.0
            }
        });
        let svd = x.svd(true, true);
        let mut weights = Vec::with_capacity(3);
        let mut bias = [0.0; 3];
        for t in 0..3 {
            let y = DVector::from_fn(n, |i, _| targets[i][t]);
            let beta = svd
                .solve(&y, 1e-12)
                .map_err(|e| Error::FitFailed(e.to_string()))?;
            if beta.iter().any(|b| !b.is_finite()) {
                return Err(Error::FitFailed("non-finite coefficients".into()));
            }
            let mut w = [0.0; SPECTRAL_CHANNELS];
            w.copy_from_slice(&beta.as_slice()[..SPECTRAL_CHANNELS]);
            weights.push(w);
            bias[t] = beta[SPECTRAL_CHANNELS];
        }
        Ok(Self { weights, bias })
    }

    fn unclamped(&self, reading: &SpectralReading) -> [f64; 3] {
        let mut out = self.bias;
        for (t, w) in self.weights.iter().enumerate() {
            out[t] += w.iter().zip(&reading.values).map(|(a, b)| a * b).sum::<f64>();
        }
        out
    }
}

pub fn estimate_chemistry(
    spectral: &SpectralReading,
    model: &ChemistryModel,
) -> Result<ChemistryEstimate> {
    if spectral.kind != SpectralKind::Calibrated {
        return Err(Error::UncalibratedInput);
    }
    let raw = model.unclamped(spectral);
    let v: Vec<f64> = raw
        .iter()
        .zip(BOUNDS)
        .map(|(x, (lo, hi))| x.clamp(lo, hi))
        .collect();
    Ok(ChemistryEstimate {
        moisture: v[0],
        tss: v[1],
        sugar: v[2],
    })
}
