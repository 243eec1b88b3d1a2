//! Conveyor stream with a reflected Gaussian random walk on lighting gain
//! and per-channel spectral baseline.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::FruitSample;
use crate::error::{Error, Result};
use crate::preprocess::{ImageRaster, SpectralReading, SPECTRAL_CHANNELS};
use crate::seed;

pub const GAIN_MIN: f64 = 0.5;
pub const GAIN_MAX: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftConfig {
    pub enabled: bool,
    /// Per-step standard deviation of the lighting gain walk.
    pub gain_sigma: f64,
    /// Per-step standard deviation of each channel's baseline walk.
    pub offset_sigma: f64,
    /// Reflecting bound on each channel's baseline magnitude.
    pub offset_cap: f64,
    /// Correlation between the channels' baseline steps.
    pub offset_correlation: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            gain_sigma: 0.02,
            offset_sigma: 0.005,
            offset_cap: 0.15,
            offset_correlation: 0.8,
        }
    }
}

impl DriftConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.gain_sigma) || !finite_nonneg(self.offset_sigma) || !finite_nonneg(self.offset_cap) {
            return Err(Error::InvalidDatasetSpec(
                "drift sigmas and offset_cap must be finite and non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.offset_correlation) {
            return Err(Error::InvalidDatasetSpec(format!(
                "offset_correlation {} outside [0, 1]",
                self.offset_correlation
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftState {
    pub lighting_gain: f64,
    pub spectral_offset: [f64; SPECTRAL_CHANNELS],
    pub time_step: u64,
}

impl Default for DriftState {
    fn default() -> Self {
        Self {
            lighting_gain: 1.0,
            spectral_offset: [0.0; SPECTRAL_CHANNELS],
            time_step: 0,
        }
    }
}

/// Fold `x` back into `[lo, hi]` by mirror reflection at the bounds.
pub fn reflect_into(mut x: f64, lo: f64, hi: f64) -> f64 {
    for _ in 0..64 {
        if x > hi {
            x = 2.0 * hi - x;
        } else if x < lo {
            x = 2.0 * lo - x;
        } else {
            return x;
        }
    }
    x.clamp(lo, hi)
}

impl DriftState {
    fn advance(&mut self, config: &DriftConfig, rng: &mut ChaCha8Rng) {
        let z: f64 = rng.sample(StandardNormal);
        self.lighting_gain =
            reflect_into(self.lighting_gain + config.gain_sigma * z, GAIN_MIN, GAIN_MAX);
        let common: f64 = rng.sample(StandardNormal);
        let rho = config.offset_correlation;
        for o in self.spectral_offset.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            let step = rho.sqrt() * common + (1.0 - rho).sqrt() * z;
            *o = reflect_into(*o + config.offset_sigma * step, -config.offset_cap, config.offset_cap);
        }
        self.time_step += 1;
    }

    /// The sample as seen on the belt under this drift state: raw pixels
    /// scaled by the lighting gain, spectral counts shifted by the baseline.
    pub fn apply(&self, sample: &FruitSample) -> FruitSample {
        let mut out = sample.clone();
        if self.lighting_gain != 1.0 {
            let data: Vec<f64> = sample
                .image
                .data()
                .iter()
                .map(|&v| (v * self.lighting_gain).round().clamp(0.0, 255.0))
                .collect();
            out.image = ImageRaster::new(
                sample.image.width(),
                sample.image.height(),
                sample.image.stage(),
                data,
            )
            .expect("same dimensions");
        }
        let mut values = sample.spectral.values;
        for (v, o) in values.iter_mut().zip(self.spectral_offset.iter()) {
            *v += o;
        }
        out.spectral = SpectralReading {
            values,
            kind: sample.spectral.kind,
        };
        out
    }
}

/// Endless belt over a dataset: each pass visits every sample once in a
/// freshly shuffled order.
pub struct ConveyorStream<'a> {
    dataset: &'a [FruitSample],
    order: Vec<usize>,
    cursor: usize,
    config: DriftConfig,
    state: DriftState,
    rng: ChaCha8Rng,
}

pub fn conveyor_stream(
    dataset: &[FruitSample],
    drift: DriftConfig,
    seed: u64,
) -> Result<ConveyorStream<'_>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    drift.validate()?;
    Ok(ConveyorStream {
        dataset,
        order: (0..dataset.len()).collect(),
        cursor: dataset.len(),
        config: drift,
        state: DriftState::default(),
        rng: seed::rng(seed),
    })
}

impl ConveyorStream<'_> {
    pub fn drift_state(&self) -> &DriftState {
        &self.state
    }
}

impl Iterator for ConveyorStream<'_> {
    type Item = (FruitSample, DriftState);

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let original = &self.dataset[self.order[self.cursor]];
        self.cursor += 1;
        if !self.config.enabled {
            self.state.time_step += 1;
            return Some((original.clone(), self.state.clone()));
        }
        self.state.advance(&self.config, &mut self.rng);
        Some((self.state.apply(original), self.state.clone()))
    }
}
