//! End-to-end glue: raw [`FruitSample`] to model inputs, training, the
//! persisted model bundle, evaluation and the live inspector.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptor::{Inspector, LiveSettings, Observation};
use crate::error::{Error, Result};
use crate::evalmetrics::{build_report, MetricsReport, ScoredSample};
use crate::features::{
    estimate_chemistry, extract_parts, fuse, ChemistryModel, FeatureVector,
};
use crate::neuralmodel::{
    init, train, HeadOutput, ModelConfig, ModelFile, NetworkModel, TrainReport, TrainingSample,
};
use crate::preprocess::{
    calibrate_spectral, gaussian_smooth, normalize, resize, CalibrationReference, ImageRaster,
    SpectralReading,
};
use crate::seed;
use crate::synthcrop::{FruitSample, Variety};

pub const BUNDLE_LAYOUT: &str = "datesort-bundle/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub smoothing_sigma: f64,
    /// Luma difference from the border background that counts as fruit.
    pub segment_threshold: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            smoothing_sigma: 0.8,
            segment_threshold: 0.12,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing_sigma >= 0.0) {
            return Err(Error::NegativeSigma(self.smoothing_sigma));
        }
        if !(0.0..1.0).contains(&self.segment_threshold) {
            return Err(Error::InvalidDimensions(format!(
                "segment_threshold {} outside [0, 1)",
                self.segment_threshold
            )));
        }
        Ok(())
    }
}

/// A sample ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    /// CHW image at the model's input size.
    pub image: Vec<f64>,
    pub features: FeatureVector,
    pub spectral: SpectralReading,
    /// Mean foreground luma of the corrected image.
    pub brightness: f64,
}

fn apply_gain(img: &ImageRaster, gain: f64) -> Result<ImageRaster> {
    if gain == 1.0 {
        return Ok(img.clone());
    }
    let data = img.data().iter().map(|v| (v * gain).clamp(0.0, 1.0)).collect();
    ImageRaster::new(img.width(), img.height(), img.stage(), data)
}

/// normalise → gain correction → smoothing → segmentation and features;
/// spectra calibrated against the references shifted by the live
/// compensation.
pub fn prepare_sample(
    sample: &FruitSample,
    reference: &CalibrationReference,
    pre: &PreprocessConfig,
    live: &LiveSettings,
    input: (usize, usize),
) -> Result<PreparedSample> {
    let img = normalize(&sample.image)?;
    let img = apply_gain(&img, live.gain_correction)?;
    let img = gaussian_smooth(&img, pre.smoothing_sigma)?;
    let reference = reference.shifted(&live.spectral_compensation);
    let spectral = calibrate_spectral(&sample.spectral, &reference)?;
    let (mask, parts) = extract_parts(&img, &spectral, pre.segment_threshold)?;
    let brightness =
        mask.foreground().map(|(x, y)| img.luminance(x, y)).sum::<f64>() / mask.count() as f64;
    let features = fuse(&parts, None)?;
    let (h, w) = input;
    let image = resize(&img, w, h)?.to_chw();
    Ok(PreparedSample {
        image,
        features,
        spectral,
        brightness,
    })
}

pub fn to_training_sample(sample: &FruitSample, prepared: PreparedSample) -> TrainingSample {
    TrainingSample {
        image: prepared.image,
        features: prepared.features.values,
        variety: sample.variety.code(),
        spoiled: sample.attrs.spoiled,
        days: sample.attrs.days_to_expiry as f64,
    }
}

/// Prepare every sample at nominal settings, in parallel, preserving order.
pub fn prepare_all(
    samples: &[FruitSample],
    reference: &CalibrationReference,
    pre: &PreprocessConfig,
    input: (usize, usize),
) -> Result<Vec<PreparedSample>> {
    let live = LiveSettings::default();
    samples
        .par_iter()
        .map(|s| {
            prepare_sample(s, reference, pre, &live, input)
                .map_err(|e| Error::InvalidDatasetSpec(format!("sample {}: {e}", s.id)))
        })
        .collect()
}

/// Stratified split: per variety, a seeded shuffle sends
/// `round(n * eval_fraction)` (at least one) samples to evaluation.
/// Returns `(train, eval)` index lists in ascending order.
pub fn stratified_split(samples: &[FruitSample], eval_fraction: f64, seed_value: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::InvalidDatasetSpec(format!(
            "eval fraction {eval_fraction} must lie in (0, 1)"
        )));
    }
    let mut rng = seed::rng(seed_value);
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for v in Variety::ALL {
        let mut members: Vec<usize> =
            (0..samples.len()).filter(|&i| samples[i].variety == v).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let n_eval = ((members.len() as f64 * eval_fraction).round() as usize)
            .clamp(1, members.len().saturating_sub(1).max(1));
        eval.extend_from_slice(&members[..n_eval]);
        train.extend_from_slice(&members[n_eval..]);
    }
    train.sort_unstable();
    eval.sort_unstable();
    Ok((train, eval))
}

/// Trained network plus everything needed to run it on raw samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    pub preprocess: PreprocessConfig,
    pub reference: CalibrationReference,
    pub spoil_threshold: f64,
    pub chemistry: ChemistryModel,
    pub network: NetworkModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub layout: String,
    pub preprocess: PreprocessConfig,
    pub reference: CalibrationReference,
    pub spoil_threshold: f64,
    pub chemistry: ChemistryModel,
    pub network: ModelFile,
}

/// Prepare, fit the chemistry regressor and train the network.
pub fn train_pipeline(
    samples: &[FruitSample],
    reference: &CalibrationReference,
    pre: &PreprocessConfig,
    model_config: &ModelConfig,
) -> Result<(Pipeline, TrainReport)> {
    pre.validate()?;
    model_config.validate()?;
    let input = (model_config.input_height, model_config.input_width);
    let prepared = prepare_all(samples, reference, pre, input)?;
    let targets: Vec<[f64; 3]> = samples
        .iter()
        .map(|s| [s.attrs.moisture, s.attrs.tss, s.attrs.sugar])
        .collect();
    let spectra: Vec<SpectralReading> = prepared.iter().map(|p| p.spectral.clone()).collect();
    let chemistry = ChemistryModel::fit(&spectra, &targets)?;
    let data: Vec<TrainingSample> = samples
        .iter()
        .zip(prepared)
        .map(|(s, p)| to_training_sample(s, p))
        .collect();
    let mut network = init(model_config)?;
    let report = train(&mut network, &data)?;
    Ok((
        Pipeline {
            preprocess: pre.clone(),
            reference: reference.clone(),
            spoil_threshold: 0.5,
            chemistry,
            network,
        },
        report,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChemistryErrors {
    pub moisture_rmse: f64,
    pub tss_rmse: f64,
    pub sugar_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub chemistry: ChemistryErrors,
}

impl Pipeline {
    pub fn input_dims(&self) -> (usize, usize) {
        (self.network.config.input_height, self.network.config.input_width)
    }

    pub fn prepare(&self, sample: &FruitSample, live: &LiveSettings) -> Result<PreparedSample> {
        prepare_sample(sample, &self.reference, &self.preprocess, live, self.input_dims())
    }

    pub fn run(&self, sample: &FruitSample, live: &LiveSettings) -> Result<(PreparedSample, HeadOutput)> {
        let p = self.prepare(sample, live)?;
        let out = self.network.forward_one(&p.image, &p.features.values)?;
        Ok((p, out))
    }

    pub fn evaluate(&self, samples: &[FruitSample]) -> Result<Evaluation> {
        if samples.is_empty() {
            return Err(Error::NoSamples);
        }
        let live = LiveSettings {
            spoil_threshold: self.spoil_threshold,
            ..LiveSettings::default()
        };
        let results: Vec<(PreparedSample, HeadOutput)> = samples
            .par_iter()
            .map(|s| self.run(s, &live))
            .collect::<Result<_>>()?;
        let scored: Vec<ScoredSample> = samples
            .iter()
            .zip(&results)
            .map(|(s, (_, o))| ScoredSample {
                variety: s.variety.code(),
                variety_probs: o.variety_probs.clone(),
                spoiled: s.attrs.spoiled,
                spoil_score: o.spoil_prob,
                days: s.attrs.days_to_expiry as f64,
                predicted_days: o.decide(self.spoil_threshold).days as f64,
            })
            .collect();
        let names: Vec<&str> = Variety::ALL.iter().map(|v| v.name()).collect();
        let metrics = build_report(&scored, &names, self.spoil_threshold)?;
        let mut se = [0.0; 3];
        for (s, (p, _)) in samples.iter().zip(&results) {
            let est = estimate_chemistry(&p.spectral, &self.chemistry)?.to_array();
            let truth = [s.attrs.moisture, s.attrs.tss, s.attrs.sugar];
            for k in 0..3 {
                se[k] += (est[k] - truth[k]).powi(2);
            }
        }
        let n = samples.len() as f64;
        Ok(Evaluation {
            metrics,
            chemistry: ChemistryErrors {
                moisture_rmse: (se[0] / n).sqrt(),
                tss_rmse: (se[1] / n).sqrt(),
                sugar_rmse: (se[2] / n).sqrt(),
            },
        })
    }

    pub fn to_bundle(&self) -> ModelBundle {
        ModelBundle {
            layout: BUNDLE_LAYOUT.to_string(),
            preprocess: self.preprocess.clone(),
            reference: self.reference.clone(),
            spoil_threshold: self.spoil_threshold,
            chemistry: self.chemistry.clone(),
            network: self.network.to_file(),
        }
    }

    pub fn from_bundle(bundle: ModelBundle) -> Result<Self> {
        if bundle.layout != BUNDLE_LAYOUT {
            return Err(Error::UnknownLayoutVersion(bundle.layout));
        }
        bundle.reference.validate()?;
        Ok(Self {
            network: NetworkModel::from_file(bundle.network)?,
            preprocess: bundle.preprocess,
            reference: bundle.reference,
            spoil_threshold: bundle.spoil_threshold,
            chemistry: bundle.chemistry,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.to_bundle())?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("layout").and_then(|v| v.as_str()) {
            Some(BUNDLE_LAYOUT) => {}
            other => {
                return Err(Error::UnknownLayoutVersion(
                    other.unwrap_or("<missing>").to_string(),
                ))
            }
        }
        Self::from_bundle(serde_json::from_value(value)?)
    }
}

/// Items the vision stage cannot segment are rejected as spoiled.
impl Inspector for Pipeline {
    fn inspect(&self, sample: &FruitSample, settings: &LiveSettings) -> Result<Observation> {
        match self.run(sample, settings) {
            Ok((p, out)) => Ok(Observation {
                spoil_prob: out.spoil_prob,
                brightness: p.brightness,
            }),
            Err(Error::NoFruitDetected | Error::BoundingBoxTooSmall { .. } | Error::DegenerateGeometry) => Ok(Observation {
                spoil_prob: 1.0,
                brightness: 0.0,
            }),
            Err(e) => Err(e),
        }
    }
}
