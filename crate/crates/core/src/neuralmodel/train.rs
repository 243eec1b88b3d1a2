//! Minibatch SGD with momentum, on-the-fly augmentation and stratified
//! k-fold cross-validation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{init, layers, sigmoid, softmax, ModelConfig, NetworkModel, SHELF_SCALE};
use crate::error::{Error, Result};
use crate::features::Standardizer;
use crate::seed;
use crate::synthcrop::VARIETY_COUNT;

/// Samples per gradient work unit. Partial sums are combined in chunk order
/// so results do not depend on the thread count.
const CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Augmentation {
    pub hflip: bool,
    /// Multiplicative jitter half-width (0.1 = ±10%); 0 disables.
    pub brightness: f64,
    pub rot90: bool,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            hflip: true,
            brightness: 0.1,
            rot90: true,
        }
    }
}

impl Augmentation {
    pub fn none() -> Self {
        Self {
            hflip: false,
            brightness: 0.0,
            rot90: false,
        }
    }
}

/// One training example: CHW image in `[0, 1]`, full side-input vector and
/// targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub image: Vec<f64>,
    pub features: Vec<f64>,
    pub variety: usize,
    pub spoiled: bool,
    pub days: f64,
}

/// Randomly flipped, rotated and brightness-scaled copy of a CHW image.
pub fn augment(image: &[f64], height: usize, width: usize, aug: &Augmentation, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = image.to_vec();
    let hw = height * width;
    if aug.hflip && rng.random::<f64>() < 0.5 {
        for plane in out.chunks_exact_mut(hw) {
            for row in plane.chunks_exact_mut(width) {
                row.reverse();
            }
        }
    }
    if aug.rot90 {
        let turns = rng.random_range(0..4);
        for _ in 0..turns {
            let src = out.clone();
            // Clockwise: (x, y) -> (n - 1 - y, x) on a square n×n plane.
            let n = width;
            for (plane, dst) in src.chunks_exact(hw).zip(out.chunks_exact_mut(hw)) {
                for y in 0..n {
                    for x in 0..n {
                        dst[x * n + (n - 1 - y)] = plane[y * n + x];
                    }
                }
            }
        }
    }
    if aug.brightness > 0.0 {
        let f = 1.0 + rng.random_range(-aug.brightness..=aug.brightness);
        for v in &mut out {
            *v = (*v * f).clamp(0.0, 1.0);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub variety: f64,
    pub spoilage: f64,
    pub shelf_life: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.total += o.total;
        self.variety += o.variety;
        self.spoilage += o.spoilage;
        self.shelf_life += o.shelf_life;
    }

    fn scale(&mut self, s: f64) {
        self.total *= s;
        self.variety *= s;
        self.spoilage *= s;
        self.shelf_life *= s;
    }
}

/// Loss of one sample and its gradient w.r.t. the head logits.
pub(crate) fn head_loss(
    z: &[f64],
    variety: usize,
    spoiled: bool,
    days: f64,
    config: &ModelConfig,
) -> (LossParts, Vec<f64>) {
    let p = softmax(&z[..VARIETY_COUNT]);
    let m = z[..VARIETY_COUNT].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z[..VARIETY_COUNT].iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let ce = lse - z[variety];

    let zs = z[VARIETY_COUNT];
    let t = if spoiled { 1.0 } else { 0.0 };
    let bce = zs.max(0.0) - zs * t + (-zs.abs()).exp().ln_1p();

    let target = days / SHELF_SCALE;
    let r = z[VARIETY_COUNT + 1] - target;
    let mse = r * r;

    let mut dz = p;
    dz[variety] -= 1.0;
    dz.push(config.spoilage_weight * (sigmoid(zs) - t));
    dz.push(config.shelf_weight * 2.0 * r);
    let parts = LossParts {
        total: ce + config.spoilage_weight * bce + config.shelf_weight * mse,
        variety: ce,
        spoilage: bce,
        shelf_life: mse,
    };
    (parts, dz)
}

/// Mean loss and mean gradient over a batch of prepared inputs.
pub fn batch_gradient(
    model: &NetworkModel,
    images: &[&[f64]],
    sides: &[&[f64]],
    targets: &[(usize, bool, f64)],
) -> Result<(Vec<f64>, LossParts)> {
    let n = images.len();
    if n == 0 {
        return Err(Error::NoSamples);
    }
    if sides.len() != n || targets.len() != n {
        return Err(Error::LengthMismatch(n, sides.len().min(targets.len())));
    }
    let idx: Vec<usize> = (0..n).collect();
    let partials: Vec<(Vec<f64>, LossParts)> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; model.layout.total];
            let mut loss = LossParts::default();
            for &i in chunk {
                let cache = layers::forward(&model.layout, &model.params, images[i], sides[i]);
                let (variety, spoiled, days) = targets[i];
                let (l, dz) = head_loss(cache.logits(), variety, spoiled, days, &model.config);
                layers::backward(&model.layout, &model.params, &cache, &dz, &mut grad);
                loss.add(&l);
            }
            (grad, loss)
        })
        .collect();
    let mut grad = vec![0.0; model.layout.total];
    let mut loss = LossParts::default();
    for (g, l) in partials {
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
        loss.add(&l);
    }
    let inv = 1.0 / n as f64;
    for g in &mut grad {
        *g *= inv;
    }
    loss.scale(inv);
    Ok((grad, loss))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub total: f64,
    pub variety: f64,
    pub spoilage: f64,
    pub shelf_life: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub samples: usize,
    pub epochs: Vec<EpochLosses>,
    pub final_weights_digest: String,
    /// Not serialised so report files stay byte-stable across runs.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl PartialEq for TrainReport {
    fn eq(&self, other: &Self) -> bool {
        self.samples == other.samples
            && self.epochs == other.epochs
            && self.final_weights_digest == other.final_weights_digest
    }
}

/// Fit the side-input scaler on `data`, then run `config.epochs` epochs.
pub fn train(model: &mut NetworkModel, data: &[TrainingSample]) -> Result<TrainReport> {
    let start = Instant::now();
    let config = model.config.clone();
    if data.len() < config.batch_size {
        return Err(Error::InvalidModelConfig(format!(
            "dataset of {} samples is smaller than batch_size {}",
            data.len(),
            config.batch_size
        )));
    }
    let selected = config.selected_features();
    let picked: Vec<Vec<f64>> = data
        .iter()
        .map(|s| {
            if s.features.len() != config.feature_dim {
                return Err(Error::ShapeMismatch(format!(
                    "feature vector has {} slots, expected {}",
                    s.features.len(),
                    config.feature_dim
                )));
            }
            Ok(selected.iter().map(|&i| s.features[i]).collect())
        })
        .collect::<Result<_>>()?;
    model.feature_scaler = if selected.is_empty() {
        Standardizer::identity(0)
    } else {
        Standardizer::fit(&picked)?
    };
    let sides: Vec<Vec<f64>> = picked
        .iter()
        .map(|p| model.feature_scaler.transform(p))
        .collect::<Result<_>>()?;
    let image_len = model.layout.image_len();
    if let Some(s) = data.iter().find(|s| s.image.len() != image_len) {
        return Err(Error::ShapeMismatch(format!(
            "image has {} values, model expects {image_len}",
            s.image.len()
        )));
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = seed::rng(seed::derive(config.seed, "shuffle"));
    let aug_root = seed::derive(config.seed, "augment");
    let mut velocity = vec![0.0; model.params.len()];
    let mut epochs = Vec::with_capacity(config.epochs);
    let (h, w) = (config.input_height, config.input_width);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let epoch_seed = seed::derive_indexed(aug_root, epoch as u64);
        let mut sum = LossParts::default();
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let images: Vec<Vec<f64>> = batch
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let pos = (b * config.batch_size + j) as u64;
                    let mut rng = seed::rng(seed::derive_indexed(epoch_seed, pos));
                    augment(&data[i].image, h, w, &config.augmentation, &mut rng)
                })
                .collect();
            let img_refs: Vec<&[f64]> = images.iter().map(Vec::as_slice).collect();
            let side_refs: Vec<&[f64]> = batch.iter().map(|&i| sides[i].as_slice()).collect();
            let targets: Vec<(usize, bool, f64)> = batch
                .iter()
                .map(|&i| (data[i].variety, data[i].spoiled, data[i].days))
                .collect();
            let (grad, loss) = batch_gradient(model, &img_refs, &side_refs, &targets)?;
            if !loss.total.is_finite() {
                return Err(Error::NumericalDivergence(format!(
                    "epoch {epoch}, batch {b}: loss {}",
                    loss.total
                )));
            }
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v - config.learning_rate * g;
                *p += *v;
            }
            if model.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NumericalDivergence(format!(
                    "epoch {epoch}, batch {b}: non-finite weights"
                )));
            }
            let mut weighted = loss;
            weighted.scale(batch.len() as f64);
            sum.add(&weighted);
        }
        sum.scale(1.0 / data.len() as f64);
        log::debug!("epoch {epoch}: loss {:.5}", sum.total);
        epochs.push(EpochLosses {
            epoch,
            total: sum.total,
            variety: sum.variety,
            spoilage: sum.spoilage,
            shelf_life: sum.shelf_life,
        });
    }
    Ok(TrainReport {
        samples: data.len(),
        epochs,
        final_weights_digest: model.digest(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Fold index per sample: each class is shuffled and dealt round-robin,
/// continuing the deal across classes so fold sizes differ by at most one.
pub fn stratified_folds(labels: &[usize], k: usize, fold_seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidModelConfig("k-fold needs k >= 2".into()));
    }
    if labels.len() < k {
        return Err(Error::InvalidModelConfig(format!(
            "{} samples cannot fill {k} folds",
            labels.len()
        )));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = seed::rng(fold_seed);
    let mut folds = vec![0; labels.len()];
    let mut deal = 0;
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::StratificationImpossible {
                class: c,
                count: members.len(),
                folds: k,
            });
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = deal % k;
            deal += 1;
        }
    }
    Ok(folds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub train_size: usize,
    pub validation_size: usize,
    pub accuracy: f64,
    pub spoilage_auc: Option<f64>,
    pub shelf_mae_days: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub folds: Vec<FoldMetrics>,
    pub mean_accuracy: f64,
}

/// Train a fresh model per fold and score it on the held-out fold.
pub fn kfold_cv(data: &[TrainingSample], config: &ModelConfig, k: usize) -> Result<CvReport> {
    config.validate()?;
    let labels: Vec<usize> = data.iter().map(|s| s.variety).collect();
    let assignments = stratified_folds(&labels, k, seed::derive(config.seed, "folds"))?;
    let folds: Vec<FoldMetrics> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (mut train_set, mut val_set) = (Vec::new(), Vec::new());
            for (s, &f) in data.iter().zip(&assignments) {
                if f == fold {
                    val_set.push(s.clone());
                } else {
                    train_set.push(s.clone());
                }
            }
            let mut cfg = config.clone();
            cfg.seed = seed::derive_indexed(seed::derive(config.seed, "fold-model"), fold as u64);
            cfg.batch_size = cfg.batch_size.min(train_set.len());
            let mut model = init(&cfg)?;
            train(&mut model, &train_set)?;
            let outputs: Vec<_> = val_set
                .iter()
                .map(|s| model.forward_one(&s.image, &s.features))
                .collect::<Result<_>>()?;
            let correct = outputs
                .iter()
                .zip(&val_set)
                .filter(|(o, s)| o.decide(0.5).variety == s.variety)
                .count();
            let scores: Vec<f64> = outputs.iter().map(|o| o.spoil_prob).collect();
            let truth: Vec<bool> = val_set.iter().map(|s| s.spoiled).collect();
            let mae = outputs
                .iter()
                .zip(&val_set)
                .map(|(o, s)| (o.decide(0.5).days as f64 - s.days).abs())
                .sum::<f64>()
                / val_set.len() as f64;
            Ok(FoldMetrics {
                fold,
                train_size: train_set.len(),
                validation_size: val_set.len(),
                accuracy: correct as f64 / val_set.len() as f64,
                spoilage_auc: crate::evalmetrics::roc_curve(&scores, &truth).ok().map(|r| r.auc),
                shelf_mae_days: mae,
            })
        })
        .collect::<Result<_>>()?;
    let mean_accuracy = folds.iter().map(|f| f.accuracy).sum::<f64>() / k as f64;
    Ok(CvReport {
        k,
        assignments,
        folds,
        mean_accuracy,
    })
}
