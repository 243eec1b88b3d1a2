//! Small convolutional network with a fused feature side input and three
//! heads: variety (softmax), spoilage (sigmoid) and shelf life (linear, in
//! units of 365 days).
//!
//! Parameters live in one flat vector; [`Layout`] maps layers onto it.

mod layers;
mod train;

use serde::{Deserialize, Serialize};

pub use train::{
    augment, batch_gradient, kfold_cv, stratified_folds, train, Augmentation, CvReport,
    EpochLosses, FoldMetrics, LossParts, TrainReport, TrainingSample,
};

use crate::error::{Error, Result};
use crate::features::Standardizer;
use crate::synthcrop::VARIETY_COUNT;

pub const MODEL_LAYOUT: &str = "datesort-cnn/1";
/// Outputs of the fused head layer: 8 variety logits, spoilage logit, shelf life.
pub const HEAD_OUTPUTS: usize = VARIETY_COUNT + 2;
pub const SHELF_SCALE: f64 = 365.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub conv_blocks: Vec<ConvBlock>,
    pub dense_widths: Vec<usize>,
    /// Width of the full side-input feature vector.
    pub feature_dim: usize,
    /// Slots of the side input actually fed to the network; `None` keeps all.
    pub feature_mask: Option<Vec<bool>>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub augmentation: Augmentation,
    /// Weight of the spoilage BCE term.
    pub spoilage_weight: f64,
    /// Weight of the shelf-life MSE term.
    pub shelf_weight: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_height: 64,
            input_width: 64,
            conv_blocks: vec![
                ConvBlock {
                    filters: 8,
                    kernel: 3,
                },
                ConvBlock {
                    filters: 16,
                    kernel: 3,
                },
            ],
            dense_widths: vec![64],
            feature_dim: crate::features::FEATURE_COUNT,
            feature_mask: None,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 16,
            epochs: 20,
            augmentation: Augmentation::default(),
            spoilage_weight: 1.0,
            shelf_weight: 1.0,
            seed: 0,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidModelConfig(msg.into())
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_height == 0 || self.input_width == 0 {
            return Err(invalid("input dimensions must be positive"));
        }
        let pools = self.conv_blocks.len() as u32;
        if pools >= usize::BITS
            || self.input_height >> pools == 0
            || self.input_width >> pools == 0
        {
            return Err(Error::FeatureMapShrinksToZero);
        }
        if !(1..=4).contains(&self.conv_blocks.len()) {
            return Err(invalid("between 1 and 4 conv blocks are required"));
        }
        for b in &self.conv_blocks {
            if b.filters == 0 {
                return Err(invalid("conv filters must be at least 1"));
            }
            if b.kernel != 3 && b.kernel != 5 {
                return Err(invalid(format!("kernel {} is not 3 or 5", b.kernel)));
            }
        }
        if self.dense_widths.is_empty() || self.dense_widths.contains(&0) {
            return Err(invalid("dense_widths must be a non-empty list of positive widths"));
        }
        if let Some(mask) = &self.feature_mask {
            if mask.len() != self.feature_dim {
                return Err(invalid(format!(
                    "feature mask has {} slots, feature_dim is {}",
                    mask.len(),
                    self.feature_dim
                )));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(invalid("learning_rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(invalid("batch_size and epochs must be at least 1"));
        }
        if self.augmentation.rot90 && self.input_height != self.input_width {
            return Err(invalid("90-degree rotation needs a square input"));
        }
        if self.spoilage_weight < 0.0 || self.shelf_weight < 0.0 {
            return Err(invalid("loss weights must be non-negative"));
        }
        Ok(())
    }

    /// Indices of the side-input slots the network consumes.
    pub fn selected_features(&self) -> Vec<usize> {
        match &self.feature_mask {
            Some(mask) => (0..mask.len()).filter(|&i| mask[i]).collect(),
            None => (0..self.feature_dim).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayout {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    /// Spatial size of the block input (before pooling).
    pub height: usize,
    pub width: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl ConvLayout {
    pub fn pooled(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayout {
    pub n_in: usize,
    pub n_out: usize,
    pub w_off: usize,
    pub b_off: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub convs: Vec<ConvLayout>,
    pub flat_dim: usize,
    pub side_dim: usize,
    /// Hidden dense layers followed by the head layer.
    pub dense: Vec<DenseLayout>,
    pub total: usize,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut off = 0;
        let mut convs = Vec::new();
        let (mut c, mut h, mut w) = (3, config.input_height, config.input_width);
        for b in &config.conv_blocks {
            let n_w = b.filters * c * b.kernel * b.kernel;
            convs.push(ConvLayout {
                c_in: c,
                c_out: b.filters,
                kernel: b.kernel,
                height: h,
                width: w,
                w_off: off,
                b_off: off + n_w,
            });
            off += n_w + b.filters;
            c = b.filters;
            h /= 2;
            w /= 2;
        }
        let flat_dim = c * h * w;
        let side_dim = config.selected_features().len();
        let mut dense = Vec::new();
        let mut n_in = flat_dim + side_dim;
        for &n_out in config.dense_widths.iter().chain(std::iter::once(&HEAD_OUTPUTS)) {
            dense.push(DenseLayout {
                n_in,
                n_out,
                w_off: off,
                b_off: off + n_in * n_out,
            });
            off += n_in * n_out + n_out;
            n_in = n_out;
        }
        Ok(Self {
            convs,
            flat_dim,
            side_dim,
            dense,
            total: off,
        })
    }

    pub fn image_len(&self) -> usize {
        let c = &self.convs[0];
        c.c_in * c.height * c.width
    }

    /// `(name, shape, weight range, bias range)` per layer.
    fn layers(&self) -> Vec<(String, Vec<usize>, usize, usize, usize)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((
                format!("conv{i}"),
                vec![c.c_out, c.c_in, c.kernel, c.kernel],
                c.w_off,
                c.b_off,
                c.c_out,
            ));
        }
        let last = self.dense.len() - 1;
        for (i, d) in self.dense.iter().enumerate() {
            let name = if i == last { "heads".to_string() } else { format!("dense{i}") };
            out.push((name, vec![d.n_out, d.n_in], d.w_off, d.b_off, d.n_out));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
    /// Applied to the selected side-input slots; fitted by [`train`].
    pub feature_scaler: Standardizer,
}

/// He-normal weights (std `sqrt(2 / fan_in)`) and zero biases.
pub fn init(config: &ModelConfig) -> Result<NetworkModel> {
    use rand::Rng;
    use rand_distr::StandardNormal;

    let layout = Layout::new(config)?;
    let mut params = vec![0.0; layout.total];
    let mut rng = crate::seed::rng(crate::seed::derive(config.seed, "init"));
    for c in &layout.convs {
        let std = (2.0 / (c.c_in * c.kernel * c.kernel) as f64).sqrt();
        for p in &mut params[c.w_off..c.b_off] {
            *p = std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    for d in &layout.dense {
        let std = (2.0 / d.n_in as f64).sqrt();
        for p in &mut params[d.w_off..d.b_off] {
            *p = std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(NetworkModel {
        feature_scaler: Standardizer::identity(layout.side_dim),
        config: config.clone(),
        layout,
        params,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadOutput {
    pub variety_probs: Vec<f64>,
    pub spoil_prob: f64,
    /// Shelf-life head in days (unclamped).
    pub shelf_days: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub variety: usize,
    pub spoil_prob: f64,
    pub spoiled: bool,
    pub days: u32,
}

impl HeadOutput {
    pub fn decide(&self, spoil_threshold: f64) -> Prediction {
        let mut variety = 0;
        for (i, p) in self.variety_probs.iter().enumerate() {
            if *p > self.variety_probs[variety] {
                variety = i;
            }
        }
        Prediction {
            variety,
            spoil_prob: self.spoil_prob,
            spoiled: self.spoil_prob >= spoil_threshold,
            days: self.shelf_days.clamp(0.0, SHELF_SCALE).round() as u32,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl NetworkModel {
    /// Selected and standardised side input.
    pub fn side_input(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.config.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "feature vector has {} slots, model expects {}",
                features.len(),
                self.config.feature_dim
            )));
        }
        let picked: Vec<f64> = self
            .config
            .selected_features()
            .into_iter()
            .map(|i| features[i])
            .collect();
        self.feature_scaler.transform(&picked)
    }

    fn check_image(&self, image: &[f64]) -> Result<()> {
        if image.len() != self.layout.image_len() {
            return Err(Error::ShapeMismatch(format!(
                "image has {} values, model expects {}",
                image.len(),
                self.layout.image_len()
            )));
        }
        Ok(())
    }

    /// Head logits for one CHW image and its (already prepared) side input.
    pub fn logits(&self, image: &[f64], side: &[f64]) -> Result<Vec<f64>> {
        self.check_image(image)?;
        if side.len() != self.layout.side_dim {
            return Err(Error::ShapeMismatch(format!(
                "side input has {} values, model expects {}",
                side.len(),
                self.layout.side_dim
            )));
        }
        Ok(layers::forward(&self.layout, &self.params, image, side).logits().to_vec())
    }

    pub fn forward_one(&self, image: &[f64], features: &[f64]) -> Result<HeadOutput> {
        let side = self.side_input(features)?;
        let z = self.logits(image, &side)?;
        Ok(HeadOutput {
            variety_probs: softmax(&z[..VARIETY_COUNT]),
            spoil_prob: sigmoid(z[VARIETY_COUNT]),
            shelf_days: z[VARIETY_COUNT + 1] * SHELF_SCALE,
        })
    }

    /// Batch forward pass: row `i` depends only on sample `i`.
    pub fn forward(&self, images: &[Vec<f64>], features: &[Vec<f64>]) -> Result<Vec<HeadOutput>> {
        use rayon::prelude::*;
        if images.len() != features.len() {
            return Err(Error::LengthMismatch(images.len(), features.len()));
        }
        images
            .par_iter()
            .zip(features.par_iter())
            .map(|(img, f)| self.forward_one(img, f))
            .collect()
    }

    pub fn predict(&self, image: &[f64], features: &[f64], spoil_threshold: f64) -> Result<Prediction> {
        Ok(self.forward_one(image, features)?.decide(spoil_threshold))
    }

    /// FNV-1a digest of the parameter bits, for reports.
    pub fn digest(&self) -> String {
        let bytes: Vec<u8> = self.params.iter().flat_map(|p| p.to_bits().to_le_bytes()).collect();
        format!("{:016x}", crate::seed::fnv1a64(&bytes))
    }

    pub fn to_file(&self) -> ModelFile {
        let layers = self
            .layout
            .layers()
            .into_iter()
            .map(|(name, shape, w_off, b_off, n_b)| LayerFile {
                name,
                shape,
                weights: self.params[w_off..b_off].to_vec(),
                bias: self.params[b_off..b_off + n_b].to_vec(),
            })
            .collect();
        ModelFile {
            layout: MODEL_LAYOUT.to_string(),
            config: self.config.clone(),
            feature_scaler: self.feature_scaler.clone(),
            layers,
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.layout != MODEL_LAYOUT {
            return Err(Error::UnknownLayoutVersion(file.layout));
        }
        let layout = Layout::new(&file.config)?;
        let expected = layout.layers();
        if expected.len() != file.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "model file has {} layers, config implies {}",
                file.layers.len(),
                expected.len()
            )));
        }
        let mut params = vec![0.0; layout.total];
        for ((name, shape, w_off, b_off, n_b), layer) in expected.into_iter().zip(file.layers) {
            if layer.name != name
                || layer.shape != shape
                || layer.weights.len() != b_off - w_off
                || layer.bias.len() != n_b
            {
                return Err(Error::ShapeMismatch(format!("layer '{}' does not match config", layer.name)));
            }
            params[w_off..b_off].copy_from_slice(&layer.weights);
            params[b_off..b_off + n_b].copy_from_slice(&layer.bias);
        }
        if file.feature_scaler.dim() != layout.side_dim {
            return Err(Error::ShapeMismatch("feature scaler width".into()));
        }
        Ok(Self {
            config: file.config,
            layout,
            params,
            feature_scaler: file.feature_scaler,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.to_file())?;
        s.push('\n');
        Ok(s)
    }

    /// Rejects unknown layout versions before looking at the rest.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("layout").and_then(|v| v.as_str()) {
            Some(MODEL_LAYOUT) => {}
            Some(other) => return Err(Error::UnknownLayoutVersion(other.to_string())),
            None => return Err(Error::UnknownLayoutVersion("<missing>".into())),
        }
        Self::from_file(serde_json::from_value(value)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    pub name: String,
    pub shape: Vec<usize>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub layout: String,
    pub config: ModelConfig,
    pub feature_scaler: Standardizer,
    pub layers: Vec<LayerFile>,
}
