//! Seeded date-fruit simulator.
//!
//! A sample is a pure function of `(variety, ripeness, seed, config)`: the
//! same inputs always reproduce the same attributes, image bytes and spectral
//! values. Images are anti-aliased ellipses on a dark belt; spectra are raw
//! sensor readings produced from a reflectance model and the simulated
//! sensor's dark/white references.

mod conveyor;
pub mod profiles;
pub mod store;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use conveyor::{conveyor_stream, ConveyorStream, DriftConfig, DriftState};

use crate::error::{Error, Result};
use crate::preprocess::{
    CalibrationReference, ImageRaster, SpectralReading, SPECTRAL_CHANNELS, WAVELENGTHS_NM,
};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variety {
    Iraqi,
    Rotana,
    Deglet,
    Berhi,
    Ajwa,
    MedjoolRutab,
    SukkaryRutab,
    SukkaryDried,
}

pub const VARIETY_COUNT: usize = 8;

impl Variety {
    pub const ALL: [Variety; VARIETY_COUNT] = [
        Variety::Iraqi,
        Variety::Rotana,
        Variety::Deglet,
        Variety::Berhi,
        Variety::Ajwa,
        Variety::MedjoolRutab,
        Variety::SukkaryRutab,
        Variety::SukkaryDried,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Variety::Iraqi => "IRAQI",
            Variety::Rotana => "ROTANA",
            Variety::Deglet => "DEGLET",
            Variety::Berhi => "BERHI",
            Variety::Ajwa => "AJWA",
            Variety::MedjoolRutab => "MEDJOOL_RUTAB",
            Variety::SukkaryRutab => "SUKKARY_RUTAB",
            Variety::SukkaryDried => "SUKKARY_DRIED",
        }
    }
}

impl fmt::Display for Variety {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variety {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variety '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Ripeness {
    Khalal,
    Rutab,
    Tamar,
}

impl Ripeness {
    pub const ALL: [Ripeness; 3] = [Ripeness::Khalal, Ripeness::Rutab, Ripeness::Tamar];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicAttributes {
    /// Percent water.
    pub moisture: f64,
    /// Total soluble solids, degrees Brix.
    pub tss: f64,
    /// Percent sugar.
    pub sugar: f64,
    pub tannin: f64,
    pub ph: f64,
    /// Newtons.
    pub firmness: f64,
    pub days_to_expiry: u32,
    pub spoiled: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FruitSample {
    pub id: u64,
    pub seed: u64,
    pub variety: Variety,
    pub ripeness: Ripeness,
    pub attrs: IntrinsicAttributes,
    /// Raw 8-bit stage.
    pub image: ImageRaster,
    /// Raw sensor counts.
    pub spectral: SpectralReading,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Square canvas side in pixels.
    pub image_size: usize,
    pub spoil_probability: f64,
    /// Standard deviation of additive sensor noise (raw units).
    pub spectral_noise: f64,
    pub moisture_sd: f64,
    /// Scales how far each variety's colour and spectrum sit from the
    /// all-variety mean; 1.0 is the default benchmark.
    pub separation: f64,
    /// Relative per-pixel surface speckle.
    pub speckle: f64,
    /// Tamar samples always have moisture strictly below this value.
    pub tamar_moisture_max: f64,
    /// Peak fractional darkening at the centre of a spoilage blotch.
    pub blotch_darkening: f64,
    /// Half-width of the uniform per-sample capture illumination factor.
    pub illumination_jitter: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            spoil_probability: 0.1,
            spectral_noise: 0.01,
            moisture_sd: 2.0,
            separation: 1.0,
            speckle: 0.04,
            tamar_moisture_max: 30.0,
            blotch_darkening: 0.15,
            illumination_jitter: 0.1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidDatasetSpec(m.to_string()));
        if self.image_size < 16 {
            return bad("image_size must be at least 16");
        }
        if !(0.0..=1.0).contains(&self.spoil_probability) {
            return bad("spoil_probability must be in [0, 1]");
        }
        if self.spectral_noise < 0.0 || self.moisture_sd < 0.0 || self.speckle < 0.0 {
            return bad("noise levels must be non-negative");
        }
        if !(0.0..0.5).contains(&self.illumination_jitter) {
            return bad("illumination_jitter must be in [0, 0.5)");
        }
        if !(0.0..=1.0).contains(&self.blotch_darkening) {
            return bad("blotch_darkening must be in [0, 1]");
        }
        if self.separation < 0.0 {
            return bad("separation must be non-negative");
        }
        Ok(())
    }
}

/// Dark and white references of the simulated 18-channel sensor.
pub fn sensor_reference() -> CalibrationReference {
    let mut dark = [0.0; SPECTRAL_CHANNELS];
    let mut white = [0.0; SPECTRAL_CHANNELS];
    for i in 0..SPECTRAL_CHANNELS {
        let t = i as f64;
        dark[i] = 0.02 + 0.0015 * t;
        white[i] = 0.80 + 0.005 * t - 0.0004 * t * t;
    }
    CalibrationReference { dark, white }
}

/// Days until expiry for non-spoiled fruit before the Gaussian term.
pub fn shelf_life_mean(moisture: f64, tannin: f64, firmness: f64) -> f64 {
    40.0 - 0.8 * (moisture - 20.0) + 1.5 * tannin - 4.0 * (3.0 - firmness)
}

fn gauss(x: f64, centre: f64, width: f64) -> f64 {
    let d = (x - centre) / width;
    (-0.5 * d * d).exp()
}

fn variety_curve(p: &profiles::VarietyProfile, lambda: f64) -> f64 {
    let edge = 1.0 / (1.0 + (-(lambda - p.edge_nm) / 35.0).exp());
    p.vis + (p.nir - p.vis) * edge + p.bump * gauss(lambda, p.bump_nm, 30.0)
}

/// Noise-free reflectance of a variety's Tamar-stage baseline, pulled towards
/// the all-variety mean when `separation < 1`.
pub fn base_reflectance(variety: Variety, separation: f64) -> [f64; SPECTRAL_CHANNELS] {
    let mut out = [0.0; SPECTRAL_CHANNELS];
    for (i, &lambda) in WAVELENGTHS_NM.iter().enumerate() {
        let mean = profiles::PROFILES
            .iter()
            .map(|p| variety_curve(p, lambda))
            .sum::<f64>()
            / VARIETY_COUNT as f64;
        let own = variety_curve(profiles::profile(variety), lambda);
        out[i] = mean + separation * (own - mean);
    }
    out
}

/// Reflectance model: variety baseline plus ripeness, chemistry and spoilage
/// terms. Moisture absorbs mostly in the NIR water band, sugar near 910 nm.
pub fn reflectance(
    variety: Variety,
    ripeness: Ripeness,
    attrs: &IntrinsicAttributes,
    separation: f64,
) -> [f64; SPECTRAL_CHANNELS] {
    let shift = profiles::ripeness_shift(ripeness);
    let mut out = base_reflectance(variety, separation);
    for (i, &lambda) in WAVELENGTHS_NM.iter().enumerate() {
        let water = 0.04 + 0.42 * gauss(lambda, 960.0, 70.0) + 0.1 * gauss(lambda, 760.0, 20.0);
        let sugar = 0.15 * gauss(lambda, 910.0, 30.0) + 0.05 * gauss(lambda, 480.0, 40.0);
        let mut r = out[i];
        r += shift.green_bump * gauss(lambda, 560.0, 40.0);
        if lambda > 700.0 {
            r += shift.nir_shift + 0.01 * (attrs.firmness - 3.0);
        }
        r -= water * (attrs.moisture - 25.0) / 100.0;
        r -= sugar * (attrs.sugar - 60.0) / 100.0;
        if attrs.spoiled {
            r -= 0.05 * gauss(lambda, 600.0, 120.0) + 0.04 * gauss(lambda, 700.0, 30.0);
        }
        out[i] = r;
    }
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Round to the six decimals stored in `spec/<id>.csv`.
fn six_decimals(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn draw_attributes(
    variety: Variety,
    ripeness: Ripeness,
    config: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> IntrinsicAttributes {
    let p = profiles::profile(variety);
    let shift = profiles::ripeness_shift(ripeness);
    let spoiled = rng.random::<f64>() < config.spoil_probability;

    let mut moisture = p.moisture + shift.moisture + config.moisture_sd * normal(rng);
    if spoiled {
        moisture += 4.0;
    }
    moisture = moisture.clamp(0.0, 100.0);
    if ripeness == Ripeness::Tamar {
        moisture = moisture.min(config.tamar_moisture_max - 0.01);
    }
    let tss = (0.9 * (100.0 - moisture) - 5.0 + 1.5 * normal(rng)).clamp(0.0, 100.0);
    let sugar = (0.8 * tss + 1.5 * normal(rng)).clamp(0.0, 100.0);
    let tannin = (p.tannin + shift.tannin + 0.2 * normal(rng)).max(0.0);
    let mut ph = p.ph + 0.1 * normal(rng);
    if spoiled {
        ph -= 0.8;
    }
    let ph = ph.clamp(0.0, 14.0);
    let mut firmness = p.firmness + shift.firmness + 0.3 * normal(rng);
    if spoiled {
        firmness *= 0.5;
    }
    let firmness = firmness.max(0.1);

    let eps = 2.0 * normal(rng);
    let days = (shelf_life_mean(moisture, tannin, firmness) + eps)
        .round()
        .clamp(0.0, 365.0) as u32;

    IntrinsicAttributes {
        moisture,
        tss,
        sugar,
        tannin,
        ph,
        firmness,
        days_to_expiry: if spoiled { 0 } else { days },
        spoiled,
    }
}

struct Blotch {
    x: f64,
    y: f64,
    radius: f64,
}

fn render_image(
    variety: Variety,
    ripeness: Ripeness,
    spoiled: bool,
    config: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> ImageRaster {
    let p = profiles::profile(variety);
    let shift = profiles::ripeness_shift(ripeness);
    let n = config.image_size;
    let scale = n as f64 / 64.0;

    let mean_color = {
        let mut m = [0.0; 3];
        for q in &profiles::PROFILES {
            for c in 0..3 {
                m[c] += q.color[c] / VARIETY_COUNT as f64;
            }
        }
        m
    };
    let mut color = [0.0; 3];
    for c in 0..3 {
        let base = mean_color[c] + config.separation * (p.color[c] - mean_color[c]);
        color[c] = (base * shift.tint[c]).clamp(0.0, 1.0);
    }

    let a = (p.semi_major * scale * shift.size * (1.0 + 0.05 * normal(rng)))
        .clamp(4.0 * scale, 29.0 * scale);
    let elong = (p.elongation * (1.0 + 0.04 * normal(rng))).max(1.0);
    let b = a / elong;
    let theta = rng.random::<f64>() * std::f64::consts::PI;
    let cx = n as f64 / 2.0 + (rng.random::<f64>() * 4.0 - 2.0) * scale;
    let cy = n as f64 / 2.0 + (rng.random::<f64>() * 4.0 - 2.0) * scale;
    let (sin, cos) = theta.sin_cos();
    // Normalised elliptical radius of a point.
    let rho2 = |x: f64, y: f64| {
        let dx = x - cx;
        let dy = y - cy;
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        (u / a).powi(2) + (v / b).powi(2)
    };

    let mut blotches = Vec::new();
    if spoiled {
        let count = rng.random_range(2..=4);
        for _ in 0..count {
            let r = 0.6 * rng.random::<f64>().sqrt();
            let phi = rng.random::<f64>() * std::f64::consts::TAU;
            let (u, v) = (r * a * phi.cos(), r * b * phi.sin());
            blotches.push(Blotch {
                x: cx + u * cos - v * sin,
                y: cy + u * sin + v * cos,
                radius: (3.0 + 3.0 * rng.random::<f64>()) * scale,
            });
        }
    }

    let speckle = config.speckle * p.texture;
    let illumination = 1.0 + config.illumination_jitter * (2.0 * rng.random::<f64>() - 1.0);
    let mut bytes = Vec::with_capacity(n * n * 3);
    for py in 0..n {
        for px in 0..n {
            let grain = normal(rng);
            let bg = 10.0 + 1.5 * normal(rng);
            let mut hits = 0u32;
            for sy in 0..4 {
                for sx in 0..4 {
                    let x = px as f64 + (sx as f64 + 0.5) / 4.0;
                    let y = py as f64 + (sy as f64 + 0.5) / 4.0;
                    if rho2(x, y) <= 1.0 {
                        hits += 1;
                    }
                }
            }
            let coverage = f64::from(hits) / 16.0;
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let shading = 1.0 - 0.18 * rho2(x, y).min(1.0);
            let mut darken = 1.0;
            for bl in &blotches {
                let d = ((x - bl.x).powi(2) + (y - bl.y).powi(2)).sqrt();
                let edge = ((bl.radius - d) / 1.5).clamp(0.0, 1.0);
                darken *= 1.0 - config.blotch_darkening * edge;
            }
            let texture = 1.0 + speckle * grain;
            for c in 0..3 {
                let fruit = (illumination * color[c] * shading * darken * texture).clamp(0.0, 1.0) * 255.0;
                let v = coverage * fruit + (1.0 - coverage) * bg;
                bytes.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageRaster::from_raw_bytes(n, n, &bytes).expect("canvas dimensions are consistent")
}

/// Generate one fruit. Pure in `(variety, ripeness, seed, config)`.
pub fn generate_sample(
    variety: Variety,
    ripeness: Ripeness,
    seed: u64,
    config: &SimConfig,
) -> FruitSample {
    let mut rng = seed::rng(seed);
    let attrs = draw_attributes(variety, ripeness, config, &mut rng);

    let refl = reflectance(variety, ripeness, &attrs, config.separation);
    let sensor = sensor_reference();
    let mut raw = [0.0; SPECTRAL_CHANNELS];
    for i in 0..SPECTRAL_CHANNELS {
        let counts = sensor.dark[i]
            + refl[i] * (sensor.white[i] - sensor.dark[i])
            + config.spectral_noise * normal(&mut rng);
        raw[i] = six_decimals(counts);
    }

    let image = render_image(variety, ripeness, attrs.spoiled, config, &mut rng);
    FruitSample {
        id: 0,
        seed,
        variety,
        ripeness,
        attrs,
        image,
        spectral: SpectralReading::raw(raw),
    }
}

/// Ripeness stage drawn from the variety's stage mix.
pub fn draw_ripeness(variety: Variety, seed: u64) -> Ripeness {
    let w = profiles::profile(variety).ripeness_weights;
    let u: f64 = seed::rng(seed::derive(seed, "ripeness")).random();
    if u < w[0] {
        Ripeness::Khalal
    } else if u < w[0] + w[1] {
        Ripeness::Rutab
    } else {
        Ripeness::Tamar
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub counts: Vec<(Variety, usize)>,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn uniform(per_variety: usize, seed: u64) -> Self {
        Self {
            counts: Variety::ALL.iter().map(|&v| (v, per_variety)).collect(),
            seed,
        }
    }

    /// Imbalanced benchmark spanning 50–276 samples per variety, 935 total.
    pub fn paper_shaped(seed: u64) -> Self {
        let counts = [276, 98, 120, 64, 50, 110, 85, 132];
        Self {
            counts: Variety::ALL.iter().copied().zip(counts).collect(),
            seed,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|(_, n)| n).sum()
    }
}

/// Samples with ids `0..total`, varieties in spec order.
pub fn generate_dataset(spec: &DatasetSpec, config: &SimConfig) -> Result<Vec<FruitSample>> {
    if spec.counts.is_empty() {
        return Err(Error::EmptyDatasetSpec);
    }
    if let Some((v, _)) = spec.counts.iter().find(|(_, n)| *n == 0) {
        return Err(Error::InvalidDatasetSpec(format!("count for {v} must be at least 1")));
    }
    config.validate()?;
    let mut jobs = Vec::with_capacity(spec.total());
    for &(variety, count) in &spec.counts {
        for _ in 0..count {
            jobs.push(variety);
        }
    }
    use rayon::prelude::*;
    Ok(jobs
        .into_par_iter()
        .enumerate()
        .map(|(id, variety)| {
            let sample_seed = seed::derive_indexed(spec.seed, id as u64);
            let ripeness = draw_ripeness(variety, sample_seed);
            let mut s = generate_sample(variety, ripeness, sample_seed, config);
            s.id = id as u64;
            s
        })
        .collect())
}
