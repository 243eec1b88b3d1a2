//! Dataset directory layout:
//!
//! ```text
//! manifest.json      ids, labels, attributes, seeds, sensor references, config echo
//! img/<id>.ppm       plain-text P3, 8-bit
//! spec/<id>.csv      18 raw sensor values, 6 decimal places
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FruitSample, IntrinsicAttributes, Ripeness, Variety};
use crate::error::{Error, Result};
use crate::preprocess::{CalibrationReference, ImageRaster, SpectralReading, SPECTRAL_CHANNELS};

pub const DATASET_LAYOUT: &str = "datesort-dataset/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: u64,
    pub seed: u64,
    pub variety: Variety,
    pub ripeness: Ripeness,
    pub attrs: IntrinsicAttributes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub layout: String,
    pub image_width: usize,
    pub image_height: usize,
    pub reference: CalibrationReference,
    pub config: serde_json::Value,
    pub samples: Vec<ManifestEntry>,
}

pub fn encode_ppm(img: &ImageRaster) -> String {
    let bytes = img.to_bytes();
    let mut out = format!("P3\n{} {}\n255\n", img.width(), img.height());
    for px in bytes.chunks_exact(3) {
        let _ = writeln!(out, "{} {} {}", px[0], px[1], px[2]);
    }
    out
}

pub fn decode_ppm(text: &str, path: &Path) -> Result<ImageRaster> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    if tokens.next() != Some("P3") {
        return Err(Error::format(path, "not a plain-text P3 image"));
    }
    let mut header = [0usize; 3];
    for h in header.iter_mut() {
        *h = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::format(path, "bad PPM header"))?;
    }
    let [w, h, maxval] = header;
    if maxval != 255 {
        return Err(Error::format(path, format!("unsupported maxval {maxval}")));
    }
    let bytes = tokens
        .map(|t| t.parse::<u8>())
        .collect::<std::result::Result<Vec<u8>, _>>()
        .map_err(|e| Error::format(path, format!("bad pixel value: {e}")))?;
    if bytes.len() != w * h * 3 {
        return Err(Error::format(
            path,
            format!("expected {} samples, found {}", w * h * 3, bytes.len()),
        ));
    }
    ImageRaster::from_raw_bytes(w, h, &bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn encode_spectral(reading: &SpectralReading) -> String {
    let fields: Vec<String> = reading.values.iter().map(|v| format!("{v:.6}")).collect();
    format!("{}\n", fields.join(","))
}

pub fn decode_spectral(text: &str, path: &Path) -> Result<SpectralReading> {
    let values: Vec<f64> = text
        .trim()
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(path, format!("bad spectral value: {e}")))?;
    let values: [f64; SPECTRAL_CHANNELS] = values.try_into().map_err(|v: Vec<f64>| {
        Error::format(path, format!("expected 18 values, found {}", v.len()))
    })?;
    Ok(SpectralReading::raw(values))
}

fn image_path(dir: &Path, id: u64) -> PathBuf {
    dir.join("img").join(format!("{id}.ppm"))
}

fn spectral_path(dir: &Path, id: u64) -> PathBuf {
    dir.join("spec").join(format!("{id}.csv"))
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Write the dataset and return every file written, relative to `dir`.
pub fn write_dataset(
    dir: &Path,
    samples: &[FruitSample],
    reference: &CalibrationReference,
    config: serde_json::Value,
) -> Result<Vec<PathBuf>> {
    for sub in ["img", "spec"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let (w, h) = samples
        .first()
        .map(|s| (s.image.width(), s.image.height()))
        .ok_or(Error::EmptyDataset)?;
    let mut written = Vec::with_capacity(samples.len() * 2 + 1);
    for s in samples {
        let ip = image_path(dir, s.id);
        write(&ip, encode_ppm(&s.image).as_bytes())?;
        let sp = spectral_path(dir, s.id);
        write(&sp, encode_spectral(&s.spectral).as_bytes())?;
        written.push(PathBuf::from("img").join(format!("{}.ppm", s.id)));
        written.push(PathBuf::from("spec").join(format!("{}.csv", s.id)));
    }
    let manifest = DatasetManifest {
        layout: DATASET_LAYOUT.to_string(),
        image_width: w,
        image_height: h,
        reference: reference.clone(),
        config,
        samples: samples
            .iter()
            .map(|s| ManifestEntry {
                id: s.id,
                seed: s.seed,
                variety: s.variety,
                ripeness: s.ripeness,
                attrs: s.attrs.clone(),
            })
            .collect(),
    };
    let mp = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write(&mp, text.as_bytes())?;
    written.push(PathBuf::from("manifest.json"));
    Ok(written)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let mp = dir.join("manifest.json");
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&mp, e.to_string()))?;
    if manifest.layout != DATASET_LAYOUT {
        return Err(Error::format(&mp, format!("unknown layout '{}'", manifest.layout)));
    }
    Ok(manifest)
}

/// Load every sample listed in the manifest; errors name the offending file.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<FruitSample>)> {
    let manifest = read_manifest(dir)?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let ip = image_path(dir, entry.id);
        let text = fs::read_to_string(&ip).map_err(|e| Error::io(&ip, e))?;
        let image = decode_ppm(&text, &ip)?;
        if image.width() != manifest.image_width || image.height() != manifest.image_height {
            return Err(Error::format(&ip, "image size disagrees with manifest"));
        }
        let sp = spectral_path(dir, entry.id);
        let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let spectral = decode_spectral(&text, &sp)?;
        samples.push(FruitSample {
            id: entry.id,
            seed: entry.seed,
            variety: entry.variety,
            ripeness: entry.ripeness,
            attrs: entry.attrs.clone(),
            image,
            spectral,
        });
    }
    Ok((manifest, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcrop::{generate_dataset, sensor_reference, DatasetSpec, SimConfig};

    #[test]
    fn dataset_round_trips_bit_exactly() {
        let cfg = SimConfig {
            image_size: 20,
            ..SimConfig::default()
        };
        let ds = generate_dataset(&DatasetSpec::uniform(2, 8), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_dataset(dir.path(), &ds, &sensor_reference(), serde_json::json!({}))
            .unwrap();
        assert_eq!(files.len(), ds.len() * 2 + 1);
        let (manifest, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(manifest.samples.len(), ds.len());
        assert_eq!(back, ds);
        for (a, b) in back.iter().zip(&ds) {
            for (x, y) in a.spectral.values.iter().zip(&b.spectral.values) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn missing_spectral_file_names_the_id() {
        let cfg = SimConfig {
            image_size: 16,
            ..SimConfig::default()
        };
        let ds = generate_dataset(&DatasetSpec::uniform(1, 8), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds, &sensor_reference(), serde_json::json!({})).unwrap();
        fs::remove_file(dir.path().join("spec/5.csv")).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("spec/5.csv"), "{err}");
    }

    #[test]
    fn corrupted_image_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ppm");
        let err = decode_ppm("P3\n2 2\n255\n1 2 3\n", &p).unwrap_err();
        assert!(err.to_string().contains("x.ppm"));
        assert!(decode_ppm("P6\n1 1\n255\n0 0 0", &p).is_err());
        assert!(decode_ppm("P3\n1 1\n255\n0 0 300", &p).is_err());
    }
}
