//! Hand-crafted feature catalogue and its fusion into a fixed-layout vector.

mod chemistry;
mod color;
mod fusion;
mod geometry;
mod segment;
mod wavelet;

pub use chemistry::{estimate_chemistry, ChemistryEstimate, ChemistryModel, TARGETS};
pub use color::{color_stats, entropy, moments, ChannelStats, ColorStats};
pub use fusion::{
    feature_table_csv, fuse, FeatureParts, FeatureRow, FeatureVector, Standardizer,
    FEATURE_COUNT, FEATURE_LAYOUT, SLOT_NAMES,
};
pub use geometry::{
    convex_area, convex_hull, geometric_features, moment_eigenvalues, moore_perimeter,
    GeometricFeatures,
};
pub use segment::{segment, BinaryMask};
pub use wavelet::{
    daub4_energies, dwt1, dwt2, plane_energies, scaling_filter, subband_energies, wavelet_filter,
    SUBBANDS,
};

use crate::error::Result;
use crate::preprocess::{ImageRaster, SpectralReading};

/// Segment a normalised image and compute every modality.
pub fn extract_parts(
    img: &ImageRaster,
    spectral: &SpectralReading,
    threshold: f64,
) -> Result<(BinaryMask, FeatureParts)> {
    let mask = segment(img, threshold)?;
    let parts = FeatureParts {
        geometry: Some(geometric_features(&mask)?),
        color: Some(color_stats(img, &mask)?),
        entropy: Some(entropy(img, &mask)?),
        wavelet: Some(daub4_energies(img, &mask)?),
        spectral: Some(spectral.clone()),
    };
    Ok((mask, parts))
}
