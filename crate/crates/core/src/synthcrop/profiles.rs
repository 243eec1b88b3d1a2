//! Per-variety generative parameters.
//!
//! These numbers are invented: they give each variety a distinct colour,
//! silhouette and reflectance curve so the downstream learners have
//! attainable targets. They are not measurements of real cultivars.

use super::{Ripeness, Variety};

#[derive(Clone, Copy, Debug)]
pub struct VarietyProfile {
    /// Base RGB in `[0, 1]`; luma is kept near 0.5 so brightness drift is
    /// visible against fixed bucket edges.
    pub color: [f64; 3],
    /// Semi-major axis in pixels on a 64-pixel canvas.
    pub semi_major: f64,
    /// Ratio of semi-major to semi-minor axis.
    pub elongation: f64,
    /// Relative surface speckle amplitude.
    pub texture: f64,
    /// Mean moisture (%) at the Tamar stage.
    pub moisture: f64,
    pub tannin: f64,
    pub firmness: f64,
    pub ph: f64,
    /// Reflectance curve: visible plateau, NIR plateau, red-edge centre (nm),
    /// and a Gaussian bump (amplitude, centre nm).
    pub vis: f64,
    pub nir: f64,
    pub edge_nm: f64,
    pub bump: f64,
    pub bump_nm: f64,
    /// Probabilities of Khalal, Rutab, Tamar.
    pub ripeness_weights: [f64; 3],
}

const MIXED: [f64; 3] = [0.1, 0.2, 0.7];
const RUTAB_ONLY: [f64; 3] = [0.0, 1.0, 0.0];
const TAMAR_ONLY: [f64; 3] = [0.0, 0.0, 1.0];

pub const PROFILES: [VarietyProfile; 8] = [
    // IRAQI
    VarietyProfile {
        color: [0.80, 0.52, 0.29],
        semi_major: 20.0,
        elongation: 1.6,
        texture: 1.0,
        moisture: 18.0,
        tannin: 1.0,
        firmness: 3.0,
        ph: 6.0,
        vis: 0.18,
        nir: 0.62,
        edge_nm: 690.0,
        bump: 0.05,
        bump_nm: 600.0,
        ripeness_weights: MIXED,
    },
    // ROTANA
    VarietyProfile {
        color: [0.69, 0.54, 0.40],
        semi_major: 18.0,
        elongation: 1.3,
        texture: 0.8,
        moisture: 20.0,
        tannin: 1.2,
        firmness: 2.8,
        ph: 6.1,
        vis: 0.22,
        nir: 0.55,
        edge_nm: 660.0,
        bump: 0.03,
        bump_nm: 520.0,
        ripeness_weights: MIXED,
    },
    // DEGLET
    VarietyProfile {
        color: [0.92, 0.48, 0.23],
        semi_major: 22.0,
        elongation: 2.0,
        texture: 0.7,
        moisture: 16.0,
        tannin: 1.5,
        firmness: 3.5,
        ph: 5.9,
        vis: 0.25,
        nir: 0.70,
        edge_nm: 720.0,
        bump: 0.06,
        bump_nm: 620.0,
        ripeness_weights: MIXED,
    },
    // BERHI
    VarietyProfile {
        color: [0.86, 0.57, 0.11],
        semi_major: 17.0,
        elongation: 1.15,
        texture: 0.6,
        moisture: 22.0,
        tannin: 0.8,
        firmness: 2.5,
        ph: 6.2,
        vis: 0.30,
        nir: 0.60,
        edge_nm: 640.0,
        bump: 0.08,
        bump_nm: 570.0,
        ripeness_weights: MIXED,
    },
    // AJWA
    VarietyProfile {
        color: [0.63, 0.48, 0.44],
        semi_major: 15.0,
        elongation: 1.25,
        texture: 1.4,
        moisture: 17.0,
        tannin: 2.0,
        firmness: 3.2,
        ph: 5.8,
        vis: 0.10,
        nir: 0.45,
        edge_nm: 700.0,
        bump: 0.02,
        bump_nm: 650.0,
        ripeness_weights: MIXED,
    },
    // MEDJOOL_RUTAB
    VarietyProfile {
        color: [0.75, 0.46, 0.46],
        semi_major: 25.0,
        elongation: 1.5,
        texture: 1.1,
        moisture: 23.0,
        tannin: 0.9,
        firmness: 2.4,
        ph: 6.3,
        vis: 0.15,
        nir: 0.66,
        edge_nm: 740.0,
        bump: 0.04,
        bump_nm: 610.0,
        ripeness_weights: RUTAB_ONLY,
    },
    // SUKKARY_RUTAB
    VarietyProfile {
        color: [0.98, 0.57, 0.17],
        semi_major: 19.0,
        elongation: 1.35,
        texture: 0.5,
        moisture: 21.0,
        tannin: 0.7,
        firmness: 2.6,
        ph: 6.4,
        vis: 0.28,
        nir: 0.52,
        edge_nm: 620.0,
        bump: 0.07,
        bump_nm: 590.0,
        ripeness_weights: RUTAB_ONLY,
    },
    // SUKKARY_DRIED
    VarietyProfile {
        color: [0.83, 0.60, 0.34],
        semi_major: 16.0,
        elongation: 1.4,
        texture: 1.8,
        moisture: 14.0,
        tannin: 1.1,
        firmness: 3.8,
        ph: 6.0,
        vis: 0.20,
        nir: 0.58,
        edge_nm: 680.0,
        bump: 0.05,
        bump_nm: 540.0,
        ripeness_weights: TAMAR_ONLY,
    },
];

pub fn profile(variety: Variety) -> &'static VarietyProfile {
    &PROFILES[variety.code()]
}

/// Additive shifts applied on top of the Tamar-stage profile.
#[derive(Clone, Copy, Debug)]
pub struct RipenessShift {
    pub moisture: f64,
    pub tannin: f64,
    pub firmness: f64,
    pub size: f64,
    /// Multiplicative RGB tint.
    pub tint: [f64; 3],
    /// Amplitude of the green/yellow reflectance bump around 560 nm.
    pub green_bump: f64,
    /// NIR offset above 700 nm.
    pub nir_shift: f64,
}

pub fn ripeness_shift(ripeness: Ripeness) -> RipenessShift {
    match ripeness {
        Ripeness::Khalal => RipenessShift {
            moisture: 25.0,
            tannin: 2.0,
            firmness: 5.0,
            size: 1.06,
            tint: [0.92, 1.12, 0.9],
            green_bump: 0.06,
            nir_shift: -0.03,
        },
        Ripeness::Rutab => RipenessShift {
            moisture: 12.0,
            tannin: 0.5,
            firmness: 1.0,
            size: 1.02,
            tint: [1.0, 1.0, 1.0],
            green_bump: 0.02,
            nir_shift: -0.01,
        },
        Ripeness::Tamar => RipenessShift {
            moisture: 0.0,
            tannin: 0.0,
            firmness: 0.0,
            size: 0.95,
            tint: [1.02, 0.97, 0.95],
            green_bump: 0.0,
            nir_shift: 0.0,
        },
    }
}
