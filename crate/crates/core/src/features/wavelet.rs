//! Two-level Daubechies-4 decomposition on a fixed 32×32 luma crop.

use super::BinaryMask;
use crate::error::{Error, Result};
use crate::preprocess::{luma, resize, ImageRaster};

pub const CROP_SIZE: usize = 32;
pub const LEVELS: usize = 2;

/// Subband names in output order.
pub const SUBBANDS: [&str; 7] = ["LL2", "LH1", "HL1", "HH1", "LH2", "HL2", "HH2"];

pub fn scaling_filter() -> [f64; 4] {
    let s3 = 3f64.sqrt();
    let d = 4.0 * 2f64.sqrt();
    [(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
}

pub fn wavelet_filter() -> [f64; 4] {
    let h = scaling_filter();
    [h[3], -h[2], h[1], -h[0]]
}

/// Partial sums `G_j = g_0 + .. + g_j` of the wavelet filter for `j < 3`.
/// Since the taps sum to zero, `sum g_j x_j = sum G_j (x_j - x_{j+1})`, which
/// is exactly zero on constant input.
fn wavelet_partial_sums() -> [f64; 3] {
    let h = scaling_filter();
    [h[3], -1.0 / (2.0 * 2f64.sqrt()), h[0]]
}

/// One periodic analysis step: `[approx.., detail..]`.
pub fn dwt1(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let half = n / 2;
    let (h, g) = (scaling_filter(), wavelet_partial_sums());
    let mut out = vec![0.0; n];
    for k in 0..half {
        let v: [f64; 4] = std::array::from_fn(|j| x[(2 * k + j) % n]);
        out[k] = h.iter().zip(&v).map(|(a, b)| a * b).sum();
        out[half + k] = (0..3).map(|j| g[j] * (v[j] - v[j + 1])).sum();
    }
    out
}

/// One 2D level applied in place to the top-left `n×n` block of a
/// row-major `stride`-wide buffer: rows first, then columns.
pub fn dwt2_level(buf: &mut [f64], stride: usize, n: usize) {
    let mut line = vec![0.0; n];
    for y in 0..n {
        line.copy_from_slice(&buf[y * stride..y * stride + n]);
        buf[y * stride..y * stride + n].copy_from_slice(&dwt1(&line));
    }
    for x in 0..n {
        for y in 0..n {
            line[y] = buf[y * stride + x];
        }
        for (y, v) in dwt1(&line).into_iter().enumerate() {
            buf[y * stride + x] = v;
        }
    }
}

/// Full decomposition of a square power-of-two buffer.
pub fn dwt2(input: &[f64], n: usize, levels: usize) -> Vec<f64> {
    let mut buf = input.to_vec();
    let mut size = n;
    for _ in 0..levels {
        dwt2_level(&mut buf, n, size);
        size /= 2;
    }
    buf
}

fn block_energy(buf: &[f64], stride: usize, x0: usize, y0: usize, size: usize) -> f64 {
    let mut sum = 0.0;
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            sum += buf[y * stride + x] * buf[y * stride + x];
        }
    }
    sum / (size * size) as f64
}

/// Subband energies of an `n×n` decomposition, in [`SUBBANDS`] order.
/// HL is the row-detail (top-right) block, LH the column-detail one.
pub fn subband_energies(coeffs: &[f64], n: usize) -> [f64; 7] {
    let h1 = n / 2;
    let h2 = n / 4;
    [
        block_energy(coeffs, n, 0, 0, h2),
        block_energy(coeffs, n, 0, h1, h1),
        block_energy(coeffs, n, h1, 0, h1),
        block_energy(coeffs, n, h1, h1, h1),
        block_energy(coeffs, n, 0, h2, h2),
        block_energy(coeffs, n, h2, 0, h2),
        block_energy(coeffs, n, h2, h2, h2),
    ]
}

/// Energies of a 32×32 luma plane.
pub fn plane_energies(plane: &[f64]) -> Result<[f64; 7]> {
    if plane.len() != CROP_SIZE * CROP_SIZE {
        return Err(Error::InvalidDimensions(format!(
            "wavelet plane must be {CROP_SIZE}x{CROP_SIZE}"
        )));
    }
    Ok(subband_energies(&dwt2(plane, CROP_SIZE, LEVELS), CROP_SIZE))
}

pub fn daub4_energies(img: &ImageRaster, mask: &BinaryMask) -> Result<[f64; 7]> {
    let (x0, y0, w, h) = mask.bounding_box().ok_or(Error::NoFruitDetected)?;
    if w < 4 || h < 4 {
        return Err(Error::BoundingBoxTooSmall {
            width: w,
            height: h,
        });
    }
    let crop = resize(&img.crop(x0, y0, w, h)?, CROP_SIZE, CROP_SIZE)?;
    let plane: Vec<f64> = crop
        .data()
        .chunks_exact(3)
        .map(|p| luma(p[0], p[1], p[2]))
        .collect();
    plane_energies(&plane)
}
