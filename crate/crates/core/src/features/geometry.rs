//! Shape descriptors of a binary silhouette.
//!
//! Axes follow the equivalent-ellipse convention (`4 * sqrt(lambda)` of the
//! area-normalised second-moment eigenvalues). Moments are accumulated in
//! exact integer arithmetic so lattice symmetries (quarter turns, flips)
//! give bit-identical results.

use serde::{Deserialize, Serialize};

use super::BinaryMask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricFeatures {
    pub area: f64,
    pub perimeter: f64,
    pub major_axis: f64,
    pub minor_axis: f64,
    pub eccentricity: f64,
    pub solidity: f64,
    pub convex_area: f64,
    pub aspect_ratio: f64,
}

impl GeometricFeatures {
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.area,
            self.perimeter,
            self.major_axis,
            self.minor_axis,
            self.eccentricity,
            self.solidity,
            self.convex_area,
            self.aspect_ratio,
        ]
    }
}

/// Eigenvalues `(l1 >= l2)` of the area-normalised central second moments.
pub fn moment_eigenvalues(mask: &BinaryMask) -> Option<(f64, f64)> {
    let (mut n, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0i128, 0i128, 0i128, 0i128, 0i128, 0i128);
    for (x, y) in mask.foreground() {
        let (x, y) = (x as i128, y as i128);
        n += 1;
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    if n == 0 {
        return None;
    }
    // n^2 * mu'_pq, exact.
    let a = (n * sxx - sx * sx) as f64;
    let c = (n * syy - sy * sy) as f64;
    let b = (n * sxy - sx * sy) as f64;
    let n2 = (n * n) as f64;
    let half_sum = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    Some(((half_sum + disc) / n2, ((half_sum - disc) / n2).max(0.0)))
}

const DIRS: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

fn dir_index(dx: i64, dy: i64) -> usize {
    DIRS.iter()
        .position(|&d| d == (dx, dy))
        .expect("neighbouring pixels")
}

/// Outer boundary length by Moore-neighbour tracing; axis steps count 1,
/// diagonal steps sqrt(2). Two perpendicular axis steps in a row (a corner
/// pixel on the trace) are measured as the single diagonal they span.
pub fn moore_perimeter(mask: &BinaryMask) -> f64 {
    let chain = moore_chain(mask);
    let n = chain.len();
    if n == 0 {
        return 0.0;
    }
    let diagonal = chain.iter().filter(|&&k| k % 2 == 1).count();
    let corner = |i: usize| {
        let (a, b) = (chain[i], chain[(i + 1) % n]);
        a % 2 == 0 && b % 2 == 0 && matches!((b + 8 - a) % 8, 2 | 6)
    };
    // Each maximal run of r linked corners covers r + 1 steps.
    let cuts = match (0..n).find(|&i| !corner(i)) {
        None => n / 2,
        Some(anchor) => {
            let (mut cuts, mut run) = (0usize, 0usize);
            for j in 1..=n {
                if corner((anchor + j) % n) {
                    run += 1;
                } else {
                    cuts += run.div_ceil(2);
                    run = 0;
                }
            }
            cuts
        }
    };
    let axis = n - diagonal - 2 * cuts;
    axis as f64 + (diagonal + cuts) as f64 * std::f64::consts::SQRT_2
}

/// Clockwise chain code (indices into the E, SE, S, ... compass) of the
/// outer boundary, starting at the raster-first pixel.
pub fn moore_chain(mask: &BinaryMask) -> Vec<usize> {
    let mut chain = Vec::new();
    let Some(start) = mask.foreground().next() else {
        return chain;
    };
    let start = (start.0 as i64, start.1 as i64);
    // The raster-order first pixel always has background to its west.
    let mut backtrack = (start.0 - 1, start.1);
    let mut current = start;
    let mut first_move: Option<(i64, i64)> = None;
    let limit = 8 * (mask.width() * mask.height()) as u64 + 16;

    for _ in 0..limit {
        let k0 = dir_index(backtrack.0 - current.0, backtrack.1 - current.1);
        let mut found = None;
        for step in 1..=8 {
            let k = (k0 + step) % 8;
            let p = (current.0 + DIRS[k].0, current.1 + DIRS[k].1);
            if mask.get_signed(p.0, p.1) {
                let prev = (k + 7) % 8;
                found = Some((p, (current.0 + DIRS[prev].0, current.1 + DIRS[prev].1), k));
                break;
            }
        }
        let Some((next, new_backtrack, k)) = found else {
            return chain; // isolated pixel
        };
        if current == start {
            match first_move {
                None => first_move = Some(next),
                Some(m) if m == next => break,
                Some(_) => {}
            }
        }
        chain.push(k);
        backtrack = new_backtrack;
        current = next;
    }
    chain
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Monotone-chain convex hull of lattice points, counter-clockwise, without
/// collinear vertices.
pub fn convex_hull(mut points: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    points.sort_unstable();
    points.dedup();
    if points.len() < 3 {
        return points;
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &points {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in points.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Twice the shoelace area and the number of lattice points on the boundary.
pub fn hull_area2_and_boundary(hull: &[(i64, i64)]) -> (i64, i64) {
    let mut area2 = 0;
    let mut boundary = 0;
    for i in 0..hull.len() {
        let p = hull[i];
        let q = hull[(i + 1) % hull.len()];
        area2 += p.0 * q.1 - q.0 * p.1;
        boundary += gcd(q.0 - p.0, q.1 - p.1);
    }
    (area2.abs(), boundary)
}

/// Pixels whose centres lie inside or on the convex hull of the foreground
/// pixel centres: shoelace area plus the Pick boundary term `B/2 + 1`.
pub fn convex_area(mask: &BinaryMask) -> Option<f64> {
    let pts = mask
        .foreground()
        .map(|(x, y)| (x as i64, y as i64))
        .collect();
    let hull = convex_hull(pts);
    if hull.len() < 3 {
        return None;
    }
    let (area2, boundary) = hull_area2_and_boundary(&hull);
    if area2 == 0 {
        return None;
    }
    Some(((area2 + boundary) / 2 + 1) as f64)
}

pub fn geometric_features(mask: &BinaryMask) -> Result<GeometricFeatures> {
    let area = mask.count();
    if area < 3 {
        return Err(Error::DegenerateGeometry);
    }
    let convex_area = convex_area(mask).ok_or(Error::DegenerateGeometry)?;
    let (l1, l2) = moment_eigenvalues(mask).ok_or(Error::DegenerateGeometry)?;
    if l2 <= 0.0 || l1 <= 0.0 {
        return Err(Error::DegenerateGeometry);
    }
    let major = 4.0 * l1.sqrt();
    let minor = 4.0 * l2.sqrt();
    let area = area as f64;
    Ok(GeometricFeatures {
        area,
        perimeter: moore_perimeter(mask),
        major_axis: major,
        minor_axis: minor,
        eccentricity: (1.0 - l2 / l1).max(0.0).sqrt(),
        solidity: area / convex_area,
        convex_area,
        aspect_ratio: major / minor,
    })
}
