//! Desk-scale generation-quality metrics for 2D mixture targets: mode
//! coverage, high-quality sample ratio, and a sliced 1-Wasserstein distance.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_RADIUS_MULT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode_coverage: f64,
    pub hq_ratio: f64,
    pub w1: f64,
}

fn check_points(samples: &Tensor, what: &str) -> Result<usize> {
    let shape = samples.shape();
    if shape.len() != 2 || shape[1] != 2 {
        return Err(Error::Dimension(format!("{} must be [n, 2], got {:?}", what, shape)));
    }
    if shape[0] == 0 {
        return Err(Error::Domain(format!("{} is empty", what)));
    }
    Ok(shape[0])
}

fn nearest_center(x: f64, y: f64, centers: &[[f64; 2]]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d2 = (x - c[0]).powi(2) + (y - c[1]).powi(2);
        if d2 < best.1 {
            best = (k, d2);
        }
    }
    (best.0, best.1.sqrt())
}

/// Fraction of mixture modes that attract at least max(1, 0.2*n/K) samples
/// within radius_mult*sigma of their center.
pub fn mode_coverage(
    samples: &Tensor,
    centers: &[[f64; 2]],
    sigma: f64,
    radius_mult: f64,
) -> Result<f64> {
    let n = check_points(samples, "samples")?;
    let k = centers.len();
    if k == 0 {
        return Err(Error::Domain("no mode centers".into()));
    }
    let radius = radius_mult * sigma;
    let mut counts = vec![0usize; k];
    for i in 0..n {
        let (x, y) = (samples.data()[2 * i], samples.data()[2 * i + 1]);
        let (mode, dist) = nearest_center(x, y, centers);
        if dist <= radius {
            counts[mode] += 1;
        }
    }
    let need = (0.2 * n as f64 / k as f64).max(1.0);
    let covered = counts.iter().filter(|&&c| c as f64 >= need).count();
    Ok(covered as f64 / k as f64)
}

/// Fraction of samples lying within radius_mult*sigma of any mode center.
pub fn hq_ratio(
    samples: &Tensor,
    centers: &[[f64; 2]],
    sigma: f64,
    radius_mult: f64,
) -> Result<f64> {
    let n = check_points(samples, "samples")?;
    let radius = radius_mult * sigma;
    let hq = (0..n)
        .filter(|&i| {
            let (x, y) = (samples.data()[2 * i], samples.data()[2 * i + 1]);
            nearest_center(x, y, centers).1 <= radius
        })
        .count();
    Ok(hq as f64 / n as f64)
}

/// Exact 1D W1 between two empirical distributions: integral of |F_a - F_b|
/// over the merged support. Handles unequal sample counts; for equal counts
/// it reduces to the mean absolute difference of the sorted arrays.
pub fn w1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("w1_1d on empty set".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).expect("finite projections"));
    sb.sort_by(|x, y| x.partial_cmp(y).expect("finite projections"));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = sa[0].min(sb[0]);
    let mut total = 0.0;
    while i < sa.len() || j < sb.len() {
        let next = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        prev = next;
        while i < sa.len() && sa[i] == next {
            i += 1;
        }
        while j < sb.len() && sb[j] == next {
            j += 1;
        }
    }
    Ok(total)
}

/// Sliced 1-Wasserstein: mean of the exact 1D W1 over seeded random unit
/// projections. Deterministic given (inputs, n_projections, seed).
pub fn sliced_w1(
    samples: &Tensor,
    reference: &Tensor,
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    let n = check_points(samples, "samples")?;
    let m = check_points(reference, "reference")?;
    if n_projections == 0 {
        return Err(Error::Domain("n_projections must be >= 1".into()));
    }
    samples.check_finite("sliced_w1 samples")?;
    reference.check_finite("sliced_w1 reference")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_projections {
        let angle = rng.gen::<f64>() * std::f64::consts::TAU;
        let (ux, uy) = (angle.cos(), angle.sin());
        let pa: Vec<f64> = (0..n)
            .map(|i| ux * samples.data()[2 * i] + uy * samples.data()[2 * i + 1])
            .collect();
        let pb: Vec<f64> = (0..m)
            .map(|i| ux * reference.data()[2 * i] + uy * reference.data()[2 * i + 1])
            .collect();
        total += w1_1d(&pa, &pb)?;
    }
    Ok(total / n_projections as f64)
}

pub fn report(
    samples: &Tensor,
    reference: &Tensor,
    centers: &[[f64; 2]],
    sigma: f64,
    radius_mult: f64,
    n_projections: usize,
    seed: u64,
) -> Result<MetricsReport> {
    Ok(MetricsReport {
        mode_coverage: mode_coverage(samples, centers, sigma, radius_mult)?,
        hq_ratio: hq_ratio(samples, centers, sigma, radius_mult)?,
        w1: sliced_w1(samples, reference, n_projections, seed)?,
    })
}
