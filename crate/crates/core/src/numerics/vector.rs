//! Small dense-vector helpers over `&[f64]`.

use crate::error::{Error, Result};

pub fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler vectorize without reassociation.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of the angle between two non-zero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    let denom = norm(a) * norm(b);
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::domain("cosine of a zero or non-finite vector"));
    }
    Ok((dot(a, b) / denom).clamp(-1.0, 1.0))
}

pub fn scaled(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| x * c).collect()
}

/// `y += c * x`
pub fn axpy(y: &mut [f64], c: f64, x: &[f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

/// Unit vector in the plane of axes `(axis_a, axis_b)` at `degrees` from `axis_a`.
pub fn planar_unit(dim: usize, axis_a: usize, axis_b: usize, degrees: f64) -> Result<Vec<f64>> {
    if axis_a >= dim || axis_b >= dim || axis_a == axis_b {
        return Err(Error::domain(format!(
            "axes ({axis_a}, {axis_b}) invalid for dimension {dim}"
        )));
    }
    let r = degrees.to_radians();
    let mut v = vec![0.0; dim];
    v[axis_a] = r.cos();
    v[axis_b] = r.sin();
    Ok(v)
}

pub fn basis(dim: usize, axis: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[axis] = 1.0;
    v
}

/// Pairwise summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Coordinate-wise mean of equal-length vectors, accumulated pairwise.
pub fn mean_vector(vs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vs.first().ok_or_else(|| Error::domain("mean of an empty list"))?;
    let dim = first.len();
    for v in vs {
        check_dim(dim, v.len())?;
    }
    let n = vs.len() as f64;
    let mut col = vec![0.0; vs.len()];
    Ok((0..dim)
        .map(|j| {
            for (c, v) in col.iter_mut().zip(vs) {
                *c = v[j];
            }
            pairwise_sum(&col) / n
        })
        .collect())
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let ss: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&ss) / (n - 1.0);
    (mean, (var / n).sqrt())
}
