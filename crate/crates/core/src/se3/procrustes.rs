use nalgebra::{Matrix3, Vector3};

use super::linalg::{svd3, symmetric_eigen3};
use super::{Pose, Se3Error};

/// Relative threshold on the second covariance eigenvalue below which a point
/// set is treated as collinear.
const RANK_TOL: f64 = 1e-12;

/// Points with nonnegative per-point weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPointSet {
    pub points: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

impl WeightedPointSet {
    pub fn new(points: Vec<Vector3<f64>>, weights: Vec<f64>) -> Result<Self, Se3Error> {
        if points.len() != weights.len() {
            return Err(Se3Error::BadLength {
                expected: points.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Se3Error::InvalidWeight);
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Se3Error::NonFinite);
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Vec<Vector3<f64>>) -> Self {
        let weights = vec![1.0; points.len()];
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn weighted_centroid(&self, weights: &[f64], total: f64) -> Vector3<f64> {
        self.points
            .iter()
            .zip(weights)
            .fold(Vector3::zeros(), |acc, (p, w)| acc + p * *w)
            / total
    }
}

/// Sum of `w_i * |pose * src_i - dst_i|^2`.
pub fn weighted_residual(pose: &Pose, src: &WeightedPointSet, dst: &WeightedPointSet) -> f64 {
    src.points
        .iter()
        .zip(&dst.points)
        .zip(&src.weights)
        .map(|((s, d), w)| w * (pose.transform_point(s) - d).norm_squared())
        .sum()
}

/// Rigid transform minimizing the weighted squared distance between paired points.
///
/// The weight of pair `i` is taken from `src.weights[i]`; `dst.weights` is
/// ignored except for the length check, so callers can reuse one weight vector.
/// Inputs whose optimal orthogonal map is a reflection get the best proper
/// rotation instead.
pub fn solve_weighted_procrustes(
    src: &WeightedPointSet,
    dst: &WeightedPointSet,
) -> Result<Pose, Se3Error> {
    let n = src.len();
    if n != dst.len() {
        return Err(Se3Error::BadLength { expected: n, got: dst.len() });
    }
    if n < 3 {
        return Err(Se3Error::DegenerateInput("fewer than three point pairs"));
    }
    let weights = &src.weights;
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Se3Error::AllZeroWeights);
    }

    let src_centroid = src.weighted_centroid(weights, total);
    let dst_centroid = dst.weighted_centroid(weights, total);

    let mut cross = Matrix3::zeros();
    let mut src_cov = Matrix3::zeros();
    let mut dst_cov = Matrix3::zeros();
    for ((s, d), w) in src.points.iter().zip(&dst.points).zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let a = s - src_centroid;
        let b = d - dst_centroid;
        cross += a * b.transpose() * *w;
        src_cov += a * a.transpose() * *w;
        dst_cov += b * b.transpose() * *w;
    }

    for cov in [&src_cov, &dst_cov] {
        let (eig, _) = symmetric_eigen3(cov);
        if eig[0] <= 0.0 || eig[1] <= RANK_TOL * eig[0] {
            return Err(Se3Error::DegenerateInput("weighted points are collinear"));
        }
    }

    // cross = U S V^T  =>  R = V diag(1, 1, d) U^T with d fixing the determinant sign
    let svd = svd3(&cross);
    let d = (svd.v * svd.u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = svd.v * correction * svd.u.transpose();
    let translation = dst_centroid - rotation * src_centroid;
    Ok(Pose::from_parts_unchecked(rotation, translation))
}
