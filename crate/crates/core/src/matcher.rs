//! Execution-time matching: state routing, dual-softmax correspondences,
//! binarization and correspondence-based pose regression.

use nalgebra::{DMatrix, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::cloud::DescriptorSet;
use crate::se3::{solve_weighted_procrustes, Pose, Se3Error, WeightedPointSet};

pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.1;
/// Default weight of the gripper flag in routing vectors.
pub const DEFAULT_GRIPPER_WEIGHT: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("need at least 3 matches, got {0}")]
    InsufficientMatches(usize),
    #[error("match ({i}, {j}) is out of bounds")]
    IndexOutOfBounds { i: usize, j: usize },
    #[error(transparent)]
    Degenerate(#[from] Se3Error),
}

/// Observation summary compared during routing.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingFeatures {
    pub scene: Vec<f64>,
    pub gripper_open: bool,
    /// Timestep divided by the demonstration length.
    pub normalized_t: f64,
}

impl RoutingFeatures {
    pub fn to_vector(&self, gripper_weight: f64) -> Vec<f64> {
        let mut v = self.scene.clone();
        v.push(if self.gripper_open { gripper_weight } else { 0.0 });
        v.push(self.normalized_t);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingResult {
    pub demo_index: usize,
    pub distance: f64,
}

/// Nearest demonstration macro-step by Euclidean distance; ties to the lowest index.
pub fn route_state(
    current: &RoutingFeatures,
    demo_macro_steps: &[RoutingFeatures],
    gripper_weight: f64,
) -> Result<RoutingResult, MatchError> {
    if demo_macro_steps.is_empty() {
        return Err(MatchError::EmptyInput);
    }
    let q = current.to_vector(gripper_weight);
    let mut best = RoutingResult { demo_index: 0, distance: f64::INFINITY };
    for (i, step) in demo_macro_steps.iter().enumerate() {
        let v = step.to_vector(gripper_weight);
        if v.len() != q.len() {
            return Err(MatchError::DimensionMismatch { expected: q.len(), got: v.len() });
        }
        let d = q.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if d < best.distance {
            best = RoutingResult { demo_index: i, distance: d };
        }
    }
    Ok(best)
}

/// The two softmax factors and their elementwise product.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSoftmax {
    /// Softmax over each row of the logits.
    pub row_factor: DMatrix<f64>,
    /// Softmax over each column of the logits.
    pub col_factor: DMatrix<f64>,
    pub soft: DMatrix<f64>,
}

fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.apply(|x| *x = (*x - max).exp());
        let sum: f64 = row.iter().sum();
        row.apply(|x| *x = (*x / sum).max(f64::MIN_POSITIVE));
    }
    out
}

/// Full dual-softmax computation, keeping both factors.
pub fn dual_softmax_factors(
    h_region: &DescriptorSet,
    h_scene: &DescriptorSet,
    temperature: f64,
) -> Result<DualSoftmax, MatchError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(MatchError::InvalidTemperature(temperature));
    }
    if h_region.dim() != h_scene.dim() {
        return Err(MatchError::DimensionMismatch { expected: h_region.dim(), got: h_scene.dim() });
    }
    let (n, m) = (h_region.len(), h_scene.len());
    if n == 0 || m == 0 {
        return Err(MatchError::EmptyInput);
    }
    let logits = DMatrix::from_fn(n, m, |i, j| {
        h_region.row(i).iter().zip(h_scene.row(j)).map(|(a, b)| a * b).sum::<f64>() / temperature
    });
    let row_factor = softmax_rows(&logits);
    let col_factor = softmax_rows(&logits.transpose()).transpose();
    // underflowed entries are floored so every score stays strictly positive
    let soft = row_factor.component_mul(&col_factor).map(|x| x.max(f64::MIN_POSITIVE));
    Ok(DualSoftmax { row_factor, col_factor, soft })
}

/// `rowsoftmax(L) * rowsoftmax(L^T)^T` elementwise, with `L = h_region h_scene^T / temperature`.
pub fn dual_softmax(
    h_region: &DescriptorSet,
    h_scene: &DescriptorSet,
    temperature: f64,
) -> Result<DMatrix<f64>, MatchError> {
    dual_softmax_factors(h_region, h_scene, temperature).map(|d| d.soft)
}

fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Mutual nearest pairs whose score reaches `match_threshold`, ordered by row.
pub fn binarize(soft: &DMatrix<f64>, match_threshold: f64) -> Vec<(usize, usize)> {
    let col_best: Vec<Option<usize>> = (0..soft.ncols()).map(|j| argmax(soft.column(j).iter().copied())).collect();
    (0..soft.nrows())
        .filter_map(|i| {
            let j = argmax(soft.row(i).iter().copied())?;
            (col_best[j] == Some(i) && soft[(i, j)] >= match_threshold).then_some((i, j))
        })
        .collect()
}

/// Soft scores with the binary matches selected from them.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMatrix {
    pub soft: DMatrix<f64>,
    pub binary: Vec<(usize, usize)>,
}

impl CorrespondenceMatrix {
    pub fn from_soft(soft: DMatrix<f64>, match_threshold: f64) -> Self {
        let binary = binarize(&soft, match_threshold);
        Self { soft, binary }
    }

    /// Hard correspondences with unit weight, e.g. from a ground-truth oracle.
    pub fn from_pairs(n_region: usize, m_scene: usize, pairs: &[(usize, usize)]) -> Result<Self, MatchError> {
        let mut soft = DMatrix::zeros(n_region, m_scene);
        for &(i, j) in pairs {
            if i >= n_region || j >= m_scene {
                return Err(MatchError::IndexOutOfBounds { i, j });
            }
            soft[(i, j)] = 1.0;
        }
        Ok(Self { soft, binary: pairs.to_vec() })
    }

    pub fn n_region(&self) -> usize {
        self.soft.nrows()
    }

    pub fn m_scene(&self) -> usize {
        self.soft.ncols()
    }

    /// Binary pairs with their soft scores.
    pub fn weighted_pairs(&self) -> Vec<(usize, usize, f64)> {
        self.binary.iter().map(|&(i, j)| (i, j, self.soft[(i, j)])).collect()
    }
}

fn check_shapes(corr: &CorrespondenceMatrix, region: &[Vector3<f64>], scene: &[Vector3<f64>]) -> Result<(), MatchError> {
    if region.len() != corr.n_region() {
        return Err(MatchError::DimensionMismatch { expected: corr.n_region(), got: region.len() });
    }
    if scene.len() != corr.m_scene() {
        return Err(MatchError::DimensionMismatch { expected: corr.m_scene(), got: scene.len() });
    }
    Ok(())
}

/// Pose `T` minimizing `sum w_ij |T demo_pose^-1 region_i - scene_j|^2` over the binary matches.
pub fn regress_pose(
    corr: &CorrespondenceMatrix,
    region_points: &[Vector3<f64>],
    scene_points: &[Vector3<f64>],
    demo_pose: &Pose,
) -> Result<Pose, MatchError> {
    check_shapes(corr, region_points, scene_points)?;
    if corr.binary.len() < 3 {
        return Err(MatchError::InsufficientMatches(corr.binary.len()));
    }
    let inv = demo_pose.inverse();
    let mut src = Vec::with_capacity(corr.binary.len());
    let mut dst = Vec::with_capacity(corr.binary.len());
    let mut w = Vec::with_capacity(corr.binary.len());
    for &(i, j) in &corr.binary {
        src.push(inv.transform_point(&region_points[i]));
        dst.push(scene_points[j]);
        w.push(corr.soft[(i, j)]);
    }
    let src = WeightedPointSet::new(src, w)?;
    let dst = WeightedPointSet::uniform(dst);
    Ok(solve_weighted_procrustes(&src, &dst)?)
}

/// Like [`regress_pose`] but weighting every region/scene pair by its soft score.
pub fn regress_pose_soft(
    corr: &CorrespondenceMatrix,
    region_points: &[Vector3<f64>],
    scene_points: &[Vector3<f64>],
    demo_pose: &Pose,
) -> Result<Pose, MatchError> {
    check_shapes(corr, region_points, scene_points)?;
    let inv = demo_pose.inverse();
    let local: Vec<Vector3<f64>> = region_points.iter().map(|p| inv.transform_point(p)).collect();
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut w = Vec::new();
    for i in 0..corr.n_region() {
        for j in 0..corr.m_scene() {
            let s = corr.soft[(i, j)];
            if s > 0.0 {
                src.push(local[i]);
                dst.push(scene_points[j]);
                w.push(s);
            }
        }
    }
    if src.len() < 3 {
        return Err(MatchError::InsufficientMatches(src.len()));
    }
    let src = WeightedPointSet::new(src, w)?;
    Ok(solve_weighted_procrustes(&src, &WeightedPointSet::uniform(dst))?)
}

/// Weighted objective of [`regress_pose`] at `pose`.
pub fn correspondence_residual(
    pose: &Pose,
    corr: &CorrespondenceMatrix,
    region_points: &[Vector3<f64>],
    scene_points: &[Vector3<f64>],
    demo_pose: &Pose,
) -> f64 {
    let map = pose.compose(&demo_pose.inverse());
    corr.binary
        .iter()
        .map(|&(i, j)| corr.soft[(i, j)] * (map.transform_point(&region_points[i]) - scene_points[j]).norm_squared())
        .sum()
}

/// Debug dump: `{"pairs": [[i, j, w], ...], "residual": r}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrespondenceDump {
    pub pairs: Vec<(usize, usize, f64)>,
    pub residual: f64,
}

impl CorrespondenceDump {
    pub fn new(corr: &CorrespondenceMatrix, residual: f64) -> Self {
        Self { pairs: corr.weighted_pairs(), residual }
    }
}
