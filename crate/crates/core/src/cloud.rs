//! Labeled point clouds, nearest-neighbor search, voxel downsampling and the
//! handcrafted descriptors the matcher consumes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::se3::linalg::symmetric_eigen3;
use crate::se3::Pose;

/// Clouds at or above this size are searched through a uniform grid.
pub const GRID_THRESHOLD: usize = 2048;

/// Length of a per-point descriptor.
pub const DESCRIPTOR_DIM: usize = 10;

/// Upper clamp for the local density feature (1 / mean neighbor distance).
pub const DENSITY_CLAMP: f64 = 1e4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CloudError {
    #[error("k = {k} exceeds cloud size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least {min}, got {k}")]
    KTooSmall { k: usize, min: usize },
    #[error("label arrays have {labels} entries for {points} points")]
    LengthMismatch { points: usize, labels: usize },
    #[error("instance {instance} carries classes {first} and {second}")]
    InconsistentClass { instance: u32, first: u32, second: u32 },
    #[error("class {0} is not in the configured vocabulary")]
    UnknownClass(u32),
    #[error("cloud is empty")]
    Empty,
    #[error("voxel size must be positive")]
    BadVoxel,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Point cloud with per-point instance and class labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledCloud {
    points: Vec<Vector3<f64>>,
    instance_ids: Vec<u32>,
    class_ids: Vec<u32>,
}

impl LabeledCloud {
    pub fn new(
        points: Vec<Vector3<f64>>,
        instance_ids: Vec<u32>,
        class_ids: Vec<u32>,
    ) -> Result<Self, CloudError> {
        if instance_ids.len() != points.len() || class_ids.len() != points.len() {
            return Err(CloudError::LengthMismatch {
                points: points.len(),
                labels: instance_ids.len().min(class_ids.len()),
            });
        }
        let mut seen: HashMap<u32, u32> = HashMap::new();
        for (&inst, &cls) in instance_ids.iter().zip(&class_ids) {
            let first = *seen.entry(inst).or_insert(cls);
            if first != cls {
                return Err(CloudError::InconsistentClass {
                    instance: inst,
                    first,
                    second: cls,
                });
            }
        }
        Ok(Self {
            points,
            instance_ids,
            class_ids,
        })
    }

    /// Unlabeled cloud: every point gets instance 0 / class 0.
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        let n = points.len();
        Self {
            points,
            instance_ids: vec![0; n],
            class_ids: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn instance_ids(&self) -> &[u32] {
        &self.instance_ids
    }

    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    /// Sorted distinct instance ids.
    pub fn instances(&self) -> Vec<u32> {
        let mut ids = self.instance_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn class_of(&self, instance: u32) -> Option<u32> {
        self.instance_ids
            .iter()
            .position(|&i| i == instance)
            .map(|idx| self.class_ids[idx])
    }

    /// Indices of the points of one instance, ascending.
    pub fn segment_indices(&self, instance: u32) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.instance_ids[i] == instance)
            .collect()
    }

    pub fn class_indices(&self, class: u32) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.class_ids[i] == class).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledCloud {
        LabeledCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            instance_ids: indices.iter().map(|&i| self.instance_ids[i]).collect(),
            class_ids: indices.iter().map(|&i| self.class_ids[i]).collect(),
        }
    }

    pub fn transformed(&self, pose: &Pose) -> LabeledCloud {
        LabeledCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            instance_ids: self.instance_ids.clone(),
            class_ids: self.class_ids.clone(),
        }
    }

    pub fn extend(&mut self, other: &LabeledCloud) -> Result<(), CloudError> {
        let mut merged = self.clone();
        merged.points.extend_from_slice(&other.points);
        merged.instance_ids.extend_from_slice(&other.instance_ids);
        merged.class_ids.extend_from_slice(&other.class_ids);
        *self = LabeledCloud::new(merged.points, merged.instance_ids, merged.class_ids)?;
        Ok(())
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.is_empty() {
            return None;
        }
        Some(self.points.iter().sum::<Vector3<f64>>() / self.len() as f64)
    }

    /// Text format: one `x y z instance_id class_id` line per point.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            let p = &self.points[i];
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                p.x, p.y, p.z, self.instance_ids[i], self.class_ids[i]
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<LabeledCloud, CloudError> {
        let mut points = Vec::new();
        let mut inst = Vec::new();
        let mut cls = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: &str| CloudError::Parse {
                line: lineno + 1,
                msg: msg.to_string(),
            };
            if fields.len() != 5 {
                return Err(err("expected `x y z instance_id class_id`"));
            }
            let mut xyz = [0.0; 3];
            for (slot, f) in xyz.iter_mut().zip(&fields[..3]) {
                *slot = f.parse::<f64>().map_err(|_| err("bad coordinate"))?;
                if !slot.is_finite() {
                    return Err(err("non-finite coordinate"));
                }
            }
            points.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
            inst.push(fields[3].parse().map_err(|_| err("bad instance id"))?);
            cls.push(fields[4].parse().map_err(|_| err("bad class id"))?);
        }
        LabeledCloud::new(points, inst, cls)
    }
}

/// Exact k-nearest-neighbor index over a fixed point set.
///
/// Results are ordered by ascending distance with ties broken by ascending
/// index. Small sets are scanned directly; large ones go through a uniform
/// grid whose ring search stops only once no unvisited cell can hold a point
/// at or below the current k-th distance.
pub struct NeighborIndex<'a> {
    points: &'a [Vector3<f64>],
    grid: Option<Grid>,
}

struct Grid {
    origin: Vector3<f64>,
    cell: f64,
    dims: [i64; 3],
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> NeighborIndex<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        let grid = (points.len() >= GRID_THRESHOLD).then(|| Grid::build(points));
        Self { points, grid }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Result<Vec<usize>, CloudError> {
        if k > self.points.len() {
            return Err(CloudError::KTooLarge { k, n: self.points.len() });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut found = match &self.grid {
            None => {
                let mut all: Vec<(f64, usize)> = self
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| ((p - query).norm_squared(), i))
                    .collect();
                select_k(&mut all, k);
                all
            }
            Some(grid) => grid.knn(self.points, query, k),
        };
        found.truncate(k);
        Ok(found.into_iter().map(|(_, i)| i).collect())
    }

    /// Nearest point and its distance.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        let idx = *self.knn(query, 1).ok()?.first()?;
        Some((idx, (self.points[idx] - query).norm()))
    }
}

fn cmp_candidates(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn select_k(items: &mut Vec<(f64, usize)>, k: usize) {
    if items.len() > k {
        items.select_nth_unstable_by(k - 1, cmp_candidates);
        items.truncate(k);
    }
    items.sort_by(cmp_candidates);
}

impl Grid {
    fn build(points: &[Vector3<f64>]) -> Grid {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = hi - lo;
        let volume = extent.iter().map(|e| e.max(1e-9)).product::<f64>();
        // about two points per cell on average
        let cell = (volume * 2.0 / points.len() as f64).cbrt().max(1e-9);
        let dims = [0, 1, 2].map(|a| (extent[a] / cell).floor() as i64 + 1);
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let key = [0, 1, 2].map(|a| (((p[a] - lo[a]) / cell).floor() as i64).clamp(0, dims[a] - 1));
            cells.entry(key).or_default().push(i);
        }
        Grid {
            origin: lo,
            cell,
            dims,
            cells,
        }
    }

    fn knn(&self, points: &[Vector3<f64>], query: &Vector3<f64>, k: usize) -> Vec<(f64, usize)> {
        let center = [0, 1, 2].map(|a| ((query[a] - self.origin[a]) / self.cell).floor() as i64);
        let max_ring = (0..3)
            .map(|a| (center[a]).abs().max((self.dims[a] - 1 - center[a]).abs()))
            .max()
            .unwrap_or(0)
            + 1;
        let mut best: Vec<(f64, usize)> = Vec::new();
        for ring in 0..=max_ring {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let key = [center[0] + dx, center[1] + dy, center[2] + dz];
                        if let Some(members) = self.cells.get(&key) {
                            best.extend(
                                members
                                    .iter()
                                    .map(|&i| ((points[i] - query).norm_squared(), i)),
                            );
                        }
                    }
                }
            }
            if best.len() >= k {
                select_k(&mut best, k);
                // any point in ring + 1 or beyond is at least `ring * cell` away
                let bound = ring as f64 * self.cell;
                if best[k - 1].0 < bound * bound {
                    return best;
                }
            }
        }
        let keep = k.min(best.len()).max(1);
        select_k(&mut best, keep);
        best
    }
}

/// k nearest neighbors of `query` in `cloud`, nearest first, ties to the lower index.
pub fn knn(cloud: &LabeledCloud, query: &Vector3<f64>, k: usize) -> Result<Vec<usize>, CloudError> {
    NeighborIndex::new(cloud.points()).knn(query, k)
}

/// Replaces the points of every occupied voxel by their centroid.
///
/// The label of the output point is the majority instance in the voxel (ties
/// to the lowest id) together with that instance's class, so the output keeps
/// the one-class-per-instance invariant. Output is ordered by voxel key.
pub fn voxel_downsample(cloud: &LabeledCloud, voxel: f64) -> Result<LabeledCloud, CloudError> {
    if !(voxel > 0.0) || !voxel.is_finite() {
        return Err(CloudError::BadVoxel);
    }
    let mut bins: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let key = [0, 1, 2].map(|a| (p[a] / voxel).floor() as i64);
        bins.entry(key).or_default().push(i);
    }
    let mut points = Vec::with_capacity(bins.len());
    let mut inst = Vec::with_capacity(bins.len());
    let mut cls = Vec::with_capacity(bins.len());
    for members in bins.values() {
        let c = members.iter().map(|&i| cloud.points[i]).sum::<Vector3<f64>>() / members.len() as f64;
        let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
        for &i in members {
            *votes.entry(cloud.instance_ids[i]).or_default() += 1;
        }
        // ascending iteration + strict `>` keeps the lowest id on ties
        let (winner, _) = votes
            .iter()
            .fold((u32::MAX, 0usize), |acc, (&id, &n)| if n > acc.1 { (id, n) } else { acc });
        let class = members
            .iter()
            .find(|&&i| cloud.instance_ids[i] == winner)
            .map(|&i| cloud.class_ids[i])
            .unwrap_or(0);
        points.push(c);
        inst.push(winner);
        cls.push(class);
    }
    LabeledCloud::new(points, inst, cls)
}

/// One fixed-length vector per cloud point.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    dim: usize,
    data: Vec<f64>,
}

impl DescriptorSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, CloudError> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(CloudError::LengthMismatch {
                points: data.len(),
                labels: dim,
            });
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CloudError> {
        let dim = rows.first().map(Vec::len).ok_or(CloudError::Empty)?;
        if rows.iter().any(|r| r.len() != dim) {
            return Err(CloudError::LengthMismatch {
                points: rows.len(),
                labels: dim,
            });
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn select(&self, indices: &[usize]) -> DescriptorSet {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        DescriptorSet { dim: self.dim, data }
    }

    /// Applies `f` to every row, producing a set of possibly different width.
    pub fn map_rows(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<DescriptorSet, CloudError> {
        let rows: Vec<Vec<f64>> = self.rows().map(f).collect();
        DescriptorSet::from_rows(&rows)
    }
}

/// Column layout of [`point_descriptors`].
pub mod feature {
    pub const LINEARITY: usize = 0;
    pub const PLANARITY: usize = 1;
    pub const SCATTERING: usize = 2;
    pub const HEIGHT: usize = 3;
    pub const CENTROID_DISTANCE: usize = 4;
    pub const PCA_OFFSET: usize = 5;
    pub const DENSITY: usize = 8;
    pub const CLASS: usize = 9;
}

/// Handcrafted per-point descriptors (10 columns, see [`feature`]).
///
/// Columns: linearity, planarity and scattering ratios of the k-NN covariance
/// eigenvalues; height above the cloud's lowest point; distance to the cloud
/// centroid; the offset to the centroid expressed in the cloud's principal
/// axes; local density as the clamped inverse mean neighbor distance; and the
/// class id. Principal axis signs are fixed so that each axis' largest
/// component is positive.
pub fn point_descriptors(cloud: &LabeledCloud, k: usize) -> Result<DescriptorSet, CloudError> {
    let n = cloud.len();
    if k < 4 {
        return Err(CloudError::KTooSmall { k, min: 4 });
    }
    if k > n {
        return Err(CloudError::KTooLarge { k, n });
    }
    let pts = cloud.points();
    let centroid = cloud.centroid().ok_or(CloudError::Empty)?;
    let min_z = pts.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);

    let axes = principal_axes(pts, &centroid);
    let index = NeighborIndex::new(pts);

    let mut data = Vec::with_capacity(n * DESCRIPTOR_DIM);
    for (i, p) in pts.iter().enumerate() {
        let neighbors = index.knn(p, k)?;
        let local_mean =
            neighbors.iter().map(|&j| pts[j]).sum::<Vector3<f64>>() / neighbors.len() as f64;
        let mut cov = Matrix3::zeros();
        let mut dist_sum = 0.0;
        let mut dist_count = 0usize;
        for &j in &neighbors {
            let d = pts[j] - local_mean;
            cov += d * d.transpose();
            if j != i {
                dist_sum += (pts[j] - p).norm();
                dist_count += 1;
            }
        }
        cov /= neighbors.len() as f64;
        let (eig, _) = symmetric_eigen3(&cov);
        let l1 = eig[0].max(0.0);
        let l2 = eig[1].max(0.0);
        let l3 = eig[2].max(0.0);
        let (lin, pla, sca) = if l1 > 0.0 {
            ((l1 - l2) / l1, (l2 - l3) / l1, l3 / l1)
        } else {
            (0.0, 0.0, 0.0)
        };
        let mean_dist = if dist_count > 0 {
            dist_sum / dist_count as f64
        } else {
            0.0
        };
        let density = if mean_dist > 0.0 {
            (1.0 / mean_dist).min(DENSITY_CLAMP)
        } else {
            DENSITY_CLAMP
        };
        let offset = p - centroid;
        let local = axes.transpose() * offset;

        data.extend_from_slice(&[
            lin,
            pla,
            sca,
            p.z - min_z,
            offset.norm(),
            local.x,
            local.y,
            local.z,
            density,
            cloud.class_ids[i] as f64,
        ]);
    }
    DescriptorSet::new(DESCRIPTOR_DIM, data)
}

fn principal_axes(pts: &[Vector3<f64>], centroid: &Vector3<f64>) -> Matrix3<f64> {
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let (_, mut axes) = symmetric_eigen3(&cov);
    for c in 0..3 {
        let col = axes.column(c).into_owned();
        let dominant = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if dominant < 0.0 {
            axes.set_column(c, &(-col));
        }
    }
    axes
}

/// Fixed class list used to lay out scene descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassVocabulary {
    names: Vec<String>,
}

impl ClassVocabulary {
    pub fn new(names: Vec<String>) -> Self {
        Self { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, class: u32) -> bool {
        (class as usize) < self.names.len()
    }
}

/// Per-class point-count histogram, centroid and axis-aligned extents.
pub fn scene_descriptor(cloud: &LabeledCloud, vocab: &ClassVocabulary) -> Result<Vec<f64>, CloudError> {
    if cloud.is_empty() {
        return Err(CloudError::Empty);
    }
    let mut hist = vec![0.0; vocab.len()];
    for &c in cloud.class_ids() {
        if !vocab.contains(c) {
            return Err(CloudError::UnknownClass(c));
        }
        hist[c as usize] += 1.0;
    }
    let centroid = cloud.centroid().ok_or(CloudError::Empty)?;
    let mut lo = cloud.points[0];
    let mut hi = cloud.points[0];
    for p in cloud.points() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extents = hi - lo;
    hist.extend_from_slice(centroid.as_slice());
    hist.extend_from_slice(extents.as_slice());
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_cloud(xs: &[f64]) -> LabeledCloud {
        LabeledCloud::from_points(xs.iter().map(|&x| Vector3::new(x, 0.0, 0.0)).collect())
    }

    #[test]
    fn knn_examples() {
        let single = line_cloud(&[0.0]);
        assert_eq!(knn(&single, &Vector3::new(5.0, 5.0, 5.0), 1).unwrap(), vec![0]);

        let three = line_cloud(&[0.0, 1.0, 2.0]);
        assert_eq!(knn(&three, &Vector3::new(0.9, 0.0, 0.0), 2).unwrap(), vec![1, 0]);

        let tie = line_cloud(&[1.0, -1.0]);
        assert_eq!(knn(&tie, &Vector3::zeros(), 1).unwrap(), vec![0]);

        assert_eq!(
            knn(&three, &Vector3::zeros(), 4),
            Err(CloudError::KTooLarge { k: 4, n: 3 })
        );
    }

    #[test]
    fn grid_search_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vector3<f64>> = (0..3000)
            .map(|_| Vector3::new(rng.gen::<f64>(), rng.gen::<f64>() * 0.5, rng.gen::<f64>() * 0.1))
            .collect();
        let index = NeighborIndex::new(&pts);
        assert!(index.grid.is_some());
        for _ in 0..50 {
            let q = Vector3::new(rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..0.7), rng.gen_range(-0.1..0.2));
            let k = rng.gen_range(1..20);
            let mut brute: Vec<(f64, usize)> =
                pts.iter().enumerate().map(|(i, p)| ((p - q).norm_squared(), i)).collect();
            brute.sort_by(cmp_candidates);
            let expected: Vec<usize> = brute[..k].iter().map(|c| c.1).collect();
            assert_eq!(index.knn(&q, k).unwrap(), expected);
        }
    }

    #[test]
    fn voxel_examples() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.3, 0.1, 0.0),
            Vector3::new(0.1, 0.4, 0.2),
        ];
        let cloud = LabeledCloud::from_points(pts.clone());
        let one = voxel_downsample(&cloud, 10.0).unwrap();
        assert_eq!(one.len(), 1);
        let c = pts.iter().sum::<Vector3<f64>>() / 3.0;
        assert!((one.points()[0] - c).norm() < 1e-15);

        let apart = line_cloud(&[0.0, 1.0]);
        assert_eq!(voxel_downsample(&apart, 0.1).unwrap().len(), 2);

        // corners of a 0.05 square inside the voxel [0, 0.1)^3
        let square = LabeledCloud::from_points(vec![
            Vector3::new(0.02, 0.02, 0.05),
            Vector3::new(0.07, 0.02, 0.05),
            Vector3::new(0.02, 0.07, 0.05),
            Vector3::new(0.07, 0.07, 0.05),
        ]);
        let down = voxel_downsample(&square, 0.1).unwrap();
        assert_eq!(down.len(), 1);
        assert!((down.points()[0] - Vector3::new(0.045, 0.045, 0.05)).norm() < 1e-15);

        assert_eq!(voxel_downsample(&square, 0.0), Err(CloudError::BadVoxel));
    }

    #[test]
    fn voxel_majority_label_ties_to_lowest() {
        let cloud = LabeledCloud::new(
            vec![Vector3::new(0.01, 0.0, 0.0), Vector3::new(0.02, 0.0, 0.0)],
            vec![7, 3],
            vec![1, 2],
        )
        .unwrap();
        let down = voxel_downsample(&cloud, 1.0).unwrap();
        assert_eq!(down.instance_ids(), &[3]);
        assert_eq!(down.class_ids(), &[2]);
    }

    #[test]
    fn plane_has_zero_scattering() {
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                pts.push(Vector3::new(i as f64 * 0.1, j as f64 * 0.13, 0.5));
            }
        }
        let d = point_descriptors(&LabeledCloud::from_points(pts), 8).unwrap();
        for row in d.rows() {
            assert!(row[feature::SCATTERING].abs() < 1e-12);
            assert!(row[feature::HEIGHT].abs() < 1e-12);
        }
    }

    #[test]
    fn descriptor_class_column_and_errors() {
        let pts: Vec<Vector3<f64>> = (0..6).map(|i| Vector3::new(i as f64, (i * i) as f64, 0.0)).collect();
        let a = LabeledCloud::new(pts.clone(), vec![1; 6], vec![2; 6]).unwrap();
        let b = LabeledCloud::new(pts, vec![1; 6], vec![5; 6]).unwrap();
        let da = point_descriptors(&a, 4).unwrap();
        let db = point_descriptors(&b, 4).unwrap();
        assert_eq!(da.row(0)[feature::CLASS], 2.0);
        assert_ne!(da.row(0)[feature::CLASS], db.row(0)[feature::CLASS]);
        assert!(matches!(point_descriptors(&a, 7), Err(CloudError::KTooLarge { .. })));
        assert!(matches!(point_descriptors(&a, 3), Err(CloudError::KTooSmall { .. })));
    }

    #[test]
    fn scene_descriptor_examples() {
        let vocab = ClassVocabulary::new(vec!["a".into(), "b".into(), "c".into()]);
        let cloud = LabeledCloud::new(
            vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 2.0, 0.0)],
            vec![1, 2],
            vec![0, 2],
        )
        .unwrap();
        let d = scene_descriptor(&cloud, &vocab).unwrap();
        assert_eq!(d, scene_descriptor(&cloud, &vocab).unwrap());
        assert_eq!(&d[..3], &[1.0, 0.0, 1.0]);
        assert_eq!(&d[3..6], &[0.5, 1.0, 0.0]);
        assert_eq!(&d[6..], &[1.0, 2.0, 0.0]);

        let moved = cloud.transformed(&Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)));
        let dm = scene_descriptor(&moved, &vocab).unwrap();
        assert_eq!(&dm[..3], &d[..3]);
        assert!((dm[3] - d[3] - 1.0).abs() < 1e-15);
        assert_eq!(&dm[4..], &d[4..]);

        let bad = LabeledCloud::new(vec![Vector3::zeros()], vec![0], vec![9]).unwrap();
        assert_eq!(scene_descriptor(&bad, &vocab), Err(CloudError::UnknownClass(9)));
    }

    #[test]
    fn text_round_trip_and_label_checks() {
        let cloud = LabeledCloud::new(
            vec![Vector3::new(0.125, -1.5, 2.0), Vector3::new(1e-3, 0.0, 3.25)],
            vec![1, 4],
            vec![2, 3],
        )
        .unwrap();
        assert_eq!(LabeledCloud::from_text(&cloud.to_text()).unwrap(), cloud);
        assert!(LabeledCloud::from_text("1 2 3 4").is_err());
        assert!(matches!(
            LabeledCloud::new(vec![Vector3::zeros(); 2], vec![1, 1], vec![0, 1]),
            Err(CloudError::InconsistentClass { .. })
        ));
    }
}
