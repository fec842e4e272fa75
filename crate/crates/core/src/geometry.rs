//! Shared geometric primitives: point sets, poses, Gaussian kernels,
//! normalization and deterministic subsampling.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Index;

use nalgebra::{DMatrix, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{invalid, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Nonempty, finite, ordered set of points. A point's identity is its index.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<Point3>,
}

impl PointSet {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("point set must be nonempty"));
        }
        if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    /// Builds a set from `[x, y, z]` triples.
    pub fn from_coords(coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(coords.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn centroid(&self) -> Point3 {
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Point3::from(sum / self.points.len() as f64)
    }

    /// Subset by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let p = self
                .points
                .get(i)
                .ok_or_else(|| invalid(format!("index {i} out of range for {} points", self.len())))?;
            out.push(*p);
        }
        Self::new(out)
    }

    /// Applies `f` to every point. The result is revalidated.
    pub fn map(&self, f: impl Fn(&Point3) -> Point3) -> Result<Self> {
        Self::new(self.points.iter().map(f).collect())
    }

    /// Row-major `N x 3` matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), 3, |i, j| self.points[i][j])
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() != 3 {
            return Err(invalid(format!("expected 3 columns, got {}", m.ncols())));
        }
        Self::new((0..m.nrows()).map(|i| Point3::new(m[(i, 0)], m[(i, 1)], m[(i, 2)])).collect())
    }
}

impl Index<usize> for PointSet {
    type Output = Point3;
    fn index(&self, i: usize) -> &Point3 {
        &self.points[i]
    }
}

impl<'a> IntoIterator for &'a PointSet {
    type Item = &'a Point3;
    type IntoIter = core::slice::Iter<'a, Point3>;
    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

/// Rigid pose. The orientation is kept on the `w >= 0` half of the double cover.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self { position, orientation: canonicalize(orientation) }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_translation(position: Vector3<f64>) -> Self {
        Self::new(position, UnitQuaternion::identity())
    }

    /// From a `[w, x, y, z]` quaternion, which is normalized here.
    pub fn from_wxyz(position: [f64; 3], wxyz: [f64; 4]) -> Result<Self> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if !norm.is_finite() || norm < 1e-12 || position.iter().any(|c| !c.is_finite()) {
            return Err(invalid("pose must have finite position and a nonzero finite quaternion"));
        }
        Ok(Self::new(Vector3::from(position), UnitQuaternion::from_quaternion(q)))
    }

    pub fn orientation(&self) -> &UnitQuaternion<f64> {
        &self.orientation
    }

    pub fn set_orientation(&mut self, q: UnitQuaternion<f64>) {
        self.orientation = canonicalize(q);
    }

    /// `[w, x, y, z]`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.orientation * p.coords + self.position)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * v
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.orientation * other.position + self.position,
            self.orientation * other.orientation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose::new(-(inv * self.position), inv)
    }
}

fn canonicalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let q = UnitQuaternion::new_normalize(*q.quaternion());
    if q.quaternion().w < 0.0 {
        UnitQuaternion::new_unchecked(-*q.quaternion())
    } else {
        q
    }
}

/// Rotation angle between two orientations, `2 acos(|<a, b>|)`, in `[0, pi]`.
pub fn angular_distance(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let dot = a.quaternion().coords.dot(&b.quaternion().coords).abs().min(1.0);
    2.0 * dot.acos()
}

/// Similarity map `p -> (p - centroid) / scale` into the registration frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationParams {
    pub centroid: Point3,
    pub scale: f64,
}

impl NormalizationParams {
    pub fn new(centroid: Point3, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!("normalization scale must be positive, got {scale}")));
        }
        if !centroid.coords.iter().all(|c| c.is_finite()) {
            return Err(invalid("normalization centroid must be finite"));
        }
        Ok(Self { centroid, scale })
    }

    pub fn identity() -> Self {
        Self { centroid: Point3::origin(), scale: 1.0 }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from((p - self.centroid) / self.scale)
    }

    pub fn invert(&self, p: &Point3) -> Point3 {
        self.centroid + p.coords * self.scale
    }

    pub fn apply_set(&self, ps: &PointSet) -> PointSet {
        PointSet { points: ps.iter().map(|p| self.apply(p)).collect() }
    }

    pub fn invert_set(&self, ps: &PointSet) -> PointSet {
        PointSet { points: ps.iter().map(|p| self.invert(p)).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub points: PointSet,
    pub params: NormalizationParams,
    /// All input points coincided; `scale` was forced to 1.
    pub degenerate: bool,
}

/// Centers on the centroid and scales to unit RMS radius.
pub fn normalize(ps: &PointSet) -> Normalized {
    let centroid = ps.centroid();
    let mean_sq = ps.iter().map(|p| (p - centroid).norm_squared()).sum::<f64>() / ps.len() as f64;
    let rms = mean_sq.sqrt();
    let tiny = f64::EPSILON * centroid.coords.amax().max(1.0);
    let degenerate = !(rms > tiny);
    let params = NormalizationParams { centroid, scale: if degenerate { 1.0 } else { rms } };
    Normalized { points: params.apply_set(ps), params, degenerate }
}

pub fn denormalize(ps: &PointSet, params: &NormalizationParams) -> PointSet {
    params.invert_set(ps)
}

/// `exp(-|a - b|^2 / (2 beta^2))` for every pair, `rows.len() x cols.len()`.
pub fn gaussian_kernel_matrix(rows: &PointSet, cols: &PointSet, beta: f64) -> Result<DMatrix<f64>> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid(format!("kernel width must be positive, got {beta}")));
    }
    Ok(kernel_matrix(rows.points(), cols.points(), beta))
}

pub(crate) fn kernel_matrix(rows: &[Point3], cols: &[Point3], beta: f64) -> DMatrix<f64> {
    let k = -0.5 / (beta * beta);
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| ((rows[i] - cols[j]).norm_squared() * k).exp())
}

/// Symmetric mean nearest-neighbour distance: the average of the two
/// directional means.
pub fn chamfer_distance(a: &PointSet, b: &PointSet) -> f64 {
    0.5 * (mean_nearest(a.points(), b.points()) + mean_nearest(b.points(), a.points()))
}

fn mean_nearest(from: &[Point3], to: &[Point3]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|p| to.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt())
        .sum();
    total / from.len() as f64
}

/// Indices chosen by farthest-point sampling. The first index is drawn from a
/// ChaCha stream seeded with `seed`; ties break towards the lower index.
pub fn farthest_point_indices(ps: &PointSet, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = ps.len();
    if k == 0 || k > n {
        return Err(invalid(format!("cannot sample {k} points from a set of {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let pts = ps.points();
    let mut chosen = Vec::with_capacity(k);
    let mut min_d2: Vec<f64> = pts.iter().map(|p| (p - pts[first]).norm_squared()).collect();
    let mut taken = alloc::vec![false; n];
    chosen.push(first);
    taken[first] = true;
    while chosen.len() < k {
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for (i, &d) in min_d2.iter().enumerate() {
            if !taken[i] && d > best_d {
                best = i;
                best_d = d;
            }
        }
        taken[best] = true;
        chosen.push(best);
        let c = pts[best];
        for (d, p) in min_d2.iter_mut().zip(pts) {
            *d = d.min((p - c).norm_squared());
        }
    }
    Ok(chosen)
}

pub fn farthest_point_sample(ps: &PointSet, k: usize, seed: u64) -> Result<PointSet> {
    let idx = farthest_point_indices(ps, k, seed)?;
    ps.select(&idx)
}

/// Returns `ps` unchanged when it already has at most `limit` points.
pub fn subsample_to(ps: &PointSet, limit: usize, seed: u64) -> Result<PointSet> {
    if ps.len() <= limit {
        Ok(ps.clone())
    } else {
        farthest_point_sample(ps, limit, seed)
    }
}
