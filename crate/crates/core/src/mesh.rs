//! Triangle meshes and area-weighted surface sampling.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{invalid, Result};
use crate::geometry::{Point3, PointSet};

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: PointSet,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Validates indices and drops zero-area faces.
    pub fn new(vertices: PointSet, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some((i, f)) = faces.iter().enumerate().find(|(_, f)| f.iter().any(|&v| v >= n)) {
            return Err(invalid(format!("face {i} references vertex {:?} but the mesh has {n} vertices", f)));
        }
        let faces = faces.into_iter().filter(|f| triangle_area(&vertices, f) > 0.0).collect();
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &PointSet {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_area(&self, face: usize) -> f64 {
        triangle_area(&self.vertices, &self.faces[face])
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }
}

fn triangle_area(v: &PointSet, f: &[usize; 3]) -> f64 {
    let (a, b, c) = (v[f[0]], v[f[1]], v[f[2]]);
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Face indices used for every sample of [`sample_surface`], same order.
pub fn sample_surface_with_faces(mesh: &TriangleMesh, k: usize, seed: u64) -> Result<(PointSet, Vec<usize>)> {
    if mesh.faces.is_empty() {
        return Err(invalid("cannot sample an empty mesh"));
    }
    if k == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(k);
    let mut faces = Vec::with_capacity(k);
    for _ in 0..k {
        let target = rng.random::<f64>() * total;
        let fi = cumulative.partition_point(|&c| c <= target).min(mesh.faces.len() - 1);
        let [ia, ib, ic] = mesh.faces[fi];
        let (a, b, c) = (mesh.vertices[ia], mesh.vertices[ib], mesh.vertices[ic]);
        let r1 = rng.random::<f64>().sqrt();
        let r2 = rng.random::<f64>();
        let p = a.coords * (1.0 - r1) + b.coords * (r1 * (1.0 - r2)) + c.coords * (r1 * r2);
        points.push(Point3::from(p));
        faces.push(fi);
    }
    Ok((PointSet::new(points)?, faces))
}

/// `k` points drawn uniformly by area, deterministic in `seed`.
pub fn sample_surface(mesh: &TriangleMesh, k: usize, seed: u64) -> Result<PointSet> {
    Ok(sample_surface_with_faces(mesh, k, seed)?.0)
}
