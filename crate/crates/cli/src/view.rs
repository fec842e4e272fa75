//! Synthetic partial views of a point cloud, for exercising fits on
//! occluded observations.

use grasptransfer_core::{Error, Point3, PointSet};
use qhull::Qh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewMode {
    /// Keep the half of the cloud on the viewpoint's side of the plane
    /// through the centroid.
    Halfspace,
    /// Spherical-flip hidden point removal about the viewpoint.
    HiddenPointRemoval,
}

impl std::str::FromStr for ViewMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "halfspace" => Ok(ViewMode::Halfspace),
            "hpr" | "hidden_point_removal" => Ok(ViewMode::HiddenPointRemoval),
            other => Err(Error::InvalidParameter(format!("unknown view mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewSpec {
    pub viewpoint: Point3,
    pub mode: ViewMode,
    pub hpr_radius_multiplier: f64,
}

pub const DEFAULT_HPR_MULTIPLIER: f64 = 3.0;

impl ViewSpec {
    pub fn new(viewpoint: Point3, mode: ViewMode) -> Self {
        Self { viewpoint, mode, hpr_radius_multiplier: DEFAULT_HPR_MULTIPLIER }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !self.viewpoint.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidParameter("viewpoint must be finite".into()));
        }
        if !(self.hpr_radius_multiplier.is_finite() && self.hpr_radius_multiplier > 1.0) {
            return Err(Error::InvalidParameter("HPR radius multiplier must exceed 1".into()));
        }
        Ok(())
    }
}

/// Indices of the points visible under `view`, ascending.
pub fn visible_indices(ps: &PointSet, view: &ViewSpec) -> Result<Vec<usize>, Error> {
    view.validate()?;
    let keep = match view.mode {
        ViewMode::Halfspace => {
            let c = ps.centroid();
            let dir = view.viewpoint - c;
            (0..ps.len()).filter(|&i| (ps[i] - c).dot(&dir) >= 0.0).collect()
        }
        ViewMode::HiddenPointRemoval => hidden_point_removal(ps, view.viewpoint, view.hpr_radius_multiplier)?,
    };
    Ok(keep)
}

pub fn synthesize_partial_view(ps: &PointSet, view: &ViewSpec) -> Result<PointSet, Error> {
    let keep = visible_indices(ps, view)?;
    if keep.is_empty() {
        return Err(Error::DegenerateView("every point was culled".into()));
    }
    ps.select(&keep)
}

fn hidden_point_removal(ps: &PointSet, viewpoint: Point3, multiplier: f64) -> Result<Vec<usize>, Error> {
    let rel: Vec<_> = ps.iter().map(|p| p - viewpoint).collect();
    let radius = multiplier * rel.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if radius <= 0.0 {
        return Err(Error::DegenerateView("all points coincide with the viewpoint".into()));
    }
    let flipped = rel.iter().map(|v| {
        let n = v.norm();
        let f = if n == 0.0 { *v } else { v * (1.0 + 2.0 * (radius - n) / n) };
        [f.x, f.y, f.z]
    });
    // The viewpoint itself closes the hull.
    let hull = Qh::builder()
        .compute(true)
        .build_from_iter(flipped.chain(std::iter::once([0.0; 3])))
        .map_err(|e| Error::DegenerateView(format!("visibility hull failed: {e}")))?;
    let mut keep: Vec<usize> = hull.vertices().filter_map(|v| v.index(&hull)).filter(|&i| i < ps.len()).collect();
    keep.sort_unstable();
    keep.dedup();
    Ok(keep)
}
