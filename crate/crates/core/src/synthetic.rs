//! Parametric object families with known shape parameters.
//!
//! The canonical instance sits at the midpoint of every parameter range.
//! Instances are sampled at their own surface parameters, so there is no
//! point-to-point correspondence between clouds; registration has to find
//! it, as it would for independently meshed objects.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};
use core::fmt;
use core::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point3, PointSet};

pub const DEFAULT_POINTS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    EllipsoidMugs,
    StretchedHammers,
    ScaledDrillBlanks,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::EllipsoidMugs, Family::StretchedHammers, Family::ScaledDrillBlanks];

    pub fn name(&self) -> &'static str {
        match self {
            Family::EllipsoidMugs => "ellipsoid_mugs",
            Family::StretchedHammers => "stretched_hammers",
            Family::ScaledDrillBlanks => "scaled_drill_blanks",
        }
    }

    /// `(name, lo, hi)` for every shape parameter, in meters or unitless.
    pub fn parameter_ranges(&self) -> &'static [(&'static str, f64, f64)] {
        match self {
            Family::EllipsoidMugs => &[("radius", 0.035, 0.050), ("height", 0.080, 0.120), ("handle_radius", 0.020, 0.035)],
            Family::StretchedHammers => &[("handle_length", 0.25, 0.35), ("head_scale", 0.8, 1.2)],
            Family::ScaledDrillBlanks => {
                &[("body_length", 0.15, 0.22), ("body_radius", 0.025, 0.035), ("handle_length", 0.08, 0.12)]
            }
        }
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.parameter_ranges().iter().map(|(_, lo, hi)| 0.5 * (lo + hi)).collect()
    }

    /// Surface point for parameters `params` at sample `s`.
    pub fn surface_point(&self, params: &[f64], s: &SurfaceSample) -> Point3 {
        let (u, v) = (s.u, s.v);
        match self {
            Family::EllipsoidMugs => {
                let (r, h, hr) = (params[0], params[1], params[2]);
                if s.patch == 0 {
                    let d = sphere_direction(u, v);
                    Point3::new(r * d.x, r * d.y, 0.5 * h * d.z)
                } else {
                    // Half torus on the +x side, tube radius 6 mm.
                    let phi = (u - 0.5) * PI;
                    let theta = v * TAU;
                    let tube = 0.006;
                    let ring = hr + tube * theta.cos();
                    Point3::new(r + ring * phi.cos(), tube * theta.sin(), ring * phi.sin())
                }
            }
            Family::StretchedHammers => {
                let (len, hs) = (params[0], params[1]);
                if s.patch == 0 {
                    let a = v * TAU;
                    Point3::new(0.012 * a.cos(), 0.012 * a.sin(), u * len)
                } else {
                    let a = v * TAU;
                    let (hl, hr) = (0.10 * hs, 0.015 * hs);
                    Point3::new((u - 0.5) * hl, hr * a.cos(), len + hr * a.sin())
                }
            }
            Family::ScaledDrillBlanks => {
                let (bl, br, hl) = (params[0], params[1], params[2]);
                if s.patch == 0 {
                    let a = v * TAU;
                    Point3::new((u - 0.5) * bl, br * a.cos(), br * a.sin())
                } else {
                    let a = v * TAU;
                    Point3::new(-0.2 * bl + 0.015 * a.cos(), 0.015 * a.sin(), -br - u * hl)
                }
            }
        }
    }

    fn second_patch_fraction(&self) -> f64 {
        match self {
            Family::EllipsoidMugs => 0.15,
            Family::StretchedHammers => 0.4,
            Family::ScaledDrillBlanks => 0.4,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| invalid(format!("unknown family '{s}'")))
    }
}

/// Uniform direction on the unit sphere from `(u, v)` in `[0, 1)^2`.
fn sphere_direction(u: f64, v: f64) -> Vector3<f64> {
    let z = 1.0 - 2.0 * u;
    let r = (1.0 - z * z).max(0.0).sqrt();
    let a = v * TAU;
    Vector3::new(r * a.cos(), r * a.sin(), z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub patch: u8,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceParams {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCategory {
    pub family: Family,
    pub canonical: PointSet,
    pub canonical_params: InstanceParams,
    pub instances: Vec<PointSet>,
    pub ground_truth: Vec<InstanceParams>,
    /// Surface parameters of the canonical cloud.
    pub samples: Vec<SurfaceSample>,
}

impl SyntheticCategory {
    /// Member with parameters `values`, sampled where the canonical is.
    pub fn instance_for(&self, values: &[f64]) -> Result<PointSet> {
        if values.len() != self.family.parameter_ranges().len() {
            return Err(invalid("parameter count does not match the family"));
        }
        PointSet::new(self.samples.iter().map(|s| self.family.surface_point(values, s)).collect())
    }
}

pub fn surface_samples(family: Family, points: usize, seed: u64) -> Vec<SurfaceSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a4d_91e5);
    let second = ((points as f64) * family.second_patch_fraction()).round() as usize;
    (0..points)
        .map(|i| SurfaceSample {
            patch: u8::from(i >= points - second),
            u: rng.random::<f64>(),
            v: rng.random::<f64>(),
        })
        .collect()
}

/// Canonical plus `n` random instances with their ground-truth parameters.
pub fn generate_synthetic_category(family: Family, n: usize, seed: u64) -> Result<SyntheticCategory> {
    generate_synthetic_category_with(family, n, DEFAULT_POINTS, seed)
}

pub fn generate_synthetic_category_with(family: Family, n: usize, points: usize, seed: u64) -> Result<SyntheticCategory> {
    if n < 2 {
        return Err(invalid("a synthetic category needs at least 2 instances"));
    }
    if points < 8 {
        return Err(invalid("need at least 8 points per instance"));
    }
    let samples = surface_samples(family, points, seed);
    let names: Vec<String> = family.parameter_ranges().iter().map(|(n, _, _)| String::from(*n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let build = |values: &[f64], at: &[SurfaceSample]| PointSet::new(at.iter().map(|s| family.surface_point(values, s)).collect());

    let mid = family.midpoint();
    let canonical = build(&mid, &samples)?;
    let mut instances = Vec::with_capacity(n);
    let mut ground_truth = Vec::with_capacity(n);
    for i in 0..n {
        let values: Vec<f64> = family.parameter_ranges().iter().map(|(_, lo, hi)| rng.random_range(*lo..*hi)).collect();
        // Each instance gets its own surface samples, as independently
        // scanned or meshed objects would.
        let own = surface_samples(family, points, seed.wrapping_add(1 + i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        instances.push(build(&values, &own)?);
        ground_truth.push(InstanceParams { names: names.clone(), values });
    }
    Ok(SyntheticCategory {
        family,
        canonical,
        canonical_params: InstanceParams { names, values: mid },
        instances,
        ground_truth,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_counted() {
        let a = generate_synthetic_category(Family::EllipsoidMugs, 10, 7).unwrap();
        let b = generate_synthetic_category(Family::EllipsoidMugs, 10, 7).unwrap();
        assert_eq!(a.instances.len(), 10);
        assert_eq!(a.instances, b.instances);
        assert_eq!(a.canonical, b.canonical);
        assert_eq!(a.canonical.len(), DEFAULT_POINTS);
    }

    #[test]
    fn parameters_within_ranges() {
        for family in Family::ALL {
            let cat = generate_synthetic_category(family, 20, 3).unwrap();
            for gt in &cat.ground_truth {
                for (v, (_, lo, hi)) in gt.values.iter().zip(family.parameter_ranges()) {
                    assert!(*v >= *lo && *v < *hi);
                }
            }
            assert_eq!(cat.instance_for(&cat.canonical_params.values).unwrap(), cat.canonical);
        }
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("spoons".parse::<Family>().is_err());
        assert!(generate_synthetic_category(Family::EllipsoidMugs, 1, 0).is_err());
    }
}
