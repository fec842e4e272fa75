//! Named point lists: grasp keypoints and their forward-kinematics images.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::geometry::Point3;

/// Ordered list of uniquely named points.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoints {
    names: Vec<String>,
    points: Vec<Point3>,
}

impl Keypoints {
    pub fn new(names: Vec<String>, points: Vec<Point3>) -> Result<Self> {
        if names.len() != points.len() {
            return Err(invalid(format!("{} names for {} keypoints", names.len(), points.len())));
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(invalid(format!("duplicate keypoint name '{n}'")));
            }
        }
        if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(invalid(format!("keypoint '{}' is not finite", names[i])));
        }
        Ok(Self { names, points })
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, Point3)>) -> Result<Self> {
        let (names, points) = pairs.into_iter().map(|(n, p)| (n.into(), p)).unzip();
        Self::new(names, points)
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

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Point3)> {
        self.names.iter().map(String::as_str).zip(&self.points)
    }

    pub fn get(&self, name: &str) -> Option<&Point3> {
        self.names.iter().position(|n| n == name).map(|i| &self.points[i])
    }

    /// Same names, new positions.
    pub fn with_points(&self, points: Vec<Point3>) -> Result<Self> {
        Self::new(self.names.clone(), points)
    }

    /// Errors unless both lists carry exactly the same names, listing the difference.
    pub fn check_same_names(&self, other: &Keypoints) -> Result<()> {
        let a: BTreeSet<&str> = self.names.iter().map(String::as_str).collect();
        let b: BTreeSet<&str> = other.names.iter().map(String::as_str).collect();
        if a == b {
            return Ok(());
        }
        let only_a: Vec<&str> = a.difference(&b).copied().collect();
        let only_b: Vec<&str> = b.difference(&a).copied().collect();
        Err(invalid(format!("keypoint names differ: only in first {only_a:?}, only in second {only_b:?}")))
    }
}
