//! Shaped reward terms and success tests for the tool-use tasks.
//!
//! Physics is out of scope: distances, depth increments and lift shortfall
//! are supplied by whatever simulator drives the policy.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use core::fmt;
use core::str::FromStr;
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{invalid, Error, Result};
use crate::geometry::{angular_distance, PointSet, Pose};

pub const TERMS: [&str; 6] = ["r_pose", "r_success", "r_dist", "r_depth", "r_kp", "r_lift"];

#[derive(Debug, Clone, PartialEq)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub weights: BTreeMap<String, f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        let weights = TERMS.iter().zip([25.0, 100.0, 0.25, 100.0, 0.001, 0.05]).map(|(t, w)| (String::from(*t), w)).collect();
        Self { alpha: 10.0, beta: 1.0, epsilon: 0.025, weights }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(invalid("alpha and beta must be finite"));
        }
        for (name, w) in &self.weights {
            if !TERMS.contains(&name.as_str()) {
                return Err(invalid(format!("unknown reward term '{name}'")));
            }
            if !w.is_finite() {
                return Err(invalid(format!("weight of {name} is not finite")));
            }
        }
        Ok(())
    }

    /// Missing terms weigh zero.
    pub fn weight(&self, term: &str) -> f64 {
        self.weights.get(term).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessThresholds {
    pub position: f64,
    pub orientation: f64,
    pub nail_depth: f64,
}

impl Default for SuccessThresholds {
    fn default() -> Self {
        Self { position: 0.03, orientation: 0.2, nail_depth: 0.075 }
    }
}

impl SuccessThresholds {
    pub fn validate(&self) -> Result<()> {
        if [self.position, self.orientation, self.nail_depth].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(invalid("success thresholds must be positive"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskState {
    pub tool_pose: Pose,
    pub target_pose: Pose,
    /// Summed distance between hand keypoints and their grasp targets.
    pub keypoint_distance_sum: f64,
    pub tool_surface_points: Option<PointSet>,
    /// Nail depth gained this step.
    pub nail_depth_delta: f64,
    /// Total depth the nail has been driven.
    pub nail_depth: f64,
    pub hammer_nail_distance: f64,
    pub table_height: f64,
    /// How far the tool's lowest point is below the target lift height.
    pub lift_shortfall: f64,
}

impl TaskState {
    pub fn new(tool_pose: Pose, target_pose: Pose) -> Self {
        Self {
            tool_pose,
            target_pose,
            keypoint_distance_sum: 0.0,
            tool_surface_points: None,
            nail_depth_delta: 0.0,
            nail_depth: 0.0,
            hammer_nail_distance: 0.0,
            table_height: 0.0,
            lift_shortfall: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let distances = [
            ("keypoint_distance_sum", self.keypoint_distance_sum),
            ("hammer_nail_distance", self.hammer_nail_distance),
            ("lift_shortfall", self.lift_shortfall),
        ];
        for (name, v) in distances {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        for (name, v) in [("nail_depth_delta", self.nail_depth_delta), ("nail_depth", self.nail_depth), ("table_height", self.table_height)] {
            if !v.is_finite() {
                return Err(invalid(format!("{name} must be finite")));
            }
        }
        if !self.tool_pose.position.iter().chain(self.target_pose.position.iter()).all(|c| c.is_finite()) {
            return Err(invalid("poses must be finite"));
        }
        Ok(())
    }

    pub fn position_error(&self) -> f64 {
        (self.tool_pose.position - self.target_pose.position).norm()
    }

    pub fn orientation_error(&self) -> f64 {
        angular_distance(self.tool_pose.orientation(), self.target_pose.orientation())
    }
}

pub fn r_pose(state: &TaskState, cfg: &RewardConfig) -> f64 {
    (-cfg.alpha * state.position_error() - cfg.beta * state.orientation_error()).exp()
}

/// 1 when both pose errors are strictly below their thresholds.
pub fn r_success(state: &TaskState, thresholds: &SuccessThresholds) -> f64 {
    if state.position_error() < thresholds.position && state.orientation_error() < thresholds.orientation {
        1.0
    } else {
        0.0
    }
}

fn reciprocal(delta: f64, cfg: &RewardConfig) -> f64 {
    1.0 / (cfg.epsilon + delta)
}

pub fn r_dist(state: &TaskState, cfg: &RewardConfig) -> f64 {
    reciprocal(state.hammer_nail_distance, cfg)
}

pub fn r_depth(state: &TaskState) -> f64 {
    state.nail_depth_delta
}

pub fn r_kp(state: &TaskState, cfg: &RewardConfig) -> f64 {
    reciprocal(state.keypoint_distance_sum, cfg)
}

pub fn r_lift(state: &TaskState, cfg: &RewardConfig) -> f64 {
    reciprocal(state.lift_shortfall, cfg)
}

/// Whether the nail has been driven deeper than the threshold.
pub fn nail_driven(state: &TaskState, thresholds: &SuccessThresholds) -> bool {
    state.nail_depth > thresholds.nail_depth
}

/// Height of the tool's lowest surface point above the table; negative when
/// the tool penetrates it.
pub fn lowest_point_height(surface_points: &PointSet, tool_pose: &Pose, table_height: f64) -> f64 {
    surface_points
        .iter()
        .map(|p| tool_pose.transform_point(p).z)
        .fold(f64::INFINITY, f64::min)
        - table_height
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    PlaceMug,
    PositionDrill,
    DriveNail,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::PlaceMug, Task::PositionDrill, Task::DriveNail];

    pub fn name(&self) -> &'static str {
        match self {
            Task::PlaceMug => "place_mug",
            Task::PositionDrill => "position_drill",
            Task::DriveNail => "drive_nail",
        }
    }

    pub fn terms(&self) -> &'static [&'static str] {
        match self {
            Task::PlaceMug | Task::PositionDrill => &["r_pose", "r_success", "r_kp", "r_lift"],
            Task::DriveNail => &["r_dist", "r_depth", "r_kp", "r_lift"],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Task::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| invalid(format!("unknown task '{s}'")))
    }
}

/// Unweighted value of one named term.
pub fn term(name: &str, state: &TaskState, cfg: &RewardConfig, thresholds: &SuccessThresholds) -> Result<f64> {
    Ok(match name {
        "r_pose" => r_pose(state, cfg),
        "r_success" => r_success(state, thresholds),
        "r_dist" => r_dist(state, cfg),
        "r_depth" => r_depth(state),
        "r_kp" => r_kp(state, cfg),
        "r_lift" => r_lift(state, cfg),
        other => return Err(invalid(format!("unknown reward term '{other}'"))),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardBreakdown {
    /// Unweighted values of the task's terms.
    pub terms: BTreeMap<String, f64>,
    pub total: f64,
    pub success: bool,
}

/// Weighted sum of the task terms and the shared grasping terms.
pub fn evaluate(state: &TaskState, cfg: &RewardConfig, thresholds: &SuccessThresholds, task: Task) -> Result<RewardBreakdown> {
    cfg.validate()?;
    thresholds.validate()?;
    state.validate()?;
    let mut terms = BTreeMap::new();
    let mut total = 0.0;
    for &t in task.terms() {
        let v = term(t, state, cfg, thresholds)?;
        total += cfg.weight(t) * v;
        terms.insert(String::from(t), v);
    }
    let success = match task {
        Task::DriveNail => nail_driven(state, thresholds),
        _ => r_success(state, thresholds) == 1.0,
    };
    Ok(RewardBreakdown { terms, total, success })
}

pub fn total_reward(state: &TaskState, cfg: &RewardConfig, thresholds: &SuccessThresholds, task: Task) -> Result<f64> {
    Ok(evaluate(state, cfg, thresholds, task)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use approx::assert_relative_eq;
    use core::f64::consts::PI;
    use nalgebra::{UnitQuaternion, Vector3};
    use proptest::prelude::{prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn at(position: [f64; 3], angle_z: f64) -> Pose {
        Pose::new(Vector3::from(position), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle_z))
    }

    fn state(d: f64, theta: f64) -> TaskState {
        TaskState::new(at([d, 0.0, 0.0], theta), at([0.0; 3], 0.0))
    }

    #[test]
    fn pose_term_values() {
        let cfg = RewardConfig::default();
        assert_eq!(r_pose(&state(0.0, 0.0), &cfg), 1.0);
        assert_relative_eq!(r_pose(&state(0.1, 0.0), &cfg), (-1.0f64).exp(), epsilon = 1e-12);
        assert!((r_pose(&state(0.1, 0.0), &cfg) - 0.36788).abs() < 1e-5);
        assert_relative_eq!(r_pose(&state(0.0, PI), &cfg), (-PI).exp(), epsilon = 1e-9);
        assert!((r_pose(&state(0.0, PI), &cfg) - 0.04322).abs() < 1e-5);
    }

    #[test]
    fn success_is_strict() {
        let th = SuccessThresholds::default();
        assert_eq!(r_success(&state(0.029, 0.19), &th), 1.0);
        assert_eq!(r_success(&state(0.03, 0.0), &th), 0.0);
        assert_eq!(r_success(&state(0.0, 0.3), &th), 0.0);
        let mut s = state(0.0, 0.0);
        s.nail_depth = 0.075;
        assert!(!nail_driven(&s, &th));
        s.nail_depth = 0.0751;
        assert!(nail_driven(&s, &th));
    }

    #[test]
    fn reciprocal_terms() {
        let cfg = RewardConfig::default();
        let mut s = state(0.0, 0.0);
        s.hammer_nail_distance = 0.075;
        assert_relative_eq!(r_dist(&s, &cfg), 10.0, epsilon = 1e-12);
        s.hammer_nail_distance = 0.0;
        assert_relative_eq!(r_dist(&s, &cfg), 40.0, epsilon = 1e-12);
        s.keypoint_distance_sum = 0.975;
        s.lift_shortfall = 0.975;
        assert_relative_eq!(r_kp(&s, &cfg), 1.0, epsilon = 1e-12);
        assert_relative_eq!(r_lift(&s, &cfg), 1.0, epsilon = 1e-12);
        s.nail_depth_delta = 0.01;
        assert_eq!(r_depth(&s), 0.01);
    }

    #[test]
    fn total_reward_examples() {
        let cfg = RewardConfig::default();
        let th = SuccessThresholds::default();
        let s = state(0.0, 0.0);
        let total = total_reward(&s, &cfg, &th, Task::PlaceMug).unwrap();
        assert!((total - (25.0 * 1.0 + 100.0 * 1.0 + 0.001 * 40.0 + 0.05 * 40.0)).abs() < 1e-9);
        assert!((total - 127.04).abs() < 1e-9);

        let mut nail = state(0.0, 0.0);
        nail.hammer_nail_distance = 0.075;
        nail.nail_depth_delta = 0.01;
        nail.keypoint_distance_sum = 0.975;
        nail.lift_shortfall = 0.975;
        let total = total_reward(&nail, &cfg, &th, Task::DriveNail).unwrap();
        assert!((total - 3.551).abs() < 1e-9, "{total}");

        let zero = RewardConfig { weights: TERMS.iter().map(|t| (String::from(*t), 0.0)).collect(), ..cfg };
        assert_eq!(total_reward(&nail, &zero, &th, Task::DriveNail).unwrap(), 0.0);
        assert!("juggle".parse::<Task>().is_err());
    }

    #[test]
    fn lowest_point_examples() {
        // An L-shaped tool resting on a table at height 0.7.
        let pts = PointSet::from_coords(&[[0.0, 0.0, 0.0], [0.2, 0.0, 0.0], [0.0, 0.0, 0.1], [0.05, 0.03, 0.02]]).unwrap();
        let rest = Pose::from_translation(Vector3::new(0.0, 0.0, 0.7));
        assert_relative_eq!(lowest_point_height(&pts, &rest, 0.7), 0.0, epsilon = 1e-15);
        let lifted = Pose::from_translation(Vector3::new(0.0, 0.0, 0.8));
        assert_relative_eq!(lowest_point_height(&pts, &lifted, 0.7), 0.1, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let pose = Pose::new(Vector3::new(0.1, 0.2, 0.9), UnitQuaternion::from_scaled_axis(axis * 2.0));
            // Rotation matrix applied by hand, then a linear scan for the minimum.
            let r = pose.orientation().to_rotation_matrix();
            let mut brute = f64::INFINITY;
            for p in &pts {
                let z = r[(2, 0)] * p.x + r[(2, 1)] * p.y + r[(2, 2)] * p.z + 0.9;
                if z < brute {
                    brute = z;
                }
            }
            assert_relative_eq!(lowest_point_height(&pts, &pose, 0.7), brute - 0.7, epsilon = 1e-12);
        }
    }

    #[test]
    fn invalid_inputs() {
        let th = SuccessThresholds::default();
        let bad_eps = RewardConfig { epsilon: 0.0, ..RewardConfig::default() };
        assert!(total_reward(&state(0.0, 0.0), &bad_eps, &th, Task::PlaceMug).is_err());
        let mut s = state(0.0, 0.0);
        s.keypoint_distance_sum = -1.0;
        assert!(total_reward(&s, &RewardConfig::default(), &th, Task::PlaceMug).is_err());
        let mut cfg = RewardConfig::default();
        cfg.weights.insert(String::from("r_bonus"), 1.0);
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn terms_bounded_and_monotone(a in 0.0f64..10.0, b in 0.0f64..10.0, d in 0.0f64..2.0, theta in 0.0f64..3.14) {
            let cfg = RewardConfig::default();
            let th = SuccessThresholds::default();
            let mut s = state(d, theta);
            s.hammer_nail_distance = a;
            s.keypoint_distance_sum = a;
            s.lift_shortfall = a;
            let mut t = s.clone();
            t.hammer_nail_distance = b;
            t.keypoint_distance_sum = b;
            t.lift_shortfall = b;
            for f in [r_dist, r_kp, r_lift] {
                let (x, y) = (f(&s, &cfg), f(&t, &cfg));
                prop_assert!(x > 0.0 && x <= 1.0 / cfg.epsilon);
                if a < b { prop_assert!(x > y); }
            }
            let p = r_pose(&s, &cfg);
            prop_assert!(p > 0.0 && p <= 1.0);
            let succ = r_success(&s, &th);
            prop_assert!(succ == 0.0 || succ == 1.0);
        }

        #[test]
        fn total_is_linear_in_weights(w1 in proptest::collection::vec(-5.0f64..5.0, 6), w2 in proptest::collection::vec(-5.0f64..5.0, 6), d in 0.0f64..0.1, k in 0.0f64..1.0) {
            let th = SuccessThresholds::default();
            let mut s = state(d, 0.1);
            s.keypoint_distance_sum = k;
            s.hammer_nail_distance = k;
            s.nail_depth_delta = 0.3 * k;
            let with = |w: &[f64]| RewardConfig { weights: TERMS.iter().zip(w).map(|(t, v)| (String::from(*t), *v)).collect(), ..RewardConfig::default() };
            let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
            for task in Task::ALL {
                let lhs = total_reward(&s, &with(&sum), &th, task).unwrap();
                let rhs = total_reward(&s, &with(&w1), &th, task).unwrap() + total_reward(&s, &with(&w2), &th, task).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
            }
        }
    }
}
