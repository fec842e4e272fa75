//! Kinematic hand models, keypoint forward kinematics, retargeting and
//! pre-grasp generation.
//!
//! A hand is a tree of revolute joints hanging off the wrist frame. Joints
//! may mimic an actuated joint with a fixed ratio, so a configuration only
//! carries the actuated angles.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Unit, UnitQuaternion, Vector3};
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point3, Pose};
use crate::keypoints::Keypoints;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mimic {
    /// Index of the actuated joint being followed.
    pub joint: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// `None` hangs the joint off the wrist frame.
    pub parent: Option<usize>,
    /// Fixed transform from the parent frame to this joint at zero angle.
    pub origin: Pose,
    pub axis: Vector3<f64>,
    pub limits: (f64, f64),
    pub mimic: Option<Mimic>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Point3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    id: String,
    joints: Vec<Joint>,
    keypoints: Vec<KeypointFrame>,
    palm_normal: Vector3<f64>,
    open_configuration: Vec<f64>,
    actuated: Vec<usize>,
    order: Vec<usize>,
}

impl HandModel {
    pub fn new(
        id: impl Into<String>,
        mut joints: Vec<Joint>,
        keypoints: Vec<KeypointFrame>,
        palm_normal: Vector3<f64>,
        open_configuration: Vec<f64>,
    ) -> Result<Self> {
        let n = joints.len();
        for (i, j) in joints.iter_mut().enumerate() {
            if let Some(p) = j.parent {
                if p >= n || p == i {
                    return Err(invalid(format!("joint '{}' has invalid parent {p}", j.name)));
                }
            }
            let norm = j.axis.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
                return Err(invalid(format!("joint '{}' axis is not unit length (norm {norm})", j.name)));
            }
            j.axis /= norm;
            let (lo, hi) = j.limits;
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(invalid(format!("joint '{}' limits [{lo}, {hi}] are invalid", j.name)));
            }
        }
        for j in &joints {
            if let Some(m) = j.mimic {
                if m.joint >= n || joints[m.joint].mimic.is_some() {
                    return Err(invalid(format!("joint '{}' must mimic an existing actuated joint", j.name)));
                }
                if !m.ratio.is_finite() {
                    return Err(invalid(format!("joint '{}' has a non-finite mimic ratio", j.name)));
                }
            }
        }
        let mut names: Vec<&str> = joints.iter().map(|j| j.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("joint names must be unique"));
        }
        let order = topological_order(&joints)?;
        for k in &keypoints {
            if k.parent.is_some_and(|p| p >= n) {
                return Err(invalid(format!("keypoint '{}' references a missing joint", k.name)));
            }
        }
        Keypoints::new(keypoints.iter().map(|k| k.name.clone()).collect(), keypoints.iter().map(|k| k.offset).collect())?;
        let pn = palm_normal.norm();
        if !pn.is_finite() || (pn - 1.0).abs() > 1e-6 {
            return Err(invalid("palm normal must be a unit vector"));
        }
        let actuated: Vec<usize> = (0..n).filter(|&i| joints[i].mimic.is_none()).collect();
        let model = Self {
            id: id.into(),
            joints,
            keypoints,
            palm_normal: palm_normal / pn,
            open_configuration,
            actuated,
            order,
        };
        model.check_angles(&model.open_configuration, "open configuration")?;
        Ok(model)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn keypoint_frames(&self) -> &[KeypointFrame] {
        &self.keypoints
    }

    pub fn keypoint_names(&self) -> Vec<String> {
        self.keypoints.iter().map(|k| k.name.clone()).collect()
    }

    pub fn palm_normal(&self) -> &Vector3<f64> {
        &self.palm_normal
    }

    pub fn open_configuration(&self) -> &[f64] {
        &self.open_configuration
    }

    /// Joint indices driven directly by a configuration, in configuration order.
    pub fn actuated_joints(&self) -> &[usize] {
        &self.actuated
    }

    pub fn actuated_count(&self) -> usize {
        self.actuated.len()
    }

    pub fn actuated_limits(&self) -> Vec<(f64, f64)> {
        self.actuated.iter().map(|&i| self.joints[i].limits).collect()
    }

    pub fn clamp(&self, angles: &mut [f64]) {
        for (a, &j) in angles.iter_mut().zip(&self.actuated) {
            let (lo, hi) = self.joints[j].limits;
            *a = a.clamp(lo, hi);
        }
    }

    fn check_angles(&self, angles: &[f64], what: &str) -> Result<()> {
        if angles.len() != self.actuated.len() {
            return Err(invalid(format!(
                "{what} has {} joint angles but hand '{}' has {} actuated joints",
                angles.len(),
                self.id,
                self.actuated.len()
            )));
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(invalid(format!("{what} has non-finite joint angles")));
        }
        Ok(())
    }

    /// Angle of every joint, mimics expanded.
    pub fn expand(&self, actuated: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.joints.len()];
        for (a, &j) in actuated.iter().zip(&self.actuated) {
            full[j] = *a;
        }
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(m) = j.mimic {
                full[i] = m.ratio * full[m.joint];
            }
        }
        full
    }

    fn joint_frames(&self, wrist: &Pose, actuated: &[f64]) -> Vec<Pose> {
        let angles = self.expand(actuated);
        let mut frames = vec![Pose::identity(); self.joints.len()];
        for &i in &self.order {
            let j = &self.joints[i];
            let parent = j.parent.map_or(wrist, |p| &frames[p]);
            let rot = Pose::new(Vector3::zeros(), UnitQuaternion::from_axis_angle(&Unit::new_unchecked(j.axis), angles[i]));
            frames[i] = parent.compose(&j.origin).compose(&rot);
        }
        frames
    }

    fn keypoint_positions(&self, wrist: &Pose, actuated: &[f64]) -> Vec<Point3> {
        let frames = self.joint_frames(wrist, actuated);
        self.keypoints
            .iter()
            .map(|k| k.parent.map_or(wrist, |p| &frames[p]).transform_point(&k.offset))
            .collect()
    }

    /// Keypoints at the identity wrist and the open configuration.
    pub fn rest_keypoints(&self) -> Keypoints {
        let pts = self.keypoint_positions(&Pose::identity(), &self.open_configuration);
        Keypoints::new(self.keypoint_names(), pts).expect("model keypoint names are unique")
    }

    pub fn open_hand(&self, wrist_pose: Pose) -> HandConfiguration {
        HandConfiguration { wrist_pose, joint_angles: self.open_configuration.clone() }
    }
}

fn topological_order(joints: &[Joint]) -> Result<Vec<usize>> {
    let n = joints.len();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let before = order.len();
        for (i, j) in joints.iter().enumerate() {
            if !placed[i] && j.parent.is_none_or(|p| placed[p]) {
                placed[i] = true;
                order.push(i);
            }
        }
        if order.len() == before {
            return Err(invalid("joint tree contains a cycle"));
        }
    }
    Ok(order)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandConfiguration {
    pub wrist_pose: Pose,
    /// Actuated joints only, in the model's actuated order.
    pub joint_angles: Vec<f64>,
}

/// World positions of every keypoint frame.
pub fn forward_kinematics(model: &HandModel, config: &HandConfiguration) -> Result<Keypoints> {
    model.check_angles(&config.joint_angles, "configuration")?;
    Keypoints::new(model.keypoint_names(), model.keypoint_positions(&config.wrist_pose, &config.joint_angles))
}

/// Orientation updates are always local axis-angle increments composed onto
/// the current wrist quaternion.
#[derive(Debug, Clone, PartialEq)]
pub struct RetargetConfig {
    pub max_iterations: usize,
    pub damping: f64,
    /// Stop once the RMS keypoint distance falls below this (meters).
    pub residual_tolerance: f64,
    /// Stop once an accepted step is shorter than this.
    pub step_tolerance: f64,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        Self { max_iterations: 200, damping: 1e-3, residual_tolerance: 1e-7, step_tolerance: 1e-12 }
    }
}

impl RetargetConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.max_iterations == 0 || !positive(self.damping) || !positive(self.residual_tolerance) || !positive(self.step_tolerance) {
            return Err(invalid("retarget parameters must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetargetResult {
    pub configuration: HandConfiguration,
    /// RMS distance between achieved and target keypoints (meters).
    pub final_residual: f64,
    pub iterations: usize,
    /// Objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
}

/// Central-difference step of the retarget Jacobian.
pub const JACOBIAN_STEP: f64 = 1e-6;

/// Least-squares keypoint matching against a fixed set of targets.
///
/// Variables are ordered as wrist position (3), local wrist rotation
/// increment (3), then actuated joint angles.
#[derive(Debug, Clone)]
pub struct RetargetProblem<'a> {
    model: &'a HandModel,
    frames: Vec<usize>,
    targets: Vec<Point3>,
}

impl<'a> RetargetProblem<'a> {
    pub fn new(model: &'a HandModel, targets: &Keypoints) -> Result<Self> {
        let mut frames = Vec::with_capacity(targets.len());
        for name in targets.names() {
            let i = model
                .keypoints
                .iter()
                .position(|k| &k.name == name)
                .ok_or_else(|| invalid(format!("target keypoint '{name}' is not on hand '{}'", model.id)))?;
            frames.push(i);
        }
        if frames.is_empty() {
            return Err(invalid("retargeting needs at least one target keypoint"));
        }
        Ok(Self { model, frames, targets: targets.points().to_vec() })
    }

    pub fn variable_count(&self) -> usize {
        6 + self.model.actuated_count()
    }

    pub fn residuals(&self, config: &HandConfiguration) -> DVector<f64> {
        let pts = self.model.keypoint_positions(&config.wrist_pose, &config.joint_angles);
        let mut r = DVector::zeros(3 * self.frames.len());
        for (i, (&f, t)) in self.frames.iter().zip(&self.targets).enumerate() {
            let d = pts[f] - t;
            r.fixed_rows_mut::<3>(3 * i).copy_from(&d);
        }
        r
    }

    /// Sum of squared keypoint distances.
    pub fn objective(&self, config: &HandConfiguration) -> f64 {
        self.residuals(config).norm_squared()
    }

    pub fn rms(&self, objective: f64) -> f64 {
        (objective / self.frames.len() as f64).sqrt()
    }

    /// Configuration displaced by `delta`, joints left unclamped.
    pub fn displaced(&self, config: &HandConfiguration, delta: &[f64]) -> HandConfiguration {
        let mut out = config.clone();
        out.wrist_pose.position += Vector3::new(delta[0], delta[1], delta[2]);
        let inc = UnitQuaternion::from_scaled_axis(Vector3::new(delta[3], delta[4], delta[5]));
        let mut q = *config.wrist_pose.orientation() * inc;
        q.renormalize();
        out.wrist_pose.set_orientation(q);
        for (a, d) in out.joint_angles.iter_mut().zip(&delta[6..]) {
            *a += d;
        }
        out
    }

    /// Residual Jacobian by central differences.
    pub fn jacobian(&self, config: &HandConfiguration) -> DMatrix<f64> {
        let n = self.variable_count();
        let mut jac = DMatrix::zeros(3 * self.frames.len(), n);
        let mut delta = vec![0.0; n];
        for c in 0..n {
            delta[c] = JACOBIAN_STEP;
            let plus = self.residuals(&self.displaced(config, &delta));
            delta[c] = -JACOBIAN_STEP;
            let minus = self.residuals(&self.displaced(config, &delta));
            delta[c] = 0.0;
            jac.set_column(c, &((plus - minus) / (2.0 * JACOBIAN_STEP)));
        }
        jac
    }

    /// Damped Gauss-Newton step `-(J^T J + damping I)^-1 J^T r`.
    pub fn step(&self, config: &HandConfiguration, damping: f64) -> Result<DVector<f64>> {
        let r = self.residuals(config);
        let jac = self.jacobian(config);
        solve_damped(&jac, &r, damping)
    }
}

fn solve_damped(jac: &DMatrix<f64>, r: &DVector<f64>, damping: f64) -> Result<DVector<f64>> {
    let mut h = jac.transpose() * jac;
    for i in 0..h.nrows() {
        h[(i, i)] += damping;
    }
    let g = jac.transpose() * r;
    let chol = h
        .cholesky()
        .ok_or(Error::NumericFailure { iteration: 0, reason: "damped normal matrix is not positive definite".to_string() })?;
    Ok(-chol.solve(&g))
}

/// Levenberg-Marquardt fit of wrist pose and actuated joints so the hand's
/// keypoints match `targets`. Unreachable targets are not an error; the best
/// configuration found is returned.
pub fn retarget(model: &HandModel, targets: &Keypoints, init: &HandConfiguration, cfg: &RetargetConfig) -> Result<RetargetResult> {
    cfg.validate()?;
    model.check_angles(&init.joint_angles, "initial configuration")?;
    let problem = RetargetProblem::new(model, targets)?;
    let mut x = init.clone();
    model.clamp(&mut x.joint_angles);
    let mut f = problem.objective(&x);
    if !f.is_finite() {
        return Err(Error::NumericFailure { iteration: 0, reason: "objective is not finite at the initial configuration".to_string() });
    }
    let mut trace = vec![f];
    let mut damping = cfg.damping;
    let mut iterations = 0;
    let mut jac_cache: Option<(DMatrix<f64>, DVector<f64>)> = None;
    while iterations < cfg.max_iterations && problem.rms(f) > cfg.residual_tolerance {
        iterations += 1;
        let (jac, r) = jac_cache.get_or_insert_with(|| (problem.jacobian(&x), problem.residuals(&x)));
        let delta = solve_damped(jac, r, damping).map_err(|_| Error::NumericFailure {
            iteration: iterations,
            reason: "damped normal matrix is not positive definite".to_string(),
        })?;
        let mut cand = problem.displaced(&x, delta.as_slice());
        model.clamp(&mut cand.joint_angles);
        let fc = problem.objective(&cand);
        if !fc.is_finite() {
            return Err(Error::NumericFailure { iteration: iterations, reason: "objective became non-finite".to_string() });
        }
        if fc < f {
            x = cand;
            f = fc;
            trace.push(f);
            damping = (damping * 0.5).max(1e-15);
            jac_cache = None;
            if delta.norm() < cfg.step_tolerance {
                break;
            }
        } else {
            damping *= 2.0;
            if damping > 1e12 {
                break;
            }
        }
    }
    Ok(RetargetResult { configuration: x, final_residual: problem.rms(f), iterations, objective_trace: trace })
}

pub const DEFAULT_PREGRASP_OFFSET: f64 = 0.10;
pub const DEFAULT_PREGRASP_INTERPOLATION: f64 = 0.5;

/// Backs the wrist off along the palm normal and blends the joints toward
/// the open hand.
pub fn pregrasp(model: &HandModel, target: &HandConfiguration, offset_distance: f64, interpolation: f64) -> Result<HandConfiguration> {
    model.check_angles(&target.joint_angles, "target configuration")?;
    if !offset_distance.is_finite() || offset_distance < 0.0 {
        return Err(invalid(format!("pre-grasp offset must be nonnegative, got {offset_distance}")));
    }
    if !(0.0..=1.0).contains(&interpolation) {
        return Err(invalid(format!("pre-grasp interpolation must lie in [0, 1], got {interpolation}")));
    }
    let normal = target.wrist_pose.transform_vector(&model.palm_normal);
    let mut wrist_pose = target.wrist_pose.clone();
    wrist_pose.position -= normal * offset_distance;
    let joint_angles = model
        .open_configuration
        .iter()
        .zip(&target.joint_angles)
        .map(|(o, t)| if interpolation == 1.0 { *t } else { (1.0 - interpolation) * o + interpolation * t })
        .collect();
    Ok(HandConfiguration { wrist_pose, joint_angles })
}

fn joint(name: &str, parent: Option<usize>, origin: [f64; 3], axis: [f64; 3], limits: (f64, f64), mimic: Option<(usize, f64)>) -> Joint {
    Joint {
        name: name.to_string(),
        parent,
        origin: Pose::from_translation(Vector3::from(origin)),
        axis: Vector3::from(axis),
        limits,
        mimic: mimic.map(|(joint, ratio)| Mimic { joint, ratio }),
    }
}

fn frame(name: &str, parent: Option<usize>, offset: [f64; 3]) -> KeypointFrame {
    KeypointFrame { name: name.to_string(), parent, offset: Point3::from(offset) }
}

impl HandModel {
    /// Two opposed fingers of two joints each; the distal joints mimic the
    /// proximal ones. Fingers extend along +z, palm normal is +z.
    pub fn two_finger_toy() -> Self {
        let joints = vec![
            joint("a_proximal", None, [0.03, 0.0, 0.0], [0.0, -1.0, 0.0], (0.0, 1.5), None),
            joint("a_distal", Some(0), [0.0, 0.0, 0.04], [0.0, -1.0, 0.0], (0.0, 1.5), Some((0, 1.0))),
            joint("b_proximal", None, [-0.03, 0.0, 0.0], [0.0, 1.0, 0.0], (0.0, 1.5), None),
            joint("b_distal", Some(2), [0.0, 0.0, 0.04], [0.0, 1.0, 0.0], (0.0, 1.5), Some((2, 1.0))),
        ];
        let keypoints = vec![
            frame("palm", None, [0.0, 0.0, 0.02]),
            frame("a_middle", Some(1), [0.0, 0.0, 0.0]),
            frame("a_distal", Some(1), [0.0, 0.0, 0.03]),
            frame("b_middle", Some(3), [0.0, 0.0, 0.0]),
            frame("b_distal", Some(3), [0.0, 0.0, 0.03]),
        ];
        Self::new("two_finger_toy", joints, keypoints, Vector3::z(), vec![0.0, 0.0]).expect("valid fixture")
    }

    /// Five fingers, 16 keypoints, 11 joints of which 5 are actuated: thumb
    /// opposition, thumb flexion, index, middle and ring. The little finger
    /// follows the ring finger. Fingers extend along +z, the palm faces +x.
    pub fn anthropomorphic() -> Self {
        let y = [0.0, 1.0, 0.0];
        let joints = vec![
            joint("thumb_opposition", None, [0.02, -0.035, 0.02], [1.0, 0.0, 0.0], (0.0, 1.2), None),
            joint("thumb_flexion", Some(0), [0.0, -0.02, 0.0], [0.0, 0.0, 1.0], (0.0, 1.3), None),
            joint("thumb_distal", Some(1), [0.0, -0.035, 0.0], [0.0, 0.0, 1.0], (0.0, 1.3), Some((1, 0.8))),
            joint("index_proximal", None, [0.0, -0.025, 0.09], y, (0.0, 1.6), None),
            joint("index_distal", Some(3), [0.0, 0.0, 0.045], y, (0.0, 1.6), Some((3, 0.9))),
            joint("middle_proximal", None, [0.0, 0.0, 0.095], y, (0.0, 1.6), None),
            joint("middle_distal", Some(5), [0.0, 0.0, 0.045], y, (0.0, 1.6), Some((5, 0.9))),
            joint("ring_proximal", None, [0.0, 0.025, 0.09], y, (0.0, 1.6), None),
            joint("ring_distal", Some(7), [0.0, 0.0, 0.045], y, (0.0, 1.6), Some((7, 0.9))),
            joint("little_proximal", None, [0.0, 0.045, 0.085], y, (0.0, 1.6), Some((7, 1.0))),
            joint("little_distal", Some(9), [0.0, 0.0, 0.035], y, (0.0, 1.6), Some((7, 0.9))),
        ];
        let mut keypoints = vec![
            frame("palm", None, [0.01, 0.0, 0.05]),
            frame("thumb_proximal", Some(1), [0.0, -0.015, 0.0]),
            frame("thumb_middle", Some(2), [0.0, -0.008, 0.0]),
            frame("thumb_distal", Some(2), [0.0, -0.028, 0.0]),
        ];
        for (finger, prox, tip) in [("index", 3, 0.035), ("middle", 5, 0.035), ("ring", 7, 0.035), ("little", 9, 0.028)] {
            keypoints.push(frame(&format!("{finger}_proximal"), Some(prox), [0.0, 0.0, 0.02]));
            keypoints.push(frame(&format!("{finger}_middle"), Some(prox + 1), [0.0, 0.0, 0.01]));
            keypoints.push(frame(&format!("{finger}_distal"), Some(prox + 1), [0.0, 0.0, tip]));
        }
        Self::new("anthropomorphic_16", joints, keypoints, Vector3::x(), vec![0.0; 5]).expect("valid fixture")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert, proptest, ProptestConfig};
    use approx::assert_relative_eq;
    use core::f64::consts::FRAC_PI_2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_config(model: &HandModel, rng: &mut ChaCha8Rng) -> HandConfiguration {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let wrist = Pose::new(
            Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
            UnitQuaternion::from_scaled_axis(axis),
        );
        let joint_angles = model.actuated_limits().iter().map(|(lo, hi)| rng.random_range(*lo..*hi)).collect();
        HandConfiguration { wrist_pose: wrist, joint_angles }
    }

    fn perturbed(model: &HandModel, c: &HandConfiguration, rng: &mut ChaCha8Rng) -> HandConfiguration {
        let mut delta = vec![0.0; 6 + model.actuated_count()];
        for (i, d) in delta.iter_mut().enumerate() {
            let bound = if i < 3 { 0.05 / 3f64.sqrt() } else { 0.2 / 3f64.sqrt() };
            *d = rng.random_range(-bound..bound);
        }
        let problem = RetargetProblem::new(model, &model.rest_keypoints()).unwrap();
        let mut out = problem.displaced(c, &delta);
        model.clamp(&mut out.joint_angles);
        out
    }

    #[test]
    fn rest_pose_matches_hand_computed_positions() {
        let rest = HandModel::anthropomorphic().rest_keypoints();
        assert_eq!(rest.len(), 16);
        let expect = [
            ("palm", [0.01, 0.0, 0.05]),
            ("thumb_proximal", [0.02, -0.07, 0.02]),
            ("thumb_distal", [0.02, -0.118, 0.02]),
            ("index_distal", [0.0, -0.025, 0.17]),
            ("little_middle", [0.0, 0.045, 0.13]),
        ];
        for (name, p) in expect {
            assert_relative_eq!(*rest.get(name).unwrap(), Point3::from(p), epsilon = 1e-12);
        }
        let toy = HandModel::two_finger_toy().rest_keypoints();
        assert_relative_eq!(*toy.get("b_distal").unwrap(), Point3::new(-0.03, 0.0, 0.07), epsilon = 1e-12);
    }

    #[test]
    fn single_joint_quarter_turn() {
        let model = HandModel::new(
            "one",
            vec![joint("j", None, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0], (-3.0, 3.0), None)],
            vec![frame("tip", Some(0), [1.0, 0.0, 0.0])],
            Vector3::z(),
            vec![0.0],
        )
        .unwrap();
        let c = HandConfiguration { wrist_pose: Pose::identity(), joint_angles: vec![FRAC_PI_2] };
        let kp = forward_kinematics(&model, &c).unwrap();
        // R_z(pi/2) = [[0, -1, 0], [1, 0, 0], [0, 0, 1]] applied to (1, 0, 0).
        assert_relative_eq!(kp.points()[0], Point3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn mimic_joints_follow_ratio() {
        let toy = HandModel::two_finger_toy();
        assert_eq!(toy.actuated_count(), 2);
        let full = toy.expand(&[0.4, 0.7]);
        assert_eq!(full, vec![0.4, 0.4, 0.7, 0.7]);
        let hand = HandModel::anthropomorphic();
        assert_eq!(hand.joints().len(), 11);
        assert_eq!(hand.actuated_count(), 5);
        let full = hand.expand(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_relative_eq!(full[9], 0.5);
        assert_relative_eq!(full[10], 0.45);
    }

    #[test]
    fn translation_and_rigid_equivariance() {
        let model = HandModel::anthropomorphic();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let c = random_config(&model, &mut rng);
            let local = HandConfiguration { wrist_pose: Pose::identity(), joint_angles: c.joint_angles.clone() };
            let base = forward_kinematics(&model, &local).unwrap();
            let world = forward_kinematics(&model, &c).unwrap();
            for (a, b) in base.points().iter().zip(world.points()) {
                assert_relative_eq!(c.wrist_pose.transform_point(a), *b, epsilon = 1e-12);
            }
        }
        let t = Vector3::new(0.3, -0.2, 1.0);
        let rest = model.rest_keypoints();
        let moved = forward_kinematics(&model, &model.open_hand(Pose::from_translation(t))).unwrap();
        for (a, b) in rest.points().iter().zip(moved.points()) {
            assert_relative_eq!(a + t, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn invalid_models_rejected() {
        let j = |parent| joint("a", parent, [0.0; 3], [0.0, 0.0, 1.0], (0.0, 1.0), None);
        let kp = vec![frame("k", None, [0.0; 3])];
        let cyc = vec![j(Some(1)), Joint { name: "b".into(), ..j(Some(0)) }];
        assert!(HandModel::new("c", cyc, kp.clone(), Vector3::z(), vec![]).is_err());
        let bad_axis = vec![Joint { axis: Vector3::new(0.0, 0.0, 2.0), ..j(None) }];
        assert!(HandModel::new("c", bad_axis, kp.clone(), Vector3::z(), vec![0.0]).is_err());
        let bad_limits = vec![Joint { limits: (1.0, 0.0), ..j(None) }];
        assert!(HandModel::new("c", bad_limits, kp.clone(), Vector3::z(), vec![0.0]).is_err());
        let bad_mimic = vec![Joint { mimic: Some(Mimic { joint: 3, ratio: 1.0 }), ..j(None) }];
        assert!(HandModel::new("c", bad_mimic, kp.clone(), Vector3::z(), vec![]).is_err());
        let dup = vec![frame("k", None, [0.0; 3]), frame("k", None, [1.0; 3])];
        assert!(HandModel::new("c", vec![j(None)], dup, Vector3::z(), vec![0.0]).is_err());
        let c = HandConfiguration { wrist_pose: Pose::identity(), joint_angles: vec![0.0; 3] };
        assert!(forward_kinematics(&HandModel::anthropomorphic(), &c).is_err());
    }

    #[test]
    fn retarget_recovers_reachable_targets() {
        let model = HandModel::anthropomorphic();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let truth = random_config(&model, &mut rng);
            let targets = forward_kinematics(&model, &truth).unwrap();
            let init = perturbed(&model, &truth, &mut rng);
            let res = retarget(&model, &targets, &init, &RetargetConfig::default()).unwrap();
            assert!(res.final_residual < 1e-4, "trial {trial}: residual {}", res.final_residual);
            assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0]));
            let got = forward_kinematics(&model, &res.configuration).unwrap();
            for (a, b) in got.points().iter().zip(targets.points()) {
                assert!((a - b).norm() < 1e-3);
            }
            for (a, (lo, hi)) in res.configuration.joint_angles.iter().zip(model.actuated_limits()) {
                assert!(*a >= lo && *a <= hi);
            }
        }
    }

    #[test]
    fn retarget_at_optimum_returns_immediately() {
        let model = HandModel::anthropomorphic();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_config(&model, &mut rng);
        let targets = forward_kinematics(&model, &c).unwrap();
        let res = retarget(&model, &targets, &c, &RetargetConfig::default()).unwrap();
        assert!(res.final_residual < 1e-9);
        assert!(res.iterations <= 2);
    }

    #[test]
    fn unreachable_targets_improve_without_error() {
        let model = HandModel::anthropomorphic();
        let far = model.rest_keypoints();
        let shifted: Vec<Point3> = far.points().iter().map(|p| p + Vector3::new(10.0, 0.0, 0.0)).collect();
        // Spread the targets so no rigid motion reaches them.
        let spread: Vec<Point3> = shifted.iter().enumerate().map(|(i, p)| p + Vector3::new(0.0, 0.0, 0.05 * i as f64)).collect();
        let targets = far.with_points(spread).unwrap();
        let init = model.open_hand(Pose::identity());
        let problem = RetargetProblem::new(&model, &targets).unwrap();
        let res = retarget(&model, &targets, &init, &RetargetConfig::default()).unwrap();
        assert!(problem.objective(&res.configuration) < problem.objective(&init));
        assert!(res.final_residual > 1e-3);
        for (a, (lo, hi)) in res.configuration.joint_angles.iter().zip(model.actuated_limits()) {
            assert!(*a >= lo && *a <= hi);
        }
    }

    #[test]
    fn jacobian_predicts_objective_along_step() {
        let model = HandModel::anthropomorphic();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let truth = random_config(&model, &mut rng);
            let targets = forward_kinematics(&model, &truth).unwrap();
            let x = perturbed(&model, &truth, &mut rng);
            let problem = RetargetProblem::new(&model, &targets).unwrap();
            let step = problem.step(&x, 1e-3).unwrap();
            let dir = &step / step.norm();
            let eps = 1e-4;
            let fp = problem.objective(&problem.displaced(&x, (&dir * eps).as_slice()));
            let fm = problem.objective(&problem.displaced(&x, (&dir * -eps).as_slice()));
            let measured = (fp - fm) / (2.0 * eps);
            let predicted = 2.0 * (problem.jacobian(&x).transpose() * problem.residuals(&x)).dot(&dir);
            assert!(((measured - predicted) / predicted).abs() < 1e-2, "{measured} vs {predicted}");
            assert!(predicted < 0.0, "the damped step is a descent direction");
        }
    }

    #[test]
    fn pregrasp_definition() {
        let model = HandModel::anthropomorphic();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let target = random_config(&model, &mut rng);
        assert_eq!(pregrasp(&model, &target, 0.0, 1.0).unwrap(), target);
        assert_eq!(pregrasp(&model, &target, 0.05, 0.0).unwrap().joint_angles, model.open_configuration());
        assert!(pregrasp(&model, &target, -0.1, 0.5).is_err());
        assert!(pregrasp(&model, &target, 0.1, 1.5).is_err());

        let toy = HandModel::two_finger_toy();
        let t = HandConfiguration { wrist_pose: Pose::identity(), joint_angles: vec![1.0, 0.5] };
        let p = pregrasp(&toy, &t, 0.1, 0.5).unwrap();
        assert_relative_eq!(p.wrist_pose.position, Vector3::new(0.0, 0.0, -0.1), epsilon = 1e-15);
        assert_eq!(p.joint_angles, vec![0.5, 0.25]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fk_is_rigidly_equivariant(
            position in prop::array::uniform3(-1.0f64..1.0),
            axis in prop::array::uniform3(-2.0f64..2.0),
            fractions in prop::collection::vec(0.0f64..1.0, 5),
        ) {
            let model = HandModel::anthropomorphic();
            let joint_angles: Vec<f64> = model.actuated_limits().iter().zip(&fractions).map(|((lo, hi), f)| lo + f * (hi - lo)).collect();
            let wrist = Pose::new(Vector3::from(position), UnitQuaternion::from_scaled_axis(Vector3::from(axis)));
            let local = forward_kinematics(&model, &HandConfiguration { wrist_pose: Pose::identity(), joint_angles: joint_angles.clone() }).unwrap();
            let world = forward_kinematics(&model, &HandConfiguration { wrist_pose: wrist, joint_angles }).unwrap();
            for (a, b) in local.points().iter().zip(world.points()) {
                prop_assert!((wrist.transform_point(a) - b).norm() < 1e-12);
            }
        }

        #[test]
        fn retarget_never_worsens_and_respects_limits(seed in any::<u64>(), spread in 0.0f64..0.1) {
            let model = HandModel::anthropomorphic();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = random_config(&model, &mut rng);
            // Jittered targets are generally unreachable.
            let reached = forward_kinematics(&model, &truth).unwrap();
            let jittered: Vec<Point3> = reached
                .points()
                .iter()
                .map(|p| p + Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * spread)
                .collect();
            let targets = reached.with_points(jittered).unwrap();
            let init = random_config(&model, &mut rng);
            let problem = RetargetProblem::new(&model, &targets).unwrap();
            let res = retarget(&model, &targets, &init, &RetargetConfig::default()).unwrap();
            prop_assert!(problem.objective(&res.configuration) <= problem.objective(&init));
            prop_assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0]));
            for (a, (lo, hi)) in res.configuration.joint_angles.iter().zip(model.actuated_limits()) {
                prop_assert!(*a >= lo && *a <= hi);
            }
        }
    }
}
