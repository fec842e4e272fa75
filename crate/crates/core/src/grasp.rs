//! Moving a demonstrated grasp onto a new instance, plus the two baselines
//! it is compared against: transporting only the wrist, and keeping the
//! canonical grasp untouched.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};

use crate::cpd::DeformationField;
use crate::error::{invalid, Error, Result};
use crate::geometry::Pose;
use crate::hand::{forward_kinematics, pregrasp, retarget, HandConfiguration, HandModel, RetargetConfig};
use crate::keypoints::Keypoints;
use crate::synthetic::Family;

#[derive(Debug, Clone, PartialEq)]
pub struct GraspDemonstration {
    /// In the canonical object's frame.
    pub keypoints: Keypoints,
    pub wrist_pose: Pose,
    pub joint_angles: Vec<f64>,
    pub hand_model_id: String,
}

impl GraspDemonstration {
    pub fn configuration(&self) -> HandConfiguration {
        HandConfiguration { wrist_pose: self.wrist_pose, joint_angles: self.joint_angles.clone() }
    }

    /// Errors if the demonstration was not recorded with `model`.
    pub fn check_model(&self, model: &HandModel) -> Result<()> {
        if self.hand_model_id != model.id() {
            return Err(invalid(format!(
                "demonstration uses hand '{}' but model '{}' was given",
                self.hand_model_id,
                model.id()
            )));
        }
        if self.joint_angles.len() != model.actuated_count() {
            return Err(invalid(format!(
                "demonstration has {} joint angles, hand '{}' has {} actuated joints",
                self.joint_angles.len(),
                model.id(),
                model.actuated_count()
            )));
        }
        Ok(())
    }

    /// Demonstration whose keypoints are exactly the hand's keypoints at `config`.
    pub fn from_configuration(model: &HandModel, config: HandConfiguration) -> Result<Self> {
        let keypoints = forward_kinematics(model, &config)?;
        Ok(Self {
            keypoints,
            wrist_pose: config.wrist_pose,
            joint_angles: config.joint_angles,
            hand_model_id: String::from(model.id()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    FullTransfer,
    WristOnly,
    Canonical,
}

impl Provenance {
    pub fn name(&self) -> &'static str {
        match self {
            Provenance::FullTransfer => "full_transfer",
            Provenance::WristOnly => "wrist_only",
            Provenance::Canonical => "canonical",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Provenance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Provenance::FullTransfer, Provenance::WristOnly, Provenance::Canonical]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| invalid(format!("unknown provenance '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferredGrasp {
    /// In the observed object's frame.
    pub keypoints: Keypoints,
    pub provenance: Provenance,
}

/// Pushes every demonstrated keypoint through the deformation field.
pub fn transfer_keypoints(field: &DeformationField, demo: &GraspDemonstration) -> TransferredGrasp {
    let moved = demo.keypoints.points().iter().map(|p| field.apply_point(p)).collect();
    TransferredGrasp {
        keypoints: demo.keypoints.with_points(moved).expect("names are unchanged"),
        provenance: Provenance::FullTransfer,
    }
}

/// Displaces the wrist by the field at the wrist position; orientation and
/// joints stay as demonstrated.
pub fn ablation_wrist_only(
    field: &DeformationField,
    demo: &GraspDemonstration,
    model: &HandModel,
) -> Result<(TransferredGrasp, HandConfiguration)> {
    demo.check_model(model)?;
    let mut config = demo.configuration();
    let p = nalgebra::Point3::from(config.wrist_pose.position);
    config.wrist_pose.position += field.displacement(&p);
    let keypoints = restrict(&forward_kinematics(model, &config)?, &demo.keypoints)?;
    Ok((TransferredGrasp { keypoints, provenance: Provenance::WristOnly }, config))
}

/// The demonstration as recorded.
pub fn ablation_canonical(demo: &GraspDemonstration) -> (TransferredGrasp, HandConfiguration) {
    (TransferredGrasp { keypoints: demo.keypoints.clone(), provenance: Provenance::Canonical }, demo.configuration())
}

/// Mean Euclidean distance between same-named keypoints (meters).
pub fn task_space_distance(achieved: &Keypoints, target: &TransferredGrasp) -> Result<f64> {
    achieved.check_same_names(&target.keypoints)?;
    if achieved.is_empty() {
        return Err(invalid("no keypoints to compare"));
    }
    let total: f64 = target
        .keypoints
        .iter()
        .map(|(name, t)| (achieved.get(name).expect("names checked") - t).norm())
        .sum();
    Ok(total / achieved.len() as f64)
}

/// The subset of `all` named in `like`, in `like`'s order.
fn restrict(all: &Keypoints, like: &Keypoints) -> Result<Keypoints> {
    let pts = like
        .names()
        .iter()
        .map(|n| all.get(n).copied().ok_or_else(|| invalid(format!("hand has no keypoint '{n}'"))))
        .collect::<Result<Vec<_>>>()?;
    like.with_points(pts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOptions {
    pub retarget: RetargetConfig,
    pub pregrasp_offset: f64,
    pub pregrasp_interpolation: f64,
}

impl Default for TransferOptions {
    fn default() -> Self {
        Self {
            retarget: RetargetConfig::default(),
            pregrasp_offset: crate::hand::DEFAULT_PREGRASP_OFFSET,
            pregrasp_interpolation: crate::hand::DEFAULT_PREGRASP_INTERPOLATION,
        }
    }
}

/// Outcome of one transfer method on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspOutcome {
    /// The keypoints the method aims for: always the fully transferred ones.
    pub target: TransferredGrasp,
    pub provenance: Provenance,
    pub configuration: HandConfiguration,
    /// Hand keypoints at `configuration`, restricted to the demonstrated names.
    pub achieved: Keypoints,
    pub task_space_distance: f64,
    pub pregrasp: HandConfiguration,
    /// RMS keypoint residual of the retargeting (full transfer only).
    pub retarget_residual: Option<f64>,
}

/// Full transfer: transport the keypoints, then retarget the hand onto
/// them, starting from the pre-grasp of the wrist-only configuration.
pub fn transfer_grasp(
    field: &DeformationField,
    demo: &GraspDemonstration,
    model: &HandModel,
    opts: &TransferOptions,
) -> Result<GraspOutcome> {
    let target = transfer_keypoints(field, demo);
    let (_, wp) = ablation_wrist_only(field, demo, model)?;
    let init = pregrasp(model, &wp, opts.pregrasp_offset, opts.pregrasp_interpolation)?;
    let res = retarget(model, &target.keypoints, &init, &opts.retarget)?;
    outcome(model, target, Provenance::FullTransfer, res.configuration, opts, Some(res.final_residual))
}

/// Any of the three methods, scored against the fully transferred keypoints.
pub fn evaluate_method(
    field: &DeformationField,
    demo: &GraspDemonstration,
    model: &HandModel,
    method: Provenance,
    opts: &TransferOptions,
) -> Result<GraspOutcome> {
    match method {
        Provenance::FullTransfer => transfer_grasp(field, demo, model, opts),
        Provenance::WristOnly => {
            let (_, config) = ablation_wrist_only(field, demo, model)?;
            outcome(model, transfer_keypoints(field, demo), method, config, opts, None)
        }
        Provenance::Canonical => {
            demo.check_model(model)?;
            let (_, config) = ablation_canonical(demo);
            outcome(model, transfer_keypoints(field, demo), method, config, opts, None)
        }
    }
}

fn outcome(
    model: &HandModel,
    target: TransferredGrasp,
    provenance: Provenance,
    configuration: HandConfiguration,
    opts: &TransferOptions,
    retarget_residual: Option<f64>,
) -> Result<GraspOutcome> {
    let achieved = restrict(&forward_kinematics(model, &configuration)?, &target.keypoints)?;
    let task_space_distance = task_space_distance(&achieved, &target)?;
    let pregrasp = pregrasp(model, &configuration, opts.pregrasp_offset, opts.pregrasp_interpolation)?;
    Ok(GraspOutcome { target, provenance, configuration, achieved, task_space_distance, pregrasp, retarget_residual })
}

/// A wrapping grasp on the canonical member of `family` with the
/// five-finger hand. Keypoints are the hand's own keypoints, so the
/// demonstration is exactly attainable on the canonical object.
pub fn synthetic_demonstration(family: Family) -> GraspDemonstration {
    let model = HandModel::anthropomorphic();
    // Palm faces +x, fingers run along +y and curl around -z.
    let wrap = UnitQuaternion::from_basis_unchecked(&[Vector3::x(), -Vector3::z(), Vector3::y()]);
    let (position, joints) = match family {
        Family::EllipsoidMugs => (Vector3::new(-0.055, -0.125, 0.0), [0.6, 0.5, 1.1, 1.1, 1.1]),
        Family::StretchedHammers => (Vector3::new(-0.03, -0.125, 0.27), [0.6, 0.7, 1.3, 1.3, 1.3]),
        Family::ScaledDrillBlanks => (Vector3::new(-0.065, -0.125, -0.07), [0.6, 0.7, 1.3, 1.3, 1.3]),
    };
    let config = HandConfiguration { wrist_pose: Pose::new(position, wrap), joint_angles: joints.to_vec() };
    GraspDemonstration::from_configuration(&model, config).expect("fixture configuration is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest};
    use crate::cpd::{register_nonrigid, CpdConfig};
    use crate::geometry::{NormalizationParams, Point3, PointSet};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere(n: usize, seed: u64) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                let z: f64 = rng.random_range(-1.0..1.0);
                let a: f64 = rng.random_range(0.0..core::f64::consts::TAU);
                let r = (1.0 - z * z).sqrt();
                Point3::new(r * a.cos(), r * a.sin(), z)
            })
            .collect();
        PointSet::new(pts).unwrap()
    }

    fn demo() -> GraspDemonstration {
        synthetic_demonstration(Family::EllipsoidMugs)
    }

    #[test]
    fn zero_field_is_identity() {
        let d = demo();
        let field = DeformationField::zero(PointSet::new(d.keypoints.points().to_vec()).unwrap(), 1.0, NormalizationParams::identity()).unwrap();
        let t = transfer_keypoints(&field, &d);
        assert_eq!(t.keypoints, d.keypoints);
        assert_eq!(t.provenance, Provenance::FullTransfer);
        let model = HandModel::anthropomorphic();
        let (wp, cfg) = ablation_wrist_only(&field, &d, &model).unwrap();
        assert_eq!(cfg, d.configuration());
        for (a, b) in wp.keypoints.points().iter().zip(d.keypoints.points()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
        let (cg, _) = ablation_canonical(&d);
        assert_eq!(cg.keypoints, t.keypoints);
    }

    #[test]
    fn single_anchor_moves_by_weight_row() {
        let anchor = Point3::new(0.1, 0.2, 0.3);
        let w = DMatrix::from_row_slice(1, 3, &[0.01, -0.02, 0.005]);
        let field = DeformationField::new(PointSet::new(alloc::vec![anchor]).unwrap(), w, 1.0, NormalizationParams::identity()).unwrap();
        let d = GraspDemonstration {
            keypoints: Keypoints::from_pairs([("a", anchor)]).unwrap(),
            ..demo()
        };
        let t = transfer_keypoints(&field, &d);
        assert_relative_eq!(t.keypoints.points()[0], anchor + Vector3::new(0.01, -0.02, 0.005), epsilon = 1e-15);
    }

    #[test]
    fn scaled_sphere_keypoint_stays_on_surface() {
        let c = sphere(300, 1);
        let s = 1.15;
        let target = c.map(|p| Point3::from(p.coords * s)).unwrap();
        let reg = register_nonrigid(&c, &target, &CpdConfig::default()).unwrap();
        let on_surface = Point3::new(0.6, 0.0, 0.8);
        let d = GraspDemonstration { keypoints: Keypoints::from_pairs([("k", on_surface)]).unwrap(), ..demo() };
        let moved = transfer_keypoints(&reg.field, &d).keypoints.points()[0];
        assert!((moved.coords.norm() - s).abs() < 1e-2, "radius {}", moved.coords.norm());
    }

    #[test]
    fn transfer_commutes_with_permutation() {
        let c = sphere(200, 3);
        let target = c.map(|p| Point3::new(p.x * 1.1, p.y, p.z * 0.9)).unwrap();
        let reg = register_nonrigid(&c, &target, &CpdConfig::default()).unwrap();
        let d = demo();
        let base = transfer_keypoints(&reg.field, &d);
        let mut order: Vec<usize> = (0..d.keypoints.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
        let shuffled = Keypoints::new(
            order.iter().map(|&i| d.keypoints.names()[i].clone()).collect(),
            order.iter().map(|&i| d.keypoints.points()[i]).collect(),
        )
        .unwrap();
        let t = transfer_keypoints(&reg.field, &GraspDemonstration { keypoints: shuffled, ..d });
        for (name, p) in t.keypoints.iter() {
            assert_eq!(p, base.keypoints.get(name).unwrap());
        }
    }

    #[test]
    fn task_space_distance_arithmetic() {
        let names: Vec<String> = (0..10).map(|i| format!("k{i}")).collect();
        let pts: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let a = Keypoints::new(names.clone(), pts.clone()).unwrap();
        let t = TransferredGrasp { keypoints: a.clone(), provenance: Provenance::FullTransfer };
        assert_eq!(task_space_distance(&a, &t).unwrap(), 0.0);
        let mut moved = pts;
        moved[3].y += 0.01;
        let b = Keypoints::new(names, moved).unwrap();
        assert_relative_eq!(task_space_distance(&b, &t).unwrap(), 0.001, epsilon = 1e-15);
        let c = Keypoints::from_pairs([("k0", Point3::origin()), ("other", Point3::origin())]).unwrap();
        let err = task_space_distance(&c, &t).unwrap_err();
        assert!(format!("{err}").contains("other"));
    }

    #[test]
    fn canonical_distance_linear_in_scale() {
        // Under a uniform scale s about the origin, CG misses each keypoint by |1 - s| |k|.
        let d = demo();
        let mean_norm: f64 = d.keypoints.points().iter().map(|p| p.coords.norm()).sum::<f64>() / d.keypoints.len() as f64;
        for s in [0.8, 0.9, 1.1, 1.25] {
            let scaled = d.keypoints.with_points(d.keypoints.points().iter().map(|p| Point3::from(p.coords * s)).collect()).unwrap();
            let target = TransferredGrasp { keypoints: scaled, provenance: Provenance::FullTransfer };
            let (cg, _) = ablation_canonical(&d);
            let dist = task_space_distance(&cg.keypoints, &target).unwrap();
            assert_relative_eq!(dist, (1.0f64 - s).abs() * mean_norm, epsilon = 1e-12);
        }
    }

    #[test]
    fn provenance_names_round_trip() {
        for p in [Provenance::FullTransfer, Provenance::WristOnly, Provenance::Canonical] {
            assert_eq!(p.name().parse::<Provenance>().unwrap(), p);
        }
        assert!("ours".parse::<Provenance>().is_err());
    }

    #[test]
    fn demonstrations_match_hand() {
        let model = HandModel::anthropomorphic();
        for family in Family::ALL {
            let d = synthetic_demonstration(family);
            d.check_model(&model).unwrap();
            assert_eq!(d.keypoints.len(), 16);
        }
        let toy = HandModel::two_finger_toy();
        assert!(demo().check_model(&toy).is_err());
    }

    proptest! {
        #[test]
        fn transfer_ignores_keypoint_order(seed in any::<u64>()) {
            let d = demo();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let anchors = PointSet::new(d.keypoints.points().to_vec()).unwrap();
            let w = DMatrix::from_fn(anchors.len(), 3, |_, _| rng.random_range(-0.01..0.01));
            let field = DeformationField::new(anchors, w, 0.1, NormalizationParams::identity()).unwrap();
            let base = transfer_keypoints(&field, &d);
            let mut order: Vec<usize> = (0..d.keypoints.len()).collect();
            order.shuffle(&mut rng);
            let shuffled = Keypoints::new(
                order.iter().map(|&i| d.keypoints.names()[i].clone()).collect(),
                order.iter().map(|&i| d.keypoints.points()[i]).collect(),
            )
            .unwrap();
            let t = transfer_keypoints(&field, &GraspDemonstration { keypoints: shuffled, ..d });
            for (name, p) in t.keypoints.iter() {
                prop_assert_eq!(p, base.keypoints.get(name).unwrap());
            }
        }
    }
}
