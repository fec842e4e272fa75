//! JSON documents: grasp demonstrations, hand models, latent codes, task
//! states and command reports. Every document carries `schema_version` and
//! rejects unknown fields.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use grasptransfer_core::grasp::GraspOutcome;
use grasptransfer_core::hand::{Joint, KeypointFrame, Mimic};
use grasptransfer_core::reward::TaskState;
use grasptransfer_core::{GraspDemonstration, HandConfiguration, HandModel, Keypoints, Point3, PointSet, Pose};
use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub fn read_json<T: DeserializeOwned + Versioned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let doc: T = serde_json::from_str(&text).map_err(|e| CliError::schema(path, e))?;
    if doc.schema_version() != SCHEMA_VERSION {
        return Err(CliError::schema(
            path,
            format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", doc.schema_version()),
        ));
    }
    Ok(doc)
}

pub fn write_json<T: Serialize>(doc: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc).expect("documents serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub trait Versioned {
    fn schema_version(&self) -> u32;
}

macro_rules! versioned {
    ($($t:ty),*) => {$(
        impl Versioned for $t {
            fn schema_version(&self) -> u32 {
                self.schema_version
            }
        }
    )*};
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDoc {
    pub position: [f64; 3],
    /// Quaternion `[w, x, y, z]`.
    pub orientation: [f64; 4],
}

impl PoseDoc {
    pub fn from_pose(p: &Pose) -> Self {
        Self { position: p.position.into(), orientation: p.wxyz() }
    }

    pub fn to_pose(&self) -> grasptransfer_core::Result<Pose> {
        Pose::from_wxyz(self.position, self.orientation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedPoint {
    pub name: String,
    pub position: [f64; 3],
}

pub fn keypoints_doc(k: &Keypoints) -> Vec<NamedPoint> {
    k.iter().map(|(n, p)| NamedPoint { name: n.to_string(), position: p.coords.into() }).collect()
}

pub fn keypoints_from_doc(doc: &[NamedPoint]) -> grasptransfer_core::Result<Keypoints> {
    Keypoints::from_pairs(doc.iter().map(|p| (p.name.clone(), Point3::from(p.position))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigurationDoc {
    pub wrist_pose: PoseDoc,
    pub joint_angles: Vec<f64>,
}

impl ConfigurationDoc {
    pub fn from_config(c: &HandConfiguration) -> Self {
        Self { wrist_pose: PoseDoc::from_pose(&c.wrist_pose), joint_angles: c.joint_angles.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspFile {
    pub schema_version: u32,
    pub hand_model_id: String,
    pub wrist_pose: PoseDoc,
    pub joint_angles: Vec<f64>,
    pub keypoints: Vec<NamedPoint>,
}

impl GraspFile {
    pub fn from_demo(d: &GraspDemonstration) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            hand_model_id: d.hand_model_id.clone(),
            wrist_pose: PoseDoc::from_pose(&d.wrist_pose),
            joint_angles: d.joint_angles.clone(),
            keypoints: keypoints_doc(&d.keypoints),
        }
    }

    pub fn to_demo(&self) -> grasptransfer_core::Result<GraspDemonstration> {
        Ok(GraspDemonstration {
            keypoints: keypoints_from_doc(&self.keypoints)?,
            wrist_pose: self.wrist_pose.to_pose()?,
            joint_angles: self.joint_angles.clone(),
            hand_model_id: self.hand_model_id.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MimicDoc {
    pub joint: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDoc {
    pub name: String,
    /// Parent joint name; `null` attaches to the wrist.
    pub parent: Option<String>,
    pub origin: PoseDoc,
    pub axis: [f64; 3],
    pub limits: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mimic: Option<MimicDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointFrameDoc {
    pub name: String,
    pub parent: Option<String>,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandModelFile {
    pub schema_version: u32,
    pub id: String,
    pub palm_normal: [f64; 3],
    /// Actuated joints only, in joint order.
    pub open_configuration: Vec<f64>,
    pub joints: Vec<JointDoc>,
    pub keypoints: Vec<KeypointFrameDoc>,
    /// Keypoint positions at the identity wrist and open configuration.
    /// Checked against forward kinematics on load when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rest_keypoints: Option<Vec<NamedPoint>>,
}

impl HandModelFile {
    pub fn from_model(m: &HandModel) -> Self {
        let name = |i: Option<usize>| i.map(|i| m.joints()[i].name.clone());
        Self {
            schema_version: SCHEMA_VERSION,
            id: m.id().to_string(),
            palm_normal: (*m.palm_normal()).into(),
            open_configuration: m.open_configuration().to_vec(),
            joints: m
                .joints()
                .iter()
                .map(|j| JointDoc {
                    name: j.name.clone(),
                    parent: name(j.parent),
                    origin: PoseDoc::from_pose(&j.origin),
                    axis: j.axis.into(),
                    limits: [j.limits.0, j.limits.1],
                    mimic: j.mimic.map(|mm| MimicDoc { joint: m.joints()[mm.joint].name.clone(), ratio: mm.ratio }),
                })
                .collect(),
            keypoints: m
                .keypoint_frames()
                .iter()
                .map(|k| KeypointFrameDoc { name: k.name.clone(), parent: name(k.parent), offset: k.offset.coords.into() })
                .collect(),
            rest_keypoints: Some(keypoints_doc(&m.rest_keypoints())),
        }
    }

    pub fn to_model(&self) -> grasptransfer_core::Result<HandModel> {
        let invalid = |m: String| grasptransfer_core::Error::InvalidParameter(m);
        let index = |name: &Option<String>| -> grasptransfer_core::Result<Option<usize>> {
            match name {
                None => Ok(None),
                Some(n) => self
                    .joints
                    .iter()
                    .position(|j| &j.name == n)
                    .map(Some)
                    .ok_or_else(|| invalid(format!("unknown joint '{n}'"))),
            }
        };
        let joints = self
            .joints
            .iter()
            .map(|j| {
                Ok(Joint {
                    name: j.name.clone(),
                    parent: index(&j.parent)?,
                    origin: j.origin.to_pose()?,
                    axis: Vector3::from(j.axis),
                    limits: (j.limits[0], j.limits[1]),
                    mimic: match &j.mimic {
                        None => None,
                        Some(m) => Some(Mimic { joint: index(&Some(m.joint.clone()))?.expect("named"), ratio: m.ratio }),
                    },
                })
            })
            .collect::<grasptransfer_core::Result<Vec<_>>>()?;
        let keypoints = self
            .keypoints
            .iter()
            .map(|k| Ok(KeypointFrame { name: k.name.clone(), parent: index(&k.parent)?, offset: Point3::from(k.offset) }))
            .collect::<grasptransfer_core::Result<Vec<_>>>()?;
        let model = HandModel::new(self.id.clone(), joints, keypoints, Vector3::from(self.palm_normal), self.open_configuration.clone())?;
        if let Some(rest) = &self.rest_keypoints {
            let expect = keypoints_from_doc(rest)?;
            let got = model.rest_keypoints();
            got.check_same_names(&expect)?;
            for (name, p) in expect.iter() {
                let d = (got.get(name).expect("names checked") - p).norm();
                if d > 1e-9 {
                    return Err(invalid(format!("rest keypoint '{name}' is {d:e} m from forward kinematics")));
                }
            }
        }
        Ok(model)
    }
}

const BUILTIN_HANDS: [(&str, &str); 2] = [
    ("two_finger_toy", include_str!("../fixtures/two_finger_toy.json")),
    ("anthropomorphic_16", include_str!("../fixtures/anthropomorphic_16.json")),
];

/// Hand from a JSON file, or one of the bundled models via `builtin:<id>`.
pub fn load_hand(spec: &Path) -> Result<HandModel> {
    let s = spec.to_string_lossy();
    if let Some(id) = s.strip_prefix("builtin:") {
        let text = BUILTIN_HANDS
            .iter()
            .find(|(n, _)| *n == id)
            .map(|(_, t)| *t)
            .ok_or_else(|| CliError::invalid(format!("no bundled hand named '{id}'")))?;
        let doc: HandModelFile = serde_json::from_str(text).map_err(|e| CliError::schema(spec, e))?;
        return Ok(doc.to_model()?);
    }
    let doc: HandModelFile = read_json(spec)?;
    doc.to_model().map_err(|e| CliError::schema(spec, e))
}

pub fn load_demo(path: &Path) -> Result<GraspDemonstration> {
    let doc: GraspFile = read_json(path)?;
    doc.to_demo().map_err(|e| CliError::schema(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageDoc {
    pub sigma: f64,
    pub steps: usize,
    pub final_energy: f64,
    pub gradient_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentFile {
    pub schema_version: u32,
    pub latent: Vec<f64>,
    pub final_energy: f64,
    /// `canonical_outer` or `observation_outer`.
    pub energy_orientation: String,
    pub observation_points: usize,
    pub stages: Vec<StageDoc>,
    /// Chamfer distance between the fitted shape and the observation (meters).
    pub chamfer_to_observation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildInstanceRow {
    pub index: usize,
    pub path: String,
    pub final_sigma2: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildReport {
    pub schema_version: u32,
    pub anchors: usize,
    pub latent_dim: usize,
    pub training_count: usize,
    pub config_digest: String,
    pub singular_values: Vec<f64>,
    pub cumulative_explained_variance: Vec<f64>,
    pub instances: Vec<BuildInstanceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferReport {
    pub schema_version: u32,
    pub provenance: String,
    pub configuration: ConfigurationDoc,
    pub pregrasp: ConfigurationDoc,
    pub achieved_keypoints: Vec<NamedPoint>,
    pub target_keypoints: Vec<NamedPoint>,
    pub task_space_distance: f64,
    pub retarget_residual: Option<f64>,
    pub latent: Vec<f64>,
}

impl TransferReport {
    pub fn from_outcome(o: &GraspOutcome, latent: &[f64]) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            provenance: o.provenance.name().to_string(),
            configuration: ConfigurationDoc::from_config(&o.configuration),
            pregrasp: ConfigurationDoc::from_config(&o.pregrasp),
            achieved_keypoints: keypoints_doc(&o.achieved),
            target_keypoints: keypoints_doc(&o.target.keypoints),
            task_space_distance: o.task_space_distance,
            retarget_residual: o.retarget_residual,
            latent: latent.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodResult {
    pub provenance: String,
    pub task_space_distance: f64,
    pub retarget_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRow {
    pub index: usize,
    pub path: String,
    pub final_energy: f64,
    pub chamfer_to_observation: f64,
    pub methods: Vec<MethodResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSummary {
    pub provenance: String,
    pub mean_m: f64,
    pub std_m: f64,
    pub mean_cm: f64,
    pub std_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationReport {
    pub schema_version: u32,
    pub category: String,
    pub rows: Vec<AblationRow>,
    pub summary: Vec<MethodSummary>,
}

fn zero() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskStateDoc {
    pub tool_pose: PoseDoc,
    pub target_pose: PoseDoc,
    #[serde(default = "zero")]
    pub keypoint_distance_sum: f64,
    #[serde(default = "zero")]
    pub nail_depth_delta: f64,
    #[serde(default = "zero")]
    pub nail_depth: f64,
    #[serde(default = "zero")]
    pub hammer_nail_distance: f64,
    #[serde(default = "zero")]
    pub table_height: f64,
    #[serde(default = "zero")]
    pub lift_shortfall: f64,
    /// Tool-frame surface samples; when given, the report includes the
    /// lowest-point height above the table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_surface_points: Option<Vec<[f64; 3]>>,
}

impl TaskStateDoc {
    pub fn to_state(&self) -> grasptransfer_core::Result<TaskState> {
        let mut s = TaskState::new(self.tool_pose.to_pose()?, self.target_pose.to_pose()?);
        s.keypoint_distance_sum = self.keypoint_distance_sum;
        s.nail_depth_delta = self.nail_depth_delta;
        s.nail_depth = self.nail_depth;
        s.hammer_nail_distance = self.hammer_nail_distance;
        s.table_height = self.table_height;
        s.lift_shortfall = self.lift_shortfall;
        s.tool_surface_points = match &self.tool_surface_points {
            Some(p) => Some(PointSet::from_coords(p)?),
            None => None,
        };
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskStatesFile {
    pub schema_version: u32,
    pub states: Vec<TaskStateDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardRow {
    pub index: usize,
    pub terms: BTreeMap<String, f64>,
    pub total: f64,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lowest_point_height: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardReport {
    pub schema_version: u32,
    pub task: String,
    pub rows: Vec<RewardRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub parameters: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthManifest {
    pub schema_version: u32,
    pub family: String,
    pub seed: u64,
    pub points: usize,
    pub parameter_names: Vec<String>,
    pub canonical: ManifestEntry,
    pub instances: Vec<ManifestEntry>,
    pub demonstration: String,
    pub hand_model: String,
}

versioned!(
    GraspFile,
    HandModelFile,
    LatentFile,
    BuildReport,
    TransferReport,
    AblationReport,
    TaskStatesFile,
    RewardReport,
    SynthManifest
);
