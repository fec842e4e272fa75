#![no_std]
//! Generalizing a single demonstrated multi-fingered grasp to novel instances
//! of an object category.
//!
//! The pipeline: register a canonical object onto training instances with
//! non-rigid coherent point drift, build a PCA shape space over the kernel
//! weights, fit latent coordinates to an observed (possibly partial) cloud,
//! push the grasp keypoints through the fitted field and retarget a hand
//! model onto them. Shaped-reward terms for downstream RL live in [`reward`].
//!
//! Everything here is allocation-only `no_std`; file formats and the CLI are
//! provided by the companion `grasptransfer` crate.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cpd;
mod error;
pub mod geometry;
pub mod grasp;
pub mod hand;
pub mod keypoints;
pub mod mesh;
pub mod reward;
pub mod shape_space;
pub mod synthetic;

pub use cpd::{register_nonrigid, CpdConfig, DeformationField, Registration};
pub use error::{Error, Result};
pub use grasp::{
    ablation_canonical, ablation_wrist_only, task_space_distance, transfer_grasp, transfer_keypoints, GraspDemonstration,
    Provenance, TransferredGrasp,
};
pub use hand::{forward_kinematics, pregrasp, retarget, HandConfiguration, HandModel, RetargetConfig, RetargetResult};
pub use keypoints::Keypoints;
pub use geometry::{NormalizationParams, Point3, PointSet, Pose};
pub use mesh::TriangleMesh;
pub use reward::{total_reward, RewardConfig, SuccessThresholds, Task, TaskState};
pub use shape_space::{build_shape_space, fit_latent, EnergyOrientation, FitConfig, FitResult, LatentCode, ShapeSpace};
pub use synthetic::{generate_synthetic_category, Family, SyntheticCategory};
