//! End-to-end runs of the binary through files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use grasptransfer::files::{AblationReport, BuildReport, LatentFile, RewardReport, SynthManifest, TransferReport};
use grasptransfer::mesh_io::{load_point_cloud, save_point_cloud};
use grasptransfer::ShapeSpaceArchive;
use grasptransfer_core::geometry::chamfer_distance;
use grasptransfer_core::{LatentCode, ShapeSpace};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_grasptransfer"));
    c.env("GRASPTRANSFER_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json<T: serde::de::DeserializeOwned>(p: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// A synthesized mug category and the shape space built from it, shared by
/// every test in this file.
struct Mugs {
    dir: TempDir,
}

impl Mugs {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
    fn archive(&self) -> PathBuf {
        self.path("mugs.gts")
    }
}

fn mugs() -> &'static Mugs {
    static MUGS: OnceLock<Mugs> = OnceLock::new();
    MUGS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let m = Mugs { dir };
        let cat = m.path("cat");
        ok(&["synth", "ellipsoid_mugs", "10", s(&cat), "--seed", "7", "--partial-view", "halfspace"]);
        ok(&["build", s(&cat.join("canonical.xyz")), s(&cat.join("instances")), s(&m.archive()), "--seed", "3"]);
        m
    })
}

#[test]
fn synth_writes_counts_and_manifest() {
    let m = mugs();
    let manifest: SynthManifest = json(&m.path("cat/manifest.json"));
    assert_eq!(manifest.instances.len(), 10);
    assert_eq!(manifest.parameter_names, ["radius", "height", "handle_radius"]);
    for e in &manifest.instances {
        assert_eq!(load_point_cloud(&m.path(&format!("cat/{}", e.path))).unwrap().len(), 512);
        let partial = load_point_cloud(&m.path(&format!("cat/{}", e.partial_path.as_ref().unwrap()))).unwrap();
        assert!(partial.len() < 512 && partial.len() > 100);
    }
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&["synth", "stretched_hammers", "3", s(d.path()), "--seed", "11", "--points", "64"]);
    }
    for f in ["manifest.json", "canonical.xyz", "instances/instance_002.xyz", "demo.json", "hand.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn build_meets_variance_target_and_is_reproducible() {
    let m = mugs();
    let report: BuildReport = json(&m.path("mugs.report.json"));
    assert_eq!(report.training_count, 10);
    assert!(report.latent_dim >= 1);
    assert!(report.cumulative_explained_variance[report.latent_dim - 1] >= 0.95);
    if report.latent_dim > 1 {
        assert!(report.cumulative_explained_variance[report.latent_dim - 2] < 0.95);
    }
    let again = m.path("again.gts");
    let cat = m.path("cat");
    ok(&["build", s(&cat.join("canonical.xyz")), s(&cat.join("instances")), s(&again), "--seed", "3"]);
    assert_eq!(std::fs::read(m.archive()).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn build_with_one_instance_is_a_domain_error() {
    let d = tempfile::tempdir().unwrap();
    let train = d.path().join("train");
    std::fs::create_dir(&train).unwrap();
    std::fs::copy(mugs().path("cat/instances/instance_000.xyz"), train.join("only.xyz")).unwrap();
    let out = run(&["build", s(&mugs().path("cat/canonical.xyz")), s(&train), s(&d.path().join("x.gts"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("need ≥ 2 training instances"));
}

#[test]
fn io_and_parse_failures_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("missing.gts");
    let out = run(&["fit", s(&missing), s(&mugs().path("cat/canonical.xyz")), s(&d.path().join("l.json"))]);
    assert_eq!(out.status.code(), Some(2));

    let bad = d.path().join("bad.xyz");
    std::fs::write(&bad, "0 0 0\n1 nope 2\n").unwrap();
    let out = run(&["fit", s(&mugs().archive()), s(&bad), s(&d.path().join("l.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn unknown_json_fields_rejected() {
    let d = tempfile::tempdir().unwrap();
    let demo = d.path().join("demo.json");
    let mut v: serde_json::Value = json(&mugs().path("cat/demo.json"));
    v["surprise"] = 1.into();
    std::fs::write(&demo, v.to_string()).unwrap();
    let out = run(&[
        "transfer",
        s(&mugs().archive()),
        s(&mugs().path("cat/canonical.xyz")),
        s(&demo),
        "builtin:anthropomorphic_16",
        s(&d.path().join("g.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("surprise"));
}

fn write_space(space: ShapeSpace, path: &Path) {
    ShapeSpaceArchive { space, config_digest: String::new() }.save(path).unwrap();
}

#[test]
fn fit_recovers_a_generated_latent_through_files() {
    let m = mugs();
    let space = ShapeSpaceArchive::load(&m.archive()).unwrap().space;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth: Vec<f64> = space.singular_values().iter().map(|sv| rng.random_range(-1.5..1.5) * sv).collect();
    let code = LatentCode::new(truth.clone()).unwrap();
    let d = tempfile::tempdir().unwrap();
    let obs = d.path().join("obs.xyz");
    save_point_cloud(&space.deformed(&code).unwrap(), &obs).unwrap();
    let latent = d.path().join("fit.json");
    ok(&["fit", s(&m.archive()), s(&obs), s(&latent)]);
    let doc: LatentFile = json(&latent);
    let err: f64 = doc.latent.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(err / norm < 0.05, "relative latent error {}", err / norm);
    let deformed = load_point_cloud(&d.path().join("fit.deformed.ply")).unwrap();
    assert_eq!(deformed.len(), space.anchor_count());
}

#[test]
fn fit_partial_crop_beats_the_canonical() {
    let m = mugs();
    let space = ShapeSpaceArchive::load(&m.archive()).unwrap().space;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let truth: Vec<f64> = space.singular_values().iter().map(|sv| rng.random_range(-2.0..2.0) * sv).collect();
    let full = space.deformed(&LatentCode::new(truth).unwrap()).unwrap();
    let d = tempfile::tempdir().unwrap();
    let obs = d.path().join("obs.xyz");
    save_point_cloud(&full, &obs).unwrap();
    let c = full.centroid();
    let viewpoint = format!("{},{},{}", c.x + 1e3, c.y, c.z);
    let latent = d.path().join("fit.json");
    ok(&["fit", s(&m.archive()), s(&obs), s(&latent), "--crop", "halfspace", "--viewpoint", &viewpoint]);
    let doc: LatentFile = json(&latent);
    assert_eq!(doc.energy_orientation, "observation_outer");
    let refused = run(&["fit", s(&m.archive()), s(&obs), s(&latent), "--partial", "--energy", "canonical-outer"]);
    assert_eq!(refused.status.code(), Some(1));
    assert!(doc.observation_points < full.len());
    let fitted = load_point_cloud(&d.path().join("fit.deformed.ply")).unwrap();
    assert!(chamfer_distance(&fitted, &full) < 0.5 * chamfer_distance(space.canonical(), &full));
}

/// The shared archive with its mean field removed, so the canonical is
/// exactly the origin of the latent space.
fn zero_mean_archive(m: &Mugs, dir: &Path) -> (PathBuf, ShapeSpace) {
    let base = ShapeSpaceArchive::load(&m.archive()).unwrap().space;
    let zero_mean = ShapeSpace::from_parts(
        base.canonical().clone(),
        *base.normalization(),
        DMatrix::zeros(base.anchor_count(), 3),
        base.basis().clone(),
        base.singular_values().to_vec(),
        base.kernel_width(),
        base.training_count(),
    )
    .unwrap();
    let archive = dir.join("zero.gts");
    write_space(zero_mean, &archive);
    (archive, base)
}

#[test]
fn fit_self_with_zero_mean_stays_at_origin() {
    let m = mugs();
    let d = tempfile::tempdir().unwrap();
    let (archive, base) = zero_mean_archive(m, d.path());
    let latent = d.path().join("fit.json");
    ok(&["fit", s(&archive), s(&m.path("cat/canonical.xyz")), s(&latent)]);
    let doc: LatentFile = json(&latent);
    let scaled: f64 = doc.latent.iter().zip(base.singular_values()).map(|(l, sv)| (l / sv).powi(2)).sum::<f64>().sqrt();
    assert!(scaled < 1e-3, "{:?}", doc.latent);
}

#[test]
fn transfer_onto_the_canonical_is_exact() {
    let m = mugs();
    let d = tempfile::tempdir().unwrap();
    let (archive, _) = zero_mean_archive(m, d.path());
    let out = d.path().join("grasp.json");
    ok(&[
        "transfer",
        s(&archive),
        s(&m.path("cat/canonical.xyz")),
        s(&m.path("cat/demo.json")),
        s(&m.path("cat/hand.json")),
        s(&out),
    ]);
    let r: TransferReport = json(&out);
    assert_eq!(r.provenance, "full_transfer");
    assert!(r.task_space_distance < 1e-3, "{}", r.task_space_distance);
    assert_eq!(r.configuration.joint_angles.len(), 5);
    assert_eq!(r.pregrasp.joint_angles.len(), 5);
}

#[test]
fn transfer_from_latent_file_and_ablations() {
    let m = mugs();
    let d = tempfile::tempdir().unwrap();
    let latent = d.path().join("fit.json");
    ok(&["fit", s(&m.archive()), s(&m.path("cat/instances/instance_004.xyz")), s(&latent)]);
    let (archive, demo) = (m.archive(), m.path("cat/demo.json"));
    let mut dist = Vec::new();
    for method in ["ours", "wp", "cg"] {
        let out = d.path().join(format!("{method}.json"));
        let args = [
            "transfer",
            s(&archive),
            s(&latent),
            s(&demo),
            "builtin:anthropomorphic_16",
            s(&out),
            "--ablation",
            method,
        ];
        ok(&args);
        let first = std::fs::read(&out).unwrap();
        ok(&args);
        assert_eq!(std::fs::read(&out).unwrap(), first, "transfer output differs between runs");
        let r: TransferReport = json(&out);
        dist.push(r.task_space_distance);
    }
    assert!(dist[0] < dist[1] && dist[0] < dist[2], "{dist:?}");
}

#[test]
fn eval_ablations_report_layout() {
    let m = mugs();
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("table.json");
    let o = ok(&[
        "eval-ablations",
        s(&m.archive()),
        s(&m.path("cat/demo.json")),
        "builtin:anthropomorphic_16",
        s(&m.path("cat/instances")),
        s(&out),
        "--category",
        "mugs",
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("cm"));
    let r: AblationReport = json(&out);
    assert_eq!(r.category, "mugs");
    assert_eq!(r.rows.len(), 10);
    let names: Vec<&str> = r.summary.iter().map(|s| s.provenance.as_str()).collect();
    assert_eq!(names, ["full_transfer", "wrist_only", "canonical"]);
    for (k, s) in r.summary.iter().enumerate() {
        let mean = r.rows.iter().map(|row| row.methods[k].task_space_distance).sum::<f64>() / r.rows.len() as f64;
        assert!((mean - s.mean_m).abs() < 1e-12);
        assert!((s.mean_cm - 100.0 * s.mean_m).abs() < 1e-12);
    }
    assert!(r.summary[0].mean_m < r.summary[1].mean_m && r.summary[0].mean_m < r.summary[2].mean_m);
}

fn reward(states: serde_json::Value, task: &str, extra: &[&str]) -> RewardReport {
    let d = tempfile::tempdir().unwrap();
    let path = d.path().join("states.json");
    std::fs::write(&path, serde_json::json!({"schema_version": 1, "states": states}).to_string()).unwrap();
    let out = d.path().join("reward.json");
    let mut args = vec!["reward", s(&path), "--task", task, "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    json(&out)
}

fn pose(x: f64) -> serde_json::Value {
    serde_json::json!({"position": [x, 0.0, 0.0], "orientation": [1.0, 0.0, 0.0, 0.0]})
}

#[test]
fn reward_examples_through_files() {
    let at_target = serde_json::json!([{"tool_pose": pose(0.0), "target_pose": pose(0.0)}]);
    let r = reward(at_target.clone(), "place_mug", &[]);
    assert!((r.rows[0].total - 127.04).abs() < 1e-9);
    assert!(r.rows[0].success);

    let zeros: Vec<String> = ["r_pose", "r_success", "r_dist", "r_depth", "r_kp", "r_lift"].iter().map(|t| format!("{t}=0")).collect();
    let mut extra = Vec::new();
    for z in &zeros {
        extra.push("--weight");
        extra.push(z.as_str());
    }
    let r = reward(at_target, "place_mug", &extra);
    assert_eq!(r.rows[0].total, 0.0);

    let nail = serde_json::json!([{
        "tool_pose": pose(0.0), "target_pose": pose(0.0),
        "hammer_nail_distance": 0.075, "nail_depth_delta": 0.01,
        "keypoint_distance_sum": 0.975, "lift_shortfall": 0.975
    }]);
    let r = reward(nail, "drive_nail", &[]);
    assert!((r.rows[0].total - 3.551).abs() < 1e-9, "{}", r.rows[0].total);
    assert!((r.rows[0].terms["r_dist"] - 10.0).abs() < 1e-9);
}

#[test]
fn reward_rejects_unknown_term() {
    let d = tempfile::tempdir().unwrap();
    let path = d.path().join("states.json");
    std::fs::write(&path, r#"{"schema_version": 1, "states": []}"#).unwrap();
    let out = run(&["reward", s(&path), "--task", "place_mug", "--weight", "r_bogus=1"]);
    assert_eq!(out.status.code(), Some(1));
}
