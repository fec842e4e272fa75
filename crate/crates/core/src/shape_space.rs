//! Latent deformation-field manifold of an object category.
//!
//! Every training instance is reached from the canonical cloud `C` by a CPD
//! field with weights `W_i` (`M x 3`). Flattened row-major, the `W_i` form an
//! `n x 3M` design matrix; its principal axes span the latent space. A latent
//! code `l` decodes to `W(l) = mean + unflatten(l^T L)`.
//!
//! Fitting minimizes
//!
//! ```text
//! E(l) = - sum_m log sum_n exp(-|O_n - T(C_m, W_m(l))|^2 / (2 sigma^2))
//! ```
//!
//! where the outer sum runs over canonical points and the inner over
//! observation points, over a decreasing schedule of `sigma`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Vector3};
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::cpd::{register_in_frame, CpdConfig, DeformationField, Registration};
use crate::error::{invalid, Error, Result};
use crate::geometry::{kernel_matrix, normalize, subsample_to, NormalizationParams, Point3, PointSet};

/// Exponents this far below the per-row maximum contribute less than
/// `N e^-50` to the log-sum-exp and are skipped.
const LSE_CUTOFF: f64 = -50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    values: Vec<f64>,
}

impl LatentCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(invalid("latent code must be finite"));
        }
        Ok(Self { values })
    }

    pub fn zeros(q: usize) -> Self {
        Self { values: vec![0.0; q] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Category model: canonical instance plus a PCA basis over CPD weights.
#[derive(Debug, Clone)]
pub struct ShapeSpace {
    canonical: PointSet,
    anchors: PointSet,
    mean_weights: DMatrix<f64>,
    basis: DMatrix<f64>,
    singular_values: Vec<f64>,
    kernel_width: f64,
    normalization: NormalizationParams,
    training_count: usize,
    // Deformed canonical at l = 0 and the per-mode displacement of every
    // canonical point, both in the normalized frame.
    mean_shape: Vec<Point3>,
    modes: Vec<Vec<Vector3<f64>>>,
}

impl ShapeSpace {
    /// Assembles a space from stored parts, validating shapes and the basis.
    pub fn from_parts(
        canonical: PointSet,
        normalization: NormalizationParams,
        mean_weights: DMatrix<f64>,
        basis: DMatrix<f64>,
        singular_values: Vec<f64>,
        kernel_width: f64,
        training_count: usize,
    ) -> Result<Self> {
        let m = canonical.len();
        let q = basis.nrows();
        if mean_weights.nrows() != m || mean_weights.ncols() != 3 {
            return Err(invalid(format!("mean weights must be {m} x 3")));
        }
        if basis.ncols() != 3 * m {
            return Err(invalid(format!("basis has {} columns, expected {}", basis.ncols(), 3 * m)));
        }
        if q == 0 || singular_values.len() != q {
            return Err(invalid(format!("need q >= 1 singular values matching {q} basis rows")));
        }
        if training_count < 2 || q > training_count - 1 {
            return Err(invalid(format!("q = {q} exceeds training_count - 1 = {}", training_count.saturating_sub(1))));
        }
        if singular_values.iter().any(|s| !(*s >= 0.0 && s.is_finite()))
            || singular_values.windows(2).any(|w| w[1] > w[0])
        {
            return Err(invalid("singular values must be finite, nonnegative and non-increasing"));
        }
        if !(kernel_width > 0.0 && kernel_width.is_finite()) {
            return Err(invalid("kernel width must be positive"));
        }
        if !mean_weights.iter().chain(basis.iter()).all(|v| v.is_finite()) {
            return Err(invalid("shape space matrices must be finite"));
        }
        let gram = &basis * basis.transpose();
        let ortho_err = (gram - DMatrix::<f64>::identity(q, q)).amax();
        if ortho_err > 1e-9 {
            return Err(invalid(format!("basis rows are not orthonormal (error {ortho_err:e})")));
        }

        let anchors = normalization.apply_set(&canonical);
        let g = kernel_matrix(anchors.points(), anchors.points(), kernel_width);
        let mean_disp = &g * &mean_weights;
        let mean_shape = (0..m)
            .map(|i| anchors[i] + Vector3::new(mean_disp[(i, 0)], mean_disp[(i, 1)], mean_disp[(i, 2)]))
            .collect();
        let mut modes = Vec::with_capacity(q);
        for k in 0..q {
            let wk = unflatten(basis.row(k).iter().copied(), m);
            let d = &g * wk;
            modes.push((0..m).map(|i| Vector3::new(d[(i, 0)], d[(i, 1)], d[(i, 2)])).collect::<Vec<_>>());
        }

        Ok(Self {
            canonical,
            anchors,
            mean_weights,
            basis,
            singular_values,
            kernel_width,
            normalization,
            training_count,
            mean_shape,
            modes,
        })
    }

    /// PCA over the flattened weights of fields that all share the
    /// canonical anchors. Keeps the smallest `q` reaching `variance_target`
    /// of the explained variance, with `1 <= q <= n - 1`.
    pub fn from_fields(
        canonical: PointSet,
        normalization: NormalizationParams,
        kernel_width: f64,
        fields: &[DeformationField],
        variance_target: f64,
    ) -> Result<(Self, Vec<f64>)> {
        let n = fields.len();
        if n < 2 {
            return Err(invalid("need ≥ 2 training instances"));
        }
        if !(variance_target > 0.0 && variance_target <= 1.0) {
            return Err(invalid(format!("variance target must lie in (0, 1], got {variance_target}")));
        }
        let m = canonical.len();
        let dim = 3 * m;
        let mut design = DMatrix::<f64>::zeros(n, dim);
        for (i, f) in fields.iter().enumerate() {
            if f.weights().nrows() != m {
                return Err(invalid(format!("field {i} has {} anchors, expected {m}", f.weights().nrows())));
            }
            for (j, v) in flatten(f.weights()).enumerate() {
                design[(i, j)] = v;
            }
        }
        let (mean, basis, spectrum, q) = principal_axes(&design, variance_target);
        let mean_weights = unflatten(mean.iter().copied(), m);
        let space = Self::from_parts(
            canonical,
            normalization,
            mean_weights,
            basis,
            spectrum[..q].to_vec(),
            kernel_width,
            n,
        )?;
        Ok((space, spectrum))
    }

    pub fn canonical(&self) -> &PointSet {
        &self.canonical
    }

    /// Canonical points in the normalized frame (the kernel anchors).
    pub fn anchors(&self) -> &PointSet {
        &self.anchors
    }

    pub fn mean_weights(&self) -> &DMatrix<f64> {
        &self.mean_weights
    }

    /// `q x 3M`, principal axes as rows.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn kernel_width(&self) -> f64 {
        self.kernel_width
    }

    pub fn normalization(&self) -> &NormalizationParams {
        &self.normalization
    }

    pub fn training_count(&self) -> usize {
        self.training_count
    }

    pub fn latent_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn anchor_count(&self) -> usize {
        self.canonical.len()
    }

    fn check_dim(&self, code: &LatentCode) -> Result<()> {
        if code.dim() != self.latent_dim() {
            return Err(invalid(format!("latent code has dimension {}, space has {}", code.dim(), self.latent_dim())));
        }
        Ok(())
    }

    /// `W(l) = mean + unflatten(l^T L)`.
    pub fn decode_weights(&self, code: &LatentCode) -> Result<DMatrix<f64>> {
        self.check_dim(code)?;
        let m = self.anchor_count();
        let mut w = self.mean_weights.clone();
        for (k, &lk) in code.values().iter().enumerate() {
            if lk == 0.0 {
                continue;
            }
            for i in 0..m {
                for j in 0..3 {
                    w[(i, j)] += lk * self.basis[(k, 3 * i + j)];
                }
            }
        }
        Ok(w)
    }

    pub fn decode(&self, code: &LatentCode) -> Result<DeformationField> {
        let w = self.decode_weights(code)?;
        DeformationField::new(self.anchors.clone(), w, self.kernel_width, self.normalization)
    }

    /// Orthogonal projection of a weight matrix onto the latent basis.
    pub fn project(&self, weights: &DMatrix<f64>) -> Result<LatentCode> {
        if weights.nrows() != self.anchor_count() || weights.ncols() != 3 {
            return Err(invalid("weight matrix does not match the canonical anchors"));
        }
        let centered: DVector<f64> =
            DVector::from_iterator(3 * self.anchor_count(), flatten(weights).zip(flatten(&self.mean_weights)).map(|(a, b)| a - b));
        LatentCode::new((&self.basis * centered).iter().copied().collect())
    }

    /// Deformed canonical `T(C, W(l))` in the normalized frame.
    pub fn deformed_normalized(&self, code: &LatentCode) -> Result<PointSet> {
        self.check_dim(code)?;
        PointSet::new(self.deformed_points(code.values()))
    }

    /// Deformed canonical in the world frame.
    pub fn deformed(&self, code: &LatentCode) -> Result<PointSet> {
        Ok(self.normalization.invert_set(&self.deformed_normalized(code)?))
    }

    fn deformed_points(&self, code: &[f64]) -> Vec<Point3> {
        let mut t = self.mean_shape.clone();
        for (lk, mode) in code.iter().zip(&self.modes) {
            if *lk != 0.0 {
                for (p, d) in t.iter_mut().zip(mode) {
                    *p += d * *lk;
                }
            }
        }
        t
    }

    /// Maps a world-frame observation into the frame the energy is defined in.
    pub fn normalize_observation(&self, observation: &PointSet) -> PointSet {
        self.normalization.apply_set(observation)
    }

    /// Energy of a normalized-frame observation under `code`, outer sum
    /// over canonical points.
    pub fn energy(&self, code: &LatentCode, observation: &PointSet, sigma: f64) -> Result<f64> {
        self.energy_oriented(code, observation, sigma, EnergyOrientation::CanonicalOuter)
    }

    /// Analytic `dE/dl` by the chain rule through the linear decoder.
    pub fn energy_gradient(&self, code: &LatentCode, observation: &PointSet, sigma: f64) -> Result<Vec<f64>> {
        self.energy_gradient_oriented(code, observation, sigma, EnergyOrientation::CanonicalOuter)
    }

    pub fn energy_oriented(
        &self,
        code: &LatentCode,
        observation: &PointSet,
        sigma: f64,
        orientation: EnergyOrientation,
    ) -> Result<f64> {
        self.check_dim(code)?;
        check_sigma(sigma)?;
        Ok(self.energy_at(code.values(), observation.points(), sigma, orientation))
    }

    pub fn energy_gradient_oriented(
        &self,
        code: &LatentCode,
        observation: &PointSet,
        sigma: f64,
        orientation: EnergyOrientation,
    ) -> Result<Vec<f64>> {
        self.check_dim(code)?;
        check_sigma(sigma)?;
        Ok(self.energy_and_gradient(code.values(), observation.points(), sigma, orientation).1)
    }

    fn energy_and_gradient(
        &self,
        code: &[f64],
        obs: &[Point3],
        sigma: f64,
        orientation: EnergyOrientation,
    ) -> (f64, Vec<f64>) {
        let (e, grad, _) = self.energy_gradient_metric(code, obs, sigma, orientation);
        (e, grad)
    }

    /// Energy, latent gradient and the Gauss-Newton metric
    /// `sum_m w_m B_m^T B_m`, where `w_m` is the responsibility mass of
    /// canonical point `m`. Since the model is affine in the code, a unit
    /// step along `-sigma^2 metric^-1 grad` is the EM update of the code.
    fn energy_gradient_metric(
        &self,
        code: &[f64],
        obs: &[Point3],
        sigma: f64,
        orientation: EnergyOrientation,
    ) -> (f64, Vec<f64>, DMatrix<f64>) {
        let t = self.deformed_points(code);
        let mut terms = PointTerms { grad: vec![Vector3::zeros(); t.len()], mass: vec![0.0; t.len()] };
        let e = match orientation {
            EnergyOrientation::CanonicalOuter => canonical_outer(&t, obs, sigma, Some(&mut terms)),
            EnergyOrientation::ObservationOuter => observation_outer(&t, obs, sigma, Some(&mut terms)),
        };
        let grad = self
            .modes
            .iter()
            .map(|mode| mode.iter().zip(&terms.grad).map(|(b, g)| b.dot(g)).sum())
            .collect();
        let q = self.modes.len();
        let weight: Vec<f64> = terms.mass.iter().map(|w| w.max(MASS_FLOOR)).collect();
        let mut metric = DMatrix::zeros(q, q);
        for a in 0..q {
            for b in a..q {
                let v: f64 = self.modes[a].iter().zip(&self.modes[b]).zip(&weight).map(|((u, v), w)| w * u.dot(v)).sum();
                metric[(a, b)] = v;
                metric[(b, a)] = v;
            }
        }
        (e, grad, metric)
    }

    fn energy_at(&self, code: &[f64], obs: &[Point3], sigma: f64, orientation: EnergyOrientation) -> f64 {
        let t = self.deformed_points(code);
        match orientation {
            EnergyOrientation::CanonicalOuter => canonical_outer(&t, obs, sigma, None),
            EnergyOrientation::ObservationOuter => observation_outer(&t, obs, sigma, None),
        }
    }

    fn bounds(&self, multiplier: f64) -> Vec<f64> {
        self.singular_values.iter().map(|s| multiplier * s).collect()
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Which point set the outer sum of the energy runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnergyOrientation {
    /// `-sum_m log sum_n`: every canonical point must find observed support.
    /// One-sided, so a model that covers only part of the observation
    /// scores well too.
    CanonicalOuter,
    /// `-sum_n log sum_m`: every observed point must be explained by the
    /// model, leaving unobserved canonical regions free. Works for full and
    /// partial views alike, though wide kernels reward piling model density
    /// onto a partial view, so schedules should not start much above 0.2.
    #[default]
    ObservationOuter,
}

/// `-sum_m log sum_n exp(-|O_n - T_m|^2 / 2 sigma^2)` by log-sum-exp;
/// optionally writes `dE/dT_m`.
/// Per-canonical-point `dE/dT_m` and responsibility mass.
struct PointTerms {
    grad: Vec<Vector3<f64>>,
    mass: Vec<f64>,
}

/// Responsibility mass below which a canonical point still counts in the
/// descent metric, so unobserved regions keep some stiffness.
const MASS_FLOOR: f64 = 0.1;

fn canonical_outer(t: &[Point3], obs: &[Point3], sigma: f64, mut out: Option<&mut PointTerms>) -> f64 {
    let k = -0.5 / (sigma * sigma);
    let inv_s2 = 1.0 / (sigma * sigma);
    let mut a = vec![0.0f64; obs.len()];
    let mut energy = 0.0;
    for (m, tm) in t.iter().enumerate() {
        let mut amax = f64::NEG_INFINITY;
        for (an, on) in a.iter_mut().zip(obs) {
            *an = (on - tm).norm_squared() * k;
            amax = amax.max(*an);
        }
        let mut s = 0.0;
        let mut wsum = Vector3::zeros();
        for (an, on) in a.iter().zip(obs) {
            let d = an - amax;
            if d > LSE_CUTOFF {
                let e = d.exp();
                s += e;
                if out.is_some() {
                    wsum += on.coords * e;
                }
            }
        }
        energy -= amax + s.ln();
        if let Some(o) = out.as_deref_mut() {
            // sum_n r_mn (T_m - O_n) / sigma^2 with r the softmax over n.
            o.grad[m] = (tm.coords - wsum / s) * inv_s2;
            o.mass[m] = 1.0;
        }
    }
    energy
}

/// `-sum_n log sum_m exp(-|O_n - T_m|^2 / 2 sigma^2)`; optionally writes
/// `dE/dT_m`.
fn observation_outer(t: &[Point3], obs: &[Point3], sigma: f64, mut out: Option<&mut PointTerms>) -> f64 {
    let k = -0.5 / (sigma * sigma);
    let inv_s2 = 1.0 / (sigma * sigma);
    let mut a = vec![0.0f64; t.len()];
    if let Some(o) = out.as_deref_mut() {
        o.grad.iter_mut().for_each(|v| *v = Vector3::zeros());
        o.mass.iter_mut().for_each(|w| *w = 0.0);
    }
    let mut energy = 0.0;
    for on in obs {
        let mut amax = f64::NEG_INFINITY;
        for (am, tm) in a.iter_mut().zip(t) {
            *am = (on - tm).norm_squared() * k;
            amax = amax.max(*am);
        }
        let mut s = 0.0;
        for am in a.iter_mut() {
            let d = *am - amax;
            *am = if d > LSE_CUTOFF { d.exp() } else { 0.0 };
            s += *am;
        }
        energy -= amax + s.ln();
        if let Some(o) = out.as_deref_mut() {
            let inv = 1.0 / s;
            for (((gm, wm), am), tm) in o.grad.iter_mut().zip(o.mass.iter_mut()).zip(&a).zip(t) {
                if *am != 0.0 {
                    let r = *am * inv;
                    *gm += (tm - on) * (r * inv_s2);
                    *wm += r;
                }
            }
        }
    }
    energy
}

fn flatten(w: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..w.nrows()).flat_map(move |i| (0..3).map(move |j| w[(i, j)]))
}

fn unflatten(values: impl Iterator<Item = f64>, m: usize) -> DMatrix<f64> {
    let v: Vec<f64> = values.collect();
    DMatrix::from_row_slice(m, 3, &v)
}

/// Mean row, orthonormal principal axes (rows), full singular spectrum in
/// non-increasing order and the kept dimension `q`. The spectrum comes from
/// the `n x n` Gram matrix of the centered design.
fn principal_axes(design: &DMatrix<f64>, variance_target: f64) -> (DVector<f64>, DMatrix<f64>, Vec<f64>, usize) {
    let n = design.nrows();
    let dim = design.ncols();
    let mean = DVector::from_fn(dim, |j, _| design.column(j).sum() / n as f64);
    let mut centered = design.clone();
    for i in 0..n {
        for j in 0..dim {
            centered[(i, j)] -= mean[j];
        }
    }
    let gram = &centered * centered.transpose();
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let spectrum: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0).sqrt()).collect();

    let total: f64 = spectrum.iter().map(|s| s * s).sum();
    let cap = (n - 1).max(1);
    let mut q = 1;
    if total > 0.0 {
        let mut acc = 0.0;
        for (k, s) in spectrum.iter().enumerate() {
            acc += s * s;
            q = k + 1;
            if acc >= variance_target * total {
                break;
            }
        }
    }
    let q = q.clamp(1, cap);

    let tiny = 1e-10 * spectrum[0].max(f64::MIN_POSITIVE);
    let mut basis = DMatrix::<f64>::zeros(q, dim);
    let mut next_unit = 0;
    for k in 0..q {
        let mut row = if spectrum[k] > tiny {
            let v = eig.eigenvectors.column(order[k]);
            (centered.transpose() * v) / spectrum[k]
        } else {
            DVector::zeros(dim)
        };
        // Modified Gram-Schmidt; null directions fall back to unit vectors.
        loop {
            for r in 0..k {
                let prev = basis.row(r).transpose();
                let c = prev.dot(&row);
                row -= prev * c;
            }
            let norm = row.norm();
            if norm > 1e-8 {
                row /= norm;
                break;
            }
            row = DVector::zeros(dim);
            row[next_unit % dim] = 1.0;
            next_unit += 1;
        }
        basis.set_row(k, &row.transpose());
    }
    (mean, basis, spectrum, q)
}

#[derive(Debug, Clone)]
pub struct ShapeSpaceBuild {
    pub space: ShapeSpace,
    /// One registration per training instance, in input order.
    pub registrations: Vec<Registration>,
    /// Every singular value of the centered design matrix (`n` values).
    pub spectrum: Vec<f64>,
}

impl ShapeSpaceBuild {
    /// Cumulative explained-variance ratio after each component.
    pub fn cumulative_explained_variance(&self) -> Vec<f64> {
        cumulative_explained(&self.spectrum)
    }
}

pub fn cumulative_explained(spectrum: &[f64]) -> Vec<f64> {
    let total: f64 = spectrum.iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    spectrum
        .iter()
        .map(|s| {
            acc += s * s;
            if total > 0.0 {
                acc / total
            } else {
                1.0
            }
        })
        .collect()
}

/// Canonical cloud after subsampling plus the frame every registration
/// shares.
pub fn prepare_canonical(canonical: &PointSet, cpd: &CpdConfig) -> Result<(PointSet, NormalizationParams)> {
    let c = subsample_to(canonical, cpd.subsample_limit, cpd.seed)?;
    let params = normalize(&c).params;
    Ok((c, params))
}

/// Registers the canonical onto one training instance in the shared frame.
pub fn register_training_instance(
    canonical: &PointSet,
    frame: NormalizationParams,
    instance: &PointSet,
    cpd: &CpdConfig,
    index: usize,
) -> Result<Registration> {
    let target = subsample_to(instance, cpd.subsample_limit, cpd.seed)?;
    register_in_frame(canonical, &target, frame, cpd)
        .map_err(|e| Error::Registration { index, source: alloc::boxed::Box::new(e) })
}

/// Sequential build: registers `C -> T_i` for every training instance and
/// runs PCA over the resulting weights.
pub fn build_shape_space(
    canonical: &PointSet,
    training: &[PointSet],
    cpd: &CpdConfig,
    variance_target: f64,
) -> Result<ShapeSpaceBuild> {
    if training.len() < 2 {
        return Err(invalid("need ≥ 2 training instances"));
    }
    cpd.validate()?;
    let (c, frame) = prepare_canonical(canonical, cpd)?;
    let registrations = training
        .iter()
        .enumerate()
        .map(|(i, t)| register_training_instance(&c, frame, t, cpd, i))
        .collect::<Result<Vec<_>>>()?;
    assemble(c, frame, cpd, registrations, variance_target)
}

/// PCA step of [`build_shape_space`], for callers that run the
/// registrations themselves (in input order).
pub fn assemble(
    canonical: PointSet,
    frame: NormalizationParams,
    cpd: &CpdConfig,
    registrations: Vec<Registration>,
    variance_target: f64,
) -> Result<ShapeSpaceBuild> {
    let fields: Vec<DeformationField> = registrations.iter().map(|r| r.field.clone()).collect();
    let (space, spectrum) = ShapeSpace::from_fields(canonical, frame, cpd.beta, &fields, variance_target)?;
    Ok(ShapeSpaceBuild { space, registrations, spectrum })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Strictly decreasing `sigma` stages, normalized units.
    pub sigma_schedule: Vec<f64>,
    /// Initial step of the backtracking line search.
    pub step_size: f64,
    pub max_steps_per_stage: usize,
    /// A stage ends once the projected gradient norm falls below this.
    pub gradient_tolerance: f64,
    /// A stage also ends once an accepted step lowers the energy by less
    /// than this fraction of `1 + |E|`.
    pub energy_tolerance: f64,
    pub init: Option<LatentCode>,
    /// Latent box is `|l_i| <= bound_multiplier * s_i`.
    pub bound_multiplier: f64,
    /// Observations with more points are reduced by farthest-point sampling.
    pub subsample_limit: usize,
    pub seed: u64,
    pub orientation: EnergyOrientation,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            sigma_schedule: vec![0.2, 0.1, 0.05, 0.025, 0.0125],
            step_size: 1.0,
            max_steps_per_stage: 100,
            gradient_tolerance: 1e-6,
            energy_tolerance: 1e-9,
            init: None,
            bound_multiplier: 3.0,
            subsample_limit: 2048,
            seed: 0,
            orientation: EnergyOrientation::ObservationOuter,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_schedule.is_empty() {
            return Err(invalid("sigma schedule must be nonempty"));
        }
        if self.sigma_schedule.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(invalid("sigma schedule entries must be positive"));
        }
        if self.sigma_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("sigma schedule must be strictly decreasing"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid("step size must be positive"));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(invalid("gradient tolerance must be positive"));
        }
        if !(self.energy_tolerance >= 0.0 && self.energy_tolerance.is_finite()) {
            return Err(invalid("energy tolerance must be finite and nonnegative"));
        }
        if !(self.bound_multiplier > 0.0) {
            return Err(invalid("bound multiplier must be positive"));
        }
        if self.subsample_limit == 0 {
            return Err(invalid("subsample limit must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub sigma: f64,
    /// Energy at the stage start followed by every accepted step.
    pub energies: Vec<f64>,
    pub steps: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub code: LatentCode,
    /// Energy under the last `sigma` of the schedule.
    pub final_energy: f64,
    pub trace: Vec<StageTrace>,
}

/// Coarse-to-fine fit of a world-frame observation.
///
/// Each stage runs quasi-Newton descent whose curvature model starts at the
/// Gauss-Newton metric `B^T W B / sigma^2`, where `B` holds the per-mode
/// displacements of the canonical points and `W` their responsibility
/// masses, and is refined by BFGS updates. Steps use a backtracking
/// line search starting at `step_size`. Iterates are projected onto the
/// latent box after every trial step, coordinates pinned at a bound are left
/// out of the preconditioned solve, and a step is accepted only when the
/// energy drops.
pub fn fit_latent(space: &ShapeSpace, observation: &PointSet, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let obs = subsample_to(observation, config.subsample_limit, config.seed)?;
    let obs = space.normalize_observation(&obs);
    fit_latent_normalized(space, &obs, config)
}

/// As [`fit_latent`] for an observation already in the normalized frame.
pub fn fit_latent_normalized(space: &ShapeSpace, obs: &PointSet, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let q = space.latent_dim();
    let bounds = space.bounds(config.bound_multiplier);
    let mut code: Vec<f64> = match &config.init {
        Some(c) => {
            space.check_dim(c)?;
            c.values().to_vec()
        }
        None => vec![0.0; q],
    };
    clamp_box(&mut code, &bounds);

    let pts = obs.points();
    let mut trace = Vec::with_capacity(config.sigma_schedule.len());
    let mut final_energy = f64::NAN;
    for (stage, &sigma) in config.sigma_schedule.iter().enumerate() {
        let (mut e, mut g, metric) = space.energy_gradient_metric(&code, pts, sigma, config.orientation);
        // Curvature model: the Gauss-Newton metric, refined by BFGS updates.
        let mut hessian = metric / (sigma * sigma);
        if !e.is_finite() {
            return Err(Error::StageFailure { stage, reason: format!("energy is {e}") });
        }
        let mut energies = vec![e];
        let mut steps = 0;
        let mut converged = false;
        let mut gnorm = projected_norm(&code, &g, &bounds);
        while steps < config.max_steps_per_stage {
            if gnorm < config.gradient_tolerance {
                converged = true;
                break;
            }
            let dir = descent_direction(&hessian, &code, &g, &bounds);
            let mut t = config.step_size;
            let mut accepted = None;
            for _ in 0..60 {
                let mut cand: Vec<f64> = code.iter().zip(dir.iter()).map(|(c, d)| c + t * d).collect();
                clamp_box(&mut cand, &bounds);
                let decrease: f64 = g.iter().zip(cand.iter().zip(&code)).map(|(gi, (c, o))| gi * (c - o)).sum();
                let ec = space.energy_at(&cand, pts, sigma, config.orientation);
                if !ec.is_finite() {
                    return Err(Error::StageFailure { stage, reason: format!("energy is {ec}") });
                }
                if ec < e && ec <= e + 1e-4 * decrease.min(0.0) {
                    accepted = Some((cand, ec));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, _)) = accepted else {
                // No representable decrease along the search direction.
                converged = true;
                break;
            };
            let (ne, ng) = space.energy_and_gradient(&cand, pts, sigma, config.orientation);
            bfgs_update(&mut hessian, &cand, &code, &ng, &g);
            code = cand;
            let stalled = e - ne < config.energy_tolerance * (1.0 + ne.abs());
            e = ne;
            g = ng;
            energies.push(e);
            steps += 1;
            gnorm = projected_norm(&code, &g, &bounds);
            if stalled {
                converged = true;
                break;
            }
        }
        if gnorm < config.gradient_tolerance {
            converged = true;
        }
        final_energy = e;
        trace.push(StageTrace { sigma, energies, steps, gradient_norm: gnorm, converged });
    }
    Ok(FitResult { code: LatentCode::new(code)?, final_energy, trace })
}

/// Two-metric projection direction: coordinates held at a bound by the
/// gradient stay put, the rest take the Newton-like step within their own
/// block of the curvature model. Preconditioning across a clamped coordinate would let
/// the clamp discard the useful part of the step and stall at a corner.
fn descent_direction(hessian: &DMatrix<f64>, code: &[f64], grad: &[f64], bounds: &[f64]) -> Vec<f64> {
    let free: Vec<usize> = (0..code.len()).filter(|&i| !held(code[i], grad[i], bounds[i])).collect();
    let mut dir = vec![0.0; code.len()];
    if free.is_empty() {
        return dir;
    }
    let mut block = DMatrix::from_fn(free.len(), free.len(), |r, c| hessian[(free[r], free[c])]);
    let ridge = 1e-12 * block.trace().max(f64::MIN_POSITIVE);
    for i in 0..free.len() {
        block[(i, i)] += ridge;
    }
    let g = DVector::from_iterator(free.len(), free.iter().map(|&i| grad[i]));
    let step = match block.cholesky() {
        Some(ch) => ch.solve(&g),
        None => g,
    };
    for (k, &i) in free.iter().enumerate() {
        dir[i] = -step[k];
    }
    dir
}

/// BFGS update of `hessian` for the step `new - old`; skipped when the
/// curvature condition fails, which keeps the model positive definite.
fn bfgs_update(hessian: &mut DMatrix<f64>, new: &[f64], old: &[f64], new_grad: &[f64], old_grad: &[f64]) {
    let s = DVector::from_iterator(new.len(), new.iter().zip(old).map(|(a, b)| a - b));
    let y = DVector::from_iterator(new.len(), new_grad.iter().zip(old_grad).map(|(a, b)| a - b));
    let sy = s.dot(&y);
    let hs = &*hessian * &s;
    let shs = s.dot(&hs);
    if !(sy > 1e-12 * s.norm() * y.norm()) || !(shs > 0.0) {
        return;
    }
    *hessian += &y * y.transpose() / sy - &hs * hs.transpose() / shs;
}

/// At a bound with the gradient pushing outward.
fn held(c: f64, g: f64, bound: f64) -> bool {
    (c >= bound && g < 0.0) || (c <= -bound && g > 0.0)
}

fn clamp_box(code: &mut [f64], bounds: &[f64]) {
    for (c, b) in code.iter_mut().zip(bounds) {
        *c = c.clamp(-b, *b);
    }
}

/// Gradient norm with components that push against an active bound removed.
fn projected_norm(code: &[f64], grad: &[f64], bounds: &[f64]) -> f64 {
    code.iter()
        .zip(grad)
        .zip(bounds)
        .map(|((c, g), b)| if held(*c, *g, *b) { 0.0 } else { g * g })
        .sum::<f64>()
        .sqrt()
}
