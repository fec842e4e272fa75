//! Non-rigid coherent point drift.
//!
//! The source cloud `Y` is the set of GMM centroids; it moves by a smooth
//! displacement `v(Z) = G(Y, Z) W` until the target `X` is explained as a
//! sample of the mixture. EM alternates soft correspondences (E-step) with a
//! regularized linear solve for `W` and a closed-form variance update
//! (M-step).
//!
//! Both clouds are mapped into the source's normalized frame before EM, so
//! `W`, `beta` and `sigma^2` are all dimensionless.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, Vector3};
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{invalid, Error, Result};
use crate::geometry::{kernel_matrix, normalize, subsample_to, NormalizationParams, Point3, PointSet};

/// `sigma^2` below this is treated as an exact fit and ends EM.
const SIGMA2_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct CpdConfig {
    /// Gaussian kernel width of the displacement field.
    pub beta: f64,
    /// Motion-coherence regularization weight.
    pub lambda: f64,
    /// Weight of the uniform outlier component, in `[0, 1)`.
    pub outlier_weight: f64,
    pub max_iterations: usize,
    /// EM stops once `|sigma^2_new - sigma^2_old|` drops below this.
    pub sigma2_tolerance: f64,
    /// Clouds larger than this are reduced by farthest-point sampling.
    pub subsample_limit: usize,
    pub seed: u64,
}

impl Default for CpdConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            lambda: 2.0,
            outlier_weight: 0.1,
            max_iterations: 150,
            sigma2_tolerance: 1e-6,
            subsample_limit: 1024,
            seed: 0,
        }
    }
}

impl CpdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.outlier_weight) {
            return Err(invalid(format!("outlier weight must lie in [0, 1), got {}", self.outlier_weight)));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be at least 1"));
        }
        if !(self.sigma2_tolerance > 0.0) {
            return Err(invalid("sigma2_tolerance must be positive"));
        }
        if self.subsample_limit == 0 {
            return Err(invalid("subsample_limit must be at least 1"));
        }
        Ok(())
    }
}

/// Smooth displacement `v(Z) = G(anchors, Z) W`, evaluated in the normalized
/// frame described by `normalization`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    /// Kernel centres, already in the normalized frame.
    anchors: PointSet,
    /// `M x 3`.
    weights: DMatrix<f64>,
    kernel_width: f64,
    normalization: NormalizationParams,
}

impl DeformationField {
    pub fn new(
        anchors: PointSet,
        weights: DMatrix<f64>,
        kernel_width: f64,
        normalization: NormalizationParams,
    ) -> Result<Self> {
        if weights.nrows() != anchors.len() || weights.ncols() != 3 {
            return Err(invalid(format!(
                "weights must be {} x 3, got {} x {}",
                anchors.len(),
                weights.nrows(),
                weights.ncols()
            )));
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(invalid("deformation weights must be finite"));
        }
        if !(kernel_width > 0.0 && kernel_width.is_finite()) {
            return Err(invalid(format!("kernel width must be positive, got {kernel_width}")));
        }
        Ok(Self { anchors, weights, kernel_width, normalization })
    }

    pub fn zero(anchors: PointSet, kernel_width: f64, normalization: NormalizationParams) -> Result<Self> {
        let m = anchors.len();
        Self::new(anchors, DMatrix::zeros(m, 3), kernel_width, normalization)
    }

    pub fn anchors(&self) -> &PointSet {
        &self.anchors
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn kernel_width(&self) -> f64 {
        self.kernel_width
    }

    pub fn normalization(&self) -> &NormalizationParams {
        &self.normalization
    }

    /// Displacement at a point given in the normalized frame.
    pub fn displacement_normalized(&self, z: &Point3) -> Vector3<f64> {
        let k = -0.5 / (self.kernel_width * self.kernel_width);
        let mut v = Vector3::zeros();
        for (m, a) in self.anchors.iter().enumerate() {
            let g = ((a - z).norm_squared() * k).exp();
            v += Vector3::new(self.weights[(m, 0)], self.weights[(m, 1)], self.weights[(m, 2)]) * g;
        }
        v
    }

    /// World-frame displacement at a world-frame point.
    pub fn displacement(&self, z: &Point3) -> Vector3<f64> {
        self.displacement_normalized(&self.normalization.apply(z)) * self.normalization.scale
    }

    pub fn apply_point(&self, z: &Point3) -> Point3 {
        let zn = self.normalization.apply(z);
        self.normalization.invert(&(zn + self.displacement_normalized(&zn)))
    }

    /// `z + v(z)` for every query point, mapped back to the world frame. Any
    /// query set works, not only the anchors.
    pub fn apply(&self, z: &PointSet) -> PointSet {
        let out: Vec<Point3> = z.iter().map(|p| self.apply_point(p)).collect();
        PointSet::new(out).expect("deformation of a valid set stays finite")
    }

    /// Deformed anchors `C + G(C, C) W`, in the normalized frame.
    pub fn deformed_anchors_normalized(&self) -> PointSet {
        let g = kernel_matrix(self.anchors.points(), self.anchors.points(), self.kernel_width);
        let d = &g * &self.weights;
        let pts = self
            .anchors
            .iter()
            .enumerate()
            .map(|(m, a)| a + Vector3::new(d[(m, 0)], d[(m, 1)], d[(m, 2)]))
            .collect();
        PointSet::new(pts).expect("finite")
    }
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub field: DeformationField,
    pub final_sigma2: f64,
    pub iterations: usize,
    /// `sigma^2` after each M-step, starting with the initial value.
    pub sigma2_trace: Vec<f64>,
}

/// Registers `source` onto `target`. Both clouds are subsampled to
/// `config.subsample_limit` points and expressed in the source's
/// normalized frame.
pub fn register_nonrigid(source: &PointSet, target: &PointSet, config: &CpdConfig) -> Result<Registration> {
    config.validate()?;
    let source = subsample_to(source, config.subsample_limit, config.seed)?;
    let target = subsample_to(target, config.subsample_limit, config.seed)?;
    let params = normalize(&source).params;
    register_in_frame(&source, &target, params, config)
}

/// EM in the frame given by `params`; `source` becomes the anchor set as-is.
pub fn register_in_frame(
    source: &PointSet,
    target: &PointSet,
    params: NormalizationParams,
    config: &CpdConfig,
) -> Result<Registration> {
    config.validate()?;
    let y = params.apply_set(source);
    let x = params.apply_set(target);
    let (weights, final_sigma2, iterations, sigma2_trace) = em(y.points(), x.points(), config)?;
    let field = DeformationField::new(y, weights, config.beta, params)?;
    Ok(Registration { field, final_sigma2, iterations, sigma2_trace })
}

fn em(y: &[Point3], x: &[Point3], config: &CpdConfig) -> Result<(DMatrix<f64>, f64, usize, Vec<f64>)> {
    let m = y.len();
    let n = x.len();
    let g = kernel_matrix(y, y, config.beta);

    let mut sigma2 = initial_sigma2(y, x);
    let mut trace = vec![sigma2];
    let mut w = DMatrix::<f64>::zeros(m, 3);
    if !(sigma2 > SIGMA2_FLOOR) {
        return Ok((w, sigma2, 0, trace));
    }
    let mut t: Vec<Point3> = y.to_vec();
    let mut p = vec![0.0f64; m * n];
    let mut iterations = 0;

    for iter in 1..=config.max_iterations {
        iterations = iter;
        let (p1, px) = e_step(&t, x, sigma2, config.outlier_weight, &mut p);
        let np: f64 = p1.iter().sum();
        if !(np.is_finite()) {
            return Err(Error::NumericFailure { iteration: iter, reason: "non-finite responsibilities".into() });
        }

        w = solve_weights(&g, y, &p1, &px, config.lambda * sigma2)
            .ok_or_else(|| Error::NumericFailure { iteration: iter, reason: "singular coherence system".into() })?;
        let d = &g * &w;
        for (mi, ti) in t.iter_mut().enumerate() {
            *ti = y[mi] + Vector3::new(d[(mi, 0)], d[(mi, 1)], d[(mi, 2)]);
        }

        let new_sigma2 = if np > 0.0 {
            let mut acc = 0.0;
            for (mi, ti) in t.iter().enumerate() {
                let row = &p[mi * n..(mi + 1) * n];
                for (pv, xn) in row.iter().zip(x) {
                    if *pv != 0.0 {
                        acc += pv * (xn - ti).norm_squared();
                    }
                }
            }
            acc / (3.0 * np)
        } else {
            sigma2
        };
        if !new_sigma2.is_finite() || !w.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericFailure { iteration: iter, reason: format!("sigma^2 became {new_sigma2}") });
        }
        let delta = (new_sigma2 - sigma2).abs();
        sigma2 = new_sigma2;
        trace.push(sigma2);
        if delta < config.sigma2_tolerance || sigma2 < SIGMA2_FLOOR {
            break;
        }
    }
    Ok((w, sigma2, iterations, trace))
}

/// Mean squared distance over all source/target pairs, divided by the dimension.
fn initial_sigma2(y: &[Point3], x: &[Point3]) -> f64 {
    let mut acc = 0.0;
    for a in y {
        for b in x {
            acc += (a - b).norm_squared();
        }
    }
    acc / (3.0 * y.len() as f64 * x.len() as f64)
}

/// Posterior `P(m | x_n)` written row-major (`m` major) into `p`. Returns
/// `P 1` and `P X`.
fn e_step(
    t: &[Point3],
    x: &[Point3],
    sigma2: f64,
    w: f64,
    p: &mut [f64],
) -> (Vec<f64>, DMatrix<f64>) {
    let m = t.len();
    let n = x.len();
    let two_pi_sigma2 = 2.0 * core::f64::consts::PI * sigma2;
    let c = if w > 0.0 { two_pi_sigma2.powf(1.5) * (w / (1.0 - w)) * (m as f64 / n as f64) } else { 0.0 };
    let k = -0.5 / sigma2;

    let mut col_sum = vec![0.0f64; n];
    for (mi, tm) in t.iter().enumerate() {
        let row = &mut p[mi * n..(mi + 1) * n];
        for ((pv, xn), cs) in row.iter_mut().zip(x).zip(col_sum.iter_mut()) {
            let e = ((xn - tm).norm_squared() * k).exp();
            *pv = e;
            *cs += e;
        }
    }
    let inv: Vec<f64> = col_sum.iter().map(|s| if s + c > 0.0 { 1.0 / (s + c) } else { 0.0 }).collect();

    let mut p1 = vec![0.0f64; m];
    let mut px = DMatrix::<f64>::zeros(m, 3);
    for mi in 0..m {
        let row = &mut p[mi * n..(mi + 1) * n];
        let mut acc = Vector3::zeros();
        let mut s = 0.0;
        for (ni, pv) in row.iter_mut().enumerate() {
            *pv *= inv[ni];
            s += *pv;
            acc += x[ni].coords * *pv;
        }
        p1[mi] = s;
        px[(mi, 0)] = acc.x;
        px[(mi, 1)] = acc.y;
        px[(mi, 2)] = acc.z;
    }
    (p1, px)
}

/// Solves `(diag(P1) G + reg I) W = PX - diag(P1) Y` through the symmetric
/// form `(D^1/2 G D^1/2 + reg I) Z = D^-1/2 (PX - D Y)`, `W = D^1/2 Z`.
fn solve_weights(g: &DMatrix<f64>, y: &[Point3], p1: &[f64], px: &DMatrix<f64>, reg: f64) -> Option<DMatrix<f64>> {
    let m = y.len();
    let sq: Vec<f64> = p1.iter().map(|v| v.max(0.0).sqrt()).collect();
    let mut rhs = DMatrix::<f64>::zeros(m, 3);
    for i in 0..m {
        if sq[i] > 0.0 {
            for j in 0..3 {
                rhs[(i, j)] = px[(i, j)] / sq[i] - sq[i] * y[i][j];
            }
        }
    }
    let a = DMatrix::from_fn(m, m, |i, j| sq[i] * g[(i, j)] * sq[j]);
    let mut jitter = reg;
    let scale = a.diagonal().amax().max(1.0);
    for _ in 0..8 {
        let mut sys = a.clone();
        for i in 0..m {
            sys[(i, i)] += jitter;
        }
        if let Some(ch) = sys.cholesky() {
            let z = ch.solve(&rhs);
            let mut w = z;
            for i in 0..m {
                for j in 0..3 {
                    w[(i, j)] *= sq[i];
                }
            }
            return Some(w);
        }
        jitter = (jitter * 100.0).max(scale * 1e-14);
    }
    None
}
