//! Measurement model: whitened residual stacking with closed-form Jacobians
//! against left-multiplicative pose perturbations.
//!
//! Four measurement channels can contribute rows:
//!
//! * **sparse**: reprojection of the tip / tail keypoints (2 rows each),
//! * **dense**: Sampson distance of segmented backbone pixels to the
//!   projected circle conic (1 row per pixel),
//! * **anchor**: 3D grasp-point position from robot kinematics (3 rows),
//! * **perp**: grasper-axis / needle-tangent perpendicularity (1 row),
//!
//! plus an optional log-space motion prior (6 rows). Every row is divided
//! by its calibrated standard deviation, so the stacked system is unit
//! variance and `nll = 0.5 * |r|^2` is the negative log-likelihood up to a
//! constant. Jacobians are with respect to `xi` in `T(xi) = exp(xi^) * T`,
//! twist ordering `[v; omega]`.

// Float-math methods for the standalone no_std build; builds whose
// dependency graph links std resolve these inherently and would flag
// the import as unused.
#[allow(unused_imports)]
use num_traits::Float;
use crate::camera::{self, CameraError, CameraIntrinsics};
use crate::geometry::{self, Pose, Twist};
use crate::needle::NeedleModel;
use crate::stats;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SMatrix, Vector2, Vector3, Vector6};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

/// Calibrated standard deviations are floored here to keep whitening finite
/// on noise-free (synthetic) data.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Default cap on backbone pixels entering the dense block.
pub const MAX_BACKBONE_POINTS: usize = 100;

/// Errors from residual assembly and calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ResidualError {
    /// A required model point sits at or behind the camera.
    #[error("model point at or behind the camera")]
    BehindCamera,
    /// Neither tip nor tail keypoint is available.
    #[error("no keypoints available for the sparse term")]
    NoKeypoints,
    /// The plane-to-image homography is singular for this pose.
    #[error("degenerate conic homography")]
    DegenerateHomography,
    /// The observation contributes no residual rows at all.
    #[error("observation contributes no residual rows")]
    EmptyObservation,
    /// Too few frames for noise calibration.
    #[error("insufficient data: needed {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    /// The motion-prior covariance is not positive definite.
    #[error("motion-prior covariance is not positive definite")]
    InvalidCovariance,
}

impl From<CameraError> for ResidualError {
    fn from(e: CameraError) -> Self {
        match e {
            CameraError::BehindCamera => ResidualError::BehindCamera,
            CameraError::DegenerateHomography | CameraError::DegenerateConic => {
                ResidualError::DegenerateHomography
            }
        }
    }
}

/// One frame of measurements. Any subset may be present; assembly uses what
/// it finds (subject to [`AssembleOptions`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Detected tip keypoint, pixels.
    pub tip_px: Option<Vector2<f64>>,
    /// Detected tail (swage) keypoint, pixels.
    pub tail_px: Option<Vector2<f64>>,
    /// Segmented backbone pixels.
    pub backbone_px: Vec<Vector2<f64>>,
    /// Grasp-point position from forward kinematics, camera frame, meters.
    pub grasp_pos: Option<Vector3<f64>>,
    /// Grasper jaw axis (unit), camera frame.
    pub grasper_axis: Option<Vector3<f64>>,
    /// Commanded/measured inter-frame motion as a left twist, `[v; omega]`.
    pub robot_twist: Option<Twist>,
    /// Frame timestamp, seconds.
    pub timestamp: f64,
}

impl Observation {
    pub fn empty(timestamp: f64) -> Self {
        Observation {
            tip_px: None,
            tail_px: None,
            backbone_px: Vec::new(),
            grasp_pos: None,
            grasper_axis: None,
            robot_twist: None,
            timestamp,
        }
    }
}

/// Per-channel noise scales used for whitening.
///
/// Defaults are the values calibrated on checkerboard-registered hardware
/// data; they are sensible for a ~1000 px focal length and a 45 mm working
/// distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCalibration {
    /// Keypoint noise, pixels: `[tip_u, tip_v, tail_u, tail_v]`.
    pub sigma_keypoint: [f64; 4],
    /// Sampson-distance noise of backbone pixels, pixels.
    pub sigma_conic: f64,
    /// Grasp-anchor noise per camera axis, meters.
    pub sigma_anchor: Vector3<f64>,
    /// Perpendicularity residual noise (dimensionless sine).
    pub sigma_perp: f64,
}

impl Default for NoiseCalibration {
    fn default() -> Self {
        NoiseCalibration {
            sigma_keypoint: [1.006, 1.012, 0.921, 0.680],
            sigma_conic: 1.235,
            sigma_anchor: Vector3::new(0.41e-3, 0.44e-3, 1.00e-3),
            sigma_perp: 0.138,
        }
    }
}

impl NoiseCalibration {
    /// Returns a copy with every scale floored at [`SIGMA_FLOOR`].
    pub fn floored(&self) -> NoiseCalibration {
        let mut out = *self;
        for s in out.sigma_keypoint.iter_mut() {
            *s = s.max(SIGMA_FLOOR);
        }
        out.sigma_conic = out.sigma_conic.max(SIGMA_FLOOR);
        for i in 0..3 {
            out.sigma_anchor[i] = out.sigma_anchor[i].max(SIGMA_FLOOR);
        }
        out.sigma_perp = out.sigma_perp.max(SIGMA_FLOOR);
        out
    }
}

/// Log-space motion prior: `r = log(T * predicted^{-1})` whitened by the
/// Cholesky factor of `covariance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionPrior {
    pub predicted: Pose,
    pub covariance: Matrix6<f64>,
    /// Trust region of the prior, as a cap on its whitened NLL share.
    /// Within the cap the prior is an ordinary quadratic; beyond it the
    /// contribution saturates at the cap with zero gradient, so a particle
    /// tracking a distant posterior mode keeps its data-driven shape
    /// instead of being dragged to the predicted pose. `INFINITY` restores
    /// the plain Gaussian prior.
    pub nll_cap: f64,
}

/// Which residual blocks to assemble. Defaults enable everything.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssembleOptions {
    pub use_sparse: bool,
    pub use_dense: bool,
    /// Keep only one keypoint (tip preferred, tail as fallback).
    pub single_keypoint: bool,
    pub use_anchor: bool,
    pub use_perp: bool,
    /// Dense-block cap; beyond this the backbone is subsampled
    /// deterministically.
    pub max_backbone_points: usize,
    pub motion_prior: Option<MotionPrior>,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions {
            use_sparse: true,
            use_dense: true,
            single_keypoint: false,
            use_anchor: true,
            use_perp: true,
            max_backbone_points: MAX_BACKBONE_POINTS,
            motion_prior: None,
        }
    }
}

/// Identifies a block of rows in a [`ResidualBundle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    Sparse,
    Dense,
    Anchor,
    Perp,
    Prior,
}

/// Per-block accounting (row count and NLL share).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermStat {
    pub kind: TermKind,
    pub rows: usize,
    pub nll: f64,
}

/// Whitened residual stack with its Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBundle {
    /// Whitened residuals.
    pub r: DVector<f64>,
    /// Whitened Jacobian, `d r / d xi` at `xi = 0` for `exp(xi^) * T`.
    pub jacobian: DMatrix<f64>,
    /// `0.5 * |r|^2` plus the constants of any saturated terms.
    pub nll: f64,
    /// Per-block breakdown, in stacking order.
    pub terms: Vec<TermStat>,
    /// Backbone pixels dropped for a numerically vanishing Sampson
    /// denominator.
    pub dropped_dense: usize,
}

impl ResidualBundle {
    /// Gradient of the log-posterior, `g = -J^T r`.
    pub fn gradient(&self) -> Vector6<f64> {
        let g = -(self.jacobian.transpose() * &self.r);
        Vector6::from_fn(|i, _| g[i])
    }

    /// Gauss-Newton curvature `H = J^T J`.
    pub fn gauss_newton_hessian(&self) -> Matrix6<f64> {
        let h = self.jacobian.transpose() * &self.jacobian;
        Matrix6::from_fn(|i, j| h[(i, j)])
    }
}

/// Everything immutable needed to assemble residuals for one frame.
#[derive(Debug, Clone, Copy)]
pub struct ResidualContext<'a> {
    pub intrinsics: &'a CameraIntrinsics,
    pub model: &'a NeedleModel,
    pub calibration: &'a NoiseCalibration,
    pub options: AssembleOptions,
}

impl<'a> ResidualContext<'a> {
    pub fn assemble(&self, pose: &Pose, obs: &Observation) -> Result<ResidualBundle, ResidualError> {
        assemble(pose, obs, self)
    }
}

/// Sampson distance of a pixel to a conic given the *raw* conic matrix:
/// the algebraic value `x^T C x` divided by the norm of its gradient with
/// respect to the pixel coordinates `(u, v)` -- the first two components of
/// `(C + C^T) x`, with `x = (u, v, 1)`.
///
/// Normalizing by the image-coordinate gradient is what makes the ratio a
/// first-order approximation of Euclidean pixel distance to the conic
/// (including the homogeneous third component would shrink it by the
/// conic's pixel scale). Positively scale-invariant in `C`. Returns `None`
/// when the gradient norm vanishes relative to the conic scale (pixel at
/// the conic's center).
pub fn sampson_distance(c_raw: &Matrix3<f64>, px: &Vector2<f64>) -> Option<f64> {
    let x = Vector3::new(px.x, px.y, 1.0);
    let algebraic = (x.transpose() * c_raw * x)[0];
    let grad = (c_raw + c_raw.transpose()) * x;
    let denom = (grad.x * grad.x + grad.y * grad.y).sqrt();
    if denom <= 1e-12 * c_raw.norm() * x.norm() {
        return None;
    }
    Some(algebraic / denom)
}

struct SparseRow {
    r: Vector2<f64>,
    jac: SMatrix<f64, 2, 6>,
}

/// Reprojection residual of one body-frame point against a detection.
fn keypoint_rows(
    pose: &Pose,
    intr: &CameraIntrinsics,
    body_point: &Vector3<f64>,
    detection: &Vector2<f64>,
) -> Result<SparseRow, ResidualError> {
    let p_cam = pose.transform_point(body_point);
    let px = camera::project(intr, &p_cam)?;
    let j_proj = camera::projection_jacobian(intr, &p_cam)?;
    // d(exp(xi^) p)/d xi = [I | -skew(p)] for the left perturbation.
    let mut j_point = SMatrix::<f64, 3, 6>::zeros();
    j_point.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    j_point
        .fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-geometry::skew(&p_cam)));
    Ok(SparseRow {
        r: px - detection,
        jac: j_proj * j_point,
    })
}

/// Sparse keypoint block: residual stack and Jacobian (unwhitened), tip
/// first. Errors with [`ResidualError::NoKeypoints`] when the observation
/// has neither endpoint.
pub fn sparse_residual(
    pose: &Pose,
    intr: &CameraIntrinsics,
    model: &NeedleModel,
    obs: &Observation,
) -> Result<(DVector<f64>, DMatrix<f64>), ResidualError> {
    let mut rows: Vec<SparseRow> = Vec::new();
    if let Some(tip) = &obs.tip_px {
        rows.push(keypoint_rows(pose, intr, &model.tip_point(), tip)?);
    }
    if let Some(tail) = &obs.tail_px {
        rows.push(keypoint_rows(pose, intr, &model.tail_point(), tail)?);
    }
    if rows.is_empty() {
        return Err(ResidualError::NoKeypoints);
    }
    let n = rows.len() * 2;
    let mut r = DVector::zeros(n);
    let mut j = DMatrix::zeros(n, 6);
    for (k, row) in rows.iter().enumerate() {
        for i in 0..2 {
            r[2 * k + i] = row.r[i];
            for c in 0..6 {
                j[(2 * k + i, c)] = row.jac[(i, c)];
            }
        }
    }
    Ok((r, j))
}

/// Grasp-anchor residual `r = T X_grasp - p_grasp` with Jacobian
/// `[I | -skew(T X_grasp)]`.
pub fn grasp_position_residual(
    pose: &Pose,
    model: &NeedleModel,
    grasp_pos: &Vector3<f64>,
) -> (Vector3<f64>, SMatrix<f64, 3, 6>) {
    let p_g = pose.transform_point(&model.grasp_point());
    let mut jac = SMatrix::<f64, 3, 6>::zeros();
    jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    jac.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-geometry::skew(&p_g)));
    (p_g - grasp_pos, jac)
}

/// Perpendicularity residual `r = z^T t_hat` between the grasper axis and
/// the needle tangent at the grasp point, with its left-perturbation
/// Jacobian (rotation block only).
pub fn grasp_perp_residual(
    pose: &Pose,
    model: &NeedleModel,
    grasper_axis: &Vector3<f64>,
) -> (f64, SMatrix<f64, 1, 6>) {
    let z = grasper_axis;
    let t = pose.transform_direction(&model.grasp_tangent());
    let norm = t.norm();
    let t_hat = t / norm;
    let r = z.dot(&t_hat);
    // d t_hat = (1/|t|) (I - t_hat t_hat^T) d t and d t = -skew(t) d omega.
    let projector = (Matrix3::identity() - t_hat * t_hat.transpose()) / norm;
    let d_rot = -(z.transpose() * projector * geometry::skew(&t));
    let mut jac = SMatrix::<f64, 1, 6>::zeros();
    for c in 0..3 {
        jac[(0, 3 + c)] = d_rot[c];
    }
    (r, jac)
}

/// Dense-block result (unwhitened Sampson rows).
pub struct DenseBlock {
    pub r: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    /// Points dropped for a vanishing Sampson denominator.
    pub dropped: usize,
}

/// Sampson residual and Jacobian for each backbone pixel against the
/// projected circle conic of the pose.
pub fn dense_residual(
    pose: &Pose,
    intr: &CameraIntrinsics,
    model: &NeedleModel,
    backbone_px: &[Vector2<f64>],
) -> Result<DenseBlock, ResidualError> {
    let derivs = camera::conic_with_jacobian(intr, pose, model.radius)?;
    let c = derivs.conic;
    let c_sym = c + c.transpose();
    let c_scale = c.norm();

    let mut r = Vec::with_capacity(backbone_px.len());
    let mut jac_rows: Vec<[f64; 6]> = Vec::with_capacity(backbone_px.len());
    let mut dropped = 0usize;
    for px in backbone_px {
        let x = Vector3::new(px.x, px.y, 1.0);
        let algebraic = (x.transpose() * c * x)[0];
        let grad_full = c_sym * x;
        let grad = Vector2::new(grad_full.x, grad_full.y);
        let denom = grad.norm();
        if denom <= 1e-12 * c_scale * x.norm() {
            dropped += 1;
            continue;
        }
        r.push(algebraic / denom);
        let denom3 = denom * denom * denom;
        let mut row = [0.0; 6];
        for (j, dc) in derivs.gradients.iter().enumerate() {
            let d_algebraic = (x.transpose() * dc * x)[0];
            let d_grad_full = (dc + dc.transpose()) * x;
            let d_grad = Vector2::new(d_grad_full.x, d_grad_full.y);
            row[j] = d_algebraic / denom - algebraic * grad.dot(&d_grad) / denom3;
        }
        jac_rows.push(row);
    }
    if dropped > 0 {
        log::warn!("dense block: dropped {dropped} backbone points with vanishing Sampson gradient");
    }
    let n = r.len();
    let mut rv = DVector::zeros(n);
    let mut jm = DMatrix::zeros(n, 6);
    for i in 0..n {
        rv[i] = r[i];
        for j in 0..6 {
            jm[(i, j)] = jac_rows[i][j];
        }
    }
    Ok(DenseBlock {
        r: rv,
        jacobian: jm,
        dropped,
    })
}

/// Log-space motion-prior residual `r = log(T * predicted^{-1})` with
/// Jacobian `J_l^{-1}(r)`.
pub fn motion_prior_residual(pose: &Pose, prior: &MotionPrior) -> (Vector6<f64>, Matrix6<f64>) {
    let err = geometry::log_se3_saturating(&pose.compose(&prior.predicted.inverse()));
    let jac = geometry::se3_left_jacobian_inverse(&err);
    (err.0, jac)
}

/// Deterministic subsample of `n` indices out of `len` (stable across
/// particles, iterations, and runs for a given `len`).
fn backbone_subsample(len: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha12Rng::seed_from_u64(0x6ac0_11ec ^ len as u64);
    let mut idx: Vec<usize> = sample_indices(&mut rng, len, n).into_iter().collect();
    idx.sort_unstable();
    idx
}

struct Stacker {
    rows: Vec<(f64, [f64; 6])>,
    terms: Vec<TermStat>,
    constant: f64,
}

impl Stacker {
    fn new() -> Self {
        Stacker {
            rows: Vec::new(),
            terms: Vec::new(),
            constant: 0.0,
        }
    }

    fn push_block(&mut self, kind: TermKind, block: impl Iterator<Item = (f64, [f64; 6])>) {
        let start = self.rows.len();
        self.rows.extend(block);
        let added = &self.rows[start..];
        let nll = 0.5 * added.iter().map(|(r, _)| r * r).sum::<f64>();
        self.terms.push(TermStat {
            kind,
            rows: added.len(),
            nll,
        });
    }

    /// Saturated term: contributes to the NLL but no rows (zero gradient).
    fn push_constant(&mut self, kind: TermKind, nll: f64) {
        self.constant += nll;
        self.terms.push(TermStat { kind, rows: 0, nll });
    }

    fn finish(self, dropped_dense: usize) -> Result<ResidualBundle, ResidualError> {
        if self.terms.is_empty() {
            return Err(ResidualError::EmptyObservation);
        }
        let n = self.rows.len();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 6);
        for (i, (ri, ji)) in self.rows.iter().enumerate() {
            r[i] = *ri;
            for c in 0..6 {
                j[(i, c)] = ji[c];
            }
        }
        let nll = 0.5 * r.norm_squared() + self.constant;
        Ok(ResidualBundle {
            r,
            jacobian: j,
            nll,
            terms: self.terms,
            dropped_dense,
        })
    }
}

fn row6(m: &DMatrix<f64>, i: usize) -> [f64; 6] {
    let mut out = [0.0; 6];
    for c in 0..6 {
        out[c] = m[(i, c)];
    }
    out
}

/// Assembles the whitened residual stack for one pose against one frame.
///
/// Blocks are stacked in the order sparse, dense, anchor, perp, prior;
/// missing measurements and disabled options simply contribute no rows.
/// Fails with [`ResidualError::EmptyObservation`] when nothing contributes.
pub fn assemble(
    pose: &Pose,
    obs: &Observation,
    ctx: &ResidualContext,
) -> Result<ResidualBundle, ResidualError> {
    let calib = ctx.calibration.floored();
    let opts = &ctx.options;
    let mut stack = Stacker::new();
    let mut dropped_dense = 0usize;

    let wants_sparse =
        opts.use_sparse && (obs.tip_px.is_some() || obs.tail_px.is_some());
    let wants_dense = opts.use_dense && !obs.backbone_px.is_empty();
    // Any image-based term only makes sense for a part in front of the
    // camera; the conic itself cannot tell the difference.
    if (wants_sparse || wants_dense) && pose.translation().z <= camera::MIN_DEPTH {
        return Err(ResidualError::BehindCamera);
    }

    if wants_sparse {
        let mut sparse_obs = obs.clone();
        if opts.single_keypoint {
            if sparse_obs.tip_px.is_some() {
                sparse_obs.tail_px = None;
            } else {
                sparse_obs.tip_px = None;
            }
        }
        let sigmas: Vec<f64> = match (&sparse_obs.tip_px, &sparse_obs.tail_px) {
            (Some(_), Some(_)) => calib.sigma_keypoint.to_vec(),
            (Some(_), None) => calib.sigma_keypoint[..2].to_vec(),
            (None, Some(_)) => calib.sigma_keypoint[2..].to_vec(),
            (None, None) => Vec::new(),
        };
        if !sigmas.is_empty() {
            let (r, j) = sparse_residual(pose, ctx.intrinsics, ctx.model, &sparse_obs)?;
            stack.push_block(
                TermKind::Sparse,
                (0..r.len()).map(|i| {
                    let s = sigmas[i];
                    let mut row = row6(&j, i);
                    for e in row.iter_mut() {
                        *e /= s;
                    }
                    (r[i] / s, row)
                }),
            );
        }
    }

    if wants_dense {
        let cap = opts.max_backbone_points.max(1);
        let selected: Vec<Vector2<f64>> = if obs.backbone_px.len() > cap {
            backbone_subsample(obs.backbone_px.len(), cap)
                .into_iter()
                .map(|i| obs.backbone_px[i])
                .collect()
        } else {
            obs.backbone_px.clone()
        };
        let block = dense_residual(pose, ctx.intrinsics, ctx.model, &selected)?;
        dropped_dense = block.dropped;
        let s = calib.sigma_conic;
        stack.push_block(
            TermKind::Dense,
            (0..block.r.len()).map(|i| {
                let mut row = row6(&block.jacobian, i);
                for e in row.iter_mut() {
                    *e /= s;
                }
                (block.r[i] / s, row)
            }),
        );
    }

    if opts.use_anchor {
        if let Some(gp) = &obs.grasp_pos {
            let (r, j) = grasp_position_residual(pose, ctx.model, gp);
            stack.push_block(
                TermKind::Anchor,
                (0..3).map(|i| {
                    let s = calib.sigma_anchor[i];
                    let mut row = [0.0; 6];
                    for c in 0..6 {
                        row[c] = j[(i, c)] / s;
                    }
                    (r[i] / s, row)
                }),
            );
        }
    }

    if opts.use_perp {
        if let Some(axis) = &obs.grasper_axis {
            let (r, j) = grasp_perp_residual(pose, ctx.model, axis);
            let s = calib.sigma_perp;
            let mut row = [0.0; 6];
            for c in 0..6 {
                row[c] = j[(0, c)] / s;
            }
            stack.push_block(TermKind::Perp, core::iter::once((r / s, row)));
        }
    }

    if let Some(prior) = &opts.motion_prior {
        let (r, j) = motion_prior_residual(pose, prior);
        let chol = nalgebra::Cholesky::new(prior.covariance)
            .ok_or(ResidualError::InvalidCovariance)?;
        let l = chol.l();
        let wr = l
            .solve_lower_triangular(&r)
            .ok_or(ResidualError::InvalidCovariance)?;
        let wj = l
            .solve_lower_triangular(&j)
            .ok_or(ResidualError::InvalidCovariance)?;
        if 0.5 * wr.norm_squared() <= prior.nll_cap {
            stack.push_block(
                TermKind::Prior,
                (0..6).map(|i| {
                    let mut row = [0.0; 6];
                    for c in 0..6 {
                        row[c] = wj[(i, c)];
                    }
                    (wr[i], row)
                }),
            );
        } else {
            stack.push_constant(TermKind::Prior, prior.nll_cap);
        }
    }

    stack.finish(dropped_dense)
}

/// Estimates per-channel noise scales from ground-truthed frames by pooling
/// residuals evaluated at the true poses. Needs at least 30 frames; every
/// scale is floored at [`SIGMA_FLOOR`]. Channels with fewer than two samples
/// keep their default scale (with a warning).
pub fn calibrate_noise(
    dataset: &[(Observation, Pose)],
    intr: &CameraIntrinsics,
    model: &NeedleModel,
) -> Result<NoiseCalibration, ResidualError> {
    const MIN_FRAMES: usize = 30;
    if dataset.len() < MIN_FRAMES {
        return Err(ResidualError::InsufficientData {
            needed: MIN_FRAMES,
            got: dataset.len(),
        });
    }

    let mut tip_u = Vec::new();
    let mut tip_v = Vec::new();
    let mut tail_u = Vec::new();
    let mut tail_v = Vec::new();
    let mut conic = Vec::new();
    let mut anchor = [Vec::new(), Vec::new(), Vec::new()];
    let mut perp = Vec::new();

    for (obs, gt) in dataset {
        if let Some(tip) = &obs.tip_px {
            let p = gt.transform_point(&model.tip_point());
            if let Ok(px) = camera::project(intr, &p) {
                tip_u.push(px.x - tip.x);
                tip_v.push(px.y - tip.y);
            } else {
                log::warn!("calibration: tip behind camera at t={}", obs.timestamp);
            }
        }
        if let Some(tail) = &obs.tail_px {
            let p = gt.transform_point(&model.tail_point());
            if let Ok(px) = camera::project(intr, &p) {
                tail_u.push(px.x - tail.x);
                tail_v.push(px.y - tail.y);
            } else {
                log::warn!("calibration: tail behind camera at t={}", obs.timestamp);
            }
        }
        if !obs.backbone_px.is_empty() {
            match camera::conic_raw(intr, gt, model.radius) {
                Ok(c) => {
                    for px in &obs.backbone_px {
                        if let Some(d) = sampson_distance(&c, px) {
                            conic.push(d);
                        }
                    }
                }
                Err(_) => log::warn!(
                    "calibration: degenerate conic at t={}, skipping frame's dense samples",
                    obs.timestamp
                ),
            }
        }
        if let Some(gp) = &obs.grasp_pos {
            let (r, _) = grasp_position_residual(gt, model, gp);
            for i in 0..3 {
                anchor[i].push(r[i]);
            }
        }
        if let Some(axis) = &obs.grasper_axis {
            let (r, _) = grasp_perp_residual(gt, model, axis);
            perp.push(r);
        }
    }

    let defaults = NoiseCalibration::default();
    let scale = |samples: &[f64], fallback: f64, name: &str| -> f64 {
        if samples.len() < 2 {
            log::warn!("calibration: no samples for {name}, keeping default");
            fallback
        } else {
            stats::sample_std(samples).max(SIGMA_FLOOR)
        }
    };

    Ok(NoiseCalibration {
        sigma_keypoint: [
            scale(&tip_u, defaults.sigma_keypoint[0], "tip u"),
            scale(&tip_v, defaults.sigma_keypoint[1], "tip v"),
            scale(&tail_u, defaults.sigma_keypoint[2], "tail u"),
            scale(&tail_v, defaults.sigma_keypoint[3], "tail v"),
        ],
        sigma_conic: scale(&conic, defaults.sigma_conic, "conic"),
        sigma_anchor: Vector3::new(
            scale(&anchor[0], defaults.sigma_anchor[0], "anchor x"),
            scale(&anchor[1], defaults.sigma_anchor[1], "anchor y"),
            scale(&anchor[2], defaults.sigma_anchor[2], "anchor z"),
        ),
        sigma_perp: scale(&perp, defaults.sigma_perp, "perp"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exp_se3;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 1000.0,
            fy: 1000.0,
            cx: 540.0,
            cy: 540.0,
            width: 1080,
            height: 1080,
        }
    }

    fn test_pose() -> Pose {
        exp_se3(&Twist(Vector6::new(0.004, -0.003, 0.045, 0.35, 0.2, -0.4)))
    }

    /// Noise-free observation consistent with the pose.
    fn exact_observation(pose: &Pose, intr: &CameraIntrinsics, model: &NeedleModel) -> Observation {
        let project = |theta: f64| {
            camera::project(intr, &pose.transform_point(&model.point_at(theta).unwrap())).unwrap()
        };
        let backbone: Vec<Vector2<f64>> = (0..60)
            .map(|i| {
                let s = i as f64 / 59.0;
                project(model.theta_tail + s * model.arc_span)
            })
            .collect();
        Observation {
            tip_px: Some(project(model.theta_tip)),
            tail_px: Some(project(model.theta_tail)),
            backbone_px: backbone,
            grasp_pos: Some(pose.transform_point(&model.grasp_point())),
            grasper_axis: Some({
                let t = pose.transform_direction(&model.grasp_tangent());
                // Any unit vector perpendicular to the tangent works; pick the
                // one in the plane spanned by t and z.
                let z = Vector3::z();
                let u = (z - t * z.dot(&t)).normalize();
                u
            }),
            robot_twist: None,
            timestamp: 0.0,
        }
    }

    #[test]
    fn residuals_vanish_at_the_true_pose() {
        let intr = test_intrinsics();
        let model = NeedleModel::default();
        let pose = test_pose();
        let obs = exact_observation(&pose, &intr, &model);
        let calib = NoiseCalibration::default();
        let ctx = ResidualContext {
            intrinsics: &intr,
            model: &model,
            calibration: &calib,
            options: AssembleOptions::default(),
        };
        let bundle = ctx.assemble(&pose, &obs).unwrap();
        assert!(bundle.nll < 1e-12, "nll at truth: {}", bundle.nll);
        assert_eq!(bundle.terms.len(), 4);
        assert_eq!(bundle.r.len(), 4 + 60 + 3 + 1);
        assert_eq!(bundle.dropped_dense, 0);
    }

    #[test]
    fn whitening_divides_by_sigma() {
        let intr = test_intrinsics();
        let model = NeedleModel::default();
        let pose = test_pose();
        let mut obs = Observation::empty(0.0);
        // Anchor 1 mm off along +x only.
        obs.grasp_pos = Some(pose.transform_point(&model.grasp_point()) - Vector3::new(1e-3, 0.0, 0.0));
        let mut calib = NoiseCalibration::default();
        calib.sigma_anchor = Vector3::new(2e-3, 1e-3, 1e-3);
        let ctx = ResidualContext {
            intrinsics: &intr,
            model: &model,
            calibration: &calib,
            options: AssembleOptions::default(),
        };
        let bundle = ctx.assemble(&pose, &obs).unwrap();
        assert_eq!(bundle.r.len(), 3);
        assert_abs_diff_eq!(bundle.r[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(bundle.r[1], 0.0, epsilon = 1e-12);
        // Doubling sigma halves the whitened residual.
        calib.sigma_anchor.x = 4e-3;
        let ctx2 = ResidualContext {
            intrinsics: &intr,
            model: &model,
            calibration: &calib,
            options: AssembleOptions::default(),
        };
        let bundle2 = ctx2.assemble(&pose, &obs).unwrap();
        assert_abs_diff_eq!(bundle2.r[0], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn perp_residual_is_sine_of_tilt() {
        let model = NeedleModel::default();
        let pose = test_pose();
        let t = pose.transform_direction(&model.grasp_tangent());
        let z_perp = (Vector3::z() - t * Vector3::z().dot(&t)).normalize();
        let (r0, _) = grasp_perp_residual(&pose, &model, &z_perp);
        assert_abs_diff_eq!(r0, 0.0, epsilon = 1e-12);
        // Tilt the axis toward the tangent by alpha: residual becomes sin(alpha).
        let alpha = 0.137f64;
        let axis = z_perp * alpha.cos() + t * alpha.sin();
        let (r, _) = grasp_perp_residual(&pose, &model, &axis);
        assert_abs_diff_eq!(r, alpha.sin(), epsilon = 1e-12);
    }

    #[test]
    fn anchor_jacobian_structure() {
        let model = NeedleModel::default();
        let pose = test_pose();
        let gp = pose.transform_point(&model.grasp_point());
        let (r, j) = grasp_position_residual(&pose, &model, &gp);
        assert_abs_diff_eq!(r.norm(), 0.0, epsilon = 1e-15);
        // Translation block is the identity; rotation block is -skew(p_g).
        for i in 0..3 {
            for c in 0..3 {
                let expected = if i == c { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(j[(i, c)], expected, epsilon = 1e-15);
            }
        }
        let sk = geometry::skew(&gp);
        for i in 0..3 {
            for c in 0..3 {
                assert_abs_diff_eq!(j[(i, 3 + c)], -sk[(i, c)], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn single_keypoint_prefers_tip() {
        let intr = test_intrinsics();
        let model = NeedleModel::default();
        let pose = test_pose();
        let obs = exact_observation(&pose, &intr, &model);
        let calib = NoiseCalibration::default();
        let mut options = AssembleOptions::default();
        options.single_keypoint = true;
        options.use_dense = false;
        options.use_anchor = false;
        options.use_perp = false;
        let ctx = ResidualContext {
            intrinsics: &intr,
            model: &model,
            calibration: &calib,
            options,
        };
        let bundle = ctx.assemble(&pose, &obs).unwrap();
        assert_eq!(bundle.r.len(), 2);
        // Without a tip, the tail is used.
        let mut no_tip = obs.clone();
        no_tip.tip_px = None;
        let bundle2 = ctx.assemble(&pose, &no_tip).unwrap();
        assert_eq!(bundle2.r.len(), 2);
    }

    #[test]
    fn empty_observation_is_an_error() {
        let intr = test_intrinsics();
        let model = NeedleModel::default();
        let calib = NoiseCalibration::default();
        let ctx = ResidualContext {
            intrinsics: &intr,
            model: &model,
            calibration: &calib,
            options: AssembleOptions::default(),
        };
        assert_eq!(
            ctx.assemble(&test_pose(), &Observation::empty(0.0)),
            Err(ResidualError::EmptyObservation)
        );
        // Fully occluded frame with kinematics still assembles.
        let mut obs = Observation::empty(0.0);
        obs.grasp_pos = Some(test_pose().transform_point(&NeedleModel::default().grasp_point()));
        let bundle = ctx.assemble(&test_pose(), &obs).unwrap();
        assert_eq!(bundle.r.len(), 3);
        assert_eq!(bundle.terms.len(), 1);
    }

    #[test]
    fn behind_camera_pose_is_rejected_for_image_terms() {
        let intr = test_intrinsics();
        let model = NeedleModel::default();
        let pose = test_pose();
        let obs = exact_observation(&pose, &intr, &model);
        let calib = NoiseCalibration::default();
        let ctx = ResidualContext {
            intrinsics: &intr,
            model: &model,
            calibration: &calib,
            options: AssembleOptions::default(),
        };
        let behind = Pose::new(*pose.rotation(), Vector3::new(0.0, 0.0, -0.05));
        assert_eq!(ctx.assemble(&behind, &obs), Err(ResidualError::BehindCamera));
    }

    #[test]
    fn motion_prior_centers_on_prediction() {
        let intr = test_intrinsics();
        let model = NeedleModel::default();
        let pose = test_pose();
        let mut options = AssembleOptions::default();
        options.motion_prior = Some(MotionPrior {
            predicted: pose,
            covariance: Matrix6::identity() * 1e-6,
            nll_cap: f64::INFINITY,
        });
        let calib = NoiseCalibration::default();
        let ctx = ResidualContext {
            intrinsics: &intr,
            model: &model,
            calibration: &calib,
            options,
        };
        let obs = Observation::empty(0.0);
        let bundle = ctx.assemble(&pose, &obs).unwrap();
        assert_eq!(bundle.r.len(), 6);
        assert!(bundle.nll < 1e-18);
        // A pose offset from the prediction is penalized quadratically.
        let off = exp_se3(&Twist::from_parts(Vector3::new(1e-3, 0.0, 0.0), Vector3::zeros()))
            .compose(&pose);
        let bundle2 = ctx.assemble(&off, &obs).unwrap();
        assert_abs_diff_eq!(bundle2.nll, 0.5 * (1e-3 * 1e-3) / 1e-6, epsilon = 1e-6);
    }

    #[test]
    fn dense_subsampling_is_deterministic_and_capped() {
        let intr = test_intrinsics();
        let model = NeedleModel::default();
        let pose = test_pose();
        let mut obs = exact_observation(&pose, &intr, &model);
        // Inflate the backbone beyond the cap by repetition with jitter.
        let mut rng = <rand_chacha::ChaCha12Rng as rand::SeedableRng>::seed_from_u64(9);
        let base = obs.backbone_px.clone();
        while obs.backbone_px.len() < 350 {
            let p = base[rng.random_range(0..base.len())];
            obs.backbone_px
                .push(p + Vector2::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)));
        }
        let calib = NoiseCalibration::default();
        let mut options = AssembleOptions::default();
        options.use_sparse = false;
        options.use_anchor = false;
        options.use_perp = false;
        let ctx = ResidualContext {
            intrinsics: &intr,
            model: &model,
            calibration: &calib,
            options,
        };
        let a = ctx.assemble(&pose, &obs).unwrap();
        let b = ctx.assemble(&pose, &obs).unwrap();
        assert_eq!(a.r.len(), MAX_BACKBONE_POINTS);
        assert_eq!(a.r, b.r);
    }

    #[test]
    fn calibration_requires_thirty_frames() {
        let intr = test_intrinsics();
        let model = NeedleModel::default();
        let frames: Vec<(Observation, Pose)> = (0..29)
            .map(|i| (Observation::empty(i as f64), test_pose()))
            .collect();
        assert_eq!(
            calibrate_noise(&frames, &intr, &model),
            Err(ResidualError::InsufficientData {
                needed: 30,
                got: 29
            })
        );
    }

    #[test]
    fn calibration_recovers_known_noise() {
        let intr = test_intrinsics();
        let model = NeedleModel::default();
        let pose = test_pose();
        let mut rng = <rand_chacha::ChaCha12Rng as rand::SeedableRng>::seed_from_u64(42);
        let sigma_px = 0.8;
        let sigma_anchor = 0.5e-3;
        let mut frames = Vec::new();
        for i in 0..200 {
            let mut obs = exact_observation(&pose, &intr, &model);
            let mut n = || -> f64 { rng.sample(rand_distr::StandardNormal) };
            if let Some(tip) = obs.tip_px.as_mut() {
                tip.x += sigma_px * n();
                tip.y += sigma_px * n();
            }
            if let Some(tail) = obs.tail_px.as_mut() {
                tail.x += sigma_px * n();
                tail.y += sigma_px * n();
            }
            obs.backbone_px.clear(); // conic channel tested via acceptance
            if let Some(gp) = obs.grasp_pos.as_mut() {
                *gp += Vector3::new(sigma_anchor * n(), sigma_anchor * n(), sigma_anchor * n());
            }
            obs.timestamp = i as f64;
            frames.push((obs, pose));
        }
        let calib = calibrate_noise(&frames, &intr, &model).unwrap();
        for s in calib.sigma_keypoint {
            assert!((s - sigma_px).abs() < 0.15, "keypoint sigma {s}");
        }
        for i in 0..3 {
            assert!((calib.sigma_anchor[i] - sigma_anchor).abs() < 1e-4);
        }
        // No backbone samples: conic keeps its default.
        assert_abs_diff_eq!(calib.sigma_conic, NoiseCalibration::default().sigma_conic, epsilon = 1e-12);
    }

    #[test]
    fn noise_free_calibration_floors_at_minimum() {
        let intr = test_intrinsics();
        let model = NeedleModel::default();
        let pose = test_pose();
        let frames: Vec<(Observation, Pose)> = (0..40)
            .map(|i| {
                let mut obs = exact_observation(&pose, &intr, &model);
                obs.timestamp = i as f64;
                (obs, pose)
            })
            .collect();
        let calib = calibrate_noise(&frames, &intr, &model).unwrap();
        for s in calib.sigma_keypoint {
            assert_eq!(s, SIGMA_FLOOR);
        }
        assert_eq!(calib.sigma_conic, SIGMA_FLOOR);
        assert_eq!(calib.sigma_perp, SIGMA_FLOOR);
        for i in 0..3 {
            assert_eq!(calib.sigma_anchor[i], SIGMA_FLOOR);
        }
    }

    #[test]
    fn sampson_distance_is_scale_invariant_and_metric_like() {
        let intr = test_intrinsics();
        let model = NeedleModel::default();
        let pose = Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 0.05));
        let c = camera::conic_raw(&intr, &pose, model.radius).unwrap();
        // A point 2 px outside a 90 px circle is ~2 px away.
        let radius_px = intr.fx * model.radius / 0.05;
        let px = Vector2::new(intr.cx + radius_px + 2.0, intr.cy);
        let d = sampson_distance(&c, &px).unwrap();
        assert!((d.abs() - 2.0).abs() < 0.1, "sampson {d}");
        let d_scaled = sampson_distance(&(c * 7.3), &px).unwrap();
        assert_abs_diff_eq!(d, d_scaled, epsilon = 1e-9);
        // The circle center has a vanishing gradient.
        assert!(sampson_distance(&c, &Vector2::new(intr.cx, intr.cy)).is_none());
    }
}
