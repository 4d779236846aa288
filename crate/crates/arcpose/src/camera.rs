//! Pinhole camera model, conic projection, and the closed-form derivatives
//! of the projected conic with respect to left-multiplicative pose
//! perturbations.
//!
//! A circle of radius `r` in the object's `z = 0` plane projects to the
//! conic `C = H^{-T} diag(1, 1, -r^2) H^{-1}`, where `H = K [I|0] T M` is
//! the world-plane-to-image homography and `M` embeds plane coordinates
//! `(x, y, 1)` into homogeneous object space `(x, y, 0, 1)`. All pixel
//! quantities use the convention `u = fx * x/z + cx`, `v = fy * y/z + cy`.

// Float-math methods for the standalone no_std build; builds whose
// dependency graph links std resolve these inherently and would flag
// the import as unused.
#[allow(unused_imports)]
use num_traits::Float;
use crate::geometry::{commutation_3x3, generators, kron3, unvec3x3, vec3x3, Pose};
use nalgebra::{Matrix3, SMatrix, Vector2, Vector3};
use thiserror::Error;

/// Points closer to (or behind) the principal plane than this are rejected.
pub const MIN_DEPTH: f64 = 1e-9;

/// Errors from camera-geometry operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CameraError {
    /// The point's camera-frame depth is `<= 1e-9` m.
    #[error("point at or behind the camera (z <= 1e-9 m)")]
    BehindCamera,
    /// The plane-to-image homography is singular (object plane passes
    /// through the optical center).
    #[error("degenerate plane-to-image homography")]
    DegenerateHomography,
    /// A conic matrix with (near-)zero Frobenius norm cannot be normalized.
    #[error("conic matrix is numerically zero")]
    DegenerateConic,
}

/// Pinhole intrinsics. Focal lengths and principal point in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    pub fn is_valid(&self) -> bool {
        self.fx > 0.0 && self.fy > 0.0 && self.width > 0 && self.height > 0
    }
}

/// A projected conic: symmetric 3x3 matrix acting on homogeneous pixels
/// `(u, v, 1)`.
///
/// Stored normalized to unit Frobenius norm with the sign fixed so that
/// points inside the conic evaluate negative (when a bounded interior
/// exists). The zero set is unchanged by either convention; fixing both
/// makes conics comparable across poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic {
    matrix: Matrix3<f64>,
}

impl Conic {
    /// Symmetrizes, normalizes, and sign-fixes a raw conic matrix.
    pub fn from_matrix(raw: &Matrix3<f64>) -> Result<Conic, CameraError> {
        let sym = (raw + raw.transpose()) * 0.5;
        let norm = sym.norm();
        if norm < 1e-300 {
            return Err(CameraError::DegenerateConic);
        }
        let mut m = sym / norm;
        // Interior-negative sign: evaluate at the ellipse center when the
        // 2x2 block is invertible (always true for our use: a circle seen in
        // front of the camera projects to an ellipse).
        let block = m.fixed_view::<2, 2>(0, 0).into_owned();
        let det = block[(0, 0)] * block[(1, 1)] - block[(0, 1)] * block[(1, 0)];
        if det.abs() > 1e-300 {
            let b = Vector2::new(m[(0, 2)], m[(1, 2)]);
            let center = -(block.try_inverse().expect("checked determinant") * b);
            let val = Conic { matrix: m }.evaluate(&center);
            if val > 0.0 {
                m = -m;
            }
        }
        Ok(Conic { matrix: m })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    /// Evaluates the quadratic form at a pixel: `(u, v, 1) C (u, v, 1)^T`.
    pub fn evaluate(&self, px: &Vector2<f64>) -> f64 {
        let x = Vector3::new(px.x, px.y, 1.0);
        (x.transpose() * self.matrix * x)[0]
    }

    /// Ellipse center, when the conic is a (possibly degenerate) central
    /// conic.
    pub fn center(&self) -> Option<Vector2<f64>> {
        let block = self.matrix.fixed_view::<2, 2>(0, 0).into_owned();
        let b = Vector2::new(self.matrix[(0, 2)], self.matrix[(1, 2)]);
        block.try_inverse().map(|inv| -(inv * b))
    }

    /// Semi-axis lengths `(major, minor)` in pixels, if the conic is a real
    /// ellipse.
    pub fn semi_axes(&self) -> Option<(f64, f64)> {
        let center = self.center()?;
        let k = self.evaluate(&center);
        let block = self.matrix.fixed_view::<2, 2>(0, 0).into_owned();
        let sym = nalgebra::SymmetricEigen::new(block);
        let l0 = sym.eigenvalues[0];
        let l1 = sym.eigenvalues[1];
        let a2 = -k / l0;
        let b2 = -k / l1;
        if a2 > 0.0 && b2 > 0.0 {
            let a = a2.sqrt();
            let b = b2.sqrt();
            Some((a.max(b), a.min(b)))
        } else {
            None
        }
    }
}

/// Projects a camera-frame point to pixels.
pub fn project(intr: &CameraIntrinsics, p: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
    if p.z <= MIN_DEPTH {
        return Err(CameraError::BehindCamera);
    }
    Ok(Vector2::new(
        intr.fx * p.x / p.z + intr.cx,
        intr.fy * p.y / p.z + intr.cy,
    ))
}

/// Jacobian of [`project`] with respect to the camera-frame point.
pub fn projection_jacobian(
    intr: &CameraIntrinsics,
    p: &Vector3<f64>,
) -> Result<SMatrix<f64, 2, 3>, CameraError> {
    if p.z <= MIN_DEPTH {
        return Err(CameraError::BehindCamera);
    }
    let z_inv = 1.0 / p.z;
    let z_inv2 = z_inv * z_inv;
    Ok(SMatrix::<f64, 2, 3>::new(
        intr.fx * z_inv,
        0.0,
        -intr.fx * p.x * z_inv2,
        0.0,
        intr.fy * z_inv,
        -intr.fy * p.y * z_inv2,
    ))
}

/// Embedding of plane coordinates `(x, y, 1)` into homogeneous object
/// coordinates `(x, y, 0, 1)`.
fn plane_embedding() -> SMatrix<f64, 4, 3> {
    let mut m = SMatrix::<f64, 4, 3>::zeros();
    m[(0, 0)] = 1.0;
    m[(1, 1)] = 1.0;
    m[(3, 2)] = 1.0;
    m
}

/// `P = K [I | 0]`: the 3x4 projection matrix without the pose.
fn projection_matrix(intr: &CameraIntrinsics) -> SMatrix<f64, 3, 4> {
    let mut p = SMatrix::<f64, 3, 4>::zeros();
    p.fixed_view_mut::<3, 3>(0, 0).copy_from(&intr.k_matrix());
    p
}

/// Homography `H = K [I|0] T M` mapping object-plane coordinates `(x, y, 1)`
/// to homogeneous pixels.
pub fn conic_homography(intr: &CameraIntrinsics, pose: &Pose) -> Result<Matrix3<f64>, CameraError> {
    let h: Matrix3<f64> = projection_matrix(intr) * pose.matrix() * plane_embedding();
    // Relative determinant guard: H is singular when the object plane
    // contains the optical center.
    let scale = h.norm();
    if scale < 1e-300 || h.determinant().abs() < 1e-12 * scale * scale * scale {
        return Err(CameraError::DegenerateHomography);
    }
    Ok(h)
}

/// Raw (unnormalized) image conic of the circle `x^2 + y^2 = r^2` in the
/// object's `z = 0` plane: `C = H^{-T} diag(1, 1, -r^2) H^{-1}`.
pub fn conic_raw(
    intr: &CameraIntrinsics,
    pose: &Pose,
    radius: f64,
) -> Result<Matrix3<f64>, CameraError> {
    let h = conic_homography(intr, pose)?;
    let h_inv = h.try_inverse().ok_or(CameraError::DegenerateHomography)?;
    let q = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -radius * radius));
    Ok(h_inv.transpose() * q * h_inv)
}

/// Normalized image conic of the object-plane circle of the given radius.
pub fn project_conic(
    intr: &CameraIntrinsics,
    pose: &Pose,
    radius: f64,
) -> Result<Conic, CameraError> {
    Conic::from_matrix(&conic_raw(intr, pose, radius)?)
}

/// Raw conic together with its derivative against each left-perturbation
/// direction: `dC_j = dC / d xi_j` at `xi = 0` for `T(xi) = exp(xi^) T`.
///
/// Differentiating `C = H^{-T} Q H^{-1}` through `H(xi) = K [I|0] exp(xi^) T M`
/// gives, in column-major `vec` form,
///
/// `vec(dC_j) = -[(C^T (x) H^{-T}) K9 + (H^{-T} (x) C)] vec(K [I|0] E_j T M)`
///
/// with `K9` the 9x9 commutation matrix. Returned alongside `C` and `H^{-1}`
/// so residual code can reuse all three.
pub struct ConicDerivatives {
    pub conic: Matrix3<f64>,
    pub h_inv: Matrix3<f64>,
    pub gradients: [Matrix3<f64>; 6],
}

pub fn conic_with_jacobian(
    intr: &CameraIntrinsics,
    pose: &Pose,
    radius: f64,
) -> Result<ConicDerivatives, CameraError> {
    let h = conic_homography(intr, pose)?;
    let h_inv = h.try_inverse().ok_or(CameraError::DegenerateHomography)?;
    let h_inv_t = h_inv.transpose();
    let q = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -radius * radius));
    let conic = h_inv_t * q * h_inv;

    let d_h = -(kron3(&conic.transpose(), &h_inv_t) * commutation_3x3()
        + kron3(&h_inv_t, &conic));

    let p = projection_matrix(intr);
    let t_m = pose.matrix() * plane_embedding();
    let gens = generators();
    let mut gradients = [Matrix3::zeros(); 6];
    for j in 0..6 {
        let dh: Matrix3<f64> = p * gens[j] * t_m;
        gradients[j] = unvec3x3(&(d_h * vec3x3(&dh)));
    }
    Ok(ConicDerivatives {
        conic,
        h_inv,
        gradients,
    })
}
