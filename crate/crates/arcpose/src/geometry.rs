//! SE(3) / SO(3) primitives: poses, twists, exponential and logarithm maps,
//! and the Kronecker-algebra helpers used by the conic Jacobian.
//!
//! Twists are ordered translation-first, `xi = [v; omega]`, and every pose
//! perturbation in this crate is left-multiplicative: `T' = exp(delta^) * T`.
//! Rotation matrices map needle-frame coordinates into camera-frame
//! coordinates; `vec(.)` stacks matrix columns (column-major), matching the
//! storage order of `nalgebra`.

// Float-math methods for the standalone no_std build; builds whose
// dependency graph links std resolve these inherently and would flag
// the import as unused.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use nalgebra::{DMatrix, Matrix3, Matrix4, Matrix6, SMatrix, Vector3, Vector6};
use thiserror::Error;

/// Rotation angles below this are handled by second-order Taylor expansions
/// of the `exp` / `log` coefficient functions.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Errors from Lie-group operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeometryError {
    /// The rotation angle is within `1e-6` of `pi`, where the logarithm is
    /// multivalued and its axis numerically undefined.
    #[error("rotation angle within 1e-6 of pi: logarithm is multivalued")]
    AngleNearPi,
}

/// A twist (element of se(3)), ordered translation-first: `[v; omega]`.
///
/// `v` is in meters (infinitesimal translation), `omega` in radians
/// (infinitesimal rotation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn zero() -> Self {
        Twist(Vector6::zeros())
    }

    pub fn from_parts(v: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Twist(Vector6::new(v.x, v.y, v.z, omega.x, omega.y, omega.z))
    }

    /// Translational component `v` (first three entries).
    pub fn v(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    /// Rotational component `omega` (last three entries).
    pub fn omega(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn as_vector(&self) -> &Vector6<f64> {
        &self.0
    }

    pub fn scaled(&self, s: f64) -> Self {
        Twist(self.0 * s)
    }
}

/// A rigid transform in SE(3), stored as rotation + translation.
///
/// Interpreted as mapping object-frame points into the camera frame:
/// `p_cam = R * p_obj + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from rotation and translation. The rotation is taken as
    /// given; callers that accumulate many compositions should periodically
    /// call [`Pose::orthonormalized`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotates a direction vector (no translation applied).
    pub fn transform_direction(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * d
    }

    /// Homogeneous 4x4 matrix.
    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `max(|R^T R - I|_inf, |det(R) - 1|)`: how far the rotation block has
    /// drifted from O(3) / orientation preservation.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let mut worst: f64 = 0.0;
        for e in gram.iter() {
            worst = worst.max(e.abs());
        }
        worst.max((self.rotation.determinant() - 1.0).abs())
    }

    /// Projects the rotation block back onto SO(3) via the polar
    /// decomposition (`R <- U V^T` from the SVD of `R`). Used to scrub
    /// floating-point drift in long composition chains.
    pub fn orthonormalized(&self) -> Pose {
        let svd = self.rotation.svd(true, true);
        let u = svd.u.expect("svd of 3x3 requested with u");
        let v_t = svd.v_t.expect("svd of 3x3 requested with v_t");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            // Flip the weakest singular direction to stay in SO(3).
            let mut u = u;
            for i in 0..3 {
                u[(i, 2)] = -u[(i, 2)];
            }
            r = u * v_t;
        }
        Pose {
            rotation: r,
            translation: self.translation,
        }
    }
}

/// Skew-symmetric (cross-product) matrix: `skew(a) * b == a x b`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -a.z, a.y, //
        a.z, 0.0, -a.x, //
        -a.y, a.x, 0.0,
    )
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// 4x4 matrix form of a twist: rotation block `skew(omega)`, translation
/// column `v`, zero bottom row.
pub fn hat(xi: &Twist) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&xi.omega()));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.v());
    m
}

/// The six se(3) generators `E_j`, so `hat(xi) = sum_j xi_j * E_j`.
///
/// `E_1..E_3` are the unit translations, `E_4..E_6` the unit rotations
/// (rotation block `skew(e_x)`, `skew(e_y)`, `skew(e_z)`).
pub fn generators() -> [Matrix4<f64>; 6] {
    let mut out = [Matrix4::zeros(); 6];
    for (j, gen) in out.iter_mut().enumerate() {
        let mut xi = Vector6::zeros();
        xi[j] = 1.0;
        *gen = hat(&Twist(xi));
    }
    out
}

/// Rodrigues coefficients `(sin t / t, (1 - cos t)/t^2, (t - sin t)/t^3)`
/// with second-order Taylor branches below [`SMALL_ANGLE`].
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (
            1.0 - t2 / 6.0,
            0.5 - t2 / 24.0,
            1.0 / 6.0 - t2 / 120.0,
        )
    } else {
        let t2 = theta * theta;
        let s = theta.sin();
        let c = theta.cos();
        (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
    }
}

/// SO(3) exponential (Rodrigues formula).
pub fn exp_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let (a, b, _) = rodrigues_coefficients(theta);
    let w = skew(omega);
    Matrix3::identity() + w * a + w * w * b
}

/// SE(3) exponential: `exp([v; omega]^) = (exp(omega^), V v)` with the
/// standard left-Jacobian `V = I + B w^ + C w^2`.
pub fn exp_se3(xi: &Twist) -> Pose {
    let omega = xi.omega();
    let theta = omega.norm();
    let (a, b, c) = rodrigues_coefficients(theta);
    let w = skew(&omega);
    let w2 = w * w;
    let rotation = Matrix3::identity() + w * a + w2 * b;
    let v_mat = Matrix3::identity() + w * b + w2 * c;
    Pose {
        rotation,
        translation: v_mat * xi.v(),
    }
}

/// SO(3) logarithm. Fails within `1e-6` of a half-turn where the axis is
/// numerically undefined.
pub fn log_so3(r: &Matrix3<f64>) -> Result<Vector3<f64>, GeometryError> {
    let s_vec = vee(&((r - r.transpose()) * 0.5));
    let s = s_vec.norm(); // sin(theta) * |axis|
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if theta > core::f64::consts::PI - SMALL_ANGLE {
        return Err(GeometryError::AngleNearPi);
    }
    if theta < SMALL_ANGLE {
        // s_vec = sin(theta) * axis, and theta/sin(theta) ~ 1 + theta^2/6.
        Ok(s_vec * (1.0 + theta * theta / 6.0))
    } else {
        Ok(s_vec * (theta / s))
    }
}

/// SO(3) logarithm that never fails: at a half-turn the axis is recovered
/// from the diagonal of `(R + I)/2` and the angle saturates just below `pi`.
///
/// Only for chart coordinates and spread statistics, where particles far
/// from the reference need *some* finite coordinate and kernel weights at
/// such distances are negligible anyway. Transport retractions always go
/// through the exact [`exp_se3`].
pub fn log_so3_saturating(r: &Matrix3<f64>) -> Vector3<f64> {
    match log_so3(r) {
        Ok(w) => w,
        Err(GeometryError::AngleNearPi) => {
            // R ~ 2 a a^T - I near a half-turn, so diag gives |a_i|^2 and the
            // largest column of R + I fixes the signs.
            let b = r + Matrix3::identity();
            let mut col = 0;
            for i in 1..3 {
                if b[(i, i)] > b[(col, col)] {
                    col = i;
                }
            }
            let axis = b.column(col).normalize();
            axis * (core::f64::consts::PI - SMALL_ANGLE)
        }
    }
}

fn se3_translation_log(rotation_log: &Vector3<f64>, translation: &Vector3<f64>) -> Vector3<f64> {
    let omega = rotation_log;
    let theta = omega.norm();
    let w = skew(omega);
    let w2 = w * w;
    // V^{-1} = I - w^/2 + k w^2 with k = (1 - A/(2B))/theta^2.
    let k = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let (a, b, _) = rodrigues_coefficients(theta);
        (1.0 - a / (2.0 * b)) / (theta * theta)
    };
    (Matrix3::identity() - w * 0.5 + w2 * k) * translation
}

/// SE(3) logarithm, inverse of [`exp_se3`] wherever the rotation angle is
/// not within `1e-6` of `pi`.
pub fn log_se3(pose: &Pose) -> Result<Twist, GeometryError> {
    let omega = log_so3(pose.rotation())?;
    let v = se3_translation_log(&omega, pose.translation());
    Ok(Twist::from_parts(v, omega))
}

/// SE(3) logarithm that saturates instead of failing near half-turn
/// rotations; see [`log_so3_saturating`] for the contract.
pub fn log_se3_saturating(pose: &Pose) -> Twist {
    let omega = log_so3_saturating(pose.rotation());
    let v = se3_translation_log(&omega, pose.translation());
    Twist::from_parts(v, omega)
}

/// SO(3) left-Jacobian inverse `J_l^{-1}(omega)`.
fn so3_left_jacobian_inverse(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = skew(omega);
    let w2 = w * w;
    let k = if theta < 1e-3 {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let t2 = theta * theta;
        1.0 / t2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - w * 0.5 + w2 * k
}

/// The translation-coupling block `Q(rho, omega)` of the SE(3) left
/// Jacobian, such that `J_l = [[J, Q], [0, J]]` in `[v; omega]` ordering.
fn se3_jacobian_q(rho: &Vector3<f64>, omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let t2 = theta * theta;
    let rx = skew(rho);
    let wx = skew(omega);
    let wx2 = wx * wx;

    // c2 = (t - sin t)/t^3, c3 = (1 - t^2/2 - cos t)/t^4,
    // c4 = c3 - 3 (t - sin t - t^3/6)/t^5.
    let (c2, c3, c4) = if theta < 1e-3 {
        (
            1.0 / 6.0 - t2 / 120.0,
            1.0 / 24.0 - t2 / 720.0,
            1.0 / 24.0 - t2 / 720.0 + 3.0 * (1.0 / 120.0 - t2 / 5040.0),
        )
    } else {
        let s = theta.sin();
        let c = theta.cos();
        let c2 = (theta - s) / (t2 * theta);
        let c3 = (1.0 - t2 / 2.0 - c) / (t2 * t2);
        let c4 = c3 - 3.0 * (theta - s - t2 * theta / 6.0) / (t2 * t2 * theta);
        (c2, c3, c4)
    };

    rx * 0.5
        + (wx * rx + rx * wx + wx * rx * wx) * c2
        - (wx2 * rx + rx * wx2 - (wx * rx * wx) * 3.0) * c3
        - (wx * rx * wx2 + wx2 * rx * wx) * (0.5 * c4)
}

/// SE(3) left-Jacobian inverse in `[v; omega]` ordering:
/// `log(exp(delta^) * exp(xi^)) ~ xi + J_l^{-1}(xi) * delta` for small
/// `delta`. Used to linearize log-space residuals of the motion prior.
pub fn se3_left_jacobian_inverse(xi: &Twist) -> Matrix6<f64> {
    let rho = xi.v();
    let omega = xi.omega();
    let j_inv = so3_left_jacobian_inverse(&omega);
    let q = se3_jacobian_q(&rho, &omega);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j_inv);
    let coupling = -j_inv * q * j_inv;
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&coupling);
    out
}

/// Kronecker product `A (x) B`.
///
/// With column-major `vec(.)`, `(C^T (x) A) vec(B) = vec(A B C)`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            for k in 0..br {
                for l in 0..bc {
                    out[(br * i + k, bc * j + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Kronecker product of two 3x3 matrices as a static 9x9.
pub fn kron3(a: &Matrix3<f64>, b: &Matrix3<f64>) -> SMatrix<f64, 9, 9> {
    let mut out = SMatrix::<f64, 9, 9>::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let aij = a[(i, j)];
            for k in 0..3 {
                for l in 0..3 {
                    out[(3 * i + k, 3 * j + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// The 9x9 commutation matrix `K` for 3x3 matrices:
/// `K vec(A) = vec(A^T)` (column-major `vec`).
pub fn commutation_3x3() -> SMatrix<f64, 9, 9> {
    let mut k = SMatrix::<f64, 9, 9>::zeros();
    for i in 0..3 {
        for j in 0..3 {
            k[(i + 3 * j, j + 3 * i)] = 1.0;
        }
    }
    k
}

/// Column-major `vec` of a 3x3 matrix.
pub fn vec3x3(m: &Matrix3<f64>) -> SMatrix<f64, 9, 1> {
    let mut out = SMatrix::<f64, 9, 1>::zeros();
    for (idx, e) in m.iter().enumerate() {
        out[idx] = *e;
    }
    out
}

/// Inverse of [`vec3x3`].
pub fn unvec3x3(v: &SMatrix<f64, 9, 1>) -> Matrix3<f64> {
    Matrix3::from_column_slice(v.as_slice())
}

/// Draws a rotation uniformly from SO(3) (axis uniform on the sphere, angle
/// from the Haar density `(1 - cos t)/pi` via inversion sampling on a fine
/// grid is overkill; instead we use the standard quaternion trick).
pub fn random_rotation<R: rand::Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    // Uniform unit quaternion (Gaussian 4-vector normalized) => Haar on SO(3).
    let mut q = [0.0f64; 4];
    loop {
        let mut norm2 = 0.0;
        for e in q.iter_mut() {
            *e = rng.sample::<f64, _>(rand_distr::StandardNormal);
            norm2 += *e * *e;
        }
        if norm2 > 1e-12 {
            let n = norm2.sqrt();
            for e in q.iter_mut() {
                *e /= n;
            }
            break;
        }
    }
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Mean-square twist magnitude splits used by tests and diagnostics.
pub fn twist_norms(xi: &Twist) -> (f64, f64) {
    (xi.v().norm(), xi.omega().norm())
}

/// Orthonormalizes every pose in a slice in place; returns the worst
/// orthonormality error seen beforehand.
pub fn orthonormalize_all(poses: &mut [Pose]) -> f64 {
    let mut worst: f64 = 0.0;
    for p in poses.iter_mut() {
        worst = worst.max(p.orthonormality_error());
        *p = p.orthonormalized();
    }
    worst
}

#[allow(dead_code)]
fn vecs_for_doc() -> Vec<f64> {
    Vec::new()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use core::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn assert_mat3_eq(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) {
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(a[(i, j)], b[(i, j)], epsilon = tol);
            }
        }
    }

    #[test]
    fn skew_matches_cross_product() {
        let a = Vector3::new(1.0, 2.0, 3.0);
        let b = Vector3::new(-0.5, 4.0, 0.25);
        let via_matrix = skew(&a) * b;
        let direct = a.cross(&b);
        assert_abs_diff_eq!((via_matrix - direct).norm(), 0.0, epsilon = 1e-15);
        // skew(e_z) has the canonical +/-1 layout.
        let sz = skew(&Vector3::z());
        assert_eq!(sz[(0, 1)], -1.0);
        assert_eq!(sz[(1, 0)], 1.0);
        assert_eq!(sz[(2, 2)], 0.0);
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let p = exp_se3(&Twist::zero());
        assert_mat3_eq(p.rotation(), &Matrix3::identity(), 1e-15);
        assert_abs_diff_eq!(p.translation().norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn exp_pure_rotation_half_pi_about_z() {
        let xi = Twist::from_parts(Vector3::zeros(), Vector3::new(0.0, 0.0, PI / 2.0));
        let p = exp_se3(&xi);
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_mat3_eq(p.rotation(), &expected, 1e-12);
    }

    #[test]
    fn exp_pure_translation_moves_origin() {
        let v = Vector3::new(0.01, -0.02, 0.03);
        let p = exp_se3(&Twist::from_parts(v, Vector3::zeros()));
        assert_abs_diff_eq!((p.translation() - v).norm(), 0.0, epsilon = 1e-15);
        assert_mat3_eq(p.rotation(), &Matrix3::identity(), 1e-15);
    }

    #[test]
    fn log_of_identity_is_zero() {
        let xi = log_se3(&Pose::identity()).unwrap();
        assert_abs_diff_eq!(xi.0.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn log_rejects_half_turn() {
        let r = exp_so3(&Vector3::new(PI, 0.0, 0.0));
        let p = Pose::new(r, Vector3::zeros());
        assert_eq!(log_se3(&p), Err(GeometryError::AngleNearPi));
        // The saturating variant still returns a finite twist with the right axis.
        let xi = log_se3_saturating(&p);
        assert!(xi.omega().norm() < PI);
        assert!(xi.omega().norm() > PI - 1e-3);
        assert_abs_diff_eq!(xi.omega().normalize().x.abs(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn exp_log_roundtrip_small_and_moderate() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let scale: f64 = rng.random_range(1e-9..3.0f64);
            let mut w = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if w.norm() < 1e-12 {
                w = Vector3::x();
            }
            let w = w.normalize() * scale;
            let v = Vector3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
            );
            let xi = Twist::from_parts(v, w);
            let back = log_se3(&exp_se3(&xi)).unwrap();
            assert!(
                (back.0 - xi.0).norm() < 1e-9,
                "roundtrip drift {:e} at angle {}",
                (back.0 - xi.0).norm(),
                scale
            );
        }
    }

    #[test]
    fn compose_inverse_is_identity() {
        let xi = Twist::from_parts(Vector3::new(0.02, -0.01, 0.05), Vector3::new(0.4, -0.2, 0.9));
        let p = exp_se3(&xi);
        let e = p.compose(&p.inverse());
        assert_mat3_eq(e.rotation(), &Matrix3::identity(), 1e-14);
        assert_abs_diff_eq!(e.translation().norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn generators_span_hat() {
        let gens = generators();
        // E_1 moves along x: only entry (0, 3) is 1.
        assert_eq!(gens[0][(0, 3)], 1.0);
        assert_eq!(gens[0].abs().sum(), 1.0);
        // E_6 rotates about z: rotation block is skew(e_z).
        let sz = skew(&Vector3::z());
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(gens[5][(i, j)], sz[(i, j)]);
            }
        }
        // hat(xi) = sum_j xi_j E_j for a random twist.
        let xi = Twist(Vector6::new(0.1, -0.2, 0.3, -0.4, 0.5, -0.6));
        let mut acc = Matrix4::zeros();
        for (j, g) in gens.iter().enumerate() {
            acc += g * xi.0[j];
        }
        assert_abs_diff_eq!((acc - hat(&xi)).abs().sum(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn commutation_transposes_vec() {
        let k = commutation_3x3();
        let a = Matrix3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0);
        let lhs = k * vec3x3(&a);
        let rhs = vec3x3(&a.transpose());
        assert_abs_diff_eq!((lhs - rhs).norm(), 0.0, epsilon = 0.0);
        // K is an involution.
        let eye = k * k;
        assert_abs_diff_eq!((eye - SMatrix::<f64, 9, 9>::identity()).norm(), 0.0, epsilon = 0.0);
    }

    #[test]
    fn kron_vec_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut rand3 = || {
            Matrix3::from_fn(|_, _| rng.random_range(-2.0..2.0))
        };
        let a = rand3();
        let b = rand3();
        let c = rand3();
        let lhs = kron3(&c.transpose(), &a) * vec3x3(&b);
        let rhs = vec3x3(&(a * b * c));
        assert!((lhs - rhs).norm() < 1e-12);
        // Dynamic kron agrees with the static one.
        let da = DMatrix::from_fn(3, 3, |i, j| a[(i, j)]);
        let db = DMatrix::from_fn(3, 3, |i, j| b[(i, j)]);
        let kd = kron(&da, &db);
        let ks = kron3(&a, &b);
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(kd[(i, j)], ks[(i, j)]);
            }
        }
    }

    #[test]
    fn kron_identity_example() {
        // I2 (x) I2 = I4 exactly.
        let i2 = DMatrix::<f64>::identity(2, 2);
        let k = kron(&i2, &i2);
        assert_eq!(k, DMatrix::<f64>::identity(4, 4));
    }

    #[test]
    fn orthonormalized_restores_rotation() {
        let mut p = exp_se3(&Twist::from_parts(
            Vector3::new(0.01, 0.0, 0.05),
            Vector3::new(0.3, -0.7, 0.2),
        ));
        // Inject drift.
        let mut r = *p.rotation();
        r[(0, 0)] += 3e-7;
        r[(1, 2)] -= 2e-7;
        p = Pose::new(r, *p.translation());
        assert!(p.orthonormality_error() > 1e-7);
        let q = p.orthonormalized();
        assert!(q.orthonormality_error() < 1e-12);
        // Polar projection moves the matrix by no more than the drift scale.
        assert!((q.rotation() - p.rotation()).norm() < 1e-5);
    }

    #[test]
    fn left_jacobian_inverse_matches_log_difference() {
        // log(exp(d^) exp(xi^)) - log(exp(xi^)) ~ J_l^{-1}(xi) d for small d.
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for _ in 0..50 {
            let xi = Twist(Vector6::from_fn(|i, _| {
                if i < 3 {
                    rng.random_range(-0.05..0.05)
                } else {
                    rng.random_range(-1.0..1.0)
                }
            }));
            let j_inv = se3_left_jacobian_inverse(&xi);
            let base = exp_se3(&xi);
            let eps = 1e-7;
            for k in 0..6 {
                let mut d = Vector6::zeros();
                d[k] = eps;
                let perturbed = exp_se3(&Twist(d)).compose(&base);
                let fd = (log_se3(&perturbed).unwrap().0 - xi.0) / eps;
                let analytic = j_inv.column(k).into_owned();
                assert!(
                    (fd - analytic).norm() < 1e-5,
                    "column {k} mismatch: fd {fd:?} vs {analytic:?}"
                );
            }
        }
    }

    #[test]
    fn random_rotation_is_orthonormal() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let p = Pose::new(r, Vector3::zeros());
            assert!(p.orthonormality_error() < 1e-12);
        }
    }
}
