//! Rotation algebra shared by every other module.
//!
//! Rotations are stored in double precision. The 6D representation keeps the
//! first two columns of a rotation matrix (column-major) and is decoded with
//! Gram–Schmidt, the first column anchoring the frame.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{ProgipError, Result};

const DEGENERATE_NORM: f64 = 1e-8;

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMatrix(pub Matrix3<f64>);

/// First two columns of a rotation matrix, `[c0; c1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D(pub [f64; 6]);

/// Rotation vector (radians times unit axis).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vector3<f64>);

impl Default for RotMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

impl RotMatrix {
    pub fn identity() -> Self {
        RotMatrix(Matrix3::identity())
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        RotMatrix(m)
    }

    /// Builds from nine row-major values without re-orthonormalizing.
    pub fn from_row_major(v: &[f64; 9]) -> Self {
        RotMatrix(Matrix3::from_row_slice(v))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn about_x(angle: f64) -> Self {
        RotMatrix(*Rotation3::from_axis_angle(&Vector3::x_axis(), angle).matrix())
    }

    pub fn about_y(angle: f64) -> Self {
        RotMatrix(*Rotation3::from_axis_angle(&Vector3::y_axis(), angle).matrix())
    }

    pub fn about_z(angle: f64) -> Self {
        RotMatrix(*Rotation3::from_axis_angle(&Vector3::z_axis(), angle).matrix())
    }

    pub fn transpose(&self) -> Self {
        RotMatrix(self.0.transpose())
    }

    pub fn mul(&self, other: &RotMatrix) -> RotMatrix {
        RotMatrix(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Largest absolute entry of `MᵀM − I`.
    pub fn orthonormality_residual(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).abs().max()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.0.iter().all(|v| v.is_finite())
            && self.orthonormality_residual() <= tol
            && (self.0.determinant() - 1.0).abs() <= tol
    }

    /// Nearest rotation in the Frobenius sense (SVD projection).
    pub fn project(m: &Matrix3<f64>) -> RotMatrix {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        RotMatrix(u * d * v_t)
    }

    /// Chordal mean of a set of rotations.
    pub fn chordal_mean(rots: &[RotMatrix]) -> RotMatrix {
        if rots.is_empty() {
            return RotMatrix::identity();
        }
        let sum = rots.iter().fold(Matrix3::zeros(), |acc, r| acc + r.0);
        RotMatrix::project(&sum)
    }
}

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(v: &[f64]) -> Rot6D {
        let mut out = [0.0; 6];
        out.copy_from_slice(&v[..6]);
        Rot6D(out)
    }
}

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vector3::new(x, y, z))
    }

    pub fn zero() -> Self {
        AxisAngle(Vector3::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

pub fn rot_to_6d(r: &RotMatrix) -> Rot6D {
    let m = &r.0;
    Rot6D([
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ])
}

fn gram_schmidt(v: &Rot6D) -> Result<(Vector3<f64>, Vector3<f64>, f64, f64)> {
    let a = Vector3::new(v.0[0], v.0[1], v.0[2]);
    let b = Vector3::new(v.0[3], v.0[4], v.0[5]);
    if !(a.iter().chain(b.iter()).all(|x| x.is_finite())) {
        return Err(ProgipError::DegenerateInput("non-finite 6D value".into()));
    }
    let na = a.norm();
    if na < DEGENERATE_NORM {
        return Err(ProgipError::DegenerateInput(format!(
            "first 6D column has norm {na:e}"
        )));
    }
    let c0 = a / na;
    let u = b - c0 * c0.dot(&b);
    let nu = u.norm();
    if nu < DEGENERATE_NORM {
        return Err(ProgipError::DegenerateInput(
            "second 6D column parallel to the first".into(),
        ));
    }
    Ok((c0, u / nu, na, nu))
}

/// Decodes a 6D vector into a rotation matrix by Gram–Schmidt.
pub fn six_d_to_rot(v: &Rot6D) -> Result<RotMatrix> {
    let (c0, c1, _, _) = gram_schmidt(v)?;
    let c2 = c0.cross(&c1);
    Ok(RotMatrix(Matrix3::from_columns(&[c0, c1, c2])))
}

/// Vector-Jacobian product of [`six_d_to_rot`]: maps `∂L/∂R` onto `∂L/∂v`.
pub fn six_d_to_rot_vjp(v: &Rot6D, grad_r: &Matrix3<f64>) -> Result<[f64; 6]> {
    let (c0, c1, na, nu) = gram_schmidt(v)?;
    let b = Vector3::new(v.0[3], v.0[4], v.0[5]);
    let g0: Vector3<f64> = grad_r.column(0).into();
    let g1: Vector3<f64> = grad_r.column(1).into();
    let g2: Vector3<f64> = grad_r.column(2).into();

    // c2 = c0 × c1
    let mut dc0 = g0 + c1.cross(&g2);
    let dc1 = g1 + g2.cross(&c0);

    // c1 = u / |u|
    let du = (dc1 - c1 * c1.dot(&dc1)) / nu;

    // u = b − (c0·b) c0
    let s = c0.dot(&b);
    let db = du - c0 * c0.dot(&du);
    dc0 -= b * c0.dot(&du) + du * s;

    // c0 = a / |a|
    let da = (dc0 - c0 * c0.dot(&dc0)) / na;
    Ok([da.x, da.y, da.z, db.x, db.y, db.z])
}

/// Relative rotation between consecutive frames, `r_prevᵀ · r_cur`.
pub fn angular_velocity(r_prev: &RotMatrix, r_cur: &RotMatrix) -> RotMatrix {
    RotMatrix(r_prev.0.transpose() * r_cur.0)
}

/// Angle of `r1ᵀ r2`, in degrees.
///
/// With `R = r1ᵀ r2`, `‖R − Rᵀ‖ = 2√2 sin θ` and `tr R = 1 + 2 cos θ`. The
/// atan2 of the two stays accurate near 0, where the arccos form loses half
/// its digits, and returns exactly 0 when both inputs are the same matrix.
pub fn geodesic_angle_deg(r1: &RotMatrix, r2: &RotMatrix) -> f64 {
    let r = r1.0.transpose() * r2.0;
    let sin = (r - r.transpose()).norm() / (2.0 * std::f64::consts::SQRT_2);
    let cos = 0.5 * (r.trace() - 1.0);
    sin.atan2(cos).to_degrees()
}

/// Rodrigues formula.
pub fn axis_angle_to_rot(aa: &AxisAngle) -> RotMatrix {
    let theta = aa.0.norm();
    if theta == 0.0 {
        return RotMatrix::identity();
    }
    if theta < 1e-6 {
        let k = skew(&aa.0);
        return RotMatrix(Matrix3::identity() + k + k * k * 0.5);
    }
    let axis = aa.0 / theta;
    let k = skew(&axis);
    RotMatrix(Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos()))
}

/// Matrix logarithm as a rotation vector with angle in `[0, π]`.
pub fn rot_to_axis_angle(r: &RotMatrix) -> AxisAngle {
    let rot = Rotation3::from_matrix_unchecked(r.0);
    AxisAngle(rot.scaled_axis())
}

/// Geodesic interpolation `r0 · exp(t · log(r0ᵀ r1))`.
pub fn slerp(r0: &RotMatrix, r1: &RotMatrix, t: f64) -> RotMatrix {
    let delta = rot_to_axis_angle(&angular_velocity(r0, r1));
    let step = axis_angle_to_rot(&AxisAngle(delta.0 * t));
    r0.mul(&step)
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Decomposes `R = Rz(a) · Rx(b) · Ry(c)` and returns `(a, b, c)` in radians.
pub fn euler_zxy(r: &RotMatrix) -> (f64, f64, f64) {
    let m = &r.0;
    let b = m[(2, 1)].clamp(-1.0, 1.0).asin();
    let cb = b.cos();
    if cb.abs() > 1e-9 {
        let a = (-m[(0, 1)]).atan2(m[(1, 1)]);
        let c = (-m[(2, 0)]).atan2(m[(2, 2)]);
        (a, b, c)
    } else {
        // gimbal lock: fold everything into the z angle
        let a = m[(1, 0)].atan2(m[(0, 0)]);
        (a, b, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_rot(rng: &mut ChaCha8Rng) -> RotMatrix {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(0.0..PI);
        RotMatrix(*Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix())
    }

    fn max_abs_diff(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).abs().max()
    }

    #[test]
    fn identity_to_6d() {
        assert_eq!(rot_to_6d(&RotMatrix::identity()).0, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn rz90_to_6d() {
        let v = rot_to_6d(&RotMatrix::about_z(FRAC_PI_2));
        let expected = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (a, b) in v.0.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn six_d_identity_and_scaled() {
        let r = six_d_to_rot(&Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(r.0, Matrix3::identity());
        let r = six_d_to_rot(&Rot6D([2.0, 0.0, 0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!(max_abs_diff(&r.0, &Matrix3::identity()) < 1e-15);
    }

    #[test]
    fn six_d_degenerate_inputs() {
        assert!(matches!(
            six_d_to_rot(&Rot6D([0.0, 0.0, 0.0, 0.0, 1.0, 0.0])),
            Err(ProgipError::DegenerateInput(_))
        ));
        assert!(matches!(
            six_d_to_rot(&Rot6D([1.0, 0.0, 0.0, 3.0, 0.0, 0.0])),
            Err(ProgipError::DegenerateInput(_))
        ));
        assert!(six_d_to_rot(&Rot6D([f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0])).is_err());
    }

    #[test]
    fn six_d_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let r = random_rot(&mut rng);
            let back = six_d_to_rot(&rot_to_6d(&r)).unwrap();
            assert!(max_abs_diff(&back.0, &r.0) < 1e-9);
        }
    }

    #[test]
    fn six_d_random_vectors_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let v: [f64; 6] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
            let r = six_d_to_rot(&Rot6D(v)).unwrap();
            assert!(r.orthonormality_residual() < 1e-9);
            assert!((r.0.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn angular_velocity_cases() {
        let r = RotMatrix::about_x(0.3);
        assert!(max_abs_diff(&angular_velocity(&r, &r).0, &Matrix3::identity()) < 1e-15);
        let rz = RotMatrix::about_z(30f64.to_radians());
        assert!(max_abs_diff(&angular_velocity(&RotMatrix::identity(), &rz).0, &rz.0) < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = random_rot(&mut rng);
            let b = random_rot(&mut rng);
            let w = angular_velocity(&a, &b);
            assert!(max_abs_diff(&(a.0 * w.0), &b.0) < 1e-9);
        }
    }

    #[test]
    fn geodesic_known_values_and_quaternion_oracle() {
        let r = RotMatrix::about_y(1.1);
        assert_eq!(geodesic_angle_deg(&r, &r), 0.0);
        let d = geodesic_angle_deg(&RotMatrix::identity(), &RotMatrix::about_z(FRAC_PI_2));
        assert!((d - 90.0).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let a = random_rot(&mut rng);
            let b = random_rot(&mut rng);
            let qa = UnitQuaternion::from_matrix(&a.0);
            let qb = UnitQuaternion::from_matrix(&b.0);
            let dot = qa.coords.dot(&qb.coords).abs().min(1.0);
            let oracle = (2.0 * dot.acos()).to_degrees();
            assert!((geodesic_angle_deg(&a, &b) - oracle).abs() < 1e-6);
        }
    }

    #[test]
    fn axis_angle_cases() {
        assert_eq!(axis_angle_to_rot(&AxisAngle::zero()).0, Matrix3::identity());
        let r = axis_angle_to_rot(&AxisAngle::new(0.0, 0.0, FRAC_PI_2));
        assert!(max_abs_diff(&r.0, &RotMatrix::about_z(FRAC_PI_2).0) < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let v = v.normalize() * rng.random_range(0.0..3.1);
            let r = axis_angle_to_rot(&AxisAngle(v));
            // independent log map: angle from the trace, axis from the skew part
            let angle = ((r.0.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            let w = Vector3::new(
                r.0[(2, 1)] - r.0[(1, 2)],
                r.0[(0, 2)] - r.0[(2, 0)],
                r.0[(1, 0)] - r.0[(0, 1)],
            );
            let log = if angle < 1e-12 { Vector3::zeros() } else { w * (angle / (2.0 * angle.sin())) };
            assert!((log - v).norm() < 1e-8, "{log:?} vs {v:?}");
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let v: [f64; 6] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
            let g = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let f = |x: &[f64; 6]| six_d_to_rot(&Rot6D(*x)).unwrap().0.component_mul(&g).sum();
            let analytic = six_d_to_rot_vjp(&Rot6D(v), &g).unwrap();
            for k in 0..6 {
                let mut p = v;
                let mut m = v;
                p[k] += 1e-6;
                m[k] -= 1e-6;
                let fd = (f(&p) - f(&m)) / 2e-6;
                assert!((fd - analytic[k]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn slerp_endpoints_and_midpoint() {
        let a = RotMatrix::about_x(0.2);
        let b = RotMatrix::about_x(1.0);
        assert!(max_abs_diff(&slerp(&a, &b, 0.0).0, &a.0) < 1e-12);
        assert!(max_abs_diff(&slerp(&a, &b, 1.0).0, &b.0) < 1e-12);
        assert!(max_abs_diff(&slerp(&a, &b, 0.5).0, &RotMatrix::about_x(0.6).0) < 1e-12);
    }

    #[test]
    fn euler_zxy_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let r = random_rot(&mut rng);
            let (a, b, c) = euler_zxy(&r);
            let back = RotMatrix::about_z(a).mul(&RotMatrix::about_x(b)).mul(&RotMatrix::about_y(c));
            assert!(max_abs_diff(&back.0, &r.0) < 1e-9);
        }
        assert_eq!(euler_zxy(&RotMatrix::identity()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn chordal_mean_of_identical() {
        let r = RotMatrix::about_y(0.7);
        let m = RotMatrix::chordal_mean(&[r, r, r]);
        assert!(max_abs_diff(&m.0, &r.0) < 1e-12);
    }
}
