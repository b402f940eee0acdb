//! Quaternion and 3-vector algebra underpinning every frame transformation.
//!
//! Conventions: Hamilton product, scalar-first `(w, x, y, z)` components,
//! right-handed frames. A [`UnitQuaternion`] maps body-frame vectors into the
//! navigation frame via conjugation, and the transpose of the equivalent
//! rotation matrix corresponds to the quaternion conjugate. Products are
//! renormalized so norm drift cannot accumulate over long integrations.

use crate::fm;

/// Three-component real vector. Units depend on context: rad/s for angular
/// rates, m/s² for accelerations, m for positions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        fm::sqrt(self.dot(self))
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl core::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl core::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl core::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3×3 rotation matrix.
pub type Mat3 = [[f64; 3]; 3];

/// Multiply a rotation matrix by a vector.
pub fn mat3_mul_vec(m: &Mat3, v: Vec3) -> Vec3 {
    Vec3::new(
        m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
        m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
        m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
    )
}

/// 3×3 matrix product.
pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

/// Rotation represented as a unit quaternion, scalar-first Hamilton convention.
///
/// Every constructor and product renormalizes, so `w² + x² + y² + z² = 1`
/// holds within 1e-9 at all times.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Below this rotation angle (rad) the quaternion exponential switches to its
/// second-order Taylor form to avoid 0/0.
const SMALL_ANGLE: f64 = 1e-12;

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Build from raw components, renormalizing. Returns `None` when the norm
    /// is too small to define a direction.
    pub fn from_components(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let n = fm::sqrt(w * w + x * x + y * y + z * z);
        if !(n.is_finite() && n > 1e-30) {
            return None;
        }
        Some(Self { w: w / n, x: x / n, y: y / n, z: z / n })
    }

    /// Squared-norm deviation from a valid input; used by loaders to decide
    /// between silent renormalization and a data error.
    pub fn norm_of(w: f64, x: f64, y: f64, z: f64) -> f64 {
        fm::sqrt(w * w + x * x + y * y + z * z)
    }

    fn renormalized(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = fm::sqrt(w * w + x * x + y * y + z * z);
        Self { w: w / n, x: x / n, y: y / n, z: z / n }
    }

    /// Hamilton product `self ⊗ other`, renormalized to remove drift.
    pub fn mul(self, o: UnitQuaternion) -> UnitQuaternion {
        let w = self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z;
        let x = self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y;
        let y = self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x;
        let z = self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w;
        Self::renormalized(w, x, y, z)
    }

    /// Conjugate; inverts the rotation (plays the matrix-transpose role).
    pub fn conj(self) -> UnitQuaternion {
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    /// Quaternion exponential of the pure quaternion `(0, dt·ω/2)`: the
    /// relative rotation accumulated over `dt` seconds at constant body rate
    /// `omega` (rad/s). Identity when `‖ω‖·dt` is below the small-angle
    /// threshold.
    pub fn from_angular_rate(omega: Vec3, dt: f64) -> UnitQuaternion {
        let half = omega.scale(0.5 * dt);
        let theta = half.norm();
        if theta < SMALL_ANGLE {
            // 2nd-order Taylor: cos θ ≈ 1 − θ²/2, sin θ/θ ≈ 1 − θ²/6.
            let k = 1.0 - theta * theta / 6.0;
            return Self::renormalized(1.0 - theta * theta / 2.0, half.x * k, half.y * k, half.z * k);
        }
        let (s, c) = (fm::sin(theta), fm::cos(theta));
        let k = s / theta;
        Self::renormalized(c, half.x * k, half.y * k, half.z * k)
    }

    /// Body rate that carries `from` to `to` over `dt` seconds:
    /// `from ⊗ from_angular_rate(rate, dt) == to` exactly (up to roundoff).
    pub fn rate_between(from: UnitQuaternion, to: UnitQuaternion, dt: f64) -> Vec3 {
        let mut r = from.conj().mul(to);
        if r.w < 0.0 {
            // Same rotation, shorter arc.
            r = UnitQuaternion { w: -r.w, x: -r.x, y: -r.y, z: -r.z };
        }
        let v = Vec3::new(r.x, r.y, r.z);
        let vn = v.norm();
        if vn < SMALL_ANGLE {
            return v.scale(2.0 / dt);
        }
        let half_angle = fm::atan2(vn, r.w);
        v.scale(2.0 * half_angle / (vn * dt))
    }

    /// Rotate a vector by this quaternion (`q ⊗ v ⊗ q*`).
    pub fn rotate(self, v: Vec3) -> Vec3 {
        // Expanded conjugation: v' = v + 2 q_v × (q_v × v + w v).
        let qv = Vec3::new(self.x, self.y, self.z);
        let t = qv.cross(v).scale(2.0);
        v + t.scale(self.w) + qv.cross(t)
    }

    /// Rotation by `theta` radians about +Z.
    pub fn yaw_rotation(theta: f64) -> UnitQuaternion {
        Self::renormalized(fm::cos(theta / 2.0), 0.0, 0.0, fm::sin(theta / 2.0))
    }

    /// Heading angle: rotation of the body +X axis around +Z, in (−π, π].
    pub fn yaw(self) -> f64 {
        let fwd = self.rotate(Vec3::new(1.0, 0.0, 0.0));
        fm::atan2(fwd.y, fwd.x)
    }

    /// Equivalent rotation matrix (`to_matrix(q)·v == q.rotate(v)`).
    pub fn to_matrix(self) -> Mat3 {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    pub fn norm(self) -> f64 {
        Self::norm_of(self.w, self.x, self.y, self.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use core::f64::consts::PI;

    fn random_quat(rng: &mut crate::rng::DetRng) -> UnitQuaternion {
        let mut n = crate::rng::Normal::new();
        UnitQuaternion::from_components(
            n.sample(rng),
            n.sample(rng),
            n.sample(rng),
            n.sample(rng),
        )
        .unwrap()
    }

    fn random_vec(rng: &mut crate::rng::DetRng) -> Vec3 {
        let mut n = crate::rng::Normal::new();
        Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
    }

    #[test]
    fn identity_is_left_neutral() {
        let q = UnitQuaternion::yaw_rotation(0.3);
        let r = UnitQuaternion::IDENTITY.mul(q);
        assert_abs_diff_eq!(r.w, q.w, epsilon = 1e-15);
        assert_abs_diff_eq!(r.z, q.z, epsilon = 1e-15);
    }

    #[test]
    fn conjugate_inverts() {
        let mut rng = crate::rng::root(1);
        for _ in 0..100 {
            let q = random_quat(&mut rng);
            let p = q.mul(q.conj());
            assert_abs_diff_eq!(p.w, 1.0, epsilon = 1e-9);
            assert!(p.x.abs() < 1e-9 && p.y.abs() < 1e-9 && p.z.abs() < 1e-9);
            let c = q.conj().conj();
            assert_eq!(c, q);
        }
    }

    #[test]
    fn two_quarter_turns_make_a_half_turn() {
        let quarter = UnitQuaternion::yaw_rotation(PI / 2.0);
        let half = quarter.mul(quarter);
        assert_abs_diff_eq!(half.w, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(half.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exp_zero_rate_is_identity() {
        let q = UnitQuaternion::from_angular_rate(Vec3::ZERO, 0.5);
        assert_eq!(q, UnitQuaternion::IDENTITY);
    }

    #[test]
    fn exp_half_turn_about_z() {
        let q = UnitQuaternion::from_angular_rate(Vec3::new(0.0, 0.0, PI), 1.0);
        assert_abs_diff_eq!(q.w, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exp_small_angle_yaw() {
        let q = UnitQuaternion::from_angular_rate(Vec3::new(0.0, 0.0, 0.1), 0.005);
        assert_abs_diff_eq!(q.yaw(), 5e-4, epsilon = 1e-12);
    }

    #[test]
    fn rotation_round_trip_restores_vector() {
        let mut rng = crate::rng::root(2);
        for _ in 0..100 {
            let q = random_quat(&mut rng);
            let v = random_vec(&mut rng);
            let back = q.conj().rotate(q.rotate(v));
            assert_abs_diff_eq!(back.x, v.x, epsilon = 1e-9);
            assert_abs_diff_eq!(back.y, v.y, epsilon = 1e-9);
            assert_abs_diff_eq!(back.z, v.z, epsilon = 1e-9);
        }
    }

    #[test]
    fn quarter_turn_rotates_x_to_y() {
        let q = UnitQuaternion::yaw_rotation(PI / 2.0);
        let v = q.rotate(Vec3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(v.x, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v.y, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v.z, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn rotation_preserves_norm() {
        let mut rng = crate::rng::root(3);
        for _ in 0..200 {
            let q = random_quat(&mut rng);
            let v = random_vec(&mut rng);
            assert_abs_diff_eq!(q.rotate(v).norm(), v.norm(), epsilon = 1e-9);
        }
    }

    #[test]
    fn yaw_rotation_closed_forms() {
        assert_eq!(UnitQuaternion::yaw_rotation(0.0), UnitQuaternion::IDENTITY);
        let half = UnitQuaternion::yaw_rotation(PI);
        assert_abs_diff_eq!(half.w, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(half.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn matrix_matches_rotation_and_is_orthonormal() {
        let q = UnitQuaternion::yaw_rotation(PI / 2.0);
        let m = q.to_matrix();
        let expect = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(m[i][j], expect[i][j], epsilon = 1e-12);
            }
        }

        let mut rng = crate::rng::root(4);
        for _ in 0..1000 {
            let q = random_quat(&mut rng);
            let m = q.to_matrix();
            // MᵀM = I.
            for i in 0..3 {
                for j in 0..3 {
                    let dot = m[0][i] * m[0][j] + m[1][i] * m[1][j] + m[2][i] * m[2][j];
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(dot, expect, epsilon = 1e-9);
                }
            }
            // Matches rotate() on a random vector.
            let v = random_vec(&mut rng);
            let rv = q.rotate(v);
            let mv = mat3_mul_vec(&m, v);
            assert_abs_diff_eq!(rv.x, mv.x, epsilon = 1e-9);
            assert_abs_diff_eq!(rv.y, mv.y, epsilon = 1e-9);
            assert_abs_diff_eq!(rv.z, mv.z, epsilon = 1e-9);
        }
    }

    #[test]
    fn product_stays_unit_norm() {
        let mut rng = crate::rng::root(5);
        for _ in 0..200 {
            let a = random_quat(&mut rng);
            let b = random_quat(&mut rng);
            assert_abs_diff_eq!(a.mul(b).norm(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn exp_is_a_one_parameter_subgroup() {
        let mut rng = crate::rng::root(6);
        for _ in 0..50 {
            let w = random_vec(&mut rng);
            let (dt1, dt2) = (0.013, 0.021);
            let a = UnitQuaternion::from_angular_rate(w, dt1)
                .mul(UnitQuaternion::from_angular_rate(w, dt2));
            let b = UnitQuaternion::from_angular_rate(w, dt1 + dt2);
            assert_abs_diff_eq!(a.w, b.w, epsilon = 1e-9);
            assert_abs_diff_eq!(a.x, b.x, epsilon = 1e-9);
            assert_abs_diff_eq!(a.y, b.y, epsilon = 1e-9);
            assert_abs_diff_eq!(a.z, b.z, epsilon = 1e-9);
        }
    }

    #[test]
    fn matrix_is_a_homomorphism() {
        let mut rng = crate::rng::root(7);
        for _ in 0..100 {
            let a = random_quat(&mut rng);
            let b = random_quat(&mut rng);
            let lhs = a.mul(b).to_matrix();
            let rhs = mat3_mul(&a.to_matrix(), &b.to_matrix());
            for i in 0..3 {
                for j in 0..3 {
                    assert_abs_diff_eq!(lhs[i][j], rhs[i][j], epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn rate_between_round_trips_exactly() {
        let mut rng = crate::rng::root(8);
        for _ in 0..200 {
            let from = random_quat(&mut rng);
            let to = random_quat(&mut rng);
            let dt = 0.005;
            let rate = UnitQuaternion::rate_between(from, to, dt);
            let rebuilt = from.mul(UnitQuaternion::from_angular_rate(rate, dt));
            // Same rotation up to double-cover sign.
            let dot = (rebuilt.w * to.w + rebuilt.x * to.x + rebuilt.y * to.y + rebuilt.z * to.z)
                .abs();
            assert_abs_diff_eq!(dot, 1.0, epsilon = 1e-12);
        }
    }
}
