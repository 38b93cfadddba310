//! Three-joint leg kinematics (hip abduction, hip pitch, knee) used for the
//! force-to-torque map.

use nalgebra::SMatrix;

use crate::state::{Mat3, Vec3, LEG_COUNT};

pub type Mat12 = SMatrix<f64, 12, 12>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LegKinematics {
    pub thigh: f64,
    pub calf: f64,
}

impl Default for LegKinematics {
    fn default() -> Self {
        Self { thigh: 0.2, calf: 0.2 }
    }
}

impl LegKinematics {
    /// Foot position relative to the hip, hip frame.
    pub fn forward(&self, q: &Vec3) -> Vec3 {
        let (s0, c0) = q.x.sin_cos();
        let (s1, c1) = q.y.sin_cos();
        let (s12, c12) = (q.y + q.z).sin_cos();
        let x = -self.thigh * s1 - self.calf * s12;
        let z = -self.thigh * c1 - self.calf * c12;
        Vec3::new(x, -s0 * z, c0 * z)
    }

    /// Joint angles reaching `p` (hip frame) with the knee bent backwards.
    /// Targets outside the workspace are projected onto its boundary.
    pub fn inverse(&self, p: &Vec3) -> Vec3 {
        let q0 = p.y.atan2(-p.z);
        let planar_z = -(p.y * p.y + p.z * p.z).sqrt();
        let (big_x, big_z) = (-p.x, -planar_z);
        let d2 = big_x * big_x + big_z * big_z;
        let (l1, l2) = (self.thigh, self.calf);
        let cos_knee = ((d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
        let q2 = -cos_knee.acos();
        let q1 = big_x.atan2(big_z) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
        Vec3::new(q0, q1, q2)
    }

    /// `d foot / d q` in the hip frame.
    pub fn jacobian(&self, q: &Vec3) -> Mat3 {
        let (s0, c0) = q.x.sin_cos();
        let (s1, c1) = q.y.sin_cos();
        let (s12, c12) = (q.y + q.z).sin_cos();
        let (l1, l2) = (self.thigh, self.calf);
        let z = -l1 * c1 - l2 * c12;
        // planar partials (x, z) for q1 and q2
        let (x1, z1) = (-l1 * c1 - l2 * c12, l1 * s1 + l2 * s12);
        let (x2, z2) = (-l2 * c12, l2 * s12);
        Mat3::new(
            0.0,
            x1,
            x2, //
            -c0 * z,
            -s0 * z1,
            -s0 * z2, //
            -s0 * z,
            c0 * z1,
            c0 * z2,
        )
    }
}

/// Block-diagonal 12x12 Jacobian from per-leg 3x3 blocks.
pub fn block_diagonal(blocks: &[Mat3; LEG_COUNT]) -> Mat12 {
    let mut j = Mat12::zeros();
    for (i, b) in blocks.iter().enumerate() {
        j.fixed_view_mut::<3, 3>(3 * i, 3 * i).copy_from(b);
    }
    j
}

/// World-frame leg Jacobians for the current trunk pose and foot positions.
pub fn world_jacobians(
    legs: &LegKinematics,
    trunk_position: &Vec3,
    trunk_rotation: &Mat3,
    hip_offsets: &[Vec3; LEG_COUNT],
    feet: &[Vec3; LEG_COUNT],
) -> [Mat3; LEG_COUNT] {
    std::array::from_fn(|i| {
        let hip = trunk_position + trunk_rotation * hip_offsets[i];
        let local = trunk_rotation.transpose() * (feet[i] - hip);
        let q = legs.inverse(&local);
        trunk_rotation * legs.jacobian(&q)
    })
}
