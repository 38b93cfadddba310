//! Shared domain types and frame conventions.
//!
//! World frame is z-up. Body frame is x-forward, y-left. Orientation is
//! stored as roll-pitch-yaw with `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
//! Generalized accelerations are laid out as `(linear, angular)`.

use nalgebra::{Matrix3, SVector, Vector3, Vector6};

use crate::error::{ensure_finite, Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Vec12 = SVector<f64, 12>;
pub type Mat3 = Matrix3<f64>;

pub const GRAVITY: f64 = 9.81;
pub const LEG_COUNT: usize = 4;
pub const LATENT_DIM: usize = 2;

/// Proper rotation about the world z axis.
pub fn rotation_z(yaw: f64) -> Result<Mat3> {
    if !yaw.is_finite() {
        return Err(Error::InvalidArgument("yaw must be finite".into()));
    }
    let (s, c) = yaw.sin_cos();
    Ok(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
}

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Body-to-world rotation for a roll-pitch-yaw triple.
pub fn rotation_rpy(rpy: &Vec3) -> Mat3 {
    let (sr, cr) = rpy.x.sin_cos();
    let (sp, cp) = rpy.y.sin_cos();
    let (sy, cy) = rpy.z.sin_cos();
    Mat3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w >= std::f64::consts::PI {
        w - two_pi
    } else {
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyState {
    /// World frame, m.
    pub position: Vec3,
    /// Roll, pitch, yaw in rad.
    pub orientation_rpy: Vec3,
    /// World frame, m/s.
    pub linear_velocity: Vec3,
    /// Body frame, rad/s.
    pub angular_velocity: Vec3,
    pub timestamp: f64,
}

impl BodyState {
    pub fn new(
        position: Vec3,
        orientation_rpy: Vec3,
        linear_velocity: Vec3,
        angular_velocity: Vec3,
        timestamp: f64,
    ) -> Result<Self> {
        let s = Self {
            position,
            orientation_rpy,
            linear_velocity,
            angular_velocity,
            timestamp,
        };
        s.validate()?;
        Ok(s)
    }

    /// Level trunk at rest at the given height.
    pub fn standing(height: f64) -> Self {
        Self {
            position: Vec3::new(0.0, 0.0, height),
            orientation_rpy: Vec3::zeros(),
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
            timestamp: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("position", self.position.as_slice())?;
        ensure_finite("orientation", self.orientation_rpy.as_slice())?;
        ensure_finite("linear velocity", self.linear_velocity.as_slice())?;
        ensure_finite("angular velocity", self.angular_velocity.as_slice())?;
        ensure_finite("timestamp", &[self.timestamp])?;
        let half_pi = std::f64::consts::FRAC_PI_2;
        if self.roll().abs() >= half_pi || self.pitch().abs() >= half_pi {
            return Err(Error::InvalidArgument(
                "roll and pitch must lie in (-pi/2, pi/2)".into(),
            ));
        }
        let pi = std::f64::consts::PI;
        if !(-pi..pi).contains(&self.yaw()) {
            return Err(Error::InvalidArgument("yaw must lie in [-pi, pi)".into()));
        }
        Ok(())
    }

    pub fn roll(&self) -> f64 {
        self.orientation_rpy.x
    }

    pub fn pitch(&self) -> f64 {
        self.orientation_rpy.y
    }

    pub fn yaw(&self) -> f64 {
        self.orientation_rpy.z
    }

    pub fn height(&self) -> f64 {
        self.position.z
    }

    pub fn rotation(&self) -> Mat3 {
        rotation_rpy(&self.orientation_rpy)
    }

    /// Linear velocity expressed in the yaw-aligned heading frame.
    pub fn heading_velocity(&self) -> Vec3 {
        let (s, c) = self.yaw().sin_cos();
        let v = &self.linear_velocity;
        Vec3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmState {
    pub joint_angles: Vec<f64>,
    pub timestamp: f64,
}

impl ArmState {
    pub fn new(joint_angles: Vec<f64>, timestamp: f64) -> Result<Self> {
        ensure_finite("arm joint angles", &joint_angles)?;
        ensure_finite("timestamp", &[timestamp])?;
        Ok(Self {
            joint_angles,
            timestamp,
        })
    }

    pub fn dof(&self) -> usize {
        self.joint_angles.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmCommand {
    pub desired_joint_positions: Vec<f64>,
}

impl ArmCommand {
    pub fn new(desired_joint_positions: Vec<f64>) -> Result<Self> {
        ensure_finite("arm command", &desired_joint_positions)?;
        Ok(Self {
            desired_joint_positions,
        })
    }
}

/// Saturation bounds for the estimated disturbance wrench.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisturbanceLimits {
    pub max_force: f64,
    pub max_torque: f64,
}

impl Default for DisturbanceLimits {
    fn default() -> Self {
        Self {
            max_force: 30.0,
            max_torque: 10.0,
        }
    }
}

/// A wrench acting on the trunk at the COM, in world-aligned axes.
///
/// Used both for the estimator action `(f_a, tau_a)` and for the true arm
/// reaction wrench computed by the simulator.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DisturbanceParams {
    pub force: Vec3,
    pub torque: Vec3,
}

impl DisturbanceParams {
    pub fn new(force: Vec3, torque: Vec3) -> Result<Self> {
        ensure_finite("disturbance force", force.as_slice())?;
        ensure_finite("disturbance torque", torque.as_slice())?;
        Ok(Self { force, torque })
    }

    /// Like [`DisturbanceParams::new`], additionally enforcing the saturation bounds.
    pub fn bounded(force: Vec3, torque: Vec3, limits: &DisturbanceLimits) -> Result<Self> {
        let d = Self::new(force, torque)?;
        if !d.within(limits) {
            return Err(Error::InvalidArgument(format!(
                "wrench exceeds limits |f|<={} |tau|<={}",
                limits.max_force, limits.max_torque
            )));
        }
        Ok(d)
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn within(&self, limits: &DisturbanceLimits) -> bool {
        self.force.amax() <= limits.max_force && self.torque.amax() <= limits.max_torque
    }

    pub fn clamped(&self, limits: &DisturbanceLimits) -> Self {
        let f = limits.max_force;
        let t = limits.max_torque;
        Self {
            force: self.force.map(|v| v.clamp(-f, f)),
            torque: self.torque.map(|v| v.clamp(-t, t)),
        }
    }

    pub fn as_vec6(&self) -> Vec6 {
        Vec6::new(
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        )
    }

    pub fn from_vec6(v: &Vec6) -> Self {
        Self {
            force: v.fixed_rows::<3>(0).into_owned(),
            torque: v.fixed_rows::<3>(3).into_owned(),
        }
    }
}

impl std::ops::Add for DisturbanceParams {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            force: self.force + rhs.force,
            torque: self.torque + rhs.torque,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    /// Heading frame (vx, vy), m/s.
    pub desired_linear_velocity: [f64; 2],
    pub desired_yaw_rate: f64,
    pub desired_roll: f64,
    pub desired_pitch: f64,
    pub desired_height: f64,
}

impl TrajectoryPoint {
    pub fn new(
        desired_linear_velocity: [f64; 2],
        desired_yaw_rate: f64,
        desired_roll: f64,
        desired_pitch: f64,
        desired_height: f64,
    ) -> Result<Self> {
        let t = Self {
            desired_linear_velocity,
            desired_yaw_rate,
            desired_roll,
            desired_pitch,
            desired_height,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn stand(height: f64) -> Self {
        Self {
            desired_linear_velocity: [0.0; 2],
            desired_yaw_rate: 0.0,
            desired_roll: 0.0,
            desired_pitch: 0.0,
            desired_height: height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(
            "trajectory point",
            &[
                self.desired_linear_velocity[0],
                self.desired_linear_velocity[1],
                self.desired_yaw_rate,
                self.desired_roll,
                self.desired_pitch,
                self.desired_height,
            ],
        )?;
        if self.desired_height <= 0.0 {
            return Err(Error::InvalidArgument("desired height must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LatentState {
    pub z: [f64; LATENT_DIM],
}

impl LatentState {
    pub fn new(z: [f64; LATENT_DIM]) -> Result<Self> {
        ensure_finite("latent state", &z)?;
        Ok(Self { z })
    }
}

/// Rigid-trunk parameters of the quadruped.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotParams {
    pub mass: f64,
    pub trunk_inertia: Mat3,
    /// Hip positions relative to the COM, body frame. Order: FL, FR, RL, RR.
    pub hip_offsets: [Vec3; LEG_COUNT],
    pub friction_coefficient: f64,
    pub min_normal_force: f64,
    pub max_normal_force: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            mass: 12.0,
            trunk_inertia: Mat3::from_diagonal(&Vec3::new(0.05, 0.1, 0.11)),
            hip_offsets: [
                Vec3::new(0.18, 0.12, 0.0),
                Vec3::new(0.18, -0.12, 0.0),
                Vec3::new(-0.18, 0.12, 0.0),
                Vec3::new(-0.18, -0.12, 0.0),
            ],
            friction_coefficient: 0.6,
            min_normal_force: 5.0,
            max_normal_force: 200.0,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("mass", &[self.mass])?;
        ensure_finite("trunk inertia", self.trunk_inertia.as_slice())?;
        for h in &self.hip_offsets {
            ensure_finite("hip offset", h.as_slice())?;
        }
        if self.mass <= 0.0 {
            return Err(Error::Parameter("mass must be positive".into()));
        }
        let i = &self.trunk_inertia;
        if (i - i.transpose()).amax() > 1e-12 || i.cholesky().is_none() {
            return Err(Error::Parameter(
                "trunk inertia must be symmetric positive definite".into(),
            ));
        }
        if !(self.friction_coefficient > 0.0 && self.friction_coefficient <= 2.0) {
            return Err(Error::Parameter("friction coefficient must lie in (0, 2]".into()));
        }
        if !(self.min_normal_force >= 0.0) {
            return Err(Error::Parameter("minimum normal force must be >= 0".into()));
        }
        if !(self.max_normal_force > 0.0) {
            return Err(Error::Parameter("maximum normal force must be > 0".into()));
        }
        Ok(())
    }

    pub fn weight(&self) -> f64 {
        self.mass * GRAVITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn rotation_z_identity_and_quarter_turn() {
        assert_eq!(rotation_z(0.0).unwrap(), Mat3::identity());
        let r = rotation_z(FRAC_PI_2).unwrap();
        let expected = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r - expected).amax() < 1e-15);
    }

    #[test]
    fn rotation_z_rejects_non_finite() {
        assert!(matches!(rotation_z(f64::NAN), Err(Error::InvalidArgument(_))));
        assert!(rotation_z(f64::INFINITY).is_err());
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        let r = skew(&Vec3::x()) * Vec3::y();
        assert_eq!(r, Vec3::z());
    }

    #[test]
    fn rotation_z_is_orthonormal_for_many_yaws() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let yaw: f64 = rng.random_range(-10.0..10.0);
            let r = rotation_z(yaw).unwrap();
            assert!((r.transpose() * r - Mat3::identity()).amax() < 1e-10);
            assert!((r.determinant() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rotation_rpy_matches_yaw_only() {
        let r = rotation_rpy(&Vec3::new(0.0, 0.0, 0.7));
        assert!((r - rotation_z(0.7).unwrap()).amax() < 1e-15);
    }

    #[test]
    fn body_state_rejects_nan_and_gimbal_region() {
        let z = Vec3::zeros();
        assert!(BodyState::new(Vec3::new(0.0, 0.0, f64::NAN), z, z, z, 0.0).is_err());
        assert!(BodyState::new(z, Vec3::new(FRAC_PI_2, 0.0, 0.0), z, z, 0.0).is_err());
        assert!(BodyState::new(z, Vec3::new(0.0, 0.0, std::f64::consts::PI), z, z, 0.0).is_err());
        assert!(BodyState::new(z, Vec3::new(0.1, -0.2, -std::f64::consts::PI), z, z, 0.0).is_ok());
    }

    #[test]
    fn other_types_reject_non_finite() {
        assert!(ArmState::new(vec![0.0, f64::NAN], 0.0).is_err());
        assert!(ArmCommand::new(vec![f64::INFINITY]).is_err());
        assert!(LatentState::new([0.0, f64::NAN]).is_err());
        assert!(DisturbanceParams::new(Vec3::new(f64::NAN, 0.0, 0.0), Vec3::zeros()).is_err());
        assert!(TrajectoryPoint::new([0.0, 0.0], 0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn disturbance_bounds() {
        let lim = DisturbanceLimits::default();
        assert!(DisturbanceParams::bounded(Vec3::new(30.0, 0.0, 0.0), Vec3::zeros(), &lim).is_ok());
        assert!(DisturbanceParams::bounded(Vec3::new(30.1, 0.0, 0.0), Vec3::zeros(), &lim).is_err());
        let c = DisturbanceParams::new(Vec3::new(-50.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 11.0))
            .unwrap()
            .clamped(&lim);
        assert_eq!(c.force.x, -30.0);
        assert_eq!(c.torque.z, 10.0);
    }

    #[test]
    fn robot_params_validation() {
        RobotParams::default().validate().unwrap();
        let mut p = RobotParams::default();
        p.trunk_inertia[(0, 1)] = 0.5;
        assert!(p.validate().is_err());
        let mut p = RobotParams::default();
        p.friction_coefficient = 2.5;
        assert!(p.validate().is_err());
        let mut p = RobotParams::default();
        p.trunk_inertia = Mat3::from_diagonal(&Vec3::new(1.0, -1.0, 1.0));
        assert!(p.validate().is_err());
    }

    #[test]
    fn wrap_angle_range() {
        let pi = std::f64::consts::PI;
        assert_eq!(wrap_angle(pi), -pi);
        assert!((wrap_angle(3.0 * pi / 2.0) + pi / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rotation_z_inverse_symmetry(yaw in -20.0f64..20.0) {
            let p = rotation_z(yaw).unwrap() * rotation_z(-yaw).unwrap();
            prop_assert!((p - Mat3::identity()).amax() < 1e-12);
        }

        #[test]
        fn skew_is_cross_product(
            v in proptest::array::uniform3(-10.0f64..10.0),
            w in proptest::array::uniform3(-10.0f64..10.0),
        ) {
            let v = Vec3::from(v);
            let w = Vec3::from(w);
            let s = skew(&v);
            prop_assert_eq!(s + s.transpose(), Mat3::zeros());
            prop_assert!((s * w - v.cross(&w)).amax() < 1e-12);
            prop_assert!((s * w + skew(&w) * v).amax() < 1e-12);
            prop_assert!((s * v).amax() < 1e-12);
        }
    }
}
