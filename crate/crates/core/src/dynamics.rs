//! Linearized trunk dynamics with an arm-disturbance wrench:
//!
//! `qdd = M f - g + A f_a + B tau_a`
//!
//! with `qdd = (linear, angular)`, foot forces `f` stacked FL, FR, RL, RR,
//! and the disturbance `(f_a, tau_a)` in world-aligned axes at the COM.
//! The angular rows map world torques into the yaw-aligned body frame
//! before applying the body inertia, `I_B^-1 Rz^T`.

use nalgebra::{SMatrix, Vector6};

use crate::error::{ensure_finite, Error, Result};
use crate::sim::arm::ArmModel;
use crate::state::{
    rotation_z, skew, ArmState, BodyState, DisturbanceParams, Mat3, RobotParams, Vec12, Vec3, Vec6, GRAVITY, LEG_COUNT,
};

pub type Mat6x12 = SMatrix<f64, 6, 12>;
pub type Mat6x3 = SMatrix<f64, 6, 3>;

/// Ground contact tolerance for stance feet, m.
pub const STANCE_HEIGHT_TOLERANCE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsMatrices {
    /// Foot force map; columns of swing feet are zero.
    pub m: Mat6x12,
    /// Disturbance force map.
    pub a: Mat6x3,
    /// Disturbance torque map.
    pub b: Mat6x3,
    /// `(g, 0)` with `g = (0, 0, 9.81)`.
    pub gravity_vec: Vec6,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FootGeometry {
    /// World frame, m.
    pub foot_positions: [Vec3; LEG_COUNT],
    pub stance_mask: [bool; LEG_COUNT],
}

impl FootGeometry {
    pub fn new(foot_positions: [Vec3; LEG_COUNT], stance_mask: [bool; LEG_COUNT]) -> Result<Self> {
        let g = Self {
            foot_positions,
            stance_mask,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (p, &stance) in self.foot_positions.iter().zip(&self.stance_mask) {
            ensure_finite("foot position", p.as_slice())?;
            if stance && p.z.abs() > STANCE_HEIGHT_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "stance foot at z = {:.4} m is off the ground",
                    p.z
                )));
            }
        }
        Ok(())
    }

    pub fn stance_count(&self) -> usize {
        self.stance_mask.iter().filter(|&&s| s).count()
    }
}

pub fn build_matrices(params: &RobotParams, body: &BodyState, feet: &FootGeometry) -> Result<DynamicsMatrices> {
    feet.validate()?;
    if feet.stance_count() == 0 {
        return Err(Error::NoStance);
    }
    let inertia_inv = params
        .trunk_inertia
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Parameter("trunk inertia is singular".into()))?;
    if params.mass <= 0.0 {
        return Err(Error::Parameter("mass must be positive".into()));
    }
    let rz_t = rotation_z(body.yaw())?.transpose();
    let angular = inertia_inv * rz_t;
    let lin = Mat3::identity() / params.mass;

    let mut m = Mat6x12::zeros();
    for (i, (foot, &stance)) in feet.foot_positions.iter().zip(&feet.stance_mask).enumerate() {
        if !stance {
            continue;
        }
        let r = foot - body.position;
        m.fixed_view_mut::<3, 3>(0, 3 * i).copy_from(&lin);
        m.fixed_view_mut::<3, 3>(3, 3 * i).copy_from(&(angular * skew(&r)));
    }
    let mut a = Mat6x3::zeros();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&lin);
    let mut b = Mat6x3::zeros();
    b.fixed_view_mut::<3, 3>(3, 0).copy_from(&angular);

    Ok(DynamicsMatrices {
        m,
        a,
        b,
        gravity_vec: Vector6::new(0.0, 0.0, GRAVITY, 0.0, 0.0, 0.0),
    })
}

/// `qdd = M f - g + A f_a + B tau_a`.
pub fn body_acceleration(dyn_: &DynamicsMatrices, f: &Vec12, dist: &DisturbanceParams) -> Vec6 {
    dyn_.m * f - dyn_.gravity_vec + dyn_.a * dist.force + dyn_.b * dist.torque
}

/// Slice-based variant for callers holding dynamically sized force vectors.
pub fn body_acceleration_slice(dyn_: &DynamicsMatrices, f: &[f64], dist: &DisturbanceParams) -> Result<Vec6> {
    if f.len() != 3 * LEG_COUNT {
        return Err(Error::Dimension {
            context: "foot force vector",
            expected: 3 * LEG_COUNT,
            got: f.len(),
        });
    }
    Ok(body_acceleration(dyn_, &Vec12::from_column_slice(f), dist))
}

/// Quasi-static wrench the arm exerts on the trunk, about the COM in
/// world-aligned axes.
///
/// Gravity acts on every link and gripper point mass; `tip_force` (world
/// frame) is shared evenly among the arm tips. `orientation` is the trunk
/// body-to-world rotation.
pub fn arm_reaction_wrench(
    arm_model: &ArmModel,
    arm_state: &ArmState,
    orientation: &Mat3,
    tip_force: &Vec3,
) -> Result<DisturbanceParams> {
    let (masses, tips) = arm_model.kinematics(&arm_state.joint_angles)?;
    let gravity = Vec3::new(0.0, 0.0, -GRAVITY);
    let mut force = Vec3::zeros();
    let mut torque = Vec3::zeros();
    for pm in &masses {
        let w = gravity * pm.mass;
        force += w;
        torque += (orientation * pm.position).cross(&w);
    }
    if !tips.is_empty() {
        let share = tip_force / tips.len() as f64;
        for tip in &tips {
            force += share;
            torque += (orientation * tip).cross(&share);
        }
    }
    Ok(DisturbanceParams { force, torque })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::arm::ArmModel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn params_identity(mass: f64) -> RobotParams {
        RobotParams {
            mass,
            trunk_inertia: Mat3::identity(),
            ..RobotParams::default()
        }
    }

    fn square_stance(body_height: f64) -> (BodyState, FootGeometry) {
        let body = BodyState::standing(body_height);
        let feet = FootGeometry::new(
            [
                Vec3::new(0.2, 0.1, 0.0),
                Vec3::new(0.2, -0.1, 0.0),
                Vec3::new(-0.2, 0.1, 0.0),
                Vec3::new(-0.2, -0.1, 0.0),
            ],
            [true; 4],
        )
        .unwrap();
        (body, feet)
    }

    #[test]
    fn identity_inertia_column_blocks() {
        let body = BodyState::standing(0.3);
        let feet = FootGeometry::new(
            [
                Vec3::new(0.2, 0.1, 0.0),
                Vec3::new(0.2, -0.1, 0.0),
                Vec3::new(-0.2, 0.1, 0.0),
                Vec3::new(-0.2, -0.1, 0.0),
            ],
            [true; 4],
        )
        .unwrap();
        let d = build_matrices(&params_identity(10.0), &body, &feet).unwrap();
        let top = d.m.fixed_view::<3, 3>(0, 0).into_owned();
        let bottom = d.m.fixed_view::<3, 3>(3, 0).into_owned();
        assert!((top - Mat3::identity() * 0.1).amax() < 1e-15);
        assert!((bottom - skew(&Vec3::new(0.2, 0.1, -0.3))).amax() < 1e-15);
        assert!((d.a.fixed_view::<3, 3>(0, 0) - Mat3::identity() * 0.1).amax() == 0.0);
        assert_eq!(d.a.fixed_view::<3, 3>(3, 0).amax(), 0.0);
        assert_eq!(d.b.fixed_view::<3, 3>(0, 0).amax(), 0.0);
    }

    /// Plain triple-loop product, independent of nalgebra's matmul.
    fn dense_mul(a: &Mat3, b: &Mat3) -> Mat3 {
        let mut c = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a[(i, k)] * b[(k, j)];
                }
                c[(i, j)] = s;
            }
        }
        c
    }

    #[test]
    fn torque_block_matches_dense_multiply_for_random_yaw() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut params = RobotParams::default();
        params.trunk_inertia = Mat3::new(0.07, 0.002, 0.001, 0.002, 0.2, 0.003, 0.001, 0.003, 0.22);
        let inv = params.trunk_inertia.try_inverse().unwrap();
        for _ in 0..50 {
            let yaw: f64 = rng.random_range(-3.1..3.1);
            let (mut body, feet) = square_stance(0.3);
            body.orientation_rpy.z = yaw;
            let d = build_matrices(&params, &body, &feet).unwrap();
            let (s, c) = yaw.sin_cos();
            let rz_t = Mat3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
            let oracle = dense_mul(&inv, &rz_t);
            assert!((d.b.fixed_view::<3, 3>(3, 0) - oracle).amax() < 1e-12);
        }
    }

    #[test]
    fn swing_columns_are_zero() {
        let (body, mut feet) = square_stance(0.3);
        feet.stance_mask = [true, false, false, true];
        feet.foot_positions[1].z = 0.08;
        let d = build_matrices(&RobotParams::default(), &body, &feet).unwrap();
        assert_eq!(d.m.fixed_columns::<3>(3).amax(), 0.0);
        assert_eq!(d.m.fixed_columns::<3>(6).amax(), 0.0);
        assert!(d.m.fixed_columns::<3>(0).amax() > 0.0);
    }

    #[test]
    fn all_swing_and_singular_inertia_fail() {
        let (body, mut feet) = square_stance(0.3);
        let params = RobotParams::default();
        let mut singular = params.clone();
        singular.trunk_inertia = Mat3::from_diagonal(&Vec3::new(1.0, 0.0, 1.0));
        assert!(matches!(
            build_matrices(&singular, &body, &feet),
            Err(Error::Parameter(_))
        ));
        feet.stance_mask = [false; 4];
        assert!(matches!(build_matrices(&params, &body, &feet), Err(Error::NoStance)));
    }

    #[test]
    fn stance_foot_off_ground_rejected() {
        let (_, mut feet) = square_stance(0.3);
        feet.foot_positions[2].z = 0.05;
        assert!(feet.validate().is_err());
    }

    #[test]
    fn static_balance_and_free_fall() {
        let params = params_identity(10.0);
        let (body, feet) = square_stance(0.3);
        let d = build_matrices(&params, &body, &feet).unwrap();
        let mut f = Vec12::zeros();
        for i in 0..4 {
            f[3 * i + 2] = params.mass * GRAVITY / 4.0;
        }
        let qdd = body_acceleration(&d, &f, &DisturbanceParams::zero());
        assert!(qdd.amax() < 1e-10);

        let qdd = body_acceleration(&d, &Vec12::zeros(), &DisturbanceParams::zero());
        assert_eq!(qdd, Vector6::new(0.0, 0.0, -GRAVITY, 0.0, 0.0, 0.0));

        let lift = DisturbanceParams::new(Vec3::new(0.0, 0.0, params.mass * GRAVITY), Vec3::zeros()).unwrap();
        let qdd = body_acceleration(&d, &Vec12::zeros(), &lift);
        assert!(qdd.fixed_rows::<3>(0).amax() < 1e-12);
    }

    #[test]
    fn slice_variant_checks_length() {
        let (body, feet) = square_stance(0.3);
        let d = build_matrices(&RobotParams::default(), &body, &feet).unwrap();
        assert!(body_acceleration_slice(&d, &[0.0; 11], &DisturbanceParams::zero()).is_err());
        assert!(body_acceleration_slice(&d, &[0.0; 12], &DisturbanceParams::zero()).is_ok());
    }

    #[test]
    fn zeroing_force_equals_removing_columns() {
        let params = RobotParams::default();
        let (body, feet) = square_stance(0.3);
        let full = build_matrices(&params, &body, &feet).unwrap();
        let mut lifted = feet;
        lifted.stance_mask[2] = false;
        let partial = build_matrices(&params, &body, &lifted).unwrap();
        let f = Vec12::from_fn(|i, _| (i as f64 * 0.7).sin() * 20.0);
        let mut f_zeroed = f;
        f_zeroed.fixed_rows_mut::<3>(6).fill(0.0);
        let dist = DisturbanceParams::zero();
        let a = body_acceleration(&full, &f_zeroed, &dist);
        let b = body_acceleration(&partial, &f, &dist);
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn arm_wrench_examples() {
        let massless = ArmModel::massless();
        let q = massless.folded_pose();
        let w = arm_reaction_wrench(
            &massless,
            &ArmState::new(q, 0.0).unwrap(),
            &Mat3::identity(),
            &Vec3::zeros(),
        )
        .unwrap();
        assert_eq!(w.force, Vec3::zeros());
        assert_eq!(w.torque, Vec3::zeros());

        // One massless link of 0.5 m ending in a 1 kg gripper, mount at the COM.
        let point = ArmModel {
            name: "point".into(),
            link_lengths: vec![0.5],
            link_masses: vec![0.0],
            gripper_mass: 1.0,
            mounts: vec![Vec3::zeros()],
            joint_limits: vec![(-1.0, 1.0)],
        };
        // With a single joint the only link is vertical; rotate the trunk so it points along +x.
        let pitch_down = crate::state::rotation_rpy(&Vec3::new(0.0, std::f64::consts::FRAC_PI_2, 0.0));
        let w = arm_reaction_wrench(
            &point,
            &ArmState::new(vec![0.0], 0.0).unwrap(),
            &pitch_down,
            &Vec3::zeros(),
        )
        .unwrap();
        assert!((w.force - Vec3::new(0.0, 0.0, -9.81)).norm() < 1e-12);
        assert!((w.torque - Vec3::new(0.0, 4.905, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn arm_wrench_matches_per_link_loop() {
        let arm = ArmModel::regular();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let q: Vec<f64> = arm
                .joint_limits
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..hi))
                .collect();
            let tip_force = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0);
            let w = arm_reaction_wrench(
                &arm,
                &ArmState::new(q.clone(), 0.0).unwrap(),
                &Mat3::identity(),
                &tip_force,
            )
            .unwrap();

            // Independent forward kinematics: explicit per-link accumulation.
            let mount = arm.mounts[0];
            let (sy, cy) = q[0].sin_cos();
            let mut joint = mount + Vec3::new(0.0, 0.0, arm.link_lengths[0]);
            let mut f = Vec3::new(0.0, 0.0, -9.81 * arm.link_masses[0]);
            let base_mid = mount + Vec3::new(0.0, 0.0, arm.link_lengths[0] / 2.0);
            let mut t = base_mid.cross(&f);
            let mut angle = 0.0;
            for link in 1..4 {
                angle += q[link];
                let dir = Vec3::new(angle.cos() * cy, angle.cos() * sy, angle.sin());
                let end = joint + dir * arm.link_lengths[link];
                let wl = Vec3::new(0.0, 0.0, -9.81 * arm.link_masses[link]);
                f += wl;
                t += ((joint + end) / 2.0).cross(&wl);
                joint = end;
            }
            let wg = Vec3::new(0.0, 0.0, -9.81 * arm.gripper_mass);
            f += wg + tip_force;
            t += joint.cross(&wg) + joint.cross(&tip_force);
            assert!((w.force - f).norm() < 1e-12);
            assert!((w.torque - t).norm() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn acceleration_is_affine(
            seed in 0u64..1000,
            scale in -3.0f64..3.0,
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (body, feet) = square_stance(0.3);
            let d = build_matrices(&RobotParams::default(), &body, &feet).unwrap();
            let mut rand_vec = || Vec12::from_fn(|_, _| rng.random_range(-50.0..50.0));
            let f1 = rand_vec();
            let f2 = rand_vec();
            let w1 = DisturbanceParams::new(f1.fixed_rows::<3>(0).into(), f1.fixed_rows::<3>(3).into()).unwrap();
            let w2 = DisturbanceParams::new(f2.fixed_rows::<3>(6).into(), f2.fixed_rows::<3>(9).into()).unwrap();
            let zero = body_acceleration(&d, &Vec12::zeros(), &DisturbanceParams::zero());
            let lhs = body_acceleration(&d, &(f1 + f2 * scale), &DisturbanceParams {
                force: w1.force + w2.force * scale,
                torque: w1.torque + w2.torque * scale,
            }) - zero;
            let rhs = (body_acceleration(&d, &f1, &w1) - zero) + (body_acceleration(&d, &f2, &w2) - zero) * scale;
            prop_assert!((lhs - rhs).amax() < 1e-10);
        }

        #[test]
        fn angular_acceleration_invariant_under_yaw(yaw in -3.1f64..3.1, seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let params = RobotParams::default();
            let (body, feet) = square_stance(0.3);
            let f = Vec12::from_fn(|_, _| rng.random_range(-30.0..30.0));
            let d0 = build_matrices(&params, &body, &feet).unwrap();
            let rz = rotation_z(yaw).unwrap();
            let mut rbody = body;
            rbody.orientation_rpy.z = yaw;
            rbody.position = rz * body.position;
            let mut rfeet = feet;
            let mut rf = f;
            for i in 0..4 {
                rfeet.foot_positions[i] = rz * feet.foot_positions[i];
                let fi: Vec3 = f.fixed_rows::<3>(3 * i).into();
                rf.fixed_rows_mut::<3>(3 * i).copy_from(&(rz * fi));
            }
            let d1 = build_matrices(&params, &rbody, &rfeet).unwrap();
            let a0 = body_acceleration(&d0, &f, &DisturbanceParams::zero());
            let a1 = body_acceleration(&d1, &rf, &DisturbanceParams::zero());
            prop_assert!((a0.fixed_rows::<3>(3) - a1.fixed_rows::<3>(3)).amax() < 1e-9);
        }
    }
}
