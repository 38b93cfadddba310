//! Trunk-centric plant.
//!
//! Stance forces recovered from the leg torques act directly on the rigid
//! trunk through the same linearized model the controller uses, plus the
//! true arm wrench. Swing feet are light point masses pushed by their leg
//! forces; stance feet are pinned. The arm is kinematic and tracks its
//! command through a first-order lag.

use nalgebra::Matrix3;

use crate::controller::{world_jacobians, LegKinematics};
use crate::dynamics::{arm_reaction_wrench, body_acceleration, build_matrices, FootGeometry};
use crate::error::{Error, Result};
use crate::sim::arm::ArmModel;
use crate::state::{
    wrap_angle, ArmCommand, ArmState, BodyState, DisturbanceParams, RobotParams, Vec12, Vec3, Vec6, GRAVITY, LEG_COUNT,
};

/// Trunk height at or below which the robot counts as fallen, m.
pub const FALL_HEIGHT: f64 = 0.05;
/// Roll or pitch magnitude at or above which the robot counts as fallen, rad.
pub const FALL_TILT: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub physics_dt: f64,
    pub lowlevel_period: f64,
    pub highlevel_period: f64,
    pub episode_length: f64,
    pub gravity: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            physics_dt: 0.001,
            lowlevel_period: 0.002,
            highlevel_period: 0.02,
            episode_length: 10.0,
            gravity: GRAVITY,
            seed: 0,
        }
    }
}

fn ratio(period: f64, dt: f64, what: &str) -> Result<usize> {
    let r = period / dt;
    let n = r.round();
    if !(n >= 1.0) || (r - n).abs() > 1e-6 {
        return Err(Error::Parameter(format!(
            "{what} ({period}) must be a positive integer multiple of its base period ({dt})"
        )));
    }
    Ok(n as usize)
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.physics_dt > 0.0 && self.physics_dt.is_finite()) {
            return Err(Error::Parameter("physics_dt must be positive".into()));
        }
        if !(self.gravity.is_finite() && self.gravity >= 0.0) {
            return Err(Error::Parameter("gravity must be finite and non-negative".into()));
        }
        if !(self.episode_length > 0.0 && self.episode_length.is_finite()) {
            return Err(Error::Parameter("episode_length must be positive".into()));
        }
        self.physics_per_lowlevel()?;
        ratio(self.highlevel_period, self.physics_dt, "highlevel_period")?;
        self.lowlevel_per_highlevel()?;
        Ok(())
    }

    pub fn physics_per_lowlevel(&self) -> Result<usize> {
        ratio(self.lowlevel_period, self.physics_dt, "lowlevel_period")
    }

    pub fn lowlevel_per_highlevel(&self) -> Result<usize> {
        ratio(self.highlevel_period, self.lowlevel_period, "highlevel_period")
    }

    /// High-level steps in one episode.
    pub fn highlevel_steps(&self) -> usize {
        (self.episode_length / self.highlevel_period).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub body: BodyState,
    /// World frame foot positions.
    pub feet: [Vec3; LEG_COUNT],
    pub foot_velocities: [Vec3; LEG_COUNT],
    pub stance_mask: [bool; LEG_COUNT],
    pub arm: ArmState,
    /// World frame force applied at the arm tips (shared evenly among arms).
    pub tip_force: Vec3,
    /// Extra gripper mass carried by the arm, kg.
    pub payload: f64,
    pub time: f64,
    pub fallen: bool,
}

/// What the plant receives each physics step.
#[derive(Clone, Copy, Debug)]
pub struct PlantCommand<'a> {
    pub leg_torques: &'a Vec12,
    pub stance_mask: &'a [bool; LEG_COUNT],
    pub arm: &'a ArmCommand,
}

#[derive(Clone, Debug)]
pub struct Simulator {
    pub params: RobotParams,
    pub arm: ArmModel,
    pub config: SimConfig,
    pub legs: LegKinematics,
    pub foot_mass: f64,
    /// Arm joint tracking time constant, s.
    pub arm_time_constant: f64,
}

impl Simulator {
    pub fn new(params: RobotParams, arm: ArmModel, config: SimConfig) -> Result<Self> {
        params.validate()?;
        arm.validate()?;
        config.validate()?;
        Ok(Self {
            params,
            arm,
            config,
            legs: LegKinematics::default(),
            foot_mass: 0.25,
            arm_time_constant: 0.05,
        })
    }

    /// Standing start: level trunk at `height`, feet under the hips.
    pub fn initial_state(&self, height: f64, arm_pose: Vec<f64>) -> Result<SimState> {
        let body = BodyState::standing(height);
        let feet = std::array::from_fn(|i| {
            let h = self.params.hip_offsets[i];
            Vec3::new(h.x, h.y, 0.0)
        });
        if arm_pose.len() != self.arm.total_dof() {
            return Err(Error::Dimension {
                context: "initial arm pose",
                expected: self.arm.total_dof(),
                got: arm_pose.len(),
            });
        }
        Ok(SimState {
            body,
            feet,
            foot_velocities: [Vec3::zeros(); LEG_COUNT],
            stance_mask: [true; LEG_COUNT],
            arm: ArmState::new(arm_pose, 0.0)?,
            tip_force: Vec3::zeros(),
            payload: 0.0,
            time: 0.0,
            fallen: false,
        })
    }

    /// Ground-truth arm wrench on the trunk for the current state, about the
    /// COM in world axes. Arm gravity follows the configured gravity.
    pub fn true_wrench(&self, state: &SimState) -> Result<DisturbanceParams> {
        if self.arm.arm_count() == 0 {
            return Ok(DisturbanceParams::zero());
        }
        let model = self.arm.with_payload(state.payload);
        let r = state.body.rotation();
        let weight = arm_reaction_wrench(&model, &state.arm, &r, &Vec3::zeros())?;
        let scale = self.config.gravity / GRAVITY;
        let mut w = DisturbanceParams {
            force: weight.force * scale,
            torque: weight.torque * scale,
        };
        if state.tip_force != Vec3::zeros() {
            let with_tip = arm_reaction_wrench(&model, &state.arm, &r, &state.tip_force)?;
            w.force += with_tip.force - weight.force;
            w.torque += with_tip.torque - weight.torque;
        }
        Ok(w)
    }

    /// Per-leg foot forces implied by joint torques, `f = J^-T tau`.
    pub fn torques_to_forces(&self, state: &SimState, torques: &Vec12) -> Vec12 {
        let mut f = Vec12::zeros();
        if torques.iter().all(|&t| t == 0.0) {
            return f;
        }
        let jac = world_jacobians(
            &self.legs,
            &state.body.position,
            &state.body.rotation(),
            &self.params.hip_offsets,
            &state.feet,
        );
        let rotation = state.body.rotation();
        let reach = 0.98 * (self.legs.thigh + self.legs.calf);
        for leg in 0..LEG_COUNT {
            // A leg stretched past its workspace has lost its leverage.
            let hip = state.body.position + rotation * self.params.hip_offsets[leg];
            if (state.feet[leg] - hip).norm() > reach {
                continue;
            }
            let tau = torques.fixed_rows::<3>(3 * leg).into_owned();
            if let Some(fl) = jac[leg].transpose().lu().solve(&tau) {
                f.fixed_rows_mut::<3>(3 * leg).copy_from(&fl);
            }
        }
        f
    }

    /// Trunk acceleration `(linear, angular)` under the given foot forces.
    pub fn trunk_acceleration(&self, state: &SimState, stance_forces: &Vec12) -> Result<Vec6> {
        let wrench = self.true_wrench(state)?;
        let gravity_fix = Vec6::new(0.0, 0.0, GRAVITY - self.config.gravity, 0.0, 0.0, 0.0);
        if !state.stance_mask.iter().any(|&s| s) {
            let inv = self
                .params
                .trunk_inertia
                .try_inverse()
                .ok_or_else(|| Error::Parameter("trunk inertia is singular".into()))?;
            let rz_t = crate::state::rotation_z(state.body.yaw())?.transpose();
            let lin = wrench.force / self.params.mass - Vec3::new(0.0, 0.0, self.config.gravity);
            let ang = inv * rz_t * wrench.torque;
            return Ok(Vec6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z));
        }
        let geometry = FootGeometry {
            foot_positions: state.feet,
            stance_mask: state.stance_mask,
        };
        let dyn_ = build_matrices(&self.params, &state.body, &geometry)?;
        Ok(body_acceleration(&dyn_, stance_forces, &wrench) + gravity_fix)
    }

    /// Advances the plant by `dt` with semi-implicit Euler. A fallen state
    /// is returned unchanged.
    pub fn step(&self, state: &SimState, cmd: PlantCommand<'_>, dt: f64) -> Result<SimState> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        if cmd.arm.desired_joint_positions.len() != self.arm.total_dof() {
            return Err(Error::Dimension {
                context: "arm command",
                expected: self.arm.total_dof(),
                got: cmd.arm.desired_joint_positions.len(),
            });
        }
        if state.fallen {
            return Ok(state.clone());
        }
        let mut next = state.clone();

        // Contact transitions: touchdown snaps to the ground and stops the foot.
        for leg in 0..LEG_COUNT {
            if cmd.stance_mask[leg] && !state.stance_mask[leg] {
                next.feet[leg].z = 0.0;
                next.foot_velocities[leg] = Vec3::zeros();
            }
        }
        next.stance_mask = *cmd.stance_mask;

        let forces = self.torques_to_forces(&next, cmd.leg_torques);
        let mut stance_forces = Vec12::zeros();
        for leg in 0..LEG_COUNT {
            let f = forces.fixed_rows::<3>(3 * leg);
            if next.stance_mask[leg] {
                stance_forces.fixed_rows_mut::<3>(3 * leg).copy_from(&f);
            } else {
                let v = next.foot_velocities[leg] + f / self.foot_mass * dt;
                next.foot_velocities[leg] = v;
                next.feet[leg] += v * dt;
                next.feet[leg].z = next.feet[leg].z.max(0.0);
            }
        }

        let acc = self.trunk_acceleration(&next, &stance_forces)?;
        let body = &mut next.body;
        body.linear_velocity += acc.fixed_rows::<3>(0) * dt;
        body.angular_velocity += acc.fixed_rows::<3>(3) * dt;
        body.position += body.linear_velocity * dt;
        let rpy_rate = euler_rates(&body.orientation_rpy, &body.angular_velocity);
        body.orientation_rpy += rpy_rate * dt;
        body.orientation_rpy.z = wrap_angle(body.orientation_rpy.z);
        body.timestamp += dt;

        let alpha = 1.0 - (-dt / self.arm_time_constant).exp();
        for (q, &target) in next.arm.joint_angles.iter_mut().zip(&cmd.arm.desired_joint_positions) {
            *q += alpha * (target - *q);
        }
        self.arm.clamp(&mut next.arm.joint_angles);
        next.time += dt;
        next.arm.timestamp = next.time;
        next.fallen = is_fallen(&next.body);
        Ok(next)
    }

    /// Total trunk energy: translational and rotational kinetic plus
    /// potential relative to the ground plane.
    pub fn trunk_energy(&self, body: &BodyState) -> f64 {
        let v = body.linear_velocity;
        let w = body.angular_velocity;
        0.5 * self.params.mass * v.dot(&v)
            + 0.5 * w.dot(&(self.params.trunk_inertia * w))
            + self.params.mass * self.config.gravity * body.position.z
    }
}

pub fn is_fallen(body: &BodyState) -> bool {
    body.position.z <= FALL_HEIGHT || body.roll().abs() >= FALL_TILT || body.pitch().abs() >= FALL_TILT
}

/// Roll-pitch-yaw rates from body angular velocity.
pub fn euler_rates(rpy: &Vec3, omega_body: &Vec3) -> Vec3 {
    let (sr, cr) = rpy.x.sin_cos();
    let (sp, cp) = rpy.y.sin_cos();
    let tp = sp / cp;
    let m = Matrix3::new(1.0, sr * tp, cr * tp, 0.0, cr, -sr, 0.0, sr / cp, cr / cp);
    m * omega_body
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{rotation_rpy, skew};
    use proptest::prelude::*;

    fn sim(gravity: f64) -> Simulator {
        let config = SimConfig {
            gravity,
            ..SimConfig::default()
        };
        Simulator::new(RobotParams::default(), ArmModel::none(), config).unwrap()
    }

    fn airborne(s: &Simulator) -> SimState {
        let mut st = s.initial_state(0.3, vec![]).unwrap();
        st.stance_mask = [false; 4];
        st
    }

    fn idle(s: &Simulator) -> (Vec12, ArmCommand) {
        (Vec12::zeros(), ArmCommand::new(vec![0.0; s.arm.total_dof()]).unwrap())
    }

    #[test]
    fn config_periods_must_divide() {
        let mut c = SimConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.physics_per_lowlevel().unwrap(), 2);
        assert_eq!(c.lowlevel_per_highlevel().unwrap(), 10);
        assert_eq!(c.highlevel_steps(), 500);
        c.lowlevel_period = 0.0025;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_gravity_zero_forces_is_static() {
        let s = sim(0.0);
        let mut st = airborne(&s);
        let start = st.clone();
        let (tau, arm) = idle(&s);
        for _ in 0..500 {
            st = s
                .step(
                    &st,
                    PlantCommand {
                        leg_torques: &tau,
                        stance_mask: &[false; 4],
                        arm: &arm,
                    },
                    0.001,
                )
                .unwrap();
        }
        assert_eq!(st.body.position, start.body.position);
        assert_eq!(st.body.orientation_rpy, start.body.orientation_rpy);
        assert_eq!(st.body.linear_velocity, Vec3::zeros());
    }

    #[test]
    fn free_fall_follows_closed_form() {
        let s = sim(GRAVITY);
        let mut st = airborne(&s);
        st.body.position.z = 2.0;
        let (tau, arm) = idle(&s);
        let dt = 0.001;
        for k in 1..=500 {
            st = s
                .step(
                    &st,
                    PlantCommand {
                        leg_torques: &tau,
                        stance_mask: &[false; 4],
                        arm: &arm,
                    },
                    dt,
                )
                .unwrap();
            let t = k as f64 * dt;
            let exact = 2.0 - 0.5 * GRAVITY * t * t;
            // Semi-implicit Euler leads the closed form by g t dt / 2.
            assert!((st.body.position.z - exact).abs() <= 0.5 * GRAVITY * t * dt + 1e-12);
        }
    }

    #[test]
    fn energy_conserved_without_forces() {
        let s = sim(GRAVITY);
        let mut st = airborne(&s);
        st.body.position.z = 1.0;
        st.body.linear_velocity = Vec3::new(0.5, 0.0, 4.0);
        st.body.angular_velocity = Vec3::new(0.3, -0.2, 0.5);
        let e0 = s.trunk_energy(&st.body);
        let (tau, arm) = idle(&s);
        for _ in 0..1000 {
            st = s
                .step(
                    &st,
                    PlantCommand {
                        leg_torques: &tau,
                        stance_mask: &[false; 4],
                        arm: &arm,
                    },
                    0.001,
                )
                .unwrap();
            assert!(!st.fallen);
            let e = s.trunk_energy(&st.body);
            assert!((e - e0).abs() <= 0.01 * e0, "{e} vs {e0}");
        }
    }

    #[test]
    fn termination_fires_at_thresholds() {
        let mut b = BodyState::standing(FALL_HEIGHT + 1e-9);
        assert!(!is_fallen(&b));
        b.position.z = FALL_HEIGHT;
        assert!(is_fallen(&b));
        let mut b = BodyState::standing(0.3);
        b.orientation_rpy.x = FALL_TILT - 1e-9;
        assert!(!is_fallen(&b));
        b.orientation_rpy.x = -FALL_TILT;
        assert!(is_fallen(&b));
        b.orientation_rpy.x = 0.0;
        b.orientation_rpy.y = FALL_TILT;
        assert!(is_fallen(&b));
    }

    #[test]
    fn stance_feet_stay_pinned() {
        let s = sim(GRAVITY);
        let mut st = s.initial_state(0.3, vec![]).unwrap();
        let feet0 = st.feet;
        let (_, arm) = idle(&s);
        let tau = Vec12::from_fn(|i, _| (i as f64 - 5.0) * 0.7);
        for _ in 0..100 {
            st = s
                .step(
                    &st,
                    PlantCommand {
                        leg_torques: &tau,
                        stance_mask: &[true; 4],
                        arm: &arm,
                    },
                    0.001,
                )
                .unwrap();
            for leg in 0..4 {
                assert!((st.feet[leg] - feet0[leg]).norm() <= 1e-9);
            }
        }
    }

    #[test]
    fn torque_round_trip_recovers_forces() {
        let s = sim(GRAVITY);
        let mut st = s.initial_state(0.28, vec![]).unwrap();
        st.body.orientation_rpy = Vec3::new(0.05, -0.04, 0.3);
        let jac = world_jacobians(
            &s.legs,
            &st.body.position,
            &st.body.rotation(),
            &s.params.hip_offsets,
            &st.feet,
        );
        let f = Vec12::from_fn(|i, _| 10.0 + i as f64);
        let tau = crate::controller::forces_to_torques(&crate::controller::block_diagonal(&jac), &f);
        let back = s.torques_to_forces(&st, &tau);
        assert!((back - f).amax() < 1e-8);
    }

    #[test]
    fn arm_lag_has_fifty_ms_time_constant() {
        let s = Simulator::new(RobotParams::default(), ArmModel::regular(), SimConfig::default()).unwrap();
        let mut st = s.initial_state(0.3, vec![0.0; 4]).unwrap();
        st.stance_mask = [false; 4];
        let tau = Vec12::zeros();
        let arm = ArmCommand::new(vec![0.5, 0.0, 0.0, 0.0]).unwrap();
        for _ in 0..50 {
            st = s
                .step(
                    &st,
                    PlantCommand {
                        leg_torques: &tau,
                        stance_mask: &[false; 4],
                        arm: &arm,
                    },
                    0.001,
                )
                .unwrap();
        }
        let expected = 0.5 * (1.0 - (-1.0f64).exp());
        assert!((st.arm.joint_angles[0] - expected).abs() < 1e-9);
    }

    #[test]
    fn true_wrench_of_massless_arm_is_zero() {
        let s = Simulator::new(RobotParams::default(), ArmModel::massless(), SimConfig::default()).unwrap();
        let st = s.initial_state(0.3, ArmModel::massless().extended_pose()).unwrap();
        let w = s.true_wrench(&st).unwrap();
        assert_eq!(w.force, Vec3::zeros());
        assert_eq!(w.torque, Vec3::zeros());
    }

    proptest! {
        #[test]
        fn euler_rates_integrate_rotation(
            r in -0.5f64..0.5, p in -0.5f64..0.5, y in -3.0f64..3.0,
            wx in -1.0f64..1.0, wy in -1.0f64..1.0, wz in -1.0f64..1.0,
        ) {
            // dR/dt = R skew(w) for body rates.
            let rpy = Vec3::new(r, p, y);
            let w = Vec3::new(wx, wy, wz);
            let h = 1e-6;
            let rates = euler_rates(&rpy, &w);
            let numeric = (rotation_rpy(&(rpy + rates * h)) - rotation_rpy(&(rpy - rates * h))) / (2.0 * h);
            let analytic = rotation_rpy(&rpy) * skew(&w);
            prop_assert!((numeric - analytic).amax() < 1e-6);
        }
    }
}
