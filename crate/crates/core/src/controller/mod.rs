//! Low-level controller: PD target acceleration, the disturbance-aware
//! stance force QP, swing-leg PD, and the `tau = J' f` torque map.

pub mod gait;
pub mod leg;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{build_matrices, DynamicsMatrices, FootGeometry, STANCE_HEIGHT_TOLERANCE};
use crate::error::{Error, Result};
use crate::qp::{QpProblem, QpSolution, QpSolver, QpStatus};
use crate::state::{
    rotation_z, BodyState, DisturbanceParams, RobotParams, TrajectoryPoint, Vec12, Vec3, Vec6, LEG_COUNT,
};

pub use gait::{gait_step, GaitMode, GaitState};
pub use leg::{block_diagonal, world_jacobians, LegKinematics, Mat12};

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerGains {
    /// Pose stiffness, `(x, y, z, roll, pitch, yaw)`, 1/s^2.
    pub kp_pose: Vec6,
    /// Velocity damping, same layout, 1/s.
    pub kd_pose: Vec6,
    pub kp_swing: Vec3,
    pub kd_swing: Vec3,
    /// Diagonal of Q on the acceleration residual.
    pub q_weights: Vec6,
    /// Diagonal of R on the foot forces.
    pub r_weights: Vec12,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            kp_pose: Vec6::new(0.0, 0.0, 100.0, 250.0, 250.0, 0.0),
            kd_pose: Vec6::repeat(10.0),
            kp_swing: Vec3::repeat(300.0),
            kd_swing: Vec3::repeat(10.0),
            q_weights: Vec6::new(1.0, 1.0, 10.0, 20.0, 20.0, 10.0),
            r_weights: Vec12::repeat(1e-4),
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .kp_pose
            .iter()
            .chain(self.kd_pose.iter())
            .chain(self.kp_swing.iter())
            .chain(self.kd_swing.iter())
            .chain(self.q_weights.iter())
            .chain(self.r_weights.iter());
        for v in all {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::Parameter(
                    "controller gains must be finite and non-negative".into(),
                ));
            }
        }
        if self.q_weights.iter().all(|&q| q == 0.0) {
            return Err(Error::Parameter("Q weights must not all be zero".into()));
        }
        Ok(())
    }
}

/// `qdd_d = kp (q_d - q) + kd (qd_d - qd)`.
///
/// Tracked pose channels are height, roll and pitch; x, y and yaw are
/// velocity-controlled. Roll and pitch rates are damped toward zero.
pub fn target_acceleration(gains: &ControllerGains, desired: &TrajectoryPoint, body: &BodyState) -> Vec6 {
    let pose_err = Vec6::new(
        0.0,
        0.0,
        desired.desired_height - body.height(),
        desired.desired_roll - body.roll(),
        desired.desired_pitch - body.pitch(),
        0.0,
    );
    let (s, c) = body.yaw().sin_cos();
    let [vx, vy] = desired.desired_linear_velocity;
    let v_des = Vec3::new(c * vx - s * vy, s * vx + c * vy, 0.0);
    let v = body.linear_velocity;
    let w = body.angular_velocity;
    let vel_err = Vec6::new(
        v_des.x - v.x,
        v_des.y - v.y,
        -v.z,
        -w.x,
        -w.y,
        desired.desired_yaw_rate - w.z,
    );
    gains.kp_pose.component_mul(&pose_err) + gains.kd_pose.component_mul(&vel_err)
}

/// Rows of the per-foot constraint block: `fz in [fmin, fmax]` and the
/// four faces of the friction pyramid `|fx|, |fy| <= mu fz`.
pub const CONSTRAINTS_PER_FOOT: usize = 5;

/// Builds the stance force QP
///
/// `min |M f - g - qdd_d + A f_a + B tau_a|_Q^2 + |f|_R^2`
///
/// in the form `1/2 f' H f + c' f` with `H = M'QM + R` and
/// `c = -M'Q (g + qdd_d - A f_a - B tau_a)`.
pub fn build_stance_qp(
    dyn_: &DynamicsMatrices,
    qdd_d: &Vec6,
    dist: &DisturbanceParams,
    gains: &ControllerGains,
    params: &RobotParams,
    stance_mask: &[bool; LEG_COUNT],
) -> Result<QpProblem> {
    let q = gains.q_weights;
    let m = &dyn_.m;
    let qm = nalgebra::SMatrix::<f64, 6, 12>::from_fn(|i, j| q[i] * m[(i, j)]);
    let mut h = m.transpose() * qm;
    for i in 0..12 {
        h[(i, i)] += gains.r_weights[i];
    }
    let h = (h + h.transpose()) * 0.5;
    let target = dyn_.gravity_vec + qdd_d - dyn_.a * dist.force - dyn_.b * dist.torque;
    let c = -(qm.transpose() * target);

    let stance: Vec<usize> = (0..LEG_COUNT).filter(|&i| stance_mask[i]).collect();
    let rows = CONSTRAINTS_PER_FOOT * stance.len();
    let mut a = DMatrix::zeros(rows, 12);
    let mut lo = DVector::zeros(rows);
    let mut hi = DVector::from_element(rows, f64::INFINITY);
    let mu = params.friction_coefficient;
    for (k, &leg) in stance.iter().enumerate() {
        let r = CONSTRAINTS_PER_FOOT * k;
        let (fx, fy, fz) = (3 * leg, 3 * leg + 1, 3 * leg + 2);
        a[(r, fz)] = 1.0;
        lo[r] = params.min_normal_force;
        hi[r] = params.max_normal_force;
        for (offset, (col, sign)) in [(fx, -1.0), (fx, 1.0), (fy, -1.0), (fy, 1.0)].into_iter().enumerate() {
            a[(r + 1 + offset, fz)] = mu;
            a[(r + 1 + offset, col)] = sign;
        }
    }
    QpProblem::new(
        DMatrix::from_column_slice(12, 12, h.as_slice()),
        DVector::from_column_slice(c.as_slice()),
        a,
        lo,
        hi,
    )
}

#[derive(Clone, Debug)]
pub struct StanceForces {
    pub forces: Vec12,
    pub solution: QpSolution,
}

/// Solves the stance QP; swing-foot forces are exactly zero in the result.
pub fn stance_force_qp(
    solver: &mut QpSolver,
    dyn_: &DynamicsMatrices,
    qdd_d: &Vec6,
    dist: &DisturbanceParams,
    gains: &ControllerGains,
    params: &RobotParams,
    stance_mask: &[bool; LEG_COUNT],
) -> Result<StanceForces> {
    let stance_count = stance_mask.iter().filter(|&&s| s).count();
    if stance_count < 2 {
        return Err(Error::InvalidArgument(format!(
            "stance force QP needs at least two stance feet, got {stance_count}"
        )));
    }
    let problem = build_stance_qp(dyn_, qdd_d, dist, gains, params, stance_mask)?;
    let solution = solver.solve(&problem)?;
    if solution.status == QpStatus::Infeasible {
        return Err(Error::Infeasible("stance force constraints are contradictory".into()));
    }
    let mut forces = Vec12::from_column_slice(solution.x.as_slice());
    for leg in 0..LEG_COUNT {
        if !stance_mask[leg] {
            forces.fixed_rows_mut::<3>(3 * leg).fill(0.0);
        }
    }
    Ok(StanceForces { forces, solution })
}

/// Swing PD: `f = kp (p_d - p) - kd p_dot`. Damping acts on the absolute
/// foot velocity.
pub fn swing_force(gains: &ControllerGains, desired_pos: &Vec3, pos: &Vec3, vel: &Vec3) -> Vec3 {
    gains.kp_swing.component_mul(&(desired_pos - pos)) - gains.kd_swing.component_mul(vel)
}

/// `tau = J' f`.
pub fn forces_to_torques(jacobian: &Mat12, f: &Vec12) -> Vec12 {
    jacobian.tr_mul(f)
}

/// Slice variant of [`forces_to_torques`] that validates dimensions.
pub fn forces_to_torques_dyn(jacobian: &DMatrix<f64>, f: &[f64]) -> Result<Vec<f64>> {
    if jacobian.nrows() != f.len() {
        return Err(Error::Dimension {
            context: "jacobian rows vs force vector",
            expected: jacobian.nrows(),
            got: f.len(),
        });
    }
    Ok(jacobian.tr_mul(&DVector::from_column_slice(f)).as_slice().to_vec())
}

/// Command sent to the leg actuators for one low-level period.
#[derive(Clone, Debug, PartialEq)]
pub struct LegCommand {
    pub torques: Vec12,
    /// Stance forces from the QP, zero on swing legs.
    pub stance_forces: Vec12,
    /// Swing PD forces, zero on stance legs.
    pub swing_forces: Vec12,
    pub stance_mask: [bool; LEG_COUNT],
    /// True when the QP failed and the previous stance forces were reused.
    pub fault: bool,
}

/// Measured quantities the controller needs each period.
#[derive(Clone, Copy, Debug)]
pub struct ControllerInput<'a> {
    pub body: &'a BodyState,
    pub feet: &'a [Vec3; LEG_COUNT],
    pub foot_velocities: &'a [Vec3; LEG_COUNT],
}

/// Stateful low-level controller: gait phase, swing trajectories, last valid forces.
#[derive(Clone, Debug)]
pub struct LowLevelController {
    pub gains: ControllerGains,
    pub params: RobotParams,
    pub legs: LegKinematics,
    pub gait: GaitState,
    pub swing_height: f64,
    pub faults: usize,
    solver: QpSolver,
    last_forces: Vec12,
    initial_gait: GaitState,
}

impl LowLevelController {
    pub fn new(gains: ControllerGains, params: RobotParams, gait: GaitState) -> Self {
        let mut last_forces = Vec12::zeros();
        for leg in 0..LEG_COUNT {
            last_forces[3 * leg + 2] = params.weight() / LEG_COUNT as f64;
        }
        Self {
            gains,
            params,
            legs: LegKinematics::default(),
            gait,
            swing_height: 0.06,
            faults: 0,
            solver: QpSolver::new(1e-6, 100),
            last_forces,
            initial_gait: gait,
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.gains.clone(), self.params.clone(), self.initial_gait);
    }

    pub fn set_gait_mode(&mut self, mode: GaitMode) {
        if self.gait.mode != mode {
            self.gait = GaitState::new(mode, self.gait.swing_duration);
        }
    }

    /// Desired swing foot position at the current swing progress.
    pub fn swing_reference(&self, leg: usize) -> Vec3 {
        let s = self.gait.swing_progress();
        let blend = s * s * (3.0 - 2.0 * s);
        let start = self.gait.liftoff[leg];
        let end = self.gait.swing_targets[leg];
        let mut p = start + (end - start) * blend;
        p.z = start.z + (end.z - start.z) * blend + self.swing_height * (std::f64::consts::PI * s).sin();
        p
    }

    /// Runs one control period. Advances the gait by `dt` first, so the
    /// returned stance mask applies to the coming period.
    pub fn update(
        &mut self,
        input: ControllerInput<'_>,
        desired: &TrajectoryPoint,
        dist: &DisturbanceParams,
        dt: f64,
    ) -> Result<LegCommand> {
        let body = input.body;
        self.gait = gait_step(&self.gait, dt, desired, body, &self.params, input.feet);
        let stance_mask = self.gait.stance_mask;

        // Feet entering stance touch down where they are.
        let mut contact = *input.feet;
        for leg in 0..LEG_COUNT {
            if stance_mask[leg] {
                contact[leg].z = 0.0;
            }
        }
        let geometry = FootGeometry {
            foot_positions: contact,
            stance_mask,
        };
        debug_assert!(contact
            .iter()
            .zip(&stance_mask)
            .all(|(p, &s)| !s || p.z.abs() <= STANCE_HEIGHT_TOLERANCE));
        let dyn_ = build_matrices(&self.params, body, &geometry)?;
        let qdd_d = target_acceleration(&self.gains, desired, body);

        let (stance_forces, fault) = match stance_force_qp(
            &mut self.solver,
            &dyn_,
            &qdd_d,
            dist,
            &self.gains,
            &self.params,
            &stance_mask,
        ) {
            Ok(sf) if sf.solution.status == QpStatus::Optimal => {
                self.last_forces = sf.forces;
                (sf.forces, false)
            }
            Ok(_) | Err(Error::Infeasible(_)) => {
                self.faults += 1;
                let mut held = self.last_forces;
                for leg in 0..LEG_COUNT {
                    if !stance_mask[leg] {
                        held.fixed_rows_mut::<3>(3 * leg).fill(0.0);
                    }
                }
                (held, true)
            }
            Err(e) => return Err(e),
        };

        let mut swing_forces = Vec12::zeros();
        for leg in 0..LEG_COUNT {
            if !stance_mask[leg] {
                let f = swing_force(
                    &self.gains,
                    &self.swing_reference(leg),
                    &input.feet[leg],
                    &input.foot_velocities[leg],
                );
                swing_forces.fixed_rows_mut::<3>(3 * leg).copy_from(&f);
            }
        }

        let rotation = body.rotation();
        let blocks = world_jacobians(
            &self.legs,
            &body.position,
            &rotation,
            &self.params.hip_offsets,
            &contact,
        );
        let jacobian = block_diagonal(&blocks);
        let torques = forces_to_torques(&jacobian, &(stance_forces + swing_forces));
        Ok(LegCommand {
            torques,
            stance_forces,
            swing_forces,
            stance_mask,
            fault,
        })
    }
}

/// Nominal stance: every foot directly below its hip on the ground.
pub fn nominal_feet(params: &RobotParams, body: &BodyState) -> [Vec3; LEG_COUNT] {
    let rz = rotation_z(body.yaw()).unwrap_or_else(|_| nalgebra::Matrix3::identity());
    std::array::from_fn(|i| {
        let hip = body.position + rz * params.hip_offsets[i];
        Vec3::new(hip.x, hip.y, 0.0)
    })
}
