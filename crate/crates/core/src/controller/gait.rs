//! Trot scheduler with Raibert foot placement.

use crate::state::{rotation_z, BodyState, RobotParams, TrajectoryPoint, Vec3, LEG_COUNT};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GaitMode {
    /// All four feet in stance.
    Stand,
    /// Diagonal pairs alternate: FL+RR swing in the first half cycle, FR+RL in the second.
    Trot,
}

const FIRST_HALF_STANCE: [bool; LEG_COUNT] = [false, true, true, false];
const SECOND_HALF_STANCE: [bool; LEG_COUNT] = [true, false, false, true];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaitState {
    pub mode: GaitMode,
    /// Position in the full cycle, `[0, 1)`. A cycle is two swing phases.
    pub phase: f64,
    pub swing_duration: f64,
    pub stance_mask: [bool; LEG_COUNT],
    /// Touchdown targets for swinging feet, world frame.
    pub swing_targets: [Vec3; LEG_COUNT],
    /// Liftoff positions of swinging feet, world frame.
    pub liftoff: [Vec3; LEG_COUNT],
    /// False until the first step has recorded liftoff points.
    pub started: bool,
    /// Gain on the velocity error in foot placement, s.
    pub placement_gain: f64,
}

impl GaitState {
    pub fn new(mode: GaitMode, swing_duration: f64) -> Self {
        let stance_mask = match mode {
            GaitMode::Stand => [true; LEG_COUNT],
            GaitMode::Trot => FIRST_HALF_STANCE,
        };
        Self {
            mode,
            phase: 0.0,
            swing_duration,
            stance_mask,
            swing_targets: [Vec3::zeros(); LEG_COUNT],
            liftoff: [Vec3::zeros(); LEG_COUNT],
            started: false,
            placement_gain: PLACEMENT_FEEDBACK,
        }
    }

    pub fn stance_count(&self) -> usize {
        self.stance_mask.iter().filter(|&&s| s).count()
    }

    /// Progress through the current swing phase in `[0, 1)`.
    pub fn swing_progress(&self) -> f64 {
        let p = self.phase * 2.0;
        if p >= 1.0 - 2.0 * PHASE_EPS {
            (p - 1.0).max(0.0)
        } else {
            p
        }
    }

    pub fn stance_duration(&self) -> f64 {
        self.swing_duration
    }
}

/// Phase differences below this are treated as rounding noise.
const PHASE_EPS: f64 = 1e-9;

fn mask_for_phase(phase: f64) -> [bool; LEG_COUNT] {
    if phase < 0.5 - PHASE_EPS {
        FIRST_HALF_STANCE
    } else {
        SECOND_HALF_STANCE
    }
}

/// Gain on the velocity error in the foot placement, s. Close to
/// `sqrt(h / g)` at the nominal 0.3 m height.
pub const PLACEMENT_FEEDBACK: f64 = 0.175;

/// Raibert placement: hip projected to the ground plus half a stance
/// duration of desired travel, plus a correction proportional to the
/// velocity tracking error. At `v == v_desired` the correction vanishes.
pub fn raibert_target(
    params: &RobotParams,
    body: &BodyState,
    desired: &TrajectoryPoint,
    stance_duration: f64,
    gain: f64,
    leg: usize,
) -> Vec3 {
    let rz = rotation_z(body.yaw()).unwrap_or_else(|_| nalgebra::Matrix3::identity());
    let hip = body.position + rz * params.hip_offsets[leg];
    let v_des = rz
        * Vec3::new(
            desired.desired_linear_velocity[0],
            desired.desired_linear_velocity[1],
            0.0,
        );
    let mut v = body.linear_velocity;
    v.z = 0.0;
    let t = hip + v_des * (0.5 * stance_duration) + (v - v_des) * gain;
    Vec3::new(t.x, t.y, 0.0)
}

/// Advances the schedule by `dt`. `feet` are the current foot positions and
/// seed the liftoff points of feet entering swing.
pub fn gait_step(
    gait: &GaitState,
    dt: f64,
    desired: &TrajectoryPoint,
    body: &BodyState,
    params: &RobotParams,
    feet: &[Vec3; LEG_COUNT],
) -> GaitState {
    let mut next = *gait;
    if gait.mode == GaitMode::Stand || !(dt > 0.0) {
        next.stance_mask = if gait.mode == GaitMode::Stand {
            [true; LEG_COUNT]
        } else {
            gait.stance_mask
        };
        return next;
    }
    let mut phase = gait.phase + dt / (2.0 * gait.swing_duration);
    if phase >= 1.0 - PHASE_EPS {
        phase = (phase - 1.0).max(0.0);
    }
    next.phase = phase;
    next.stance_mask = mask_for_phase(next.phase);
    next.started = true;
    for leg in 0..LEG_COUNT {
        if !next.stance_mask[leg] {
            if gait.stance_mask[leg] || !gait.started {
                next.liftoff[leg] = feet[leg];
            }
            next.swing_targets[leg] =
                raibert_target(params, body, desired, gait.stance_duration(), gait.placement_gain, leg);
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nominal_feet(params: &RobotParams) -> [Vec3; LEG_COUNT] {
        std::array::from_fn(|i| {
            let h = params.hip_offsets[i];
            Vec3::new(h.x, h.y, 0.0)
        })
    }

    #[test]
    fn crossing_half_phase_flips_pairs() {
        let params = RobotParams::default();
        let body = BodyState::standing(0.3);
        let desired = TrajectoryPoint::stand(0.3);
        let mut g = GaitState::new(GaitMode::Trot, 0.3);
        g.phase = 0.49;
        let before = g.stance_mask;
        let n = gait_step(&g, 0.02, &desired, &body, &params, &nominal_feet(&params));
        assert!(n.phase >= 0.5);
        assert_eq!(n.stance_mask, [!before[0], !before[1], !before[2], !before[3]]);
        assert_eq!(n.stance_count(), 2);
    }

    #[test]
    fn zero_velocity_targets_under_hips() {
        let params = RobotParams::default();
        let mut body = BodyState::standing(0.3);
        body.position.x = 1.0;
        body.orientation_rpy.z = 0.4;
        let desired = TrajectoryPoint::stand(0.3);
        let g = GaitState::new(GaitMode::Trot, 0.3);
        let n = gait_step(&g, 0.002, &desired, &body, &params, &nominal_feet(&params));
        let rz = rotation_z(0.4).unwrap();
        for leg in [0, 3] {
            let hip = body.position + rz * params.hip_offsets[leg];
            assert!((n.swing_targets[leg] - Vec3::new(hip.x, hip.y, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn full_cycle_restores_mask_and_keeps_two_stance_feet() {
        let params = RobotParams::default();
        let body = BodyState::standing(0.3);
        let desired = TrajectoryPoint::stand(0.3);
        let feet = nominal_feet(&params);
        let start = GaitState::new(GaitMode::Trot, 0.3);
        let mut g = start;
        let dt: f64 = 0.002;
        let steps = (0.6 / dt).round() as usize;
        for _ in 0..steps {
            g = gait_step(&g, dt, &desired, &body, &params, &feet);
            assert!(g.stance_count() >= 2);
            assert_eq!(g.stance_mask[0], g.stance_mask[3]);
            assert_eq!(g.stance_mask[1], g.stance_mask[2]);
        }
        assert_eq!(g.stance_mask, start.stance_mask);
        assert!(g.phase < 1e-9 || g.phase > 1.0 - 1e-9);
    }

    #[test]
    fn stand_mode_never_swings() {
        let params = RobotParams::default();
        let g = GaitState::new(GaitMode::Stand, 0.3);
        let n = gait_step(
            &g,
            0.5,
            &TrajectoryPoint::stand(0.3),
            &BodyState::standing(0.3),
            &params,
            &nominal_feet(&params),
        );
        assert_eq!(n.stance_mask, [true; 4]);
    }

    #[test]
    fn forward_velocity_places_feet_ahead() {
        let params = RobotParams::default();
        let mut body = BodyState::standing(0.3);
        body.linear_velocity.x = 0.2;
        let mut desired = TrajectoryPoint::stand(0.3);
        desired.desired_linear_velocity = [0.2, 0.0];
        let t = raibert_target(&params, &body, &desired, 0.3, PLACEMENT_FEEDBACK, 0);
        assert!((t.x - (params.hip_offsets[0].x + 0.03)).abs() < 1e-12);
    }

    #[test]
    fn lagging_body_pulls_feet_back() {
        let params = RobotParams::default();
        let body = BodyState::standing(0.3);
        let mut desired = TrajectoryPoint::stand(0.3);
        desired.desired_linear_velocity = [0.0, 0.3];
        let t = raibert_target(&params, &body, &desired, 0.3, PLACEMENT_FEEDBACK, 0);
        let expected = params.hip_offsets[0].y + 0.045 - 0.3 * PLACEMENT_FEEDBACK;
        assert!((t.y - expected).abs() < 1e-12);
    }
}
