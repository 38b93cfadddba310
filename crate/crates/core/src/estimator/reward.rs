//! Tracking reward.

use crate::state::{BodyState, TrajectoryPoint};

pub const VEL_WEIGHT: f64 = 0.08;
pub const ORN_WEIGHT: f64 = 0.05;
pub const SHARPNESS: f64 = 8.0;
/// Reward at perfect tracking: `0.08 * 3 + 0.05 * 2`.
pub const MAX_REWARD: f64 = 0.34;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reward {
    pub vel: f64,
    pub orn: f64,
    pub total: f64,
}

fn kernel(err: f64) -> f64 {
    (-SHARPNESS * err * err).exp()
}

/// Velocities are compared in the heading frame; yaw rate uses the body rate.
pub fn reward(desired: &TrajectoryPoint, body: &BodyState) -> Reward {
    let v = body.heading_velocity();
    let vel = kernel(desired.desired_linear_velocity[0] - v.x)
        + kernel(desired.desired_linear_velocity[1] - v.y)
        + kernel(desired.desired_yaw_rate - body.angular_velocity.z);
    let orn = kernel(desired.desired_roll - body.roll()) + kernel(desired.desired_pitch - body.pitch());
    Reward {
        vel,
        orn,
        // Integer weights over 100 so perfect tracking lands exactly on 0.34.
        total: (8.0 * vel + 5.0 * orn) / 100.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::Vec3;
    use proptest::prelude::*;

    #[test]
    fn perfect_tracking() {
        let r = reward(&TrajectoryPoint::stand(0.3), &BodyState::standing(0.3));
        assert_eq!(r.vel, 3.0);
        assert_eq!(r.orn, 2.0);
        assert_eq!(r.total, 0.34);
        assert_eq!(r.total, MAX_REWARD);
    }

    #[test]
    fn unit_forward_velocity_error() {
        let mut b = BodyState::standing(0.3);
        b.linear_velocity.x = 1.0;
        let r = reward(&TrajectoryPoint::stand(0.3), &b);
        assert!((r.vel - ((-8.0f64).exp() + 2.0)).abs() < 1e-15);
        assert!((r.vel - 2.000335).abs() < 1e-6);
    }

    #[test]
    fn huge_errors_vanish_but_stay_positive_in_the_limit() {
        let mut b = BodyState::standing(0.3);
        b.linear_velocity = Vec3::new(5.0, 5.0, 0.0);
        b.angular_velocity.z = 5.0;
        b.orientation_rpy = Vec3::new(1.5, 1.5, 0.0);
        let r = reward(&TrajectoryPoint::stand(0.3), &b);
        assert!(r.total > 0.0 && r.total < 1e-6);
    }

    proptest! {
        #[test]
        fn reward_is_bounded(
            vx in -3.0f64..3.0, vy in -3.0f64..3.0, wz in -3.0f64..3.0,
            roll in -1.5f64..1.5, pitch in -1.5f64..1.5, yaw in -3.1f64..3.1,
            dvx in -1.0f64..1.0, dwz in -1.0f64..1.0,
        ) {
            let mut b = BodyState::standing(0.3);
            b.linear_velocity = Vec3::new(vx, vy, 0.0);
            b.angular_velocity.z = wz;
            b.orientation_rpy = Vec3::new(roll, pitch, yaw);
            let mut d = TrajectoryPoint::stand(0.3);
            d.desired_linear_velocity = [dvx, 0.0];
            d.desired_yaw_rate = dwz;
            let r = reward(&d, &b);
            prop_assert!(r.total > 0.0 && r.total <= MAX_REWARD);
        }
    }
}
