//! Random-motion data collection for the latent dynamic adapter.

use crate::adapter::AdapterSample;
use crate::controller::ControllerGains;
use crate::error::{Error, Result};
use crate::sim::arm::ArmModel;
use crate::sim::env::{SimConfig, SimState};
use crate::sim::episode::{Environment, LowLevelObserver};
use crate::sim::tasks::{TaskKind, TaskSpec};
use crate::state::{ArmCommand, DisturbanceParams, RobotParams};

struct Recorder<'a> {
    out: &'a mut Vec<AdapterSample>,
    episode: u32,
    limit: usize,
}

impl LowLevelObserver for Recorder<'_> {
    fn observe(&mut self, before: &SimState, arm_command: &ArmCommand, after: &SimState) {
        if after.fallen || self.out.len() >= self.limit {
            return;
        }
        self.out.push(AdapterSample {
            episode: self.episode,
            body: before.body,
            arm: before.arm.clone(),
            arm_cmd: arm_command.clone(),
            next_drp: [after.body.angular_velocity.x, after.body.angular_velocity.y],
        });
    }
}

/// Seed of the `k`-th episode of a collection run.
fn episode_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k)
}

/// Runs the random-motion task under the zero-wrench controller and records
/// one sample per low-level period. Episodes that end, by timeout or by a
/// fall, are followed by a fresh one with a derived seed.
pub fn collect_random_motion(arm: &ArmModel, n: usize, seed: u64) -> Result<Vec<AdapterSample>> {
    collect_with(
        arm,
        n,
        seed,
        &RobotParams::default(),
        &ControllerGains::default(),
        &SimConfig::default(),
    )
}

pub fn collect_with(
    arm: &ArmModel,
    n: usize,
    seed: u64,
    params: &RobotParams,
    gains: &ControllerGains,
    config: &SimConfig,
) -> Result<Vec<AdapterSample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(n);
    let mut k = 0u64;
    while out.len() < n {
        let before = out.len();
        let mut env = Environment::new(
            params.clone(),
            gains.clone(),
            arm.clone(),
            TaskSpec::new(TaskKind::RandomMotion),
            config.clone(),
            episode_seed(seed, k),
        )?;
        let mut rec = Recorder {
            out: &mut out,
            episode: k as u32,
            limit: n,
        };
        loop {
            let step = env.step_observed(&DisturbanceParams::zero(), &mut rec)?;
            if step.done || rec.out.len() >= n {
                break;
            }
        }
        k += 1;
        if out.len() == before && k > 100 {
            return Err(Error::InvalidArgument(
                "random motion keeps falling before the first sample".into(),
            ));
        }
    }
    Ok(out)
}
