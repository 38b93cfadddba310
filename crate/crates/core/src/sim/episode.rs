//! Closed-loop environment running the plant, the low-level controller and a
//! task script at their three rates.

use crate::controller::{ControllerGains, ControllerInput, GaitState, LowLevelController};
use crate::error::Result;
use crate::estimator::reward::{reward, Reward};
use crate::sim::arm::ArmModel;
use crate::sim::env::{PlantCommand, SimConfig, SimState, Simulator};
use crate::sim::tasks::{TaskFrame, TaskRunner, TaskSpec};
use crate::state::{ArmCommand, BodyState, DisturbanceParams, RobotParams, Vec12, LEG_COUNT};

/// Swing phase duration of the trot, s.
pub const SWING_DURATION: f64 = 0.3;

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub reward: Reward,
    /// Episode over: fell or ran out of time.
    pub done: bool,
    pub fallen: bool,
    /// True arm wrench at the end of the step.
    pub true_wrench: DisturbanceParams,
}

/// Called once per low-level period with the state before the period, the
/// arm command applied during it, and the state after it.
pub trait LowLevelObserver {
    fn observe(&mut self, before: &SimState, arm_command: &ArmCommand, after: &SimState);
}

impl LowLevelObserver for () {
    fn observe(&mut self, _: &SimState, _: &ArmCommand, _: &SimState) {}
}

#[derive(Clone, Debug)]
pub struct Environment {
    pub sim: Simulator,
    pub controller: LowLevelController,
    pub state: SimState,
    pub task: TaskRunner,
    pub frame: TaskFrame,
    pub arm_command: ArmCommand,
    pub steps: usize,
    /// Low-level periods where the QP failed and forces were held.
    pub faults: usize,
    /// Stance forces of the most recent low-level period.
    pub last_stance_forces: Vec12,
    pub last_stance_mask: [bool; LEG_COUNT],
    physics_per_low: usize,
    low_per_high: usize,
    max_steps: usize,
}

impl Environment {
    pub fn new(
        params: RobotParams,
        gains: ControllerGains,
        arm: ArmModel,
        spec: TaskSpec,
        config: SimConfig,
        seed: u64,
    ) -> Result<Self> {
        gains.validate()?;
        let sim = Simulator::new(params.clone(), arm.clone(), config.clone())?;
        let mut task = TaskRunner::new(spec.clone(), &arm, seed)?;
        let mut state = sim.initial_state(spec.height, spec.initial_arm_pose(&arm))?;
        let frame = task.frame(0.0, 0.0);
        state.payload = frame.payload;
        state.tip_force = frame.tip_force;
        let controller = LowLevelController::new(gains, params, GaitState::new(spec.gait(), SWING_DURATION));
        let arm_command = ArmCommand::new(frame.arm_command.clone())?;
        Ok(Self {
            physics_per_low: config.physics_per_lowlevel()?,
            low_per_high: config.lowlevel_per_highlevel()?,
            max_steps: config.highlevel_steps(),
            sim,
            controller,
            state,
            task,
            frame,
            arm_command,
            steps: 0,
            faults: 0,
            last_stance_forces: Vec12::zeros(),
            last_stance_mask: [true; LEG_COUNT],
        })
    }

    pub fn body(&self) -> &BodyState {
        &self.state.body
    }

    pub fn desired(&self) -> &crate::state::TrajectoryPoint {
        &self.frame.desired
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn true_wrench(&self) -> Result<DisturbanceParams> {
        self.sim.true_wrench(&self.state)
    }

    /// One high-level period with the estimated wrench held constant.
    pub fn step(&mut self, action: &DisturbanceParams) -> Result<StepOutcome> {
        self.step_observed(action, &mut ())
    }

    pub fn step_observed<O: LowLevelObserver>(
        &mut self,
        action: &DisturbanceParams,
        observer: &mut O,
    ) -> Result<StepOutcome> {
        let low_dt = self.sim.config.lowlevel_period;
        let phys_dt = self.sim.config.physics_dt;
        for _ in 0..self.low_per_high {
            if self.state.fallen {
                break;
            }
            self.frame = self.task.frame(self.state.time, self.state.body.yaw());
            self.state.payload = self.frame.payload;
            self.state.tip_force = self.frame.tip_force;
            self.arm_command = ArmCommand::new(self.frame.arm_command.clone())?;

            let cmd = self.controller.update(
                ControllerInput {
                    body: &self.state.body,
                    feet: &self.state.feet,
                    foot_velocities: &self.state.foot_velocities,
                },
                &self.frame.desired,
                action,
                low_dt,
            )?;
            if cmd.fault {
                self.faults += 1;
            }
            self.last_stance_forces = cmd.stance_forces;
            self.last_stance_mask = cmd.stance_mask;

            let before = self.state.clone();
            for _ in 0..self.physics_per_low {
                self.state = self.sim.step(
                    &self.state,
                    PlantCommand {
                        leg_torques: &cmd.torques,
                        stance_mask: &cmd.stance_mask,
                        arm: &self.arm_command,
                    },
                    phys_dt,
                )?;
            }
            observer.observe(&before, &self.arm_command, &self.state);
        }
        self.steps += 1;
        let fallen = self.state.fallen;
        Ok(StepOutcome {
            reward: reward(&self.frame.desired, &self.state.body),
            done: fallen || self.steps >= self.max_steps,
            fallen,
            true_wrench: self.true_wrench()?,
        })
    }
}
