//! Policy training: SAC against the closed-loop simulator, one update per
//! environment step once the warm-up is over.

use std::fmt::Write as _;

use crate::adapter::AdapterModel;
use crate::controller::ControllerGains;
use crate::error::{Error, Result};
use crate::estimator::{Observation, ReplayBuffer, SacAgent, SacConfig, Transition, UpdateLosses};
use crate::sim::rollout::{encode, run_episode, Policy};
use crate::sim::{ArmModel, Environment, PulseConfig, SimConfig, TaskKind, TaskSpec};
use crate::state::RobotParams;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTrainConfig {
    pub steps: usize,
    pub seed: u64,
    pub sac: SacConfig,
    pub arm: ArmModel,
    pub task: TaskSpec,
    pub params: RobotParams,
    pub gains: ControllerGains,
    pub sim: SimConfig,
    /// Environment steps between deterministic evaluations; 0 disables them.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Environment steps per curve row.
    pub log_every: usize,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            seed: 0,
            sac: SacConfig::default(),
            arm: ArmModel::regular(),
            task: TaskSpec::new(TaskKind::Reaching).with_pulses(PulseConfig::default()),
            params: RobotParams::default(),
            gains: ControllerGains::default(),
            sim: SimConfig::default(),
            eval_every: 10_000,
            eval_episodes: 2,
            log_every: 1000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CurveRow {
    pub step: usize,
    /// Mean reward per environment step since the previous row.
    pub mean_reward: f64,
    pub episodes: usize,
    pub falls: usize,
    /// Losses of the latest update, zero before the first.
    pub losses: UpdateLosses,
    /// Mean deterministic evaluation return, when one ran at this row.
    pub eval_return: Option<f64>,
}

pub fn curve_to_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(
        "step,mean_reward,episodes,falls,critic1_loss,critic2_loss,actor_loss,alpha_loss,alpha,entropy,eval_return\n",
    );
    for r in rows {
        let l = &r.losses;
        let _ = writeln!(
            out,
            "{},{:.9e},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{}",
            r.step,
            r.mean_reward,
            r.episodes,
            r.falls,
            l.critic1,
            l.critic2,
            l.actor,
            l.alpha_loss,
            l.alpha,
            l.entropy,
            r.eval_return.map(|v| format!("{v:.9e}")).unwrap_or_default()
        );
    }
    out
}

fn episode_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0xD1B5_4A32_D192_ED03).wrapping_add(k)
}

impl PolicyTrainConfig {
    fn environment(&self, seed: u64) -> Result<Environment> {
        Environment::new(
            self.params.clone(),
            self.gains.clone(),
            self.arm.clone(),
            self.task.clone(),
            self.sim.clone(),
            seed,
        )
    }

    /// Mean deterministic return of `agent` over the evaluation episodes.
    pub fn evaluate(&self, agent: &SacAgent, adapter: &AdapterModel) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..self.eval_episodes {
            let seed = episode_seed(self.seed ^ 0xE7A1, k as u64);
            let mut policy = Policy::dpc(agent.clone(), adapter.clone());
            total += run_episode(&mut self.environment(seed)?, &mut policy, seed)?.total_return;
        }
        Ok(total / self.eval_episodes.max(1) as f64)
    }
}

/// Trains a fresh agent. `adapter` must match the arm's joint count.
pub fn train_policy(cfg: &PolicyTrainConfig, adapter: &AdapterModel) -> Result<(SacAgent, Vec<CurveRow>)> {
    let agent = SacAgent::new(cfg.sac.clone(), cfg.seed)?;
    train_from(agent, cfg, adapter)
}

/// Continues training `agent` for `cfg.steps` environment steps.
pub fn train_from(
    mut agent: SacAgent,
    cfg: &PolicyTrainConfig,
    adapter: &AdapterModel,
) -> Result<(SacAgent, Vec<CurveRow>)> {
    if cfg.log_every == 0 {
        return Err(Error::Parameter("log_every must be positive".into()));
    }
    if adapter.dof() != cfg.arm.total_dof() {
        return Err(Error::Dimension {
            context: "adapter joints vs arm",
            expected: cfg.arm.total_dof(),
            got: adapter.dof(),
        });
    }
    let mut buffer = ReplayBuffer::new(cfg.sac.replay_capacity)?;
    let mut rows = Vec::new();
    let mut episode = 0u64;
    let mut env = cfg.environment(episode_seed(cfg.seed, episode))?;
    let observe =
        |env: &Environment| -> Result<Observation> { Ok(Observation::new(&env.state.body, &encode(adapter, env)?)) };
    let mut obs = observe(&env)?;
    let mut losses = UpdateLosses::default();
    let (mut reward_sum, mut steps_since, mut episodes, mut falls) = (0.0, 0usize, 0usize, 0usize);

    for step in 1..=cfg.steps {
        let x = obs.to_array();
        if !agent.norm.frozen {
            agent.norm.update(&x);
            if agent.norm.count as usize >= cfg.sac.warmup_steps {
                agent.norm.freeze();
            }
        }
        let u = agent.act_raw(&obs, true)?;
        let out = env.step(&agent.to_wrench(&SacAgent::squash(&u)))?;
        let next = observe(&env)?;
        buffer.push(Transition {
            obs: x,
            action: u,
            reward: out.reward.total,
            next_obs: next.to_array(),
            // Timeouts bootstrap; only falls are terminal.
            done: out.fallen,
        })?;
        reward_sum += out.reward.total;
        steps_since += 1;
        if out.done {
            episodes += 1;
            falls += out.fallen as usize;
            episode += 1;
            env = cfg.environment(episode_seed(cfg.seed, episode))?;
            obs = observe(&env)?;
        } else {
            obs = next;
        }
        if step > cfg.sac.warmup_steps && buffer.len() >= cfg.sac.batch {
            losses = agent.update(&buffer)?;
        }
        let eval_now = cfg.eval_every > 0 && step % cfg.eval_every == 0;
        if step % cfg.log_every == 0 || eval_now || step == cfg.steps {
            rows.push(CurveRow {
                step,
                mean_reward: reward_sum / steps_since.max(1) as f64,
                episodes,
                falls,
                losses,
                eval_return: if eval_now {
                    Some(cfg.evaluate(&agent, adapter)?)
                } else {
                    None
                },
            });
            reward_sum = 0.0;
            steps_since = 0;
            episodes = 0;
            falls = 0;
        }
    }
    Ok((agent, rows))
}
