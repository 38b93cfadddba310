//! Closed-loop episodes under a high-level policy, with per-step logs.

use std::fmt::Write as _;

use crate::adapter::AdapterModel;
use crate::error::Result;
use crate::estimator::reward::Reward;
use crate::estimator::{mbc_baseline, Observation, SacAgent, OBS_DIM};
use crate::sim::episode::Environment;
use crate::state::{DisturbanceParams, LatentState, LATENT_DIM};

/// The adapter and agent that make up a DPC policy.
#[derive(Clone, Debug)]
pub struct DpcPolicy {
    pub agent: SacAgent,
    pub adapter: AdapterModel,
    pub stochastic: bool,
}

#[derive(Clone, Debug)]
pub enum Policy {
    /// Zero wrench.
    Mbc,
    Dpc(Box<DpcPolicy>),
    /// The simulator's true arm wrench at the start of each step.
    Oracle,
}

impl Policy {
    pub fn dpc(agent: SacAgent, adapter: AdapterModel) -> Self {
        Policy::Dpc(Box::new(DpcPolicy {
            agent,
            adapter,
            stochastic: false,
        }))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Mbc => "mbc",
            Policy::Dpc(_) => "dpc",
            Policy::Oracle => "oracle",
        }
    }

    /// Latent state for the current environment state; zero without an
    /// adapter.
    pub fn latent(&self, env: &Environment) -> Result<LatentState> {
        match self {
            Policy::Dpc(p) => encode(&p.adapter, env),
            _ => Ok(LatentState::default()),
        }
    }

    pub fn act(&mut self, env: &Environment, obs: &Observation) -> Result<DisturbanceParams> {
        match self {
            Policy::Mbc => Ok(mbc_baseline()),
            Policy::Oracle => env.true_wrench(),
            Policy::Dpc(p) => p.agent.act(obs, p.stochastic),
        }
    }
}

/// Encodes the environment's current body and arm state.
pub fn encode(adapter: &AdapterModel, env: &Environment) -> Result<LatentState> {
    adapter.encode(&env.state.body, &env.state.arm, &env.arm_command)
}

pub fn observe(policy: &Policy, env: &Environment) -> Result<Observation> {
    Ok(Observation::new(&env.state.body, &policy.latent(env)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Simulation time at the end of the step, s.
    pub time: f64,
    pub obs: [f64; OBS_DIM],
    pub action: DisturbanceParams,
    pub reward: Reward,
    pub true_wrench: DisturbanceParams,
    pub roll: f64,
    pub pitch: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub task: String,
    pub arm: String,
    pub policy: String,
    pub seed: u64,
    pub records: Vec<StepRecord>,
    pub total_return: f64,
    pub fallen: bool,
    pub faults: usize,
}

impl EpisodeLog {
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}_{}.csv", self.task, self.arm, self.policy, self.seed)
    }

    /// Root mean square of roll and pitch over the episode, rad.
    pub fn rms_tilt(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let s: f64 = self.records.iter().map(|r| r.roll * r.roll + r.pitch * r.pitch).sum();
        (s / self.records.len() as f64).sqrt()
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{} {} {} seed={} steps={} return={:.6} rms_tilt={:.6} fallen={} faults={}",
            self.task,
            self.arm,
            self.policy,
            self.seed,
            self.records.len(),
            self.total_return,
            self.rms_tilt(),
            self.fallen,
            self.faults
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,time,roll,pitch,roll_rate,pitch_rate,v_x,v_y,yaw_rate,height");
        for i in 0..LATENT_DIM {
            let _ = write!(out, ",z{i}");
        }
        out.push_str(
            ",f_x,f_y,f_z,tau_x,tau_y,tau_z,r_vel,r_orn,r_total,\
             true_f_x,true_f_y,true_f_z,true_tau_x,true_tau_y,true_tau_z\n",
        );
        for r in &self.records {
            let _ = write!(out, "{},{:.6}", r.step, r.time);
            for v in r.obs {
                let _ = write!(out, ",{v:.9e}");
            }
            for v in r.action.as_vec6().iter() {
                let _ = write!(out, ",{v:.9e}");
            }
            let _ = write!(out, ",{:.9e},{:.9e},{:.9e}", r.reward.vel, r.reward.orn, r.reward.total);
            for v in r.true_wrench.as_vec6().iter() {
                let _ = write!(out, ",{v:.9e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Runs `env` to completion under `policy`.
pub fn run_episode(env: &mut Environment, policy: &mut Policy, seed: u64) -> Result<EpisodeLog> {
    let mut records = Vec::with_capacity(env.max_steps());
    let mut total = 0.0;
    let fallen = loop {
        let obs = observe(policy, env)?;
        let action = policy.act(env, &obs)?;
        let out = env.step(&action)?;
        total += out.reward.total;
        records.push(StepRecord {
            step: env.steps,
            time: env.state.time,
            obs: obs.to_array(),
            action,
            reward: out.reward,
            true_wrench: out.true_wrench,
            roll: env.body().roll(),
            pitch: env.body().pitch(),
        });
        if out.done {
            break out.fallen;
        }
    };
    Ok(EpisodeLog {
        task: env.task.spec.kind.name().to_string(),
        arm: env.sim.arm.name.clone(),
        policy: policy.name().to_string(),
        seed,
        records,
        total_return: total,
        fallen,
        faults: env.faults,
    })
}
