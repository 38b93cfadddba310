//! Synthetic one-step bandit used to check the SAC update before any
//! expensive training run: constant observation, reward `-|a - a*|^2` on the
//! squashed action, so the deterministic policy should settle on `a*`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{Observation, ReplayBuffer, SacAgent, SacConfig, Transition, ACTION_DIM, OBS_DIM};
use crate::state::DisturbanceParams;

#[derive(Clone, Debug, PartialEq)]
pub struct BanditConfig {
    pub updates: usize,
    pub seed: u64,
    pub sac: SacConfig,
    /// Optimum in squashed units; drawn from `[-0.7, 0.7]^6` when `None`.
    pub target: Option<[f64; ACTION_DIM]>,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            updates: 5000,
            seed: 0,
            sac: SacConfig::default(),
            target: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BanditReport {
    pub target: DisturbanceParams,
    pub action: DisturbanceParams,
    /// Largest per-component error as a fraction of that component's limit.
    pub max_error_fraction: f64,
    pub updates: usize,
    /// `(update, max_error_fraction)` sampled every 100 updates.
    pub curve: Vec<(usize, f64)>,
}

impl BanditReport {
    pub fn converged(&self, tolerance: f64) -> bool {
        self.max_error_fraction <= tolerance
    }
}

fn error_fraction(a: &DisturbanceParams, b: &DisturbanceParams, cfg: &SacConfig) -> f64 {
    let f = (a.force - b.force).amax() / cfg.limits.max_force;
    let t = (a.torque - b.torque).amax() / cfg.limits.max_torque;
    f.max(t)
}

/// One environment interaction and one SAC update per iteration; the first
/// `batch` interactions only fill the buffer.
pub fn run_bandit(cfg: &BanditConfig) -> Result<BanditReport> {
    if cfg.updates == 0 {
        return Err(Error::InvalidArgument("bandit needs at least one update".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let target = cfg
        .target
        .unwrap_or_else(|| std::array::from_fn(|_| rng.random_range(-0.7..0.7)));
    if target.iter().any(|t| !(t.abs() < 1.0)) {
        return Err(Error::InvalidArgument("bandit optimum must lie inside (-1, 1)".into()));
    }
    let mut agent = SacAgent::new(cfg.sac.clone(), cfg.seed)?;
    let obs = Observation::default();
    let x = obs.to_array();
    agent.norm.update(&x);
    agent.norm.freeze();
    let mut buffer = ReplayBuffer::new(cfg.sac.replay_capacity)?;
    let target_wrench = agent.to_wrench(&target);

    let mut curve = Vec::new();
    let mut updates = 0;
    while updates < cfg.updates {
        let u = agent.act_raw(&obs, true)?;
        let a = SacAgent::squash(&u);
        let reward = -a.iter().zip(&target).map(|(a, t)| (a - t).powi(2)).sum::<f64>();
        buffer.push(Transition {
            obs: x,
            action: u,
            reward,
            next_obs: [0.0; OBS_DIM],
            done: true,
        })?;
        if buffer.len() < cfg.sac.batch {
            continue;
        }
        agent.update(&buffer)?;
        updates += 1;
        if updates % 100 == 0 {
            let act = agent.act(&obs, false)?;
            curve.push((updates, error_fraction(&act, &target_wrench, &cfg.sac)));
        }
    }
    let action = agent.act(&obs, false)?;
    Ok(BanditReport {
        max_error_fraction: error_fraction(&action, &target_wrench, &cfg.sac),
        target: target_wrench,
        action,
        updates,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_input() {
        assert!(run_bandit(&BanditConfig {
            updates: 0,
            ..Default::default()
        })
        .is_err());
        let cfg = BanditConfig {
            updates: 1,
            target: Some([1.5, 0.0, 0.0, 0.0, 0.0, 0.0]),
            ..Default::default()
        };
        assert!(run_bandit(&cfg).is_err());
    }

    #[test]
    fn small_bandit_moves_toward_the_optimum() {
        let cfg = BanditConfig {
            updates: 600,
            seed: 3,
            sac: SacConfig {
                hidden: 32,
                batch: 64,
                learning_rate: 1e-3,
                ..Default::default()
            },
            target: Some([0.5, -0.5, 0.3, -0.3, 0.6, -0.1]),
        };
        let r = run_bandit(&cfg).unwrap();
        assert_eq!(r.updates, 600);
        assert!(r.max_error_fraction < 0.2, "{r:?}");
        assert!(r.curve.last().unwrap().1 < r.curve[0].1);
    }
}
