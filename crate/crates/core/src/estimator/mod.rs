//! High-level disturbance estimator: a soft actor-critic agent mapping body
//! features and the adapter's latent state to a wrench estimate.

pub mod bandit;
pub mod reward;
pub mod train;

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::nn::{Activation, AdamState, Checkpoint, MlpParams, Tensor};
use crate::state::{BodyState, DisturbanceLimits, DisturbanceParams, LatentState, Vec3, LATENT_DIM};

pub const BODY_DIM: usize = 8;
pub const OBS_DIM: usize = BODY_DIM + LATENT_DIM;
pub const ACTION_DIM: usize = 6;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Normalized observations are clipped to this magnitude.
pub const OBS_CLIP: f64 = 10.0;
/// Lower bound on the running std. Every feature is an angle, rate, speed
/// or height of order 0.1 to 1, so nearly constant warm-up features must
/// not blow up later deviations.
pub const STD_FLOOR: f64 = 0.05;

/// Policy input: roll, pitch, roll rate, pitch rate, heading-frame `v_x`,
/// `v_y`, yaw rate, height, then the latent state.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Observation {
    pub body_features: [f64; BODY_DIM],
    pub latent: [f64; LATENT_DIM],
}

impl Observation {
    pub fn new(body: &BodyState, latent: &LatentState) -> Self {
        let v = body.heading_velocity();
        Self {
            body_features: [
                body.roll(),
                body.pitch(),
                body.angular_velocity.x,
                body.angular_velocity.y,
                v.x,
                v.y,
                body.angular_velocity.z,
                body.height(),
            ],
            latent: latent.z,
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        ensure_len("observation", OBS_DIM, v.len())?;
        ensure_finite("observation", v)?;
        let mut o = Self::default();
        o.body_features.copy_from_slice(&v[..BODY_DIM]);
        o.latent.copy_from_slice(&v[BODY_DIM..]);
        Ok(o)
    }

    pub fn to_array(&self) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        out[..BODY_DIM].copy_from_slice(&self.body_features);
        out[BODY_DIM..].copy_from_slice(&self.latent);
        out
    }
}

/// Welford running mean and variance; stops updating once frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningNorm {
    pub count: u64,
    pub mean: [f64; OBS_DIM],
    m2: [f64; OBS_DIM],
    pub frozen: bool,
}

impl Default for RunningNorm {
    fn default() -> Self {
        Self {
            count: 0,
            mean: [0.0; OBS_DIM],
            m2: [0.0; OBS_DIM],
            frozen: false,
        }
    }
}

impl RunningNorm {
    pub fn update(&mut self, x: &[f64; OBS_DIM]) {
        if self.frozen {
            return;
        }
        self.count += 1;
        let n = self.count as f64;
        for i in 0..OBS_DIM {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn std(&self) -> [f64; OBS_DIM] {
        let mut s = [1.0; OBS_DIM];
        if self.count >= 2 {
            for (i, v) in s.iter_mut().enumerate() {
                *v = (self.m2[i] / self.count as f64).sqrt().max(STD_FLOOR);
            }
        }
        s
    }

    pub fn normalize(&self, x: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
        let s = self.std();
        let mut out = [0.0; OBS_DIM];
        for i in 0..OBS_DIM {
            out[i] = ((x[i] - self.mean[i]) / s[i]).clamp(-OBS_CLIP, OBS_CLIP);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// Raw observation; normalized when sampled.
    pub obs: [f64; OBS_DIM],
    /// Pre-squash action.
    pub action: [f64; ACTION_DIM],
    pub reward: f64,
    pub next_obs: [f64; OBS_DIM],
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Parameter("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            data: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        })
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.reward.is_finite() {
            return Err(Error::InvalidArgument("non-finite reward".into()));
        }
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample<'a, R: Rng>(&'a self, n: usize, rng: &mut R) -> Result<Vec<&'a Transition>> {
        if self.data.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        Ok((0..n)
            .map(|_| &self.data[rng.random_range(0..self.data.len())])
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SacConfig {
    pub gamma: f64,
    pub polyak: f64,
    pub learning_rate: f64,
    pub batch: usize,
    pub replay_capacity: usize,
    pub target_entropy: f64,
    pub warmup_steps: usize,
    pub hidden: usize,
    pub initial_alpha: f64,
    /// Log-std the actor starts from.
    pub initial_log_std: f64,
    /// Scale applied to the actor's initial output weights; small values
    /// start the deterministic policy near the zero wrench.
    pub actor_output_scale: f64,
    pub limits: DisturbanceLimits,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            polyak: 0.005,
            learning_rate: 3e-4,
            batch: 256,
            replay_capacity: 100_000,
            target_entropy: -(ACTION_DIM as f64),
            warmup_steps: 1000,
            hidden: 128,
            initial_alpha: 0.01,
            initial_log_std: -2.0,
            actor_output_scale: 0.01,
            limits: DisturbanceLimits::default(),
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Parameter("gamma must be in [0, 1)".into()));
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return Err(Error::Parameter("polyak must be in (0, 1]".into()));
        }
        if !(self.learning_rate > 0.0) || self.batch == 0 || self.hidden == 0 {
            return Err(Error::Parameter(
                "learning rate, batch and hidden width must be positive".into(),
            ));
        }
        if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&self.initial_log_std) {
            return Err(Error::Parameter("initial log-std must lie in the clamp range".into()));
        }
        if !(self.actor_output_scale >= 0.0 && self.actor_output_scale.is_finite()) {
            return Err(Error::Parameter("actor output scale must be finite and >= 0".into()));
        }
        if !(self.initial_alpha > 0.0) || !self.target_entropy.is_finite() {
            return Err(Error::Parameter("alpha must be positive, target entropy finite".into()));
        }
        if !(self.limits.max_force > 0.0 && self.limits.max_torque > 0.0) {
            return Err(Error::Parameter("wrench limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateLosses {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
}

/// Adam on a single scalar.
#[derive(Clone, Debug, PartialEq)]
struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
    lr: f64,
}

impl ScalarAdam {
    fn step(&mut self, x: &mut f64, g: f64) {
        self.t += 1;
        self.m = 0.9 * self.m + 0.1 * g;
        self.v = 0.999 * self.v + 0.001 * g * g;
        let mh = self.m / (1.0 - 0.9f64.powi(self.t));
        let vh = self.v / (1.0 - 0.999f64.powi(self.t));
        *x -= self.lr * mh / (vh.sqrt() + 1e-8);
    }
}

/// Numerically stable `log(1 - tanh(u)^2)`.
fn log_tanh_jacobian(u: f64) -> f64 {
    let softplus = |x: f64| if x > 30.0 { x } else { x.exp().ln_1p() };
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

const HALF_LOG_TAU: f64 = 0.918_938_533_204_672_8;

/// Squashed Gaussian sample for every column of the actor output.
struct PolicySample {
    /// Squashed action, `ACTION_DIM x B`.
    a: DMatrix<f64>,
    /// Noise draws.
    eps: DMatrix<f64>,
    std: DMatrix<f64>,
    /// Whether the raw log-std was inside the clamp range.
    unclamped: DMatrix<bool>,
    log_prob: Vec<f64>,
}

fn sample_policy(out: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> PolicySample {
    let b = out.ncols();
    let mut a = DMatrix::zeros(ACTION_DIM, b);
    let mut eps = DMatrix::zeros(ACTION_DIM, b);
    let mut std = DMatrix::zeros(ACTION_DIM, b);
    let mut unclamped = DMatrix::from_element(ACTION_DIM, b, true);
    let mut log_prob = vec![0.0; b];
    for c in 0..b {
        for k in 0..ACTION_DIM {
            let raw = out[(ACTION_DIM + k, c)];
            let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            unclamped[(k, c)] = raw == ls;
            let s = ls.exp();
            let e: f64 = rng.sample(StandardNormal);
            let u = out[(k, c)] + s * e;
            a[(k, c)] = u.tanh();
            eps[(k, c)] = e;
            std[(k, c)] = s;
            log_prob[c] += -0.5 * e * e - ls - HALF_LOG_TAU - log_tanh_jacobian(u);
        }
    }
    PolicySample {
        a,
        eps,
        std,
        unclamped,
        log_prob,
    }
}

fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    m.rows_mut(0, top.nrows()).copy_from(top);
    m.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    m
}

#[derive(Clone, Debug)]
pub struct SacAgent {
    pub config: SacConfig,
    pub actor: MlpParams,
    pub critic1: MlpParams,
    pub critic2: MlpParams,
    pub target1: MlpParams,
    pub target2: MlpParams,
    pub log_alpha: f64,
    pub norm: RunningNorm,
    pub updates: u64,
    actor_opt: AdamState,
    critic1_opt: AdamState,
    critic2_opt: AdamState,
    alpha_opt: ScalarAdam,
    rng: ChaCha8Rng,
}

impl SacAgent {
    pub fn new(config: SacConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let mut actor = MlpParams::new(
            &[OBS_DIM, h, h, 2 * ACTION_DIM],
            Activation::Relu,
            Activation::Identity,
            &mut init,
        )?;
        if let Some(last) = actor.layers_mut().last_mut() {
            last.weights *= config.actor_output_scale;
            for k in 0..ACTION_DIM {
                last.bias[ACTION_DIM + k] = config.initial_log_std;
            }
        }
        let critic = |rng: &mut ChaCha8Rng| {
            MlpParams::new(
                &[OBS_DIM + ACTION_DIM, h, h, 1],
                Activation::Relu,
                Activation::Identity,
                rng,
            )
        };
        let critic1 = critic(&mut init)?;
        let critic2 = critic(&mut init)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(11);
        let lr = config.learning_rate;
        Ok(Self {
            actor_opt: AdamState::new(&actor, lr),
            critic1_opt: AdamState::new(&critic1, lr),
            critic2_opt: AdamState::new(&critic2, lr),
            alpha_opt: ScalarAdam {
                m: 0.0,
                v: 0.0,
                t: 0,
                lr,
            },
            target1: critic1.clone(),
            target2: critic2.clone(),
            log_alpha: config.initial_alpha.ln(),
            actor,
            critic1,
            critic2,
            norm: RunningNorm::default(),
            updates: 0,
            rng,
            config,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Reseeds the sampling stream, e.g. before a reproducible rollout.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.rng.set_stream(11);
    }

    fn normalized_column(&self, obs: &[f64; OBS_DIM]) -> DMatrix<f64> {
        DMatrix::from_column_slice(OBS_DIM, 1, &self.norm.normalize(obs))
    }

    pub fn to_wrench(&self, a: &[f64]) -> DisturbanceParams {
        let f = self.config.limits.max_force;
        let t = self.config.limits.max_torque;
        DisturbanceParams {
            force: Vec3::new(a[0], a[1], a[2]) * f,
            torque: Vec3::new(a[3], a[4], a[5]) * t,
        }
    }

    /// Pre-squash action for `obs`: a Gaussian draw, or the mean when
    /// `stochastic` is false.
    pub fn act_raw(&mut self, obs: &Observation, stochastic: bool) -> Result<[f64; ACTION_DIM]> {
        let x = obs.to_array();
        ensure_finite("observation", &x)?;
        let out = self.actor.infer(&self.normalized_column(&x))?;
        let mut u = [0.0; ACTION_DIM];
        for k in 0..ACTION_DIM {
            u[k] = out[k];
            if stochastic {
                let s = out[ACTION_DIM + k].clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
                let e: f64 = self.rng.sample(StandardNormal);
                u[k] += s * e;
            }
        }
        Ok(u)
    }

    pub fn squash(u: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
        u.map(f64::tanh)
    }

    pub fn act(&mut self, obs: &Observation, stochastic: bool) -> Result<DisturbanceParams> {
        let u = self.act_raw(obs, stochastic)?;
        Ok(self.to_wrench(&Self::squash(&u)))
    }

    /// One SAC update on a batch drawn from `buffer`.
    pub fn update(&mut self, buffer: &ReplayBuffer) -> Result<UpdateLosses> {
        let batch = buffer.sample(self.config.batch, &mut self.rng)?;
        let b = batch.len();
        let bf = b as f64;
        let mut obs = DMatrix::zeros(OBS_DIM, b);
        let mut next = DMatrix::zeros(OBS_DIM, b);
        let mut act = DMatrix::zeros(ACTION_DIM, b);
        let mut rew = vec![0.0; b];
        let mut not_done = vec![0.0; b];
        for (c, t) in batch.iter().enumerate() {
            obs.set_column(c, &nalgebra::DVector::from_row_slice(&self.norm.normalize(&t.obs)));
            next.set_column(c, &nalgebra::DVector::from_row_slice(&self.norm.normalize(&t.next_obs)));
            for k in 0..ACTION_DIM {
                act[(k, c)] = t.action[k].tanh();
            }
            rew[c] = t.reward;
            not_done[c] = if t.done { 0.0 } else { 1.0 };
        }
        let alpha = self.alpha();
        let gamma = self.config.gamma;

        // Critic targets.
        let next_out = self.actor.infer(&next)?;
        let next_pi = sample_policy(&next_out, &mut self.rng);
        let next_in = stack(&next, &next_pi.a);
        let t1 = self.target1.infer(&next_in)?;
        let t2 = self.target2.infer(&next_in)?;
        let y: Vec<f64> = (0..b)
            .map(|c| rew[c] + gamma * not_done[c] * (t1[c].min(t2[c]) - alpha * next_pi.log_prob[c]))
            .collect();

        let cur_in = stack(&obs, &act);
        let mut critic_losses = [0.0; 2];
        for (i, loss) in critic_losses.iter_mut().enumerate() {
            let (net, opt) = if i == 0 {
                (&mut self.critic1, &mut self.critic1_opt)
            } else {
                (&mut self.critic2, &mut self.critic2_opt)
            };
            let (q, tape) = net.forward(&cur_in)?;
            let mut g = DMatrix::zeros(1, b);
            for c in 0..b {
                let e = q[c] - y[c];
                *loss += e * e / bf;
                g[c] = 2.0 * e / bf;
            }
            let grads = net.backward(&tape, &g)?;
            opt.step(net, &grads)?;
        }

        // Actor, through the reparameterized sample and the smaller critic.
        let (out, actor_tape) = self.actor.forward(&obs)?;
        let pi = sample_policy(&out, &mut self.rng);
        let pi_in = stack(&obs, &pi.a);
        let (q1, tape1) = self.critic1.forward(&pi_in)?;
        let (q2, tape2) = self.critic2.forward(&pi_in)?;
        let mut g1 = DMatrix::zeros(1, b);
        let mut g2 = DMatrix::zeros(1, b);
        let mut actor_loss = 0.0;
        for c in 0..b {
            let qmin = q1[c].min(q2[c]);
            actor_loss += (alpha * pi.log_prob[c] - qmin) / bf;
            if q1[c] <= q2[c] {
                g1[c] = -1.0 / bf;
            } else {
                g2[c] = -1.0 / bf;
            }
        }
        let dq1 = self.critic1.backward(&tape1, &g1)?.input;
        let dq2 = self.critic2.backward(&tape2, &g2)?.input;
        let mut g_out = DMatrix::zeros(2 * ACTION_DIM, b);
        for c in 0..b {
            for k in 0..ACTION_DIM {
                let a = pi.a[(k, c)];
                let da = dq1[(OBS_DIM + k, c)] + dq2[(OBS_DIM + k, c)];
                let du = alpha * 2.0 * a / bf + da * (1.0 - a * a);
                g_out[(k, c)] = du;
                g_out[(ACTION_DIM + k, c)] = if pi.unclamped[(k, c)] {
                    -alpha / bf + du * pi.std[(k, c)] * pi.eps[(k, c)]
                } else {
                    0.0
                };
            }
        }
        let actor_grads = self.actor.backward(&actor_tape, &g_out)?;
        self.actor_opt.step(&mut self.actor, &actor_grads)?;

        // Temperature.
        let mean_logp = pi.log_prob.iter().sum::<f64>() / bf;
        let alpha_grad = -(mean_logp + self.config.target_entropy);
        let alpha_loss = -self.log_alpha * (mean_logp + self.config.target_entropy);
        self.alpha_opt.step(&mut self.log_alpha, alpha_grad);

        self.target1.soft_update(&self.critic1, self.config.polyak)?;
        self.target2.soft_update(&self.critic2, self.config.polyak)?;
        self.updates += 1;
        Ok(UpdateLosses {
            critic1: critic_losses[0],
            critic2: critic_losses[1],
            actor: actor_loss,
            alpha_loss,
            alpha: self.alpha(),
            entropy: -mean_logp,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        self.actor.to_tensors("actor", &mut ck);
        self.critic1.to_tensors("critic1", &mut ck);
        self.critic2.to_tensors("critic2", &mut ck);
        self.target1.to_tensors("target1", &mut ck);
        self.target2.to_tensors("target2", &mut ck);
        ck.insert("sac/log_alpha", Tensor::scalar(self.log_alpha));
        ck.insert("sac/updates", Tensor::scalar(self.updates as f64));
        ck.insert("norm/count", Tensor::scalar(self.norm.count as f64));
        ck.insert("norm/mean", Tensor::vector(self.norm.mean.to_vec()));
        ck.insert("norm/m2", Tensor::vector(self.norm.m2.to_vec()));
        ck.insert("norm/frozen", Tensor::scalar(if self.norm.frozen { 1.0 } else { 0.0 }));
        ck
    }

    /// Restores networks, temperature and normalizer. Optimizer moments
    /// start fresh.
    pub fn from_checkpoint(ck: &Checkpoint, config: SacConfig, seed: u64) -> Result<Self> {
        let mut agent = Self::new(config, seed)?;
        let load = |name: &str, shape: &MlpParams| -> Result<MlpParams> {
            let net = MlpParams::from_tensors(name, ck)?;
            if net.sizes() != shape.sizes() {
                return Err(Error::Checkpoint(format!(
                    "{name} has layers {:?}, expected {:?}",
                    net.sizes(),
                    shape.sizes()
                )));
            }
            Ok(net)
        };
        agent.actor = load("actor", &agent.actor)?;
        agent.critic1 = load("critic1", &agent.critic1)?;
        agent.critic2 = load("critic2", &agent.critic2)?;
        agent.target1 = load("target1", &agent.target1)?;
        agent.target2 = load("target2", &agent.target2)?;
        agent.log_alpha = ck.scalar("sac/log_alpha")?;
        agent.updates = ck.scalar("sac/updates")? as u64;
        let to_arr = |name: &str| -> Result<[f64; OBS_DIM]> {
            let t = ck.get(name)?;
            t.data
                .as_slice()
                .try_into()
                .map_err(|_| Error::Checkpoint(format!("{name} has {} entries", t.data.len())))
        };
        agent.norm = RunningNorm {
            count: ck.scalar("norm/count")? as u64,
            mean: to_arr("norm/mean")?,
            m2: to_arr("norm/m2")?,
            frozen: ck.scalar("norm/frozen")? != 0.0,
        };
        agent.actor_opt = AdamState::new(&agent.actor, agent.config.learning_rate);
        agent.critic1_opt = AdamState::new(&agent.critic1, agent.config.learning_rate);
        agent.critic2_opt = AdamState::new(&agent.critic2, agent.config.learning_rate);
        Ok(agent)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path, config: SacConfig, seed: u64) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, config, seed)
    }

    /// Zeroes every actor weight and bias, so the deterministic action is the
    /// zero wrench.
    pub fn zero_actor(&mut self) {
        for l in self.actor.layers_mut() {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }
}

/// The model-based baseline: no disturbance estimate.
pub fn mbc_baseline() -> DisturbanceParams {
    DisturbanceParams::zero()
}
