//! Harness configuration: a flat INI-style file of typed `key = value` pairs
//! grouped in `[sections]`. Every key has a default; unknown sections and
//! keys are errors. `to_ini` writes the effective configuration back out in
//! the same format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::adapter::TrainConfig;
use crate::controller::ControllerGains;
use crate::error::{Error, Result};
use crate::estimator::SacConfig;
use crate::sim::{ArmModel, PulseConfig, SimConfig, TaskKind, TaskSpec};
use crate::state::{Mat3, RobotParams, Vec3};

pub const ARM_NAMES: [&str; 6] = ["regular", "longer", "heavier", "double", "massless", "none"];

#[derive(Clone, Debug, PartialEq)]
pub struct CollectSettings {
    pub arm: String,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterSettings {
    /// Arm whose adapter is trained from scratch and whose decoder is reused.
    pub arm: String,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MigrateSettings {
    pub arm: String,
    pub budget: usize,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicySettings {
    pub arm: String,
    pub task: TaskKind,
    pub steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub log_every: usize,
    pub pulses: Option<PulseConfig>,
    pub bandit: bool,
    pub bandit_updates: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareSettings {
    pub tasks: Vec<TaskKind>,
    pub arms: Vec<String>,
    pub seeds: usize,
    pub oracle: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub task: TaskKind,
    pub arm: String,
    /// `mbc`, `dpc` or `oracle`.
    pub policy: String,
}

/// Optional artifact locations; unset ones get per-command default names
/// inside the output directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub adapter: Option<PathBuf>,
    pub base_adapter: Option<PathBuf>,
    pub agent: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HarnessConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads for `compare`; 0 lets the pool decide.
    pub threads: usize,
    pub robot: RobotParams,
    pub gains: ControllerGains,
    pub sim: SimConfig,
    /// Task parameters shared by every task kind; `kind` is ignored.
    pub task: TaskSpec,
    pub sac: SacConfig,
    pub adapter: AdapterSettings,
    pub collect: CollectSettings,
    pub migrate: MigrateSettings,
    pub policy: PolicySettings,
    pub compare: CompareSettings,
    pub eval: EvalSettings,
    pub paths: Paths,
    pub arms: BTreeMap<String, ArmModel>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        let arms = ARM_NAMES
            .iter()
            .map(|n| (n.to_string(), ArmModel::catalog(n).expect("catalog arm")))
            .collect();
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            threads: 0,
            robot: RobotParams::default(),
            gains: ControllerGains::default(),
            sim: SimConfig::default(),
            task: TaskSpec::new(TaskKind::Standing),
            sac: SacConfig::default(),
            adapter: AdapterSettings {
                arm: "regular".into(),
                train: TrainConfig {
                    epochs: 10,
                    final_lr_fraction: 0.02,
                    ..Default::default()
                },
            },
            collect: CollectSettings {
                arm: "regular".into(),
                samples: 30_000,
            },
            migrate: MigrateSettings {
                arm: "heavier".into(),
                budget: 30_000,
                train: TrainConfig {
                    epochs: 100,
                    final_lr_fraction: 0.02,
                    ..Default::default()
                },
            },
            policy: PolicySettings {
                arm: "regular".into(),
                task: TaskKind::Reaching,
                steps: 100_000,
                eval_every: 10_000,
                eval_episodes: 2,
                log_every: 1000,
                pulses: Some(PulseConfig::default()),
                bandit: false,
                bandit_updates: 5000,
            },
            compare: CompareSettings {
                tasks: vec![TaskKind::Carrying],
                arms: vec!["heavier".into()],
                seeds: 5,
                oracle: false,
            },
            eval: EvalSettings {
                task: TaskKind::Carrying,
                arm: "heavier".into(),
                policy: "dpc".into(),
            },
            paths: Paths::default(),
            arms,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v
        .trim()
        .parse()
        .map_err(|_| cfg_err(format!("{key}: '{v}' is not a number")))?;
    if !x.is_finite() {
        return Err(cfg_err(format!("{key}: value must be finite")));
    }
    Ok(x)
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .replace('_', "")
        .parse()
        .map_err(|_| cfg_err(format!("{key}: '{v}' is not a non-negative integer")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(cfg_err(format!("{key}: '{v}' is not a boolean"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_f64(key, x)).collect()
}

fn parse_fixed<const N: usize>(key: &str, v: &str) -> Result<[f64; N]> {
    let l = parse_list(key, v)?;
    l.as_slice()
        .try_into()
        .map_err(|_| cfg_err(format!("{key}: expected {N} values, got {}", l.len())))
}

fn parse_task(key: &str, v: &str) -> Result<TaskKind> {
    TaskKind::parse(v.trim()).map_err(|_| cfg_err(format!("{key}: unknown task '{}'", v.trim())))
}

fn parse_arm_name(key: &str, v: &str) -> Result<String> {
    let v = v.trim();
    if ARM_NAMES.contains(&v) {
        Ok(v.to_string())
    } else {
        Err(cfg_err(format!(
            "{key}: unknown arm '{v}' (expected one of {})",
            ARM_NAMES.join(", ")
        )))
    }
}

fn parse_names(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn parse_path(v: &str) -> Option<PathBuf> {
    let v = v.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ")
}

impl HarnessConfig {
    pub fn from_ini(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| cfg_err(format!("line {}: unterminated section header", i + 1)))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected 'key = value'", i + 1)))?;
            if section.is_empty() {
                return Err(cfg_err(format!("line {}: key outside any section", i + 1)));
            }
            cfg.set(&section, k.trim(), v.trim()).map_err(|e| {
                cfg_err(format!(
                    "line {}: {}",
                    i + 1,
                    e.to_string().trim_start_matches("config: ")
                ))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        Self::from_ini(&text)
    }

    /// Applies `section.key=value`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (lhs, v) = assignment
            .split_once('=')
            .ok_or_else(|| cfg_err(format!("override '{assignment}' must look like section.key=value")))?;
        let (section, key) = lhs
            .trim()
            .rsplit_once('.')
            .ok_or_else(|| cfg_err(format!("override '{assignment}' must name section.key")))?;
        self.set(section, key, v.trim())?;
        self.validate()
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let full = format!("{section}.{key}");
        let k = full.as_str();
        let unknown = || cfg_err(format!("unknown key '{k}'"));
        if let Some(arm) = section.strip_prefix("arm.") {
            let arm = parse_arm_name(k, arm)?;
            let model = self.arms.get_mut(&arm).expect("catalog arm");
            match key {
                "link_lengths" => model.link_lengths = parse_list(k, v)?,
                "link_masses" => model.link_masses = parse_list(k, v)?,
                "gripper_mass" => model.gripper_mass = parse_f64(k, v)?,
                "mounts" => {
                    let l = parse_list(k, v)?;
                    if l.len() % 3 != 0 {
                        return Err(cfg_err(format!("{k}: expected a multiple of 3 values")));
                    }
                    model.mounts = l.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
                }
                _ => return Err(unknown()),
            }
            return Ok(());
        }
        match (section, key) {
            ("run", "seed") => self.seed = parse_usize(k, v)? as u64,
            ("run", "out") => self.out = PathBuf::from(v),
            ("run", "threads") => self.threads = parse_usize(k, v)?,

            ("robot", "mass") => self.robot.mass = parse_f64(k, v)?,
            ("robot", "inertia") => {
                let l = parse_list(k, v)?;
                self.robot.trunk_inertia = match l.len() {
                    3 => Mat3::from_diagonal(&Vec3::new(l[0], l[1], l[2])),
                    9 => Mat3::from_row_slice(&l),
                    n => return Err(cfg_err(format!("{k}: expected 3 or 9 values, got {n}"))),
                };
            }
            ("robot", "hip_offsets") => {
                let l: [f64; 12] = parse_fixed(k, v)?;
                for (h, c) in self.robot.hip_offsets.iter_mut().zip(l.chunks(3)) {
                    *h = Vec3::new(c[0], c[1], c[2]);
                }
            }
            ("robot", "friction") => self.robot.friction_coefficient = parse_f64(k, v)?,
            ("robot", "min_normal_force") => self.robot.min_normal_force = parse_f64(k, v)?,
            ("robot", "max_normal_force") => self.robot.max_normal_force = parse_f64(k, v)?,

            ("controller", "kp_pose") => self.gains.kp_pose = parse_fixed::<6>(k, v)?.into(),
            ("controller", "kd_pose") => self.gains.kd_pose = parse_fixed::<6>(k, v)?.into(),
            ("controller", "kp_swing") => self.gains.kp_swing = parse_fixed::<3>(k, v)?.into(),
            ("controller", "kd_swing") => self.gains.kd_swing = parse_fixed::<3>(k, v)?.into(),
            ("controller", "q_weights") => self.gains.q_weights = parse_fixed::<6>(k, v)?.into(),
            ("controller", "r_weights") => {
                let l = parse_list(k, v)?;
                self.gains.r_weights = match l.len() {
                    1 => crate::state::Vec12::repeat(l[0]),
                    12 => crate::state::Vec12::from_row_slice(&l),
                    n => return Err(cfg_err(format!("{k}: expected 1 or 12 values, got {n}"))),
                };
            }

            ("sim", "physics_dt") => self.sim.physics_dt = parse_f64(k, v)?,
            ("sim", "lowlevel_period") => self.sim.lowlevel_period = parse_f64(k, v)?,
            ("sim", "highlevel_period") => self.sim.highlevel_period = parse_f64(k, v)?,
            ("sim", "episode_length") => self.sim.episode_length = parse_f64(k, v)?,
            ("sim", "gravity") => self.sim.gravity = parse_f64(k, v)?,

            ("task", "height") => self.task.height = parse_f64(k, v)?,
            ("task", "push_speed") => self.task.push_speed = parse_f64(k, v)?,
            ("task", "push_force") => self.task.push_force = parse_f64(k, v)?,
            ("task", "push_contact_time") => self.task.push_contact_time = parse_f64(k, v)?,
            ("task", "ball_mass") => self.task.ball_mass = parse_f64(k, v)?,
            ("task", "ball_count") => self.task.ball_count = parse_usize(k, v)?,
            ("task", "table_height") => self.task.table_height = parse_f64(k, v)?,
            ("task", "reach_interval") => self.task.reach_interval = parse_f64(k, v)?,
            ("task", "random_speed") => self.task.random_speed = parse_f64(k, v)?,
            ("task", "random_resample") => self.task.random_resample = parse_f64(k, v)?,

            ("sac", "gamma") => self.sac.gamma = parse_f64(k, v)?,
            ("sac", "polyak") => self.sac.polyak = parse_f64(k, v)?,
            ("sac", "learning_rate") => self.sac.learning_rate = parse_f64(k, v)?,
            ("sac", "batch") => self.sac.batch = parse_usize(k, v)?,
            ("sac", "replay_capacity") => self.sac.replay_capacity = parse_usize(k, v)?,
            ("sac", "target_entropy") => self.sac.target_entropy = parse_f64(k, v)?,
            ("sac", "warmup_steps") => self.sac.warmup_steps = parse_usize(k, v)?,
            ("sac", "hidden") => self.sac.hidden = parse_usize(k, v)?,
            ("sac", "initial_alpha") => self.sac.initial_alpha = parse_f64(k, v)?,
            ("sac", "initial_log_std") => self.sac.initial_log_std = parse_f64(k, v)?,
            ("sac", "actor_output_scale") => self.sac.actor_output_scale = parse_f64(k, v)?,
            ("sac", "max_force") => self.sac.limits.max_force = parse_f64(k, v)?,
            ("sac", "max_torque") => self.sac.limits.max_torque = parse_f64(k, v)?,

            ("adapter", "arm") => self.adapter.arm = parse_arm_name(k, v)?,
            ("adapter", "epochs") => self.adapter.train.epochs = parse_usize(k, v)?,
            ("adapter", "batch") => self.adapter.train.batch = parse_usize(k, v)?,
            ("adapter", "learning_rate") => self.adapter.train.learning_rate = parse_f64(k, v)?,
            ("adapter", "final_lr_fraction") => self.adapter.train.final_lr_fraction = parse_f64(k, v)?,
            ("adapter", "holdout") => {
                let h = parse_f64(k, v)?;
                self.adapter.train.holdout = h;
                self.migrate.train.holdout = h;
            }

            ("collect", "arm") => self.collect.arm = parse_arm_name(k, v)?,
            ("collect", "samples") => self.collect.samples = parse_usize(k, v)?,

            ("migrate", "arm") => self.migrate.arm = parse_arm_name(k, v)?,
            ("migrate", "budget") => self.migrate.budget = parse_usize(k, v)?,
            ("migrate", "epochs") => self.migrate.train.epochs = parse_usize(k, v)?,
            ("migrate", "learning_rate") => self.migrate.train.learning_rate = parse_f64(k, v)?,
            ("migrate", "final_lr_fraction") => self.migrate.train.final_lr_fraction = parse_f64(k, v)?,

            ("policy", "arm") => self.policy.arm = parse_arm_name(k, v)?,
            ("policy", "task") => self.policy.task = parse_task(k, v)?,
            ("policy", "steps") => self.policy.steps = parse_usize(k, v)?,
            ("policy", "eval_every") => self.policy.eval_every = parse_usize(k, v)?,
            ("policy", "eval_episodes") => self.policy.eval_episodes = parse_usize(k, v)?,
            ("policy", "log_every") => self.policy.log_every = parse_usize(k, v)?,
            ("policy", "pulses") => {
                self.policy.pulses = if parse_bool(k, v)? {
                    Some(self.policy.pulses.unwrap_or_default())
                } else {
                    None
                }
            }
            ("policy", "pulse_max_force") => self.pulses_mut().max_magnitude = parse_f64(k, v)?,
            ("policy", "pulse_duration") => self.pulses_mut().duration = parse_f64(k, v)?,
            ("policy", "pulse_interval") => self.pulses_mut().mean_interval = parse_f64(k, v)?,
            ("policy", "bandit") => self.policy.bandit = parse_bool(k, v)?,
            ("policy", "bandit_updates") => self.policy.bandit_updates = parse_usize(k, v)?,

            ("compare", "tasks") => {
                self.compare.tasks = parse_names(v)
                    .into_iter()
                    .map(|t| parse_task(k, t))
                    .collect::<Result<_>>()?
            }
            ("compare", "arms") => {
                self.compare.arms = parse_names(v)
                    .into_iter()
                    .map(|a| parse_arm_name(k, a))
                    .collect::<Result<_>>()?
            }
            ("compare", "seeds") => self.compare.seeds = parse_usize(k, v)?,
            ("compare", "oracle") => self.compare.oracle = parse_bool(k, v)?,

            ("eval", "task") => self.eval.task = parse_task(k, v)?,
            ("eval", "arm") => self.eval.arm = parse_arm_name(k, v)?,
            ("eval", "policy") => {
                let p = v.trim();
                if !["mbc", "dpc", "oracle"].contains(&p) {
                    return Err(cfg_err(format!(
                        "{k}: unknown policy '{p}' (expected mbc, dpc or oracle)"
                    )));
                }
                self.eval.policy = p.to_string();
            }

            ("paths", "dataset") => self.paths.dataset = parse_path(v),
            ("paths", "adapter") => self.paths.adapter = parse_path(v),
            ("paths", "base_adapter") => self.paths.base_adapter = parse_path(v),
            ("paths", "agent") => self.paths.agent = parse_path(v),

            (
                "run" | "robot" | "controller" | "sim" | "task" | "sac" | "adapter" | "collect" | "migrate" | "policy"
                | "compare" | "eval" | "paths",
                _,
            ) => return Err(unknown()),
            _ => return Err(cfg_err(format!("unknown section '[{section}]'"))),
        }
        Ok(())
    }

    fn pulses_mut(&mut self) -> &mut PulseConfig {
        self.policy.pulses.get_or_insert_with(PulseConfig::default)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |r: Result<()>| r.map_err(|e| cfg_err(e.to_string()));
        wrap(self.robot.validate())?;
        wrap(self.gains.validate())?;
        wrap(self.sim.validate())?;
        wrap(self.task.validate())?;
        wrap(self.sac.validate())?;
        wrap(self.adapter.train.validate())?;
        wrap(self.migrate.train.validate())?;
        for arm in self.arms.values() {
            wrap(arm.validate())?;
        }
        if self.compare.tasks.is_empty() || self.compare.arms.is_empty() || self.compare.seeds == 0 {
            return Err(cfg_err("compare needs at least one task, one arm and one seed"));
        }
        if self.policy.log_every == 0 {
            return Err(cfg_err("policy.log_every must be positive"));
        }
        Ok(())
    }

    pub fn arm(&self, name: &str) -> Result<ArmModel> {
        self.arms
            .get(name)
            .cloned()
            .ok_or_else(|| cfg_err(format!("unknown arm '{name}'")))
    }

    /// Task of the given kind with the shared task parameters.
    pub fn task_spec(&self, kind: TaskKind) -> TaskSpec {
        TaskSpec {
            kind,
            pulses: None,
            ..self.task.clone()
        }
    }

    /// Resolves a configured path against the output directory, falling back
    /// to `default_name`.
    pub fn artifact(&self, configured: &Option<PathBuf>, default_name: &str) -> PathBuf {
        match configured {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => self.out.join(p),
            None => self.out.join(default_name),
        }
    }

    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let r = &self.robot;
        let g = &self.gains;
        let t = &self.task;
        let sac = &self.sac;
        let p = &self.policy;
        let pulses = p.pulses.unwrap_or_default();
        let names = |v: &[String]| v.join(", ");
        let tasks: Vec<String> = self.compare.tasks.iter().map(|t| t.name().to_string()).collect();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "[run]\nseed = {}\nout = {}\nthreads = {}\n",
            self.seed,
            self.out.display(),
            self.threads
        );
        let hips: Vec<f64> = r.hip_offsets.iter().flat_map(|h| h.iter().copied()).collect();
        let inertia: Vec<f64> = r.trunk_inertia.transpose().iter().copied().collect();
        let _ = writeln!(
            s,
            "[robot]\nmass = {}\ninertia = {}\nhip_offsets = {}\nfriction = {}\nmin_normal_force = {}\nmax_normal_force = {}\n",
            r.mass,
            join(&inertia),
            join(&hips),
            r.friction_coefficient,
            r.min_normal_force,
            r.max_normal_force
        );
        let _ = writeln!(
            s,
            "[controller]\nkp_pose = {}\nkd_pose = {}\nkp_swing = {}\nkd_swing = {}\nq_weights = {}\nr_weights = {}\n",
            join(g.kp_pose.as_slice()),
            join(g.kd_pose.as_slice()),
            join(g.kp_swing.as_slice()),
            join(g.kd_swing.as_slice()),
            join(g.q_weights.as_slice()),
            join(g.r_weights.as_slice())
        );
        let _ = writeln!(
            s,
            "[sim]\nphysics_dt = {}\nlowlevel_period = {}\nhighlevel_period = {}\nepisode_length = {}\ngravity = {}\n",
            self.sim.physics_dt,
            self.sim.lowlevel_period,
            self.sim.highlevel_period,
            self.sim.episode_length,
            self.sim.gravity
        );
        let _ = writeln!(
            s,
            "[task]\nheight = {}\npush_speed = {}\npush_force = {}\npush_contact_time = {}\nball_mass = {}\nball_count = {}\n\
             table_height = {}\nreach_interval = {}\nrandom_speed = {}\nrandom_resample = {}\n",
            t.height,
            t.push_speed,
            t.push_force,
            t.push_contact_time,
            t.ball_mass,
            t.ball_count,
            t.table_height,
            t.reach_interval,
            t.random_speed,
            t.random_resample
        );
        let _ = writeln!(
            s,
            "[sac]\ngamma = {}\npolyak = {}\nlearning_rate = {}\nbatch = {}\nreplay_capacity = {}\ntarget_entropy = {}\n\
             warmup_steps = {}\nhidden = {}\ninitial_alpha = {}\ninitial_log_std = {}\nactor_output_scale = {}\n\
             max_force = {}\nmax_torque = {}\n",
            sac.gamma,
            sac.polyak,
            sac.learning_rate,
            sac.batch,
            sac.replay_capacity,
            sac.target_entropy,
            sac.warmup_steps,
            sac.hidden,
            sac.initial_alpha,
            sac.initial_log_std,
            sac.actor_output_scale,
            sac.limits.max_force,
            sac.limits.max_torque
        );
        let a = &self.adapter;
        let _ = writeln!(
            s,
            "[adapter]\narm = {}\nepochs = {}\nbatch = {}\nlearning_rate = {}\nfinal_lr_fraction = {}\nholdout = {}\n",
            a.arm, a.train.epochs, a.train.batch, a.train.learning_rate, a.train.final_lr_fraction, a.train.holdout
        );
        let _ = writeln!(
            s,
            "[collect]\narm = {}\nsamples = {}\n",
            self.collect.arm, self.collect.samples
        );
        let m = &self.migrate;
        let _ = writeln!(
            s,
            "[migrate]\narm = {}\nbudget = {}\nepochs = {}\nlearning_rate = {}\nfinal_lr_fraction = {}\n",
            m.arm, m.budget, m.train.epochs, m.train.learning_rate, m.train.final_lr_fraction
        );
        let _ = writeln!(
            s,
            "[policy]\narm = {}\ntask = {}\nsteps = {}\neval_every = {}\neval_episodes = {}\nlog_every = {}\npulses = {}\n\
             pulse_max_force = {}\npulse_duration = {}\npulse_interval = {}\nbandit = {}\nbandit_updates = {}\n",
            p.arm,
            p.task.name(),
            p.steps,
            p.eval_every,
            p.eval_episodes,
            p.log_every,
            p.pulses.is_some(),
            pulses.max_magnitude,
            pulses.duration,
            pulses.mean_interval,
            p.bandit,
            p.bandit_updates
        );
        let _ = writeln!(
            s,
            "[compare]\ntasks = {}\narms = {}\nseeds = {}\noracle = {}\n",
            tasks.join(", "),
            names(&self.compare.arms),
            self.compare.seeds,
            self.compare.oracle
        );
        let _ = writeln!(
            s,
            "[eval]\ntask = {}\narm = {}\npolicy = {}\n",
            self.eval.task.name(),
            self.eval.arm,
            self.eval.policy
        );
        let _ = writeln!(
            s,
            "[paths]\ndataset = {}\nadapter = {}\nbase_adapter = {}\nagent = {}",
            path(&self.paths.dataset),
            path(&self.paths.adapter),
            path(&self.paths.base_adapter),
            path(&self.paths.agent)
        );
        for (name, arm) in &self.arms {
            let mounts: Vec<f64> = arm.mounts.iter().flat_map(|m| m.iter().copied()).collect();
            let _ = write!(
                s,
                "\n[arm.{name}]\nlink_lengths = {}\nlink_masses = {}\ngripper_mass = {}\nmounts = {}\n",
                join(&arm.link_lengths),
                join(&arm.link_masses),
                arm.gripper_mass,
                join(&mounts)
            );
        }
        s
    }
}
