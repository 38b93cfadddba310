//! Pipeline commands behind the `dpc` binary. Each command reads its
//! settings from a [`HarnessConfig`], writes artifacts into the configured
//! output directory together with an echo of the effective configuration,
//! and returns the lines it wants printed.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::adapter::{load_dataset, migrate_encoder, save_dataset, target_variance, train_adapter, AdapterModel};
use crate::error::{Error, Result};
use crate::estimator::bandit::{run_bandit, BanditConfig};
use crate::estimator::train::{curve_to_csv, train_policy, PolicyTrainConfig};
use crate::estimator::SacAgent;
use crate::sim::collect::collect_with;
use crate::sim::rollout::{run_episode, EpisodeLog, Policy};
use crate::sim::{Environment, TaskKind};

pub use config::HarnessConfig;

/// Process exit code for an error: 2 configuration, 3 missing artifact,
/// 4 anything else at run time.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::MissingArtifact(_) => 3,
        _ => 4,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.display().to_string()))
    }
}

fn prepare(cfg: &HarnessConfig, command: &str) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    write_file(&cfg.out.join(format!("{command}.config.ini")), &cfg.to_ini())
}

fn adapter_path(cfg: &HarnessConfig, arm: &str) -> PathBuf {
    cfg.out.join(format!("adapter_{arm}.dpcnn"))
}

fn dataset_path(cfg: &HarnessConfig, arm: &str) -> PathBuf {
    cfg.artifact(&cfg.paths.dataset, &format!("dataset_{arm}.csv"))
}

fn agent_path(cfg: &HarnessConfig) -> PathBuf {
    cfg.artifact(&cfg.paths.agent, "agent.dpcnn")
}

fn load_adapter(path: &Path) -> Result<AdapterModel> {
    require(path)?;
    AdapterModel::load(path)
}

fn load_agent(cfg: &HarnessConfig) -> Result<SacAgent> {
    let path = agent_path(cfg);
    require(&path)?;
    SacAgent::load(&path, cfg.sac.clone(), cfg.seed)
}

/// Random-motion dataset for `collect.arm`.
pub fn cmd_collect(cfg: &HarnessConfig) -> Result<Vec<String>> {
    prepare(cfg, "collect")?;
    let arm = cfg.arm(&cfg.collect.arm)?;
    let samples = collect_with(&arm, cfg.collect.samples, cfg.seed, &cfg.robot, &cfg.gains, &cfg.sim)?;
    let path = dataset_path(cfg, &cfg.collect.arm);
    save_dataset(&samples, &path)?;
    Ok(vec![
        format!("wrote {}", path.display()),
        format!("samples {}", samples.len()),
        format!("next_drp variance {:.6e}", target_variance(&samples)),
    ])
}

/// Trains the base adapter on the `adapter.arm` dataset.
pub fn cmd_train_adapter(cfg: &HarnessConfig) -> Result<Vec<String>> {
    prepare(cfg, "train-adapter")?;
    let arm = &cfg.adapter.arm;
    let data_path = dataset_path(cfg, arm);
    require(&data_path)?;
    let samples = load_dataset(&data_path)?;
    let expected = cfg.arm(arm)?.total_dof();
    check_dof(&samples, expected)?;
    let train = crate::adapter::TrainConfig {
        seed: cfg.seed,
        ..cfg.adapter.train.clone()
    };
    let (model, report) = train_adapter(&samples, &train)?;
    let out = cfg.artifact(&cfg.paths.adapter, &format!("adapter_{arm}.dpcnn"));
    model.save(&out)?;
    write_file(&cfg.out.join(format!("adapter_{arm}_curve.csv")), &report.to_csv())?;
    Ok(vec![
        format!("wrote {}", out.display()),
        format!(
            "train samples {} held-out samples {}",
            report.train_samples, report.heldout_samples
        ),
        format!(
            "held-out mse {:.6e} mean-predictor mse {:.6e}",
            report.final_mse(),
            report.baseline_mse
        ),
        format!("decoder sha256 {}", model.decoder_digest()),
    ])
}

fn check_dof(samples: &[crate::adapter::AdapterSample], expected: usize) -> Result<()> {
    match samples.first() {
        Some(s) if s.dof() != expected => Err(Error::Dimension {
            context: "dataset joints vs arm",
            expected,
            got: s.dof(),
        }),
        Some(_) => Ok(()),
        None => Err(Error::Empty("dataset")),
    }
}

/// Trains a `migrate.arm` encoder against the base adapter's frozen decoder.
pub fn cmd_migrate(cfg: &HarnessConfig) -> Result<Vec<String>> {
    prepare(cfg, "migrate")?;
    let base_path = cfg.artifact(&cfg.paths.base_adapter, &format!("adapter_{}.dpcnn", cfg.adapter.arm));
    let base = load_adapter(&base_path)?;
    let arm = &cfg.migrate.arm;
    let data_path = dataset_path(cfg, arm);
    require(&data_path)?;
    let samples = load_dataset(&data_path)?;
    check_dof(&samples, cfg.arm(arm)?.total_dof())?;
    let train = crate::adapter::TrainConfig {
        seed: cfg.seed,
        ..cfg.migrate.train.clone()
    };
    let before = base.decoder_digest();
    let (model, report) = migrate_encoder(&base, &samples, cfg.migrate.budget, &train)?;
    let after = model.decoder_digest();
    if before != after {
        return Err(Error::InvalidArgument("decoder changed during migration".into()));
    }
    let out = cfg.artifact(&cfg.paths.adapter, &format!("adapter_{arm}.dpcnn"));
    model.save(&out)?;
    write_file(&cfg.out.join(format!("adapter_{arm}_curve.csv")), &report.to_csv())?;
    Ok(vec![
        format!("wrote {}", out.display()),
        format!(
            "used {} of {} samples",
            report.train_samples + report.heldout_samples,
            samples.len()
        ),
        format!(
            "held-out mse {:.6e} mean-predictor mse {:.6e}",
            report.final_mse(),
            report.baseline_mse
        ),
        format!("decoder sha256 {after} (unchanged)"),
    ])
}

fn policy_config(cfg: &HarnessConfig) -> Result<PolicyTrainConfig> {
    let mut task = cfg.task_spec(cfg.policy.task);
    task.pulses = cfg.policy.pulses;
    Ok(PolicyTrainConfig {
        steps: cfg.policy.steps,
        seed: cfg.seed,
        sac: cfg.sac.clone(),
        arm: cfg.arm(&cfg.policy.arm)?,
        task,
        params: cfg.robot.clone(),
        gains: cfg.gains.clone(),
        sim: cfg.sim.clone(),
        eval_every: cfg.policy.eval_every,
        eval_episodes: cfg.policy.eval_episodes,
        log_every: cfg.policy.log_every,
    })
}

/// Trains the SAC estimator, or with `policy.bandit` runs the synthetic
/// bandit check instead.
pub fn cmd_train_policy(cfg: &HarnessConfig) -> Result<Vec<String>> {
    prepare(cfg, "train-policy")?;
    if cfg.policy.bandit {
        let report = run_bandit(&BanditConfig {
            updates: cfg.policy.bandit_updates,
            seed: cfg.seed,
            sac: cfg.sac.clone(),
            target: None,
        })?;
        let mut csv = String::from("update,max_error_fraction\n");
        for (u, e) in &report.curve {
            let _ = writeln!(csv, "{u},{e:.9e}");
        }
        write_file(&cfg.out.join("bandit_curve.csv"), &csv)?;
        let verdict = if report.converged(0.1) { "PASS" } else { "FAIL" };
        let line = format!(
            "bandit {verdict}: max error {:.4} of the limit after {} updates",
            report.max_error_fraction, report.updates
        );
        if !report.converged(0.1) {
            return Err(Error::InvalidArgument(line));
        }
        return Ok(vec![line]);
    }
    let adapter = load_adapter(&cfg.artifact(&cfg.paths.adapter, &format!("adapter_{}.dpcnn", cfg.policy.arm)))?;
    let pcfg = policy_config(cfg)?;
    let (agent, rows) = train_policy(&pcfg, &adapter)?;
    let out = agent_path(cfg);
    agent.save(&out)?;
    write_file(&cfg.out.join("policy_curve.csv"), &curve_to_csv(&rows))?;
    let mut lines = vec![format!("wrote {}", out.display()), format!("updates {}", agent.updates)];
    if let Some(last) = rows.iter().rev().find_map(|r| r.eval_return) {
        lines.push(format!("last evaluation return {last:.6}"));
    }
    Ok(lines)
}

fn environment(cfg: &HarnessConfig, task: TaskKind, arm: &str, seed: u64) -> Result<Environment> {
    Environment::new(
        cfg.robot.clone(),
        cfg.gains.clone(),
        cfg.arm(arm)?,
        cfg.task_spec(task),
        cfg.sim.clone(),
        seed,
    )
}

/// Aggregate over seeds for one (task, arm, policy).
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub task: String,
    pub arm: String,
    pub policy: String,
    pub seeds: usize,
    pub mean_return: f64,
    /// Sample standard deviation; zero with one seed.
    pub std_return: f64,
    pub falls: usize,
    pub mean_rms_tilt: f64,
}

fn aggregate(logs: &[EpisodeLog]) -> CompareRow {
    let n = logs.len() as f64;
    let mean = logs.iter().map(|l| l.total_return).sum::<f64>() / n;
    let var = if logs.len() > 1 {
        logs.iter().map(|l| (l.total_return - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    CompareRow {
        task: logs[0].task.clone(),
        arm: logs[0].arm.clone(),
        policy: logs[0].policy.clone(),
        seeds: logs.len(),
        mean_return: mean,
        std_return: var.sqrt(),
        falls: logs.iter().filter(|l| l.fallen).count(),
        mean_rms_tilt: logs.iter().map(|l| l.rms_tilt()).sum::<f64>() / n,
    }
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = String::from("task,arm,policy,seeds,mean_return,std_return,falls,mean_rms_tilt\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.9e},{:.9e},{},{:.9e}",
            r.task, r.arm, r.policy, r.seeds, r.mean_return, r.std_return, r.falls, r.mean_rms_tilt
        );
    }
    s
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut s = format!(
        "{:<10} {:<9} {:<7} {:>5} {:>12} {:>10} {:>5} {:>10}\n",
        "task", "arm", "policy", "seeds", "mean", "std", "falls", "rms tilt"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:<9} {:<7} {:>5} {:>12.4} {:>10.4} {:>5} {:>10.5}",
            r.task, r.arm, r.policy, r.seeds, r.mean_return, r.std_return, r.falls, r.mean_rms_tilt
        );
    }
    s
}

/// Roll and pitch of every policy side by side, one row per step.
fn trajectory_csv(logs: &[&EpisodeLog]) -> String {
    let mut s = String::from("step,time");
    for l in logs {
        let _ = write!(s, ",{p}_roll,{p}_pitch", p = l.policy);
    }
    s.push('\n');
    let len = logs.iter().map(|l| l.records.len()).max().unwrap_or(0);
    for i in 0..len {
        let base = logs.iter().find_map(|l| l.records.get(i)).expect("row");
        let _ = write!(s, "{},{:.6}", base.step, base.time);
        for l in logs {
            match l.records.get(i) {
                Some(r) => {
                    let _ = write!(s, ",{:.9e},{:.9e}", r.roll, r.pitch);
                }
                None => s.push_str(",,"),
            }
        }
        s.push('\n');
    }
    s
}

/// Runs MBC and DPC (and optionally the oracle) on every configured task
/// and arm over `compare.seeds` seeds, in parallel across episodes.
pub fn compare(cfg: &HarnessConfig) -> Result<(Vec<CompareRow>, Vec<EpisodeLog>)> {
    let agent = load_agent(cfg)?;
    let mut adapters = std::collections::BTreeMap::new();
    for arm in &cfg.compare.arms {
        adapters.insert(arm.clone(), load_adapter(&adapter_path(cfg, arm))?);
    }
    let mut jobs = Vec::new();
    for &task in &cfg.compare.tasks {
        for arm in &cfg.compare.arms {
            let mut policies = vec!["mbc", "dpc"];
            if cfg.compare.oracle {
                policies.push("oracle");
            }
            for p in policies {
                for k in 0..cfg.compare.seeds as u64 {
                    jobs.push((task, arm.clone(), p, cfg.seed + k));
                }
            }
        }
    }
    let run = |(task, arm, p, seed): &(TaskKind, String, &str, u64)| -> Result<EpisodeLog> {
        let mut policy = match *p {
            "mbc" => Policy::Mbc,
            "oracle" => Policy::Oracle,
            _ => Policy::dpc(agent.clone(), adapters[arm].clone()),
        };
        run_episode(&mut environment(cfg, *task, arm, *seed)?, &mut policy, *seed)
    };
    let logs: Vec<EpisodeLog> = if cfg.threads == 1 {
        jobs.iter().map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(run).collect::<Result<_>>())?
    };
    let rows = logs.chunks(cfg.compare.seeds).map(aggregate).collect();
    Ok((rows, logs))
}

pub fn cmd_compare(cfg: &HarnessConfig) -> Result<Vec<String>> {
    prepare(cfg, "compare")?;
    let (rows, logs) = compare(cfg)?;
    write_file(&cfg.out.join("compare.csv"), &compare_csv(&rows))?;
    let table = compare_table(&rows);
    write_file(&cfg.out.join("compare.txt"), &table)?;
    for &task in &cfg.compare.tasks {
        for arm in &cfg.compare.arms {
            let first: Vec<&EpisodeLog> = logs
                .iter()
                .filter(|l| l.task == task.name() && &l.arm == arm && l.seed == cfg.seed)
                .collect();
            write_file(
                &cfg.out
                    .join(format!("trajectory_{}_{}_{}.csv", task.name(), arm, cfg.seed)),
                &trajectory_csv(&first),
            )?;
        }
    }
    Ok(table.lines().map(str::to_string).collect())
}

/// One episode of `eval.policy` on `eval.task` with `eval.arm`.
pub fn cmd_eval(cfg: &HarnessConfig) -> Result<Vec<String>> {
    prepare(cfg, "eval")?;
    let e = &cfg.eval;
    let mut policy = match e.policy.as_str() {
        "mbc" => Policy::Mbc,
        "oracle" => Policy::Oracle,
        _ => Policy::dpc(load_agent(cfg)?, load_adapter(&adapter_path(cfg, &e.arm))?),
    };
    let log = run_episode(&mut environment(cfg, e.task, &e.arm, cfg.seed)?, &mut policy, cfg.seed)?;
    let path = cfg.out.join(log.file_name());
    write_file(&path, &log.to_csv())?;
    Ok(vec![format!("wrote {}", path.display()), log.summary_line()])
}
