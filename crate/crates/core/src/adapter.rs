//! Latent dynamic adapter: an encoder squeezes body orientation, arm joints
//! and arm command into a 2-D latent state, and a decoder predicts the next
//! roll and pitch rates from it.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, Checkpoint, MlpParams, Tensor};
use crate::state::{ArmCommand, ArmState, BodyState, LatentState, Vec3, LATENT_DIM};

/// Body features fed to the encoder: roll, pitch, roll rate, pitch rate.
pub const BODY_FEATURES: usize = 4;
pub const HIDDEN: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterSample {
    /// Trajectory the sample came from; the hold-out split is per trajectory.
    pub episode: u32,
    pub body: BodyState,
    pub arm: ArmState,
    pub arm_cmd: ArmCommand,
    /// Roll and pitch rates one low-level period later, rad/s.
    pub next_drp: [f64; 2],
}

impl AdapterSample {
    pub fn dof(&self) -> usize {
        self.arm.dof()
    }

    pub fn features(&self) -> Vec<f64> {
        features(&self.body, &self.arm, &self.arm_cmd)
    }
}

pub fn features(body: &BodyState, arm: &ArmState, cmd: &ArmCommand) -> Vec<f64> {
    let mut f = Vec::with_capacity(BODY_FEATURES + 2 * arm.dof());
    f.extend([
        body.roll(),
        body.pitch(),
        body.angular_velocity.x,
        body.angular_velocity.y,
    ]);
    f.extend_from_slice(&arm.joint_angles);
    f.extend_from_slice(&cmd.desired_joint_positions);
    f
}

pub fn input_dim(dof: usize) -> usize {
    BODY_FEATURES + 2 * dof
}

fn check_dataset(samples: &[AdapterSample]) -> Result<usize> {
    let first = samples.first().ok_or(Error::Empty("dataset"))?;
    let dof = first.dof();
    for s in samples {
        if s.dof() != dof || s.arm_cmd.desired_joint_positions.len() != dof {
            return Err(Error::Dimension {
                context: "dataset arm width",
                expected: dof,
                got: s.dof(),
            });
        }
    }
    Ok(dof)
}

/// Feature matrix (features x samples) and target matrix (2 x samples).
fn matrices(samples: &[AdapterSample]) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = samples[0].features().len();
    let mut x = DMatrix::zeros(d, samples.len());
    let mut y = DMatrix::zeros(2, samples.len());
    for (c, s) in samples.iter().enumerate() {
        x.set_column(c, &DVector::from_vec(s.features()));
        y[(0, c)] = s.next_drp[0];
        y[(1, c)] = s.next_drp[1];
    }
    (x, y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
}

impl Standardizer {
    pub fn fit(data: &DMatrix<f64>) -> Self {
        let n = data.ncols().max(1) as f64;
        let mean = data.column_sum() / n;
        let mut std = DVector::zeros(data.nrows());
        for r in 0..data.nrows() {
            let var = data.row(r).iter().map(|v| (v - mean[r]).powi(2)).sum::<f64>() / n;
            // Constant features would divide by zero.
            std[r] = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn apply(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = data.clone();
        for mut c in out.column_iter_mut() {
            for r in 0..c.len() {
                c[r] = (c[r] - self.mean[r]) / self.std[r];
            }
        }
        out
    }

    pub fn invert(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = data.clone();
        for mut c in out.column_iter_mut() {
            for r in 0..c.len() {
                c[r] = c[r] * self.std[r] + self.mean[r];
            }
        }
        out
    }

    fn to_tensors(&self, prefix: &str, ck: &mut Checkpoint) {
        ck.insert(&format!("{prefix}/mean"), Tensor::vector(self.mean.as_slice().to_vec()));
        ck.insert(&format!("{prefix}/std"), Tensor::vector(self.std.as_slice().to_vec()));
    }

    fn from_tensors(prefix: &str, ck: &Checkpoint) -> Result<Self> {
        let mean = ck.get(&format!("{prefix}/mean"))?.data.clone();
        let std = ck.get(&format!("{prefix}/std"))?.data.clone();
        if mean.len() != std.len() || std.iter().any(|s| *s <= 0.0) {
            return Err(Error::Checkpoint(format!("bad statistics under {prefix}")));
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            std: DVector::from_vec(std),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterModel {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    /// Encoder input statistics.
    pub inputs: Standardizer,
    /// Decoder output statistics; travel with the decoder.
    pub targets: Standardizer,
}

impl AdapterModel {
    pub fn new_encoder(dof: usize, rng: &mut ChaCha8Rng) -> Result<MlpParams> {
        MlpParams::new(
            &[input_dim(dof), HIDDEN, HIDDEN, LATENT_DIM],
            Activation::Tanh,
            Activation::Identity,
            rng,
        )
    }

    pub fn new_decoder(rng: &mut ChaCha8Rng) -> Result<MlpParams> {
        MlpParams::new(&[LATENT_DIM, HIDDEN, 2], Activation::Tanh, Activation::Identity, rng)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.output_dim() != LATENT_DIM || self.decoder.input_dim() != LATENT_DIM {
            return Err(Error::Dimension {
                context: "latent width",
                expected: LATENT_DIM,
                got: self.encoder.output_dim(),
            });
        }
        if self.decoder.output_dim() != 2 || self.targets.mean.len() != 2 {
            return Err(Error::Dimension {
                context: "decoder output",
                expected: 2,
                got: self.decoder.output_dim(),
            });
        }
        if self.inputs.mean.len() != self.encoder.input_dim() {
            return Err(Error::Dimension {
                context: "encoder statistics",
                expected: self.encoder.input_dim(),
                got: self.inputs.mean.len(),
            });
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        (self.encoder.input_dim() - BODY_FEATURES) / 2
    }

    pub fn encode(&self, body: &BodyState, arm: &ArmState, cmd: &ArmCommand) -> Result<LatentState> {
        let f = features(body, arm, cmd);
        if f.len() != self.encoder.input_dim() {
            return Err(Error::Dimension {
                context: "encoder input",
                expected: self.encoder.input_dim(),
                got: f.len(),
            });
        }
        let x = self.inputs.apply(&DMatrix::from_column_slice(f.len(), 1, &f));
        let z = self.encoder.infer(&x)?;
        LatentState::new([z[0], z[1]])
    }

    /// Predicted next roll and pitch rates, columns per sample.
    fn predict(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let z = self.encoder.infer(&self.inputs.apply(x_raw))?;
        Ok(self.targets.invert(&self.decoder.infer(&z)?))
    }

    pub fn predict_sample(&self, s: &AdapterSample) -> Result<[f64; 2]> {
        let f = s.features();
        let p = self.predict(&DMatrix::from_column_slice(f.len(), 1, &f))?;
        Ok([p[0], p[1]])
    }

    /// Mean squared error of the next-rate prediction, averaged over both
    /// outputs.
    pub fn mse(&self, samples: &[AdapterSample]) -> Result<f64> {
        check_dataset(samples)?;
        let (x, y) = matrices(samples);
        let p = self.predict(&x)?;
        Ok((p - y).norm_squared() / (2 * samples.len()) as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        self.encoder.to_tensors("encoder", &mut ck);
        self.decoder.to_tensors("decoder", &mut ck);
        self.inputs.to_tensors("encoder/input", &mut ck);
        self.targets.to_tensors("decoder/output", &mut ck);
        ck.insert("adapter/latent_dim", Tensor::scalar(LATENT_DIM as f64));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let latent = ck.scalar("adapter/latent_dim")?;
        if latent != LATENT_DIM as f64 {
            return Err(Error::Checkpoint(format!(
                "latent dimension {latent}, expected {LATENT_DIM}"
            )));
        }
        let m = Self {
            encoder: MlpParams::from_tensors("encoder", ck)?,
            decoder: MlpParams::from_tensors("decoder", ck)?,
            inputs: Standardizer::from_tensors("encoder/input", ck)?,
            targets: Standardizer::from_tensors("decoder/output", ck)?,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// SHA-256 over the decoder tensors and output statistics.
    pub fn decoder_digest(&self) -> String {
        let mut ck = Checkpoint::new();
        self.decoder.to_tensors("decoder", &mut ck);
        self.targets.to_tensors("decoder/output", &mut ck);
        hex::encode(Sha256::digest(ck.to_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Upper bound on optimizer steps; `None` runs every epoch in full.
    pub max_steps: Option<usize>,
    /// Learning rate at the last step as a fraction of the first; the rate
    /// decays geometrically in between.
    pub final_lr_fraction: f64,
    /// Fraction of each trajectory, taken from its end, held out.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 256,
            learning_rate: 1e-3,
            max_steps: None,
            final_lr_fraction: 1.0,
            holdout: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Parameter("epochs and batch must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Parameter("learning rate must be positive".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Parameter(
                "final learning-rate fraction must be in (0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::Parameter("holdout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Per-epoch mean training loss on standardized targets.
    pub train_loss: Vec<f64>,
    /// Per-epoch held-out MSE in rad²/s².
    pub heldout_mse: Vec<f64>,
    /// Held-out MSE of predicting the training mean.
    pub baseline_mse: f64,
    pub train_samples: usize,
    pub heldout_samples: usize,
    pub steps: usize,
}

impl TrainReport {
    pub fn final_mse(&self) -> f64 {
        self.heldout_mse.last().copied().unwrap_or(f64::NAN)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,heldout_mse\n");
        for (i, (t, h)) in self.train_loss.iter().zip(&self.heldout_mse).enumerate() {
            let _ = writeln!(s, "{},{},{}", i + 1, t, h);
        }
        s
    }
}

/// Temporal split: the last `fraction` of every trajectory is held out.
pub fn split_holdout(samples: &[AdapterSample], fraction: f64) -> (Vec<AdapterSample>, Vec<AdapterSample>) {
    let mut train = Vec::new();
    let mut held = Vec::new();
    let mut start = 0;
    while start < samples.len() {
        let ep = samples[start].episode;
        let mut end = start;
        while end < samples.len() && samples[end].episode == ep {
            end += 1;
        }
        let len = end - start;
        let keep = len - ((len as f64 * fraction).round() as usize).min(len);
        train.extend_from_slice(&samples[start..start + keep]);
        held.extend_from_slice(&samples[start + keep..end]);
        start = end;
    }
    (train, held)
}

fn mean_baseline(train_y: &DMatrix<f64>, held_y: &DMatrix<f64>) -> f64 {
    let mean = train_y.column_sum() / train_y.ncols() as f64;
    let mut s = 0.0;
    for c in held_y.column_iter() {
        s += (c - &mean).norm_squared();
    }
    s / (2 * held_y.ncols()) as f64
}

struct Trainer<'a> {
    encoder: &'a mut MlpParams,
    decoder: &'a mut MlpParams,
    enc_opt: AdamState,
    dec_opt: Option<AdamState>,
}

impl Trainer<'_> {
    /// One minibatch step on standardized data; returns the loss.
    fn step(&mut self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
        let (z, enc_tape) = self.encoder.forward(x)?;
        let (p, dec_tape) = self.decoder.forward(&z)?;
        let err = p - y;
        let n = err.len() as f64;
        let loss = err.norm_squared() / n;
        let g = err * (2.0 / n);
        let dec_grads = self.decoder.backward(&dec_tape, &g)?;
        let enc_grads = self.encoder.backward(&enc_tape, &dec_grads.input)?;
        self.enc_opt.step(self.encoder, &enc_grads)?;
        if let Some(opt) = &mut self.dec_opt {
            opt.step(self.decoder, &dec_grads)?;
        }
        Ok(loss)
    }
}

fn columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])])
}

fn run_training(
    model: &mut AdapterModel,
    train: &[AdapterSample],
    held: &[AdapterSample],
    cfg: &TrainConfig,
    train_decoder: bool,
) -> Result<TrainReport> {
    let (tx, ty) = matrices(train);
    let xs = model.inputs.apply(&tx);
    let ys = model.targets.apply(&ty);
    let eval = if held.is_empty() { train } else { held };
    let (hx, hy) = matrices(eval);
    let hxs = model.inputs.apply(&hx);
    let targets = model.targets.clone();
    let held_mse = |enc: &MlpParams, dec: &MlpParams| -> Result<f64> {
        let p = targets.invert(&dec.infer(&enc.infer(&hxs)?)?);
        Ok((p - &hy).norm_squared() / hy.len() as f64)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(7);
    let lr = cfg.learning_rate;
    let mut trainer = Trainer {
        enc_opt: AdamState::new(&model.encoder, lr),
        dec_opt: train_decoder.then(|| AdamState::new(&model.decoder, lr)),
        encoder: &mut model.encoder,
        decoder: &mut model.decoder,
    };
    let mut report = TrainReport {
        train_samples: train.len(),
        heldout_samples: held.len(),
        baseline_mse: mean_baseline(&ty, &hy),
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let budget = cfg.max_steps.unwrap_or(usize::MAX);
    let planned = (cfg.epochs * train.len().div_ceil(cfg.batch)).min(budget).max(1);
    let decay = cfg.final_lr_fraction.powf(1.0 / planned as f64);
    for _ in 0..cfg.epochs {
        if report.steps >= budget {
            break;
        }
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch) {
            if report.steps >= budget {
                break;
            }
            total += trainer.step(&columns(&xs, chunk), &columns(&ys, chunk))?;
            batches += 1;
            report.steps += 1;
            trainer.enc_opt.learning_rate *= decay;
            if let Some(opt) = &mut trainer.dec_opt {
                opt.learning_rate *= decay;
            }
        }
        report.train_loss.push(total / batches.max(1) as f64);
        report.heldout_mse.push(held_mse(trainer.encoder, trainer.decoder)?);
    }
    Ok(report)
}

/// Trains encoder and decoder jointly on next-rate prediction.
pub fn train_adapter(samples: &[AdapterSample], cfg: &TrainConfig) -> Result<(AdapterModel, TrainReport)> {
    cfg.validate()?;
    let dof = check_dataset(samples)?;
    let (train, held) = split_holdout(samples, cfg.holdout);
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let (tx, ty) = matrices(&train);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = AdapterModel {
        encoder: AdapterModel::new_encoder(dof, &mut rng)?,
        decoder: AdapterModel::new_decoder(&mut rng)?,
        inputs: Standardizer::fit(&tx),
        targets: Standardizer::fit(&ty),
    };
    let report = run_training(&mut model, &train, &held, cfg, true)?;
    Ok((model, report))
}

/// Old input column feeding new column `j`, if any. Body features map one
/// to one; arm joints and commands map by joint index.
fn source_column(j: usize, dof_new: usize, dof_old: usize) -> Option<usize> {
    if j < BODY_FEATURES {
        return Some(j);
    }
    let k = j - BODY_FEATURES;
    let (block, idx) = if k < dof_new { (0, k) } else { (1, k - dof_new) };
    (idx < dof_old).then_some(BODY_FEATURES + block * dof_old + idx)
}

/// Copy of the old encoder re-expressed for new input statistics, so that
/// inputs shared with the old arm produce the same latent state. Columns
/// without an old counterpart start at zero.
fn warm_encoder(old: &AdapterModel, inputs: &Standardizer, dof_new: usize) -> Result<MlpParams> {
    let dof_old = old.dof();
    let mut layers = old.encoder.layers().to_vec();
    let first = &old.encoder.layers()[0];
    let n_in = input_dim(dof_new);
    let mut w = DMatrix::zeros(first.outputs(), n_in);
    let mut b = first.bias.clone();
    for j in 0..n_in {
        if let Some(i) = source_column(j, dof_new, dof_old) {
            let (so, mo) = (old.inputs.std[i], old.inputs.mean[i]);
            let col = first.weights.column(i);
            w.set_column(j, &(col * (inputs.std[j] / so)));
            b += col * ((inputs.mean[j] - mo) / so);
        }
    }
    layers[0].weights = w;
    layers[0].bias = b;
    MlpParams::from_layers(layers)
}

/// Trains the encoder for a new arm against a frozen decoder, using at most
/// `budget` samples from the front of `samples`. The encoder starts from the
/// trained one, mapped onto the new arm's inputs.
pub fn migrate_encoder(
    trained: &AdapterModel,
    samples: &[AdapterSample],
    budget: usize,
    cfg: &TrainConfig,
) -> Result<(AdapterModel, TrainReport)> {
    cfg.validate()?;
    trained.validate()?;
    let samples = &samples[..budget.min(samples.len())];
    let dof = check_dataset(samples)?;
    let (train, held) = split_holdout(samples, cfg.holdout);
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let (tx, _) = matrices(&train);
    let inputs = Standardizer::fit(&tx);
    let mut model = AdapterModel {
        encoder: warm_encoder(trained, &inputs, dof)?,
        decoder: trained.decoder.clone(),
        inputs,
        targets: trained.targets.clone(),
    };
    let before = trained.decoder_digest();
    let report = run_training(&mut model, &train, &held, cfg, false)?;
    if model.decoder_digest() != before {
        return Err(Error::InvalidArgument("decoder changed during migration".into()));
    }
    Ok((model, report))
}

/// CSV header for a dataset whose arm has `dof` joints in total.
pub fn csv_header(dof: usize) -> String {
    let mut h = String::from("episode,roll,pitch,yaw,roll_rate,pitch_rate,yaw_rate");
    for i in 0..dof {
        let _ = write!(h, ",q{i}");
    }
    for i in 0..dof {
        let _ = write!(h, ",cmd{i}");
    }
    h.push_str(",next_roll_rate,next_pitch_rate");
    h
}

/// Dataset as CSV text. Only the orientation part of the body state is
/// stored; position and linear velocity read back as zero.
pub fn dataset_to_csv(samples: &[AdapterSample]) -> Result<String> {
    let dof = check_dataset(samples)?;
    let mut s = csv_header(dof);
    s.push('\n');
    for x in samples {
        let b = &x.body;
        let _ = write!(
            s,
            "{},{},{},{},{},{},{}",
            x.episode,
            b.orientation_rpy.x,
            b.orientation_rpy.y,
            b.orientation_rpy.z,
            b.angular_velocity.x,
            b.angular_velocity.y,
            b.angular_velocity.z
        );
        for v in x.arm.joint_angles.iter().chain(&x.arm_cmd.desired_joint_positions) {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{},{}", x.next_drp[0], x.next_drp[1]);
    }
    Ok(s)
}

pub fn dataset_from_csv(text: &str) -> Result<Vec<AdapterSample>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Empty("dataset"))?;
    let cols = header.split(',').count();
    if cols < 9 || (cols - 9) % 2 != 0 {
        return Err(Error::Dataset(format!("unexpected header with {cols} columns")));
    }
    let dof = (cols - 9) / 2;
    if header != csv_header(dof) {
        return Err(Error::Dataset("header does not match the dataset layout".into()));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Dataset(format!("line {}: {m}", i + 2));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(bad(format!("{} fields, expected {cols}", fields.len())));
        }
        let episode: u32 = fields[0].parse().map_err(|_| bad("bad episode".into()))?;
        let v = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad(format!("bad number '{f}'"))))
            .collect::<Result<Vec<_>>>()?;
        let mut body = BodyState::standing(0.0);
        body.position = Vec3::zeros();
        body.orientation_rpy = Vec3::new(v[0], v[1], v[2]);
        body.angular_velocity = Vec3::new(v[3], v[4], v[5]);
        let arm = ArmState::new(v[6..6 + dof].to_vec(), 0.0).map_err(|e| bad(e.to_string()))?;
        let arm_cmd = ArmCommand::new(v[6 + dof..6 + 2 * dof].to_vec()).map_err(|e| bad(e.to_string()))?;
        let next_drp = [v[6 + 2 * dof], v[7 + 2 * dof]];
        if !next_drp.iter().chain(&v[..6]).all(|x| x.is_finite()) {
            return Err(bad("non-finite value".into()));
        }
        out.push(AdapterSample {
            episode,
            body,
            arm,
            arm_cmd,
            next_drp,
        });
    }
    Ok(out)
}

pub fn save_dataset(samples: &[AdapterSample], path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_csv(samples)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<AdapterSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
    dataset_from_csv(&text)
}

/// Variance of the next rates, averaged over both outputs.
pub fn target_variance(samples: &[AdapterSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let n = samples.len() as f64;
    (0..2)
        .map(|j| {
            let m = samples.iter().map(|s| s.next_drp[j]).sum::<f64>() / n;
            samples.iter().map(|s| (s.next_drp[j] - m).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sample(episode: u32, f: &[f64], next: [f64; 2]) -> AdapterSample {
        let mut body = BodyState::standing(0.0);
        body.orientation_rpy = Vec3::new(f[0], f[1], 0.0);
        body.angular_velocity = Vec3::new(f[2], f[3], 0.0);
        let dof = (f.len() - 4) / 2;
        AdapterSample {
            episode,
            body,
            arm: ArmState::new(f[4..4 + dof].to_vec(), 0.0).unwrap(),
            arm_cmd: ArmCommand::new(f[4 + dof..].to_vec()).unwrap(),
            next_drp: next,
        }
    }

    /// Inputs uniform in [-1, 1]; targets from a rank-2 linear map.
    fn linear_dataset(n: usize, seed: u64) -> Vec<AdapterSample> {
        noisy_linear_dataset(n, seed, 0.0)
    }

    /// Same map with Gaussian label noise, so the error floor is `noise^2`.
    fn noisy_linear_dataset(n: usize, seed: u64, noise: f64) -> Vec<AdapterSample> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut nr = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        let normal = rand_distr::Normal::new(0.0, noise.max(1e-300)).unwrap();
        let mut eps = move || {
            if noise > 0.0 {
                rand_distr::Distribution::sample(&normal, &mut nr)
            } else {
                0.0
            }
        };
        let a: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
        (0..n)
            .map(|i| {
                let f: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
                let u: f64 = a.iter().zip(&f).map(|(x, y)| x * y).sum();
                let v: f64 = b.iter().zip(&f).map(|(x, y)| x * y).sum();
                sample(
                    (i / 500) as u32,
                    &f,
                    [0.5 * u - 0.2 * v + eps(), 0.3 * u + 0.4 * v + eps()],
                )
            })
            .collect()
    }

    #[test]
    fn zero_encoder_returns_bias() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let mut enc = AdapterModel::new_encoder(2, &mut r).unwrap();
        let n = enc.layers().len();
        for l in enc.layers_mut() {
            l.weights.fill(0.0);
        }
        enc.layers_mut()[n - 1].bias = DVector::from_vec(vec![0.25, -1.5]);
        let m = AdapterModel {
            encoder: enc,
            decoder: AdapterModel::new_decoder(&mut r).unwrap(),
            inputs: Standardizer {
                mean: DVector::zeros(8),
                std: DVector::from_element(8, 1.0),
            },
            targets: Standardizer {
                mean: DVector::zeros(2),
                std: DVector::from_element(2, 1.0),
            },
        };
        let s = sample(0, &[0.1, 0.2, 0.3, 0.4, 1.0, 2.0, 3.0, 4.0], [0.0, 0.0]);
        let z = m.encode(&s.body, &s.arm, &s.arm_cmd).unwrap();
        assert_eq!(z.z, [0.25, -1.5]);
        assert_eq!(z, m.encode(&s.body, &s.arm, &s.arm_cmd).unwrap());
        let short = ArmState::new(vec![0.0], 0.0).unwrap();
        assert!(m.encode(&s.body, &short, &s.arm_cmd).is_err());
    }

    #[test]
    fn holdout_takes_the_tail_of_each_trajectory() {
        let data: Vec<_> = (0..30)
            .map(|i| sample(if i < 20 { 0 } else { 1 }, &[i as f64, 0.0, 0.0, 0.0], [0.0, 0.0]))
            .collect();
        let (train, held) = split_holdout(&data, 0.1);
        assert_eq!(train.len(), 27);
        let held_roll: Vec<f64> = held.iter().map(|s| s.body.roll()).collect();
        assert_eq!(held_roll, vec![18.0, 19.0, 29.0]);
    }

    #[test]
    fn learns_a_rank_two_linear_map() {
        let data = linear_dataset(5000, 1);
        let cfg = TrainConfig {
            epochs: 200,
            max_steps: Some(2000),
            seed: 3,
            ..Default::default()
        };
        let (_, report) = train_adapter(&data, &cfg).unwrap();
        assert_eq!(report.steps, 2000);
        assert!(report.final_mse() <= 1e-4, "{}", report.final_mse());
    }

    #[test]
    fn latent_separates_folded_and_extended_poses() {
        let data = linear_dataset(5000, 1);
        let cfg = TrainConfig {
            epochs: 200,
            max_steps: Some(2000),
            seed: 3,
            ..Default::default()
        };
        let (model, _) = train_adapter(&data, &cfg).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let mut group = |arm: f64| -> Vec<[f64; 2]> {
            (0..200)
                .map(|_| {
                    let mut f: Vec<f64> = (0..4).map(|_| r.random_range(-0.05..0.05)).collect();
                    f.extend([arm; 4]);
                    let s = sample(0, &f, [0.0; 2]);
                    model.encode(&s.body, &s.arm, &s.arm_cmd).unwrap().z
                })
                .collect()
        };
        let stats = |zs: &[[f64; 2]]| {
            let n = zs.len() as f64;
            let m = [0, 1].map(|j| zs.iter().map(|z| z[j]).sum::<f64>() / n);
            let spread = (zs
                .iter()
                .map(|z| (z[0] - m[0]).powi(2) + (z[1] - m[1]).powi(2))
                .sum::<f64>()
                / n)
                .sqrt();
            (m, spread)
        };
        let (mf, sf) = stats(&group(-0.8));
        let (me, se) = stats(&group(0.8));
        let gap = ((mf[0] - me[0]).powi(2) + (mf[1] - me[1]).powi(2)).sqrt();
        assert!(gap >= 10.0 * sf.max(se), "gap {gap}, spreads {sf} {se}");
    }

    #[test]
    fn constant_target_is_reproduced() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<_> = (0..1000)
            .map(|_| {
                let f: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
                sample(0, &f, [0.7, -0.3])
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 500,
            ..Default::default()
        };
        let (m, report) = train_adapter(&data, &cfg).unwrap();
        assert!(report.final_mse() < 1e-8, "{}", report.final_mse());
        let p = m.predict_sample(&data[5]).unwrap();
        assert!((p[0] - 0.7).abs() < 1e-4 && (p[1] + 0.3).abs() < 1e-4);
    }

    #[test]
    fn shuffled_labels_leave_only_variance() {
        let mut data = linear_dataset(4000, 5);
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let mut labels: Vec<[f64; 2]> = data.iter().map(|s| s.next_drp).collect();
        labels.shuffle(&mut r);
        for (s, l) in data.iter_mut().zip(labels) {
            s.next_drp = l;
        }
        let cfg = TrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let (_, report) = train_adapter(&data, &cfg).unwrap();
        let (_, held) = split_holdout(&data, 0.1);
        let var = target_variance(&held);
        let ratio = report.final_mse() / var;
        assert!((0.9..1.3).contains(&ratio), "{ratio}");
    }

    #[test]
    fn migration_keeps_the_decoder_and_recovers_permuted_inputs() {
        let data = noisy_linear_dataset(30000, 4, 0.05);
        let cfg = TrainConfig {
            epochs: 30,
            seed: 1,
            ..Default::default()
        };
        let (base, base_report) = train_adapter(&data, &cfg).unwrap();
        let dec = base.decoder.clone();
        let digest = base.decoder_digest();

        // Same distribution.
        let same = noisy_linear_dataset(30000, 14, 0.05);
        let (m1, r1) = migrate_encoder(&base, &same, 30000, &TrainConfig { seed: 2, ..cfg.clone() }).unwrap();
        assert!(
            r1.final_mse() <= 1.05 * base_report.final_mse() + 1e-6,
            "{} vs {}",
            r1.final_mse(),
            base_report.final_mse()
        );
        assert_eq!(m1.decoder, dec);
        assert_eq!(m1.decoder_digest(), digest);
        assert_eq!(base.decoder_digest(), digest);

        // Arm joints and commands reversed in order.
        let permuted: Vec<_> = same
            .iter()
            .map(|s| {
                let mut p = s.clone();
                p.arm.joint_angles.reverse();
                p.arm_cmd.desired_joint_positions.reverse();
                p
            })
            .collect();
        let (m2, r2) = migrate_encoder(&base, &permuted, 30000, &cfg).unwrap();
        assert!(
            r2.final_mse() <= 1.2 * base_report.final_mse() + 1e-6,
            "{} vs {}",
            r2.final_mse(),
            base_report.final_mse()
        );
        assert_eq!(m2.decoder_digest(), digest);
        assert_eq!(r2.train_samples + r2.heldout_samples, 30000);
    }

    #[test]
    fn warm_start_reproduces_the_old_latent() {
        let data = linear_dataset(2000, 8);
        let (base, _) = train_adapter(
            &data,
            &TrainConfig {
                epochs: 2,
                ..Default::default()
            },
        )
        .unwrap();
        // Different input statistics, same arm width.
        let shifted: Vec<_> = data[..1000].to_vec();
        let (tx, _) = matrices(&shifted);
        let inputs = Standardizer::fit(&tx);
        let enc = warm_encoder(&base, &inputs, 2).unwrap();
        let s = &data[1500];
        let x = DMatrix::from_column_slice(8, 1, &s.features());
        let z_new = enc.infer(&inputs.apply(&x)).unwrap();
        let z_old = base.encode(&s.body, &s.arm, &s.arm_cmd).unwrap();
        assert!((z_new[0] - z_old.z[0]).abs() < 1e-12 && (z_new[1] - z_old.z[1]).abs() < 1e-12);

        // A second arm appended: zero columns leave the latent unchanged
        // while the extra joints sit at their mean.
        let wide = Standardizer {
            mean: DVector::from_fn(12, |i, _| if i < 8 { inputs.mean[i.min(7)] } else { 0.3 }),
            std: DVector::from_element(12, 1.0),
        };
        let enc2 = warm_encoder(&base, &wide, 4).unwrap();
        assert_eq!(enc2.input_dim(), 12);
        assert!(enc2.layers()[0].weights.column(6).iter().all(|v| *v == 0.0));
        assert_eq!(source_column(8, 4, 2), Some(6));
        assert_eq!(source_column(10, 4, 2), None);
    }

    #[test]
    fn migration_rejects_mismatched_latent() {
        let data = linear_dataset(1000, 1);
        let (mut base, _) = train_adapter(
            &data,
            &TrainConfig {
                epochs: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        base.decoder = MlpParams::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut r).unwrap();
        assert!(matches!(
            migrate_encoder(&base, &data, 1000, &TrainConfig::default()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn checkpoint_and_dataset_round_trip() {
        let data = linear_dataset(1200, 6);
        let (m, _) = train_adapter(
            &data,
            &TrainConfig {
                epochs: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let back =
            AdapterModel::from_checkpoint(&Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back.encoder.layers(), m.encoder.layers());
        assert_eq!(back.decoder_digest(), m.decoder_digest());

        let mut ck = m.to_checkpoint();
        ck.insert("adapter/latent_dim", Tensor::scalar(3.0));
        assert!(AdapterModel::from_checkpoint(&ck).is_err());

        let csv = dataset_to_csv(&data).unwrap();
        let parsed = dataset_from_csv(&csv).unwrap();
        assert_eq!(parsed.len(), data.len());
        assert_eq!(dataset_to_csv(&parsed).unwrap(), csv);
        assert!(dataset_from_csv("a,b\n1,2\n").is_err());
        assert!(train_adapter(&[], &TrainConfig::default()).is_err());
    }
}
