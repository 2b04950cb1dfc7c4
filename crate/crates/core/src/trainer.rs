//! Training orchestration: per configuration, the C-VAE is trained first,
//! then AudioNet against the frozen encoder's posterior means. KeyNet has no
//! dependency on either and runs beside that chain unless the plan asks for
//! deterministic single-threaded execution.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    self, build_samples, fit_normalization, prune_controllers, Dataset, DatasetFingerprint, FaceConfiguration,
    NormalizationTable, TrainingSample,
};
use crate::error::{Error, Result};
use crate::neural::audio_net::positive_class_weights;
use crate::neural::{
    audionet_loss, clip_grad_norm, keynet_loss, Adam, Architecture, AudioArch, Checkpoint, CheckpointMeta,
    ConvRecurrentNet, Cvae, CvaeArch, CvaeModel, KeyTargets, NetKind, FORMAT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochBudget {
    pub cvae: usize,
    pub audionet: usize,
    pub keynet: usize,
}

impl EpochBudget {
    pub fn uniform(n: usize) -> Self {
        EpochBudget {
            cvae: n,
            audionet: n,
            keynet: n,
        }
    }

    pub fn get(&self, kind: NetKind) -> usize {
        match kind {
            NetKind::Cvae => self.cvae,
            NetKind::AudioNet => self.audionet,
            NetKind::KeyNet => self.keynet,
        }
    }
}

fn default_patience() -> usize {
    10
}
fn default_beta() -> f64 {
    0.05
}
fn default_one() -> f64 {
    1.0
}
fn default_window() -> usize {
    33
}
fn default_z_dim() -> usize {
    8
}
fn default_clip() -> f64 {
    5.0
}
fn default_true() -> bool {
    true
}
fn default_channels() -> [usize; 3] {
    [16, 16, 16]
}
fn default_width() -> usize {
    64
}
fn default_cvae_hidden() -> Vec<usize> {
    vec![128, 64]
}

/// Everything that controls a training run. Only the first six fields are
/// required in a plan file; the rest default to the standard sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub configurations: Vec<FaceConfiguration>,
    pub epochs: EpochBudget,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub validation_split: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_one")]
    pub tangent_weight: f64,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    #[serde(default = "default_window")]
    pub window_frames: usize,
    #[serde(default = "default_z_dim")]
    pub z_dim: usize,
    #[serde(default = "default_cvae_hidden")]
    pub cvae_hidden: Vec<usize>,
    #[serde(default = "default_channels")]
    pub conv_channels: [usize; 3],
    #[serde(default = "default_width")]
    pub gru_hidden: usize,
    #[serde(default = "default_width")]
    pub dense_hidden: usize,
    /// Runs KeyNet on the calling thread after the C-VAE/AudioNet chain.
    #[serde(default = "default_true")]
    pub deterministic: bool,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            configurations: FaceConfiguration::default_set(),
            epochs: EpochBudget::uniform(200),
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            validation_split: 0.1,
            patience: default_patience(),
            beta: default_beta(),
            tangent_weight: 1.0,
            grad_clip: default_clip(),
            window_frames: default_window(),
            z_dim: default_z_dim(),
            cvae_hidden: default_cvae_hidden(),
            conv_channels: default_channels(),
            gru_hidden: default_width(),
            dense_hidden: default_width(),
            deterministic: true,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.configurations.is_empty() {
            return Err(Error::Invalid("plan has no configurations".into()));
        }
        FaceConfiguration::validate_set(&self.configurations)?;
        if NetKind::ALL.iter().any(|&k| self.epochs.get(k) == 0) {
            return Err(Error::Invalid("every network needs at least one epoch".into()));
        }
        if !(self.validation_split > 0.0 && self.validation_split < 1.0) {
            return Err(Error::Invalid(format!(
                "validation_split {} must lie in (0, 1)",
                self.validation_split
            )));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || self.window_frames % 2 == 0 {
            return Err(Error::Invalid(
                "batch_size and learning_rate must be positive and window_frames odd".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: TrainPlan = serde_json::from_str(&text)?;
        plan.validate()?;
        Ok(plan)
    }
}

/// One progress record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEvent {
    pub name: String,
    pub config: String,
    pub net: NetKind,
    pub epoch: usize,
    pub loss: f64,
}

impl std::fmt::Display for TrainEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "event={} config={} net={} epoch={} loss={}",
            self.name, self.config, self.net, self.epoch, self.loss
        )
    }
}

/// Collects events in emission order and forwards each to a callback.
pub struct EventLog<'a> {
    events: Mutex<Vec<TrainEvent>>,
    sink: Box<dyn Fn(&TrainEvent) + Send + Sync + 'a>,
}

impl<'a> EventLog<'a> {
    pub fn new(sink: impl Fn(&TrainEvent) + Send + Sync + 'a) -> Self {
        EventLog {
            events: Mutex::new(Vec::new()),
            sink: Box::new(sink),
        }
    }

    pub fn silent() -> Self {
        Self::new(|_| {})
    }

    /// Prints each event line to standard output.
    pub fn stdout() -> Self {
        Self::new(|e| println!("{e}"))
    }

    fn emit(&self, name: &str, config: &str, net: NetKind, epoch: usize, loss: f64) {
        let e = TrainEvent {
            name: name.to_string(),
            config: config.to_string(),
            net,
            epoch,
            loss,
        };
        let mut guard = self.events.lock().expect("event log poisoned");
        (self.sink)(&e);
        guard.push(e);
    }

    pub fn events(&self) -> Vec<TrainEvent> {
        self.events.lock().expect("event log poisoned").clone()
    }
}

/// Stop rule: halt once the validation loss has failed to improve on the
/// best value by at least `min_delta` for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    best_epoch: usize,
    stale: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            min_delta: 1e-5,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
            epoch: 0,
        }
    }

    /// Records one epoch's loss; returns true when training should stop.
    pub fn update(&mut self, loss: f64) -> bool {
        self.epoch += 1;
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.best_epoch = self.epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn improved_last(&self) -> bool {
        self.best_epoch == self.epoch
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

/// Epoch (1-based) at which the rule halts `losses`, if it does.
pub fn early_stop(losses: &[f64], patience: usize) -> Option<usize> {
    let mut rule = EarlyStopping::new(patience);
    losses.iter().position(|&l| rule.update(l)).map(|i| i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkReport {
    pub configuration: String,
    pub kind: NetKind,
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub best_epoch: usize,
    pub wall_seconds: f64,
    pub checkpoint_path: Option<PathBuf>,
}

impl NetworkReport {
    pub fn final_losses(&self) -> (f64, f64) {
        (
            self.train_loss.last().copied().unwrap_or(f64::NAN),
            self.validation_loss.last().copied().unwrap_or(f64::NAN),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub networks: Vec<NetworkReport>,
    pub events: Vec<TrainEvent>,
}

/// Trained checkpoints for one configuration.
#[derive(Debug, Clone)]
pub struct ConfigurationCheckpoints {
    pub configuration: FaceConfiguration,
    pub cvae: Checkpoint,
    pub audionet: Checkpoint,
    pub keynet: Checkpoint,
}

impl ConfigurationCheckpoints {
    pub fn iter(&self) -> impl Iterator<Item = &Checkpoint> {
        [&self.cvae, &self.audionet, &self.keynet].into_iter()
    }
}

/// Splits clip indices into (train, validation), holding out
/// `round(fraction * n)` whole clips (at least one when `n >= 2`).
pub fn split_clips(n_clips: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n_clips).collect();
    if n_clips < 2 {
        return (idx, Vec::new());
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5B11_7000_0000));
    let n_val = ((fraction * n_clips as f64).round() as usize).clamp(1, n_clips - 1);
    let mut val = idx.split_off(n_clips - n_val);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

struct FitOutcome {
    params: Vec<f64>,
    train_loss: Vec<f64>,
    validation_loss: Vec<f64>,
    best_epoch: usize,
}

/// Mini-batch Adam with early stopping on validation loss. `loss` receives
/// the parameters, a sample index, an optional gradient buffer and the
/// run's RNG (for stochastic losses); the best-validation parameters win.
#[allow(clippy::too_many_arguments)]
fn fit<F>(
    plan: &TrainPlan,
    kind: NetKind,
    config: &str,
    mut params: Vec<f64>,
    train: &[usize],
    val: &[usize],
    seed: u64,
    log: &EventLog<'_>,
    loss: F,
) -> Result<FitOutcome>
where
    F: Fn(&[f64], usize, Option<&mut [f64]>, &mut ChaCha8Rng) -> f64,
{
    let n = params.len();
    let mut opt = Adam::new(n, plan.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = train.to_vec();
    let mut grad = vec![0.0; n];
    let mut stop = EarlyStopping::new(plan.patience);
    let mut best = params.clone();
    let (mut train_curve, mut val_curve) = (Vec::new(), Vec::new());
    log.emit("start", config, kind, 0, f64::NAN);
    for epoch in 1..=plan.epochs.get(kind) {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(plan.batch_size) {
            grad.fill(0.0);
            for &i in batch {
                total += loss(&params, i, Some(&mut grad), &mut rng);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            clip_grad_norm(&mut grad, plan.grad_clip);
            opt.step(&mut params, &grad);
        }
        let train_loss = total / order.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            let mut eval_rng = ChaCha8Rng::seed_from_u64(seed ^ epoch as u64);
            val.iter().map(|&i| loss(&params, i, None, &mut eval_rng)).sum::<f64>() / val.len() as f64
        };
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            log.emit("diverged", config, kind, epoch, train_loss);
            return Err(Error::Diverged(format!(
                "{kind} for configuration {config} reached a non-finite loss at epoch {epoch}"
            )));
        }
        train_curve.push(train_loss);
        val_curve.push(val_loss);
        log.emit("epoch", config, kind, epoch, val_loss);
        let halt = stop.update(val_loss);
        if stop.improved_last() {
            best.copy_from_slice(&params);
        }
        if halt {
            log.emit("early_stop", config, kind, epoch, val_loss);
            break;
        }
    }
    Ok(FitOutcome {
        params: best,
        train_loss: train_curve,
        validation_loss: val_curve,
        best_epoch: stop.best().0,
    })
}

/// Shared inputs of one configuration's three trainings.
struct Prepared {
    config: FaceConfiguration,
    table: NormalizationTable,
    fingerprint: DatasetFingerprint,
    samples: Vec<TrainingSample>,
    train: Vec<usize>,
    val: Vec<usize>,
    audio_arch: AudioArch,
}

fn prepare(plan: &TrainPlan, config: &FaceConfiguration, data: &Dataset) -> Result<Prepared> {
    if data.window_frames != plan.window_frames {
        return Err(Error::Config(format!(
            "dataset windows have {} frames but the plan asks for {}",
            data.window_frames, plan.window_frames
        )));
    }
    let config = prune_controllers(&data.clips, config)?;
    let table = fit_normalization(&data.clips, &config)?;
    let fingerprint = DatasetFingerprint::new(data, &table);
    let samples = build_samples(data, &config, &table)?;
    let (train_clips, val_clips) = split_clips(data.clips.len(), plan.validation_split, plan.seed);
    let pick = |clips: &[usize]| -> Vec<usize> {
        samples
            .iter()
            .enumerate()
            .filter(|(_, s)| clips.contains(&s.clip))
            .map(|(i, _)| i)
            .collect()
    };
    let (train, val) = (pick(&train_clips), pick(&val_clips));
    // Per-mel-bin input standardization from the training windows.
    let bins = data.mel.n_mels;
    let (mut sum, mut sq, mut count) = (vec![0.0; bins], vec![0.0; bins], 0usize);
    for &i in &train {
        for (row, (s, q)) in samples[i]
            .mel_window
            .data
            .chunks(plan.window_frames)
            .zip(sum.iter_mut().zip(sq.iter_mut()))
        {
            *s += row.iter().sum::<f64>();
            *q += row.iter().map(|v| v * v).sum::<f64>();
        }
        count += plan.window_frames;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let std: Vec<f64> = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / count as f64 - m * m).max(1e-2).sqrt())
        .collect();
    let mut audio_arch = AudioArch::new(data.mel.n_mels, plan.window_frames, plan.z_dim);
    audio_arch.conv_channels = plan.conv_channels;
    audio_arch.gru_hidden = plan.gru_hidden;
    audio_arch.dense_hidden = plan.dense_hidden;
    audio_arch.input_mean = mean;
    audio_arch.input_std = std;
    Ok(Prepared {
        config,
        table,
        fingerprint,
        samples,
        train,
        val,
        audio_arch,
    })
}

fn seed_for(plan: &TrainPlan, config_index: usize, kind: NetKind) -> u64 {
    plan.seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((config_index as u64) << 8)
        .wrapping_add(kind as u64 + 1)
}

fn make_meta(plan: &TrainPlan, prep: &Prepared, data: &Dataset, kind: NetKind, architecture: Architecture, seed: u64) -> CheckpointMeta {
    CheckpointMeta {
        format_version: FORMAT_VERSION,
        kind,
        configuration: prep.config.clone(),
        normalization: prep.table.clone(),
        mel: data.mel.clone(),
        window_frames: plan.window_frames,
        fps: data.manifest.fps,
        emotion_names: data.manifest.emotion_names.clone(),
        z_dim: plan.z_dim,
        n_emotions: data.manifest.n_emotions(),
        seed,
        fingerprint: prep.fingerprint.clone(),
        architecture,
        key_pos_weight: Vec::new(),
        epochs_trained: 0,
        best_validation_loss: None,
    }
}

fn finish(meta: CheckpointMeta, fit: FitOutcome, started: Instant, config: &str, kind: NetKind) -> (Checkpoint, NetworkReport) {
    let mut meta = meta;
    meta.epochs_trained = fit.train_loss.len();
    meta.best_validation_loss = fit.validation_loss.get(fit.best_epoch.wrapping_sub(1)).copied();
    let report = NetworkReport {
        configuration: config.to_string(),
        kind,
        train_loss: fit.train_loss,
        validation_loss: fit.validation_loss,
        best_epoch: fit.best_epoch,
        wall_seconds: started.elapsed().as_secs_f64(),
        checkpoint_path: None,
    };
    (Checkpoint { meta, params: fit.params }, report)
}

fn train_cvae(plan: &TrainPlan, prep: &Prepared, data: &Dataset, index: usize, log: &EventLog<'_>) -> Result<(Checkpoint, NetworkReport)> {
    let started = Instant::now();
    let arch = CvaeArch {
        n_controllers: prep.config.controller_names.len(),
        n_conditions: data.manifest.n_emotions(),
        z_dim: plan.z_dim,
        hidden: plan.cvae_hidden.clone(),
    };
    let net = Cvae::new(arch.clone())?;
    let seed = seed_for(plan, index, NetKind::Cvae);
    let beta = plan.beta;
    let fit = fit(plan, NetKind::Cvae, &prep.config.name, net.init_params(seed), &prep.train, &prep.val, seed, log, |p, i, g, rng| {
        let s = &prep.samples[i];
        match g {
            // Training draws a latent sample; validation uses the mean path.
            Some(g) => {
                let eps = net.draw_eps(rng);
                net.loss_grad(p, &s.controller_values, &s.condition, Some(&eps), beta, Some(g))
            }
            None => net.loss_grad(p, &s.controller_values, &s.condition, None, beta, None),
        }
    })?;
    let meta = make_meta(plan, prep, data, NetKind::Cvae, Architecture::Cvae(arch), seed);
    Ok(finish(meta, fit, started, &prep.config.name, NetKind::Cvae))
}

fn train_audionet(plan: &TrainPlan, prep: &Prepared, data: &Dataset, index: usize, cvae: &CvaeModel, log: &EventLog<'_>) -> Result<(Checkpoint, NetworkReport)> {
    let started = Instant::now();
    let targets = prep
        .samples
        .iter()
        .map(|s| cvae.encode_mean(&s.controller_values, &s.condition).map(|z| z.0))
        .collect::<Result<Vec<_>>>()?;
    let net = ConvRecurrentNet::new(prep.audio_arch.clone())?;
    let seed = seed_for(plan, index, NetKind::AudioNet);
    let fit = fit(plan, NetKind::AudioNet, &prep.config.name, net.init_params(seed), &prep.train, &prep.val, seed, log, |p, i, g, _| {
        net.loss_grad(p, &prep.samples[i].mel_window, |o| audionet_loss(o, &targets[i]), g)
    })?;
    let meta = make_meta(plan, prep, data, NetKind::AudioNet, Architecture::Audio(prep.audio_arch.clone()), seed);
    Ok(finish(meta, fit, started, &prep.config.name, NetKind::AudioNet))
}

fn train_keynet(plan: &TrainPlan, prep: &Prepared, data: &Dataset, index: usize, log: &EventLog<'_>) -> Result<(Checkpoint, NetworkReport)> {
    let started = Instant::now();
    let n_ctrl = prep.config.controller_names.len();
    let pos_weight = positive_class_weights(prep.train.iter().map(|&i| prep.samples[i].key_flag.as_slice()), n_ctrl);
    let arch = AudioArch {
        out_dim: 3 * n_ctrl,
        ..prep.audio_arch.clone()
    };
    let net = ConvRecurrentNet::new(arch.clone())?;
    let seed = seed_for(plan, index, NetKind::KeyNet);
    let fit = fit(plan, NetKind::KeyNet, &prep.config.name, net.init_params(seed), &prep.train, &prep.val, seed, log, |p, i, g, _| {
        let s = &prep.samples[i];
        let t = KeyTargets {
            key_flag: &s.key_flag,
            in_tangent: &s.in_tangent,
            out_tangent: &s.out_tangent,
            pos_weight: &pos_weight,
            tangent_weight: plan.tangent_weight,
        };
        net.loss_grad(p, &s.mel_window, |o| keynet_loss(o, t), g)
    })?;
    let mut meta = make_meta(plan, prep, data, NetKind::KeyNet, Architecture::Audio(arch), seed);
    meta.key_pos_weight = pos_weight;
    Ok(finish(meta, fit, started, &prep.config.name, NetKind::KeyNet))
}

/// Trains the C-VAE, AudioNet and KeyNet of one configuration.
/// `index` is the configuration's position in the plan (it salts seeds).
pub fn train_configuration(
    plan: &TrainPlan,
    index: usize,
    config: &FaceConfiguration,
    data: &Dataset,
    log: &EventLog<'_>,
) -> Result<(ConfigurationCheckpoints, Vec<NetworkReport>)> {
    plan.validate()?;
    let prep = prepare(plan, config, data)?;
    let chain = || -> Result<_> {
        let (cvae_ck, cvae_rep) = train_cvae(plan, &prep, data, index, log).map_err(|e| match e {
            Error::Diverged(msg) => Error::Diverged(format!("{msg}; AudioNet for {} was not started", prep.config.name)),
            other => other,
        })?;
        let cvae_loss = cvae_rep.validation_loss.last().copied().unwrap_or(f64::NAN);
        log.emit("finalized", &prep.config.name, NetKind::Cvae, cvae_rep.train_loss.len(), cvae_loss);
        let cvae = CvaeModel::from_checkpoint(cvae_ck)?;
        let (audio_ck, audio_rep) = train_audionet(plan, &prep, data, index, &cvae, log)?;
        log.emit("finalized", &prep.config.name, NetKind::AudioNet, audio_rep.train_loss.len(), audio_rep.final_losses().1);
        Ok((cvae.checkpoint, cvae_rep, audio_ck, audio_rep))
    };
    let keys = || -> Result<_> {
        let out = train_keynet(plan, &prep, data, index, log)?;
        log.emit("finalized", &prep.config.name, NetKind::KeyNet, out.1.train_loss.len(), out.1.final_losses().1);
        Ok(out)
    };
    let (chain_out, key_out) = if plan.deterministic {
        let c = chain();
        (c, keys())
    } else {
        std::thread::scope(|s| {
            let handle = s.spawn(keys);
            let c = chain();
            (c, handle.join().unwrap_or_else(|_| Err(Error::Internal("KeyNet training panicked".into()))))
        })
    };
    let (cvae, cvae_rep, audionet, audio_rep) = chain_out?;
    let (keynet, key_rep) = key_out?;
    Ok((
        ConfigurationCheckpoints {
            configuration: prep.config,
            cvae,
            audionet,
            keynet,
        },
        vec![cvae_rep, audio_rep, key_rep],
    ))
}

/// Trains every configuration of the plan in order. When `out_dir` is given,
/// writes `<configuration>.<kind>.ckpt` files and `train_report.json` there.
pub fn train(plan: &TrainPlan, data: &Dataset, out_dir: Option<&Path>, log: &EventLog<'_>) -> Result<(Vec<ConfigurationCheckpoints>, TrainReport)> {
    plan.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut all = Vec::new();
    let mut reports = Vec::new();
    for (i, config) in plan.configurations.iter().enumerate() {
        let (cks, mut reps) = train_configuration(plan, i, config, data, log)?;
        if let Some(dir) = out_dir {
            for (ck, rep) in cks.iter().zip(reps.iter_mut()) {
                let path = dir.join(ck.file_name());
                ck.save(&path)?;
                rep.checkpoint_path = Some(path);
            }
        }
        all.push(cks);
        reports.extend(reps);
    }
    let report = TrainReport {
        networks: reports,
        events: log.events(),
    };
    if let Some(dir) = out_dir {
        dataset::write_json(&dir.join("train_report.json"), &report)?;
    }
    Ok((all, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_examples() {
        let decreasing: Vec<f64> = (0..50).map(|i| 1.0 / (i + 1) as f64).collect();
        assert_eq!(early_stop(&decreasing, 10), None);
        assert_eq!(early_stop(&[0.5; 40], 10), Some(11));
    }

    /// Independent restatement of the rule on an explicit trace.
    fn reference_stop(losses: &[f64], patience: usize) -> Option<usize> {
        let mut best = f64::INFINITY;
        let mut since = 0;
        for (i, &l) in losses.iter().enumerate() {
            if best - l >= 1e-5 && l < best - 1e-5 {
                best = l;
                since = 0;
            } else {
                since += 1;
                if since == patience {
                    return Some(i + 1);
                }
            }
        }
        None
    }

    #[test]
    fn early_stop_on_noisy_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        use rand::Rng;
        for _ in 0..200 {
            let trace: Vec<f64> = (0..80)
                .map(|i| 1.0 / (1.0 + 0.1 * i as f64) + rng.random_range(-0.05..0.05))
                .collect();
            let p = rng.random_range(1..12);
            assert_eq!(early_stop(&trace, p), reference_stop(&trace, p));
        }
        // Frozen trace: improvement at epochs 1, 2, 4; stale from epoch 5 on.
        let trace = [1.0, 0.9, 0.95, 0.8, 0.8, 0.81, 0.800001, 0.85];
        assert_eq!(early_stop(&trace, 4), Some(8));
    }

    #[test]
    fn split_is_disjoint_and_stable() {
        let (a_train, a_val) = split_clips(12, 0.1, 3);
        let (b_train, b_val) = split_clips(12, 0.1, 3);
        assert_eq!((a_train.clone(), a_val.clone()), (b_train, b_val));
        assert_eq!(a_val.len(), 1);
        assert_eq!(a_train.len(), 11);
        assert!(a_val.iter().all(|v| !a_train.contains(v)));
        assert_eq!(split_clips(1, 0.1, 0), (vec![0], vec![]));
        assert_eq!(split_clips(20, 0.1, 0).1.len(), 2);
    }

    #[test]
    fn plan_file_defaults() {
        let json = r#"{"configurations":[{"name":"mouth","controller_names":["a"]}],
            "epochs":{"cvae":2,"audionet":2,"keynet":2},"batch_size":8,
            "learning_rate":0.001,"seed":1,"validation_split":0.1}"#;
        let plan: TrainPlan = serde_json::from_str(json).unwrap();
        plan.validate().unwrap();
        assert_eq!(plan.patience, 10);
        assert_eq!(plan.window_frames, 33);
        assert!(plan.deterministic);
        let bad = TrainPlan { validation_split: 1.0, ..plan };
        assert!(bad.validate().is_err());
    }
}
