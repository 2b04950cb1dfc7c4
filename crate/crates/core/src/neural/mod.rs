//! The three networks (conditional VAE, AudioNet, KeyNet), their losses,
//! an Adam optimizer, gradient checking and the checkpoint container.

pub mod audio_net;
pub mod cvae;
pub mod gradcheck;
pub mod layers;

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{MelConfig, MelWindow};
use crate::dataset::{hash_hex, DatasetFingerprint, FaceConfiguration, NormalizationTable};
use crate::error::{Error, Result};

pub use audio_net::{audionet_loss, keynet_loss, AudioArch, ConvRecurrentNet, KeyPrediction, KeyTargets};
pub use cvae::{cvae_loss, Cvae, CvaeArch, CvaeOutput, LatentMode};
pub use gradcheck::{gradient_check, FnObjective, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Cvae,
    AudioNet,
    KeyNet,
}

impl NetKind {
    pub const ALL: [NetKind; 3] = [NetKind::Cvae, NetKind::AudioNet, NetKind::KeyNet];

    pub fn as_str(self) -> &'static str {
        match self {
            NetKind::Cvae => "cvae",
            NetKind::AudioNet => "audionet",
            NetKind::KeyNet => "keynet",
        }
    }
}

impl std::fmt::Display for NetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A latent code predicted by AudioNet or produced by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(pub Vec<f64>);

/// Emotion weights fed to the decoder, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionVector(Vec<f64>);

impl ConditionVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Invalid(format!("condition weight {w} outside [0, 1]")));
        }
        Ok(ConditionVector(weights))
    }

    pub fn one_hot(index: usize, n: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::Invalid(format!("emotion index {index} >= {n}")));
        }
        Ok(ConditionVector(crate::dataset::one_hot(index, n)))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Architecture {
    Cvae(CvaeArch),
    Audio(AudioArch),
}

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"RIGSYNC\0";

/// Self-describing metadata stored alongside parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub kind: NetKind,
    pub configuration: FaceConfiguration,
    pub normalization: NormalizationTable,
    pub mel: MelConfig,
    pub window_frames: usize,
    pub fps: f64,
    pub emotion_names: Vec<String>,
    pub z_dim: usize,
    pub n_emotions: usize,
    pub seed: u64,
    pub fingerprint: DatasetFingerprint,
    pub architecture: Architecture,
    /// KeyNet only: positive-class weights used in training.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub key_pos_weight: Vec<f64>,
    #[serde(default)]
    pub epochs_trained: usize,
    #[serde(default)]
    pub best_validation_loss: Option<f64>,
}

/// Parameters plus metadata. Binary layout (little endian):
/// `"RIGSYNC\0"`, `u32` format version, `u64` metadata length, metadata
/// JSON, `u64` parameter count, `f64` parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(28 + meta.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut bytes, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut bytes)?);
        if version != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let meta_len = u64::from_le_bytes(read_array(&mut bytes)?) as usize;
        if meta_len > bytes.len() {
            return Err(Error::Checkpoint("truncated metadata".into()));
        }
        let (meta_bytes, rest) = bytes.split_at(meta_len);
        let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                expected: FORMAT_VERSION,
                found: meta.format_version,
            });
        }
        bytes = rest;
        let n = u64::from_le_bytes(read_array(&mut bytes)?) as usize;
        if bytes.len() != n * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                n * 8,
                bytes.len()
            )));
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Checkpoint { meta, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hash_hex(&[&self.to_bytes()?]))
    }

    /// Conventional file name: `<configuration>.<kind>.ckpt`.
    pub fn file_name(&self) -> String {
        format!("{}.{}.ckpt", self.meta.configuration.name, self.meta.kind)
    }
}

fn read_exact(bytes: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    bytes
        .read_exact(buf)
        .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))
}

fn read_array<const N: usize>(bytes: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(bytes, &mut buf)?;
    Ok(buf)
}

fn expect_kind(ck: &Checkpoint, kind: NetKind) -> Result<()> {
    if ck.meta.kind != kind {
        return Err(Error::Checkpoint(format!(
            "expected a {kind} checkpoint, found {}",
            ck.meta.kind
        )));
    }
    Ok(())
}

fn check_param_count(ck: &Checkpoint, n: usize) -> Result<()> {
    if ck.params.len() != n {
        return Err(Error::Dimension {
            what: "checkpoint parameters",
            expected: n,
            found: ck.params.len(),
        });
    }
    Ok(())
}

/// A trained conditional VAE.
#[derive(Debug, Clone)]
pub struct CvaeModel {
    pub net: Cvae,
    pub checkpoint: Checkpoint,
}

impl CvaeModel {
    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self> {
        expect_kind(&checkpoint, NetKind::Cvae)?;
        let Architecture::Cvae(arch) = &checkpoint.meta.architecture else {
            return Err(Error::Checkpoint("C-VAE checkpoint without C-VAE architecture".into()));
        };
        let net = Cvae::new(arch.clone())?;
        check_param_count(&checkpoint, net.n_params())?;
        if arch.n_controllers != checkpoint.meta.normalization.len() {
            return Err(Error::Checkpoint("decoder width differs from controller count".into()));
        }
        Ok(CvaeModel { net, checkpoint })
    }

    pub fn params(&self) -> &[f64] {
        &self.checkpoint.params
    }

    pub fn forward(&self, x: &[f64], c: &ConditionVector, mode: LatentMode<'_>) -> Result<CvaeOutput> {
        self.net.forward(self.params(), x, c.as_slice(), mode)
    }

    pub fn decode(&self, z: &LatentVector, c: &ConditionVector) -> Result<Vec<f64>> {
        self.net.decode(self.params(), &z.0, c.as_slice())
    }

    /// Posterior mean, the regression target of AudioNet.
    pub fn encode_mean(&self, x: &[f64], c: &[f64]) -> Result<LatentVector> {
        Ok(LatentVector(self.net.encode(self.params(), x, c)?.0))
    }
}

fn audio_net(checkpoint: &Checkpoint) -> Result<ConvRecurrentNet> {
    let Architecture::Audio(arch) = &checkpoint.meta.architecture else {
        return Err(Error::Checkpoint(format!(
            "{} checkpoint without an audio architecture",
            checkpoint.meta.kind
        )));
    };
    let net = ConvRecurrentNet::new(arch.clone())?;
    check_param_count(checkpoint, net.n_params())?;
    Ok(net)
}

/// A trained AudioNet: mel window to C-VAE latent.
#[derive(Debug, Clone)]
pub struct AudioNetModel {
    pub net: ConvRecurrentNet,
    pub checkpoint: Checkpoint,
}

impl AudioNetModel {
    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self> {
        expect_kind(&checkpoint, NetKind::AudioNet)?;
        let net = audio_net(&checkpoint)?;
        Ok(AudioNetModel { net, checkpoint })
    }

    pub fn forward(&self, w: &MelWindow) -> Result<LatentVector> {
        Ok(LatentVector(self.net.forward(&self.checkpoint.params, w)?))
    }
}

/// A trained KeyNet: mel window to per-controller key probability and tangents.
#[derive(Debug, Clone)]
pub struct KeyNetModel {
    pub net: ConvRecurrentNet,
    pub checkpoint: Checkpoint,
}

impl KeyNetModel {
    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self> {
        expect_kind(&checkpoint, NetKind::KeyNet)?;
        let net = audio_net(&checkpoint)?;
        if net.arch.out_dim != 3 * checkpoint.meta.normalization.len() {
            return Err(Error::Checkpoint("KeyNet head is not 3 x controllers".into()));
        }
        Ok(KeyNetModel { net, checkpoint })
    }

    pub fn forward(&self, w: &MelWindow) -> Result<KeyPrediction> {
        Ok(KeyPrediction::from_head(&self.net.forward(&self.checkpoint.params, w)?))
    }
}

/// The three networks serving one face configuration.
#[derive(Debug, Clone)]
pub struct NetworkTriple {
    pub cvae: CvaeModel,
    pub audionet: AudioNetModel,
    pub keynet: KeyNetModel,
}

impl NetworkTriple {
    /// Pairs three checkpoints, checking shapes always and dataset
    /// fingerprints unless `allow_mixed` is set.
    pub fn new(cvae: CvaeModel, audionet: AudioNetModel, keynet: KeyNetModel, allow_mixed: bool) -> Result<Self> {
        let z = cvae.net.arch.z_dim;
        if audionet.net.arch.out_dim != z {
            return Err(Error::Dimension {
                what: "AudioNet output vs C-VAE latent",
                expected: z,
                found: audionet.net.arch.out_dim,
            });
        }
        let metas = [&cvae.checkpoint.meta, &audionet.checkpoint.meta, &keynet.checkpoint.meta];
        if metas.iter().any(|m| m.configuration.name != metas[0].configuration.name) {
            return Err(Error::Config("checkpoints belong to different configurations".into()));
        }
        if metas.iter().any(|m| m.normalization != metas[0].normalization) {
            return Err(Error::Config("checkpoints disagree on controller normalization".into()));
        }
        if metas[1].mel != metas[2].mel || metas[1].window_frames != metas[2].window_frames {
            return Err(Error::Config("AudioNet and KeyNet use different mel settings".into()));
        }
        if !allow_mixed && metas.iter().any(|m| m.fingerprint != metas[0].fingerprint) {
            return Err(Error::FingerprintMismatch(format!(
                "configuration {}: {} / {} / {}",
                metas[0].configuration.name,
                metas[0].fingerprint.dataset,
                metas[1].fingerprint.dataset,
                metas[2].fingerprint.dataset
            )));
        }
        Ok(NetworkTriple { cvae, audionet, keynet })
    }

    pub fn from_checkpoints(cvae: Checkpoint, audionet: Checkpoint, keynet: Checkpoint, allow_mixed: bool) -> Result<Self> {
        Self::new(
            CvaeModel::from_checkpoint(cvae)?,
            AudioNetModel::from_checkpoint(audionet)?,
            KeyNetModel::from_checkpoint(keynet)?,
            allow_mixed,
        )
    }

    pub fn configuration(&self) -> &FaceConfiguration {
        &self.cvae.checkpoint.meta.configuration
    }

    pub fn normalization(&self) -> &NormalizationTable {
        &self.cvae.checkpoint.meta.normalization
    }

    pub fn meta(&self) -> &CheckpointMeta {
        &self.audionet.checkpoint.meta
    }

    pub fn fingerprints(&self) -> [&DatasetFingerprint; 3] {
        [
            &self.cvae.checkpoint.meta.fingerprint,
            &self.audionet.checkpoint.meta.fingerprint,
            &self.keynet.checkpoint.meta.fingerprint,
        ]
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` so its L2 norm is at most `max_norm`; returns the
/// original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
