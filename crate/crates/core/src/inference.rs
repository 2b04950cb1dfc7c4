//! Audio to keyed rig curves: mel windows feed AudioNet, whose latent is
//! decoded by the C-VAE under the requested emotion weights into dense
//! controller values; KeyNet decides where keys go and supplies tangents.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{self, AudioClip, MelWindow};
use crate::curves::{self, finite_difference_slope, gaussian_smooth, Key, SUPPORTED_RATES};
use crate::dataset::DatasetFingerprint;
use crate::error::{Error, Result};
use crate::neural::{Checkpoint, ConditionVector, NetKind, NetworkTriple};

fn default_threshold() -> f64 {
    0.5
}
fn default_sigma() -> f64 {
    2.0
}
fn default_rate() -> u32 {
    1
}

/// User-facing knobs of one inference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceSettings {
    pub emotion_weights: Vec<f64>,
    #[serde(default = "default_threshold")]
    pub key_threshold: f64,
    #[serde(default)]
    pub smooth_upper: bool,
    #[serde(default = "default_sigma")]
    pub smooth_sigma: f64,
    #[serde(default = "default_rate")]
    pub rate: u32,
    /// Gaussian sigma (frames) applied to predicted tangents; 0 disables.
    #[serde(default)]
    pub tangent_filter_sigma: f64,
}

impl InferenceSettings {
    pub fn new(emotion_weights: Vec<f64>) -> Self {
        InferenceSettings {
            emotion_weights,
            key_threshold: default_threshold(),
            smooth_upper: false,
            smooth_sigma: default_sigma(),
            rate: default_rate(),
            tangent_filter_sigma: 0.0,
        }
    }

    pub fn validate(&self, n_emotions: usize) -> Result<()> {
        ConditionVector::new(self.emotion_weights.clone())?;
        if self.emotion_weights.len() != n_emotions {
            return Err(Error::Dimension {
                what: "emotion weights",
                expected: n_emotions,
                found: self.emotion_weights.len(),
            });
        }
        if !(self.key_threshold > 0.0 && self.key_threshold < 1.0) {
            return Err(Error::Invalid(format!(
                "key_threshold {} must lie in (0, 1)",
                self.key_threshold
            )));
        }
        if !SUPPORTED_RATES.contains(&self.rate) {
            return Err(Error::Invalid(format!("rate {} is not one of 1, 2, 4", self.rate)));
        }
        if !(self.smooth_sigma > 0.0) || !(self.tangent_filter_sigma >= 0.0) {
            return Err(Error::Invalid("smoothing sigmas must be positive".into()));
        }
        Ok(())
    }
}

/// Clamps each weight into [0, 1]; the sum is left alone so several
/// emotions can be fully on at once.
pub fn mix_emotions(weights: &[f64], n_emotions: usize) -> Result<ConditionVector> {
    if weights.len() != n_emotions {
        return Err(Error::Dimension {
            what: "emotion weights",
            expected: n_emotions,
            found: weights.len(),
        });
    }
    if weights.iter().any(|w| w.is_nan()) {
        return Err(Error::Invalid("emotion weight is NaN".into()));
    }
    ConditionVector::new(weights.iter().map(|w| w.clamp(0.0, 1.0)).collect())
}

/// Turns per-frame key probabilities into keys.
///
/// Frames with `p >= threshold` are marked. Of two adjacent marked frames
/// the higher probability survives (the earlier one on a tie). Frames 0 and
/// `len - 1` are always keyed; if not marked they take the finite-difference
/// slope of `values`. Key values are read from `values`; marked frames take
/// their tangents from `tangents` as `(in, out)`.
pub fn decode_keys(probabilities: &[f64], tangents: &[(f64, f64)], threshold: f64, values: &[f64]) -> Vec<Key> {
    let n = values.len();
    assert!(
        probabilities.len() == n && tangents.len() == n,
        "decode_keys inputs must have one entry per frame"
    );
    if n == 0 {
        return Vec::new();
    }
    let marked = |i: usize| probabilities[i] >= threshold;
    let survives = |i: usize| {
        marked(i)
            && !(i > 0 && marked(i - 1) && probabilities[i - 1] >= probabilities[i])
            && !(i + 1 < n && marked(i + 1) && probabilities[i + 1] > probabilities[i])
    };
    (0..n)
        .filter_map(|i| {
            if survives(i) {
                Some(Key::new(i as u32, values[i], tangents[i].0, tangents[i].1))
            } else if i == 0 || i == n - 1 {
                Some(Key::smooth(i as u32, values[i], finite_difference_slope(values, i)))
            } else {
                None
            }
        })
        .collect()
}

/// Keys of one controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerKeys {
    pub name: String,
    pub keys: Vec<Key>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationKeys {
    pub name: String,
    pub controllers: Vec<ControllerKeys>,
}

/// Identity of one checkpoint used to produce a result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointFingerprint {
    pub configuration: String,
    pub net: NetKind,
    pub checkpoint: String,
    pub manifest: String,
    pub dataset: String,
}

/// The "rigkeys" document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub fps: f64,
    pub frame_count: usize,
    pub configurations: Vec<ConfigurationKeys>,
    pub settings_echo: InferenceSettings,
    pub checkpoint_fingerprints: Vec<CheckpointFingerprint>,
    /// Baked per-frame values, `dense[configuration][controller][frame]`.
    #[serde(skip)]
    pub dense: Vec<Vec<Vec<f64>>>,
}

impl InferenceResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// One line per channel for import scripts:
    /// `configuration/controller frame:value:in:out ...`.
    pub fn to_channel_text(&self) -> String {
        let mut out = format!("# fps {} frame_count {}\n", self.fps, self.frame_count);
        for cfg in &self.configurations {
            for ctrl in &cfg.controllers {
                let _ = write!(out, "{}/{}", cfg.name, ctrl.name);
                for k in &ctrl.keys {
                    let _ = write!(out, " {}:{}:{}:{}", k.frame, k.value, k.in_tangent, k.out_tangent);
                }
                out.push('\n');
            }
        }
        out
    }

    /// Dense curve of one controller, if present.
    pub fn dense_curve(&self, configuration: &str, controller: &str) -> Option<&[f64]> {
        let ci = self.configurations.iter().position(|c| c.name == configuration)?;
        let k = self.configurations[ci].controllers.iter().position(|c| c.name == controller)?;
        self.dense.get(ci)?.get(k).map(Vec::as_slice)
    }
}

/// The loaded network triples, one per face configuration.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub triples: Vec<NetworkTriple>,
    fingerprints: Vec<CheckpointFingerprint>,
    /// Skip the shared-dataset check (mixing checkpoints on purpose).
    pub allow_mixed: bool,
}

impl ModelSet {
    pub fn new(triples: Vec<NetworkTriple>) -> Result<Self> {
        let first = triples
            .first()
            .ok_or_else(|| Error::Config("no network triples loaded".into()))?
            .meta()
            .clone();
        let mut fingerprints = Vec::new();
        for t in &triples {
            let m = t.meta();
            if m.fps != first.fps || m.mel != first.mel || m.window_frames != first.window_frames {
                return Err(Error::Config(format!(
                    "configuration {} uses different framing or mel settings",
                    m.configuration.name
                )));
            }
            if t.cvae.net.arch.n_conditions != first.n_emotions {
                return Err(Error::Config("configurations disagree on the emotion count".into()));
            }
            for ck in [&t.cvae.checkpoint, &t.audionet.checkpoint, &t.keynet.checkpoint] {
                fingerprints.push(fingerprint_of(ck)?);
            }
        }
        Ok(ModelSet {
            triples,
            fingerprints,
            allow_mixed: false,
        })
    }

    /// Loads every `*.ckpt` in `dir`, grouped by configuration and ordered
    /// by configuration name. Fingerprints are checked at inference time.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
            .collect();
        paths.sort();
        let mut groups: BTreeMap<String, [Option<Checkpoint>; 3]> = BTreeMap::new();
        for p in paths {
            let ck = Checkpoint::load(&p)?;
            let slot = NetKind::ALL.iter().position(|&k| k == ck.meta.kind).expect("kind is listed");
            let entry = groups.entry(ck.meta.configuration.name.clone()).or_default();
            if entry[slot].replace(ck).is_some() {
                return Err(Error::Config(format!("{} holds two checkpoints for one network", dir.display())));
            }
        }
        let mut triples = Vec::new();
        for (name, [c, a, k]) in groups {
            match (c, a, k) {
                (Some(c), Some(a), Some(k)) => triples.push(NetworkTriple::from_checkpoints(c, a, k, true)?),
                _ => return Err(Error::Config(format!("configuration {name} is missing a network"))),
            }
        }
        Self::new(triples)
    }

    pub fn n_emotions(&self) -> usize {
        self.triples[0].meta().n_emotions
    }

    pub fn emotion_names(&self) -> &[String] {
        &self.triples[0].meta().emotion_names
    }

    pub fn fps(&self) -> f64 {
        self.triples[0].meta().fps
    }

    pub fn fingerprints(&self) -> &[CheckpointFingerprint] {
        &self.fingerprints
    }

    /// All checkpoints must come from the same dataset: within a triple the
    /// full fingerprint must agree, across triples the manifest hash.
    pub fn verify_fingerprints(&self) -> Result<()> {
        for t in &self.triples {
            let [a, b, c] = t.fingerprints();
            if a != b || a != c {
                return Err(Error::FingerprintMismatch(format!(
                    "configuration {} mixes checkpoints from different datasets",
                    t.configuration().name
                )));
            }
        }
        let manifest = &self.triples[0].fingerprints()[0].manifest;
        if let Some(t) = self.triples.iter().find(|t| &t.fingerprints()[0].manifest != manifest) {
            return Err(Error::FingerprintMismatch(format!(
                "configuration {} was trained on a different dataset manifest",
                t.configuration().name
            )));
        }
        Ok(())
    }
}

fn fingerprint_of(ck: &Checkpoint) -> Result<CheckpointFingerprint> {
    let DatasetFingerprint { manifest, dataset } = ck.meta.fingerprint.clone();
    Ok(CheckpointFingerprint {
        configuration: ck.meta.configuration.name.clone(),
        net: ck.meta.kind,
        checkpoint: ck.content_hash()?,
        manifest,
        dataset,
    })
}

/// Number of animation frames covering `duration` seconds.
pub fn frame_count(duration: f64, fps: f64) -> usize {
    (duration * fps).round() as usize
}

/// Runs the full pipeline on one clip.
pub fn infer(audio_clip: &AudioClip, models: &ModelSet, settings: &InferenceSettings) -> Result<InferenceResult> {
    if !models.allow_mixed {
        models.verify_fingerprints()?;
    }
    settings.validate(models.n_emotions())?;
    if audio_clip.samples.is_empty() {
        return Err(Error::Invalid("audio is empty".into()));
    }
    let meta = models.triples[0].meta();
    let fps = meta.fps;
    let n_frames = frame_count(audio_clip.duration_seconds(), fps);
    if n_frames < 2 {
        return Err(Error::Invalid(format!(
            "audio of {:.3} s is shorter than two animation frames",
            audio_clip.duration_seconds()
        )));
    }
    let resampled = audio::resample(audio_clip, meta.mel.sample_rate)?;
    let spec = audio::melspectrogram(&resampled, &meta.mel)?;
    let windows = (0..n_frames)
        .map(|f| audio::window_for_frame(&spec, f as i64, fps, meta.window_frames))
        .collect::<Result<Vec<_>>>()?;
    let condition = mix_emotions(&settings.emotion_weights, models.n_emotions())?;

    let mut configurations = Vec::with_capacity(models.triples.len());
    let mut dense_all = Vec::with_capacity(models.triples.len());
    for triple in &models.triples {
        let (cfg, dense) = infer_configuration(triple, &windows, &condition, settings)?;
        configurations.push(cfg);
        dense_all.push(dense);
    }
    Ok(InferenceResult {
        fps,
        frame_count: n_frames,
        configurations,
        settings_echo: settings.clone(),
        checkpoint_fingerprints: models.fingerprints.clone(),
        dense: dense_all,
    })
}

fn infer_configuration(
    triple: &NetworkTriple,
    windows: &[MelWindow],
    condition: &ConditionVector,
    settings: &InferenceSettings,
) -> Result<(ConfigurationKeys, Vec<Vec<f64>>)> {
    let config = triple.configuration();
    let table = triple.normalization();
    let n_ctrl = config.controller_names.len();
    let n = windows.len();
    let mut dense = vec![vec![0.0; n]; n_ctrl];
    let mut prob = vec![vec![0.0; n]; n_ctrl];
    let mut t_in = vec![vec![0.0; n]; n_ctrl];
    let mut t_out = vec![vec![0.0; n]; n_ctrl];
    for (f, w) in windows.iter().enumerate() {
        let z = triple.audionet.forward(w)?;
        let x = table.denormalize_vec(&triple.cvae.decode(&z, condition)?);
        let k = triple.keynet.forward(w)?;
        for c in 0..n_ctrl {
            dense[c][f] = x[c];
            prob[c][f] = k.probability[c];
            t_in[c][f] = table.denormalize_slope(c, k.in_tangent[c]);
            t_out[c][f] = table.denormalize_slope(c, k.out_tangent[c]);
        }
    }
    if settings.smooth_upper && config.upper_face {
        for d in dense.iter_mut() {
            *d = gaussian_smooth(d, settings.smooth_sigma)?;
        }
    }
    if settings.tangent_filter_sigma > 0.0 {
        for t in t_in.iter_mut().chain(t_out.iter_mut()) {
            *t = gaussian_smooth(t, settings.tangent_filter_sigma)?;
        }
    }
    let mut controllers = Vec::with_capacity(n_ctrl);
    for c in 0..n_ctrl {
        let tangents: Vec<(f64, f64)> = t_in[c].iter().copied().zip(t_out[c].iter().copied()).collect();
        let keys = decode_keys(&prob[c], &tangents, settings.key_threshold, &dense[c]);
        let mut keys = curves::rate_filter(&keys, settings.rate)?;
        // Snapped keys take the dense value at their new frame.
        for k in keys.iter_mut() {
            k.value = dense[c][k.frame as usize];
        }
        if let Some(bad) = keys.iter().find(|k| !k.is_finite()) {
            return Err(Error::Internal(format!(
                "non-finite key at frame {} of {}",
                bad.frame, config.controller_names[c]
            )));
        }
        controllers.push(ControllerKeys {
            name: config.controller_names[c].clone(),
            keys,
        });
    }
    Ok((
        ConfigurationKeys {
            name: config.name.clone(),
            controllers,
        },
        dense,
    ))
}
