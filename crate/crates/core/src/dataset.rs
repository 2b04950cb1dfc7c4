//! Training data: clip/audio ingestion, controller pruning, per-controller
//! normalization, sample assembly and the synthetic oracle dataset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{self, AudioClip, MelConfig, MelWindow};
use crate::curves::{self, ControllerCurve, Key, RigAnimationClip};
use crate::error::{Error, Result};

/// Default emotion slots; the condition vector always has this many entries
/// unless a manifest says otherwise.
pub const DEFAULT_EMOTIONS: [&str; 6] = ["neutral", "happy", "angry", "surprised", "sad", "disgusted"];

/// Tolerance (normalized units) used to derive key targets for clips
/// without stored keys.
pub const FALLBACK_KEY_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip: PathBuf,
    pub audio: PathBuf,
    pub emotion: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub clips: Vec<ManifestEntry>,
    pub fps: f64,
    pub emotion_names: Vec<String>,
}

impl DatasetManifest {
    pub fn n_emotions(&self) -> usize {
        self.emotion_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.emotion_names.is_empty() {
            return Err(Error::Invalid("manifest lists no emotions".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Invalid(format!("manifest fps {} must be > 0", self.fps)));
        }
        if let Some(e) = self.clips.iter().find(|e| e.emotion >= self.n_emotions()) {
            return Err(Error::Invalid(format!(
                "{} has emotion {} but only {} emotions exist",
                e.clip.display(),
                e.emotion,
                self.n_emotions()
            )));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        hash_hex(&[&serde_json::to_vec(self).expect("manifest serializes")])
    }
}

/// Named controller subset trained with its own network triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceConfiguration {
    pub name: String,
    pub controller_names: Vec<String>,
    /// Marks the upper-face set that the smoothing option targets.
    #[serde(default)]
    pub upper_face: bool,
}

impl FaceConfiguration {
    pub fn new(name: &str, controllers: &[&str]) -> Self {
        FaceConfiguration {
            name: name.to_string(),
            controller_names: controllers.iter().map(|s| s.to_string()).collect(),
            upper_face: false,
        }
    }

    pub fn upper(mut self) -> Self {
        self.upper_face = true;
        self
    }

    /// Mouth, tongue and upper face.
    pub fn default_set() -> Vec<FaceConfiguration> {
        vec![
            FaceConfiguration::new("mouth", &["jaw_open", "lip_wide", "lip_pucker"]),
            FaceConfiguration::new("tongue", &["tongue_up", "tongue_out", "tongue_curl"]),
            FaceConfiguration::new("upper", &["brow_raise", "brow_furrow", "eye_squint"]).upper(),
        ]
    }

    pub fn validate_set(configs: &[FaceConfiguration]) -> Result<()> {
        let mut seen = BTreeMap::new();
        for c in configs {
            if c.controller_names.is_empty() {
                return Err(Error::Config(format!("configuration {} is empty", c.name)));
            }
            for n in &c.controller_names {
                if let Some(prev) = seen.insert(n.clone(), c.name.clone()) {
                    return Err(Error::Config(format!(
                        "controller {n} appears in both {prev} and {}",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerRange {
    pub min: f64,
    pub max: f64,
}

/// Per-controller affine map of `[min, max]` onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTable {
    pub controllers: Vec<String>,
    pub ranges: Vec<ControllerRange>,
}

impl NormalizationTable {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn normalize(&self, i: usize, v: f64) -> f64 {
        let r = self.ranges[i];
        2.0 * (v - r.min) / (r.max - r.min) - 1.0
    }

    pub fn denormalize(&self, i: usize, v: f64) -> f64 {
        let r = self.ranges[i];
        (v + 1.0) * 0.5 * (r.max - r.min) + r.min
    }

    /// Slopes scale by the same factor as values (offset drops out).
    pub fn normalize_slope(&self, i: usize, s: f64) -> f64 {
        let r = self.ranges[i];
        s * 2.0 / (r.max - r.min)
    }

    pub fn denormalize_slope(&self, i: usize, s: f64) -> f64 {
        let r = self.ranges[i];
        s * 0.5 * (r.max - r.min)
    }

    pub fn normalize_vec(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(i, &x)| self.normalize(i, x)).collect()
    }

    pub fn denormalize_vec(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(i, &x)| self.denormalize(i, x)).collect()
    }

    fn normalize_vec_single(&self, i: usize, v: &[f64]) -> Vec<f64> {
        v.iter().map(|&x| self.normalize(i, x)).collect()
    }

    pub fn content_hash(&self) -> String {
        hash_hex(&[&serde_json::to_vec(self).expect("table serializes")])
    }
}

/// Identity of the data a network was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    /// Hash of the training data (manifest, clips and audio); equal across
    /// configurations trained on the same data.
    pub manifest: String,
    /// Hash of the training data plus this configuration's normalization
    /// table.
    pub dataset: String,
}

impl DatasetFingerprint {
    pub fn new(data: &Dataset, table: &NormalizationTable) -> Self {
        let m = data.content_hash();
        let dataset = hash_hex(&[m.as_bytes(), table.content_hash().as_bytes()]);
        DatasetFingerprint {
            manifest: m,
            dataset,
        }
    }
}

pub(crate) fn hash_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One training example: the audio window for a frame plus every target.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub mel_window: Arc<MelWindow>,
    pub controller_values: Vec<f64>,
    pub condition: Vec<f64>,
    pub key_flag: Vec<f64>,
    pub in_tangent: Vec<f64>,
    pub out_tangent: Vec<f64>,
    pub clip: usize,
    pub frame: usize,
}

/// Clips with their audio and precomputed mel windows.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub clips: Vec<RigAnimationClip>,
    pub audio: Vec<AudioClip>,
    pub mel: MelConfig,
    pub window_frames: usize,
    /// `windows[clip][frame]`.
    pub windows: Vec<Vec<Arc<MelWindow>>>,
}

impl Dataset {
    /// Validates clips, resamples audio to the mel rate and slices one window
    /// per animation frame.
    pub fn new(
        manifest: DatasetManifest,
        clips: Vec<RigAnimationClip>,
        audio: Vec<AudioClip>,
        mel: MelConfig,
        window_frames: usize,
    ) -> Result<Self> {
        manifest.validate()?;
        if clips.is_empty() {
            return Err(Error::Invalid("dataset has no clips".into()));
        }
        if clips.len() != audio.len() {
            return Err(Error::Invalid(format!(
                "{} clips but {} audio files",
                clips.len(),
                audio.len()
            )));
        }
        let mut windows = Vec::with_capacity(clips.len());
        let mut resampled = Vec::with_capacity(audio.len());
        for (clip, a) in clips.iter().zip(audio) {
            clip.validate(manifest.n_emotions())?;
            let expected = a.duration_seconds() * clip.fps;
            if (expected - clip.frame_count as f64).abs() > 1.0 {
                return Err(Error::Invalid(format!(
                    "clip {} has {} frames but its audio spans {:.2} frames",
                    clip.name, clip.frame_count, expected
                )));
            }
            let a = audio::resample(&a, mel.sample_rate)?;
            let spec = audio::melspectrogram(&a, &mel)?;
            let w = (0..clip.frame_count)
                .map(|f| audio::window_for_frame(&spec, f as i64, clip.fps, window_frames).map(Arc::new))
                .collect::<Result<Vec<_>>>()?;
            windows.push(w);
            resampled.push(a);
        }
        Ok(Dataset {
            manifest,
            clips,
            audio: resampled,
            mel,
            window_frames,
            windows,
        })
    }

    /// Loads a manifest and every clip/audio pair it lists (paths relative
    /// to the manifest's directory).
    pub fn load(path: impl AsRef<Path>, mel: MelConfig, window_frames: usize) -> Result<Self> {
        let path = path.as_ref();
        let manifest = DatasetManifest::load(path)?;
        let root = path.parent().unwrap_or(Path::new("."));
        let mut clips = Vec::new();
        let mut audio = Vec::new();
        for entry in &manifest.clips {
            let clip_path = root.join(&entry.clip);
            let text = std::fs::read_to_string(&clip_path).map_err(|e| Error::io(&clip_path, e))?;
            let mut clip: RigAnimationClip = serde_json::from_str(&text)?;
            if clip.emotion != entry.emotion {
                return Err(Error::Invalid(format!(
                    "{} says emotion {} but the manifest says {}",
                    clip_path.display(),
                    clip.emotion,
                    entry.emotion
                )));
            }
            clip.audio_ref = Some(entry.audio.display().to_string());
            clips.push(clip);
            audio.push(AudioClip::from_wav_file(root.join(&entry.audio))?);
        }
        Dataset::new(manifest, clips, audio, mel, window_frames)
    }

    pub fn total_frames(&self) -> usize {
        self.clips.iter().map(|c| c.frame_count).sum()
    }

    /// SHA-256 over the manifest, every clip and every (resampled) audio
    /// track, so datasets that only share file names still differ.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.manifest.content_hash().as_bytes());
        for (clip, audio) in self.clips.iter().zip(&self.audio) {
            h.update(hash_hex(&[&serde_json::to_vec(clip).expect("clip serializes")]).as_bytes());
            h.update(audio.sample_rate.to_le_bytes());
            for s in &audio.samples {
                h.update(s.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn controller<'a>(clip: &'a RigAnimationClip, name: &str) -> Result<&'a ControllerCurve> {
    clip.controller(name).ok_or_else(|| {
        Error::Config(format!("clip {} has no controller named {name}", clip.name))
    })
}

/// Drops controllers that are never keyed or never move. Order is kept.
pub fn prune_controllers(
    clips: &[RigAnimationClip],
    config: &FaceConfiguration,
) -> Result<FaceConfiguration> {
    if clips.is_empty() {
        return Err(Error::Invalid("cannot prune against an empty clip list".into()));
    }
    let mut kept = Vec::new();
    for name in &config.controller_names {
        let mut keyed = false;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for clip in clips {
            let curve = controller(clip, name)?;
            keyed |= curve.has_keys();
            for v in curve.sampled(clip.frame_count)? {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if keyed && hi > lo {
            kept.push(name.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::Config(format!(
            "every controller of configuration {} was pruned (none keyed and varying)",
            config.name
        )));
    }
    Ok(FaceConfiguration {
        controller_names: kept,
        ..config.clone()
    })
}

/// Min/max of each configuration controller across all clips.
pub fn fit_normalization(
    clips: &[RigAnimationClip],
    config: &FaceConfiguration,
) -> Result<NormalizationTable> {
    let mut ranges = Vec::with_capacity(config.controller_names.len());
    for name in &config.controller_names {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for clip in clips {
            for v in controller(clip, name)?.sampled(clip.frame_count)? {
                min = min.min(v);
                max = max.max(v);
            }
        }
        if !(max > min) {
            return Err(Error::Internal(format!(
                "controller {name} has zero range; it should have been pruned"
            )));
        }
        ranges.push(ControllerRange { min, max });
    }
    Ok(NormalizationTable {
        controllers: config.controller_names.clone(),
        ranges,
    })
}

pub fn one_hot(index: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[index] = 1.0;
    v
}

/// One sample per (clip, frame) for a pruned configuration.
pub fn build_samples(
    dataset: &Dataset,
    config: &FaceConfiguration,
    table: &NormalizationTable,
) -> Result<Vec<TrainingSample>> {
    if table.controllers != config.controller_names {
        return Err(Error::Config(format!(
            "normalization table does not match configuration {}",
            config.name
        )));
    }
    let n_ctrl = config.controller_names.len();
    let n_emotions = dataset.manifest.n_emotions();
    let mut samples = Vec::with_capacity(dataset.total_frames());
    for (ci, clip) in dataset.clips.iter().enumerate() {
        let n = clip.frame_count;
        let mut values = vec![vec![0.0; n_ctrl]; n];
        let mut flags = vec![vec![0.0; n_ctrl]; n];
        let mut in_t = vec![vec![0.0; n_ctrl]; n];
        let mut out_t = vec![vec![0.0; n_ctrl]; n];
        for (i, name) in config.controller_names.iter().enumerate() {
            let curve = controller(clip, name)?;
            let dense = table.normalize_vec_single(i, &curve.sampled(n)?);
            let keys: Vec<Key> = match &curve.keys {
                Some(k) if !k.is_empty() => k
                    .iter()
                    .map(|k| Key {
                        frame: k.frame,
                        value: table.normalize(i, k.value),
                        in_tangent: table.normalize_slope(i, k.in_tangent),
                        out_tangent: table.normalize_slope(i, k.out_tangent),
                    })
                    .collect(),
                _ => curves::extract_keys(&dense, FALLBACK_KEY_TOLERANCE)?,
            };
            for (f, v) in dense.iter().enumerate() {
                values[f][i] = *v;
            }
            for k in keys {
                let f = k.frame as usize;
                flags[f][i] = 1.0;
                in_t[f][i] = k.in_tangent;
                out_t[f][i] = k.out_tangent;
            }
        }
        let condition = one_hot(clip.emotion, n_emotions);
        for f in 0..n {
            samples.push(TrainingSample {
                mel_window: Arc::clone(&dataset.windows[ci][f]),
                controller_values: std::mem::take(&mut values[f]),
                condition: condition.clone(),
                key_flag: std::mem::take(&mut flags[f]),
                in_tangent: std::mem::take(&mut in_t[f]),
                out_tangent: std::mem::take(&mut out_t[f]),
                clip: ci,
                frame: f,
            });
        }
    }
    Ok(samples)
}

/// Parameters of the synthetic oracle.
///
/// Audio is a sum of band-limited noise bursts, one stream per frequency
/// band, each shaped by a loudness contour that holds levels and moves
/// between them along ramps that are linear in decibels. Every controller is
/// a fixed linear function of the [`loudness`] of its assigned band's
/// short-time energy, plus `+0.5 * weight` on the one controller designated
/// by the clip's emotion. Keys come from [`curves::extract_keys`] at 0.01.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_clips: usize,
    pub frames_per_clip: usize,
    pub fps: f64,
    pub sample_rate: u32,
    pub configurations: Vec<FaceConfiguration>,
    pub emotion_names: Vec<String>,
    /// Emotion labels assigned to clips, round-robin.
    pub emotions_used: Vec<usize>,
    /// Range of durations (seconds) a band holds one loudness level.
    pub hold_seconds: (f64, f64),
    /// Range of durations (seconds) of the smooth transition between levels.
    pub ramp_seconds: (f64, f64),
    /// Chance that a level is silence; 1 gives digital silence throughout.
    pub silence_probability: f64,
    /// Adds a constant, never-keyed controller to each configuration.
    pub add_unkeyed_controller: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 7,
            n_clips: 24,
            frames_per_clip: 200,
            fps: 24.0,
            sample_rate: 16_000,
            configurations: FaceConfiguration::default_set(),
            emotion_names: DEFAULT_EMOTIONS.iter().map(|s| s.to_string()).collect(),
            emotions_used: vec![0, 1, 3],
            hold_seconds: (0.3, 0.9),
            ramp_seconds: (0.3, 0.6),
            silence_probability: 0.4,
            add_unkeyed_controller: true,
        }
    }
}

/// Frequency bands (Hz) that drive the oracle controllers.
pub const ORACLE_BANDS: [(f64, f64); 4] = [
    (150.0, 1000.0),
    (1200.0, 2600.0),
    (2900.0, 4800.0),
    (5100.0, 7500.0),
];

pub const EMOTION_OFFSET: f64 = 0.5;

/// Fixed response of one oracle controller (indexed over all energy-driven
/// controllers in configuration order).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleController {
    pub band: usize,
    pub rest: f64,
    pub gain: f64,
}

impl OracleController {
    pub fn for_index(g: usize) -> Self {
        OracleController {
            band: g % ORACLE_BANDS.len(),
            rest: 0.1 * (g % 2) as f64,
            gain: 0.6 + 0.15 * (g % 3) as f64,
        }
    }

    /// Linear response to the band's loudness.
    pub fn value(&self, energy: f64) -> f64 {
        self.rest + self.gain * loudness(energy)
    }
}

/// Span of the loudness scale in decibels below full level.
pub const LOUDNESS_RANGE_DB: f64 = 30.0;

/// Maps a mean energy to `[0, 1]`: 0 at `LOUDNESS_RANGE_DB` below full
/// level (or quieter), 1 at full level, linear in decibels between.
pub fn loudness(energy: f64) -> f64 {
    if energy <= 0.0 {
        return 0.0;
    }
    (1.0 + 10.0 * energy.log10() / LOUDNESS_RANGE_DB).clamp(0.0, 1.0)
}

/// Envelope amplitude whose energy has the given loudness.
fn loudness_amplitude(level: f64) -> f64 {
    10f64.powf((level - 1.0) * LOUDNESS_RANGE_DB / 20.0)
}

impl SyntheticSpec {
    /// Energy-driven controller names in configuration order.
    pub fn driven_controllers(&self) -> Vec<String> {
        self.configurations
            .iter()
            .flat_map(|c| c.controller_names.iter().cloned())
            .collect()
    }

    /// Controller receiving the emotion offset for `emotion`.
    pub fn designated_controller(&self, emotion: usize) -> String {
        let all = self.driven_controllers();
        all[(all.len() - 1 - emotion % all.len()) % all.len()].clone()
    }

    /// Configurations as written to the dataset, including unkeyed extras.
    pub fn output_configurations(&self) -> Vec<FaceConfiguration> {
        self.configurations
            .iter()
            .map(|c| {
                let mut c = c.clone();
                if self.add_unkeyed_controller {
                    c.controller_names.push(unkeyed_name(&c.name));
                }
                c
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.n_clips == 0 || self.frames_per_clip < 2 {
            return Err(Error::Invalid("need at least one clip of at least 2 frames".into()));
        }
        if !(self.fps > 0.0) || self.sample_rate == 0 {
            return Err(Error::Invalid("fps and sample rate must be positive".into()));
        }
        if self.emotions_used.is_empty()
            || self.emotions_used.iter().any(|&e| e >= self.emotion_names.len())
        {
            return Err(Error::Invalid("emotions_used must index emotion_names".into()));
        }
        for (what, (lo, hi)) in [("hold_seconds", self.hold_seconds), ("ramp_seconds", self.ramp_seconds)] {
            if !(lo > 0.0 && lo < hi) {
                return Err(Error::Invalid(format!("{what} must be an increasing positive range")));
            }
        }
        if !(0.0..=1.0).contains(&self.silence_probability) {
            return Err(Error::Invalid("silence_probability must lie in [0, 1]".into()));
        }
        FaceConfiguration::validate_set(&self.configurations)
    }
}

fn unkeyed_name(config: &str) -> String {
    format!("{config}_unkeyed")
}

/// A generated clip with its audio and the per-band envelopes behind it.
#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub clip: RigAnimationClip,
    pub audio: AudioClip,
}

/// Short-time energy of each band at each animation frame: mean squared
/// envelope over the frame's duration.
fn frame_energies(envelopes: &[Vec<f64>], sample_rate: u32, fps: f64, frames: usize) -> Vec<Vec<f64>> {
    let per_frame = sample_rate as f64 / fps;
    envelopes
        .iter()
        .map(|env| {
            (0..frames)
                .map(|f| {
                    let c = f as f64 * per_frame;
                    let lo = (c - per_frame / 2.0).max(0.0) as usize;
                    let hi = ((c + per_frame / 2.0) as usize).min(env.len());
                    if hi <= lo {
                        return 0.0;
                    }
                    env[lo..hi].iter().map(|e| e * e).sum::<f64>() / (hi - lo) as f64
                })
                .collect()
        })
        .collect()
}

/// Fills `env` with an amplitude whose loudness holds levels for a while
/// and moves between them linearly in decibels; each level is the quiet
/// floor with `silence_probability`, and a probability of 1 leaves the clip
/// digitally silent.
fn level_envelope(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, env: &mut [f64]) {
    if spec.silence_probability >= 1.0 {
        return;
    }
    let rate = spec.sample_rate as f64;
    let draw = |rng: &mut ChaCha8Rng| -> f64 {
        if rng.random::<f64>() < spec.silence_probability {
            0.0
        } else {
            rng.random_range(0.2..1.0)
        }
    };
    let mut level = draw(rng);
    // Random phase so clips do not all start at a segment boundary.
    let mut t = -rng.random_range(0.0..spec.hold_seconds.1);
    let n = env.len();
    let sample = |t: f64| ((t * rate).max(0.0) as usize).min(n);
    while sample(t) < n {
        let hold = rng.random_range(spec.hold_seconds.0..spec.hold_seconds.1);
        env[sample(t)..sample(t + hold)].fill(loudness_amplitude(level));
        t += hold;
        let mut next = draw(rng);
        while (next - level).abs() < 0.25 {
            next = draw(rng);
        }
        let ramp = rng.random_range(spec.ramp_seconds.0..spec.ramp_seconds.1);
        for (i, e) in env.iter_mut().enumerate().take(sample(t + ramp)).skip(sample(t)) {
            let u = ((i as f64 / rate - t) / ramp).clamp(0.0, 1.0);
            *e = loudness_amplitude(level + (next - level) * u);
        }
        t += ramp;
        level = next;
    }
}

/// Gaussian white noise restricted to `band` (Hz) by zeroing FFT bins
/// outside it, scaled to unit RMS.
fn band_limited_noise(rng: &mut ChaCha8Rng, n: usize, sample_rate: u32, band: (f64, f64)) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let bin_hz = sample_rate as f64 / n as f64;
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * bin_hz;
        if f < band.0 || f > band.1 {
            *v = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let rms = (buf.iter().map(|c| c.re * c.re).sum::<f64>() / n as f64).sqrt();
    buf.iter().map(|c| c.re / rms).collect()
}

/// Generates `spec.n_clips` clips deterministically from `spec.seed`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<Vec<SyntheticClip>> {
    spec.validate()?;
    let driven = spec.driven_controllers();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_samples = (spec.frames_per_clip as f64 / spec.fps * spec.sample_rate as f64).round() as usize;
    let mut out = Vec::with_capacity(spec.n_clips);
    for ci in 0..spec.n_clips {
        let emotion = spec.emotions_used[ci % spec.emotions_used.len()];
        let mut envelopes = vec![vec![0.0; n_samples]; ORACLE_BANDS.len()];
        let mut signal = vec![0.0; n_samples];
        for (band, env) in envelopes.iter_mut().enumerate() {
            level_envelope(&mut rng, spec, env);
            let noise = band_limited_noise(&mut rng, n_samples, spec.sample_rate, ORACLE_BANDS[band]);
            for ((s, e), n) in signal.iter_mut().zip(env.iter()).zip(&noise) {
                *s += 0.15 * e * n;
            }
        }
        for s in signal.iter_mut() {
            *s = s.clamp(-1.0, 1.0);
        }
        let energies = frame_energies(&envelopes, spec.sample_rate, spec.fps, spec.frames_per_clip);
        let designated = spec.designated_controller(emotion);
        let mut controllers = Vec::new();
        let mut g = 0;
        for config in &spec.configurations {
            for name in &config.controller_names {
                let oracle = OracleController::for_index(g);
                let offset = if *name == designated { EMOTION_OFFSET } else { 0.0 };
                let dense: Vec<f64> = energies[oracle.band]
                    .iter()
                    .map(|&e| oracle.value(e) + offset)
                    .collect();
                let keys = curves::extract_keys(&dense, FALLBACK_KEY_TOLERANCE)?;
                controllers.push(ControllerCurve {
                    name: name.clone(),
                    dense: Some(dense),
                    keys: Some(keys),
                });
                g += 1;
            }
            if spec.add_unkeyed_controller {
                controllers.push(ControllerCurve {
                    name: unkeyed_name(&config.name),
                    dense: Some(vec![0.0; spec.frames_per_clip]),
                    keys: None,
                });
            }
        }
        debug_assert_eq!(g, driven.len());
        let name = format!("synth_{:03}", ci);
        out.push(SyntheticClip {
            clip: RigAnimationClip {
                name: name.clone(),
                fps: spec.fps,
                frame_count: spec.frames_per_clip,
                emotion,
                controllers,
                audio_ref: Some(format!("{name}.wav")),
            },
            audio: AudioClip::new(signal, spec.sample_rate)?,
        });
    }
    Ok(out)
}

/// Writes clips, WAV files and `manifest.json` into `dir`; returns the
/// manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, spec: &SyntheticSpec, clips: &[SyntheticClip]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(clips.len());
    for c in clips {
        let clip_file = PathBuf::from(format!("{}.json", c.clip.name));
        let audio_file = PathBuf::from(format!("{}.wav", c.clip.name));
        write_json(&dir.join(&clip_file), &c.clip)?;
        c.audio.write_wav(dir.join(&audio_file))?;
        entries.push(ManifestEntry {
            clip: clip_file,
            audio: audio_file,
            emotion: c.clip.emotion,
        });
    }
    let manifest = DatasetManifest {
        clips: entries,
        fps: spec.fps,
        emotion_names: spec.emotion_names.clone(),
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

/// Builds an in-memory [`Dataset`] straight from generated clips.
pub fn synthetic_dataset(spec: &SyntheticSpec, mel: MelConfig, window_frames: usize) -> Result<Dataset> {
    let clips = generate_synthetic_dataset(spec)?;
    let manifest = DatasetManifest {
        clips: clips
            .iter()
            .map(|c| ManifestEntry {
                clip: PathBuf::from(format!("{}.json", c.clip.name)),
                audio: PathBuf::from(format!("{}.wav", c.clip.name)),
                emotion: c.clip.emotion,
            })
            .collect(),
        fps: spec.fps,
        emotion_names: spec.emotion_names.clone(),
    };
    let (clips, audio): (Vec<_>, Vec<_>) = clips.into_iter().map(|c| (c.clip, c.audio)).unzip();
    Dataset::new(manifest, clips, audio, mel, window_frames)
}

/// Scans a directory for clip JSON files with a same-stem `.wav` and
/// produces a manifest referencing them. JSON files without a matching WAV
/// (manifests, plans, notes) are skipped.
pub fn extract_manifest(dir: impl AsRef<Path>, emotion_names: Vec<String>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.with_extension("wav").is_file())
        .collect();
    paths.sort();
    let mut fps = None;
    let mut clips = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let clip: RigAnimationClip = serde_json::from_str(&text)?;
        clip.validate(emotion_names.len())?;
        match fps {
            None => fps = Some(clip.fps),
            Some(f) if f != clip.fps => {
                return Err(Error::Invalid(format!(
                    "{} has fps {} but other clips use {f}",
                    p.display(),
                    clip.fps
                )))
            }
            _ => {}
        }
        let wav = p.with_extension("wav");
        let rel = |q: &Path| q.strip_prefix(dir).unwrap_or(q).to_path_buf();
        clips.push(ManifestEntry {
            clip: rel(&p),
            audio: rel(&wav),
            emotion: clip.emotion,
        });
    }
    let fps = fps.ok_or_else(|| Error::Invalid(format!("no clip files in {}", dir.display())))?;
    let manifest = DatasetManifest {
        clips,
        fps,
        emotion_names,
    };
    manifest.validate()?;
    Ok(manifest)
}
