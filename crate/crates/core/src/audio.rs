//! Audio ingestion and log-mel features.
//!
//! STFT framing: `ceil(n / hop)` frames; frame `t` covers samples
//! `[t*hop - (n_fft - hop)/2, +n_fft)` with zeros outside the signal, so each
//! frame is centred on its own hop block. Delaying the input by exactly one
//! hop therefore shifts every column by one.

use std::f64::consts::PI;
use std::io::{Cursor, Read, Seek};
use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Invalid("sample rate must be > 0".into()));
        }
        if samples.is_empty() {
            return Err(Error::Invalid("audio clip is empty".into()));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn from_wav_bytes(bytes: &[u8]) -> Result<Self> {
        read_wav(Cursor::new(bytes))
    }

    pub fn from_wav_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        read_wav(std::io::BufReader::new(file))
    }

    /// Writes 16-bit mono PCM.
    pub fn to_wav_bytes(&self) -> Result<Vec<u8>> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut writer = hound::WavWriter::new(&mut cursor, spec)?;
            for &s in &self.samples {
                writer.write_sample(quantize_i16(s))?;
            }
            writer.finalize()?;
        }
        Ok(cursor.into_inner())
    }

    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_wav_bytes()?).map_err(|e| Error::io(path, e))
    }
}

fn quantize_i16(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

fn read_wav<R: Read + Seek>(reader: R) -> Result<AudioClip> {
    let mut wav = hound::WavReader::new(reader)?;
    let spec = wav.spec();
    if spec.channels != 1 {
        return Err(Error::MonoRequired(spec.channels));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedAudio(format!(
            "expected 16-bit PCM, found {}-bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = wav
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    AudioClip::new(samples, spec.sample_rate)
}

/// Half-width of the resampling kernel in output-bandwidth zero crossings.
const SINC_ZERO_CROSSINGS: f64 = 24.0;

/// Band-limited resampling with a Hann-windowed sinc kernel. The output
/// holds `round(n * target / source)` samples.
pub fn resample(audio: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Invalid("target rate must be > 0".into()));
    }
    if audio.samples.is_empty() {
        return Err(Error::Invalid("cannot resample empty audio".into()));
    }
    if audio.sample_rate == target_rate {
        return Ok(audio.clone());
    }
    let ratio = target_rate as f64 / audio.sample_rate as f64;
    let n_out = ((audio.samples.len() as f64) * ratio).round().max(1.0) as usize;
    // Cutoff relative to the source Nyquist; slightly below the lower Nyquist.
    let cutoff = ratio.min(1.0) * 0.95;
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let src = &audio.samples;
    let samples = (0..n_out)
        .map(|i| {
            let x = i as f64 / ratio;
            let lo = ((x - half_width).ceil().max(0.0)) as usize;
            let hi = ((x + half_width).floor() as usize).min(src.len() - 1);
            let mut acc = 0.0;
            for (j, &s) in src.iter().enumerate().take(hi + 1).skip(lo) {
                let d = x - j as f64;
                let window = 0.5 + 0.5 * (PI * d / half_width).cos();
                acc += s * cutoff * sinc(cutoff * d) * window;
            }
            acc
        })
        .collect();
    AudioClip::new(samples, target_rate)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Log-mel front-end parameters. Stored in checkpoints so features match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_offset: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: 16_000,
            n_fft: 512,
            hop: 256,
            n_mels: 64,
            f_min: 55.0,
            f_max: 7600.0,
            log_offset: 1e-6,
        }
    }
}

impl MelConfig {
    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    /// Value of a cell with no energy.
    pub fn log_floor(&self) -> f64 {
        self.log_offset.ln()
    }

    /// Triangular filter edges, `n_mels + 2` frequencies in Hz, evenly
    /// spaced on the HTK mel scale.
    pub fn band_edges_hz(&self) -> Vec<f64> {
        let (lo, hi) = (hz_to_mel(self.f_min), hz_to_mel(self.f_max));
        (0..self.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (self.n_mels + 1) as f64))
            .collect()
    }

    /// Filterbank as `[n_mels][n_fft/2 + 1]` weights, peak 1 per band.
    pub fn filterbank(&self) -> Vec<Vec<f64>> {
        let edges = self.band_edges_hz();
        let n_bins = self.n_fft / 2 + 1;
        let bin_hz = self.sample_rate as f64 / self.n_fft as f64;
        (0..self.n_mels)
            .map(|m| {
                let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= left || f >= right {
                            0.0
                        } else if f <= centre {
                            (f - left) / (centre - left)
                        } else {
                            (right - f) / (right - centre)
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Log-mel spectrogram stored band-major: `data[bin * frames + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub data: Vec<f64>,
    pub mel_bins: usize,
    pub frames: usize,
    pub hop_seconds: f64,
    pub log_floor: f64,
}

impl MelSpectrogram {
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.data[bin * self.frames + frame]
    }

    /// Column `t` as a vector over mel bins.
    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.mel_bins).map(|b| self.get(b, t)).collect()
    }
}

/// Computes the log-mel spectrogram. Audio must already be at `cfg.sample_rate`.
pub fn melspectrogram(audio: &AudioClip, cfg: &MelConfig) -> Result<MelSpectrogram> {
    if audio.sample_rate != cfg.sample_rate {
        return Err(Error::SampleRate {
            expected: cfg.sample_rate,
            found: audio.sample_rate,
        });
    }
    if audio.samples.is_empty() {
        return Err(Error::Invalid("audio clip is empty".into()));
    }
    let n = audio.samples.len();
    let frames = n.div_ceil(cfg.hop);
    let n_bins = cfg.n_fft / 2 + 1;
    let window: Vec<f64> = (0..cfg.n_fft)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / cfg.n_fft as f64).cos())
        .collect();
    let bank = cfg.filterbank();
    // Sparse support of each triangle, to skip the zero weights.
    let support: Vec<(usize, usize)> = bank
        .iter()
        .map(|row| {
            let lo = row.iter().position(|&w| w > 0.0).unwrap_or(0);
            let hi = row.iter().rposition(|&w| w > 0.0).map_or(0, |i| i + 1);
            (lo, hi)
        })
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let offset = (cfg.n_fft - cfg.hop) / 2;
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut power = vec![0.0; n_bins];
    let mut data = vec![0.0; cfg.n_mels * frames];
    for t in 0..frames {
        let start = (t * cfg.hop) as i64 - offset as i64;
        for (i, slot) in buf.iter_mut().enumerate() {
            let idx = start + i as i64;
            let s = if idx >= 0 && (idx as usize) < n {
                audio.samples[idx as usize]
            } else {
                0.0
            };
            *slot = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for (m, row) in bank.iter().enumerate() {
            let (lo, hi) = support[m];
            let energy: f64 = (lo..hi).map(|k| row[k] * power[k]).sum();
            data[m * frames + t] = (energy + cfg.log_offset).ln();
        }
    }
    Ok(MelSpectrogram {
        data,
        mel_bins: cfg.n_mels,
        frames,
        hop_seconds: cfg.hop_seconds(),
        log_floor: cfg.log_floor(),
    })
}

/// Fixed-size mel slice centred on one animation frame, band-major
/// (`data[bin * window_frames + j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct MelWindow {
    pub data: Vec<f64>,
    pub mel_bins: usize,
    pub window_frames: usize,
    pub center_anim_frame: usize,
}

/// Mel column index nearest to animation frame `anim_frame`.
pub fn center_mel_index(anim_frame: usize, fps: f64, hop_seconds: f64) -> i64 {
    (anim_frame as f64 / fps / hop_seconds).round() as i64
}

/// Slices `window_frames` (odd) mel columns centred on `anim_frame`; columns
/// outside the spectrogram hold `log_floor`.
pub fn window_for_frame(
    spec: &MelSpectrogram,
    anim_frame: i64,
    fps: f64,
    window_frames: usize,
) -> Result<MelWindow> {
    if anim_frame < 0 {
        return Err(Error::Invalid(format!("animation frame {anim_frame} < 0")));
    }
    if window_frames % 2 == 0 {
        return Err(Error::Invalid(format!(
            "window length must be odd, got {window_frames}"
        )));
    }
    if !(fps > 0.0) {
        return Err(Error::Invalid(format!("fps must be > 0, got {fps}")));
    }
    let anim_frame = anim_frame as usize;
    let center = center_mel_index(anim_frame, fps, spec.hop_seconds);
    let half = (window_frames / 2) as i64;
    let mut data = vec![spec.log_floor; spec.mel_bins * window_frames];
    for j in 0..window_frames {
        let t = center - half + j as i64;
        if t < 0 || t >= spec.frames as i64 {
            continue;
        }
        for b in 0..spec.mel_bins {
            data[b * window_frames + j] = spec.get(b, t as usize);
        }
    }
    Ok(MelWindow {
        data,
        mel_bins: spec.mel_bins,
        window_frames,
        center_anim_frame: anim_frame,
    })
}
