#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rigsync::audio::MelConfig;
use rigsync::dataset::{synthetic_dataset, SyntheticSpec};
use rigsync::trainer::{train, EpochBudget, EventLog, TrainPlan};

/// A few short oracle clips: enough to exercise every code path quickly.
pub fn tiny_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        n_clips: 4,
        frames_per_clip: 96,
        ..SyntheticSpec::default()
    }
}

pub fn tiny_plan(spec: &SyntheticSpec) -> TrainPlan {
    TrainPlan {
        configurations: spec.output_configurations(),
        epochs: EpochBudget::uniform(2),
        seed: spec.seed,
        ..TrainPlan::default()
    }
}

/// Trains the tiny setup into `dir` (nine checkpoint files).
pub fn train_tiny(seed: u64, dir: &Path) {
    let spec = tiny_spec(seed);
    let plan = tiny_plan(&spec);
    let data = synthetic_dataset(&spec, MelConfig::default(), plan.window_frames).unwrap();
    train(&plan, &data, Some(dir), &EventLog::silent()).unwrap();
}

/// Checkpoints shared by every test in one test binary.
pub fn shared_checkpoints() -> PathBuf {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        train_tiny(3, dir.path());
        dir
    })
    .path()
    .to_path_buf()
}

/// Mono 16-bit WAV of a sine.
pub fn sine_wav(hz: f64, seconds: f64, rate: u32) -> Vec<u8> {
    let n = (seconds * rate as f64) as usize;
    let samples = (0..n)
        .map(|i| 0.3 * (2.0 * std::f64::consts::PI * hz * i as f64 / rate as f64).sin())
        .collect();
    rigsync::audio::AudioClip::new(samples, rate).unwrap().to_wav_bytes().unwrap()
}
