//! Command-line front end: `extract`, `synth`, `train`, `infer`, `serve`.
//!
//! Exit codes: 0 on success, 2 for invalid input (including unknown flags),
//! 1 for internal failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::audio::{AudioClip, MelConfig};
use crate::dataset::{extract_manifest, generate_synthetic_dataset, write_dataset, Dataset, SyntheticSpec, DEFAULT_EMOTIONS};
use crate::error::{Error, Result};
use crate::inference::{infer, InferenceSettings, ModelSet};
use crate::service::{self, ServiceConfig};
use crate::trainer::{self, EventLog, TrainPlan};

#[derive(Debug, Parser)]
#[command(name = "rigsync", version, about = "Audio-driven facial rig keyframe generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dataset manifest from a directory of clip JSON + WAV pairs.
    Extract {
        /// Directory holding `<clip>.json` and `<clip>.wav` files.
        #[arg(long)]
        scene_json: PathBuf,
        /// Manifest file to write.
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated emotion names (defaults to the six built-in ones).
        #[arg(long, value_delimiter = ',')]
        emotions: Option<Vec<String>>,
    },
    /// Write a synthetic oracle dataset plus a matching training plan.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Number of clips (defaults to the built-in oracle size).
        #[arg(long)]
        clips: Option<usize>,
        /// Frames per clip.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train all network triples described by a plan.
    Train {
        #[arg(long)]
        plan: PathBuf,
        /// Dataset manifest.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate keyed curves for one audio file.
    Infer {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        ckpts: PathBuf,
        /// Comma-separated emotion weights in [0, 1], one per emotion.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        weights: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Key frame stride: 1, 2 or 4.
        #[arg(long, default_value_t = 1)]
        rate: u32,
        /// Gaussian-smooth the upper-face controllers.
        #[arg(long)]
        smooth_upper: bool,
        #[arg(long, default_value_t = 2.0)]
        smooth_sigma: f64,
        /// Gaussian sigma (frames) for predicted tangents; 0 disables.
        #[arg(long, default_value_t = 0.0)]
        tangent_sigma: f64,
        /// Also write the plain-text one-channel-per-line export here.
        #[arg(long)]
        text: Option<PathBuf>,
    },
    /// Serve the HTTP inference API.
    Serve {
        #[arg(long)]
        ckpts: PathBuf,
        /// Listening port; the `PORT` environment variable overrides it.
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Browser origin allowed to call the API (CORS).
        #[arg(long)]
        allow_origin: Option<String>,
        /// Longest accepted audio upload in seconds.
        #[arg(long, default_value_t = service::DEFAULT_MAX_AUDIO_SECONDS)]
        max_audio_seconds: f64,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        2
    } else {
        1
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Extract {
            scene_json,
            manifest,
            emotions,
        } => {
            let names = emotions.unwrap_or_else(|| DEFAULT_EMOTIONS.iter().map(|s| s.to_string()).collect());
            let m = extract_manifest(&scene_json, names)?;
            let m = relocate_manifest(m, &scene_json, &manifest);
            m.save(&manifest)?;
            println!("wrote {} ({} clips)", manifest.display(), m.clips.len());
            Ok(())
        }
        Command::Synth {
            seed,
            out,
            clips,
            frames,
        } => {
            let defaults = SyntheticSpec::default();
            let spec = SyntheticSpec {
                seed,
                n_clips: clips.unwrap_or(defaults.n_clips),
                frames_per_clip: frames.unwrap_or(defaults.frames_per_clip),
                ..defaults
            };
            let generated = generate_synthetic_dataset(&spec)?;
            let manifest = write_dataset(&out, &spec, &generated)?;
            let plan = TrainPlan {
                configurations: spec.output_configurations(),
                seed,
                ..TrainPlan::default()
            };
            let plan_path = out.join("plan.json");
            std::fs::write(&plan_path, serde_json::to_string_pretty(&plan)?).map_err(|e| Error::Io {
                path: plan_path.clone(),
                source: e,
            })?;
            println!(
                "wrote {} clips, {} and {}",
                generated.len(),
                manifest.display(),
                plan_path.display()
            );
            Ok(())
        }
        Command::Train { plan, data, out } => {
            let plan = TrainPlan::load(&plan)?;
            let dataset = Dataset::load(&data, MelConfig::default(), plan.window_frames)?;
            let log = EventLog::stdout();
            let (_, report) = trainer::train(&plan, &dataset, Some(&out), &log)?;
            println!("trained {} networks into {}", report.networks.len(), out.display());
            Ok(())
        }
        Command::Infer {
            audio,
            ckpts,
            weights,
            out,
            threshold,
            rate,
            smooth_upper,
            smooth_sigma,
            tangent_sigma,
            text,
        } => {
            let models = ModelSet::load_dir(&ckpts)?;
            let clip = AudioClip::from_wav_file(&audio)?;
            let settings = InferenceSettings {
                emotion_weights: weights,
                key_threshold: threshold,
                smooth_upper,
                smooth_sigma,
                rate,
                tangent_filter_sigma: tangent_sigma,
            };
            let result = infer(&clip, &models, &settings)?;
            result.save(&out)?;
            if let Some(path) = text {
                std::fs::write(&path, result.to_channel_text()).map_err(|e| Error::Io { path, source: e })?;
            }
            println!("wrote {} ({} frames)", out.display(), result.frame_count);
            Ok(())
        }
        Command::Serve {
            ckpts,
            port,
            allow_origin,
            max_audio_seconds,
        } => {
            let port = service::resolve_port(std::env::var("PORT").ok().as_deref(), port)?;
            service::run(
                &ckpts,
                port,
                ServiceConfig {
                    max_audio_seconds,
                    allow_origin,
                },
            )
        }
    }
}

/// Rewrites clip paths so they resolve relative to the manifest's own
/// directory.
fn relocate_manifest(
    mut m: crate::dataset::DatasetManifest,
    scene_dir: &Path,
    manifest: &Path,
) -> crate::dataset::DatasetManifest {
    let manifest_dir = manifest.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let same = std::fs::canonicalize(scene_dir).ok() == std::fs::canonicalize(manifest_dir).ok();
    if same {
        return m;
    }
    let base = std::fs::canonicalize(scene_dir).unwrap_or_else(|_| scene_dir.to_path_buf());
    for e in m.clips.iter_mut() {
        e.clip = base.join(&e.clip);
        e.audio = base.join(&e.audio);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_string_parses_to_one_hot() {
        let cli = Cli::try_parse_from([
            "rigsync", "infer", "--audio", "a.wav", "--ckpts", "c", "--weights", "0,0,1,0,0,0", "--out", "k.json",
        ])
        .unwrap();
        let Command::Infer { weights, rate, threshold, .. } = cli.command else {
            panic!("wrong subcommand")
        };
        assert_eq!(weights, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(weights.iter().position(|&w| w == 1.0), Some(2));
        assert_eq!((rate, threshold), (1, 0.5));
    }

    #[test]
    fn unknown_flag_exits_with_usage_error() {
        assert_eq!(run(["rigsync", "train", "--bogus"]), 2);
        assert_eq!(run(["rigsync"]), 2);
    }

    #[test]
    fn validation_errors_map_to_two() {
        assert_eq!(exit_code(&Error::Invalid("x".into())), 2);
        assert_eq!(exit_code(&Error::Internal("x".into())), 1);
    }
}
