//! Runs inference on one audio file under every emotion and reports how far
//! each controller moves relative to the first emotion.
//!
//! ```text
//! cargo run --example infer_emotions -- <checkpoint_dir> <audio.wav>
//! ```

use rigsync::audio::AudioClip;
use rigsync::inference::{infer, InferenceSettings, ModelSet};

fn main() -> rigsync::Result<()> {
    let mut args = std::env::args().skip(1);
    let (Some(ckpts), Some(wav)) = (args.next(), args.next()) else {
        eprintln!("usage: infer_emotions <checkpoint_dir> <audio.wav>");
        std::process::exit(2);
    };
    let models = ModelSet::load_dir(&ckpts)?;
    models.verify_fingerprints()?;
    let audio = AudioClip::from_wav_file(&wav)?;

    let n = models.n_emotions();
    let runs = (0..n)
        .map(|e| {
            let mut weights = vec![0.0; n];
            weights[e] = 1.0;
            infer(&audio, &models, &InferenceSettings::new(weights))
        })
        .collect::<rigsync::Result<Vec<_>>>()?;

    let base = &runs[0];
    println!("{} frames at {} fps", base.frame_count, base.fps);
    for (e, run) in runs.iter().enumerate().skip(1) {
        println!("{} vs {}:", models.emotion_names()[e], models.emotion_names()[0]);
        for cfg in &run.configurations {
            for ctrl in &cfg.controllers {
                let a = base.dense_curve(&cfg.name, &ctrl.name).unwrap_or_default();
                let b = run.dense_curve(&cfg.name, &ctrl.name).unwrap_or_default();
                let shift = b.iter().zip(a).map(|(x, y)| x - y).sum::<f64>() / a.len().max(1) as f64;
                println!("  {:>7}/{:<12} mean shift {shift:+.3}, {} keys", cfg.name, ctrl.name, ctrl.keys.len());
            }
        }
    }
    Ok(())
}
