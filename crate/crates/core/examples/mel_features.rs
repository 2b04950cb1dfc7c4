//! Computes the log-mel spectrogram of a WAV file (or a generated chirp) and
//! prints the dominant band over time plus one network input window.
//!
//! ```text
//! cargo run --example mel_features -- [audio.wav]
//! ```

use rigsync::audio::{melspectrogram, resample, window_for_frame, AudioClip, MelConfig};

fn main() -> rigsync::Result<()> {
    let cfg = MelConfig::default();
    let audio = match std::env::args().nth(1) {
        Some(path) => AudioClip::from_wav_file(path)?,
        None => {
            // Two-second linear chirp from 200 Hz to 6 kHz.
            let rate = 22_050;
            let n = 2 * rate as usize;
            let samples = (0..n)
                .map(|i| {
                    let t = i as f64 / rate as f64;
                    0.5 * (2.0 * std::f64::consts::PI * (200.0 * t + 1450.0 * t * t)).sin()
                })
                .collect();
            AudioClip::new(samples, rate)?
        }
    };
    println!("input: {:.2} s at {} Hz", audio.duration_seconds(), audio.sample_rate);
    let audio = resample(&audio, cfg.sample_rate)?;
    let spec = melspectrogram(&audio, &cfg)?;
    println!(
        "{} mel bins x {} frames, hop {:.1} ms, floor {:.2}",
        spec.mel_bins,
        spec.frames,
        1000.0 * spec.hop_seconds,
        spec.log_floor
    );

    let edges = cfg.band_edges_hz();
    for t in (0..spec.frames).step_by((spec.frames / 10).max(1)) {
        let column = spec.column(t);
        let (bin, level) = column
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (b, &v)| if v > best.1 { (b, v) } else { best });
        println!(
            "  t = {:5.2} s: loudest bin {bin:2} (centre {:6.0} Hz), log energy {level:6.2}",
            t as f64 * spec.hop_seconds,
            edges[bin + 1]
        );
    }

    let window = window_for_frame(&spec, 12, 24.0, 33)?;
    println!(
        "window for animation frame 12: {} bins x {} columns",
        window.mel_bins, window.window_frames
    );
    Ok(())
}
