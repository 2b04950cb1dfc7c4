//! Reduces a dense curve to Hermite keys, bakes it back, smooths it and
//! snaps keys to a coarser frame grid.
//!
//! ```text
//! cargo run --example curve_keys
//! ```

use rigsync::curves::{extract_keys, gaussian_smooth, rate_filter, reconstruct_dense};

fn main() -> rigsync::Result<()> {
    let frames = 120;
    let dense: Vec<f64> = (0..frames)
        .map(|f| {
            let t = f as f64 / 24.0;
            0.5 + 0.3 * (2.0 * t).sin() + 0.1 * (7.0 * t).cos()
        })
        .collect();

    for tolerance in [0.05, 0.01, 0.001] {
        let keys = extract_keys(&dense, tolerance)?;
        let baked = reconstruct_dense(&keys, frames)?;
        let worst = dense.iter().zip(&baked).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("tolerance {tolerance:<6} -> {:>3} keys, max error {worst:.5}", keys.len());
    }

    let keys = extract_keys(&dense, 0.01)?;
    for rate in [2, 4] {
        let snapped = rate_filter(&keys, rate)?;
        let frames_kept: Vec<u32> = snapped.iter().map(|k| k.frame).collect();
        println!("rate {rate}: {} keys at {frames_kept:?}", snapped.len());
    }

    let smoothed = gaussian_smooth(&dense, 2.0)?;
    let roughness = |v: &[f64]| v.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).abs()).sum::<f64>();
    println!(
        "gaussian smoothing (sigma 2): roughness {:.4} -> {:.4}",
        roughness(&dense),
        roughness(&smoothed)
    );
    Ok(())
}
