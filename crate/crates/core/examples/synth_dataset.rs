//! Writes a synthetic dataset whose controller curves are a known function of
//! band energies in the audio, then reloads it through the manifest.
//!
//! ```text
//! cargo run --example synth_dataset -- [out_dir]
//! ```

use rigsync::audio::MelConfig;
use rigsync::dataset::{generate_synthetic_dataset, write_dataset, Dataset, SyntheticSpec};

fn main() -> rigsync::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic-data".into());
    let spec = SyntheticSpec {
        n_clips: 6,
        ..SyntheticSpec::default()
    };
    let clips = generate_synthetic_dataset(&spec)?;
    for c in &clips {
        let keyed = c.clip.controllers.iter().filter(|k| k.has_keys()).count();
        let keys: usize = c.clip.controllers.iter().filter_map(|k| k.keys.as_ref()).map(Vec::len).sum();
        println!(
            "{}: emotion {:<9} {} frames, {keyed} keyed controllers, {keys} keys",
            c.clip.name, spec.emotion_names[c.clip.emotion], c.clip.frame_count
        );
    }
    for e in &spec.emotions_used {
        println!(
            "emotion {} raises {}",
            spec.emotion_names[*e],
            spec.designated_controller(*e)
        );
    }

    let manifest = write_dataset(&out, &spec, &clips)?;
    let data = Dataset::load(&manifest, MelConfig::default(), 33)?;
    println!(
        "wrote {} and reloaded {} clips / {} frames",
        manifest.display(),
        data.clips.len(),
        data.total_frames()
    );
    Ok(())
}
