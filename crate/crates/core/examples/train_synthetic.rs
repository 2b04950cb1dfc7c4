//! Trains all three configurations on the synthetic oracle dataset, then
//! scores the models on freshly generated clips the networks never saw.
//!
//! ```text
//! cargo run --example train_synthetic -- [epochs] [checkpoint_dir]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use rigsync::audio::MelConfig;
use rigsync::dataset::{generate_synthetic_dataset, synthetic_dataset, SyntheticSpec};
use rigsync::inference::ModelSet;
use rigsync::metrics::evaluate;
use rigsync::neural::NetworkTriple;
use rigsync::trainer::{train, EpochBudget, EventLog, TrainPlan};

fn main() -> rigsync::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|a| a.parse().expect("epochs must be an integer")).unwrap_or(30);
    let out_dir = args.next().map(PathBuf::from);

    let spec = SyntheticSpec::default();
    let plan = TrainPlan {
        configurations: spec.output_configurations(),
        epochs: EpochBudget::uniform(epochs),
        seed: 1,
        ..TrainPlan::default()
    };
    let data = synthetic_dataset(&spec, MelConfig::default(), plan.window_frames)?;
    println!("training on {} frames from {} clips", data.total_frames(), data.clips.len());

    let started = Instant::now();
    let log = EventLog::new(|e| {
        if e.name != "epoch" || e.epoch % 10 == 0 {
            println!("{e}");
        }
    });
    let (trained, report) = train(&plan, &data, out_dir.as_deref(), &log)?;
    println!("trained {} networks in {:.1} s", report.networks.len(), started.elapsed().as_secs_f64());

    let triples = trained
        .into_iter()
        .map(|t| NetworkTriple::from_checkpoints(t.cvae, t.audionet, t.keynet, false))
        .collect::<rigsync::Result<Vec<_>>>()?;
    let models = ModelSet::new(triples)?;

    let held_out = SyntheticSpec {
        seed: spec.seed + 1000,
        n_clips: 6,
        ..spec
    };
    let clips: Vec<_> = generate_synthetic_dataset(&held_out)?
        .into_iter()
        .map(|c| (c.clip, c.audio))
        .collect();
    let eval = evaluate(&models, &clips, 1)?;
    println!(
        "held-out: dense MAE {:.4} (normalized), key precision {:.3} recall {:.3} F1 {:.3}",
        eval.dense_mae,
        eval.keys.precision(),
        eval.keys.recall(),
        eval.keys.f1()
    );
    Ok(())
}
