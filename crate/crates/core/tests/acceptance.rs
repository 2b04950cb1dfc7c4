//! End-to-end acceptance run: trains the three default configurations on
//! the synthetic oracle dataset and checks each acceptance criterion,
//! printing one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the report.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rigsync::audio::{melspectrogram, window_for_frame, AudioClip, MelConfig};
use rigsync::curves::{extract_keys, finite_difference_slope, gaussian_smooth, rate_filter, reconstruct_dense, Key};
use rigsync::dataset::{generate_synthetic_dataset, synthetic_dataset, SyntheticClip, SyntheticSpec};
use rigsync::inference::{decode_keys, infer, InferenceResult, InferenceSettings, ModelSet};
use rigsync::metrics::evaluate;
use rigsync::neural::{
    audionet_loss, gradient_check, keynet_loss, AudioArch, ConvRecurrentNet, Cvae, CvaeArch, FnObjective, KeyTargets,
    NetKind, NetworkTriple,
};
use rigsync::service::{serve, ServiceConfig, SessionState, INFER_RESPONSE_SCHEMA};
use rigsync::trainer::{train, EpochBudget, EventLog, TrainPlan, TrainReport};

const RUNTIME_BUDGET_SECONDS: f64 = 30.0 * 60.0;
const MAX_DENSE_MAE: f64 = 0.15;
const MIN_KEY_F1: f64 = 0.6;
const MIN_EMOTION_SHIFT: f64 = 0.2;
const MAX_GRADIENT_ERROR: f64 = 1e-4;
const HELD_OUT_CLIPS: usize = 6;

struct Outcome {
    criterion: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(criterion: u32, title: &'static str, result: Result<String, String>) -> Outcome {
    let (pass, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Outcome {
        criterion,
        title,
        pass,
        detail,
    }
}

fn check(cond: bool, detail: String) -> Result<String, String> {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn acceptance_plan(spec: &SyntheticSpec, epochs: usize) -> TrainPlan {
    TrainPlan {
        configurations: spec.output_configurations(),
        epochs: EpochBudget::uniform(epochs),
        seed: 1,
        deterministic: true,
        ..TrainPlan::default()
    }
}

fn triples_from(trained: Vec<rigsync::trainer::ConfigurationCheckpoints>) -> ModelSet {
    let triples = trained
        .into_iter()
        .map(|t| NetworkTriple::from_checkpoints(t.cvae, t.audionet, t.keynet, false).unwrap())
        .collect();
    ModelSet::new(triples).unwrap()
}

fn one_hot(i: usize, n: usize) -> Vec<f64> {
    (0..n).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
}

// ---------------------------------------------------------------------------
// 1. Structural fidelity

fn structural(report: &TrainReport, ckpt_dir: &Path, spec: &SyntheticSpec, frames: usize, seconds: f64) -> Result<String, String> {
    let files = std::fs::read_dir(ckpt_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "ckpt"))
        .count();
    let mut problems = Vec::new();
    if files != 9 || report.networks.len() != 9 {
        problems.push(format!("{files} checkpoint files, {} networks", report.networks.len()));
    }
    let events = &report.events;
    for cfg in spec.output_configurations() {
        let pos = |name: &str, net: NetKind| events.iter().position(|e| e.config == cfg.name && e.name == name && e.net == net);
        match (pos("finalized", NetKind::Cvae), pos("start", NetKind::AudioNet)) {
            (Some(f), Some(s)) if f < s => {}
            other => problems.push(format!("{}: cvae finalized / audionet start at {other:?}", cfg.name)),
        }
        if pos("finalized", NetKind::KeyNet).is_none() {
            problems.push(format!("{}: keynet never finalized", cfg.name));
        }
        if cfg.controller_names.len() < 3 {
            problems.push(format!("{} has fewer than 3 controllers", cfg.name));
        }
    }
    if frames < 2000 {
        problems.push(format!("only {frames} training frames"));
    }
    if spec.emotions_used.len() < 2 || spec.emotion_names.len() != 6 {
        problems.push("emotion setup below minimum".into());
    }
    if seconds > RUNTIME_BUDGET_SECONDS {
        problems.push(format!("training took {seconds:.0} s"));
    }
    let detail = format!(
        "{files} checkpoints, cvae→audionet ordering holds for {} configurations, {frames} frames, {:.0} s of {:.0} s budget",
        spec.configurations.len(),
        seconds,
        RUNTIME_BUDGET_SECONDS
    );
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; problems: {}", problems.join("; ")))
    }
}

// ---------------------------------------------------------------------------
// 2. Oracle end-to-end

fn oracle_end_to_end(models: &ModelSet, held_out: &[SyntheticClip]) -> Result<String, String> {
    let pairs: Vec<_> = held_out.iter().map(|c| (c.clip.clone(), c.audio.clone())).collect();
    let e = evaluate(models, &pairs, 1).map_err(|e| e.to_string())?;
    check(
        e.dense_mae <= MAX_DENSE_MAE && e.keys.f1() >= MIN_KEY_F1,
        format!(
            "dense MAE {:.4} (≤ {MAX_DENSE_MAE}), key F1 {:.3} (≥ {MIN_KEY_F1}; precision {:.3}, recall {:.3}) over {} held-out clips",
            e.dense_mae,
            e.keys.f1(),
            e.keys.precision(),
            e.keys.recall(),
            held_out.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Emotion conditioning

fn controller_mean(result: &InferenceResult, controller: &str) -> f64 {
    let cfg = result
        .configurations
        .iter()
        .find(|c| c.controllers.iter().any(|k| k.name == controller))
        .expect("controller exists");
    let dense = result.dense_curve(&cfg.name, controller).unwrap();
    dense.iter().sum::<f64>() / dense.len() as f64
}

fn emotion_conditioning(models: &ModelSet, spec: &SyntheticSpec, held_out: &[SyntheticClip]) -> Result<String, String> {
    let n = models.n_emotions();
    let used = &spec.emotions_used;
    let mut shifts = Vec::new();
    for (i, &e) in used.iter().enumerate() {
        let other = used[(i + 1) % used.len()];
        let designated = spec.designated_controller(e);
        let mut diff = 0.0;
        for clip in held_out {
            let on = infer(&clip.audio, models, &InferenceSettings::new(one_hot(e, n))).map_err(|e| e.to_string())?;
            let off = infer(&clip.audio, models, &InferenceSettings::new(one_hot(other, n))).map_err(|e| e.to_string())?;
            diff += controller_mean(&on, &designated) - controller_mean(&off, &designated);
        }
        shifts.push((e, other, designated, diff / held_out.len() as f64));
    }
    let detail = shifts
        .iter()
        .map(|(e, o, d, s)| format!("{d}: one-hot {e} vs {o} → {s:+.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    // The oracle adds +0.5 to the designated controller, so the shift must be positive.
    check(shifts.iter().all(|s| s.3 >= MIN_EMOTION_SHIFT), format!("{detail} (need ≥ +{MIN_EMOTION_SHIFT})"))
}

// ---------------------------------------------------------------------------
// 4. Gradient checks

fn gradient_checks() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let cvae = Cvae::new(CvaeArch {
        n_controllers: 4,
        n_conditions: 6,
        z_dim: 3,
        hidden: vec![7, 5],
    })
    .unwrap();
    let mut p = cvae.init_params(1);
    p.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    let x = [0.3, -0.5, 0.1, 0.8];
    let c = [0.0, 1.0, 0.0, 0.0, 0.25, 0.0];
    let eps = cvae.draw_eps(&mut rng);
    let sampled = FnObjective::new(cvae.n_params(), |p: &[f64], g: Option<&mut [f64]>| {
        cvae.loss_grad(p, &x, &c, Some(&eps), 0.05, g)
    });
    let mean = FnObjective::new(cvae.n_params(), |p: &[f64], g: Option<&mut [f64]>| cvae.loss_grad(p, &x, &c, None, 0.05, g));
    let cvae_err = gradient_check(&sampled, &p, usize::MAX, 1)
        .unwrap()
        .max(gradient_check(&mean, &p, usize::MAX, 2).unwrap());

    let net = ConvRecurrentNet::new(AudioArch {
        conv_channels: [3, 3, 2],
        gru_hidden: 4,
        dense_hidden: 5,
        ..AudioArch::new(5, 9, 6)
    })
    .unwrap();
    let p = net.init_params(3);
    let window = rigsync::audio::MelWindow {
        data: (0..5 * 9).map(|_| rng.random_range(-2.0..2.0)).collect(),
        mel_bins: 5,
        window_frames: 9,
        center_anim_frame: 0,
    };
    let z: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let audio_obj = FnObjective::new(net.n_params(), |p: &[f64], g: Option<&mut [f64]>| {
        net.loss_grad(p, &window, |o| audionet_loss(o, &z), g)
    });
    let audio_err = gradient_check(&audio_obj, &p, usize::MAX, 3).unwrap();

    let targets = KeyTargets {
        key_flag: &[1.0, 0.0],
        in_tangent: &[0.4, 0.0],
        out_tangent: &[-0.1, 0.0],
        pos_weight: &[4.0, 2.5],
        tangent_weight: 1.0,
    };
    let key_obj = FnObjective::new(net.n_params(), |p: &[f64], g: Option<&mut [f64]>| {
        net.loss_grad(p, &window, |o| keynet_loss(o, targets), g)
    });
    let key_err = gradient_check(&key_obj, &p, usize::MAX, 4).unwrap();

    check(
        cvae_err.max(audio_err).max(key_err) <= MAX_GRADIENT_ERROR,
        format!(
            "max relative error: C-VAE {cvae_err:.2e}, AudioNet {audio_err:.2e}, KeyNet {key_err:.2e} (≤ {MAX_GRADIENT_ERROR:.0e}, every parameter checked)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Curve properties

/// Reference decoder written directly from the rule: threshold, keep a
/// marked frame unless an adjacent marked frame beats it (ties favour the
/// earlier frame), force both endpoints.
fn reference_decode(p: &[f64], tangents: &[(f64, f64)], threshold: f64, values: &[f64]) -> Vec<Key> {
    let n = p.len();
    let mut keep = vec![false; n];
    for i in 0..n {
        if p[i] < threshold {
            continue;
        }
        let mut beaten = false;
        for j in [i.wrapping_sub(1), i + 1] {
            if j < n && p[j] >= threshold {
                let j_wins = if p[j] == p[i] { j < i } else { p[j] > p[i] };
                beaten |= j_wins;
            }
        }
        keep[i] = !beaten;
    }
    let mut keys = Vec::new();
    for i in 0..n {
        if keep[i] {
            keys.push(Key::new(i as u32, values[i], tangents[i].0, tangents[i].1));
        } else if i == 0 || i == n - 1 {
            let s = finite_difference_slope(values, i);
            keys.push(Key::new(i as u32, values[i], s, s));
        }
    }
    keys
}

fn curve_properties(rate4_outputs: &[InferenceResult]) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut problems = Vec::new();

    let mut worst_ratio = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(20..300);
        let tol = rng.random_range(0.002..0.05);
        let parts: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| (rng.random_range(0.1..1.0), rng.random_range(0.005..0.08), rng.random_range(0.0..6.3)))
            .collect();
        let dense: Vec<f64> = (0..n)
            .map(|f| parts.iter().map(|(a, w, ph)| a * (w * f as f64 + ph).sin()).sum())
            .collect();
        let keys = extract_keys(&dense, tol).unwrap();
        let back = reconstruct_dense(&keys, n).unwrap();
        let err = dense.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_ratio = worst_ratio.max(err / tol);
    }
    if worst_ratio > 1.0 {
        problems.push(format!("round-trip error reached {worst_ratio:.3}× tolerance"));
    }

    let mut worst_const = 0.0_f64;
    for _ in 0..100 {
        let c = rng.random_range(-10.0..10.0);
        let n = rng.random_range(1..200);
        let sigma = rng.random_range(0.2..30.0);
        let out = gaussian_smooth(&vec![c; n], sigma).unwrap();
        worst_const = out.iter().map(|v| (v - c).abs()).fold(worst_const, f64::max);
    }
    if worst_const > 1e-9 {
        problems.push(format!("constant drifted by {worst_const:.2e} under smoothing"));
    }

    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        // Coarse probabilities so ties and threshold hits are common.
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0..=10) as f64 / 10.0).collect();
        let t: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let threshold = rng.random_range(1..=9) as f64 / 10.0;
        if decode_keys(&p, &t, threshold, &v) != reference_decode(&p, &t, threshold, &v) {
            mismatches += 1;
        }
    }
    if mismatches > 0 {
        problems.push(format!("decode_keys disagreed with the reference on {mismatches} of 1000 traces"));
    }

    let on_grid = |keys: &[Key], rate: u32, last: u32| keys.iter().all(|k| k.frame % rate == 0 || k.frame == last);
    let mut grid_violations = 0;
    let mut checked = 0;
    for _ in 0..500 {
        let n = rng.random_range(2..120u32);
        let mut frames: Vec<u32> = (1..n - 1).filter(|_| rng.random_bool(0.3)).collect();
        frames.insert(0, 0);
        frames.push(n - 1);
        let keys: Vec<Key> = frames.iter().map(|&f| Key::new(f, rng.random_range(-1.0..1.0), 0.0, 0.0)).collect();
        for rate in [1, 2, 4] {
            let out = rate_filter(&keys, rate).unwrap();
            checked += 1;
            let last_kept = out.last().map(|k| k.frame) == Some(n - 1);
            if !on_grid(&out, rate, n - 1) || !last_kept || out.windows(2).any(|w| w[0].frame >= w[1].frame) {
                grid_violations += 1;
            }
        }
    }
    for r in rate4_outputs {
        let last = (r.frame_count - 1) as u32;
        for cfg in &r.configurations {
            for ctrl in &cfg.controllers {
                checked += 1;
                if !on_grid(&ctrl.keys, 4, last) {
                    grid_violations += 1;
                }
            }
        }
    }
    if grid_violations > 0 {
        problems.push(format!("{grid_violations} rate_filter outputs left the grid"));
    }

    let detail = format!(
        "round-trip worst {:.3}× tolerance on 100 curves; smoothing constant drift {worst_const:.1e}; decode_keys matched reference on 1000 traces with {mismatches} mismatches; {checked} rate-filtered key sets checked",
        worst_ratio
    );
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; problems: {}", problems.join("; ")))
    }
}

// ---------------------------------------------------------------------------
// 6. Determinism

fn determinism(models: &ModelSet, held_out: &[SyntheticClip]) -> Result<String, String> {
    let spec = SyntheticSpec {
        seed: 21,
        n_clips: 4,
        frames_per_clip: 96,
        ..SyntheticSpec::default()
    };
    let plan = TrainPlan {
        epochs: EpochBudget::uniform(3),
        ..acceptance_plan(&spec, 3)
    };
    let run = || {
        let data = synthetic_dataset(&spec, MelConfig::default(), plan.window_frames).unwrap();
        let (trained, report) = train(&plan, &data, None, &EventLog::silent()).unwrap();
        let bytes: Vec<Vec<u8>> = trained.iter().flat_map(|t| t.iter().map(|c| c.to_bytes().unwrap())).collect();
        let models = triples_from(trained);
        let out = infer(&held_out[0].audio, &models, &InferenceSettings::new(one_hot(1, 6)))
            .unwrap()
            .to_json()
            .unwrap();
        (report, bytes, out)
    };
    let (ra, ba, oa) = run();
    let (rb, bb, ob) = run();
    let same_losses = ra.networks.len() == rb.networks.len()
        && ra.networks.iter().zip(&rb.networks).all(|(a, b)| {
            a.train_loss.iter().map(|v| v.to_bits()).eq(b.train_loss.iter().map(|v| v.to_bits()))
                && a.validation_loss.iter().map(|v| v.to_bits()).eq(b.validation_loss.iter().map(|v| v.to_bits()))
        });
    let same_ckpts = ba == bb;
    let same_small_infer = oa == ob;
    let settings = InferenceSettings::new(one_hot(3, 6));
    let first = infer(&held_out[1].audio, models, &settings).unwrap().to_json().unwrap();
    let second = infer(&held_out[1].audio, models, &settings).unwrap().to_json().unwrap();
    let same_full_infer = first == second;
    check(
        same_losses && same_ckpts && same_small_infer && same_full_infer,
        format!(
            "two seeded runs: identical loss traces {same_losses}, identical checkpoint bytes {same_ckpts}, identical inference bytes {same_small_infer}; repeated inference on trained models identical {same_full_infer}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Mel checks

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Band whose triangular response at `hz` is largest, from the HTK mel
/// scale with `n + 2` evenly spaced edges between `lo` and `hi`.
fn analytic_mel_bin(hz: f64, lo: f64, hi: f64, n: usize) -> usize {
    let (ml, mh) = (hz_to_mel(lo), hz_to_mel(hi));
    let edge = |i: usize| mel_to_hz(ml + (mh - ml) * i as f64 / (n + 1) as f64);
    (0..n)
        .map(|b| {
            let (l, c, r) = (edge(b), edge(b + 1), edge(b + 2));
            let w = if hz <= l || hz >= r {
                0.0
            } else if hz <= c {
                (hz - l) / (c - l)
            } else {
                (r - hz) / (r - c)
            };
            (b, w)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

fn mel_checks() -> Result<String, String> {
    let cfg = MelConfig::default();
    let mut problems = Vec::new();

    let silence = AudioClip::new(vec![0.0; 16_000], 16_000).unwrap();
    let spec = melspectrogram(&silence, &cfg).unwrap();
    let floor = cfg.log_offset.ln();
    let worst = spec.data.iter().map(|v| (v - floor).abs()).fold(0.0, f64::max);
    if worst > 1e-12 {
        problems.push(format!("silence deviates from the floor by {worst:.2e}"));
    }

    let sine: Vec<f64> = (0..16_000).map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin()).collect();
    let spec = melspectrogram(&AudioClip::new(sine, 16_000).unwrap(), &cfg).unwrap();
    let expected = analytic_mel_bin(440.0, cfg.f_min, cfg.f_max, cfg.n_mels);
    let mid = spec.frames / 2;
    let col = spec.column(mid);
    let found = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
    if found != expected {
        problems.push(format!("440 Hz peaks in bin {found}, expected {expected}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let noise: Vec<f64> = (0..12_000).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut delayed = vec![0.0; cfg.hop];
    delayed.extend_from_slice(&noise);
    let a = melspectrogram(&AudioClip::new(noise, 16_000).unwrap(), &cfg).unwrap();
    let b = melspectrogram(&AudioClip::new(delayed, 16_000).unwrap(), &cfg).unwrap();
    let mut shift_err = 0.0_f64;
    for t in 0..a.frames {
        for m in 0..a.mel_bins {
            shift_err = shift_err.max((a.get(m, t) - b.get(m, t + 1)).abs());
        }
    }
    // The same shift seen through per-frame windows: one column later.
    let (wa, wb) = (window_for_frame(&a, 10, 24.0, 33).unwrap(), window_for_frame(&b, 10, 24.0, 33).unwrap());
    for m in 0..cfg.n_mels {
        for j in 1..33 {
            shift_err = shift_err.max((wa.data[m * 33 + j - 1] - wb.data[m * 33 + j]).abs());
        }
    }
    if shift_err > 1e-9 {
        problems.push(format!("one-hop delay changed values by {shift_err:.2e}"));
    }

    let detail = format!(
        "silence at floor (max dev {worst:.1e}); 440 Hz → bin {found} (analytic {expected}); one-hop shift max dev {shift_err:.1e}"
    );
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; problems: {}", problems.join("; ")))
    }
}

// ---------------------------------------------------------------------------
// 8. Service contract

fn service_contract(ckpt_dir: &Path, clip: &SyntheticClip) -> Result<String, String> {
    let runtime = tokio::runtime::Runtime::new().unwrap();
    runtime.block_on(async {
        let mut bases = Vec::new();
        for _ in 0..2 {
            let models = ModelSet::load_dir(ckpt_dir).map_err(|e| e.to_string())?;
            let state = Arc::new(SessionState::new(models, ServiceConfig::default()));
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            bases.push(format!("http://{}", listener.local_addr().unwrap()));
            tokio::spawn(serve(listener, state));
        }
        let client = reqwest::Client::new();
        let wav = clip.audio.to_wav_bytes().unwrap();
        let mut audio_ids = Vec::new();
        for base in &bases {
            let r: serde_json::Value = client
                .post(format!("{base}/audio"))
                .body(wav.clone())
                .send()
                .await
                .map_err(|e| e.to_string())?
                .json()
                .await
                .map_err(|e| e.to_string())?;
            audio_ids.push(r["audio_id"].as_str().unwrap().to_string());
        }
        if audio_ids[0] != audio_ids[1] {
            return Err("the same WAV got different ids".into());
        }
        let request = |rate: u32| {
            serde_json::json!({
                "audio_id": audio_ids[0],
                "emotion_weights": [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
                "settings": {"key_threshold": 0.5, "smooth_upper": true, "smooth_sigma": 2.0, "rate": rate}
            })
        };
        let post = |base: String, body: serde_json::Value| {
            let client = client.clone();
            async move {
                let r = client.post(format!("{base}/infer")).json(&body).send().await.map_err(|e| e.to_string())?;
                let status = r.status();
                let bytes = r.bytes().await.map_err(|e| e.to_string())?;
                if !status.is_success() {
                    return Err(format!("/infer returned {status}: {}", String::from_utf8_lossy(&bytes)));
                }
                Ok::<_, String>(bytes)
            }
        };
        let first = post(bases[0].clone(), request(1)).await?;
        let cached = post(bases[0].clone(), request(1)).await?;
        let recomputed = post(bases[1].clone(), request(1)).await?;
        let identical = first == cached && first == recomputed;

        let schema: serde_json::Value = serde_json::from_str(INFER_RESPONSE_SCHEMA).unwrap();
        let validator = jsonschema::validator_for(&schema).map_err(|e| e.to_string())?;
        let body: serde_json::Value = serde_json::from_slice(&first).unwrap();
        let schema_errors: Vec<String> = validator.iter_errors(&body).map(|e| e.to_string()).collect();

        let rate4: serde_json::Value = serde_json::from_slice(&post(bases[0].clone(), request(4)).await?).unwrap();
        let rate4_errors = validator.iter_errors(&rate4).count();
        let last = rate4["frame_count"].as_u64().unwrap() - 1;
        let mut keys_checked = 0;
        let mut off_grid = 0;
        for cfg in rate4["configurations"].as_array().unwrap() {
            for ctrl in cfg["controllers"].as_array().unwrap() {
                for k in ctrl["keys"].as_array().unwrap() {
                    let f = k["frame"].as_u64().unwrap();
                    keys_checked += 1;
                    if f % 4 != 0 && f != last {
                        off_grid += 1;
                    }
                }
            }
        }
        check(
            schema_errors.is_empty() && rate4_errors == 0 && identical && off_grid == 0,
            format!(
                "schema violations {} (+{rate4_errors} at rate 4); identical bodies (cached and fresh server) {identical}; rate 4: {off_grid} of {keys_checked} keys off the grid{}",
                schema_errors.len(),
                schema_errors.first().map(|e| format!("; first: {e}")).unwrap_or_default()
            ),
        )
    })
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance_criteria() {
    let spec = SyntheticSpec::default();
    let plan = acceptance_plan(&spec, 50);
    let data = synthetic_dataset(&spec, MelConfig::default(), plan.window_frames).unwrap();
    let frames = data.total_frames();
    let ckpt_dir = tempfile::tempdir().unwrap();

    let started = Instant::now();
    let (trained, report) = train(&plan, &data, Some(ckpt_dir.path()), &EventLog::silent()).unwrap();
    let seconds = started.elapsed().as_secs_f64();
    let models = triples_from(trained);

    let held_out = generate_synthetic_dataset(&SyntheticSpec {
        seed: spec.seed + 1000,
        n_clips: HELD_OUT_CLIPS,
        ..spec.clone()
    })
    .unwrap();

    let rate4: Vec<InferenceResult> = held_out
        .iter()
        .map(|c| {
            let mut s = InferenceSettings::new(one_hot(c.clip.emotion, 6));
            s.rate = 4;
            infer(&c.audio, &models, &s).unwrap()
        })
        .collect();

    let outcomes = vec![
        outcome(1, "structural fidelity", structural(&report, ckpt_dir.path(), &spec, frames, seconds)),
        outcome(2, "oracle end-to-end", oracle_end_to_end(&models, &held_out)),
        outcome(3, "emotion conditioning", emotion_conditioning(&models, &spec, &held_out)),
        outcome(4, "gradient checks", gradient_checks()),
        outcome(5, "curve properties", curve_properties(&rate4)),
        outcome(6, "determinism", determinism(&models, &held_out)),
        outcome(7, "mel checks", mel_checks()),
        outcome(8, "service contract", service_contract(ckpt_dir.path(), &held_out[0])),
    ];

    println!();
    for o in &outcomes {
        println!(
            "criterion {} {:<22} {}  {}",
            o.criterion,
            o.title,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.pass).map(|o| o.criterion).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
