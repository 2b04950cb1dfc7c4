//! Evaluation helpers for comparing generated curves with reference curves.

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::curves::{extract_keys, RigAnimationClip};
use crate::dataset::FALLBACK_KEY_TOLERANCE;
use crate::error::{Error, Result};
use crate::inference::{infer, InferenceSettings, ModelSet};

/// Mean absolute difference of two equal-length series.
pub fn mean_absolute_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "series lengths differ");
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Matched / unmatched key counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl DetectionScore {
    pub fn add(&mut self, other: DetectionScore) {
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.true_positives, self.true_positives + self.false_positives)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positives, self.true_positives + self.false_negatives)
    }

    pub fn f1(&self) -> f64 {
        ratio(
            2 * self.true_positives,
            2 * self.true_positives + self.false_positives + self.false_negatives,
        )
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

/// One-to-one matching of predicted to reference key frames where a pair
/// matches if the frames differ by at most `slack`. Both lists must be
/// sorted ascending; the earliest-first sweep is optimal for this interval
/// structure.
pub fn match_key_frames(predicted: &[u32], reference: &[u32], slack: u32) -> DetectionScore {
    let (mut i, mut j, mut tp) = (0, 0, 0);
    while i < predicted.len() && j < reference.len() {
        let (p, r) = (predicted[i], reference[j]);
        if p.abs_diff(r) <= slack {
            tp += 1;
            i += 1;
            j += 1;
        } else if p < r {
            i += 1;
        } else {
            j += 1;
        }
    }
    DetectionScore {
        true_positives: tp,
        false_positives: predicted.len() - tp,
        false_negatives: reference.len() - tp,
    }
}

/// Agreement of inferred curves with reference clips.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean absolute error of dense values in normalized units.
    pub dense_mae: f64,
    /// Interior key frames (endpoints excluded on both sides).
    pub keys: DetectionScore,
    pub frames: usize,
}

/// Runs inference on each reference clip with its own emotion one-hot and
/// default settings, and scores dense values and key placement.
pub fn evaluate(models: &ModelSet, clips: &[(RigAnimationClip, AudioClip)], slack: u32) -> Result<Evaluation> {
    let n_emotions = models.n_emotions();
    let (mut abs_sum, mut count) = (0.0, 0usize);
    let mut keys = DetectionScore::default();
    for (clip, audio) in clips {
        let mut weights = vec![0.0; n_emotions];
        weights[clip.emotion] = 1.0;
        let result = infer(audio, models, &InferenceSettings::new(weights))?;
        if result.frame_count != clip.frame_count {
            return Err(Error::Invalid(format!(
                "clip {} has {} frames but its audio gives {}",
                clip.name, clip.frame_count, result.frame_count
            )));
        }
        let interior = |f: u32| f != 0 && f as usize != clip.frame_count - 1;
        for (ci, (cfg, triple)) in result.configurations.iter().zip(&models.triples).enumerate() {
            let table = triple.normalization();
            for (k, ctrl) in cfg.controllers.iter().enumerate() {
                let reference = clip
                    .controller(&ctrl.name)
                    .ok_or_else(|| Error::Invalid(format!("clip {} lacks controller {}", clip.name, ctrl.name)))?;
                let truth = reference.sampled(clip.frame_count)?;
                let dense = &result.dense[ci][k];
                abs_sum += truth
                    .iter()
                    .zip(dense)
                    .map(|(t, d)| (table.normalize(k, *t) - table.normalize(k, *d)).abs())
                    .sum::<f64>();
                count += truth.len();
                let truth_keys = match &reference.keys {
                    Some(ks) => ks.clone(),
                    None => extract_keys(&truth, FALLBACK_KEY_TOLERANCE)?,
                };
                let reference_frames: Vec<u32> = truth_keys.iter().map(|k| k.frame).filter(|&f| interior(f)).collect();
                let predicted: Vec<u32> = ctrl.keys.iter().map(|k| k.frame).filter(|&f| interior(f)).collect();
                keys.add(match_key_frames(&predicted, &reference_frames, slack));
            }
        }
    }
    Ok(Evaluation {
        dense_mae: if count == 0 { 0.0 } else { abs_sum / count as f64 },
        keys,
        frames: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Maximum bipartite matching by augmenting paths, for cross-checking.
    fn brute_matching(p: &[u32], r: &[u32], slack: u32) -> usize {
        fn augment(i: usize, p: &[u32], r: &[u32], slack: u32, seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
            for j in 0..r.len() {
                if p[i].abs_diff(r[j]) <= slack && !seen[j] {
                    seen[j] = true;
                    if owner[j].is_none() || augment(owner[j].unwrap(), p, r, slack, seen, owner) {
                        owner[j] = Some(i);
                        return true;
                    }
                }
            }
            false
        }
        let mut owner = vec![None; r.len()];
        (0..p.len())
            .filter(|&i| augment(i, p, r, slack, &mut vec![false; r.len()], &mut owner))
            .count()
    }

    #[test]
    fn sweep_is_maximal() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let mut p: Vec<u32> = (0..rng.random_range(0..12)).map(|_| rng.random_range(0..30)).collect();
            let mut r: Vec<u32> = (0..rng.random_range(0..12)).map(|_| rng.random_range(0..30)).collect();
            p.sort_unstable();
            p.dedup();
            r.sort_unstable();
            r.dedup();
            let s = match_key_frames(&p, &r, 1);
            assert_eq!(s.true_positives, brute_matching(&p, &r, 1));
        }
    }

    #[test]
    fn scores() {
        let s = match_key_frames(&[1, 5, 9], &[2, 5, 20], 1);
        assert_eq!((s.true_positives, s.false_positives, s.false_negatives), (2, 1, 1));
        assert!((s.f1() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(mean_absolute_error(&[1.0, 2.0], &[2.0, 0.0]), 1.5);
    }
}
