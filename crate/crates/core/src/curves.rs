//! Animation curves: sparse keys with slope tangents, dense per-frame samples,
//! cubic Hermite evaluation, greedy key extraction and the filters applied to
//! generated curves.
//!
//! Tangents are slopes in value units per frame. A segment between two keys
//! is governed by the outgoing tangent of its left key and the incoming
//! tangent of its right key.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A keyframe on one controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Key {
    pub frame: u32,
    pub value: f64,
    pub in_tangent: f64,
    pub out_tangent: f64,
}

impl Key {
    pub fn new(frame: u32, value: f64, in_tangent: f64, out_tangent: f64) -> Self {
        Key {
            frame,
            value,
            in_tangent,
            out_tangent,
        }
    }

    /// Key with the same slope on both sides.
    pub fn smooth(frame: u32, value: f64, slope: f64) -> Self {
        Key::new(frame, value, slope, slope)
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.in_tangent.is_finite() && self.out_tangent.is_finite()
    }
}

/// One rig controller's animation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerCurve {
    pub name: String,
    #[serde(rename = "values", default, skip_serializing_if = "Option::is_none")]
    pub dense: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keys: Option<Vec<Key>>,
}

impl ControllerCurve {
    pub fn has_keys(&self) -> bool {
        self.keys.as_ref().is_some_and(|k| !k.is_empty())
    }

    /// Per-frame values, baking keys when no dense samples are stored.
    pub fn sampled(&self, frame_count: usize) -> Result<Vec<f64>> {
        match (&self.dense, &self.keys) {
            (Some(d), _) => Ok(d.clone()),
            (None, Some(k)) => reconstruct_dense(k, frame_count),
            (None, None) => Err(Error::Invalid(format!(
                "controller {} has neither values nor keys",
                self.name
            ))),
        }
    }

    fn validate(&self, frame_count: usize) -> Result<()> {
        if self.dense.is_none() && self.keys.is_none() {
            return Err(Error::Invalid(format!(
                "controller {} has neither values nor keys",
                self.name
            )));
        }
        if let Some(d) = &self.dense {
            if d.len() != frame_count {
                return Err(Error::Invalid(format!(
                    "controller {} has {} values for {} frames",
                    self.name,
                    d.len(),
                    frame_count
                )));
            }
            if d.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "controller {} has non-finite values",
                    self.name
                )));
            }
        }
        if let Some(keys) = &self.keys {
            validate_keys(keys)?;
            if keys.last().is_some_and(|k| k.frame as usize >= frame_count) {
                return Err(Error::Invalid(format!(
                    "controller {} has keys beyond frame {}",
                    self.name,
                    frame_count - 1
                )));
            }
        }
        Ok(())
    }
}

/// A set of controller curves sharing a frame rate, labelled with one emotion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigAnimationClip {
    pub name: String,
    pub fps: f64,
    pub frame_count: usize,
    pub emotion: usize,
    pub controllers: Vec<ControllerCurve>,
    /// Paired audio, carried by the manifest rather than the clip file.
    #[serde(skip)]
    pub audio_ref: Option<String>,
}

impl RigAnimationClip {
    pub fn validate(&self, n_emotions: usize) -> Result<()> {
        if self.frame_count < 2 {
            return Err(Error::Invalid(format!(
                "clip {} needs at least 2 frames",
                self.name
            )));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Invalid(format!("clip {} has fps {}", self.name, self.fps)));
        }
        if self.emotion >= n_emotions {
            return Err(Error::Invalid(format!(
                "clip {} has emotion {} but only {} emotions exist",
                self.name, self.emotion, n_emotions
            )));
        }
        self.controllers
            .iter()
            .try_for_each(|c| c.validate(self.frame_count))
    }

    pub fn controller(&self, name: &str) -> Option<&ControllerCurve> {
        self.controllers.iter().find(|c| c.name == name)
    }
}

fn validate_keys(keys: &[Key]) -> Result<()> {
    if let Some(k) = keys.iter().find(|k| !k.is_finite()) {
        return Err(Error::Invalid(format!("non-finite key at frame {}", k.frame)));
    }
    if let Some(w) = keys.windows(2).find(|w| w[0].frame >= w[1].frame) {
        return Err(Error::Invalid(format!(
            "key frames must be strictly increasing ({} then {})",
            w[0].frame, w[1].frame
        )));
    }
    Ok(())
}

/// Evaluates the cubic Hermite segment between `k0` and `k1` at `frame`.
pub fn hermite_eval(k0: &Key, k1: &Key, frame: f64) -> Result<f64> {
    if k0.frame >= k1.frame {
        return Err(Error::InvalidSegment(k0.frame, k1.frame));
    }
    let (start, end) = (k0.frame as f64, k1.frame as f64);
    if !(start..=end).contains(&frame) {
        return Err(Error::OutOfSegment {
            frame,
            start: k0.frame,
            end: k1.frame,
        });
    }
    Ok(hermite_unchecked(k0, k1, frame))
}

#[inline]
fn hermite_unchecked(k0: &Key, k1: &Key, frame: f64) -> f64 {
    let len = (k1.frame - k0.frame) as f64;
    let t = (frame - k0.frame as f64) / len;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * k0.value + h10 * len * k0.out_tangent + h01 * k1.value + h11 * len * k1.in_tangent
}

/// Bakes a key list into `frame_count` per-frame values. Frames before the
/// first key and after the last key hold the nearest key's value.
pub fn reconstruct_dense(keys: &[Key], frame_count: usize) -> Result<Vec<f64>> {
    let (first, last) = match (keys.first(), keys.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::Invalid("cannot reconstruct from an empty key list".into())),
    };
    validate_keys(keys)?;
    if last.frame as usize >= frame_count {
        return Err(Error::Invalid(format!(
            "key frame {} outside [0, {frame_count})",
            last.frame
        )));
    }
    let mut out = vec![0.0; frame_count];
    out[..first.frame as usize].fill(first.value);
    out[last.frame as usize..].fill(last.value);
    for pair in keys.windows(2) {
        let (k0, k1) = (&pair[0], &pair[1]);
        for (f, slot) in out
            .iter_mut()
            .enumerate()
            .take(k1.frame as usize + 1)
            .skip(k0.frame as usize)
        {
            *slot = hermite_unchecked(k0, k1, f as f64);
        }
    }
    Ok(out)
}

/// Finite-difference slope of `dense` at `frame`: one-sided at the ends,
/// central inside.
pub fn finite_difference_slope(dense: &[f64], frame: usize) -> f64 {
    let n = dense.len();
    if n < 2 {
        return 0.0;
    }
    if frame == 0 {
        dense[1] - dense[0]
    } else if frame == n - 1 {
        dense[n - 1] - dense[n - 2]
    } else {
        (dense[frame + 1] - dense[frame - 1]) * 0.5
    }
}

/// Greedy key reduction: starts from keys on the first and last frame and
/// inserts a key at the frame of largest reconstruction error until every
/// frame is within `tolerance`. Inserted keys take finite-difference slopes.
pub fn extract_keys(dense: &[f64], tolerance: f64) -> Result<Vec<Key>> {
    let n = dense.len();
    if n < 2 {
        return Err(Error::Invalid("extract_keys needs at least 2 frames".into()));
    }
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(Error::Invalid(format!("tolerance must be > 0, got {tolerance}")));
    }
    if dense.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("extract_keys input contains non-finite values".into()));
    }
    let key_at = |f: usize| Key::smooth(f as u32, dense[f], finite_difference_slope(dense, f));
    let mut keys = vec![key_at(0), key_at(n - 1)];
    let mut recon = reconstruct_dense(&keys, n)?;
    loop {
        let (worst, err) = recon
            .iter()
            .zip(dense)
            .map(|(r, d)| (r - d).abs())
            .enumerate()
            .fold((0, 0.0_f64), |best, (i, e)| if e > best.1 { (i, e) } else { best });
        if err <= tolerance {
            return Ok(keys);
        }
        let pos = keys.partition_point(|k| (k.frame as usize) < worst);
        keys.insert(pos, key_at(worst));
        // Only the two segments adjacent to the new key change.
        let (lo, hi) = (keys[pos - 1].frame as usize, keys[pos + 1].frame as usize);
        for f in lo..=hi {
            let seg = if f <= worst { pos - 1 } else { pos };
            recon[f] = hermite_unchecked(&keys[seg], &keys[seg + 1], f as f64);
        }
    }
}

/// Normalized Gaussian kernel truncated at radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

/// Folds an out-of-range index back into `[0, n)` by mirror reflection
/// about the sample edges (`... b a | a b c ... z | z y ...`).
fn reflect_index(mut i: i64, n: i64) -> usize {
    let period = 2 * n;
    i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Gaussian low-pass with reflective boundaries. `sigma = 0` is the identity.
pub fn gaussian_smooth(dense: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 || dense.is_empty() {
        return Ok(dense.to_vec());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let n = dense.len() as i64;
    Ok((0..n)
        .map(|i| {
            let (mut acc, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
            for (j, w) in kernel.iter().enumerate() {
                let v = dense[reflect_index(i + j as i64 - radius, n)];
                acc += w * v;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            // Rounding in the weight sum must not push a convex combination
            // outside the values it mixes.
            acc.clamp(lo, hi)
        })
        .collect())
}

/// Animation rates accepted by [`rate_filter`].
pub const SUPPORTED_RATES: [u32; 3] = [1, 2, 4];

/// Snaps keys onto a stride-`rate` frame grid. The first and last keys stay
/// where they are; an interior key snapping onto an occupied grid frame (or
/// onto/after the last key) is dropped, so the earliest key wins.
pub fn rate_filter(keys: &[Key], rate: u32) -> Result<Vec<Key>> {
    if !SUPPORTED_RATES.contains(&rate) {
        return Err(Error::Invalid(format!(
            "unsupported rate {rate}; expected one of {SUPPORTED_RATES:?}"
        )));
    }
    if rate == 1 || keys.len() <= 2 {
        return Ok(keys.to_vec());
    }
    let first = keys[0];
    let last = keys[keys.len() - 1];
    let mut out = vec![first];
    for key in &keys[1..keys.len() - 1] {
        let snapped = (key.frame + rate / 2) / rate * rate;
        let prev = out.last().map_or(0, |k| k.frame);
        if snapped > prev && snapped < last.frame {
            out.push(Key { frame: snapped, ..*key });
        }
    }
    out.push(last);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hermite_examples() {
        let k0 = Key::new(0, 0.0, 0.0, 0.0);
        let flat = Key::new(10, 0.0, 0.0, 0.0);
        let up = Key::new(10, 1.0, 0.0, 0.0);
        assert_eq!(hermite_eval(&k0, &flat, 5.0).unwrap(), 0.0);
        assert_eq!(hermite_eval(&k0, &up, 10.0).unwrap(), 1.0);
        assert_abs_diff_eq!(hermite_eval(&k0, &up, 5.0).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn hermite_errors() {
        let a = Key::new(4, 0.0, 0.0, 0.0);
        let b = Key::new(8, 1.0, 0.0, 0.0);
        assert!(matches!(hermite_eval(&a, &b, 9.0), Err(Error::OutOfSegment { .. })));
        assert!(matches!(hermite_eval(&b, &a, 5.0), Err(Error::InvalidSegment(8, 4))));
        assert!(matches!(hermite_eval(&a, &a, 4.0), Err(Error::InvalidSegment(4, 4))));
    }

    #[test]
    fn hermite_uses_out_then_in_tangents() {
        // Slopes of a linear ramp reproduce it, whatever the unused sides hold.
        let k0 = Key::new(2, 1.0, 99.0, 0.5);
        let k1 = Key::new(6, 3.0, 0.5, -99.0);
        for f in 2..=6 {
            let v = hermite_eval(&k0, &k1, f as f64).unwrap();
            assert_abs_diff_eq!(v, 1.0 + 0.5 * (f - 2) as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn reconstruct_examples() {
        let single = [Key::new(3, 0.7, 0.0, 0.0)];
        assert_eq!(reconstruct_dense(&single, 6).unwrap(), vec![0.7; 6]);
        let two = [Key::new(0, 0.0, 0.0, 0.0), Key::new(2, 1.0, 0.0, 0.0)];
        let d = reconstruct_dense(&two, 3).unwrap();
        assert_eq!(d[0], 0.0);
        assert_abs_diff_eq!(d[1], 0.5, epsilon = 1e-15);
        assert_eq!(d[2], 1.0);
        assert!(reconstruct_dense(&[], 4).is_err());
        assert!(reconstruct_dense(&[Key::new(5, 0.0, 0.0, 0.0)], 5).is_err());
    }

    #[test]
    fn extract_constant_and_ramp() {
        let keys = extract_keys(&[0.4; 100], 0.01).unwrap();
        assert_eq!(keys.iter().map(|k| k.frame).collect::<Vec<_>>(), vec![0, 99]);

        let ramp: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let keys = extract_keys(&ramp, 0.01).unwrap();
        assert_eq!(keys.len(), 2);
        for k in &keys {
            assert_abs_diff_eq!(k.in_tangent, 1.0 / 49.0, epsilon = 1e-12);
            assert_abs_diff_eq!(k.out_tangent, 1.0 / 49.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn extract_rejects_bad_input() {
        assert!(extract_keys(&[1.0], 0.1).is_err());
        assert!(extract_keys(&[1.0, 2.0], 0.0).is_err());
        assert!(extract_keys(&[1.0, f64::NAN], 0.1).is_err());
    }

    /// Straightforward restatement of the greedy rule: full reconstruction
    /// on every iteration, first frame of maximum error wins.
    fn greedy_reference(dense: &[f64], tol: f64) -> Vec<u32> {
        let n = dense.len();
        let mut frames = vec![0usize, n - 1];
        loop {
            let keys: Vec<Key> = frames
                .iter()
                .map(|&f| Key::smooth(f as u32, dense[f], finite_difference_slope(dense, f)))
                .collect();
            let recon = reconstruct_dense(&keys, n).unwrap();
            let mut worst = 0;
            let mut err = 0.0;
            for i in 0..n {
                let e = (recon[i] - dense[i]).abs();
                if e > err {
                    err = e;
                    worst = i;
                }
            }
            if err <= tol {
                return frames.into_iter().map(|f| f as u32).collect();
            }
            frames.push(worst);
            frames.sort_unstable();
        }
    }

    #[test]
    fn extract_sine_matches_greedy_reference() {
        let sine: Vec<f64> = (0..120)
            .map(|i| (i as f64 * 2.0 * std::f64::consts::PI / 40.0).sin())
            .collect();
        let keys = extract_keys(&sine, 0.02).unwrap();
        let frames: Vec<u32> = keys.iter().map(|k| k.frame).collect();
        assert_eq!(frames, greedy_reference(&sine, 0.02));
        // Three periods over 120 frames: keys land at extrema and crossings.
        assert_eq!(frames.first(), Some(&0));
        assert_eq!(frames.last(), Some(&119));
        let recon = reconstruct_dense(&keys, sine.len()).unwrap();
        let max_err = recon.iter().zip(&sine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_err <= 0.02, "{max_err}");
    }

    #[test]
    fn gaussian_identity_and_constant() {
        let x = [0.3, -1.0, 2.5, 4.0, 0.0];
        assert_eq!(gaussian_smooth(&x, 0.0).unwrap(), x.to_vec());
        for sigma in [0.5, 2.0, 7.3] {
            let y = gaussian_smooth(&[0.37; 9], sigma).unwrap();
            assert!(y.iter().all(|&v| v == 0.37));
        }
        assert!(gaussian_smooth(&x, -1.0).is_err());
    }

    #[test]
    fn gaussian_impulse_matches_analytic_kernel() {
        let sigma = 2.0;
        let mut impulse = vec![0.0; 41];
        impulse[20] = 1.0;
        let y = gaussian_smooth(&impulse, sigma).unwrap();
        // Analytic: radius 6, weights exp(-i^2/8), normalized.
        let norm: f64 = (-6..=6).map(|i: i32| (-(i * i) as f64 / 8.0).exp()).sum();
        assert_abs_diff_eq!(y[20], 1.0 / norm, epsilon = 1e-12);
        assert_abs_diff_eq!(y[14], (-36.0_f64 / 8.0).exp() / norm, epsilon = 1e-12);
        assert_eq!(y[13], 0.0);
        assert_abs_diff_eq!(y.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn reflect_handles_long_kernels() {
        assert_eq!(reflect_index(-1, 3), 0);
        assert_eq!(reflect_index(-2, 3), 1);
        assert_eq!(reflect_index(3, 3), 2);
        assert_eq!(reflect_index(7, 3), 1);
        let y = gaussian_smooth(&[0.0, 1.0], 5.0).unwrap();
        assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rate_filter_examples() {
        let keys: Vec<Key> = [0, 1, 2, 3, 4]
            .iter()
            .map(|&f| Key::new(f, f as f64, 0.0, 0.0))
            .collect();
        assert_eq!(rate_filter(&keys, 1).unwrap(), keys);
        let frames = |ks: Vec<Key>| ks.iter().map(|k| k.frame).collect::<Vec<_>>();
        assert_eq!(frames(rate_filter(&keys, 2).unwrap()), vec![0, 2, 4]);

        let keys: Vec<Key> = [0, 3, 5, 7]
            .iter()
            .map(|&f| Key::new(f, f as f64, 0.0, 0.0))
            .collect();
        let out = rate_filter(&keys, 4).unwrap();
        assert_eq!(frames(out.clone()), vec![0, 4, 7]);
        // The surviving grid key carries the data of the earlier key (frame 3).
        assert_eq!(out[1].value, 3.0);
        assert!(rate_filter(&keys, 3).is_err());
    }

    #[test]
    fn clip_json_field_names() {
        let clip = RigAnimationClip {
            name: "c".into(),
            fps: 24.0,
            frame_count: 2,
            emotion: 1,
            controllers: vec![ControllerCurve {
                name: "jaw".into(),
                dense: Some(vec![0.0, 1.0]),
                keys: Some(vec![Key::new(0, 0.0, 1.0, 1.0)]),
            }],
            audio_ref: None,
        };
        let v = serde_json::to_value(&clip).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["controllers", "emotion", "fps", "frame_count", "name"]);
        let ctrl = &v["controllers"][0];
        assert!(ctrl.get("values").is_some() && ctrl.get("keys").is_some());
        assert_eq!(
            ctrl["keys"][0].as_object().unwrap().keys().collect::<Vec<_>>(),
            ["frame", "in_tangent", "out_tangent", "value"]
        );
    }
}
