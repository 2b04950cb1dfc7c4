//! Convolutional-recurrent networks over mel windows.
//!
//! Mel bins are the input channels of three 1-D convolutions along time
//! (strides 1, 2, 2). One GRU reads the resulting sequence; its final state
//! feeds a dense ELU layer and a linear head. AudioNet's head regresses the
//! C-VAE latent; KeyNet's head emits, per controller, a key logit and the
//! incoming and outgoing tangents for the window's centre frame.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{elu_backward, elu_inplace, sigmoid, Conv1d, Gru, GruStep, Linear, ParamLayout};
use crate::audio::MelWindow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioArch {
    pub mel_bins: usize,
    pub window_frames: usize,
    pub conv_channels: [usize; 3],
    pub kernel: usize,
    pub gru_hidden: usize,
    pub dense_hidden: usize,
    pub out_dim: usize,
    /// Per-mel-bin input standardization, fitted on training windows.
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
}

impl AudioArch {
    pub fn new(mel_bins: usize, window_frames: usize, out_dim: usize) -> Self {
        AudioArch {
            mel_bins,
            window_frames,
            conv_channels: [16, 16, 16],
            kernel: 3,
            gru_hidden: 64,
            dense_hidden: 64,
            out_dim,
            input_mean: vec![0.0; mel_bins],
            input_std: vec![1.0; mel_bins],
        }
    }
}

const STRIDES: [usize; 3] = [1, 2, 2];

#[derive(Debug, Clone, PartialEq)]
pub struct ConvRecurrentNet {
    pub arch: AudioArch,
    convs: [Conv1d; 3],
    gru: Gru,
    dense: Linear,
    head: Linear,
    n_params: usize,
}

struct Tape {
    input: Vec<f64>,
    conv: [Vec<f64>; 3],
    seq: Vec<Vec<f64>>,
    steps: Vec<GruStep>,
    h: Vec<f64>,
    dense: Vec<f64>,
    out: Vec<f64>,
}

impl ConvRecurrentNet {
    pub fn new(arch: AudioArch) -> Result<Self> {
        if arch.kernel % 2 == 0 || arch.window_frames == 0 || arch.out_dim == 0 {
            return Err(Error::Config(format!("invalid audio network architecture {arch:?}")));
        }
        if arch.input_mean.len() != arch.mel_bins || arch.input_std.len() != arch.mel_bins {
            return Err(Error::Config("input standardization must have one entry per mel bin".into()));
        }
        if arch.input_std.iter().any(|s| !(*s > 0.0)) || arch.input_mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("input standardization must be finite with std > 0".into()));
        }
        let mut layout = ParamLayout::default();
        let mut t = arch.window_frames;
        let mut inp = arch.mel_bins;
        let mut convs = Vec::with_capacity(3);
        for (&ch, &stride) in arch.conv_channels.iter().zip(&STRIDES) {
            let c = Conv1d::new(&mut layout, inp, ch, arch.kernel, stride, t);
            t = c.t_out;
            inp = ch;
            convs.push(c);
        }
        let gru = Gru::new(&mut layout, inp, arch.gru_hidden);
        let dense = Linear::new(&mut layout, arch.gru_hidden, arch.dense_hidden);
        let head = Linear::new(&mut layout, arch.dense_hidden, arch.out_dim);
        Ok(ConvRecurrentNet {
            arch,
            convs: [convs[0], convs[1], convs[2]],
            gru,
            dense,
            head,
            n_params: layout.len(),
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Length of the recurrent sequence after the strided convolutions.
    pub fn sequence_len(&self) -> usize {
        self.convs[2].t_out
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.n_params];
        for c in &self.convs {
            c.init(&mut p, &mut rng);
        }
        self.gru.init(&mut p, &mut rng);
        self.dense.init(&mut p, &mut rng);
        self.head.init(&mut p, &mut rng);
        p
    }

    pub fn check_window(&self, w: &MelWindow) -> Result<()> {
        if w.mel_bins != self.arch.mel_bins || w.window_frames != self.arch.window_frames {
            return Err(Error::Dimension {
                what: "mel window (bins x frames)",
                expected: self.arch.mel_bins * self.arch.window_frames,
                found: w.mel_bins * w.window_frames,
            });
        }
        Ok(())
    }

    fn run(&self, p: &[f64], window: &[f64]) -> Tape {
        let wf = self.arch.window_frames;
        let input: Vec<f64> = window
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.arch.input_mean[i / wf]) / self.arch.input_std[i / wf])
            .collect();
        let mut prev: &[f64] = &input;
        let mut conv: [Vec<f64>; 3] = Default::default();
        for (i, c) in self.convs.iter().enumerate() {
            let mut y = vec![0.0; c.out * c.t_out];
            c.forward(p, prev, &mut y);
            elu_inplace(&mut y);
            conv[i] = y;
            prev = &conv[i];
        }
        let last = &self.convs[2];
        let seq: Vec<Vec<f64>> = (0..last.t_out)
            .map(|t| (0..last.out).map(|ch| conv[2][ch * last.t_out + t]).collect())
            .collect();
        let (h, steps) = self.gru.forward(p, &seq);
        let mut dense = vec![0.0; self.dense.out];
        self.dense.forward(p, &h, &mut dense);
        elu_inplace(&mut dense);
        let mut out = vec![0.0; self.head.out];
        self.head.forward(p, &dense, &mut out);
        Tape {
            input,
            conv,
            seq,
            steps,
            h,
            dense,
            out,
        }
    }

    fn backward(&self, p: &[f64], t: &Tape, d_out: &[f64], grad: &mut [f64]) {
        let mut d_dense = vec![0.0; self.dense.out];
        self.head.backward(p, &t.dense, d_out, grad, Some(&mut d_dense));
        elu_backward(&t.dense, &mut d_dense);
        let mut dh = vec![0.0; self.gru.hidden];
        self.dense.backward(p, &t.h, &d_dense, grad, Some(&mut dh));
        let d_seq = self.gru.backward(p, &t.seq, &t.steps, &dh, grad);
        let last = &self.convs[2];
        let mut d = vec![0.0; last.out * last.t_out];
        for (step, ds) in d_seq.iter().enumerate() {
            for (ch, v) in ds.iter().enumerate() {
                d[ch * last.t_out + step] = *v;
            }
        }
        for i in (0..3).rev() {
            elu_backward(&t.conv[i], &mut d);
            let input = if i == 0 { &t.input } else { &t.conv[i - 1] };
            if i == 0 {
                self.convs[0].backward(p, input, &d, grad, None);
            } else {
                let c = &self.convs[i];
                let mut dx = vec![0.0; c.inp * c.t_in];
                c.backward(p, input, &d, grad, Some(&mut dx));
                d = dx;
            }
        }
    }

    /// Raw head outputs for one window.
    pub fn forward(&self, p: &[f64], w: &MelWindow) -> Result<Vec<f64>> {
        self.check_window(w)?;
        Ok(self.run(p, &w.data).out)
    }

    /// Runs forward, evaluates `loss(out) -> (value, d_out)` and, when
    /// `grad` is given, backpropagates `d_out`.
    pub fn loss_grad<F>(&self, p: &[f64], w: &MelWindow, loss: F, grad: Option<&mut [f64]>) -> f64
    where
        F: FnOnce(&[f64]) -> (f64, Vec<f64>),
    {
        let tape = self.run(p, &w.data);
        let (value, d_out) = loss(&tape.out);
        if let Some(grad) = grad {
            self.backward(p, &tape, &d_out, grad);
        }
        value
    }
}

/// Mean squared error over the latent dimensions, with its gradient.
pub fn audionet_loss(z_hat: &[f64], z_target: &[f64]) -> (f64, Vec<f64>) {
    let n = z_hat.len() as f64;
    let loss = z_hat.iter().zip(z_target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let grad = z_hat.iter().zip(z_target).map(|(a, b)| 2.0 * (a - b) / n).collect();
    (loss, grad)
}

/// Probability clamp used by the key cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// KeyNet output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyPrediction {
    pub logits: Vec<f64>,
    pub probability: Vec<f64>,
    pub in_tangent: Vec<f64>,
    pub out_tangent: Vec<f64>,
}

impl KeyPrediction {
    /// Splits a `3 * controllers` head output.
    pub fn from_head(out: &[f64]) -> Self {
        let c = out.len() / 3;
        let logits = out[..c].to_vec();
        KeyPrediction {
            probability: logits.iter().map(|&l| sigmoid(l)).collect(),
            logits,
            in_tangent: out[c..2 * c].to_vec(),
            out_tangent: out[2 * c..].to_vec(),
        }
    }
}

/// Targets and weights for the key loss of one frame.
#[derive(Debug, Clone, Copy)]
pub struct KeyTargets<'a> {
    pub key_flag: &'a [f64],
    pub in_tangent: &'a [f64],
    pub out_tangent: &'a [f64],
    /// Positive-class weight per controller (`#neg / #pos`).
    pub pos_weight: &'a [f64],
    pub tangent_weight: f64,
}

/// Class-weighted binary cross-entropy on key logits plus `tangent_weight`
/// times the tangent squared error on keyed controllers, averaged over
/// controllers. Returns the loss and its gradient with respect to the
/// `3 * controllers` head output.
pub fn keynet_loss(out: &[f64], t: KeyTargets<'_>) -> (f64, Vec<f64>) {
    let c = t.key_flag.len();
    debug_assert_eq!(out.len(), 3 * c);
    let mut grad = vec![0.0; 3 * c];
    let mut loss = 0.0;
    let inv = 1.0 / c as f64;
    for i in 0..c {
        let y = t.key_flag[i];
        let w = t.pos_weight[i];
        let raw = sigmoid(out[i]);
        let p = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss += -(w * y * p.ln() + (1.0 - y) * (1.0 - p).ln()) * inv;
        if raw == p {
            grad[i] = ((1.0 - y) * p - w * y * (1.0 - p)) * inv;
        }
        if y != 0.0 {
            let di = out[c + i] - t.in_tangent[i];
            let do_ = out[2 * c + i] - t.out_tangent[i];
            loss += t.tangent_weight * y * 0.5 * (di * di + do_ * do_) * inv;
            grad[c + i] = t.tangent_weight * y * di * inv;
            grad[2 * c + i] = t.tangent_weight * y * do_ * inv;
        }
    }
    (loss, grad)
}

/// Per-controller `#neg / #pos` over key flags; 1 for controllers with no
/// positives.
pub fn positive_class_weights<'a, I>(flags: I, n_controllers: usize) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut pos = vec![0usize; n_controllers];
    let mut total = 0usize;
    for f in flags {
        total += 1;
        for (p, &v) in pos.iter_mut().zip(f) {
            if v > 0.5 {
                *p += 1;
            }
        }
    }
    pos.iter()
        .map(|&p| if p == 0 { 1.0 } else { (total - p) as f64 / p as f64 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{gradient_check, FnObjective};
    use rand::Rng;

    fn tiny() -> ConvRecurrentNet {
        ConvRecurrentNet::new(AudioArch {
            conv_channels: [3, 3, 2],
            gru_hidden: 4,
            dense_hidden: 5,
            ..AudioArch::new(4, 9, 6)
        })
        .unwrap()
    }

    fn window(rng: &mut ChaCha8Rng, bins: usize, frames: usize) -> MelWindow {
        MelWindow {
            data: (0..bins * frames).map(|_| rng.random_range(-2.0..2.0)).collect(),
            mel_bins: bins,
            window_frames: frames,
            center_anim_frame: 0,
        }
    }

    #[test]
    fn shapes() {
        let net = ConvRecurrentNet::new(AudioArch::new(64, 33, 8)).unwrap();
        assert_eq!(net.sequence_len(), 9);
        let p = net.init_params(0);
        let w = MelWindow {
            data: vec![-3.0; 64 * 33],
            mel_bins: 64,
            window_frames: 33,
            center_anim_frame: 0,
        };
        let out = net.forward(&p, &w).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|v| v.is_finite()));
        let bad = MelWindow { window_frames: 31, data: vec![0.0; 64 * 31], ..w };
        assert!(net.forward(&p, &bad).is_err());
    }

    #[test]
    fn audionet_loss_examples() {
        assert_eq!(audionet_loss(&[0.5, -1.0], &[0.5, -1.0]).0, 0.0);
        assert_eq!(audionet_loss(&[1.5, 0.0, 2.0], &[0.5, -1.0, 1.0]).0, 1.0);
    }

    #[test]
    fn keynet_loss_examples() {
        let flags = [1.0, 0.0, 1.0];
        let tin = [0.1, 0.0, -0.2];
        let tout = [0.3, 0.0, 0.05];
        let targets = KeyTargets {
            key_flag: &flags,
            in_tangent: &tin,
            out_tangent: &tout,
            pos_weight: &[2.0, 2.0, 2.0],
            tangent_weight: 1.0,
        };
        let perfect = [40.0, -40.0, 40.0, 0.1, 0.0, -0.2, 0.3, 0.0, 0.05];
        let (l, _) = keynet_loss(&perfect, targets);
        assert!(l >= 0.0 && l < 1e-6, "{l}");

        let none = KeyTargets { key_flag: &[0.0; 3], ..targets };
        let a = [0.2, -0.4, 0.1, 5.0, -3.0, 9.0, 1.0, 2.0, 3.0];
        let b = [0.2, -0.4, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let (la, ga) = keynet_loss(&a, none);
        let (lb, _) = keynet_loss(&b, none);
        assert_eq!(la, lb);
        assert!(ga[3..].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn class_weight_for_ten_percent_density() {
        let flags: Vec<Vec<f64>> = (0..100).map(|i| vec![if i % 10 == 0 { 1.0 } else { 0.0 }, 0.0]).collect();
        let w = positive_class_weights(flags.iter().map(Vec::as_slice), 2);
        assert_eq!(w, vec![9.0, 1.0]);
    }

    #[test]
    fn audionet_gradient() {
        let net = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = net.init_params(4);
        let w = window(&mut rng, 4, 9);
        let target: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let obj = FnObjective::new(net.n_params(), |p: &[f64], g: Option<&mut [f64]>| {
            net.loss_grad(p, &w, |o| audionet_loss(o, &target), g)
        });
        let err = gradient_check(&obj, &p, 100, 2).unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn keynet_gradient() {
        let net = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = net.init_params(5);
        let w = window(&mut rng, 4, 9);
        let flags = [1.0, 0.0];
        let targets = KeyTargets {
            key_flag: &flags,
            in_tangent: &[0.3, 0.0],
            out_tangent: &[-0.2, 0.0],
            pos_weight: &[3.0, 3.0],
            tangent_weight: 1.0,
        };
        let obj = FnObjective::new(net.n_params(), |p: &[f64], g: Option<&mut [f64]>| {
            net.loss_grad(p, &w, |o| keynet_loss(o, targets), g)
        });
        let err = gradient_check(&obj, &p, 100, 3).unwrap();
        assert!(err <= 1e-4, "{err}");
    }
}
