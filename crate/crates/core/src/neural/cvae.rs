//! Conditional VAE over normalized controller vectors. The condition vector
//! is concatenated to both the encoder input and the decoder input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::layers::{elu_backward, elu_inplace, Linear, ParamLayout};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeArch {
    pub n_controllers: usize,
    pub n_conditions: usize,
    pub z_dim: usize,
    /// Encoder widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
}

impl CvaeArch {
    pub fn new(n_controllers: usize, n_conditions: usize) -> Self {
        CvaeArch {
            n_controllers,
            n_conditions,
            z_dim: 8,
            hidden: vec![128, 64],
        }
    }
}

/// How the latent is formed from the posterior.
pub enum LatentMode<'a> {
    /// `z = mu`.
    Mean,
    /// `z = mu + exp(logvar / 2) * eps`, `eps ~ N(0, I)`.
    Sample(&'a mut ChaCha8Rng),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvaeOutput {
    pub x_hat: Vec<f64>,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

/// Layer structure of a C-VAE; parameters live outside.
#[derive(Debug, Clone, PartialEq)]
pub struct Cvae {
    pub arch: CvaeArch,
    encoder: Vec<Linear>,
    posterior: Linear,
    decoder: Vec<Linear>,
    output: Linear,
    n_params: usize,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
struct Tape {
    /// Encoder input followed by each hidden activation.
    enc: Vec<Vec<f64>>,
    mu: Vec<f64>,
    logvar: Vec<f64>,
    eps: Option<Vec<f64>>,
    /// Decoder input followed by each hidden activation.
    dec: Vec<Vec<f64>>,
    x_hat: Vec<f64>,
}

impl Cvae {
    pub fn new(arch: CvaeArch) -> Result<Self> {
        if arch.n_controllers == 0 || arch.z_dim == 0 || arch.hidden.is_empty() {
            return Err(Error::Config(format!("degenerate C-VAE architecture {arch:?}")));
        }
        let mut layout = ParamLayout::default();
        let mut encoder = Vec::new();
        let mut width = arch.n_controllers + arch.n_conditions;
        for &h in &arch.hidden {
            encoder.push(Linear::new(&mut layout, width, h));
            width = h;
        }
        let posterior = Linear::new(&mut layout, width, 2 * arch.z_dim);
        let mut decoder = Vec::new();
        width = arch.z_dim + arch.n_conditions;
        for &h in arch.hidden.iter().rev() {
            decoder.push(Linear::new(&mut layout, width, h));
            width = h;
        }
        let output = Linear::new(&mut layout, width, arch.n_controllers);
        Ok(Cvae {
            arch,
            encoder,
            posterior,
            decoder,
            output,
            n_params: layout.len(),
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.n_params];
        for l in self.encoder.iter().chain([&self.posterior]).chain(&self.decoder).chain([&self.output]) {
            l.init(&mut p, &mut rng);
        }
        // Start with a tight posterior so early samples are not pure noise.
        let lv_bias = self.posterior.offset + self.posterior.inp * self.posterior.out + self.arch.z_dim;
        p[lv_bias..lv_bias + self.arch.z_dim].fill(-2.0);
        p
    }

    fn check_inputs(&self, x: &[f64], c: &[f64]) -> Result<()> {
        if x.len() != self.arch.n_controllers {
            return Err(Error::Dimension {
                what: "controller vector",
                expected: self.arch.n_controllers,
                found: x.len(),
            });
        }
        if c.len() != self.arch.n_conditions {
            return Err(Error::Dimension {
                what: "condition vector",
                expected: self.arch.n_conditions,
                found: c.len(),
            });
        }
        Ok(())
    }

    fn mlp(layers: &[Linear], head: &Linear, p: &[f64], input: Vec<f64>) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut acts = vec![input];
        for l in layers {
            let mut h = vec![0.0; l.out];
            l.forward(p, acts.last().expect("input"), &mut h);
            elu_inplace(&mut h);
            acts.push(h);
        }
        let mut out = vec![0.0; head.out];
        head.forward(p, acts.last().expect("input"), &mut out);
        (acts, out)
    }

    /// Backpropagates `d_out` through a dense ELU stack, returning the
    /// gradient with respect to the stack input.
    fn mlp_backward(layers: &[Linear], head: &Linear, p: &[f64], acts: &[Vec<f64>], d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let mut d = vec![0.0; head.inp];
        head.backward(p, acts.last().expect("input"), d_out, grad, Some(&mut d));
        for (i, l) in layers.iter().enumerate().rev() {
            elu_backward(&acts[i + 1], &mut d);
            let mut dx = vec![0.0; l.inp];
            l.backward(p, &acts[i], &d, grad, Some(&mut dx));
            d = dx;
        }
        d
    }

    fn encode_tape(&self, p: &[f64], x: &[f64], c: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let input = x.iter().chain(c).copied().collect();
        let (acts, out) = Self::mlp(&self.encoder, &self.posterior, p, input);
        let (mu, logvar) = out.split_at(self.arch.z_dim);
        (acts, mu.to_vec(), logvar.to_vec())
    }

    fn decode_tape(&self, p: &[f64], z: &[f64], c: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let input = z.iter().chain(c).copied().collect();
        Self::mlp(&self.decoder, &self.output, p, input)
    }

    /// Posterior parameters `(mu, logvar)`.
    pub fn encode(&self, p: &[f64], x: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_inputs(x, c)?;
        let (_, mu, logvar) = self.encode_tape(p, x, c);
        Ok((mu, logvar))
    }

    pub fn decode(&self, p: &[f64], z: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.arch.z_dim {
            return Err(Error::Dimension {
                what: "latent vector",
                expected: self.arch.z_dim,
                found: z.len(),
            });
        }
        if c.len() != self.arch.n_conditions {
            return Err(Error::Dimension {
                what: "condition vector",
                expected: self.arch.n_conditions,
                found: c.len(),
            });
        }
        Ok(self.decode_tape(p, z, c).1)
    }

    fn run(&self, p: &[f64], x: &[f64], c: &[f64], eps: Option<Vec<f64>>) -> Tape {
        let (enc, mu, logvar) = self.encode_tape(p, x, c);
        let z: Vec<f64> = match &eps {
            Some(e) => mu
                .iter()
                .zip(&logvar)
                .zip(e)
                .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
                .collect(),
            None => mu.clone(),
        };
        let (dec, x_hat) = self.decode_tape(p, &z, c);
        Tape {
            enc,
            mu,
            logvar,
            eps,
            dec,
            x_hat,
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64], c: &[f64], mode: LatentMode<'_>) -> Result<CvaeOutput> {
        self.check_inputs(x, c)?;
        let eps = match mode {
            LatentMode::Mean => None,
            LatentMode::Sample(rng) => Some(self.draw_eps(rng)),
        };
        let t = self.run(p, x, c, eps);
        Ok(CvaeOutput {
            x_hat: t.x_hat,
            mu: t.mu,
            logvar: t.logvar,
        })
    }

    pub fn draw_eps(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.arch.z_dim).map(|_| StandardNormal.sample(rng)).collect()
    }

    /// ELBO loss for one sample; with `grad` set, accumulates `dL/dp`.
    /// `eps = None` runs the deterministic mean path.
    pub fn loss_grad(
        &self,
        p: &[f64],
        x: &[f64],
        c: &[f64],
        eps: Option<&[f64]>,
        beta: f64,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let t = self.run(p, x, c, eps.map(<[f64]>::to_vec));
        let loss = cvae_loss(x, &t.x_hat, &t.mu, &t.logvar, beta);
        if let Some(grad) = grad {
            let n = x.len() as f64;
            let d_xhat: Vec<f64> = t.x_hat.iter().zip(x).map(|(a, b)| 2.0 * (a - b) / n).collect();
            let d_dec_in = Self::mlp_backward(&self.decoder, &self.output, p, &t.dec, &d_xhat, grad);
            let dz = &d_dec_in[..self.arch.z_dim];
            let mut d_post = vec![0.0; 2 * self.arch.z_dim];
            for j in 0..self.arch.z_dim {
                let (mu, lv) = (t.mu[j], t.logvar[j]);
                d_post[j] = dz[j] + beta * mu;
                let mut dlv = beta * 0.5 * (lv.exp() - 1.0);
                if let Some(e) = &t.eps {
                    dlv += dz[j] * e[j] * 0.5 * (0.5 * lv).exp();
                }
                d_post[self.arch.z_dim + j] = dlv;
            }
            Self::mlp_backward(&self.encoder, &self.posterior, p, &t.enc, &d_post, grad);
        }
        loss
    }
}

/// KL divergence of `N(mu, exp(logvar))` from `N(0, I)`, summed over dims.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

/// Mean squared reconstruction error plus `beta` times the KL term.
pub fn cvae_loss(x: &[f64], x_hat: &[f64], mu: &[f64], logvar: &[f64], beta: f64) -> f64 {
    let mse = x.iter().zip(x_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
    mse + beta * kl_divergence(mu, logvar)
}
