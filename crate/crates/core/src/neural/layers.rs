//! Stateless layers over a flat parameter vector.
//!
//! Every layer holds an `offset` into its model's `Vec<f64>` of
//! parameters. Forward passes read parameters from that slice; backward
//! passes accumulate into a gradient slice of identical layout. Models keep
//! their own activations for the backward pass.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Hands out contiguous parameter ranges while a model is being assembled.
#[derive(Debug, Default)]
pub struct ParamLayout {
    len: usize,
}

impl ParamLayout {
    pub fn alloc(&mut self, n: usize) -> usize {
        let offset = self.len;
        self.len += n;
        offset
    }

    pub fn len(&self) -> usize {
        self.len
    }
}

fn uniform_fill<R: Rng>(slice: &mut [f64], bound: f64, rng: &mut R) {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    for v in slice {
        *v = dist.sample(rng);
    }
}

/// Fully connected layer, `W` stored row-major `[out][inp]`, then `b[out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub inp: usize,
    pub out: usize,
    pub offset: usize,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, inp: usize, out: usize) -> Self {
        let offset = layout.alloc(inp * out + out);
        Linear { inp, out, offset }
    }

    fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.offset..self.offset + self.inp * self.out]
    }

    fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.inp * self.out;
        &p[start..start + self.out]
    }

    pub fn init<R: Rng>(&self, p: &mut [f64], rng: &mut R) {
        let bound = (6.0 / (self.inp + self.out) as f64).sqrt();
        uniform_fill(&mut p[self.offset..self.offset + self.inp * self.out], bound, rng);
        let start = self.offset + self.inp * self.out;
        p[start..start + self.out].fill(0.0);
    }

    pub fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inp);
        let w = self.weights(p);
        for ((yo, row), b) in y.iter_mut().zip(w.chunks_exact(self.inp)).zip(self.bias(p)) {
            *yo = b + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients; writes (overwrites) `dx` if given.
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        let wlen = self.inp * self.out;
        {
            let gw = &mut grad[self.offset..self.offset + wlen];
            for (row, &d) in gw.chunks_exact_mut(self.inp).zip(dy) {
                if d != 0.0 {
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
        }
        for (g, d) in grad[self.offset + wlen..self.offset + wlen + self.out].iter_mut().zip(dy) {
            *g += d;
        }
        if let Some(dx) = dx {
            dx.fill(0.0);
            for (row, &d) in self.weights(p).chunks_exact(self.inp).zip(dy) {
                if d != 0.0 {
                    for (o, w) in dx.iter_mut().zip(row) {
                        *o += d * w;
                    }
                }
            }
        }
    }
}

/// ELU with alpha = 1, applied in place.
pub fn elu_inplace(v: &mut [f64]) {
    for x in v {
        if *x <= 0.0 {
            *x = x.exp_m1();
        }
    }
}

/// Multiplies `d` by the ELU derivative, recovered from the activation output.
pub fn elu_backward(out: &[f64], d: &mut [f64]) {
    for (g, &y) in d.iter_mut().zip(out) {
        if y <= 0.0 {
            *g *= y + 1.0;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// 1-D convolution along time with channels-first layout `[channels][time]`.
/// Kernel stored `[out][inp][kernel]`, then `b[out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1d {
    pub inp: usize,
    pub out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub offset: usize,
}

impl Conv1d {
    pub fn new(layout: &mut ParamLayout, inp: usize, out: usize, kernel: usize, stride: usize, t_in: usize) -> Self {
        let pad = kernel / 2;
        let t_out = (t_in + 2 * pad - kernel) / stride + 1;
        let offset = layout.alloc(out * inp * kernel + out);
        Conv1d {
            inp,
            out,
            kernel,
            stride,
            pad,
            t_in,
            t_out,
            offset,
        }
    }

    fn wlen(&self) -> usize {
        self.out * self.inp * self.kernel
    }

    pub fn init<R: Rng>(&self, p: &mut [f64], rng: &mut R) {
        let fan_in = (self.inp * self.kernel) as f64;
        let fan_out = (self.out * self.kernel) as f64;
        let bound = (6.0 / (fan_in + fan_out)).sqrt();
        uniform_fill(&mut p[self.offset..self.offset + self.wlen()], bound, rng);
        let b = self.offset + self.wlen();
        p[b..b + self.out].fill(0.0);
    }

    /// Range of output steps `to` for which `to*stride + k - pad` is a valid input index.
    #[inline]
    fn valid_range(&self, k: usize) -> (usize, usize) {
        // to*stride + k >= pad  and  to*stride + k - pad < t_in
        let lo = if k >= self.pad { 0 } else { (self.pad - k).div_ceil(self.stride) };
        let limit = self.t_in + self.pad - k; // to*stride < limit
        let hi = limit.div_ceil(self.stride).min(self.t_out);
        (lo, hi.max(lo))
    }

    pub fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        let w = &p[self.offset..self.offset + self.wlen()];
        let b = &p[self.offset + self.wlen()..self.offset + self.wlen() + self.out];
        for co in 0..self.out {
            let yrow = &mut y[co * self.t_out..(co + 1) * self.t_out];
            yrow.fill(b[co]);
            for ci in 0..self.inp {
                let xrow = &x[ci * self.t_in..(ci + 1) * self.t_in];
                let wk = &w[(co * self.inp + ci) * self.kernel..(co * self.inp + ci + 1) * self.kernel];
                for (k, &wv) in wk.iter().enumerate() {
                    let (lo, hi) = self.valid_range(k);
                    if self.stride == 1 {
                        let shift = k as isize - self.pad as isize;
                        let xs = &xrow[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                        for (yo, xv) in yrow[lo..hi].iter_mut().zip(xs) {
                            *yo += wv * xv;
                        }
                    } else {
                        for to in lo..hi {
                            yrow[to] += wv * xrow[to * self.stride + k - self.pad];
                        }
                    }
                }
            }
        }
    }

    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], mut dx: Option<&mut [f64]>) {
        let wlen = self.wlen();
        if let Some(dx) = dx.as_deref_mut() {
            dx.fill(0.0);
        }
        for co in 0..self.out {
            let drow = &dy[co * self.t_out..(co + 1) * self.t_out];
            grad[self.offset + wlen + co] += drow.iter().sum::<f64>();
            for ci in 0..self.inp {
                let xrow = &x[ci * self.t_in..(ci + 1) * self.t_in];
                let base = (co * self.inp + ci) * self.kernel;
                for k in 0..self.kernel {
                    let (lo, hi) = self.valid_range(k);
                    let mut gw = 0.0;
                    for to in lo..hi {
                        gw += drow[to] * xrow[to * self.stride + k - self.pad];
                    }
                    grad[self.offset + base + k] += gw;
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = p[self.offset + base + k];
                        let dxrow = &mut dx[ci * self.t_in..(ci + 1) * self.t_in];
                        for to in lo..hi {
                            dxrow[to * self.stride + k - self.pad] += wv * drow[to];
                        }
                    }
                }
            }
        }
    }
}

/// Gated recurrent unit (reset, update, candidate gate order).
///
/// `r = σ(W_ir x + b_ir + W_hr h + b_hr)`,
/// `z = σ(W_iz x + b_iz + W_hz h + b_hz)`,
/// `n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))`,
/// `h' = (1 - z) ⊙ n + z ⊙ h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gru {
    pub inp: usize,
    pub hidden: usize,
    pub offset: usize,
}

/// Activations of one GRU step kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct GruStep {
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
}

impl Gru {
    pub fn new(layout: &mut ParamLayout, inp: usize, hidden: usize) -> Self {
        let offset = layout.alloc(3 * hidden * inp + 3 * hidden * hidden + 6 * hidden);
        Gru { inp, hidden, offset }
    }

    fn w_ih(&self) -> usize {
        self.offset
    }
    fn w_hh(&self) -> usize {
        self.w_ih() + 3 * self.hidden * self.inp
    }
    fn b_ih(&self) -> usize {
        self.w_hh() + 3 * self.hidden * self.hidden
    }
    fn b_hh(&self) -> usize {
        self.b_ih() + 3 * self.hidden
    }
    fn end(&self) -> usize {
        self.b_hh() + 3 * self.hidden
    }

    pub fn init<R: Rng>(&self, p: &mut [f64], rng: &mut R) {
        let bound = 1.0 / (self.hidden as f64).sqrt();
        uniform_fill(&mut p[self.offset..self.end()], bound, rng);
    }

    fn matvec(w: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
        for (yo, row) in y.iter_mut().zip(w.chunks_exact(cols)) {
            *yo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Runs the sequence `xs` (each of length `inp`) from a zero state and
    /// returns the final hidden state plus per-step activations.
    pub fn forward(&self, p: &[f64], xs: &[Vec<f64>]) -> (Vec<f64>, Vec<GruStep>) {
        let h_dim = self.hidden;
        let w_ih = &p[self.w_ih()..self.w_hh()];
        let w_hh = &p[self.w_hh()..self.b_ih()];
        let b_ih = &p[self.b_ih()..self.b_hh()];
        let b_hh = &p[self.b_hh()..self.end()];
        let mut h = vec![0.0; h_dim];
        let mut steps = Vec::with_capacity(xs.len());
        let mut gi = vec![0.0; 3 * h_dim];
        let mut gh = vec![0.0; 3 * h_dim];
        for x in xs {
            gi.copy_from_slice(b_ih);
            Self::matvec(w_ih, self.inp, x, &mut gi);
            gh.copy_from_slice(b_hh);
            Self::matvec(w_hh, h_dim, &h, &mut gh);
            let mut step = GruStep {
                h_prev: h.clone(),
                r: vec![0.0; h_dim],
                z: vec![0.0; h_dim],
                n: vec![0.0; h_dim],
                hn: gh[2 * h_dim..].to_vec(),
            };
            for j in 0..h_dim {
                let r = sigmoid(gi[j] + gh[j]);
                let z = sigmoid(gi[h_dim + j] + gh[h_dim + j]);
                let n = (gi[2 * h_dim + j] + r * gh[2 * h_dim + j]).tanh();
                step.r[j] = r;
                step.z[j] = z;
                step.n[j] = n;
                h[j] = (1.0 - z) * n + z * h[j];
            }
            steps.push(step);
        }
        (h, steps)
    }

    /// Backpropagates `dh_last` through time. Returns per-step input gradients.
    pub fn backward(&self, p: &[f64], xs: &[Vec<f64>], steps: &[GruStep], dh_last: &[f64], grad: &mut [f64]) -> Vec<Vec<f64>> {
        let h_dim = self.hidden;
        let (o_ih, o_hh, o_bih, o_bhh) = (self.w_ih(), self.w_hh(), self.b_ih(), self.b_hh());
        let mut dh = dh_last.to_vec();
        let mut dxs = vec![vec![0.0; self.inp]; xs.len()];
        let mut a = vec![0.0; 3 * h_dim];
        let mut hgrad = vec![0.0; 3 * h_dim];
        for t in (0..xs.len()).rev() {
            let s = &steps[t];
            let mut dh_prev = vec![0.0; h_dim];
            for j in 0..h_dim {
                let (r, z, n) = (s.r[j], s.z[j], s.n[j]);
                let dn = dh[j] * (1.0 - z);
                let dz = dh[j] * (s.h_prev[j] - n);
                dh_prev[j] = dh[j] * z;
                let dn_pre = dn * (1.0 - n * n);
                let dr_pre = dn_pre * s.hn[j] * r * (1.0 - r);
                let dz_pre = dz * z * (1.0 - z);
                a[j] = dr_pre;
                a[h_dim + j] = dz_pre;
                a[2 * h_dim + j] = dn_pre;
                hgrad[j] = dr_pre;
                hgrad[h_dim + j] = dz_pre;
                hgrad[2 * h_dim + j] = dn_pre * r;
            }
            let x = &xs[t];
            for g in 0..3 * h_dim {
                let ag = a[g];
                let hg = hgrad[g];
                grad[o_bih + g] += ag;
                grad[o_bhh + g] += hg;
                if ag != 0.0 {
                    let row = &p[o_ih + g * self.inp..o_ih + (g + 1) * self.inp];
                    let grow = &mut grad[o_ih + g * self.inp..o_ih + (g + 1) * self.inp];
                    for ((gw, xi), (dx, w)) in grow.iter_mut().zip(x).zip(dxs[t].iter_mut().zip(row)) {
                        *gw += ag * xi;
                        *dx += ag * w;
                    }
                }
                if hg != 0.0 {
                    let row = &p[o_hh + g * h_dim..o_hh + (g + 1) * h_dim];
                    let grow = &mut grad[o_hh + g * h_dim..o_hh + (g + 1) * h_dim];
                    for ((gw, hp), (dp, w)) in grow.iter_mut().zip(&s.h_prev).zip(dh_prev.iter_mut().zip(row)) {
                        *gw += hg * hp;
                        *dp += hg * w;
                    }
                }
            }
            dh = dh_prev;
        }
        dxs
    }
}
