//! Small fully connected networks and positional encodings with hand-written
//! reverse passes. Parameters are flat `f64` slices; layer `l` stores its
//! weight matrix (row-major, `out x in`) followed by its bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `[p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(L-1) pi p), cos(2^(L-1) pi p)]`
/// per coordinate block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionalEncoding {
    pub frequencies: usize,
}

impl PositionalEncoding {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * (1 + 2 * self.frequencies)
    }

    pub fn encode(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend_from_slice(x);
        let mut scale = std::f64::consts::PI;
        for _ in 0..self.frequencies {
            for &v in x {
                let (s, c) = (scale * v).sin_cos();
                out.push(s);
                out.push(c);
            }
            scale *= 2.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    /// Layer widths `[in, hidden..., out]`.
    sizes: Vec<usize>,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "invalid layer sizes {sizes:?}");
        Self { sizes }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Total length of the activation buffer filled by [`Mlp::forward`].
    pub fn activation_len(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// He-uniform hidden layers; the output layer is additionally scaled by
    /// `output_scale`. Biases start at zero.
    pub fn init(&self, seed: u64, output_scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Vec::with_capacity(self.param_count());
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let bound = (6.0 / w[0] as f64).sqrt() * if l == last { output_scale } else { 1.0 };
            for _ in 0..w[0] * w[1] {
                p.push(if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 });
            }
            p.extend(std::iter::repeat_n(0.0, w[1]));
        }
        p
    }

    /// Offset of the output layer's bias block within the parameters.
    pub fn output_bias_offset(&self) -> usize {
        self.param_count() - self.output_dim()
    }

    /// Evaluates the network; ReLU on hidden layers, linear output. `acts`
    /// receives the input and every layer's post-activation output, in order.
    pub fn forward<'a>(&self, params: &[f64], input: &[f64], acts: &'a mut Vec<f64>) -> &'a [f64] {
        debug_assert_eq!(input.len(), self.input_dim());
        acts.clear();
        acts.extend_from_slice(input);
        let mut off_p = 0;
        let mut off_in = 0;
        let n_layers = self.sizes.len() - 1;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &params[off_p..off_p + n_in * n_out];
            let b = &params[off_p + n_in * n_out..off_p + n_in * n_out + n_out];
            let start = acts.len();
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let x = &acts[off_in..off_in + n_in];
                let mut s = b[o];
                for (wi, xi) in row.iter().zip(x) {
                    s += wi * xi;
                }
                acts.push(if l + 1 < n_layers { s.max(0.0) } else { s });
            }
            off_p += n_in * n_out + n_out;
            off_in = start;
        }
        &acts[acts.len() - self.output_dim()..]
    }

    /// Accumulates `d_out`-weighted parameter gradients into `grad`, given the
    /// activations recorded by [`Mlp::forward`]. When `d_input` is given it
    /// receives the gradient with respect to the network input.
    pub fn backward(&self, params: &[f64], acts: &[f64], d_out: &[f64], grad: &mut [f64], d_input: Option<&mut [f64]>) {
        let n_layers = self.sizes.len() - 1;
        let mut act_off: Vec<usize> = Vec::with_capacity(self.sizes.len());
        let mut par_off: Vec<usize> = Vec::with_capacity(n_layers);
        let (mut a, mut p) = (0, 0);
        for l in 0..self.sizes.len() {
            act_off.push(a);
            a += self.sizes[l];
            if l < n_layers {
                par_off.push(p);
                p += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
            }
        }
        let mut delta: Vec<f64> = d_out.to_vec();
        let mut prev = Vec::new();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let x = &acts[act_off[l]..act_off[l] + n_in];
            let w = &params[par_off[l]..par_off[l] + n_in * n_out];
            let gw = par_off[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g = &mut grad[gw + o * n_in..gw + (o + 1) * n_in];
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += d * xi;
                }
                grad[gw + n_in * n_out + o] += d;
            }
            if l == 0 && d_input.is_none() {
                break;
            }
            prev.clear();
            prev.resize(n_in, 0.0);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (pi, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *pi += d * wi;
                }
            }
            if l > 0 {
                for (pi, xi) in prev.iter_mut().zip(x) {
                    if *xi <= 0.0 {
                        *pi = 0.0;
                    }
                }
            }
            std::mem::swap(&mut delta, &mut prev);
        }
        if let Some(d_in) = d_input {
            d_in.copy_from_slice(&delta[..self.input_dim()]);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}
