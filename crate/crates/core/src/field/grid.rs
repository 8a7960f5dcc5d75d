//! Dense multiresolution grid encoding: per level, trilinear interpolation of
//! `features` values stored at the `(R + 1)^3` lattice vertices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridEncoding {
    resolutions: Vec<usize>,
    features: usize,
    offsets: Vec<usize>,
    total: usize,
}

impl GridEncoding {
    pub fn new(resolutions: &[usize], features: usize) -> Self {
        let mut offsets = Vec::with_capacity(resolutions.len());
        let mut total = 0;
        for &r in resolutions {
            offsets.push(total);
            total += (r + 1).pow(3) * features;
        }
        Self { resolutions: resolutions.to_vec(), features, offsets, total }
    }

    pub fn param_count(&self) -> usize {
        self.total
    }

    pub fn output_dim(&self) -> usize {
        self.resolutions.len() * self.features
    }

    pub fn init(&self, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.total).map(|_| rng.gen_range(-scale..=scale)).collect()
    }

    /// Encodes `u` in `[0, 1]^3`. `corners` receives, per level, eight
    /// `(first parameter index, weight)` pairs used by [`GridEncoding::backward`].
    pub fn encode(&self, u: &[f64; 3], params: &[f64], out: &mut Vec<f64>, corners: &mut Vec<(usize, f64)>) {
        corners.clear();
        let f = self.features;
        for (level, &r) in self.resolutions.iter().enumerate() {
            let mut base = [0usize; 3];
            let mut frac = [0f64; 3];
            for a in 0..3 {
                let x = u[a].clamp(0.0, 1.0) * r as f64;
                let i = (x.floor() as usize).min(r - 1);
                base[a] = i;
                frac[a] = x - i as f64;
            }
            let stride = r + 1;
            let start = out.len();
            out.extend(std::iter::repeat_n(0.0, f));
            for c in 0..8 {
                let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
                let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                    * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                    * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
                let vertex = (base[0] + dx) + stride * ((base[1] + dy) + stride * (base[2] + dz));
                let idx = self.offsets[level] + vertex * f;
                for k in 0..f {
                    out[start + k] += w * params[idx + k];
                }
                corners.push((idx, w));
            }
        }
    }

    pub fn backward(&self, corners: &[(usize, f64)], d_out: &[f64], grad: &mut [f64]) {
        let f = self.features;
        for (level, chunk) in corners.chunks(8).enumerate() {
            let d = &d_out[level * f..(level + 1) * f];
            for &(idx, w) in chunk {
                for k in 0..f {
                    grad[idx + k] += w * d[k];
                }
            }
        }
    }
}
