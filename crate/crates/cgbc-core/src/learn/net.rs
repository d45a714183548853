//! Dense layers with manual backpropagation, sized for desk-scale runs.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::math;
use crate::rng::{seeded_rng, sub_seed};

/// Fully connected layer, `w` row-major `[out_dim x in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha20Rng) -> Self {
        // Xavier-uniform keeps activations in range for ReLU stacks this
        // shallow. Biases start small but strictly positive: a fully dead
        // ReLU row would otherwise produce an exactly-zero output vector,
        // which the cosine losses and the clustering boundary reject.
        let bound = math::sqrt(6.0 / (in_dim + out_dim) as f64);
        let w = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b = (0..out_dim).map(|_| rng.random_range(0.005..0.02)).collect();
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut y = self.b.clone();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            y[o] += math::dot(row, x);
        }
        y
    }

    /// Accumulates parameter gradients for one sample and returns the
    /// input gradient.
    pub fn backward(&self, x: &[f64], gy: &[f64], grads: &mut LinearGrads) -> Vec<f64> {
        let mut gx = alloc::vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let g = gy[o];
            grads.b[o] += g;
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grads.w[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                gx[i] += g * row[i];
            }
        }
        gx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearGrads {
    pub fn zeros_like(l: &Linear) -> Self {
        LinearGrads {
            w: alloc::vec![0.0; l.w.len()],
            b: alloc::vec![0.0; l.b.len()],
        }
    }
}

/// Two dense layers with ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

/// Per-sample activations kept for the backward pass.
pub struct Mlp2Cache {
    pub input: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl Mlp2 {
    pub fn init(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut ChaCha20Rng) -> Self {
        Mlp2 {
            l1: Linear::init(in_dim, hidden, rng),
            l2: Linear::init(hidden, out_dim, rng),
        }
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Mlp2Cache) {
        let hidden_pre = self.l1.forward(x);
        let hidden: Vec<f64> = hidden_pre.iter().map(|&v| v.max(0.0)).collect();
        let out = self.l2.forward(&hidden);
        (
            out,
            Mlp2Cache {
                input: x.to_vec(),
                hidden_pre,
                hidden,
            },
        )
    }

    pub fn backward(&self, cache: &Mlp2Cache, gy: &[f64], grads: &mut Mlp2Grads) -> Vec<f64> {
        let gh = self.l2.backward(&cache.hidden, gy, &mut grads.l2);
        let gh_pre: Vec<f64> = gh
            .iter()
            .zip(&cache.hidden_pre)
            .map(|(&g, &pre)| if pre > 0.0 { g } else { 0.0 })
            .collect();
        self.l1.backward(&cache.input, &gh_pre, &mut grads.l1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2Grads {
    pub l1: LinearGrads,
    pub l2: LinearGrads,
}

impl Mlp2Grads {
    pub fn zeros_like(m: &Mlp2) -> Self {
        Mlp2Grads {
            l1: LinearGrads::zeros_like(&m.l1),
            l2: LinearGrads::zeros_like(&m.l2),
        }
    }
}

/// Layer sizes: `feature -> hidden -> embed` for the encoder, the
/// predictor squeezes through `embed / 2`, the classifier maps to two
/// logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelDims {
    pub feature: usize,
    pub hidden: usize,
    pub embed: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            feature: super::features::DEFAULT_FEATURE_DIM,
            hidden: 128,
            embed: 64,
        }
    }
}

/// The whole model: a shared-weight encoder (both contrastive branches use
/// it), the predictor head for pretraining, and the classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub encoder: Mlp2,
    pub predictor: Mlp2,
    pub classifier: Linear,
}

impl ModelParams {
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut enc_rng = seeded_rng(sub_seed(seed, "init-encoder", 0));
        let mut pred_rng = seeded_rng(sub_seed(seed, "init-predictor", 0));
        let mut clf_rng = seeded_rng(sub_seed(seed, "init-classifier", 0));
        ModelParams {
            dims,
            encoder: Mlp2::init(dims.feature, dims.hidden, dims.embed, &mut enc_rng),
            predictor: Mlp2::init(dims.embed, (dims.embed / 2).max(1), dims.embed, &mut pred_rng),
            classifier: Linear::init(dims.embed, 2, &mut clf_rng),
        }
    }

    /// Plain gradient-descent update.
    pub fn step(&mut self, grads: &ModelGrads, lr: f64) {
        step_linear(&mut self.encoder.l1, &grads.encoder.l1, lr);
        step_linear(&mut self.encoder.l2, &grads.encoder.l2, lr);
        step_linear(&mut self.predictor.l1, &grads.predictor.l1, lr);
        step_linear(&mut self.predictor.l2, &grads.predictor.l2, lr);
        step_linear(&mut self.classifier, &grads.classifier, lr);
    }

    /// Flat parameter view, fixed order; used by checkpoints.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in [
            &self.encoder.l1,
            &self.encoder.l2,
            &self.predictor.l1,
            &self.predictor.l2,
            &self.classifier,
        ] {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    /// Inverse of [`flatten`]; the layout must match `dims`.
    pub fn unflatten(dims: ModelDims, data: &[f64]) -> Option<Self> {
        let mut model = ModelParams::init(dims, 0);
        let mut pos = 0;
        for l in [
            &mut model.encoder.l1,
            &mut model.encoder.l2,
            &mut model.predictor.l1,
            &mut model.predictor.l2,
            &mut model.classifier,
        ] {
            let wl = l.w.len();
            let bl = l.b.len();
            if pos + wl + bl > data.len() {
                return None;
            }
            l.w.copy_from_slice(&data[pos..pos + wl]);
            pos += wl;
            l.b.copy_from_slice(&data[pos..pos + bl]);
            pos += bl;
        }
        (pos == data.len()).then_some(model)
    }
}

fn step_linear(l: &mut Linear, g: &LinearGrads, lr: f64) {
    for (p, gr) in l.w.iter_mut().zip(&g.w) {
        *p -= lr * gr;
    }
    for (p, gr) in l.b.iter_mut().zip(&g.b) {
        *p -= lr * gr;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: Mlp2Grads,
    pub predictor: Mlp2Grads,
    pub classifier: LinearGrads,
}

impl ModelGrads {
    pub fn zeros_like(m: &ModelParams) -> Self {
        ModelGrads {
            encoder: Mlp2Grads::zeros_like(&m.encoder),
            predictor: Mlp2Grads::zeros_like(&m.predictor),
            classifier: LinearGrads::zeros_like(&m.classifier),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_backward_shapes_hold() {
        let dims = ModelDims { feature: 8, hidden: 6, embed: 4 };
        let m = ModelParams::init(dims, 1);
        let x = alloc::vec![0.5; 8];
        let (z, cache) = m.encoder.forward(&x);
        assert_eq!(z.len(), 4);
        let mut grads = Mlp2Grads::zeros_like(&m.encoder);
        let gx = m.encoder.backward(&cache, &alloc::vec![1.0; 4], &mut grads);
        assert_eq!(gx.len(), 8);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let dims = ModelDims { feature: 8, hidden: 6, embed: 4 };
        let a = ModelParams::init(dims, 7);
        let b = ModelParams::init(dims, 7);
        assert_eq!(a, b);
        let c = ModelParams::init(dims, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn flatten_round_trips() {
        let dims = ModelDims { feature: 5, hidden: 4, embed: 4 };
        let m = ModelParams::init(dims, 3);
        let flat = m.flatten();
        let back = ModelParams::unflatten(dims, &flat).unwrap();
        assert_eq!(m, back);
        assert!(ModelParams::unflatten(dims, &flat[..flat.len() - 1]).is_none());
    }

    #[test]
    fn linear_backward_matches_hand_derivative() {
        // y = Wx + b with known values.
        let l = Linear {
            w: alloc::vec![1.0, 2.0, 3.0, 4.0],
            b: alloc::vec![0.5, -0.5],
            in_dim: 2,
            out_dim: 2,
        };
        let x = [2.0, 1.0];
        let y = l.forward(&x);
        assert_eq!(y, alloc::vec![1.0 * 2.0 + 2.0 * 1.0 + 0.5, 3.0 * 2.0 + 4.0 * 1.0 - 0.5]);
        let mut g = LinearGrads::zeros_like(&l);
        let gx = l.backward(&x, &[1.0, 1.0], &mut g);
        assert_eq!(gx, alloc::vec![4.0, 6.0]); // column sums of W
        assert_eq!(g.b, alloc::vec![1.0, 1.0]);
        assert_eq!(g.w, alloc::vec![2.0, 1.0, 2.0, 1.0]);
    }
}
