//! Configuration and trainable weights of the reference encoder-decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embed_dim: usize,
    /// Per direction; annotations are twice this size.
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    /// Width of the deep-output layer.
    pub out_dim: usize,
    pub max_target_len: usize,
    pub init_scale: f64,
    /// Global L2 cap applied to gradients before any update.
    pub clip_norm: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(src_vocab: usize, tgt_vocab: usize) -> Self {
        Self {
            src_vocab,
            tgt_vocab,
            embed_dim: 64,
            enc_hidden: 64,
            dec_hidden: 64,
            out_dim: 64,
            max_target_len: 64,
            init_scale: 0.1,
            clip_norm: 5.0,
            seed: 1,
        }
    }

    /// Same width for every layer.
    pub fn with_dims(mut self, dim: usize) -> Self {
        self.embed_dim = dim;
        self.enc_hidden = dim;
        self.dec_hidden = dim;
        self.out_dim = dim;
        self
    }

    pub fn annotation_dim(&self) -> usize {
        2 * self.enc_hidden
    }
}

/// Gated recurrent unit; the update, reset and candidate blocks are stacked
/// in that order along the rows of `w`, `u` and `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub w: Mat,
    pub u: Mat,
    pub b: Mat,
}

impl Gru {
    fn new(input: usize, hidden: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: Mat::uniform(3 * hidden, input, scale, rng),
            u: Mat::uniform(3 * hidden, hidden, scale, rng),
            b: Mat::zeros(3 * hidden, 1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.cols
    }

    fn zeros_like(&self) -> Self {
        Self {
            w: self.w.zeros_like(),
            u: self.u.zeros_like(),
            b: self.b.zeros_like(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub src_emb: Mat,
    pub enc_fwd: Gru,
    pub enc_bwd: Gru,
    pub init_w: Mat,
    pub init_b: Mat,
    pub tgt_emb: Mat,
    pub dec: Gru,
    /// Bilinear attention score sᵀ W h.
    pub att_w: Mat,
    pub out_s: Mat,
    pub out_z: Mat,
    pub out_u: Mat,
    pub out_b: Mat,
    pub proj_w: Mat,
    pub proj_b: Mat,
}

pub const TENSOR_NAMES: [&str; 20] = [
    "src_emb",
    "enc_fwd.w",
    "enc_fwd.u",
    "enc_fwd.b",
    "enc_bwd.w",
    "enc_bwd.u",
    "enc_bwd.b",
    "init_w",
    "init_b",
    "tgt_emb",
    "dec.w",
    "dec.u",
    "dec.b",
    "att_w",
    "out_s",
    "out_z",
    "out_u",
    "out_b",
    "proj_w",
    "proj_b",
];

impl ModelParams {
    pub fn init(config: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = config;
        let s = c.init_scale;
        let ann = c.annotation_dim();
        Self {
            config: c.clone(),
            src_emb: Mat::uniform(c.src_vocab, c.embed_dim, s, &mut rng),
            enc_fwd: Gru::new(c.embed_dim, c.enc_hidden, s, &mut rng),
            enc_bwd: Gru::new(c.embed_dim, c.enc_hidden, s, &mut rng),
            init_w: Mat::uniform(c.dec_hidden, ann, s, &mut rng),
            init_b: Mat::zeros(c.dec_hidden, 1),
            tgt_emb: Mat::uniform(c.tgt_vocab, c.embed_dim, s, &mut rng),
            dec: Gru::new(c.embed_dim + ann, c.dec_hidden, s, &mut rng),
            att_w: Mat::uniform(c.dec_hidden, ann, s, &mut rng),
            out_s: Mat::uniform(c.out_dim, c.dec_hidden, s, &mut rng),
            out_z: Mat::uniform(c.out_dim, ann, s, &mut rng),
            out_u: Mat::uniform(c.out_dim, c.embed_dim, s, &mut rng),
            out_b: Mat::zeros(c.out_dim, 1),
            proj_w: Mat::uniform(c.tgt_vocab, c.out_dim, s, &mut rng),
            proj_b: Mat::zeros(c.tgt_vocab, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            src_emb: self.src_emb.zeros_like(),
            enc_fwd: self.enc_fwd.zeros_like(),
            enc_bwd: self.enc_bwd.zeros_like(),
            init_w: self.init_w.zeros_like(),
            init_b: self.init_b.zeros_like(),
            tgt_emb: self.tgt_emb.zeros_like(),
            dec: self.dec.zeros_like(),
            att_w: self.att_w.zeros_like(),
            out_s: self.out_s.zeros_like(),
            out_z: self.out_z.zeros_like(),
            out_u: self.out_u.zeros_like(),
            out_b: self.out_b.zeros_like(),
            proj_w: self.proj_w.zeros_like(),
            proj_b: self.proj_b.zeros_like(),
        }
    }

    /// All tensors with their names, in checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        let mut names = TENSOR_NAMES.iter().copied();
        let mats = [
            &self.src_emb,
            &self.enc_fwd.w,
            &self.enc_fwd.u,
            &self.enc_fwd.b,
            &self.enc_bwd.w,
            &self.enc_bwd.u,
            &self.enc_bwd.b,
            &self.init_w,
            &self.init_b,
            &self.tgt_emb,
            &self.dec.w,
            &self.dec.u,
            &self.dec.b,
            &self.att_w,
            &self.out_s,
            &self.out_z,
            &self.out_u,
            &self.out_b,
            &self.proj_w,
            &self.proj_b,
        ];
        mats.into_iter().map(|m| (names.next().unwrap(), m)).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Mat)> {
        let mut names = TENSOR_NAMES.iter().copied();
        let mats = [
            &mut self.src_emb,
            &mut self.enc_fwd.w,
            &mut self.enc_fwd.u,
            &mut self.enc_fwd.b,
            &mut self.enc_bwd.w,
            &mut self.enc_bwd.u,
            &mut self.enc_bwd.b,
            &mut self.init_w,
            &mut self.init_b,
            &mut self.tgt_emb,
            &mut self.dec.w,
            &mut self.dec.u,
            &mut self.dec.b,
            &mut self.att_w,
            &mut self.out_s,
            &mut self.out_z,
            &mut self.out_u,
            &mut self.out_b,
            &mut self.proj_w,
            &mut self.proj_b,
        ];
        mats.into_iter().map(|m| (names.next().unwrap(), m)).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data.len()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, m)| m.sum_squares()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// self += alpha · other
    pub fn add_scaled(&mut self, alpha: f64, other: &ModelParams) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.data.iter_mut().zip(&src.data) {
                *d += alpha * s;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, m) in self.tensors_mut() {
            for v in &mut m.data {
                *v *= alpha;
            }
        }
    }

    /// Rescales to at most `max_norm` in global L2; returns the norm before.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.l2_norm();
        if max_norm > 0.0 && norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_config() {
        let mut c = ModelConfig::new(11, 13);
        c.embed_dim = 3;
        c.enc_hidden = 4;
        c.dec_hidden = 5;
        c.out_dim = 6;
        let p = ModelParams::init(&c);
        assert_eq!((p.src_emb.rows, p.src_emb.cols), (11, 3));
        assert_eq!((p.enc_fwd.w.rows, p.enc_fwd.w.cols), (12, 3));
        assert_eq!((p.dec.w.rows, p.dec.w.cols), (15, 3 + 8));
        assert_eq!((p.att_w.rows, p.att_w.cols), (5, 8));
        assert_eq!((p.proj_w.rows, p.proj_w.cols), (13, 6));
        assert_eq!(p.tensors().len(), 20);
        assert!(p.is_finite());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let c = ModelConfig::new(5, 5).with_dims(4);
        assert_eq!(ModelParams::init(&c), ModelParams::init(&c));
        let mut other = c.clone();
        other.seed = 2;
        assert_ne!(ModelParams::init(&c), ModelParams::init(&other));
    }

    #[test]
    fn clipping_caps_global_norm() {
        let c = ModelConfig::new(5, 5).with_dims(4);
        let mut p = ModelParams::init(&c);
        p.scale(100.0);
        let before = p.clip_norm(5.0);
        assert!(before > 5.0);
        assert!((p.l2_norm() - 5.0).abs() < 1e-9);
    }
}
