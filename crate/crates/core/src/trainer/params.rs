use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action_model::AttentionParams;
use crate::belief_graph::{PairwiseHead, UnaryHead};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::inference::InferenceParams;

/// Every trainable scalar of the model: the generative heads (unary,
/// pairwise, attention) and the inference head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub unary: UnaryHead,
    pub pairwise: PairwiseHead,
    pub attention: AttentionParams,
    pub inference: InferenceParams,
}

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub segments: Vec<Segment>,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        let dk = cfg.attn_dim;
        let sizes = [
            ("unary.w", d),
            ("unary.beta", 1),
            ("pairwise.w", d),
            ("pairwise.beta", 1),
            ("attention.w_q", d * dk),
            ("attention.w_k", d * dk),
            ("attention.w_v", d * dk),
            ("attention.w_a", dk),
            ("attention.beta_a", 1),
            ("inference.w", d),
            ("inference.bias", 1),
        ];
        let mut offset = 0;
        let segments = sizes
            .iter()
            .map(|&(name, len)| {
                let s = Segment { name, offset, len };
                offset += len;
                s
            })
            .collect();
        ParamLayout { segments }
    }

    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment(&self, name: &str) -> Option<Segment> {
        self.segments.iter().copied().find(|s| s.name == name)
    }

    /// Name of the segment holding flat index `idx`.
    pub fn name_of(&self, idx: usize) -> Option<&'static str> {
        self.segments
            .iter()
            .find(|s| idx >= s.offset && idx < s.offset + s.len)
            .map(|s| s.name)
    }
}

fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
}

impl ParamSet {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        ParamSet {
            unary: UnaryHead { w: vec![0.0; d], beta: 0.0 },
            pairwise: PairwiseHead { w: vec![0.0; d], beta: 0.0 },
            attention: AttentionParams::zeros(d, cfg.attn_dim),
            inference: InferenceParams { w: vec![0.0; d], bias: 0.0 },
        }
    }

    /// Seeded uniform initialization scaled by fan-in; biases start at zero.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let d = cfg.embed_dim;
        let dk = cfg.attn_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = 1.0 / (d as f64).sqrt();
        let sk = 1.0 / (dk as f64).sqrt();
        let mut vec_of = |n: usize, s: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-s..s)).collect() };
        let unary_w = vec_of(d, 0.1 * sd);
        let pairwise_w = vec_of(d, 0.1 * sd);
        let w_q = vec_of(d * dk, sd);
        let w_k = vec_of(d * dk, sd);
        let w_v = vec_of(d * dk, sd);
        let w_a = vec_of(dk, sk);
        let inf_w = vec_of(d, 0.1 * sd);
        ParamSet {
            unary: UnaryHead { w: unary_w, beta: 0.0 },
            pairwise: PairwiseHead { w: pairwise_w, beta: 0.0 },
            attention: AttentionParams {
                w_q: DMatrix::from_row_slice(d, dk, &w_q),
                w_k: DMatrix::from_row_slice(d, dk, &w_k),
                w_v: DMatrix::from_row_slice(d, dk, &w_v),
                w_a: DVector::from_vec(w_a),
                beta_a: 0.0,
            },
            inference: InferenceParams { w: inf_w, bias: 0.0 },
        }
    }

    /// Flat vector in [`ParamLayout`] order, matrices row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.unary.w);
        out.push(self.unary.beta);
        out.extend_from_slice(&self.pairwise.w);
        out.push(self.pairwise.beta);
        push_row_major(&mut out, &self.attention.w_q);
        push_row_major(&mut out, &self.attention.w_k);
        push_row_major(&mut out, &self.attention.w_v);
        out.extend(self.attention.w_a.iter());
        out.push(self.attention.beta_a);
        out.extend_from_slice(&self.inference.w);
        out.push(self.inference.bias);
        out
    }

    pub fn unflatten(cfg: &ModelConfig, flat: &[f64]) -> Result<Self> {
        let layout = ParamLayout::new(cfg);
        if flat.len() != layout.len() {
            return Err(Error::Dimension {
                context: "flat parameter vector",
                expected: layout.len(),
                found: flat.len(),
            });
        }
        let (d, dk) = (cfg.embed_dim, cfg.attn_dim);
        let seg = |name: &str| {
            let s = layout.segment(name).expect("known segment");
            &flat[s.offset..s.offset + s.len]
        };
        Ok(ParamSet {
            unary: UnaryHead { w: seg("unary.w").to_vec(), beta: seg("unary.beta")[0] },
            pairwise: PairwiseHead { w: seg("pairwise.w").to_vec(), beta: seg("pairwise.beta")[0] },
            attention: AttentionParams {
                w_q: DMatrix::from_row_slice(d, dk, seg("attention.w_q")),
                w_k: DMatrix::from_row_slice(d, dk, seg("attention.w_k")),
                w_v: DMatrix::from_row_slice(d, dk, seg("attention.w_v")),
                w_a: DVector::from_column_slice(seg("attention.w_a")),
                beta_a: seg("attention.beta_a")[0],
            },
            inference: InferenceParams { w: seg("inference.w").to_vec(), bias: seg("inference.bias")[0] },
        })
    }

    pub fn check_shape(&self, cfg: &ModelConfig) -> Result<()> {
        let d = cfg.embed_dim;
        let dk = cfg.attn_dim;
        let ok = self.unary.w.len() == d
            && self.pairwise.w.len() == d
            && self.inference.w.len() == d
            && self.attention.w_q.shape() == (d, dk)
            && self.attention.w_k.shape() == (d, dk)
            && self.attention.w_v.shape() == (d, dk)
            && self.attention.w_a.len() == dk;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("parameter shapes do not match d={d}, d_k={dk}")))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_contiguous() {
        let cfg = ModelConfig::unmasked(3, 2, 3, 8, 4);
        let layout = ParamLayout::new(&cfg);
        assert_eq!(layout.len(), 8 + 1 + 8 + 1 + 3 * 32 + 4 + 1 + 8 + 1);
        let mut next = 0;
        for s in &layout.segments {
            assert_eq!(s.offset, next);
            next += s.len;
        }
        assert_eq!(layout.name_of(18), Some("attention.w_q"));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::unmasked(3, 2, 3, 8, 4);
        assert_eq!(ParamSet::init(&cfg, 1), ParamSet::init(&cfg, 1));
        assert_ne!(ParamSet::init(&cfg, 1), ParamSet::init(&cfg, 2));
    }

    proptest! {
        #[test]
        fn flatten_round_trips(seed in 0u64..1000, d in 1usize..6, dk in 1usize..4) {
            let cfg = ModelConfig::unmasked(2, 1, 2, d, dk);
            let p = ParamSet::init(&cfg, seed);
            let flat = p.flatten();
            prop_assert_eq!(flat.len(), ParamLayout::new(&cfg).len());
            let back = ParamSet::unflatten(&cfg, &flat).unwrap();
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(back.flatten(), flat);
        }
    }
}
