//! Map cross-attention, concat-linear fusion, input assembly and the
//! flattening decoder.
//!
//! ```text
//! h̃_t = W_O · MHA(W_Q b_t, W_K m, W_V m)
//! f_t = W_F [h̃_t ; b_t] + c
//! input = [prompt ; f_1 .. f_T]
//! τ̂ = reshape(W_D · vec(H_scene) + d, N × 2)
//! ```

use std::ops::Range;

use ndarray::concatenate;
use ndarray::Axis;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mat, ParamStore, Var};
use crate::nn::{attend_heads, Linear};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKvMode {
    /// Keys and values are the spatial grid tokens.
    #[default]
    Grid,
    /// A single key/value: the pooled map vector.
    Pooled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub heads: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { heads: 4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fusion {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub fuse: Linear,
}

impl Fusion {
    pub fn new(store: &mut ParamStore, config: FusionConfig, d_map: usize, d_llm: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if config.heads == 0 || d_llm % config.heads != 0 {
            return Err(Error::Config(format!(
                "fusion heads {} must divide d_llm {d_llm}",
                config.heads
            )));
        }
        Ok(Self {
            heads: config.heads,
            query: Linear::new(store, "fusion.query", d_llm, d_llm, true, rng),
            key: Linear::new(store, "fusion.key", d_map, d_llm, true, rng),
            value: Linear::new(store, "fusion.value", d_map, d_llm, true, rng),
            output: Linear::new(store, "fusion.output", d_llm, d_llm, true, rng),
            fuse: Linear::new(store, "fusion.fuse", 2 * d_llm, d_llm, true, rng),
        })
    }

    /// Scene tokens (`T × d_llm`) attend over map tokens (`G × d_map`,
    /// `G = 1` in pooled mode).
    pub fn cross_attend_map<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, tokens: Var, map: Var) -> Result<Var> {
        let (_, width) = g.shape(map);
        if width != self.key.input {
            return Err(Error::shape("map feature width", self.key.input, width));
        }
        let q = self.query.forward(g, store, tokens);
        let k = self.key.forward(g, store, map);
        let v = self.value.forward(g, store, map);
        let attended = attend_heads(g, q, k, v, self.heads);
        Ok(self.output.forward(g, store, attended))
    }

    pub fn fuse<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, attended: Var, tokens: Var) -> Result<Var> {
        let (a, b) = (g.shape(attended).0, g.shape(tokens).0);
        if a != b {
            return Err(Error::shape("fusion sequence length", b, a));
        }
        let both = g.concat_cols(&[attended, tokens]);
        Ok(self.fuse.forward(g, store, both))
    }
}

/// `[prompt ; fused]` and the positions of the fused rows.
pub fn assemble_input(prompt: &Mat, fused: &Mat, max_sequence_length: usize) -> Result<(Mat, Range<usize>)> {
    if prompt.ncols() != fused.ncols() && prompt.nrows() > 0 {
        return Err(Error::shape("prompt width", fused.ncols(), prompt.ncols()));
    }
    let total = prompt.nrows() + fused.nrows();
    if total > max_sequence_length {
        return Err(Error::SequenceLength {
            measured: total,
            allowed: max_sequence_length,
        });
    }
    let input = if prompt.nrows() == 0 {
        fused.clone()
    } else {
        concatenate(Axis(0), &[prompt.view(), fused.view()]).expect("widths checked")
    };
    Ok((input, prompt.nrows()..total))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub steps: usize,
    pub horizon: usize,
    pub d_llm: usize,
    pub linear: Linear,
}

impl Decoder {
    /// Weights uniform in `±1/√(T·d_llm)`, bias zero.
    pub fn new(store: &mut ParamStore, steps: usize, horizon: usize, d_llm: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            steps,
            horizon,
            d_llm,
            linear: Linear::new(store, "decoder", steps * d_llm, 2 * horizon, true, rng),
        }
    }

    /// `T × d_llm` hidden states to an `N × 2` trajectory.
    pub fn decode<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, hidden: Var) -> Result<Var> {
        let shape = g.shape(hidden);
        if shape != (self.steps, self.d_llm) {
            return Err(Error::shape(
                "decoder input",
                format!("{}×{}", self.steps, self.d_llm),
                format!("{}×{}", shape.0, shape.1),
            ));
        }
        let flat = g.reshape(hidden, 1, self.steps * self.d_llm);
        let out = self.linear.forward(g, store, flat);
        Ok(g.reshape(out, self.horizon, 2))
    }

    pub fn decode_values(&self, store: &ParamStore, hidden: &Mat) -> Result<Mat> {
        let mut g = Graph::new();
        let h = g.input(hidden.clone());
        let out = self.decode(&mut g, store, h)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::uniform;
    use rand::SeedableRng;

    fn fusion(d_map: usize, d_llm: usize, heads: usize) -> (ParamStore, Fusion) {
        let mut store = ParamStore::new();
        let f = Fusion::new(&mut store, FusionConfig { heads }, d_map, d_llm, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        (store, f)
    }

    fn attend_values(store: &ParamStore, f: &Fusion, tokens: &Mat, map: &Mat) -> Mat {
        let mut g = Graph::new();
        let t = g.input(tokens.clone());
        let m = g.input(map.clone());
        let out = f.cross_attend_map(&mut g, store, t, m).unwrap();
        g.value(out).clone()
    }

    fn rows_identical(m: &Mat) -> bool {
        m.rows().into_iter().all(|row| row.iter().zip(m.row(0).iter()).all(|(a, b)| (a - b).abs() < 1e-12))
    }

    #[test]
    fn pooled_mode_is_query_independent() {
        let (store, f) = fusion(6, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tokens = uniform(&mut rng, 4, 8, 3.0);
        let pooled = uniform(&mut rng, 1, 6, 1.0);
        let out = attend_values(&store, &f, &tokens, &pooled);
        assert_eq!(out.dim(), (4, 8));
        assert!(rows_identical(&out));
    }

    #[test]
    fn equal_grid_tokens_are_query_independent() {
        let (store, f) = fusion(6, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tokens = uniform(&mut rng, 4, 8, 3.0);
        let row = uniform(&mut rng, 1, 6, 1.0);
        let grid = Mat::from_shape_fn((9, 6), |(_, j)| row[[0, j]]);
        assert!(rows_identical(&attend_values(&store, &f, &tokens, &grid)));
        let varied = uniform(&mut rng, 9, 6, 1.0);
        assert!(!rows_identical(&attend_values(&store, &f, &tokens, &varied)));
    }

    #[test]
    fn heads_must_divide() {
        let r = Fusion::new(&mut ParamStore::new(), FusionConfig { heads: 3 }, 4, 8, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn fuse_is_local_and_bias_at_zero() {
        let (mut store, f) = fusion(6, 8, 2);
        let bias = uniform(&mut ChaCha8Rng::seed_from_u64(5), 1, 8, 1.0);
        *store.get_mut(f.fuse.bias.unwrap()) = bias.clone();
        let run = |a: &Mat, b: &Mat| {
            let mut g = Graph::new();
            let (a, b) = (g.input(a.clone()), g.input(b.clone()));
            let out = f.fuse(&mut g, &store, a, b).unwrap();
            g.value(out).clone()
        };
        let zero = run(&Mat::zeros((3, 8)), &Mat::zeros((3, 8)));
        for row in zero.rows() {
            assert_eq!(row, bias.row(0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (a, mut b) = (uniform(&mut rng, 3, 8, 1.0), uniform(&mut rng, 3, 8, 1.0));
        let before = run(&a, &b);
        b[[1, 4]] -= 2.0;
        let after = run(&a, &b);
        for t in 0..3 {
            assert_eq!(before.row(t) == after.row(t), t != 1);
        }
    }

    #[test]
    fn fuse_rejects_length_mismatch() {
        let (store, f) = fusion(6, 8, 2);
        let mut g = Graph::new();
        let a = g.input(Mat::zeros((3, 8)));
        let b = g.input(Mat::zeros((4, 8)));
        assert!(matches!(f.fuse(&mut g, &store, a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn assembly_offsets() {
        let fused = Mat::ones((4, 8));
        let (input, range) = assemble_input(&Mat::zeros((0, 8)), &fused, 64).unwrap();
        assert_eq!((input, range), (fused.clone(), 0..4));
        let (input, range) = assemble_input(&Mat::zeros((9, 8)), &fused, 64).unwrap();
        assert_eq!(range, 9..13);
        assert_eq!(input.nrows(), 13);
        assert!(matches!(
            assemble_input(&Mat::zeros((61, 8)), &fused, 64),
            Err(Error::SequenceLength { measured: 65, allowed: 64 })
        ));
    }

    #[test]
    fn decoder_is_affine() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dec = Decoder::new(&mut store, 4, 12, 8, &mut rng);
        let bias = uniform(&mut rng, 1, 24, 1.0);
        *store.get_mut(dec.linear.bias.unwrap()) = bias.clone();

        let zero = dec.decode_values(&store, &Mat::zeros((4, 8))).unwrap();
        assert_eq!(zero.dim(), (12, 2));
        assert_eq!(zero.iter().copied().collect::<Vec<_>>(), bias.iter().copied().collect::<Vec<_>>());

        let h1 = uniform(&mut rng, 4, 8, 2.0);
        let h2 = uniform(&mut rng, 4, 8, 2.0);
        let delta = uniform(&mut rng, 4, 8, 0.5);
        let d1 = dec.decode_values(&store, &(&h1 + &delta)).unwrap() - dec.decode_values(&store, &h1).unwrap();
        let d2 = dec.decode_values(&store, &(&h2 + &delta)).unwrap() - dec.decode_values(&store, &h2).unwrap();
        assert!((d1 - d2).iter().all(|x| x.abs() < 1e-9));

        assert!(matches!(dec.decode_values(&store, &Mat::zeros((3, 8))), Err(Error::Shape { .. })));
    }
}
