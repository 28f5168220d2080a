//! Shared building blocks: affine layers and seeded initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Mat, ParamId, ParamStore, Var};

/// Uniform in `[-bound, bound]`.
pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..=bound))
}

/// `x ↦ x·W + b` on row vectors, `W` is `in × out`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Weights uniform in `±1/√input`; bias zero.
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, input, output, bound));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Mat::zeros((1, output))));
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Single-head scaled dot-product attention of `queries` over `keys`/`values`
/// (already projected). Returns `(output, weights)`.
pub fn attend(g: &mut Graph<'_>, queries: Var, keys: Var, values: Var) -> (Var, Var) {
    let width = g.shape(queries).1 as f64;
    let scores = g.matmul_t(queries, keys);
    let scores = g.scale(scores, 1.0 / width.sqrt());
    let weights = g.softmax(scores);
    (g.matmul(weights, values), weights)
}

/// Multi-head attention: the projected width is split evenly across heads.
pub fn attend_heads(g: &mut Graph<'_>, queries: Var, keys: Var, values: Var, heads: usize) -> Var {
    let width = g.shape(queries).1;
    let head_width = width / heads;
    let outs: Vec<Var> = (0..heads)
        .map(|h| {
            let q = g.slice_cols(queries, h * head_width, head_width);
            let k = g.slice_cols(keys, h * head_width, head_width);
            let v = g.slice_cols(values, h * head_width, head_width);
            attend(g, q, k, v).0
        })
        .collect();
    if outs.len() == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)
    }
}
