//! Frozen transformer backbones.
//!
//! A backbone exposes its vocabulary table, a tokenizer, and a causal
//! forward pass built on the caller's [`Graph`], so gradients reach the
//! trainable components feeding it while its own weights stay constants.
//!
//! Because the forward pass is causal and the prompt is fixed, the prompt's
//! per-layer keys and values can be computed once ([`PrefixState`]) and
//! reused for every scene; [`Backbone::forward_suffix`] then only processes
//! the scene positions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Mat, Var};
use crate::nn::uniform;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    /// e.g. `toy-v1`, or an external model name.
    pub identity: String,
    pub d_llm: usize,
    pub vocab_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_sequence_length: usize,
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.d_llm, self.vocab_size, self.layers, self.heads, self.max_sequence_length];
        if dims.contains(&0) {
            return Err(Error::Config(format!("backbone dimensions must be positive: {self:?}")));
        }
        if self.d_llm % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_llm {} is not divisible by {} heads",
                self.d_llm, self.heads
            )));
        }
        Ok(())
    }
}

/// Cached per-layer, per-head keys and values of a fixed prefix.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrefixState {
    pub len: usize,
    /// `keys[layer][head]` is `len × head_width`.
    pub keys: Vec<Vec<Mat>>,
    pub values: Vec<Vec<Mat>>,
}

pub trait Backbone: Send + Sync {
    fn spec(&self) -> &BackboneSpec;

    /// `V × d_llm`, read-only.
    fn vocab_embeddings(&self) -> &Mat;

    fn tokenize(&self, text: &str) -> Vec<usize>;

    /// Keys and values of `prefix` (`len × d_llm` input embeddings).
    fn prefix_state(&self, prefix: &Mat) -> Result<PrefixState>;

    /// Hidden states of `x` (`n × d_llm` input embeddings placed right after
    /// the prefix). Output is `n × d_llm`, final layer, causal.
    fn forward_suffix<'a>(&'a self, g: &mut Graph<'a>, prefix: &'a PrefixState, x: Var) -> Result<Var>;

    /// Digest over all parameters in a canonical order.
    fn parameter_checksum(&self) -> String;
}

/// Embeds `text` with the backbone's tokenizer. `reserved` positions
/// (the scene tokens) must still fit after the prompt.
pub fn embed_prompt(backbone: &dyn Backbone, text: &str, reserved: usize) -> Result<Mat> {
    let tokens = backbone.tokenize(text);
    let spec = backbone.spec();
    let allowed = spec.max_sequence_length.saturating_sub(reserved);
    if tokens.len() > allowed {
        return Err(Error::SequenceLength {
            measured: tokens.len(),
            allowed,
        });
    }
    let table = backbone.vocab_embeddings();
    let mut out = Mat::zeros((tokens.len(), spec.d_llm));
    for (mut row, &tok) in out.rows_mut().into_iter().zip(&tokens) {
        row.assign(&table.row(tok));
    }
    Ok(out)
}

/// Full forward pass over an embedded sequence, outside any training graph.
pub fn forward(backbone: &dyn Backbone, sequence: &Mat) -> Result<Mat> {
    let empty = PrefixState::default();
    let mut g = Graph::new();
    let x = g.input(sequence.clone());
    let h = backbone.forward_suffix(&mut g, &empty, x)?;
    Ok(g.value(h).clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyBackboneConfig {
    pub seed: u64,
    pub d_llm: usize,
    pub layers: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub max_sequence_length: usize,
    pub ffn_width: usize,
}

impl Default for ToyBackboneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d_llm: 64,
            layers: 2,
            heads: 4,
            vocab_size: 256,
            max_sequence_length: 256,
            ffn_width: 256,
        }
    }
}

struct ToyLayer {
    ln1_gain: Mat,
    ln1_shift: Mat,
    w_q: Mat,
    w_k: Mat,
    w_v: Mat,
    w_o: Mat,
    ln2_gain: Mat,
    ln2_shift: Mat,
    ffn_in: Mat,
    ffn_in_bias: Mat,
    ffn_out: Mat,
    ffn_out_bias: Mat,
}

impl ToyLayer {
    fn tensors(&self) -> [&Mat; 12] {
        [
            &self.ln1_gain,
            &self.ln1_shift,
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_o,
            &self.ln2_gain,
            &self.ln2_shift,
            &self.ffn_in,
            &self.ffn_in_bias,
            &self.ffn_out,
            &self.ffn_out_bias,
        ]
    }
}

const LN_EPS: f64 = 1e-5;

/// Byte-level pre-LN decoder with seeded random weights that are never
/// trained. There is no final normalization: the last block's residual
/// stream is the hidden state.
pub struct ToyBackbone {
    spec: BackboneSpec,
    config: ToyBackboneConfig,
    vocab: Mat,
    positions: Mat,
    layers: Vec<ToyLayer>,
}

impl ToyBackbone {
    pub const IDENTITY: &'static str = "toy-v1";

    pub fn new(config: ToyBackboneConfig) -> Result<Self> {
        let spec = BackboneSpec {
            identity: Self::IDENTITY.into(),
            d_llm: config.d_llm,
            vocab_size: config.vocab_size,
            layers: config.layers,
            heads: config.heads,
            max_sequence_length: config.max_sequence_length,
        };
        spec.validate()?;
        if config.ffn_width == 0 {
            return Err(Error::Config("ffn_width must be positive".into()));
        }
        let d = config.d_llm;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        // unit-variance uniform
        let vocab = uniform(&mut rng, config.vocab_size, d, 3f64.sqrt());
        let positions = uniform(&mut rng, config.max_sequence_length, d, 0.3);
        let proj = 1.0 / (d as f64).sqrt();
        let layers = (0..config.layers)
            .map(|_| ToyLayer {
                ln1_gain: Mat::ones((1, d)),
                ln1_shift: Mat::zeros((1, d)),
                w_q: uniform(&mut rng, d, d, proj * 3f64.sqrt()),
                w_k: uniform(&mut rng, d, d, proj * 3f64.sqrt()),
                w_v: uniform(&mut rng, d, d, proj * 3f64.sqrt()),
                w_o: uniform(&mut rng, d, d, proj),
                ln2_gain: Mat::ones((1, d)),
                ln2_shift: Mat::zeros((1, d)),
                ffn_in: uniform(&mut rng, d, config.ffn_width, proj * 3f64.sqrt()),
                ffn_in_bias: uniform(&mut rng, 1, config.ffn_width, 0.1),
                ffn_out: uniform(&mut rng, config.ffn_width, d, 1.0 / (config.ffn_width as f64).sqrt()),
                ffn_out_bias: Mat::zeros((1, d)),
            })
            .collect();
        Ok(Self {
            spec,
            config,
            vocab,
            positions,
            layers,
        })
    }

    pub fn config(&self) -> &ToyBackboneConfig {
        &self.config
    }

    fn head_width(&self) -> usize {
        self.spec.d_llm / self.spec.heads
    }

    fn check_len(&self, total: usize) -> Result<()> {
        if total > self.spec.max_sequence_length {
            return Err(Error::SequenceLength {
                measured: total,
                allowed: self.spec.max_sequence_length,
            });
        }
        Ok(())
    }

    fn check_width(&self, cols: usize) -> Result<()> {
        if cols != self.spec.d_llm {
            return Err(Error::shape("backbone input width", self.spec.d_llm, cols));
        }
        Ok(())
    }

    // Runs all layers on the graph. Returns the output and, per layer, the
    // per-head keys/values of these positions.
    fn run<'a>(
        &'a self,
        g: &mut Graph<'a>,
        prefix: &'a PrefixState,
        x: Var,
    ) -> (Var, Vec<Vec<(Var, Var)>>) {
        let n = g.shape(x).0;
        let start = prefix.len;
        let pos = g.constant_owned(self.positions.slice(ndarray::s![start..start + n, ..]).to_owned());
        let mut h = g.add(x, pos);
        let hw = self.head_width();
        let scale = 1.0 / (hw as f64).sqrt();
        let mut kv_out = Vec::with_capacity(self.layers.len());

        for (li, layer) in self.layers.iter().enumerate() {
            let (g1, b1) = (g.constant(&layer.ln1_gain), g.constant(&layer.ln1_shift));
            let a = g.layer_norm(h, g1, b1, LN_EPS);
            let (wq, wk, wv) = (g.constant(&layer.w_q), g.constant(&layer.w_k), g.constant(&layer.w_v));
            let q = g.matmul(a, wq);
            let k = g.matmul(a, wk);
            let v = g.matmul(a, wv);
            let mut heads = Vec::with_capacity(self.spec.heads);
            let mut kv = Vec::with_capacity(self.spec.heads);
            for head in 0..self.spec.heads {
                let qh = g.slice_cols(q, head * hw, hw);
                let kh = g.slice_cols(k, head * hw, hw);
                let vh = g.slice_cols(v, head * hw, hw);
                kv.push((kh, vh));
                let (k_all, v_all) = if start > 0 {
                    let kp = g.constant(&prefix.keys[li][head]);
                    let vp = g.constant(&prefix.values[li][head]);
                    (g.concat_rows(&[kp, kh]), g.concat_rows(&[vp, vh]))
                } else {
                    (kh, vh)
                };
                let scores = g.matmul_t(qh, k_all);
                let scores = g.scale(scores, scale);
                let weights = g.softmax_causal(scores, Some(start));
                heads.push(g.matmul(weights, v_all));
            }
            let attn = g.concat_cols(&heads);
            let wo = g.constant(&layer.w_o);
            let attn = g.matmul(attn, wo);
            h = g.add(h, attn);

            let (g2, b2) = (g.constant(&layer.ln2_gain), g.constant(&layer.ln2_shift));
            let m = g.layer_norm(h, g2, b2, LN_EPS);
            let (w1, c1) = (g.constant(&layer.ffn_in), g.constant(&layer.ffn_in_bias));
            let f = g.matmul(m, w1);
            let f = g.add_row(f, c1);
            let f = g.gelu(f);
            let (w2, c2) = (g.constant(&layer.ffn_out), g.constant(&layer.ffn_out_bias));
            let f = g.matmul(f, w2);
            let f = g.add_row(f, c2);
            h = g.add(h, f);
            kv_out.push(kv);
        }
        (h, kv_out)
    }
}

impl Backbone for ToyBackbone {
    fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    fn vocab_embeddings(&self) -> &Mat {
        &self.vocab
    }

    /// One token per UTF-8 byte.
    fn tokenize(&self, text: &str) -> Vec<usize> {
        text.bytes().map(|b| b as usize % self.spec.vocab_size).collect()
    }

    fn prefix_state(&self, prefix: &Mat) -> Result<PrefixState> {
        self.check_len(prefix.nrows())?;
        self.check_width(prefix.ncols())?;
        if prefix.nrows() == 0 {
            return Ok(PrefixState::default());
        }
        let empty = PrefixState::default();
        let mut g = Graph::new();
        let x = g.constant_owned(prefix.clone());
        let (_, kv) = self.run(&mut g, &empty, x);
        let keys = kv
            .iter()
            .map(|layer| layer.iter().map(|(k, _)| g.value(*k).clone()).collect())
            .collect();
        let values = kv
            .iter()
            .map(|layer| layer.iter().map(|(_, v)| g.value(*v).clone()).collect())
            .collect();
        Ok(PrefixState {
            len: prefix.nrows(),
            keys,
            values,
        })
    }

    fn forward_suffix<'a>(&'a self, g: &mut Graph<'a>, prefix: &'a PrefixState, x: Var) -> Result<Var> {
        let (n, cols) = g.shape(x);
        self.check_width(cols)?;
        self.check_len(prefix.len + n)?;
        Ok(self.run(g, prefix, x).0)
    }

    fn parameter_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.spec.identity.as_bytes());
        for dim in [
            self.spec.d_llm,
            self.spec.vocab_size,
            self.spec.layers,
            self.spec.heads,
            self.spec.max_sequence_length,
        ] {
            hasher.update((dim as u64).to_le_bytes());
        }
        let mut feed = |m: &Mat| {
            for v in m.iter() {
                hasher.update(v.to_le_bytes());
            }
        };
        feed(&self.vocab);
        feed(&self.positions);
        for layer in &self.layers {
            for t in layer.tensors() {
                feed(t);
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;

    fn toy(seed: u64) -> ToyBackbone {
        ToyBackbone::new(ToyBackboneConfig {
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn byte_level_prompt() {
        let b = toy(0);
        assert_eq!(embed_prompt(&b, "AB", 4).unwrap().dim(), (2, 64));
        assert_eq!(embed_prompt(&b, "", 4).unwrap().dim(), (0, 64));
        assert_eq!(embed_prompt(&b, "AB", 4).unwrap(), embed_prompt(&b, "AB", 4).unwrap());
    }

    #[test]
    fn over_length_prompt_reports_lengths() {
        let b = toy(0);
        let text = "x".repeat(253);
        match embed_prompt(&b, &text, 4) {
            Err(Error::SequenceLength { measured, allowed }) => {
                assert_eq!((measured, allowed), (253, 252));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn forward_is_causal_and_shape_preserving() {
        let b = toy(1);
        let seq = embed_prompt(&b, "predict the path", 0).unwrap();
        let out = forward(&b, &seq).unwrap();
        assert_eq!(out.dim(), seq.dim());
        let longer = embed_prompt(&b, "predict the path!!", 0).unwrap();
        let out2 = forward(&b, &longer).unwrap();
        let diff = (&out2.slice(s![..seq.nrows(), ..]) - &out).mapv(f64::abs);
        assert!(diff.iter().all(|&d| d < 1e-6));
        assert_eq!(out, forward(&b, &seq).unwrap());
    }

    #[test]
    fn prefix_cache_matches_full_forward() {
        let b = toy(2);
        let full = embed_prompt(&b, "a prompt then four", 0).unwrap();
        let split = 14;
        let prefix = b.prefix_state(&full.slice(s![..split, ..]).to_owned()).unwrap();
        let mut g = Graph::new();
        let x = g.input(full.slice(s![split.., ..]).to_owned());
        let h = b.forward_suffix(&mut g, &prefix, x).unwrap();
        let reference = forward(&b, &full).unwrap();
        let diff = (g.value(h) - &reference.slice(s![split.., ..])).mapv(f64::abs);
        assert!(diff.iter().all(|&d| d < 1e-10), "{}", diff.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn over_length_forward_is_rejected() {
        let b = toy(0);
        let seq = Mat::zeros((257, 64));
        assert!(matches!(forward(&b, &seq), Err(Error::SequenceLength { .. })));
    }

    #[test]
    fn checksum_is_stable_and_seed_dependent() {
        let a = toy(0);
        assert_eq!(a.parameter_checksum(), a.parameter_checksum());
        assert_eq!(a.parameter_checksum(), toy(0).parameter_checksum());
        assert_ne!(a.parameter_checksum(), toy(1).parameter_checksum());
        assert_eq!(a.parameter_checksum().len(), 64);
    }

    #[test]
    fn heads_must_divide_width() {
        let r = ToyBackbone::new(ToyBackboneConfig {
            heads: 3,
            ..Default::default()
        });
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
