//! Reprogramming adapter: scene features become attention-weighted
//! compositions of prototypes drawn from the frozen vocabulary table.
//!
//! ```text
//! E' = C · E            (P × d_llm, C is trainable P × V, E frozen V × d_llm)
//! b_t = W_O · Attn(W_Q h_t, W_K E', W_V E')
//! ```

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mat, ParamId, ParamStore, Var};
use crate::nn::{attend, uniform, Linear};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    pub prototypes: usize,
    pub d_adapter: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            prototypes: 32,
            d_adapter: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBank {
    /// `P × d_llm`
    pub prototypes: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adapter {
    pub config: AdapterConfig,
    pub vocab_size: usize,
    pub d_scene: usize,
    pub d_llm: usize,
    /// `P × V`
    pub combination: ParamId,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl Adapter {
    pub fn new(
        store: &mut ParamStore,
        config: AdapterConfig,
        d_scene: usize,
        vocab_size: usize,
        d_llm: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if config.prototypes == 0 || config.d_adapter == 0 {
            return Err(Error::Config("adapter prototypes and d_adapter must be positive".into()));
        }
        let bound = 1.0 / (vocab_size as f64).sqrt();
        let combination = store.add("adapter.combination", uniform(rng, config.prototypes, vocab_size, bound));
        let query = Linear::new(store, "adapter.query", d_scene, config.d_adapter, true, rng);
        let key = Linear::new(store, "adapter.key", d_llm, config.d_adapter, true, rng);
        let value = Linear::new(store, "adapter.value", d_llm, config.d_adapter, true, rng);
        let output = Linear::new(store, "adapter.output", config.d_adapter, d_llm, true, rng);
        Ok(Self {
            config,
            vocab_size,
            d_scene,
            d_llm,
            combination,
            query,
            key,
            value,
            output,
        })
    }

    pub fn check_vocab(&self, vocab: &Mat) -> Result<()> {
        if vocab.dim() != (self.vocab_size, self.d_llm) {
            return Err(Error::Config(format!(
                "vocabulary table is {}×{}, adapter expects {}×{}",
                vocab.nrows(),
                vocab.ncols(),
                self.vocab_size,
                self.d_llm
            )));
        }
        Ok(())
    }

    /// `C · E` on the graph; `E` is a constant.
    pub fn prototypes<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, vocab: &'a Mat) -> Result<Var> {
        self.check_vocab(vocab)?;
        let c = g.param(store, self.combination);
        let e = g.constant(vocab);
        Ok(g.matmul(c, e))
    }

    pub fn build_prototypes(&self, store: &ParamStore, vocab: &Mat) -> Result<PrototypeBank> {
        self.check_vocab(vocab)?;
        Ok(PrototypeBank {
            prototypes: store.get(self.combination).dot(vocab),
        })
    }

    /// `T × d_scene` features to `T × d_llm` scene tokens. Also returns the
    /// `T × P` attention weights.
    pub fn reprogram<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, features: Var, prototypes: Var) -> Result<(Var, Var)> {
        let (_, width) = g.shape(features);
        if width != self.d_scene {
            return Err(Error::shape("adapter input width", self.d_scene, width));
        }
        let (p, d) = g.shape(prototypes);
        if (p, d) != (self.config.prototypes, self.d_llm) {
            return Err(Error::shape(
                "prototype bank",
                format!("{}×{}", self.config.prototypes, self.d_llm),
                format!("{p}×{d}"),
            ));
        }
        let q = self.query.forward(g, store, features);
        let k = self.key.forward(g, store, prototypes);
        let v = self.value.forward(g, store, prototypes);
        let (attended, weights) = attend(g, q, k, v);
        Ok((self.output.forward(g, store, attended), weights))
    }

    /// Convenience evaluation outside a training graph.
    pub fn reprogram_values(&self, store: &ParamStore, vocab: &Mat, features: &Mat) -> Result<Mat> {
        let mut g = Graph::new();
        let protos = self.prototypes(&mut g, store, vocab)?;
        let x = g.input(features.clone());
        let (out, _) = self.reprogram(&mut g, store, x, protos)?;
        Ok(g.value(out).clone())
    }
}
