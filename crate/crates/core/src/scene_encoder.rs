//! Per-timestep agent vectorization, ego–neighbor cross-attention and gated
//! fusion into one scene feature per observed step.
//!
//! For each encoded step `t = 1..T` and agent `i` (ego is `0`):
//!
//! ```text
//! x_t^i = [p_t^i - p_{t-1}^i ; p_t^i - p_t^0]
//! q = W_Q Φ(x_t^0),  k_i = W_K Φ(x_t^i),  v_i = W_V Φ(x_t^i)
//! h'_t = Σ_i softmax_i(q·k_i / √d) v_i        (0 when no neighbor is valid)
//! h_t  = σ(α) ∘ h'_t + σ(1 - α) ∘ Φ(x_t^0)
//! ```
//!
//! The two gates are deliberately not complementary.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mat, ParamId, ParamStore, Var};
use crate::nn::{attend, Linear};
use crate::scenes::Scene;

pub type VectorizedState = [f64; 4];

/// Per-step displacement and relative-position states for one scene, indexed by encoded step `t = 0..T-1`
/// (raw step `t + 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorizedScene {
    pub ego: Vec<VectorizedState>,
    /// `neighbors[i][t]` is `None` when neighbor `i` lacks a position at the
    /// step or its predecessor.
    pub neighbors: Vec<Vec<Option<VectorizedState>>>,
}

impl VectorizedScene {
    pub fn steps(&self) -> usize {
        self.ego.len()
    }

    /// Valid neighbor states at step `t`, in list order.
    pub fn neighbors_at(&self, t: usize) -> Vec<VectorizedState> {
        self.neighbors.iter().filter_map(|n| n[t]).collect()
    }
}

/// Vectorizes a normalized scene. The ego must be fully observed.
pub fn vectorize(scene: &Scene) -> VectorizedScene {
    let ego_pos: Vec<[f64; 2]> = scene
        .ego
        .positions
        .iter()
        .map(|p| p.expect("ego must be fully observed"))
        .collect();
    let steps = ego_pos.len().saturating_sub(1);
    let ego = (1..=steps)
        .map(|t| {
            let (cur, prev) = (ego_pos[t], ego_pos[t - 1]);
            [cur[0] - prev[0], cur[1] - prev[1], 0.0, 0.0]
        })
        .collect();
    let neighbors = scene
        .neighbors
        .iter()
        .map(|track| {
            (1..=steps)
                .map(|t| {
                    let cur = track.at(t)?;
                    let prev = track.at(t - 1)?;
                    let e = ego_pos[t];
                    Some([cur[0] - prev[0], cur[1] - prev[1], cur[0] - e[0], cur[1] - e[1]])
                })
                .collect()
        })
        .collect();
    VectorizedScene { ego, neighbors }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneEncoderConfig {
    pub d_scene: usize,
    /// Fixed factor applied to the meter-valued states before Φ.
    pub state_scale: f64,
}

impl Default for SceneEncoderConfig {
    fn default() -> Self {
        Self {
            d_scene: 64,
            state_scale: 0.1,
        }
    }
}

/// Parameters: Φ (two affine layers with SiLU), `W_Q`, `W_K`, `W_V`, `α`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneEncoder {
    pub config: SceneEncoderConfig,
    pub phi_in: Linear,
    pub phi_out: Linear,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub alpha: ParamId,
}

impl SceneEncoder {
    pub fn new(store: &mut ParamStore, config: SceneEncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = config.d_scene;
        let bound = 1.0 / (d as f64).sqrt();
        Self {
            config,
            phi_in: Linear::new(store, "scene_encoder.phi.0", 4, d, true, rng),
            phi_out: Linear::new(store, "scene_encoder.phi.1", d, d, true, rng),
            w_q: store.add("scene_encoder.w_q", crate::nn::uniform(rng, d, d, bound)),
            w_k: store.add("scene_encoder.w_k", crate::nn::uniform(rng, d, d, bound)),
            w_v: store.add("scene_encoder.w_v", crate::nn::uniform(rng, d, d, bound)),
            alpha: store.add("scene_encoder.alpha", Mat::zeros((1, d))),
        }
    }

    /// Φ applied row-wise to `k × 4` states.
    pub fn phi<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, states: Var) -> Var {
        let x = g.scale(states, self.config.state_scale);
        let h = self.phi_in.forward(g, store, x);
        let h = g.silu(h);
        self.phi_out.forward(g, store, h)
    }

    /// Cross-attention of the ego feature `h_ego` (`1 × d`) over neighbor
    /// features (`k × d`). Returns `h'_t` and, when `k ≥ 1`, the attention
    /// weights (`1 × k`).
    pub fn encode_interactions<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        h_ego: Var,
        h_neighbors: Option<Var>,
    ) -> (Var, Option<Var>) {
        let Some(h_n) = h_neighbors else {
            return (g.constant_owned(Mat::zeros((1, self.config.d_scene))), None);
        };
        let (wq, wk, wv) = (g.param(store, self.w_q), g.param(store, self.w_k), g.param(store, self.w_v));
        let q = g.matmul(h_ego, wq);
        let k = g.matmul(h_n, wk);
        let v = g.matmul(h_n, wv);
        let (out, weights) = attend(g, q, k, v);
        (out, Some(weights))
    }

    /// `σ(α) ∘ h' + σ(1 - α) ∘ h_ego`.
    pub fn fuse_gate<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, h_prime: Var, h_ego: Var) -> Var {
        let alpha = g.param(store, self.alpha);
        fuse_gate(g, h_prime, h_ego, alpha)
    }

    /// `T × d_scene` scene features.
    pub fn encode<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, states: &VectorizedScene) -> Var {
        self.encode_traced(g, store, states).0
    }

    /// As [`encode`](Self::encode), also returning each step's attention weights.
    pub fn encode_traced<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        states: &VectorizedScene,
    ) -> (Var, Vec<Option<Var>>) {
        let steps = states.steps();
        let ego = g.constant_owned(rows_to_mat(&states.ego));
        let h_ego_all = self.phi(g, store, ego);

        // all valid neighbor states of all steps go through Φ in one pass
        let per_step: Vec<Vec<VectorizedState>> = (0..steps).map(|t| states.neighbors_at(t)).collect();
        let flat: Vec<VectorizedState> = per_step.iter().flatten().copied().collect();
        let h_n_all = (!flat.is_empty()).then(|| {
            let x = g.constant_owned(rows_to_mat(&flat));
            self.phi(g, store, x)
        });

        let mut rows = Vec::with_capacity(steps);
        let mut traces = Vec::with_capacity(steps);
        let mut offset = 0;
        for (t, valid) in per_step.iter().enumerate() {
            let h_ego = g.slice_rows(h_ego_all, t, 1);
            let h_n = (!valid.is_empty()).then(|| {
                let all = h_n_all.expect("nonempty step implies states");
                g.slice_rows(all, offset, valid.len())
            });
            offset += valid.len();
            let (h_prime, weights) = self.encode_interactions(g, store, h_ego, h_n);
            rows.push(self.fuse_gate(g, store, h_prime, h_ego));
            traces.push(weights);
        }
        (g.concat_rows(&rows), traces)
    }

    /// Convenience forward pass outside any training graph.
    pub fn encode_scene(&self, store: &ParamStore, scene: &Scene) -> Mat {
        let mut g = Graph::new();
        let h = self.encode(&mut g, store, &vectorize(scene));
        g.value(h).clone()
    }
}

/// Elementwise gate with a `1 × d` gating row `alpha`.
pub fn fuse_gate(g: &mut Graph<'_>, h_prime: Var, h_ego: Var, alpha: Var) -> Var {
    let gate_a = g.sigmoid(alpha);
    let neg = g.scale(alpha, -1.0);
    let one_minus = g.add_scalar(neg, 1.0);
    let gate_b = g.sigmoid(one_minus);
    let a = g.mul_row(h_prime, gate_a);
    let b = g.mul_row(h_ego, gate_b);
    g.add(a, b)
}

fn rows_to_mat(rows: &[VectorizedState]) -> Mat {
    Array2::from_shape_fn((rows.len(), 4), |(r, c)| rows[r][c])
}
