//! Tiny model, backbone and scene shared by the gradient checks.
#![allow(dead_code)]

use maptraj_core::adapter::AdapterConfig;
use maptraj_core::autodiff::{check_gradients, Graph, Mat, ParamStore, Var};
use maptraj_core::backbone::{Backbone, ToyBackbone, ToyBackboneConfig};
use maptraj_core::fusion::{FusionConfig, MapKvMode};
use maptraj_core::map_encoder::MapEncoderConfig;
use maptraj_core::pipeline::{ModalityConfig, ModelConfig, PromptContext, TrajectoryModel};
use maptraj_core::scene_encoder::SceneEncoderConfig;
use maptraj_core::scenes::{normalize_scene, MapChannel, MapRaster, NormalizedScene, Scene, Track};

pub fn tiny_backbone() -> ToyBackbone {
    ToyBackbone::new(ToyBackboneConfig {
        seed: 11,
        d_llm: 8,
        layers: 2,
        heads: 2,
        vocab_size: 16,
        max_sequence_length: 32,
        ffn_width: 16,
    })
    .unwrap()
}

pub fn tiny_model(backbone: &ToyBackbone, map_kv_mode: MapKvMode) -> TrajectoryModel {
    let config = ModelConfig {
        history_steps: 2,
        future_steps: 3,
        init_seed: 5,
        scene_encoder: SceneEncoderConfig {
            d_scene: 4,
            state_scale: 0.1,
        },
        map_encoder: MapEncoderConfig {
            height: 12,
            width: 12,
            channels: [2, 3, 4],
            d_map: 4,
        },
        adapter: AdapterConfig {
            prototypes: 3,
            d_adapter: 8,
        },
        fusion: FusionConfig { heads: 2 },
        modality: ModalityConfig {
            map_kv_mode,
            prompt_text: "go".into(),
            ..Default::default()
        },
    };
    let mut model = TrajectoryModel::new(config, backbone.spec()).unwrap();
    // nonzero gate and decoder bias so every path carries gradient
    let alpha = model.scene_encoder.alpha;
    model.store.get_mut(alpha).fill(0.3);
    model.store.get_mut(model.decoder.linear.bias.unwrap()).fill(0.1);
    model
}

pub fn tiny_scene() -> NormalizedScene {
    let mut map = MapRaster::empty(12, 12, 0.5, 3.0);
    for r in 0..12 {
        for c in 0..12 {
            map.set(MapChannel::Drivable, r, c, (r + 2 * c) % 5 != 0);
            map.set(MapChannel::LaneDivider, r, c, c == 6 && r % 3 != 1);
            map.set(MapChannel::Intersection, r, c, r < 4 && c > 7);
        }
    }
    let scene = Scene {
        id: "tiny".into(),
        ego: Track::fully_observed(vec![[-3.1, 0.4], [-1.4, 0.1], [0.2, -0.2]]),
        neighbors: vec![
            Track::fully_observed(vec![[4.0, 3.5], [5.1, 3.2], [6.3, 2.6]]),
            Track::fully_observed(vec![[-6.0, -3.0], [-4.2, -3.4], [-2.9, -3.3]]),
            Track {
                positions: vec![None, Some([2.0, -5.0]), Some([2.2, -3.9])],
            },
        ],
        heading: None,
        map: Some(map),
        future: Some(vec![[1.9, -0.3], [3.4, -0.1], [5.2, 0.6]]),
    };
    normalize_scene(&scene).unwrap()
}

pub fn mse<'a>(g: &mut Graph<'a>, pred: Var, truth: &[[f64; 2]]) -> Var {
    let t = Mat::from_shape_fn((truth.len(), 2), |(i, j)| truth[i][j]);
    let t = g.constant_owned(t);
    let d = g.sub(pred, t);
    let sq = g.mul(d, d);
    let total = g.sum_all(sq);
    g.scale(total, 1.0 / truth.len() as f64)
}

pub fn loss_and_grads(
    model: &TrajectoryModel,
    backbone: &ToyBackbone,
    prompt: &PromptContext,
    scene: &NormalizedScene,
    store: &ParamStore,
) -> (f64, Vec<Mat>) {
    let truth = scene.future.clone().unwrap();
    let mut g = Graph::new();
    let protos = model.prototypes(&mut g, store, backbone).unwrap();
    let pred = model.forward(&mut g, store, backbone, prompt, protos, scene).unwrap();
    let l = mse(&mut g, pred, &truth);
    (g.scalar(l), g.backward(l).to_buffer(store))
}

/// Panics unless every parameter gets gradient and matches finite
/// differences. Returns the worst relative error.
pub fn run_check(map_kv_mode: MapKvMode) -> f64 {
    let backbone = tiny_backbone();
    let model = tiny_model(&backbone, map_kv_mode);
    let prompt = PromptContext::new(&backbone, "go", 2).unwrap();
    let scene = tiny_scene();
    let checksum = backbone.parameter_checksum();

    let (_, full) = loss_and_grads(&model, &backbone, &prompt, &scene, &model.store);
    // a single key makes the attention weights constant, so the map query
    // and key projections are inert in pooled mode
    let inert = |name: &str| map_kv_mode == MapKvMode::Pooled && (name.starts_with("fusion.query") || name.starts_with("fusion.key"));
    for (id, grad) in model.store.ids().zip(&full) {
        let name = model.store.name(id);
        let norm: f64 = grad.iter().map(|v| v * v).sum();
        if inert(name) {
            assert_eq!(norm, 0.0, "{name}");
        } else {
            assert!(norm > 0.0, "{name} receives no gradient");
        }
    }

    let checks = check_gradients(&model.store, 8, 1e-5, |store| {
        loss_and_grads(&model, &backbone, &prompt, &scene, store)
    });
    assert!(checks.len() >= model.store.len());
    let worst = checks
        .iter()
        .max_by(|a, b| a.relative_error().total_cmp(&b.relative_error()))
        .unwrap();
    assert!(worst.relative_error() <= 1e-3, "{worst:?}");
    assert_eq!(backbone.parameter_checksum(), checksum);
    worst.relative_error()
}

