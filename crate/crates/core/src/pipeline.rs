//! End-to-end composition: normalize, encode, reprogram, fuse with the map,
//! run the frozen backbone behind the prompt, decode.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{Adapter, AdapterConfig};
use crate::autodiff::{Graph, Mat, ParamStore, Var};
use crate::backbone::{embed_prompt, Backbone, BackboneSpec, PrefixState};
use crate::fusion::{Decoder, Fusion, FusionConfig, MapKvMode};
use crate::map_encoder::{MapEncoder, MapEncoderConfig};
use crate::scene_encoder::{vectorize, SceneEncoder, SceneEncoderConfig};
use crate::scenes::{normalize_scene, EgoFrame, NormalizedScene, Point, Scene};
use crate::{Error, Result};

pub const DEFAULT_PROMPT: &str =
    "Predict the next 12 positions of the ego vehicle given 4 observed scene states and the local map.";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModalityConfig {
    pub use_neighbors: bool,
    pub use_map: bool,
    pub map_kv_mode: MapKvMode,
    pub prompt_text: String,
}

impl Default for ModalityConfig {
    fn default() -> Self {
        Self {
            use_neighbors: true,
            use_map: true,
            map_kv_mode: MapKvMode::Grid,
            prompt_text: DEFAULT_PROMPT.into(),
        }
    }
}

/// The three ablation settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    EgoOnly,
    EgoNeighbor,
    EgoNeighborMap,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::EgoOnly, Modality::EgoNeighbor, Modality::EgoNeighborMap];

    pub fn name(self) -> &'static str {
        match self {
            Modality::EgoOnly => "ego_only",
            Modality::EgoNeighbor => "ego_neighbor",
            Modality::EgoNeighborMap => "ego_neighbor_map",
        }
    }

    /// `base` with the input switches set for this modality.
    pub fn apply(self, base: &ModalityConfig) -> ModalityConfig {
        ModalityConfig {
            use_neighbors: self != Modality::EgoOnly,
            use_map: self == Modality::EgoNeighborMap,
            ..base.clone()
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown modality `{s}` (expected ego_only, ego_neighbor or ego_neighbor_map)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub history_steps: usize,
    pub future_steps: usize,
    /// Seed for parameter initialization.
    pub init_seed: u64,
    pub scene_encoder: SceneEncoderConfig,
    pub map_encoder: MapEncoderConfig,
    pub adapter: AdapterConfig,
    pub fusion: FusionConfig,
    pub modality: ModalityConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            history_steps: crate::scenes::HISTORY_STEPS,
            future_steps: crate::scenes::FUTURE_STEPS,
            init_seed: 0,
            scene_encoder: SceneEncoderConfig::default(),
            map_encoder: MapEncoderConfig::default(),
            adapter: AdapterConfig::default(),
            fusion: FusionConfig::default(),
            modality: ModalityConfig::default(),
        }
    }
}

/// Prompt embeddings and the backbone state they produce.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptContext {
    pub embeddings: Mat,
    pub prefix: PrefixState,
}

impl PromptContext {
    pub fn new(backbone: &dyn Backbone, text: &str, reserved: usize) -> Result<Self> {
        let embeddings = embed_prompt(backbone, text, reserved)?;
        let prefix = backbone.prefix_state(&embeddings)?;
        Ok(Self { embeddings, prefix })
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `N` future positions.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedTrajectory {
    /// Ego frame.
    pub points: Vec<Point>,
    pub frame: EgoFrame,
}

impl PredictedTrajectory {
    pub fn world_points(&self) -> Vec<Point> {
        self.points.iter().map(|&p| self.frame.to_world(p)).collect()
    }
}

/// All trainable parameters and the modules that own them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryModel {
    pub config: ModelConfig,
    pub backbone: BackboneSpec,
    pub store: ParamStore,
    pub scene_encoder: SceneEncoder,
    pub map_encoder: MapEncoder,
    pub adapter: Adapter,
    pub fusion: Fusion,
    pub decoder: Decoder,
}

impl TrajectoryModel {
    /// Every module is built regardless of the modality switches so that
    /// ablations share one architecture and one initialization.
    pub fn new(config: ModelConfig, backbone: &BackboneSpec) -> Result<Self> {
        if config.history_steps == 0 || config.future_steps == 0 {
            return Err(Error::Config("history_steps and future_steps must be positive".into()));
        }
        if config.scene_encoder.d_scene == 0 || config.map_encoder.d_map == 0 {
            return Err(Error::Config("d_scene and d_map must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let d_llm = backbone.d_llm;
        let scene_encoder = SceneEncoder::new(&mut store, config.scene_encoder, &mut rng);
        let map_encoder = MapEncoder::new(&mut store, config.map_encoder, &mut rng);
        let adapter = Adapter::new(
            &mut store,
            config.adapter,
            config.scene_encoder.d_scene,
            backbone.vocab_size,
            d_llm,
            &mut rng,
        )?;
        let fusion = Fusion::new(&mut store, config.fusion, config.map_encoder.d_map, d_llm, &mut rng)?;
        let decoder = Decoder::new(&mut store, config.history_steps, config.future_steps, d_llm, &mut rng);
        Ok(Self {
            config,
            backbone: backbone.clone(),
            store,
            scene_encoder,
            map_encoder,
            adapter,
            fusion,
            decoder,
        })
    }

    pub fn modality(&self) -> &ModalityConfig {
        &self.config.modality
    }

    pub fn check_backbone(&self, backbone: &dyn Backbone) -> Result<()> {
        let spec = backbone.spec();
        if spec.d_llm != self.backbone.d_llm || spec.vocab_size != self.backbone.vocab_size {
            return Err(Error::Config(format!(
                "backbone {} (d_llm {}, V {}) does not match model (d_llm {}, V {})",
                spec.identity, spec.d_llm, spec.vocab_size, self.backbone.d_llm, self.backbone.vocab_size
            )));
        }
        Ok(())
    }

    pub fn prompt(&self, backbone: &dyn Backbone) -> Result<PromptContext> {
        self.check_backbone(backbone)?;
        PromptContext::new(backbone, &self.config.modality.prompt_text, self.config.history_steps)
    }

    /// Rejects scenes that cannot be consumed under the modality config.
    pub fn check_scene(&self, scene: &Scene) -> Result<()> {
        if scene.history_steps() != self.config.history_steps {
            return Err(Error::Data(format!(
                "scene {}: {} encoded steps, model expects {}",
                scene.id,
                scene.history_steps(),
                self.config.history_steps
            )));
        }
        if self.config.modality.use_map {
            match &scene.map {
                None => {
                    return Err(Error::Modality(format!(
                        "scene {} has no map raster but use_map is enabled",
                        scene.id
                    )))
                }
                Some(raster) => self.map_encoder.check_raster(raster)?,
            }
        }
        Ok(())
    }

    /// Ego-frame prediction (`N × 2`) for a normalized scene. `prototypes`
    /// comes from [`Self::prototypes`] on the same graph.
    pub fn forward<'a>(
        &'a self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        backbone: &'a dyn Backbone,
        prompt: &'a PromptContext,
        prototypes: Var,
        scene: &NormalizedScene,
    ) -> Result<Var> {
        self.check_scene(scene)?;
        let modality = &self.config.modality;
        let mut states = vectorize(scene);
        if !modality.use_neighbors {
            states.neighbors.clear();
        }
        let h = self.scene_encoder.encode(g, store, &states);
        let (b, _) = self.adapter.reprogram(g, store, h, prototypes)?;
        let fused = match (&scene.map, modality.use_map) {
            (Some(raster), true) => {
                let (tokens, pooled) = self.map_encoder.encode(g, store, raster)?;
                let kv = match modality.map_kv_mode {
                    MapKvMode::Grid => tokens,
                    MapKvMode::Pooled => pooled,
                };
                let attended = self.fusion.cross_attend_map(g, store, b, kv)?;
                self.fusion.fuse(g, store, attended, b)?
            }
            _ => b,
        };
        let hidden = backbone.forward_suffix(g, &prompt.prefix, fused)?;
        self.decoder.decode(g, store, hidden)
    }

    pub fn prototypes<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, backbone: &'a dyn Backbone) -> Result<Var> {
        self.adapter.prototypes(g, store, backbone.vocab_embeddings())
    }

    /// Prediction in the scene's ego frame.
    pub fn predict(&self, backbone: &dyn Backbone, prompt: &PromptContext, scene: &Scene) -> Result<PredictedTrajectory> {
        let normalized = normalize_scene(scene)?;
        self.predict_normalized(backbone, prompt, &normalized)
    }

    pub fn predict_normalized(
        &self,
        backbone: &dyn Backbone,
        prompt: &PromptContext,
        scene: &NormalizedScene,
    ) -> Result<PredictedTrajectory> {
        let mut g = Graph::new();
        let protos = self.prototypes(&mut g, &self.store, backbone)?;
        let out = self.forward(&mut g, &self.store, backbone, prompt, protos, scene)?;
        let points = g.value(out).rows().into_iter().map(|r| [r[0], r[1]]).collect();
        Ok(PredictedTrajectory {
            points,
            frame: scene.frame,
        })
    }

    /// Prediction mapped back to world coordinates.
    pub fn predict_world(&self, backbone: &dyn Backbone, prompt: &PromptContext, scene: &Scene) -> Result<Vec<Point>> {
        Ok(self.predict(backbone, prompt, scene)?.world_points())
    }
}
