//! Scene data model and ego-centric normalization.
//!
//! Tracks are sampled at a fixed rate. A dataset with `T` encoded steps
//! stores `T + 1` raw history positions per track, ending at `t = 0`, so the
//! first encoded step still has a real predecessor.

mod io;
mod raster;
mod split;
pub mod synth;

pub use io::{load_scenes, parse_scenes, save_scenes, write_scenes, SceneSchema};
pub use raster::{rasterize_map, MapChannel, MapGeometry, MapRaster, RasterConfig};
pub use split::{split_dataset, DatasetSplit};
pub use synth::{generate_synthetic_scene, GeneratorConfig, ScenarioKind};

use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

/// Seconds between consecutive samples (2 Hz).
pub const SAMPLE_PERIOD: f64 = 0.5;
/// Encoded history steps `T` of the standard protocol (2 s at 2 Hz).
pub const HISTORY_STEPS: usize = 4;
/// Predicted future points `N` of the standard protocol (6 s at 2 Hz).
pub const FUTURE_STEPS: usize = 12;

/// Displacements shorter than this cannot define a heading.
pub const MIN_HEADING_DISPLACEMENT: f64 = 1e-3;

/// Observed positions of one agent; `None` where the agent was not seen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub positions: Vec<Option<Point>>,
}

impl Track {
    pub fn fully_observed(points: Vec<Point>) -> Self {
        Self {
            positions: points.into_iter().map(Some).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn present_mask(&self) -> Vec<bool> {
        self.positions.iter().map(Option::is_some).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.positions.iter().all(Option::is_some)
    }

    pub fn at(&self, t: usize) -> Option<Point> {
        self.positions.get(t).copied().flatten()
    }

    fn map_points(&self, f: impl Fn(Point) -> Point) -> Self {
        Self {
            positions: self.positions.iter().map(|p| p.map(&f)).collect(),
        }
    }
}

/// One prediction instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub ego: Track,
    pub neighbors: Vec<Track>,
    /// Ego heading at `t = 0` in radians, world frame.
    pub heading: Option<f64>,
    /// Local raster, already centred on the ego at `t = 0` and aligned with
    /// its heading.
    pub map: Option<MapRaster>,
    pub future: Option<Vec<Point>>,
}

impl Scene {
    /// Number of encoded history steps `T`.
    pub fn history_steps(&self) -> usize {
        self.ego.len().saturating_sub(1)
    }

    pub fn ego_now(&self) -> Option<Point> {
        self.ego.positions.last().copied().flatten()
    }

    /// Applies `p ↦ R(θ)·p + v` to every position and adds `θ` to the heading.
    pub fn transformed(&self, theta: f64, translation: Point) -> Scene {
        let (s, c) = theta.sin_cos();
        let f = |p: Point| [c * p[0] - s * p[1] + translation[0], s * p[0] + c * p[1] + translation[1]];
        Scene {
            id: self.id.clone(),
            ego: self.ego.map_points(f),
            neighbors: self.neighbors.iter().map(|n| n.map_points(f)).collect(),
            heading: self.heading.map(|h| h + theta),
            map: self.map.clone(),
            future: self.future.as_ref().map(|fu| fu.iter().map(|&p| f(p)).collect()),
        }
    }

    /// Copy with neighbor tracks removed.
    pub fn without_neighbors(&self) -> Scene {
        Scene {
            neighbors: Vec::new(),
            ..self.clone()
        }
    }

    /// Copy with the map raster removed.
    pub fn without_map(&self) -> Scene {
        Scene {
            map: None,
            ..self.clone()
        }
    }
}

/// Rigid pose of the ego at `t = 0` in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoFrame {
    pub origin: Point,
    pub heading: f64,
}

impl EgoFrame {
    pub fn to_local(&self, p: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (p[0] - self.origin[0], p[1] - self.origin[1]);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn to_world(&self, p: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        [
            c * p[0] - s * p[1] + self.origin[0],
            s * p[0] + c * p[1] + self.origin[1],
        ]
    }
}

/// A scene expressed in its ego frame, with the pose needed to map back.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedScene {
    pub scene: Scene,
    pub frame: EgoFrame,
    /// The heading could not be derived and fell back to 0.
    pub heading_fallback: bool,
}

impl std::ops::Deref for NormalizedScene {
    type Target = Scene;

    fn deref(&self) -> &Scene {
        &self.scene
    }
}

/// Heading used for normalization: the stored heading if present, otherwise
/// the direction of the last observed ego displacement. Returns `None` when
/// the ego is (nearly) stationary and no heading is stored.
pub fn derive_heading(scene: &Scene) -> Option<f64> {
    if let Some(h) = scene.heading {
        return Some(h);
    }
    let n = scene.ego.len();
    if n < 2 {
        return None;
    }
    let (a, b) = (scene.ego.at(n - 2)?, scene.ego.at(n - 1)?);
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    if dx.hypot(dy) < MIN_HEADING_DISPLACEMENT {
        None
    } else {
        Some(dy.atan2(dx))
    }
}

/// Translates the ego at `t = 0` to the origin and rotates by `-heading`.
pub fn normalize_scene(scene: &Scene) -> crate::Result<NormalizedScene> {
    let origin = scene.ego_now().ok_or_else(|| {
        crate::Error::Data(format!("scene {}: ego not observed at t = 0", scene.id))
    })?;
    if !scene.ego.is_complete() {
        return Err(crate::Error::Data(format!(
            "scene {}: ego track has gaps",
            scene.id
        )));
    }
    let (heading, heading_fallback) = match derive_heading(scene) {
        Some(h) => (h, false),
        None => (0.0, true),
    };
    let frame = EgoFrame { origin, heading };
    let local = |p: Point| frame.to_local(p);
    let mut ego = scene.ego.map_points(local);
    // exact by definition rather than up to rounding
    if let Some(last) = ego.positions.last_mut() {
        *last = Some([0.0, 0.0]);
    }
    let normalized = Scene {
        id: scene.id.clone(),
        ego,
        neighbors: scene.neighbors.iter().map(|n| n.map_points(local)).collect(),
        heading: Some(0.0),
        map: scene.map.clone(),
        future: scene.future.as_ref().map(|f| f.iter().map(|&p| local(p)).collect()),
    };
    Ok(NormalizedScene {
        scene: normalized,
        frame,
        heading_fallback,
    })
}
