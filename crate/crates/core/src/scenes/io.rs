//! JSONL scene files: one scene object per line, world-frame meters.
//!
//! ```text
//! {"id": "...", "ego": [[x, y]; T+1], "neighbors": [[[x, y] | null; T+1]; I],
//!  "heading": rad | null, "map": {"channels": 3×H×W of 0/1, "resolution": m, "extent": m} | null,
//!  "future": [[x, y]; N] | null}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MapRaster, Point, Scene, Track, FUTURE_STEPS, HISTORY_STEPS};
use crate::{Error, Result};

/// Per-dataset sequence lengths enforced when loading.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSchema {
    /// Encoded history steps `T`; tracks carry `T + 1` positions.
    pub history_steps: usize,
    /// Future points `N`.
    pub future_steps: usize,
}

impl Default for SceneSchema {
    fn default() -> Self {
        Self {
            history_steps: HISTORY_STEPS,
            future_steps: FUTURE_STEPS,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    id: String,
    ego: Vec<Point>,
    #[serde(default)]
    neighbors: Vec<Vec<Option<Point>>>,
    #[serde(default)]
    heading: Option<f64>,
    #[serde(default)]
    map: Option<MapRecord>,
    #[serde(default)]
    future: Option<Vec<Point>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapRecord {
    channels: Vec<Vec<Vec<u8>>>,
    resolution: f64,
    extent: f64,
}

impl From<&Scene> for SceneRecord {
    fn from(s: &Scene) -> Self {
        SceneRecord {
            id: s.id.clone(),
            ego: s.ego.positions.iter().map(|p| p.unwrap_or([f64::NAN; 2])).collect(),
            neighbors: s.neighbors.iter().map(|n| n.positions.clone()).collect(),
            heading: s.heading,
            map: s.map.as_ref().map(|m| MapRecord {
                channels: m
                    .cells()
                    .chunks(m.height * m.width)
                    .map(|plane| plane.chunks(m.width).map(<[u8]>::to_vec).collect())
                    .collect(),
                resolution: m.resolution,
                extent: m.extent,
            }),
            future: s.future.clone(),
        }
    }
}

fn schema_err(line: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        line,
        field: field.into(),
        message: message.into(),
    }
}

impl SceneRecord {
    fn into_scene(self, line: usize, schema: &SceneSchema) -> Result<Scene> {
        let raw = schema.history_steps + 1;
        let len_err = |field: String, got: usize, want: usize| {
            schema_err(line, field.clone(), format!("{field} length {got}, expected {want}"))
        };
        if self.ego.len() != raw {
            return Err(len_err("ego".into(), self.ego.len(), raw));
        }
        if self.ego.iter().flatten().any(|v| !v.is_finite()) {
            return Err(schema_err(line, "ego", "non-finite coordinate"));
        }
        for (i, n) in self.neighbors.iter().enumerate() {
            if n.len() != raw {
                return Err(len_err(format!("neighbors[{i}]"), n.len(), raw));
            }
        }
        if let Some(f) = &self.future {
            if f.len() != schema.future_steps {
                return Err(len_err("future".into(), f.len(), schema.future_steps));
            }
        }
        let map = match self.map {
            None => None,
            Some(m) => {
                let height = m.channels.first().map_or(0, Vec::len);
                let width = m.channels.first().and_then(|c| c.first()).map_or(0, Vec::len);
                if m.channels.len() != 3 {
                    return Err(schema_err(
                        line,
                        "map.channels",
                        format!("{} channels, expected 3", m.channels.len()),
                    ));
                }
                let mut cells = Vec::with_capacity(3 * height * width);
                for (c, plane) in m.channels.iter().enumerate() {
                    if plane.len() != height || plane.iter().any(|r| r.len() != width) {
                        return Err(schema_err(
                            line,
                            format!("map.channels[{c}]"),
                            format!("ragged grid, expected {height}×{width}"),
                        ));
                    }
                    plane.iter().for_each(|r| cells.extend_from_slice(r));
                }
                Some(
                    MapRaster::from_cells(height, width, m.resolution, m.extent, cells)
                        .map_err(|e| schema_err(line, "map.channels", e.to_string()))?,
                )
            }
        };
        Ok(Scene {
            id: self.id,
            ego: Track::fully_observed(self.ego),
            neighbors: self.neighbors.into_iter().map(|positions| Track { positions }).collect(),
            heading: self.heading,
            map,
            future: self.future,
        })
    }
}

pub fn write_scenes<W: Write>(scenes: &[Scene], mut out: W) -> Result<()> {
    let io = |e: std::io::Error| Error::Data(format!("write failed: {e}"));
    for scene in scenes {
        if !scene.ego.is_complete() {
            return Err(Error::Data(format!("scene {}: ego track has gaps", scene.id)));
        }
        serde_json::to_writer(&mut out, &SceneRecord::from(scene))
            .map_err(|e| Error::Data(format!("scene {}: {e}", scene.id)))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn save_scenes(scenes: &[Scene], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_scenes(scenes, BufWriter::new(file))
}

pub fn parse_scenes<R: Read>(input: R, schema: &SceneSchema) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let number = i + 1;
        let line = line.map_err(|e| schema_err(number, "<line>", e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(&line);
        let record: SceneRecord = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            schema_err(number, field, e.into_inner().to_string())
        })?;
        scenes.push(record.into_scene(number, schema)?);
    }
    Ok(scenes)
}

pub fn load_scenes(path: &Path, schema: &SceneSchema) -> Result<Vec<Scene>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_scenes(file, schema)
}
