//! Lightweight CNN over the local raster.
//!
//! Three stride-2 3×3 convolution stages with SiLU, then a per-cell affine
//! projection to `d_map`. Each cell of the final feature map is one map
//! token; the pooled feature is their mean. Padding replicates the border so
//! a constant raster yields identical tokens everywhere.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ConvGeometry, Graph, Mat, ParamId, ParamStore, Var};
use crate::nn::{uniform, Linear};
use crate::scenes::MapRaster;
use crate::{Error, Result};

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PADDING: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapEncoderConfig {
    pub height: usize,
    pub width: usize,
    /// Output channels of the three convolution stages.
    pub channels: [usize; 3],
    pub d_map: usize,
}

impl Default for MapEncoderConfig {
    fn default() -> Self {
        Self {
            height: 100,
            width: 100,
            channels: [16, 32, 64],
            d_map: 64,
        }
    }
}

impl MapEncoderConfig {
    fn geometries(&self) -> [ConvGeometry; 3] {
        let mut in_channels = 3;
        let (mut h, mut w) = (self.height, self.width);
        let mut out = [ConvGeometry {
            in_channels: 0,
            height: 0,
            width: 0,
            kernel: KERNEL,
            stride: STRIDE,
            padding: PADDING,
        }; 3];
        for (i, geom) in out.iter_mut().enumerate() {
            *geom = ConvGeometry {
                in_channels,
                height: h,
                width: w,
                kernel: KERNEL,
                stride: STRIDE,
                padding: PADDING,
            };
            h = geom.out_height();
            w = geom.out_width();
            in_channels = self.channels[i];
        }
        out
    }

    /// `(rows, cols)` of the token grid.
    pub fn grid(&self) -> (usize, usize) {
        let last = self.geometries()[2];
        (last.out_height(), last.out_width())
    }
}

/// Pooled vector plus row-major grid tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct MapFeature {
    pub pooled: Vec<f64>,
    /// `G × d_map`
    pub grid_tokens: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapEncoder {
    pub config: MapEncoderConfig,
    pub stages: [(ParamId, ParamId, ConvGeometry); 3],
    pub projection: Linear,
}

impl MapEncoder {
    pub fn new(store: &mut ParamStore, config: MapEncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let geoms = config.geometries();
        let stages = std::array::from_fn(|i| {
            let geom = geoms[i];
            let fan_in = geom.in_channels * KERNEL * KERNEL;
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = store.add(
                format!("map_encoder.conv{i}.weight"),
                uniform(rng, config.channels[i], fan_in, bound),
            );
            let b = store.add(
                format!("map_encoder.conv{i}.bias"),
                uniform(rng, 1, config.channels[i], bound),
            );
            (w, b, geom)
        });
        let projection = Linear::new(store, "map_encoder.projection", config.channels[2], config.d_map, true, rng);
        Self {
            config,
            stages,
            projection,
        }
    }

    pub fn check_raster(&self, raster: &MapRaster) -> Result<()> {
        let c = &self.config;
        if (raster.height, raster.width) != (c.height, c.width) {
            return Err(Error::Config(format!(
                "map raster is 3×{}×{}, encoder expects 3×{}×{}",
                raster.height, raster.width, c.height, c.width
            )));
        }
        Ok(())
    }

    /// Grid tokens (`G × d_map`) and the pooled feature (`1 × d_map`).
    pub fn encode<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, raster: &MapRaster) -> Result<(Var, Var)> {
        self.check_raster(raster)?;
        let input = Mat::from_shape_vec(
            (3, raster.height * raster.width),
            raster.cells().iter().map(|&c| c as f64).collect(),
        )
        .expect("raster cell count checked on construction");
        let mut x = g.constant_owned(input);
        for &(w, b, geom) in &self.stages {
            let (w, b) = (g.param(store, w), g.param(store, b));
            let y = g.conv2d(x, w, b, geom);
            x = g.silu(y);
        }
        let cells = g.transpose(x);
        let tokens = self.projection.forward(g, store, cells);
        let pooled = g.mean_rows(tokens);
        Ok((tokens, pooled))
    }

    pub fn encode_map(&self, store: &ParamStore, raster: &MapRaster) -> Result<MapFeature> {
        let mut g = Graph::new();
        let (tokens, pooled) = self.encode(&mut g, store, raster)?;
        Ok(MapFeature {
            pooled: g.value(pooled).iter().copied().collect(),
            grid_tokens: g.value(tokens).clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{generate_synthetic_scene, GeneratorConfig, ScenarioKind};
    use ndarray::Axis;
    use rand::SeedableRng;

    fn encoder(config: MapEncoderConfig, seed: u64) -> (ParamStore, MapEncoder) {
        let mut store = ParamStore::new();
        let enc = MapEncoder::new(&mut store, config, &mut ChaCha8Rng::seed_from_u64(seed));
        (store, enc)
    }

    #[test]
    fn default_grid_is_13_by_13() {
        assert_eq!(MapEncoderConfig::default().grid(), (13, 13));
    }

    #[test]
    fn zero_raster_gives_constant_tokens() {
        let (store, enc) = encoder(MapEncoderConfig::default(), 0);
        let f = enc.encode_map(&store, &MapRaster::empty(100, 100, 0.5, 50.0)).unwrap();
        assert_eq!(f.grid_tokens.dim(), (169, 64));
        let first = f.grid_tokens.row(0).to_owned();
        for row in f.grid_tokens.rows() {
            for (a, b) in row.iter().zip(first.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        for (p, b) in f.pooled.iter().zip(first.iter()) {
            assert!((p - b).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_pooled_is_mean() {
        let (store, enc) = encoder(MapEncoderConfig::default(), 1);
        let raster = generate_synthetic_scene(ScenarioKind::Intersection, 2, &GeneratorConfig::default())
            .unwrap()
            .map
            .unwrap();
        let a = enc.encode_map(&store, &raster).unwrap();
        let b = enc.encode_map(&store, &raster).unwrap();
        assert_eq!(a, b);
        let mean = a.grid_tokens.mean_axis(Axis(0)).unwrap();
        for (p, m) in a.pooled.iter().zip(mean.iter()) {
            assert!((p - m).abs() < 1e-6);
        }
        let c = enc.encode_map(&store, &raster.complement()).unwrap();
        let diff: f64 = a.pooled.iter().zip(&c.pooled).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-3, "{diff}");
    }

    #[test]
    fn shape_mismatch_names_both_dims() {
        let (store, enc) = encoder(MapEncoderConfig::default(), 2);
        let err = enc.encode_map(&store, &MapRaster::empty(64, 64, 0.5, 32.0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3×64×64") && msg.contains("3×100×100"), "{msg}");
    }
}
