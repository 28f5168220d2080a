//! Synthetic driving scenarios: straight roads, constant-curvature turns and
//! stop-then-turn corners.
//!
//! Each scene is built in a road frame where the ego sits at the origin at
//! `t = 0` heading along `+x`, then placed at a random world pose. The map
//! raster is produced by [`rasterize_map`] from the world-frame geometry, so
//! it goes through exactly the same path as externally supplied maps.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::raster::{rasterize_map, MapGeometry, RasterConfig};
use super::{EgoFrame, Point, Scene, Track, FUTURE_STEPS, HISTORY_STEPS, SAMPLE_PERIOD};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Straight,
    Turn,
    Intersection,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [
        ScenarioKind::Straight,
        ScenarioKind::Turn,
        ScenarioKind::Intersection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Straight => "straight",
            ScenarioKind::Turn => "turn",
            ScenarioKind::Intersection => "intersection",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| crate::Error::Config(format!("unknown scenario kind `{s}`")))
    }
}

/// Relative frequency of each scenario kind in a mixed dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KindWeights {
    pub straight: f64,
    pub turn: f64,
    pub intersection: f64,
}

impl Default for KindWeights {
    // turning-heavy
    fn default() -> Self {
        Self {
            straight: 0.2,
            turn: 0.4,
            intersection: 0.4,
        }
    }
}

/// Generator parameters. Every range is `[low, high]`; out-of-bound values
/// are clamped (see [`GeneratorConfig::sanitized`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Ego speed on straight roads, m/s. Bounds [0.5, 30].
    pub straight_speed: [f64; 2],
    /// Ego speed on curves, m/s. Bounds [0.5, 30].
    pub turn_speed: [f64; 2],
    /// Curve radius, m. Bounds [8, 500].
    pub turn_radius: [f64; 2],
    /// Largest heading change over the future horizon of a curve, rad. Bounds [0.1, π].
    pub turn_max_sweep: f64,
    /// Corner scenes: speed at the start of the history, m/s. Bounds [0.5, 30].
    pub approach_speed: [f64; 2],
    /// Corner scenes: speed at `t = 0`, m/s. Bounds [0, 5].
    pub stop_speed: [f64; 2],
    /// Corner scenes: acceleration out of the stop, m/s². Bounds [0.1, 5].
    pub launch_accel: [f64; 2],
    /// Corner scenes: speed reached after the launch, m/s. Bounds [1, 30].
    pub cruise_speed: [f64; 2],
    /// Corner scenes: turning radius, m. Bounds [6, 30].
    pub corner_radius: [f64; 2],
    /// Corner scenes: distance from the ego to the junction entry, m. Bounds [0, 20].
    pub stop_distance: [f64; 2],
    /// Neighbor count range, inclusive. Bounds [0, 6].
    pub neighbor_count: [usize; 2],
    /// Probability that one of the neighbors is a lead vehicle on the ego's path.
    pub lead_probability: f64,
    /// Probability that a neighbor is missing at its first observed timesteps.
    pub dropout_probability: f64,
    /// Lane width, m. Bounds [2.5, 5].
    pub lane_width: f64,
    /// Mix used by [`generate_mixed_scene`].
    pub kind_weights: KindWeights,
    /// Encoded history steps `T`.
    pub history_steps: usize,
    /// Future points `N`.
    pub future_steps: usize,
    /// Seconds between samples.
    pub sample_period: f64,
    pub raster: RasterConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            straight_speed: [4.0, 14.0],
            turn_speed: [3.0, 8.0],
            turn_radius: [12.0, 60.0],
            turn_max_sweep: 2.1,
            approach_speed: [3.0, 8.0],
            stop_speed: [0.0, 1.5],
            launch_accel: [1.0, 2.5],
            cruise_speed: [6.0, 9.0],
            corner_radius: [6.0, 12.0],
            stop_distance: [0.0, 4.0],
            neighbor_count: [0, 6],
            lead_probability: 0.7,
            dropout_probability: 0.15,
            lane_width: 3.5,
            kind_weights: KindWeights::default(),
            history_steps: HISTORY_STEPS,
            future_steps: FUTURE_STEPS,
            sample_period: SAMPLE_PERIOD,
            raster: RasterConfig::default(),
        }
    }
}

fn clamp_range(r: [f64; 2], lo: f64, hi: f64) -> [f64; 2] {
    let a = r[0].min(r[1]).clamp(lo, hi);
    let b = r[0].max(r[1]).clamp(lo, hi);
    [a, b]
}

impl GeneratorConfig {
    /// Copy with every parameter clamped to its documented bounds.
    pub fn sanitized(&self) -> Self {
        let c = self;
        let counts = [
            c.neighbor_count[0].min(c.neighbor_count[1]).min(6),
            c.neighbor_count[0].max(c.neighbor_count[1]).min(6),
        ];
        let w = c.kind_weights;
        let weights = [w.straight, w.turn, w.intersection].map(|v| if v.is_finite() { v.max(0.0) } else { 0.0 });
        let weights = if weights.iter().sum::<f64>() > 0.0 {
            weights
        } else {
            [1.0, 1.0, 1.0]
        };
        Self {
            straight_speed: clamp_range(c.straight_speed, 0.5, 30.0),
            turn_speed: clamp_range(c.turn_speed, 0.5, 30.0),
            turn_radius: clamp_range(c.turn_radius, 8.0, 500.0),
            turn_max_sweep: c.turn_max_sweep.clamp(0.1, PI),
            approach_speed: clamp_range(c.approach_speed, 0.5, 30.0),
            stop_speed: clamp_range(c.stop_speed, 0.0, 5.0),
            launch_accel: clamp_range(c.launch_accel, 0.1, 5.0),
            cruise_speed: clamp_range(c.cruise_speed, 1.0, 30.0),
            corner_radius: clamp_range(c.corner_radius, 6.0, 30.0),
            stop_distance: clamp_range(c.stop_distance, 0.0, 20.0),
            neighbor_count: counts,
            lead_probability: c.lead_probability.clamp(0.0, 1.0),
            dropout_probability: c.dropout_probability.clamp(0.0, 1.0),
            lane_width: c.lane_width.clamp(2.5, 5.0),
            kind_weights: KindWeights {
                straight: weights[0],
                turn: weights[1],
                intersection: weights[2],
            },
            history_steps: c.history_steps.clamp(1, 32),
            future_steps: c.future_steps.clamp(1, 64),
            sample_period: c.sample_period.clamp(0.05, 2.0),
            raster: RasterConfig {
                extent: c.raster.extent.clamp(1.0, 400.0),
                resolution: c.raster.resolution.clamp(0.05, 10.0),
            },
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Pose {
    p: Point,
    heading: f64,
}

impl Pose {
    // Travel `ds` (possibly negative) along a circle of curvature `k`.
    fn advance(self, k: f64, ds: f64) -> Pose {
        let h = self.heading;
        if k.abs() < 1e-12 {
            Pose {
                p: [self.p[0] + ds * h.cos(), self.p[1] + ds * h.sin()],
                heading: h,
            }
        } else {
            let h2 = h + k * ds;
            Pose {
                p: [
                    self.p[0] + (h2.sin() - h.sin()) / k,
                    self.p[1] - (h2.cos() - h.cos()) / k,
                ],
                heading: h2,
            }
        }
    }

    fn offset(self, lateral: f64) -> Point {
        [
            self.p[0] - lateral * self.heading.sin(),
            self.p[1] + lateral * self.heading.cos(),
        ]
    }
}

/// Arc-length parameterized centreline. `s = 0` is `start`; negative `s`
/// follows `back_curvature`; past the last segment the path continues straight.
#[derive(Clone, Debug)]
struct Path {
    start: Pose,
    back_curvature: f64,
    segments: Vec<(f64, f64)>, // (length, curvature)
}

impl Path {
    fn line(start: Point, heading: f64) -> Self {
        Path {
            start: Pose { p: start, heading },
            back_curvature: 0.0,
            segments: Vec::new(),
        }
    }

    fn pose(&self, s: f64) -> Pose {
        if s < 0.0 {
            return self.start.advance(self.back_curvature, s);
        }
        let mut pose = self.start;
        let mut left = s;
        for &(len, k) in &self.segments {
            if left <= len {
                return pose.advance(k, left);
            }
            pose = pose.advance(k, len);
            left -= len;
        }
        pose.advance(0.0, left)
    }

    fn point(&self, s: f64, lateral: f64) -> Point {
        self.pose(s).offset(lateral)
    }

    fn polyline(&self, from: f64, to: f64, lateral: f64) -> Vec<Point> {
        let n = ((to - from).abs().ceil() as usize).max(1);
        (0..=n)
            .map(|i| self.point(from + (to - from) * i as f64 / n as f64, lateral))
            .collect()
    }

    // Band between two lateral offsets as a closed polygon.
    fn band(&self, from: f64, to: f64, right: f64, left: f64) -> Vec<Point> {
        let mut poly = self.polyline(from, to, left);
        let mut back = self.polyline(from, to, right);
        back.reverse();
        poly.extend(back);
        poly
    }
}

/// Distance travelled along a path as a function of time.
#[derive(Clone, Copy, Debug)]
enum Motion {
    Constant { s0: f64, speed: f64 },
    /// Linear deceleration over the history into `stop_speed` at `t = 0`,
    /// then constant acceleration up to `cruise`.
    StopAndGo {
        s0: f64,
        decel: f64,
        stop_speed: f64,
        accel: f64,
        cruise: f64,
    },
}

impl Motion {
    fn s(&self, t: f64) -> f64 {
        match *self {
            Motion::Constant { s0, speed } => s0 + speed * t,
            Motion::StopAndGo {
                s0,
                decel,
                stop_speed,
                accel,
                cruise,
            } => {
                if t <= 0.0 {
                    s0 + stop_speed * t - 0.5 * decel * t * t
                } else {
                    let t_cruise = ((cruise - stop_speed) / accel).max(0.0);
                    if t <= t_cruise {
                        s0 + stop_speed * t + 0.5 * accel * t * t
                    } else {
                        let s_c = stop_speed * t_cruise + 0.5 * accel * t_cruise * t_cruise;
                        s0 + s_c + cruise.max(stop_speed) * (t - t_cruise)
                    }
                }
            }
        }
    }

    fn shifted(self, dt: f64, ds: f64) -> MotionShift {
        MotionShift { base: self, dt, ds }
    }
}

#[derive(Clone, Copy, Debug)]
struct MotionShift {
    base: Motion,
    dt: f64,
    ds: f64,
}

struct Agent<'a> {
    path: &'a Path,
    lateral: f64,
    /// +1 along the path direction, -1 against it.
    direction: f64,
    motion: MotionShift,
}

impl Agent<'_> {
    fn at(&self, t: f64) -> Point {
        let s = self.motion.base.s(t + self.motion.dt) + self.motion.ds;
        self.path.point(self.direction * s, self.lateral)
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..r[1])
    } else {
        r[0]
    }
}

struct Layout {
    geometry: MapGeometry,
    ego_path: Path,
    ego_motion: Motion,
    neighbors: Vec<(Path, f64, f64, MotionShift)>, // path, lateral, direction, motion
}

fn straight_layout(c: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Layout {
    let w = c.lane_width;
    let path = Path::line([0.0, 0.0], 0.0);
    let speed = uniform(rng, c.straight_speed);
    let far = 200.0;
    let geometry = MapGeometry {
        drivable: vec![vec![[-far, -w / 2.0], [far, -w / 2.0], [far, 3.5 * w], [-far, 3.5 * w]]],
        lane_dividers: [0.5, 1.5, 2.5]
            .iter()
            .map(|k| vec![[-far, k * w], [far, k * w]])
            .collect(),
        intersections: Vec::new(),
    };
    let ego_motion = Motion::Constant { s0: 0.0, speed };
    let mut neighbors = Vec::new();
    let count = neighbor_count(c, rng);
    let mut lead = rng.gen_bool(c.lead_probability) && count > 0;
    for _ in 0..count {
        if lead {
            lead = false;
            let gap = rng.gen_range(8.0..30.0);
            let v = speed * rng.gen_range(0.8..1.2);
            neighbors.push((path.clone(), 0.0, 1.0, Motion::Constant { s0: gap, speed: v }.shifted(0.0, 0.0)));
            continue;
        }
        if rng.gen_bool(0.5) {
            let v = uniform(rng, c.straight_speed);
            let s0 = rng.gen_range(-30.0..30.0);
            neighbors.push((path.clone(), w, 1.0, Motion::Constant { s0, speed: v }.shifted(0.0, 0.0)));
        } else {
            let v = uniform(rng, c.straight_speed);
            let s0 = rng.gen_range(-60.0..20.0);
            let lane = if rng.gen_bool(0.5) { 2.0 } else { 3.0 };
            neighbors.push((path.clone(), lane * w, -1.0, Motion::Constant { s0, speed: v }.shifted(0.0, 0.0)));
        }
    }
    Layout {
        geometry,
        ego_path: path,
        ego_motion,
        neighbors,
    }
}

fn turn_layout(c: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Layout {
    let w = c.lane_width;
    let speed = uniform(rng, c.turn_speed);
    let horizon = c.future_steps as f64 * c.sample_period;
    let history = c.history_steps as f64 * c.sample_period;
    let max_k = c.turn_max_sweep / (speed * horizon).max(1e-6);
    let k_range = [1.0 / c.turn_radius[1], (1.0 / c.turn_radius[0]).min(max_k)];
    let k_mag = if k_range[1] > k_range[0] {
        rng.gen_range(k_range[0]..k_range[1])
    } else {
        k_range[1]
    };
    let k = if rng.gen_bool(0.5) { k_mag } else { -k_mag };
    let path = Path {
        start: Pose {
            p: [0.0, 0.0],
            heading: 0.0,
        },
        back_curvature: k,
        segments: vec![(f64::INFINITY, k)],
    };
    // keep the band from wrapping onto itself
    let budget = 1.9 * PI / k.abs();
    let back = (speed * history + 15.0).min(budget * 0.3);
    let ahead = (speed * horizon + 25.0).min(budget - back);
    let geometry = MapGeometry {
        drivable: vec![path.band(-back, ahead, -w / 2.0, 1.5 * w)],
        lane_dividers: vec![path.polyline(-back, ahead, w / 2.0)],
        intersections: Vec::new(),
    };
    let mut neighbors = Vec::new();
    let count = neighbor_count(c, rng);
    let mut lead = rng.gen_bool(c.lead_probability) && count > 0;
    for _ in 0..count {
        if lead {
            lead = false;
            let gap = rng.gen_range(8.0..20.0);
            let v = speed * rng.gen_range(0.85..1.15);
            neighbors.push((path.clone(), 0.0, 1.0, Motion::Constant { s0: gap, speed: v }.shifted(0.0, 0.0)));
            continue;
        }
        if rng.gen_bool(0.5) {
            // oncoming lane
            let v = uniform(rng, c.turn_speed);
            let s0 = -rng.gen_range(0.0..(ahead.min(40.0)));
            neighbors.push((path.clone(), w, -1.0, Motion::Constant { s0, speed: v }.shifted(0.0, 0.0)));
        } else {
            // follower
            let v = speed * rng.gen_range(0.85..1.15);
            let s0 = -rng.gen_range(8.0..20.0);
            neighbors.push((path.clone(), 0.0, 1.0, Motion::Constant { s0, speed: v }.shifted(0.0, 0.0)));
        }
    }
    Layout {
        geometry,
        ego_path: path,
        ego_motion: Motion::Constant { s0: 0.0, speed },
        neighbors,
    }
}

fn intersection_layout(c: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Layout {
    let w = c.lane_width;
    let far = 150.0;
    let d = uniform(rng, c.stop_distance);
    let r = uniform(rng, c.corner_radius).max(1.5 * w);
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 }; // +1 left, -1 right
    let path = Path {
        start: Pose {
            p: [0.0, 0.0],
            heading: 0.0,
        },
        back_curvature: 0.0,
        segments: vec![(d, 0.0), (r * FRAC_PI_2, side / r)],
    };
    let history = c.history_steps as f64 * c.sample_period;
    let approach = uniform(rng, c.approach_speed);
    let stop = uniform(rng, c.stop_speed).min(approach);
    let motion = Motion::StopAndGo {
        s0: 0.0,
        decel: (approach - stop) / history,
        stop_speed: stop,
        accel: uniform(rng, c.launch_accel),
        cruise: uniform(rng, c.cruise_speed),
    };

    let exit_x = d + r;
    let exit_y = side * r;
    // exit road lanes: ego lane centred on exit_x, oncoming lane on its left
    let (exit_lo, exit_hi) = if side > 0.0 {
        (exit_x - 1.5 * w, exit_x + 0.5 * w)
    } else {
        (exit_x - 0.5 * w, exit_x + 1.5 * w)
    };
    let rect = |x0: f64, x1: f64, y0: f64, y1: f64| vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
    let (box_y0, box_y1) = if side > 0.0 {
        (-0.5 * w, exit_y.max(1.5 * w))
    } else {
        (exit_y, 1.5 * w)
    };
    let junction = rect(d, exit_hi, box_y0, box_y1);
    let exit_road = if side > 0.0 {
        rect(exit_lo, exit_hi, exit_y, exit_y + far)
    } else {
        rect(exit_lo, exit_hi, exit_y - far, exit_y)
    };
    let exit_divider_x = if side > 0.0 { exit_x - 0.5 * w } else { exit_x + 0.5 * w };
    let geometry = MapGeometry {
        drivable: vec![rect(-far, d, -0.5 * w, 1.5 * w), junction.clone(), exit_road],
        lane_dividers: vec![
            vec![[-far, 0.5 * w], [d, 0.5 * w]],
            vec![[exit_divider_x, exit_y], [exit_divider_x, exit_y + side * far]],
        ],
        intersections: vec![junction],
    };

    // paths for other traffic
    let oncoming_approach = Path::line([d, w], PI);
    let exit_heading = side * FRAC_PI_2;
    let inbound_exit = Path::line(
        [exit_x - side * w, exit_y + side * far],
        exit_heading + PI,
    );

    let mut neighbors = Vec::new();
    let count = neighbor_count(c, rng);
    let mut lead = rng.gen_bool(c.lead_probability) && count > 0;
    for _ in 0..count {
        if lead {
            lead = false;
            let dt = rng.gen_range(1.5..3.0);
            let gap = rng.gen_range(4.0..8.0);
            neighbors.push((path.clone(), 0.0, 1.0, motion.shifted(dt, gap)));
            continue;
        }
        match rng.gen_range(0..3) {
            0 => {
                let v = uniform(rng, c.straight_speed);
                let s0 = rng.gen_range(-20.0..20.0);
                neighbors.push((oncoming_approach.clone(), 0.0, 1.0, Motion::Constant { s0, speed: v }.shifted(0.0, 0.0)));
            }
            1 => {
                let v = uniform(rng, c.straight_speed);
                let s0 = far - rng.gen_range(20.0..45.0);
                neighbors.push((inbound_exit.clone(), 0.0, 1.0, Motion::Constant { s0, speed: v }.shifted(0.0, 0.0)));
            }
            _ => {
                // follower queued behind the ego
                let gap = rng.gen_range(7.0..15.0);
                neighbors.push((path.clone(), 0.0, 1.0, motion.shifted(0.0, -gap)));
            }
        }
    }
    Layout {
        geometry,
        ego_path: path,
        ego_motion: motion,
        neighbors,
    }
}

fn neighbor_count(c: &GeneratorConfig, rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(c.neighbor_count[0]..=c.neighbor_count[1])
}

fn kind_seed(kind: ScenarioKind, seed: u64) -> u64 {
    let tag = match kind {
        ScenarioKind::Straight => 0x5354,
        ScenarioKind::Turn => 0x5455,
        ScenarioKind::Intersection => 0x494e,
    };
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ tag
}

/// Deterministic scene of the given kind.
pub fn generate_synthetic_scene(kind: ScenarioKind, seed: u64, config: &GeneratorConfig) -> Result<Scene> {
    let c = config.sanitized();
    let mut rng = ChaCha8Rng::seed_from_u64(kind_seed(kind, seed));
    let layout = match kind {
        ScenarioKind::Straight => straight_layout(&c, &mut rng),
        ScenarioKind::Turn => turn_layout(&c, &mut rng),
        ScenarioKind::Intersection => intersection_layout(&c, &mut rng),
    };

    let pose = EgoFrame {
        origin: [rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0)],
        heading: rng.gen_range(-PI..PI),
    };
    let world = |p: Point| pose.to_world(p);
    let dt = c.sample_period;
    let history_times: Vec<f64> = (0..=c.history_steps)
        .map(|k| (k as f64 - c.history_steps as f64) * dt)
        .collect();

    let ego_agent = Agent {
        path: &layout.ego_path,
        lateral: 0.0,
        direction: 1.0,
        motion: layout.ego_motion.shifted(0.0, 0.0),
    };
    let mut ego: Vec<Point> = history_times.iter().map(|&t| world(ego_agent.at(t))).collect();
    // the ego frame origin is exact by construction
    *ego.last_mut().expect("history is nonempty") = pose.origin;
    let future: Vec<Point> = (1..=c.future_steps)
        .map(|k| world(ego_agent.at(k as f64 * dt)))
        .collect();

    let neighbors = layout
        .neighbors
        .iter()
        .map(|(path, lateral, direction, motion)| {
            let agent = Agent {
                path,
                lateral: *lateral,
                direction: *direction,
                motion: *motion,
            };
            let hidden = if rng.gen_bool(c.dropout_probability) {
                rng.gen_range(1..=c.history_steps)
            } else {
                0
            };
            Track {
                positions: history_times
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| (i >= hidden).then(|| world(agent.at(t))))
                    .collect(),
            }
        })
        .collect();

    let world_geometry = MapGeometry {
        lane_dividers: layout.geometry.lane_dividers.iter().map(|l| l.iter().map(|&p| world(p)).collect()).collect(),
        drivable: layout.geometry.drivable.iter().map(|l| l.iter().map(|&p| world(p)).collect()).collect(),
        intersections: layout.geometry.intersections.iter().map(|l| l.iter().map(|&p| world(p)).collect()).collect(),
    };
    let map = rasterize_map(&world_geometry, &pose, &c.raster)?;

    Ok(Scene {
        id: format!("{}-{seed}", kind.name()),
        ego: Track::fully_observed(ego),
        neighbors,
        heading: Some(pose.heading),
        map: Some(map),
        future: Some(future),
    })
}

/// Draws the scenario kind from `config.kind_weights`, then generates it.
pub fn generate_mixed_scene(seed: u64, config: &GeneratorConfig) -> Result<Scene> {
    let c = config.sanitized();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4d49_5845);
    let w = c.kind_weights;
    let total = w.straight + w.turn + w.intersection;
    let u = rng.gen_range(0.0..total);
    let kind = if u < w.straight {
        ScenarioKind::Straight
    } else if u < w.straight + w.turn {
        ScenarioKind::Turn
    } else {
        ScenarioKind::Intersection
    };
    generate_synthetic_scene(kind, seed, &c)
}

/// `count` scenes with seeds `base_seed..base_seed + count`. With `kind`
/// unset the kinds follow the configured mix.
pub fn generate_dataset(
    kind: Option<ScenarioKind>,
    count: usize,
    base_seed: u64,
    config: &GeneratorConfig,
) -> Result<Vec<Scene>> {
    (0..count as u64)
        .map(|i| {
            let seed = base_seed.wrapping_add(i);
            match kind {
                Some(k) => generate_synthetic_scene(k, seed, config),
                None => generate_mixed_scene(seed, config),
            }
        })
        .collect()
}
