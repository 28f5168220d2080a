//! PNG rendering of a scene with its map, tracks and predictions.

use std::path::Path;

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{Rgb, RgbImage};

use maptraj_core::scenes::{normalize_scene, MapChannel, Point, Scene};

use crate::error::{HarnessError, Result};

const SCALE: u32 = 4;
const DEFAULT_EXTENT: f64 = 25.0;
const DEFAULT_CELLS: u32 = 100;
const LEGEND_ROW: u32 = 12;
const MARGIN: u32 = 6;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const DRIVABLE: Rgb<u8> = Rgb([214, 214, 214]);
const INTERSECTION: Rgb<u8> = Rgb([240, 226, 170]);
const DIVIDER: Rgb<u8> = Rgb([120, 120, 120]);
const TEXT: Rgb<u8> = Rgb([20, 20, 20]);
const HISTORY: Rgb<u8> = Rgb([30, 80, 220]);
const NEIGHBOR: Rgb<u8> = Rgb([150, 110, 170]);
const TRUTH: Rgb<u8> = Rgb([20, 150, 50]);
const PREDICTIONS: [Rgb<u8>; 5] = [
    Rgb([220, 40, 40]),
    Rgb([240, 140, 0]),
    Rgb([200, 0, 200]),
    Rgb([0, 170, 190]),
    Rgb([130, 80, 20]),
];

/// A labelled ego-frame trajectory to overlay.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotTrajectory {
    pub label: String,
    pub points: Vec<Point>,
}

struct View {
    half_w: f64,
    half_h: f64,
    px_per_m: f64,
}

impl View {
    fn pixel(&self, p: Point) -> (f64, f64) {
        ((p[0] + self.half_w) * self.px_per_m, (self.half_h - p[1]) * self.px_per_m)
    }
}

/// Draws `scene` in its ego frame with `predictions` on top and writes a PNG
/// to `path`. Returns the legend entries in drawing order.
pub fn render_scene_plot(scene: &Scene, predictions: &[PlotTrajectory], path: &Path) -> Result<Vec<String>> {
    let local = normalize_scene(scene)?;
    let (cols, rows, view) = match &local.map {
        Some(m) => (
            m.width as u32,
            m.height as u32,
            View {
                half_w: m.width as f64 * m.resolution / 2.0,
                half_h: m.height as f64 * m.resolution / 2.0,
                px_per_m: SCALE as f64 / m.resolution,
            },
        ),
        None => (
            DEFAULT_CELLS,
            DEFAULT_CELLS,
            View {
                half_w: DEFAULT_EXTENT,
                half_h: DEFAULT_EXTENT,
                px_per_m: (DEFAULT_CELLS * SCALE) as f64 / (2.0 * DEFAULT_EXTENT),
            },
        ),
    };

    let mut legend: Vec<(String, Option<Rgb<u8>>)> = vec![
        ("frame: ego (x forward, m)".into(), None),
        ("history".into(), Some(HISTORY)),
    ];
    if !local.neighbors.is_empty() {
        legend.push(("neighbors".into(), Some(NEIGHBOR)));
    }
    if local.future.is_some() {
        legend.push(("ground truth".into(), Some(TRUTH)));
    }
    for (i, p) in predictions.iter().enumerate() {
        legend.push((p.label.clone(), Some(PREDICTIONS[i % PREDICTIONS.len()])));
    }

    let (w, map_h) = (cols * SCALE, rows * SCALE);
    let h = map_h + 2 * MARGIN + LEGEND_ROW * legend.len() as u32;
    let mut img = RgbImage::from_pixel(w, h, WHITE);

    if let Some(map) = &local.map {
        for r in 0..map.height {
            for c in 0..map.width {
                let color = if map.get(MapChannel::LaneDivider, r, c) == 1 {
                    DIVIDER
                } else if map.get(MapChannel::Intersection, r, c) == 1 {
                    INTERSECTION
                } else if map.get(MapChannel::Drivable, r, c) == 1 {
                    DRIVABLE
                } else {
                    continue;
                };
                fill_rect(&mut img, c as i64 * SCALE as i64, r as i64 * SCALE as i64, SCALE, SCALE, color);
            }
        }
    }

    let mut canvas = Canvas { img: &mut img, map_h };
    for n in &local.neighbors {
        let pts: Vec<Point> = n.positions.iter().flatten().copied().collect();
        canvas.polyline(&view, &pts, NEIGHBOR, true);
    }
    let history: Vec<Point> = local.ego.positions.iter().flatten().copied().collect();
    canvas.polyline(&view, &history, HISTORY, true);
    if let Some(future) = &local.future {
        canvas.polyline(&view, &with_origin(future), TRUTH, false);
    }
    for (i, p) in predictions.iter().enumerate() {
        canvas.polyline(&view, &with_origin(&p.points), PREDICTIONS[i % PREDICTIONS.len()], true);
    }

    let mut y = map_h + MARGIN;
    for (entry, swatch) in &legend {
        let mut x = MARGIN as i64;
        if let Some(c) = swatch {
            fill_rect(&mut img, x, y as i64 + 3, 14, 3, *c);
            x += 20;
        }
        draw_text(&mut img, x, y as i64, entry, TEXT);
        y += LEGEND_ROW;
    }

    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::output(path, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| HarnessError::output(path, e))?;
    Ok(legend.into_iter().map(|(label, _)| label).collect())
}

fn with_origin(points: &[Point]) -> Vec<Point> {
    std::iter::once([0.0, 0.0]).chain(points.iter().copied()).collect()
}

struct Canvas<'a> {
    img: &'a mut RgbImage,
    map_h: u32,
}

impl Canvas<'_> {
    fn dot(&mut self, x: i64, y: i64, radius: i64, color: Rgb<u8>) {
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let (px, py) = (x + dx, y + dy);
                if px >= 0 && py >= 0 && (px as u32) < self.img.width() && (py as u32) < self.map_h {
                    self.img.put_pixel(px as u32, py as u32, color);
                }
            }
        }
    }

    fn polyline(&mut self, view: &View, points: &[Point], color: Rgb<u8>, markers: bool) {
        let px: Vec<(f64, f64)> = points.iter().map(|&p| view.pixel(p)).collect();
        for pair in px.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
                self.dot(x.round() as i64, y.round() as i64, 0, color);
            }
        }
        if markers {
            for &(x, y) in &px {
                self.dot(x.round() as i64, y.round() as i64, 1, color);
            }
        }
    }
}

fn fill_rect(img: &mut RgbImage, x: i64, y: i64, w: u32, h: u32, color: Rgb<u8>) {
    for yy in y.max(0)..(y + h as i64).min(img.height() as i64) {
        for xx in x.max(0)..(x + w as i64).min(img.width() as i64) {
            img.put_pixel(xx as u32, yy as u32, color);
        }
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    for (i, ch) in text.chars().enumerate() {
        let Some(glyph) = BASIC_FONTS.get(ch) else {
            continue;
        };
        let gx = x + 8 * i as i64;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits & (1 << col) != 0 {
                    fill_rect(img, gx + col, y + row as i64, 1, 1, color);
                }
            }
        }
    }
}
