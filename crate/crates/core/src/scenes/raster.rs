//! Ego-centred, heading-aligned map rasters.
//!
//! Pixel `(row, col)` covers local `x ∈ [-E/2 + col·r, -E/2 + (col+1)·r)` and
//! `y ∈ (E/2 - (row+1)·r, E/2 - row·r]`, so `+x` (ego forward) runs along
//! columns and `+y` (ego left) points up. The ego sits in pixel
//! `(H/2, W/2)`.

use serde::{Deserialize, Serialize};

use super::{EgoFrame, Point};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapChannel {
    Drivable = 0,
    LaneDivider = 1,
    Intersection = 2,
}

impl MapChannel {
    pub const ALL: [MapChannel; 3] = [
        MapChannel::Drivable,
        MapChannel::LaneDivider,
        MapChannel::Intersection,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RasterConfig {
    /// Side length of the square patch, meters.
    pub extent: f64,
    /// Meters per pixel.
    pub resolution: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            extent: 50.0,
            resolution: 0.5,
        }
    }
}

impl RasterConfig {
    pub fn size(&self) -> Result<usize> {
        if !(self.resolution > 0.0 && self.extent > 0.0) {
            return Err(Error::Config(format!(
                "raster extent and resolution must be positive (got {} m, {} m/px)",
                self.extent, self.resolution
            )));
        }
        Ok((self.extent / self.resolution).round().max(1.0) as usize)
    }
}

/// Three binary channels: drivable area, lane dividers, intersections.
#[derive(Clone, Debug, PartialEq)]
pub struct MapRaster {
    pub height: usize,
    pub width: usize,
    pub resolution: f64,
    pub extent: f64,
    cells: Vec<u8>,
}

impl MapRaster {
    pub fn empty(height: usize, width: usize, resolution: f64, extent: f64) -> Self {
        Self {
            height,
            width,
            resolution,
            extent,
            cells: vec![0; 3 * height * width],
        }
    }

    /// Builds a raster from channel-major cells; every cell must be 0 or 1.
    pub fn from_cells(
        height: usize,
        width: usize,
        resolution: f64,
        extent: f64,
        cells: Vec<u8>,
    ) -> Result<Self> {
        if cells.len() != 3 * height * width {
            return Err(Error::shape("map raster", 3 * height * width, cells.len()));
        }
        if let Some(bad) = cells.iter().find(|&&c| c > 1) {
            return Err(Error::Data(format!("map cell value {bad} is not 0 or 1")));
        }
        Ok(Self {
            height,
            width,
            resolution,
            extent,
            cells,
        })
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, channel: MapChannel, row: usize, col: usize) -> u8 {
        self.cells[self.index(channel, row, col)]
    }

    pub fn set(&mut self, channel: MapChannel, row: usize, col: usize, on: bool) {
        let i = self.index(channel, row, col);
        self.cells[i] = on as u8;
    }

    fn index(&self, channel: MapChannel, row: usize, col: usize) -> usize {
        (channel as usize * self.height + row) * self.width + col
    }

    pub fn channel(&self, channel: MapChannel) -> &[u8] {
        let n = self.height * self.width;
        &self.cells[channel as usize * n..(channel as usize + 1) * n]
    }

    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    /// Pixel containing a local point, if inside the patch.
    pub fn pixel_of(&self, p: Point) -> Option<(usize, usize)> {
        let half_w = self.width as f64 * self.resolution / 2.0;
        let half_h = self.height as f64 * self.resolution / 2.0;
        let col = ((p[0] + half_w) / self.resolution).floor();
        let row = ((half_h - p[1]) / self.resolution).floor();
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 {
            None
        } else {
            Some((row as usize, col as usize))
        }
    }

    /// The same raster with every cell flipped.
    pub fn complement(&self) -> Self {
        Self {
            cells: self.cells.iter().map(|c| 1 - c).collect(),
            ..self.clone()
        }
    }
}

/// Vector map geometry in world meters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MapGeometry {
    pub lane_dividers: Vec<Vec<Point>>,
    pub drivable: Vec<Vec<Point>>,
    pub intersections: Vec<Vec<Point>>,
}

/// Crops and rasterizes map geometry around the ego pose. Polylines are
/// drawn as 1-pixel strokes; polygons are filled by pixel-centre sampling.
pub fn rasterize_map(geometry: &MapGeometry, pose: &EgoFrame, config: &RasterConfig) -> Result<MapRaster> {
    let size = config.size()?;
    let mut raster = MapRaster::empty(size, size, config.resolution, config.extent);
    let local = |poly: &Vec<Point>| -> Vec<Point> { poly.iter().map(|&p| pose.to_local(p)).collect() };

    for poly in &geometry.drivable {
        fill_polygon(&mut raster, MapChannel::Drivable, &local(poly));
    }
    for poly in &geometry.intersections {
        fill_polygon(&mut raster, MapChannel::Intersection, &local(poly));
    }
    for line in &geometry.lane_dividers {
        let pts = local(line);
        for seg in pts.windows(2) {
            draw_segment(&mut raster, MapChannel::LaneDivider, seg[0], seg[1]);
        }
    }

    // The ego pixel's centre is offset from the ego point by half a pixel.
    if geometry
        .drivable
        .iter()
        .any(|poly| contains(&local(poly), [0.0, 0.0]))
    {
        let (r, c) = raster.center();
        raster.set(MapChannel::Drivable, r, c, true);
    }
    Ok(raster)
}

/// Even-odd point-in-polygon test.
pub(crate) fn contains(poly: &[Point], p: Point) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn fill_polygon(raster: &mut MapRaster, channel: MapChannel, poly: &[Point]) {
    if poly.len() < 3 {
        return;
    }
    let res = raster.resolution;
    let half_w = raster.width as f64 * res / 2.0;
    let half_h = raster.height as f64 * res / 2.0;
    let n = poly.len();
    let mut crossings = Vec::new();
    for row in 0..raster.height {
        let y = half_h - (row as f64 + 0.5) * res;
        crossings.clear();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            if (a[1] > y) != (b[1] > y) {
                crossings.push(a[0] + (y - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for pair in crossings.chunks_exact(2) {
            // columns whose centre x_c satisfies pair[0] <= x_c < pair[1]
            let first = ((pair[0] + half_w) / res - 0.5).ceil().max(0.0);
            let end = ((pair[1] + half_w) / res - 0.5).ceil().min(raster.width as f64);
            let mut col = first;
            while col < end {
                raster.set(channel, row, col as usize, true);
                col += 1.0;
            }
        }
    }
}

// Liang–Barsky clip of segment a→b to the axis-aligned box [-hw, hw] × [-hh, hh].
fn clip(a: Point, b: Point, hw: f64, hh: f64) -> Option<(Point, Point)> {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [
        (-dx, a[0] + hw),
        (dx, hw - a[0]),
        (-dy, a[1] + hh),
        (dy, hh - a[1]),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then(|| ([a[0] + t0 * dx, a[1] + t0 * dy], [a[0] + t1 * dx, a[1] + t1 * dy]))
}

fn draw_segment(raster: &mut MapRaster, channel: MapChannel, a: Point, b: Point) {
    let res = raster.resolution;
    let hw = raster.width as f64 * res / 2.0;
    let hh = raster.height as f64 * res / 2.0;
    let Some((a, b)) = clip(a, b, hw, hh) else { return };
    let to_px = |p: Point| -> (i64, i64) {
        let col = ((p[0] + hw) / res).floor().clamp(0.0, raster.width as f64 - 1.0);
        let row = ((hh - p[1]) / res).floor().clamp(0.0, raster.height as f64 - 1.0);
        (col as i64, row as i64)
    };
    let (mut x0, mut y0) = to_px(a);
    let (x1, y1) = to_px(b);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        raster.set(channel, y0 as usize, x0 as usize, true);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}
