//! Synthetic samples with known defects.
//!
//! Terrain comes from diamond-square midpoint displacement at DEM
//! resolution; the ortho is a hillshade of the terrain upsampled to ortho
//! resolution. Defects follow the patterns seen in stereo DEMs: sentinel
//! blobs, small "islands" of wildly wrong but valid elevations inside those
//! blobs, and an oblique black frame.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{save_sample, NODATA_SENTINEL};
use crate::raster::{resample, Dem, GeoFootprint, Grid, Mask, Method, Ortho, Pixel, RasterSample};
use crate::rng::{derive_seed, rng, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Ortho dimensions.
    pub width: usize,
    pub height: usize,
    /// Ortho pixels per DEM pixel along each axis.
    pub dem_downsample: usize,
    /// Per-level displacement decay in (0, 1); also scales overall relief.
    pub roughness: f64,
    /// `[min, max]` metres.
    pub elevation_range: [f64; 2],
    pub nodata_blob_count: usize,
    /// Semi-axis range of nodata ellipses, DEM pixels.
    pub blob_radius: [f64; 2],
    pub island_count: usize,
    /// Radius range of islands, DEM pixels.
    pub island_radius: [f64; 2],
    pub island_magnitude: f64,
    /// Degrees; 0 leaves the frame upright.
    pub frame_angle: f64,
    pub sun_azimuth: f64,
    pub sun_elevation: f64,
    /// Ground distance between ortho pixels, metres.
    pub pixel_spacing: f64,
    pub seed: u64,
    /// Number of samples written by [`write_corpus`].
    pub samples: usize,
    /// Side of the square lon/lat region footprints are scattered over, degrees.
    pub region_size: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 1100,
            height: 1200,
            dem_downsample: 3,
            roughness: 0.4,
            elevation_range: [-2000.0, 2000.0],
            nodata_blob_count: 3,
            blob_radius: [12.0, 30.0],
            island_count: 3,
            island_radius: [1.5, 3.0],
            island_magnitude: 1200.0,
            frame_angle: 0.0,
            sun_azimuth: 315.0,
            sun_elevation: 45.0,
            pixel_spacing: 6.0,
            seed: 42,
            samples: 4,
            region_size: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dem_downsample == 0 {
            return Err(Error::Config("dem_downsample must be >= 1".into()));
        }
        let (dw, dh) = self.dem_dims();
        if dw < 64 || dh < 64 {
            return Err(Error::Config(format!(
                "DEM would be {dw}x{dh}; need at least 64x64"
            )));
        }
        if !(self.roughness > 0.0 && self.roughness < 1.0) {
            return Err(Error::Config("roughness must lie in (0, 1)".into()));
        }
        if !(self.elevation_range[0] < self.elevation_range[1]) {
            return Err(Error::Config("elevation_range must be increasing".into()));
        }
        if !(self.blob_radius[0] > 0.0 && self.blob_radius[0] <= self.blob_radius[1])
            || !(self.island_radius[0] > 0.0 && self.island_radius[0] <= self.island_radius[1])
        {
            return Err(Error::Config(
                "radius ranges must be positive and increasing".into(),
            ));
        }
        if self.island_count > 0 && self.island_radius[1] + 2.0 >= self.blob_radius[0] {
            return Err(Error::Config(
                "islands must fit strictly inside the smallest blob".into(),
            ));
        }
        Ok(())
    }

    pub fn dem_dims(&self) -> (usize, usize) {
        (
            self.width / self.dem_downsample,
            self.height / self.dem_downsample,
        )
    }
}

/// Ground truth of injected defects, in the DEM frame of the returned sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectTruth {
    /// Extent of every nodata blob, islands included.
    pub nodata_truth: Mask,
    pub island_truth: Mask,
    /// Canvas added by the oblique frame.
    pub frame_truth: Mask,
    /// Signed offset applied to each island pixel (0 elsewhere).
    pub island_offset: Grid<f32>,
}

/// Diamond-square heightmap of size `width × height`.
pub fn diamond_square(width: usize, height: usize, roughness: f64, rng: &mut Rng) -> Vec<f64> {
    let mut n = 2usize;
    while n + 1 < width.max(height) {
        n *= 2;
    }
    let size = n + 1;
    let mut g = vec![0.0f64; size * size];
    let mut step = n;
    let mut amp = roughness;
    while step > 1 {
        let half = step / 2;
        for y in (half..size).step_by(step) {
            for x in (half..size).step_by(step) {
                let avg = (g[(y - half) * size + x - half]
                    + g[(y - half) * size + x + half]
                    + g[(y + half) * size + x - half]
                    + g[(y + half) * size + x + half])
                    / 4.0;
                g[y * size + x] = avg + rng.random_range(-1.0..1.0) * amp;
            }
        }
        for y in (0..size).step_by(half) {
            let start = if (y / half).is_multiple_of(2) {
                half
            } else {
                0
            };
            for x in (start..size).step_by(step) {
                let mut sum = 0.0;
                let mut cnt = 0.0;
                if y >= half {
                    sum += g[(y - half) * size + x];
                    cnt += 1.0;
                }
                if y + half < size {
                    sum += g[(y + half) * size + x];
                    cnt += 1.0;
                }
                if x >= half {
                    sum += g[y * size + x - half];
                    cnt += 1.0;
                }
                if x + half < size {
                    sum += g[y * size + x + half];
                    cnt += 1.0;
                }
                g[y * size + x] = sum / cnt + rng.random_range(-1.0..1.0) * amp;
            }
        }
        step = half;
        amp *= roughness;
    }
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        out.extend_from_slice(&g[y * size..y * size + width]);
    }
    out
}

/// Terrain at DEM resolution. Displacements at level `k` are drawn from
/// `±roughness^(k+1)`, so the surface flattens as roughness goes to 0; the
/// result is centred in `elevation_range` and clamped to it.
pub fn synth_terrain(cfg: &SynthConfig) -> Dem {
    let (w, h) = cfg.dem_dims();
    let mut r = rng(derive_seed(cfg.seed, "terrain", &[]));
    let raw = diamond_square(w, h, cfg.roughness, &mut r);
    let [lo, hi] = cfg.elevation_range;
    let mid = (lo + hi) / 2.0;
    let half = (hi - lo) / 2.0;
    Grid::new(
        w,
        h,
        raw.iter()
            .map(|&v| (mid + half * v).clamp(lo, hi) as f32)
            .collect(),
    )
    .expect("terrain dims")
}

/// Lambertian hillshade quantised to `[1, 255]`, so terrain never reads as
/// black framing. Azimuth is clockwise from north (image up).
pub fn synth_ortho(dem: &Dem, sun_azimuth: f64, sun_elevation: f64, pixel_spacing: f64) -> Ortho {
    let (w, h) = dem.dims();
    let (az, el) = (sun_azimuth.to_radians(), sun_elevation.to_radians());
    let light = [az.sin() * el.cos(), -az.cos() * el.cos(), el.sin()];
    Grid::from_fn(w, h, |x, y| {
        let xl = x.saturating_sub(1);
        let xr = (x + 1).min(w - 1);
        let yu = y.saturating_sub(1);
        let yd = (y + 1).min(h - 1);
        let gx = (dem.get(xr, y) as f64 - dem.get(xl, y) as f64)
            / (pixel_spacing * (xr - xl).max(1) as f64);
        let gy = (dem.get(x, yd) as f64 - dem.get(x, yu) as f64)
            / (pixel_spacing * (yd - yu).max(1) as f64);
        let norm = (gx * gx + gy * gy + 1.0).sqrt();
        let shade = ((-gx * light[0] - gy * light[1] + light[2]) / norm).max(0.0);
        1 + (254.0 * shade).round() as u8
    })
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    /// Normalised radius; < 1 inside.
    fn rho(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }
}

/// Nearest-neighbour rotation by `deg` counter-clockwise on screen about the
/// centre, expanding the canvas. Pixels outside the source get `fill`.
fn rotate_expand<T: Pixel>(g: &Grid<T>, deg: f64, fill: T) -> (Grid<T>, Mask) {
    let (w, h) = g.dims();
    let (s, c) = deg.to_radians().sin_cos();
    let (s, c) = (s.abs(), c.abs());
    let ow = (w as f64 * c + h as f64 * s).ceil() as usize;
    let oh = (w as f64 * s + h as f64 * c).ceil() as usize;
    let (sin, cos) = deg.to_radians().sin_cos();
    let mut canvas = Grid::filled(ow, oh, false);
    let mut out = Grid::filled(ow, oh, fill);
    for j in 0..oh {
        for i in 0..ow {
            let dx = i as f64 + 0.5 - ow as f64 / 2.0;
            let dy = j as f64 + 0.5 - oh as f64 / 2.0;
            let sx = dx * cos - dy * sin + w as f64 / 2.0;
            let sy = dx * sin + dy * cos + h as f64 / 2.0;
            if sx >= 0.0 && sy >= 0.0 && sx < w as f64 && sy < h as f64 {
                out.set(i, j, g.get(sx as usize, sy as usize));
            } else {
                canvas.set(i, j, true);
            }
        }
    }
    (out, canvas)
}

/// Carves sentinel blobs into the DEM, re-inserts offset islands inside
/// some of them and optionally frames the sample obliquely.
pub fn inject_defects(sample: &RasterSample, cfg: &SynthConfig) -> (RasterSample, DefectTruth) {
    let mut r = rng(derive_seed(cfg.seed, "defects", &[]));
    let mut dem = sample.dem.clone();
    let (w, h) = dem.dims();
    let mut nodata = Grid::filled(w, h, false);
    let mut islands = Grid::filled(w, h, false);
    let mut offsets = Grid::filled(w, h, 0.0f32);

    let mut blobs = Vec::new();
    for _ in 0..cfg.nodata_blob_count {
        let a = r.random_range(cfg.blob_radius[0]..=cfg.blob_radius[1]);
        let b = r.random_range(cfg.blob_radius[0]..=cfg.blob_radius[1]);
        let margin = a.max(b).min(w.min(h) as f64 / 2.0 - 1.0);
        let cx = r.random_range(margin..=w as f64 - margin);
        let cy = r.random_range(margin..=h as f64 - margin);
        let t = r.random_range(0.0..std::f64::consts::PI);
        blobs.push(Ellipse {
            cx,
            cy,
            a,
            b,
            cos: t.cos(),
            sin: t.sin(),
        });
    }
    for e in &blobs {
        for y in 0..h {
            for x in 0..w {
                if e.rho(x as f64 + 0.5, y as f64 + 0.5) < 1.0 {
                    nodata.set(x, y, true);
                }
            }
        }
    }
    let clean = dem.clone();
    for y in 0..h {
        for x in 0..w {
            if nodata.get(x, y) {
                dem.set(x, y, NODATA_SENTINEL);
            }
        }
    }
    if !blobs.is_empty() {
        for _ in 0..cfg.island_count {
            let e = &blobs[r.random_range(0..blobs.len())];
            let rad = r.random_range(cfg.island_radius[0]..=cfg.island_radius[1]);
            // Centre inside the ellipse shrunk by the island radius plus a margin.
            let shrink = (rad + 1.5) / e.a.min(e.b);
            let (u, v) = loop {
                let u: f64 = r.random_range(-1.0..1.0);
                let v: f64 = r.random_range(-1.0..1.0);
                if u * u + v * v < 1.0 {
                    break (u, v);
                }
            };
            let u = u * e.a * (1.0 - shrink).max(0.0);
            let v = v * e.b * (1.0 - shrink).max(0.0);
            let cx = e.cx + u * e.cos - v * e.sin;
            let cy = e.cy + u * e.sin + v * e.cos;
            let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
            let off = (sign * cfg.island_magnitude) as f32;
            let x0 = (cx - rad - 1.0).floor().max(0.0) as usize;
            let y0 = (cy - rad - 1.0).floor().max(0.0) as usize;
            let x1 = ((cx + rad + 1.0).ceil() as usize).min(w);
            let y1 = ((cy + rad + 1.0).ceil() as usize).min(h);
            for y in y0..y1 {
                for x in x0..x1 {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    if (px - cx).hypot(py - cy) <= rad && nodata.get(x, y) {
                        islands.set(x, y, true);
                        offsets.set(x, y, off);
                        dem.set(x, y, clean.get(x, y) + off);
                    }
                }
            }
        }
    }

    let mut ortho = sample.ortho.clone();
    let mut frame = Grid::filled(w, h, false);
    if cfg.frame_angle != 0.0 {
        let (o, _) = rotate_expand(&ortho, cfg.frame_angle, 0u8);
        let (d, canvas) = rotate_expand(&dem, cfg.frame_angle, NODATA_SENTINEL);
        nodata = rotate_expand(&nodata, cfg.frame_angle, false).0;
        islands = rotate_expand(&islands, cfg.frame_angle, false).0;
        offsets = rotate_expand(&offsets, cfg.frame_angle, 0.0).0;
        ortho = o;
        dem = d;
        frame = canvas;
    }
    let (dw, dh) = dem.dims();
    let out = RasterSample {
        id: sample.id.clone(),
        ortho,
        dem,
        nodata_mask: Grid::filled(dw, dh, false),
        outlier_mask: Grid::filled(dw, dh, false),
        left_footprint: sample.left_footprint,
        right_footprint: sample.right_footprint,
    };
    (
        out,
        DefectTruth {
            nodata_truth: nodata,
            island_truth: islands,
            frame_truth: frame,
            island_offset: offsets,
        },
    )
}

/// Random left/right footprints in the configured region; the right one is
/// a small shift of the left so unions stay compact.
fn footprints(cfg: &SynthConfig, r: &mut Rng) -> (GeoFootprint, GeoFootprint) {
    let size = cfg.region_size * 0.25;
    let lon = r.random_range(0.0..cfg.region_size);
    let lat = r.random_range(0.0..cfg.region_size);
    let left = GeoFootprint {
        lon_min: lon,
        lon_max: lon + size * 0.5,
        lat_min: lat,
        lat_max: lat + size,
    };
    let shift = r.random_range(0.0..size * 0.1);
    let right = GeoFootprint {
        lon_min: lon + shift,
        lon_max: lon + shift + size * 0.5,
        lat_min: lat,
        lat_max: lat + size,
    };
    (left, right)
}

/// Sample `index` of a corpus: clean terrain, hillshade and injected defects.
pub fn synth_sample(cfg: &SynthConfig, index: usize) -> (RasterSample, DefectTruth) {
    let sub = SynthConfig {
        seed: derive_seed(cfg.seed, "sample", &[index as u64]),
        ..cfg.clone()
    };
    let dem = synth_terrain(&sub);
    let up = resample(&dem, cfg.width, cfg.height, Method::Bilinear).expect("non-empty terrain");
    let ortho = synth_ortho(&up, cfg.sun_azimuth, cfg.sun_elevation, cfg.pixel_spacing);
    let mut r = rng(derive_seed(sub.seed, "footprint", &[]));
    let (left, right) = footprints(cfg, &mut r);
    let clean = RasterSample::new(format!("synth{:04}", index), ortho, dem, left, right);
    inject_defects(&clean, &sub)
}

/// Writes `cfg.samples` sample directories under `out`.
pub fn write_corpus(cfg: &SynthConfig, out: &Path) -> Result<Vec<String>> {
    cfg.validate()?;
    let mut ids = Vec::new();
    for i in 0..cfg.samples {
        let (s, _) = synth_sample(cfg, i);
        save_sample(out.join(&s.id), &s)?;
        ids.push(s.id);
    }
    Ok(ids)
}
