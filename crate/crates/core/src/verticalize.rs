//! Border trimming and rotation of obliquely framed samples.
//!
//! The orthoimage drives every decision; the DEM and both masks follow with
//! line indices scaled by their resolution ratio to the ortho.
//!
//! Rotation estimate: with `y_left` the first non-black row of the leftmost
//! column and `x_bottom` the first non-black column of the bottom row,
//! `theta = atan((H - y_left) / x_bottom)` and `alpha = pi/2 - theta`. The
//! edge joining those two points leans from top-left to bottom-right by
//! `alpha`, so undoing it is a clockwise turn by `alpha` in the source frame.
//! When `y_left < H/2` the layers are mirrored first and the same turn is
//! applied in the mirrored frame, which on screen is counter-clockwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Grid, Pixel, RasterSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrimConfig {
    pub tau_first: f64,
    pub tau_second: f64,
    /// Intensities at or below this value count as black.
    pub black_threshold: u8,
}

impl Default for TrimConfig {
    fn default() -> Self {
        Self {
            tau_first: 1.0,
            tau_second: 0.1,
            black_threshold: 0,
        }
    }
}

impl TrimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.tau_second && self.tau_second <= self.tau_first && self.tau_first <= 1.0) {
            return Err(Error::Config(format!(
                "trim thresholds must satisfy 0 < tau_second <= tau_first <= 1 (got {}, {})",
                self.tau_second, self.tau_first
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerticalizeResult {
    /// Rotation magnitude in radians, `pi/2 - theta`.
    pub alpha: f64,
    pub mirrored: bool,
    pub y_left: usize,
    pub x_bottom: usize,
}

impl VerticalizeResult {
    pub const IDENTITY: VerticalizeResult = VerticalizeResult {
        alpha: 0.0,
        mirrored: false,
        y_left: 0,
        x_bottom: 0,
    };
}

/// Half-open crop window in ortho pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub left: usize,
    pub top: usize,
    pub right: usize,
    pub bottom: usize,
}

impl CropRect {
    pub fn width(&self) -> usize {
        self.right - self.left
    }

    pub fn height(&self) -> usize {
        self.bottom - self.top
    }
}

/// Finds the crop that strips edge lines whose black ratio is `>= tau`.
///
/// Each step removes the single edge line with the highest black ratio
/// (ties: top, bottom, left, right), so black side columns do not drag
/// whole rows out with them.
pub fn find_trim(ortho: &Grid<u8>, tau: f64, black_threshold: u8) -> Option<CropRect> {
    let (w, h) = ortho.dims();
    if w == 0 || h == 0 {
        return None;
    }
    let black: Vec<bool> = ortho.data().iter().map(|&v| v <= black_threshold).collect();
    let mut row_count: Vec<usize> = (0..h)
        .map(|y| black[y * w..(y + 1) * w].iter().filter(|&&b| b).count())
        .collect();
    let mut col_count = vec![0usize; w];
    for y in 0..h {
        for x in 0..w {
            col_count[x] += black[y * w + x] as usize;
        }
    }
    let (mut left, mut top, mut right, mut bottom) = (0usize, 0usize, w, h);
    while left < right && top < bottom {
        let rw = (right - left) as f64;
        let rh = (bottom - top) as f64;
        let candidates = [
            row_count[top] as f64 / rw,
            row_count[bottom - 1] as f64 / rw,
            col_count[left] as f64 / rh,
            col_count[right - 1] as f64 / rh,
        ];
        let (edge, ratio) =
            candidates
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &r)| {
                    if r > best.1 {
                        (i, r)
                    } else {
                        best
                    }
                });
        if ratio < tau {
            return Some(CropRect {
                left,
                top,
                right,
                bottom,
            });
        }
        match edge {
            0 | 1 => {
                let y = if edge == 0 { top } else { bottom - 1 };
                for x in left..right {
                    col_count[x] -= black[y * w + x] as usize;
                }
                if edge == 0 {
                    top += 1;
                } else {
                    bottom -= 1;
                }
            }
            _ => {
                let x = if edge == 2 { left } else { right - 1 };
                for y in top..bottom {
                    row_count[y] -= black[y * w + x] as usize;
                }
                if edge == 2 {
                    left += 1;
                } else {
                    right -= 1;
                }
            }
        }
    }
    None
}

/// Maps an ortho-space crop onto a layer of different resolution.
fn scale_rect(rect: CropRect, ortho: (usize, usize), layer: (usize, usize)) -> CropRect {
    if ortho == layer {
        return rect;
    }
    let sx = layer.0 as f64 / ortho.0 as f64;
    let sy = layer.1 as f64 / ortho.1 as f64;
    let scale = |v: usize, s: f64, max: usize| ((v as f64 * s).round() as usize).min(max);
    let mut left = scale(rect.left, sx, layer.0);
    let mut right = scale(rect.right, sx, layer.0);
    let mut top = scale(rect.top, sy, layer.1);
    let mut bottom = scale(rect.bottom, sy, layer.1);
    if right <= left {
        if left == layer.0 {
            left -= 1;
        }
        right = left + 1;
    }
    if bottom <= top {
        if top == layer.1 {
            top -= 1;
        }
        bottom = top + 1;
    }
    CropRect {
        left,
        top,
        right,
        bottom,
    }
}

fn crop_layer<T: Pixel>(g: &Grid<T>, rect: CropRect) -> Result<Grid<T>> {
    g.crop(rect.left, rect.top, rect.width(), rect.height())
}

/// Applies an ortho-space crop to all four layers.
pub fn crop_sample(sample: &RasterSample, rect: CropRect) -> Result<RasterSample> {
    let odims = sample.ortho.dims();
    let drect = scale_rect(rect, odims, sample.dem.dims());
    Ok(RasterSample {
        id: sample.id.clone(),
        ortho: crop_layer(&sample.ortho, rect)?,
        dem: crop_layer(&sample.dem, drect)?,
        nodata_mask: crop_layer(&sample.nodata_mask, drect)?,
        outlier_mask: crop_layer(&sample.outlier_mask, drect)?,
        left_footprint: sample.left_footprint,
        right_footprint: sample.right_footprint,
    })
}

/// Removes black framing lines from all layers.
pub fn trim_black_border(
    sample: &RasterSample,
    tau: f64,
    black_threshold: u8,
) -> Result<RasterSample> {
    if sample.ortho.is_empty() {
        return Err(Error::DegenerateSample(format!(
            "{}: empty ortho",
            sample.id
        )));
    }
    let rect = find_trim(&sample.ortho, tau, black_threshold).ok_or_else(|| {
        Error::DegenerateSample(format!("{}: trimming removed the entire image", sample.id))
    })?;
    if rect
        == (CropRect {
            left: 0,
            top: 0,
            right: sample.ortho.width(),
            bottom: sample.ortho.height(),
        })
    {
        return Ok(sample.clone());
    }
    crop_sample(sample, rect)
}

/// Estimates the rotation that makes the terrain footprint axis-aligned.
pub fn estimate_rotation(ortho: &Grid<u8>, black_threshold: u8) -> Result<VerticalizeResult> {
    let (w, h) = ortho.dims();
    if w == 0 || h == 0 {
        return Err(Error::Estimation("empty image".into()));
    }
    let y_left = (0..h)
        .find(|&y| ortho.get(0, y) > black_threshold)
        .ok_or_else(|| Error::Estimation("leftmost column is entirely black".into()))?;
    let x_bottom = ortho
        .row(h - 1)
        .iter()
        .position(|&v| v > black_threshold)
        .ok_or_else(|| Error::Estimation("bottom row is entirely black".into()))?;
    if x_bottom == 0 || y_left == 0 {
        // Terrain touches a corner: treat as already vertical.
        return Ok(VerticalizeResult {
            alpha: 0.0,
            mirrored: false,
            y_left,
            x_bottom,
        });
    }
    let theta = ((h as f64 - y_left as f64) / x_bottom as f64).atan();
    Ok(VerticalizeResult {
        alpha: std::f64::consts::FRAC_PI_2 - theta,
        mirrored: 2 * y_left < h,
        y_left,
        x_bottom,
    })
}

/// Geometry of a rotation about the image centre in ortho pixel space.
#[derive(Debug, Clone, Copy)]
struct Rotation {
    cos: f64,
    sin: f64,
    src: (f64, f64),
    dst: (f64, f64),
}

impl Rotation {
    /// `angle` is clockwise on screen (rows grow downwards).
    fn new(angle: f64, width: usize, height: usize) -> Self {
        let (sin, cos) = angle.sin_cos();
        let (w, h) = (width as f64, height as f64);
        // Guard against 1e-12 overshoot turning an exact fit into an extra line.
        let ow = (w * cos.abs() + h * sin.abs() - 1e-9).ceil().max(1.0);
        let oh = (w * sin.abs() + h * cos.abs() - 1e-9).ceil().max(1.0);
        Self {
            cos,
            sin,
            src: (w, h),
            dst: (ow, oh),
        }
    }

    fn out_dims_for(&self, layer: (usize, usize)) -> (usize, usize) {
        let kx = layer.0 as f64 / self.src.0;
        let ky = layer.1 as f64 / self.src.1;
        (
            ((self.dst.0 * kx).round() as usize).max(1),
            ((self.dst.1 * ky).round() as usize).max(1),
        )
    }

    /// Resamples one layer. Output pixels whose preimage falls outside the
    /// source extent receive `fill`.
    fn apply<T: Pixel>(&self, g: &Grid<T>, bilinear: bool, fill: T) -> Grid<T> {
        let (lw, lh) = g.dims();
        let (ow, oh) = self.out_dims_for((lw, lh));
        let (sw, sh) = self.src;
        let (dw, dh) = self.dst;
        let data: Vec<T> = (0..oh)
            .into_par_iter()
            .flat_map_iter(|j| {
                let dy = (j as f64 + 0.5) * dh / oh as f64 - dh / 2.0;
                (0..ow).map(move |i| {
                    let dx = (i as f64 + 0.5) * dw / ow as f64 - dw / 2.0;
                    let x = dx * self.cos + dy * self.sin + sw / 2.0;
                    let y = -dx * self.sin + dy * self.cos + sh / 2.0;
                    if !(0.0..=sw).contains(&x) || !(0.0..=sh).contains(&y) {
                        return fill;
                    }
                    let px = x * lw as f64 / sw - 0.5;
                    let py = y * lh as f64 / sh - 0.5;
                    if bilinear {
                        T::from_f64(crate::raster::sample_bilinear_at(g, px, py))
                    } else {
                        crate::raster::sample_nearest_at(g, px, py)
                    }
                })
            })
            .collect();
        Grid::new(ow, oh, data).expect("rotation output size")
    }
}

/// Mirrors (if flagged), rotates and re-trims every layer of `sample`.
///
/// Canvas added by the rotation is filled with black in the ortho,
/// `dem_fill` in the DEM and marked in the nodata mask.
pub fn apply_verticalization(
    sample: &RasterSample,
    res: &VerticalizeResult,
    trim: &TrimConfig,
    dem_fill: f32,
) -> Result<RasterSample> {
    let mut s = if res.mirrored {
        RasterSample {
            id: sample.id.clone(),
            ortho: sample.ortho.mirror_horizontal(),
            dem: sample.dem.mirror_horizontal(),
            nodata_mask: sample.nodata_mask.mirror_horizontal(),
            outlier_mask: sample.outlier_mask.mirror_horizontal(),
            left_footprint: sample.left_footprint,
            right_footprint: sample.right_footprint,
        }
    } else {
        sample.clone()
    };
    if res.alpha != 0.0 {
        // Clockwise by alpha in the source frame; mirroring flips the sense.
        let angle = if res.mirrored { -res.alpha } else { res.alpha };
        let rot = Rotation::new(angle, s.ortho.width(), s.ortho.height());
        s = RasterSample {
            id: s.id.clone(),
            ortho: rot.apply(&s.ortho, true, 0u8),
            dem: rot.apply(&s.dem, true, dem_fill),
            nodata_mask: rot.apply(&s.nodata_mask, false, true),
            outlier_mask: rot.apply(&s.outlier_mask, false, false),
            left_footprint: s.left_footprint,
            right_footprint: s.right_footprint,
        };
    }
    trim_black_border(&s, trim.tau_second, trim.black_threshold)
}

/// First sweep, angle estimate (falling back to no rotation), rotation and
/// second sweep.
pub fn verticalize(
    sample: &RasterSample,
    trim: &TrimConfig,
    dem_fill: f32,
) -> Result<(RasterSample, VerticalizeResult)> {
    let first = trim_black_border(sample, trim.tau_first, trim.black_threshold)?;
    let res = estimate_rotation(&first.ortho, trim.black_threshold)
        .unwrap_or(VerticalizeResult::IDENTITY);
    let out = apply_verticalization(&first, &res, trim, dem_fill)?;
    Ok((out, res))
}
