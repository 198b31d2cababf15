//! Sliding-window elevation outlier detection.
//!
//! Each window computes the median `m` and population standard deviation
//! `s` of its non-excluded pixels. A pixel's score is
//! `w(dx, dy) * (h - m) / s` with `w` an unnormalised Gaussian (peak 1 at
//! the window centre, standard deviation `spread * window` pixels). Scores
//! above the pass threshold are flagged; flags from overlapping windows are
//! OR-ed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Dem, Grid, Mask};

/// Windows flatter than this (metres) never flag anything.
pub const MIN_WINDOW_STDDEV: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierPass {
    pub threshold: f64,
    pub window: usize,
    pub overlap: usize,
    pub spread: f64,
}

impl OutlierPass {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Config(format!("outlier window {} < 2", self.window)));
        }
        if self.overlap == 0 || self.overlap >= self.window {
            return Err(Error::Config(format!(
                "outlier overlap {} must lie in (0, {})",
                self.overlap, self.window
            )));
        }
        if !(self.threshold > 0.0) || !(self.spread > 0.0) {
            return Err(Error::Config(
                "outlier threshold and spread must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn step(&self) -> usize {
        self.window - self.overlap
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutlierConfig {
    pub passes: Vec<OutlierPass>,
    /// Flag `|Z| > T` instead of `Z > T`.
    pub two_sided: bool,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        let thresholds = [1.2, 1.1, 0.9];
        let windows = [10, 45, 90];
        let overlaps = [5, 20, 30];
        let spreads = [0.2, 0.21, 0.27];
        Self {
            passes: (0..3)
                .map(|i| OutlierPass {
                    threshold: thresholds[i],
                    window: windows[i],
                    overlap: overlaps[i],
                    spread: spreads[i],
                })
                .collect(),
            two_sided: true,
        }
    }
}

impl OutlierConfig {
    pub fn validate(&self) -> Result<()> {
        self.passes.iter().try_for_each(OutlierPass::validate)
    }
}

/// Per-pixel Gaussian weights for a `width × height` window.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub width: usize,
    pub height: usize,
    pub weights: Vec<f64>,
}

impl GaussianKernel {
    /// Unnormalised weights centred at `((width-1)/2, (height-1)/2)` with
    /// standard deviation `sigma` pixels.
    pub fn new(width: usize, height: usize, sigma: f64) -> Self {
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        let denom = 2.0 * sigma * sigma;
        let mut weights = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                weights.push((-(dx * dx + dy * dy) / denom).exp());
            }
        }
        Self {
            width,
            height,
            weights,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.weights[y * self.width + x]
    }
}

/// Square kernel for a `window`-pixel window with spread `s` (fraction of the window).
pub fn gaussian_weights(window: usize, spread: f64) -> GaussianKernel {
    GaussianKernel::new(window, window, spread * window as f64)
}

/// Window start offsets along one axis. The last window sits flush with the
/// far edge; a dimension shorter than the window gets one clipped window.
pub fn window_starts(dim: usize, window: usize, step: usize) -> Vec<usize> {
    if dim <= window {
        return vec![0];
    }
    let last = dim - window;
    let mut starts: Vec<usize> = (0..last).step_by(step.max(1)).collect();
    starts.push(last);
    starts
}

/// Median of a non-empty slice; mean of the middle pair for even lengths.
/// Reorders the slice.
fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (lower, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if n % 2 == 1 {
        m
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (below + m) / 2.0
    }
}

/// Median and population standard deviation of the window's non-excluded pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    pub median: f64,
    pub stddev: f64,
    pub count: usize,
}

fn window_stats(values: &mut [f64]) -> Option<WindowStats> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let stddev = var.sqrt();
    let median = median_in_place(values);
    Some(WindowStats {
        median,
        stddev,
        count: n,
    })
}

/// Flags elevation outliers among non-excluded pixels.
pub fn detect_outliers(dem: &Dem, excluded: &Mask, pass: &OutlierPass, two_sided: bool) -> Mask {
    assert!(dem.same_dims(excluded), "exclusion mask does not match DEM");
    let (w, h) = dem.dims();
    if w == 0 || h == 0 {
        return Grid::filled(w, h, false);
    }
    let xs = window_starts(w, pass.window, pass.step());
    let ys = window_starts(h, pass.window, pass.step());
    let ww = pass.window.min(w);
    let wh = pass.window.min(h);
    let sigma = pass.spread * pass.window as f64;
    let kernel = GaussianKernel::new(ww, wh, sigma);
    let windows: Vec<(usize, usize)> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();
    let data = dem.data();
    let excl = excluded.data();

    let flagged: Vec<Vec<usize>> = windows
        .par_iter()
        .map_init(Vec::new, |buf, &(x0, y0)| {
            buf.clear();
            for y in y0..y0 + wh {
                let row = y * w;
                for x in x0..x0 + ww {
                    if !excl[row + x] {
                        buf.push(data[row + x] as f64);
                    }
                }
            }
            let Some(stats) = window_stats(buf) else {
                return Vec::new();
            };
            if stats.stddev < MIN_WINDOW_STDDEV {
                return Vec::new();
            }
            let mut hits = Vec::new();
            for y in y0..y0 + wh {
                let row = y * w;
                for x in x0..x0 + ww {
                    let i = row + x;
                    if excl[i] {
                        continue;
                    }
                    let z =
                        kernel.at(x - x0, y - y0) * (data[i] as f64 - stats.median) / stats.stddev;
                    let score = if two_sided { z.abs() } else { z };
                    if score > pass.threshold {
                        hits.push(i);
                    }
                }
            }
            hits
        })
        .collect();

    let mut mask = Grid::filled(w, h, false);
    let out = mask.data_mut();
    for i in flagged.into_iter().flatten() {
        out[i] = true;
    }
    mask
}
