use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Dem, Mask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FillConfig {
    /// Side of the square averaging window; odd.
    pub kernel: usize,
}

impl Default for FillConfig {
    fn default() -> Self {
        Self { kernel: 31 }
    }
}

impl FillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel < 3 || self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "fill kernel must be odd and >= 3, got {}",
                self.kernel
            )));
        }
        Ok(())
    }
}

/// Summed-area table of valid-pixel counts, (w+1)×(h+1).
fn count_table(valid: &[bool], w: usize, h: usize) -> Vec<u32> {
    let stride = w + 1;
    let mut t = vec![0u32; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += valid[y * w + x] as u32;
            t[(y + 1) * stride + x + 1] = t[y * stride + x + 1] + row;
        }
    }
    t
}

/// Replaces every `missing` pixel by the mean of valid pixels in the
/// centred `kernel × kernel` window (clipped at the edges).
///
/// Pixels with no valid neighbour are left for later passes, which treat
/// values filled in earlier passes as valid. Valid pixels are never touched.
pub fn fill_missing(dem: &Dem, missing: &Mask, cfg: &FillConfig) -> Result<Dem> {
    if !dem.same_dims(missing) {
        return Err(Error::InvalidArgument(
            "fill mask does not match DEM".into(),
        ));
    }
    let (w, h) = dem.dims();
    let mut pending: Vec<usize> = missing
        .data()
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    if pending.is_empty() {
        return Ok(dem.clone());
    }
    if pending.len() == dem.len() {
        return Err(Error::Unrecoverable(
            "no valid elevation to fill from".into(),
        ));
    }
    let r = cfg.kernel / 2;
    let mut out = dem.clone();
    let mut valid: Vec<bool> = missing.data().iter().map(|&m| !m).collect();
    let stride = w + 1;
    while !pending.is_empty() {
        let table = count_table(&valid, w, h);
        let values = out.data();
        let filled: Vec<Option<f32>> = pending
            .par_iter()
            .map(|&i| {
                let (x, y) = (i % w, i / w);
                let x0 = x.saturating_sub(r);
                let x1 = (x + r + 1).min(w);
                let y0 = y.saturating_sub(r);
                let y1 = (y + r + 1).min(h);
                let n = table[y1 * stride + x1] + table[y0 * stride + x0]
                    - table[y0 * stride + x1]
                    - table[y1 * stride + x0];
                if n == 0 {
                    return None;
                }
                let mut sum = 0.0f64;
                for yy in y0..y1 {
                    let row = yy * w;
                    for xx in x0..x1 {
                        if valid[row + xx] {
                            sum += values[row + xx] as f64;
                        }
                    }
                }
                Some((sum / n as f64) as f32)
            })
            .collect();
        let before = pending.len();
        let mut still = Vec::new();
        let data = out.data_mut();
        for (&i, v) in pending.iter().zip(&filled) {
            match v {
                Some(v) => data[i] = *v,
                None => still.push(i),
            }
        }
        for (&i, v) in pending.iter().zip(&filled) {
            if v.is_some() {
                valid[i] = true;
            }
        }
        if still.len() == before {
            return Err(Error::Unrecoverable("fill made no progress".into()));
        }
        pending = still;
    }
    Ok(out)
}
