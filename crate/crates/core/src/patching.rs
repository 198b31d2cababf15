//! Resolution matching, tiling and patch-level rejection.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{
    grid_read, grid_write, resample, Dem, Grid, Mask, Method, Ortho, RasterSample,
};

pub const PATCH_ORTHO_FILE: &str = "ortho.mgrd";
pub const PATCH_DEM_FILE: &str = "dem.mgrd";
pub const PATCH_INVALID_FILE: &str = "mask_invalid.mgrd";
pub const PATCH_OUTLIER_FILE: &str = "mask_outlier.mgrd";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    pub patch_size: usize,
    pub max_black_fraction: f64,
    pub max_imputed_fraction: f64,
    pub min_elev_std: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_size: 518,
            max_black_fraction: 0.10,
            max_imputed_fraction: 0.15,
            min_elev_std: 10.0,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 32 {
            return Err(Error::Config(format!(
                "patch_size {} < 32",
                self.patch_size
            )));
        }
        for (name, v) in [
            ("max_black_fraction", self.max_black_fraction),
            ("max_imputed_fraction", self.max_imputed_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.min_elev_std >= 0.0) {
            return Err(Error::Config("min_elev_std must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub sample_id: String,
    /// Top-left corner in the resolution-matched ortho frame.
    pub row0: usize,
    pub col0: usize,
    pub ortho: Ortho,
    pub dem: Dem,
    pub invalid_mask: Mask,
    pub outlier_mask: Mask,
}

impl Patch {
    /// Directory name used in the dataset layout.
    pub fn dir_name(&self) -> String {
        patch_dir_name(&self.sample_id, self.row0, self.col0)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        grid_write(&self.ortho, dir.join(PATCH_ORTHO_FILE))?;
        grid_write(&self.dem, dir.join(PATCH_DEM_FILE))?;
        grid_write(&self.invalid_mask, dir.join(PATCH_INVALID_FILE))?;
        grid_write(&self.outlier_mask, dir.join(PATCH_OUTLIER_FILE))
    }

    pub fn read(dir: impl AsRef<Path>, sample_id: &str, row0: usize, col0: usize) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            sample_id: sample_id.to_string(),
            row0,
            col0,
            ortho: grid_read(dir.join(PATCH_ORTHO_FILE))?,
            dem: grid_read(dir.join(PATCH_DEM_FILE))?,
            invalid_mask: grid_read(dir.join(PATCH_INVALID_FILE))?,
            outlier_mask: grid_read(dir.join(PATCH_OUTLIER_FILE))?,
        })
    }
}

pub fn patch_dir_name(sample_id: &str, row0: usize, col0: usize) -> String {
    format!("{sample_id}_{row0}_{col0}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchRejection {
    Black,
    Imputed,
    Flat,
}

impl fmt::Display for PatchRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatchRejection::Black => "black",
            PatchRejection::Imputed => "imputed",
            PatchRejection::Flat => "flat",
        })
    }
}

/// Quantities the rejection rules look at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchMeasures {
    /// Fraction of ortho pixels that are exactly 0.
    pub black_frac: f64,
    /// Fraction of pixels in the invalid/outlier union.
    pub imputed_frac: f64,
    /// Population standard deviation of the DEM.
    pub elev_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSelection {
    pub measures: PatchMeasures,
    /// Every failed rule, in a fixed order; empty means accepted.
    pub reasons: Vec<PatchRejection>,
}

impl PatchSelection {
    pub fn accepted(&self) -> bool {
        self.reasons.is_empty()
    }
}

/// Population mean and standard deviation.
pub(crate) fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (sum, n) = values
        .clone()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

pub fn patch_measures(patch: &Patch) -> PatchMeasures {
    let n = patch.ortho.len().max(1) as f64;
    let black = patch.ortho.data().iter().filter(|&&v| v == 0).count();
    let imputed = patch
        .invalid_mask
        .data()
        .iter()
        .zip(patch.outlier_mask.data())
        .filter(|(&a, &b)| a || b)
        .count();
    let (_, elev_std) = mean_std(patch.dem.data().iter().map(|&v| v as f64));
    PatchMeasures {
        black_frac: black as f64 / n,
        imputed_frac: imputed as f64 / patch.invalid_mask.len().max(1) as f64,
        elev_std,
    }
}

/// Applies the three rejection rules: strictly more black or imputed pixels
/// than allowed, or an elevation spread strictly below the minimum.
pub fn select_patch(patch: &Patch, cfg: &PatchConfig) -> PatchSelection {
    let m = patch_measures(patch);
    let mut reasons = Vec::new();
    if m.black_frac > cfg.max_black_fraction {
        reasons.push(PatchRejection::Black);
    }
    if m.imputed_frac > cfg.max_imputed_fraction {
        reasons.push(PatchRejection::Imputed);
    }
    if m.elev_std < cfg.min_elev_std {
        reasons.push(PatchRejection::Flat);
    }
    PatchSelection {
        measures: m,
        reasons,
    }
}

/// Brings DEM and masks to the ortho's dimensions.
pub fn match_resolution(sample: &RasterSample) -> Result<RasterSample> {
    let (w, h) = sample.ortho.dims();
    Ok(RasterSample {
        id: sample.id.clone(),
        ortho: sample.ortho.clone(),
        dem: resample(&sample.dem, w, h, Method::Bilinear)?,
        nodata_mask: resample(&sample.nodata_mask, w, h, Method::Nearest)?,
        outlier_mask: resample(&sample.outlier_mask, w, h, Method::Nearest)?,
        left_footprint: sample.left_footprint,
        right_footprint: sample.right_footprint,
    })
}

fn cut<T: crate::raster::Pixel>(g: &Grid<T>, col0: usize, row0: usize, size: usize) -> Grid<T> {
    g.crop(col0, row0, size, size).expect("tile inside grid")
}

/// Non-overlapping tiles anchored at the top-left corner; partial tiles at
/// the right and bottom edges are dropped. Output is row-major by corner.
pub fn tile(sample: &RasterSample, cfg: &PatchConfig) -> Result<Vec<Patch>> {
    let dims = sample.ortho.dims();
    if sample.dem.dims() != dims
        || sample.nodata_mask.dims() != dims
        || sample.outlier_mask.dims() != dims
    {
        return Err(Error::InvalidArgument(format!(
            "{}: layers must share the ortho resolution before tiling",
            sample.id
        )));
    }
    let size = cfg.patch_size;
    let (w, h) = dims;
    let corners: Vec<(usize, usize)> = (0..h / size)
        .flat_map(|r| (0..w / size).map(move |c| (r * size, c * size)))
        .collect();
    Ok(corners
        .into_par_iter()
        .map(|(row0, col0)| Patch {
            sample_id: sample.id.clone(),
            row0,
            col0,
            ortho: cut(&sample.ortho, col0, row0, size),
            dem: cut(&sample.dem, col0, row0, size),
            invalid_mask: cut(&sample.nodata_mask, col0, row0, size),
            outlier_mask: cut(&sample.outlier_mask, col0, row0, size),
        })
        .collect())
}
