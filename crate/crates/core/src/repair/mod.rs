//! Elevation repair: void filling and iterative artefact removal.

mod fill;
mod outlier;

pub use fill::{fill_missing, FillConfig};
pub use outlier::{
    detect_outliers, gaussian_weights, window_starts, GaussianKernel, OutlierConfig, OutlierPass,
    WindowStats, MIN_WINDOW_STDDEV,
};

use crate::error::Result;
use crate::raster::{Dem, Mask};

/// Runs every outlier pass, refilling the joined nodata/outlier mask after
/// each one. Returns the repaired DEM and the accumulated outlier mask,
/// which never overlaps `nodata`.
pub fn refine_elevation(
    dem: &Dem,
    nodata: &Mask,
    cfg: &OutlierConfig,
    fill: &FillConfig,
) -> Result<(Dem, Mask)> {
    let mut current = dem.clone();
    let mut outliers = Mask::filled(dem.width(), dem.height(), false);
    for pass in &cfg.passes {
        let excluded = nodata.or(&outliers);
        let flagged = detect_outliers(&current, &excluded, pass, cfg.two_sided);
        outliers.or_assign(&flagged);
        current = fill_missing(&current, &nodata.or(&outliers), fill)?;
    }
    Ok((current, outliers))
}
