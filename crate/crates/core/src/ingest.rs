//! Sample loading and sample-level selection.
//!
//! A sample directory holds `ortho.mgrd` (u8), `dem.mgrd` (f32) and
//! `meta.json`:
//!
//! ```json
//! { "id": "...", "left": {"lon_min":..,"lon_max":..,"lat_min":..,"lat_max":..}, "right": {...} }
//! ```

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{grid_read, grid_write, Dem, GeoFootprint, Mask, RasterSample};

pub const ORTHO_FILE: &str = "ortho.mgrd";
pub const DEM_FILE: &str = "dem.mgrd";
pub const META_FILE: &str = "meta.json";

/// Value marking failed stereo correlation in source DEMs.
pub const NODATA_SENTINEL: f32 = -32767.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSelectionConfig {
    /// Largest accepted ortho width/height ratio (inclusive).
    pub max_aspect_ratio: f64,
    pub nodata_sentinel: f32,
    pub max_abs_elevation: f32,
    pub min_elevation: f32,
}

impl Default for SampleSelectionConfig {
    fn default() -> Self {
        Self {
            max_aspect_ratio: 1.0,
            nodata_sentinel: NODATA_SENTINEL,
            max_abs_elevation: 10_000.0,
            min_elevation: -5_000.0,
        }
    }
}

impl SampleSelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_aspect_ratio > 0.0) {
            return Err(Error::Config("max_aspect_ratio must be > 0".into()));
        }
        if !(self.min_elevation < self.max_abs_elevation) {
            return Err(Error::Config(
                "min_elevation must be below max_abs_elevation".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub left: GeoFootprint,
    pub right: GeoFootprint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleRejection {
    Aspect,
    ElevationRange,
}

impl fmt::Display for SampleRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleRejection::Aspect => "aspect",
            SampleRejection::ElevationRange => "elevation-range",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    Accept,
    Reject(SampleRejection),
}

fn load_err(file: &str, detail: impl fmt::Display) -> Error {
    Error::Load {
        file: file.to_string(),
        detail: detail.to_string(),
    }
}

pub fn read_meta(dir: &Path) -> Result<SampleMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| load_err(META_FILE, format!("{}: {e}", path.display())))?;
    let meta: SampleMeta = serde_json::from_str(&text)
        .map_err(|e| load_err(META_FILE, format!("{}: {e}", path.display())))?;
    meta.left.validate()?;
    meta.right.validate()?;
    if meta.id.is_empty() {
        return Err(Error::Validation(format!(
            "{}: empty sample id",
            path.display()
        )));
    }
    Ok(meta)
}

/// Loads a sample directory. Masks come back empty and sized to the DEM.
pub fn load_sample(dir: impl AsRef<Path>) -> Result<RasterSample> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let ortho = grid_read::<u8>(dir.join(ORTHO_FILE)).map_err(|e| load_err(ORTHO_FILE, e))?;
    let dem = grid_read::<f32>(dir.join(DEM_FILE)).map_err(|e| load_err(DEM_FILE, e))?;
    if ortho.is_empty() {
        return Err(load_err(ORTHO_FILE, "empty grid"));
    }
    if dem.is_empty() {
        return Err(load_err(DEM_FILE, "empty grid"));
    }
    Ok(RasterSample::new(
        meta.id, ortho, dem, meta.left, meta.right,
    ))
}

/// Writes the files `load_sample` expects. Masks are not persisted.
pub fn save_sample(dir: impl AsRef<Path>, sample: &RasterSample) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    grid_write(&sample.ortho, dir.join(ORTHO_FILE))?;
    grid_write(&sample.dem, dir.join(DEM_FILE))?;
    let meta = SampleMeta {
        id: sample.id.clone(),
        left: sample.left_footprint,
        right: sample.right_footprint,
    };
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Sample-level accept/reject. The aspect threshold is inclusive: W/H equal
/// to the limit is accepted.
pub fn select_sample(sample: &RasterSample, cfg: &SampleSelectionConfig) -> Selection {
    let (w, h) = sample.ortho.dims();
    if h == 0 || w as f64 / h as f64 > cfg.max_aspect_ratio {
        return Selection::Reject(SampleRejection::Aspect);
    }
    let sentinel = cfg.nodata_sentinel.to_bits();
    let out_of_range = sample.dem.data().iter().any(|&v| {
        v.to_bits() != sentinel && !(v >= cfg.min_elevation && v <= cfg.max_abs_elevation)
    });
    if out_of_range {
        return Selection::Reject(SampleRejection::ElevationRange);
    }
    Selection::Accept
}

/// Marks pixels bitwise-equal to `sentinel`.
pub fn extract_nodata_mask(dem: &Dem, sentinel: f32) -> Mask {
    let bits = sentinel.to_bits();
    dem.map(|v| v.to_bits() == bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Grid;
    use proptest::prelude::*;

    fn fp() -> GeoFootprint {
        GeoFootprint::new(10.0, 11.0, -5.0, -4.0).unwrap()
    }

    fn sample(ow: usize, oh: usize, dem: Vec<f32>, dw: usize, dh: usize) -> RasterSample {
        RasterSample::new(
            "s",
            Grid::filled(ow, oh, 100u8),
            Grid::new(dw, dh, dem).unwrap(),
            fp(),
            fp(),
        )
    }

    #[test]
    fn aspect_rule() {
        let cfg = SampleSelectionConfig::default();
        let wide = sample(1200, 1000, vec![0.0; 4], 2, 2);
        assert_eq!(
            select_sample(&wide, &cfg),
            Selection::Reject(SampleRejection::Aspect)
        );
        let tall = sample(500, 1000, vec![0.0; 4], 2, 2);
        assert_eq!(select_sample(&tall, &cfg), Selection::Accept);
        let square = sample(100, 100, vec![0.0; 4], 2, 2);
        assert_eq!(select_sample(&square, &cfg), Selection::Accept);
    }

    #[test]
    fn elevation_range_rule() {
        let cfg = SampleSelectionConfig::default();
        let high = sample(10, 20, vec![0.0, 10001.0, 5.0, NODATA_SENTINEL], 2, 2);
        assert_eq!(
            select_sample(&high, &cfg),
            Selection::Reject(SampleRejection::ElevationRange)
        );
        let edge = sample(10, 20, vec![10000.0, -5000.0, NODATA_SENTINEL, 0.0], 2, 2);
        assert_eq!(select_sample(&edge, &cfg), Selection::Accept);
        let low = sample(10, 20, vec![-5000.5, 0.0, 0.0, 0.0], 2, 2);
        assert_eq!(
            select_sample(&low, &cfg),
            Selection::Reject(SampleRejection::ElevationRange)
        );
    }

    #[test]
    fn nodata_mask_cases() {
        let none = Grid::filled(3, 3, 1.0f32);
        assert_eq!(extract_nodata_mask(&none, NODATA_SENTINEL).count_ones(), 0);
        let all = Grid::filled(3, 3, NODATA_SENTINEL);
        assert_eq!(extract_nodata_mask(&all, NODATA_SENTINEL).count_ones(), 9);
        let mut one = Grid::filled(3, 3, 0.0f32);
        one.set(1, 1, NODATA_SENTINEL);
        let m = extract_nodata_mask(&one, NODATA_SENTINEL);
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(m.get(x, y), (x, y) == (1, 1));
            }
        }
        // Exact match only.
        let near = Grid::filled(1, 1, NODATA_SENTINEL + 0.01);
        assert_eq!(extract_nodata_mask(&near, NODATA_SENTINEL).count_ones(), 0);
    }

    #[test]
    fn load_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample(4, 6, vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        save_sample(dir.path(), &s).unwrap();
        let back = load_sample(dir.path()).unwrap();
        assert_eq!(back.id, "s");
        assert_eq!(back.nodata_mask.count_ones(), 0);
        assert_eq!(back.outlier_mask.count_ones(), 0);
        assert_eq!(back.nodata_mask.dims(), (2, 2));
        assert_eq!(back.dem, s.dem);

        fs::remove_file(dir.path().join(DEM_FILE)).unwrap();
        let err = load_sample(dir.path()).unwrap_err();
        assert!(err.to_string().contains("dem.mgrd"), "{err}");
    }

    #[test]
    fn meta_with_inverted_latitudes_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample(4, 6, vec![1.0; 4], 2, 2);
        save_sample(dir.path(), &s).unwrap();
        fs::write(
            dir.path().join(META_FILE),
            r#"{"id":"s","left":{"lon_min":0,"lon_max":1,"lat_min":3,"lat_max":2},
                "right":{"lon_min":0,"lon_max":1,"lat_min":0,"lat_max":1}}"#,
        )
        .unwrap();
        assert!(matches!(load_sample(dir.path()), Err(Error::Validation(_))));

        fs::write(dir.path().join(META_FILE), "{not json").unwrap();
        let err = load_sample(dir.path()).unwrap_err();
        assert!(err.to_string().contains("meta.json"));
    }

    proptest! {
        #[test]
        fn mask_count_matches_naive_scan(vals in proptest::collection::vec(prop_oneof![
            Just(NODATA_SENTINEL), -100.0f32..100.0
        ], 1..100)) {
            let n = vals.len();
            let g = Grid::new(n, 1, vals.clone()).unwrap();
            let naive = vals.iter().filter(|&&v| v == NODATA_SENTINEL).count();
            prop_assert_eq!(extract_nodata_mask(&g, NODATA_SENTINEL).count_ones(), naive);
        }
    }
}
