//! Dataset statistics: per-patch summaries and sampled elevation histograms.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patching::{mean_std, Patch};
use crate::raster::{Dem, GeoFootprint};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub pixels_per_patch: usize,
    pub histogram_bins: usize,
    /// Range of the metric elevation histogram, metres.
    pub elevation_clip: [f64; 2],
    /// Range of the standardised elevation histogram.
    pub standardized_clip: [f64; 2],
    /// Ground distance between DEM pixels, metres.
    pub pixel_spacing: f64,
    pub rng_seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            pixels_per_patch: 10_000,
            histogram_bins: 256,
            elevation_clip: [-5000.0, 5000.0],
            standardized_clip: [-5.0, 5.0],
            pixel_spacing: 6.0,
            rng_seed: 0,
        }
    }
}

impl StatsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.histogram_bins < 2 {
            return Err(Error::Config("histogram_bins must be >= 2".into()));
        }
        if self.pixels_per_patch == 0 || self.pixels_per_patch > 518 * 518 {
            return Err(Error::Config(format!(
                "pixels_per_patch must lie in [1, {}]",
                518 * 518
            )));
        }
        for (name, [lo, hi]) in [
            ("elevation_clip", self.elevation_clip),
            ("standardized_clip", self.standardized_clip),
        ] {
            if !(lo < hi) {
                return Err(Error::Config(format!("{name} must be increasing")));
            }
        }
        if !(self.pixel_spacing > 0.0) {
            return Err(Error::Config("pixel_spacing must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PatchStats {
    pub mean: f64,
    pub stddev: f64,
    pub masked_fraction: f64,
    /// Degrees.
    pub mean_slope: f64,
    pub lat: f64,
    pub lon: f64,
}

/// Where a patch sits inside its processed sample, for locating it on the map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchPlacement {
    pub footprint: GeoFootprint,
    pub sample_width: usize,
    pub sample_height: usize,
}

impl PatchPlacement {
    /// Patch centre interpolated linearly across the footprint, north up.
    pub fn centroid(&self, patch: &Patch) -> (f64, f64) {
        let size_x = patch.ortho.width() as f64;
        let size_y = patch.ortho.height() as f64;
        let fx = (patch.col0 as f64 + size_x / 2.0) / self.sample_width.max(1) as f64;
        let fy = (patch.row0 as f64 + size_y / 2.0) / self.sample_height.max(1) as f64;
        let f = &self.footprint;
        let lon = f.lon_min + fx * (f.lon_max - f.lon_min);
        let lat = f.lat_max - fy * (f.lat_max - f.lat_min);
        (lat, lon)
    }
}

/// Mean over interior pixels of the central-difference slope angle, degrees.
pub fn mean_slope(dem: &Dem, pixel_spacing: f64) -> f64 {
    let (w, h) = dem.dims();
    if w < 3 || h < 3 {
        return 0.0;
    }
    let d = 2.0 * pixel_spacing;
    let mut sum = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (dem.get(x + 1, y) as f64 - dem.get(x - 1, y) as f64) / d;
            let gy = (dem.get(x, y + 1) as f64 - dem.get(x, y - 1) as f64) / d;
            sum += gx.hypot(gy).atan();
        }
    }
    (sum / ((w - 2) * (h - 2)) as f64).to_degrees()
}

pub fn patch_stats(
    patch: &Patch,
    cfg: &StatsConfig,
    placement: Option<&PatchPlacement>,
) -> PatchStats {
    let (mean, stddev) = mean_std(patch.dem.data().iter().map(|&v| v as f64));
    let masked = patch
        .invalid_mask
        .data()
        .iter()
        .zip(patch.outlier_mask.data())
        .filter(|(&a, &b)| a || b)
        .count();
    let (lat, lon) = placement
        .map(|p| p.centroid(patch))
        .unwrap_or((f64::NAN, f64::NAN));
    PatchStats {
        mean,
        stddev,
        masked_fraction: masked as f64 / patch.invalid_mask.len().max(1) as f64,
        mean_slope: mean_slope(&patch.dem, cfg.pixel_spacing),
        lat,
        lon,
    }
}

/// Fixed-range histogram with explicit out-of-range tallies. The last bin is
/// closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self {
            lo,
            hi,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        }
    }

    pub fn add(&mut self, v: f64) {
        if v < self.lo {
            self.underflow += 1;
        } else if v > self.hi || v.is_nan() {
            self.overflow += 1;
        } else {
            let n = self.counts.len();
            let i = ((v - self.lo) / (self.hi - self.lo) * n as f64) as usize;
            self.counts[i.min(n - 1)] += 1;
        }
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.underflow += other.underflow;
        self.overflow += other.overflow;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let step = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + step * i as f64, self.lo + step * (i + 1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitHistograms {
    pub metric: Histogram,
    pub standardized: Histogram,
    pub patches: usize,
    /// Patches with zero elevation spread, absent from the standardised table.
    pub skipped_flat: usize,
}

impl SplitHistograms {
    fn new(cfg: &StatsConfig) -> Self {
        let [ml, mh] = cfg.elevation_clip;
        let [sl, sh] = cfg.standardized_clip;
        Self {
            metric: Histogram::new(ml, mh, cfg.histogram_bins),
            standardized: Histogram::new(sl, sh, cfg.histogram_bins),
            patches: 0,
            skipped_flat: 0,
        }
    }

    fn merge(&mut self, other: &SplitHistograms) {
        self.metric.merge(&other.metric);
        self.standardized.merge(&other.standardized);
        self.patches += other.patches;
        self.skipped_flat += other.skipped_flat;
    }
}

/// Histograms of one patch. Pixel positions are drawn without replacement
/// from a generator keyed by the patch identity, so the result does not
/// depend on processing order.
pub fn patch_histograms(patch: &Patch, cfg: &StatsConfig) -> SplitHistograms {
    let mut out = SplitHistograms::new(cfg);
    let data = patch.dem.data();
    let n = data.len();
    out.patches = 1;
    if n == 0 {
        return out;
    }
    let mut rng = rng_for(
        cfg.rng_seed,
        &patch.sample_id,
        &[patch.row0 as u64, patch.col0 as u64],
    );
    let picks = index::sample(&mut rng, n, cfg.pixels_per_patch.min(n));
    let (mu, sigma) = mean_std(data.iter().map(|&v| v as f64));
    let flat = !(sigma > 0.0);
    if flat {
        out.skipped_flat = 1;
    }
    for i in picks.iter() {
        let v = data[i] as f64;
        out.metric.add(v);
        if !flat {
            out.standardized.add((v - mu) / sigma);
        }
    }
    out
}

/// Accumulates histograms per split label.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct HistogramSet {
    pub splits: BTreeMap<String, SplitHistograms>,
}

impl HistogramSet {
    pub fn add(&mut self, split: &str, part: &SplitHistograms) {
        match self.splits.get_mut(split) {
            Some(h) => h.merge(part),
            None => {
                self.splits.insert(split.to_string(), part.clone());
            }
        }
    }

    pub fn merge(&mut self, other: &HistogramSet) {
        for (k, v) in &other.splits {
            self.add(k, v);
        }
    }
}

/// Histograms for a stream of `(split, patch)` pairs.
pub fn elevation_histograms<'a>(
    patches: impl IntoIterator<Item = (&'a str, &'a Patch)>,
    cfg: &StatsConfig,
) -> HistogramSet {
    let mut set = HistogramSet::default();
    for (split, patch) in patches {
        set.add(split, &patch_histograms(patch, cfg));
    }
    set
}

#[derive(Serialize)]
struct HistRow<'a> {
    bin_left: f64,
    bin_right: f64,
    count: u64,
    split: &'a str,
}

/// Writes `bin_left,bin_right,count,split` rows; `metric` selects which table.
pub fn write_histogram_csv(path: &Path, set: &HistogramSet, metric: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for (split, h) in &set.splits {
        let hist = if metric { &h.metric } else { &h.standardized };
        for (i, &count) in hist.counts.iter().enumerate() {
            let (bin_left, bin_right) = hist.bin_edges(i);
            w.serialize(HistRow {
                bin_left,
                bin_right,
                count,
                split,
            })
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Grid;

    fn patch_with(dem: Dem) -> Patch {
        let (w, h) = dem.dims();
        Patch {
            sample_id: "p".into(),
            row0: 0,
            col0: 0,
            ortho: Grid::filled(w, h, 9),
            dem,
            invalid_mask: Grid::filled(w, h, false),
            outlier_mask: Grid::filled(w, h, false),
        }
    }

    #[test]
    fn flat_patch() {
        let s = patch_stats(
            &patch_with(Grid::filled(40, 40, 12.0)),
            &StatsConfig::default(),
            None,
        );
        assert_eq!(s.stddev, 0.0);
        assert_eq!(s.mean_slope, 0.0);
        assert_eq!(s.mean, 12.0);
    }

    #[test]
    fn inclined_plane_slope() {
        let spacing = 6.0;
        let t = 30f64.to_radians().tan();
        let dem = Grid::from_fn(64, 64, |x, _| (x as f64 * t * spacing) as f32);
        let s = mean_slope(&dem, spacing);
        assert!((s - 30.0).abs() < 0.1, "{s}");
        let shifted = dem.map(|v| v + 1000.0);
        assert!((mean_slope(&shifted, spacing) - s).abs() < 0.01);
    }

    #[test]
    fn all_masked_fraction() {
        let mut p = patch_with(Grid::filled(10, 10, 0.0));
        p.invalid_mask = Grid::filled(10, 10, true);
        assert_eq!(
            patch_stats(&p, &StatsConfig::default(), None).masked_fraction,
            1.0
        );
    }

    #[test]
    fn centroid_of_top_left_patch() {
        let p = patch_with(Grid::filled(50, 50, 0.0));
        let place = PatchPlacement {
            footprint: GeoFootprint::new(10.0, 20.0, 0.0, 10.0).unwrap(),
            sample_width: 100,
            sample_height: 100,
        };
        let (lat, lon) = place.centroid(&p);
        assert_eq!((lat, lon), (7.5, 12.5));
    }

    #[test]
    fn constant_patch_is_skipped_for_standardized() {
        let cfg = StatsConfig::default();
        let h = patch_histograms(&patch_with(Grid::filled(200, 200, 5.0)), &cfg);
        assert_eq!(h.skipped_flat, 1);
        assert_eq!(h.standardized.total(), 0);
        assert_eq!(h.metric.total(), 10_000);
    }

    #[test]
    fn sampling_fraction_on_full_patch() {
        let cfg = StatsConfig::default();
        let frac = cfg.pixels_per_patch as f64 / (518.0 * 518.0);
        assert!((frac - 0.037).abs() < 0.001);
    }

    #[test]
    fn mass_is_preserved_and_order_irrelevant() {
        let cfg = StatsConfig::default();
        let a = patch_with(Grid::from_fn(200, 200, |x, y| {
            (x as f32 - 100.0) * 80.0 + y as f32
        }));
        let mut b = a.clone();
        b.row0 = 518;
        let ab = elevation_histograms([("train", &a), ("train", &b)], &cfg);
        let ba = elevation_histograms([("train", &b), ("train", &a)], &cfg);
        assert_eq!(ab, ba);
        let t = &ab.splits["train"];
        assert_eq!(t.metric.total(), 20_000);
        assert_eq!(t.standardized.total(), 20_000);
        assert!(t.metric.underflow + t.metric.overflow > 0);
    }

    #[test]
    fn identical_patches_have_identical_histograms() {
        let cfg = StatsConfig::default();
        let a = patch_with(Grid::from_fn(120, 120, |x, y| (x * y) as f32));
        assert_eq!(
            patch_histograms(&a, &cfg),
            patch_histograms(&a.clone(), &cfg)
        );
    }

    #[test]
    fn histogram_edges() {
        let mut h = Histogram::new(0.0, 10.0, 10);
        for v in [-1.0, 0.0, 9.99, 10.0, 10.5] {
            h.add(v);
        }
        assert_eq!(h.underflow, 1);
        assert_eq!(h.overflow, 1);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[9], 2);
        assert_eq!(h.bin_edges(3), (3.0, 4.0));
    }
}
