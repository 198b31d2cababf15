//! Evaluation of elevation predictions against ground truth.
//!
//! Arithmetic runs in `f64` on flattened pixel arrays; ground truth arrives
//! as `f32` grids.

use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Dem, Mask};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Standardization {
    pub mu: f64,
    pub sigma: f64,
}

fn included(n: usize, exclude: Option<&[bool]>) -> impl Iterator<Item = usize> + '_ {
    (0..n).filter(move |&i| exclude.is_none_or(|e| !e[i]))
}

/// Population mean and standard deviation over non-excluded values.
pub fn standardization_of(values: &[f64], exclude: Option<&[bool]>) -> Result<Standardization> {
    let idx: Vec<usize> = included(values.len(), exclude).collect();
    if idx.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 evaluated pixels, got {}",
            idx.len()
        )));
    }
    let n = idx.len() as f64;
    let mu = idx.iter().map(|&i| values[i]).sum::<f64>() / n;
    let var = idx.iter().map(|&i| (values[i] - mu).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if !(sigma > 0.0) {
        return Err(Error::DegenerateInput("zero standard deviation".into()));
    }
    Ok(Standardization { mu, sigma })
}

pub fn dem_values(dem: &Dem) -> Vec<f64> {
    dem.data().iter().map(|&v| v as f64).collect()
}

/// `(h - mu) / sigma` for every pixel, with `mu`, `sigma` taken over the
/// non-excluded ones.
pub fn standardize(grid: &Dem, exclude: Option<&Mask>) -> Result<(Vec<f64>, Standardization)> {
    if let Some(m) = exclude {
        if !m.same_dims(grid) {
            return Err(Error::InvalidArgument(
                "exclusion mask does not match grid".into(),
            ));
        }
    }
    let values = dem_values(grid);
    let s = standardization_of(&values, exclude.map(|m| m.data()))?;
    Ok((values.iter().map(|v| (v - s.mu) / s.sigma).collect(), s))
}

/// `sigma * h_r + mu`.
pub fn rescale_to_metric(h_r: &[f64], gt: &Standardization) -> Vec<f64> {
    h_r.iter().map(|v| gt.sigma * v + gt.mu).collect()
}

/// How prediction files are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredSpace {
    /// Already metres.
    #[default]
    Metric,
    /// Standardised elevation; rescaled with the ground truth's statistics.
    Relative,
    /// Arbitrary affine scale; standardised on its own statistics first.
    Raw,
}

impl FromStr for PredSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metric" => Ok(PredSpace::Metric),
            "relative" => Ok(PredSpace::Relative),
            "raw" => Ok(PredSpace::Raw),
            other => Err(Error::Config(format!("unknown prediction space {other:?}"))),
        }
    }
}

/// Ground truth, metric-space prediction and optional exclusion mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub gt: Vec<f64>,
    pub pred: Vec<f64>,
    pub exclude: Option<Vec<bool>>,
}

impl EvalPair {
    /// Brings `pred` into metric space according to `space`.
    pub fn new(gt: &Dem, pred: &Dem, exclude: Option<&Mask>, space: PredSpace) -> Result<Self> {
        if !gt.same_dims(pred) || exclude.is_some_and(|m| !m.same_dims(gt)) {
            return Err(Error::InvalidArgument(format!(
                "prediction {:?} does not match ground truth {:?}",
                pred.dims(),
                gt.dims()
            )));
        }
        let gt_v = dem_values(gt);
        let pred_v = dem_values(pred);
        let ex = exclude.map(|m| m.data());
        let pred = match space {
            PredSpace::Metric => pred_v,
            PredSpace::Relative => rescale_to_metric(&pred_v, &standardization_of(&gt_v, ex)?),
            PredSpace::Raw => {
                let own = standardization_of(&pred_v, ex)?;
                let rel: Vec<f64> = pred_v.iter().map(|v| (v - own.mu) / own.sigma).collect();
                rescale_to_metric(&rel, &standardization_of(&gt_v, ex)?)
            }
        };
        Ok(Self {
            gt: gt_v,
            pred,
            exclude: exclude.map(|m| m.data().to_vec()),
        })
    }

    fn mask(&self) -> Option<&[bool]> {
        self.exclude.as_deref()
    }

    /// Min/max of the evaluated ground truth; errors when flat.
    pub fn gt_range(&self) -> Result<f64> {
        let (lo, hi) = included(self.gt.len(), self.mask())
            .map(|i| self.gt[i])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        if !(range > 0.0) {
            return Err(Error::DegenerateInput(
                "ground truth has zero elevation range".into(),
            ));
        }
        Ok(range)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricRecord {
    pub rmse: f64,
    pub mae: f64,
    pub rel_err: f64,
    pub rel_abs_err: f64,
    pub pixels: usize,
}

/// Running sums from which a [`MetricRecord`] is formed.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricSums {
    pub n: usize,
    pub sq: f64,
    pub abs: f64,
    pub rel: f64,
    pub rel_abs: f64,
}

impl MetricSums {
    pub fn merge(&mut self, o: &MetricSums) {
        self.n += o.n;
        self.sq += o.sq;
        self.abs += o.abs;
        self.rel += o.rel;
        self.rel_abs += o.rel_abs;
    }

    pub fn record(&self) -> MetricRecord {
        let n = self.n.max(1) as f64;
        MetricRecord {
            rmse: (self.sq / n).sqrt(),
            mae: self.abs / n,
            rel_err: self.rel / n,
            rel_abs_err: self.rel_abs / n,
            pixels: self.n,
        }
    }
}

pub fn metric_sums(pair: &EvalPair) -> Result<MetricSums> {
    let range = pair.gt_range()?;
    let mut s = MetricSums::default();
    for i in included(pair.gt.len(), pair.mask()) {
        let d = pair.gt[i] - pair.pred[i];
        s.n += 1;
        s.sq += d * d;
        s.abs += d.abs();
        s.rel += d / range;
        s.rel_abs += d.abs() / range;
    }
    Ok(s)
}

/// RMSE, MAE and the range-relative signed and absolute errors.
pub fn metrics(pair: &EvalPair) -> Result<MetricRecord> {
    Ok(metric_sums(pair)?.record())
}

/// Mean of per-patch records.
pub fn average_records(records: &[MetricRecord]) -> MetricRecord {
    let n = records.len().max(1) as f64;
    MetricRecord {
        rmse: records.iter().map(|r| r.rmse).sum::<f64>() / n,
        mae: records.iter().map(|r| r.mae).sum::<f64>() / n,
        rel_err: records.iter().map(|r| r.rel_err).sum::<f64>() / n,
        rel_abs_err: records.iter().map(|r| r.rel_abs_err).sum::<f64>() / n,
        pixels: records.iter().map(|r| r.pixels).sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub samples_per_patch: usize,
    /// Number of uniform bins over `bin_range` of standardised ground truth.
    pub bins: usize,
    pub bin_range: [f64; 2],
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            samples_per_patch: 100,
            bins: 13,
            bin_range: [-3.0, 3.0],
        }
    }
}

impl ExportConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || !(self.bin_range[0] < self.bin_range[1]) {
            return Err(Error::Config(
                "export bins must be >= 1 over an increasing range".into(),
            ));
        }
        Ok(())
    }

    /// Bin of a standardised elevation; values outside the range land in
    /// the edge bins.
    pub fn bin_of(&self, z: f64) -> usize {
        let [lo, hi] = self.bin_range;
        let t = ((z - lo) / (hi - lo) * self.bins as f64).floor();
        t.clamp(0.0, (self.bins - 1) as f64) as usize
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let [lo, hi] = self.bin_range;
        let step = (hi - lo) / self.bins as f64;
        (lo + step * i as f64, lo + step * (i + 1) as f64)
    }
}

/// One sampled pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorSample {
    pub gt_standardized: f64,
    pub rel_err: f64,
    pub rel_abs_err: f64,
}

/// Draws pixels without replacement from the evaluated set, with a
/// generator keyed by `key` so draws do not depend on processing order.
pub fn sample_errors(
    key: &str,
    pair: &EvalPair,
    cfg: &ExportConfig,
    seed: u64,
) -> Result<Vec<ErrorSample>> {
    let range = pair.gt_range()?;
    let gt_stats = standardization_of(&pair.gt, pair.mask())?;
    let idx: Vec<usize> = included(pair.gt.len(), pair.mask()).collect();
    let mut rng = rng_for(seed, key, &[]);
    let picks = index::sample(&mut rng, idx.len(), cfg.samples_per_patch.min(idx.len()));
    Ok(picks
        .iter()
        .map(|k| {
            let i = idx[k];
            let d = pair.gt[i] - pair.pred[i];
            ErrorSample {
                gt_standardized: (pair.gt[i] - gt_stats.mu) / gt_stats.sigma,
                rel_err: d / range,
                rel_abs_err: d.abs() / range,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfRow {
    pub rel_abs_err: f64,
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinRow {
    pub bin: usize,
    pub bin_left: f64,
    pub bin_right: f64,
    pub gt_standardized: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorExports {
    /// Empirical CDF of absolute relative error, one row per distinct value.
    pub cdf: Vec<CdfRow>,
    /// Signed relative error per sample, tagged with its elevation bin.
    pub bins: Vec<BinRow>,
}

/// Builds both export tables from samples gathered in a canonical order.
pub fn build_exports(samples: &[ErrorSample], cfg: &ExportConfig) -> ErrorExports {
    let mut abs: Vec<f64> = samples.iter().map(|s| s.rel_abs_err).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len() as f64;
    let mut cdf: Vec<CdfRow> = Vec::new();
    for (i, &v) in abs.iter().enumerate() {
        let c = (i + 1) as f64 / n;
        match cdf.last_mut() {
            Some(last) if last.rel_abs_err == v => last.cumulative = c,
            _ => cdf.push(CdfRow {
                rel_abs_err: v,
                cumulative: c,
            }),
        }
    }
    let bins = samples
        .iter()
        .map(|s| {
            let b = cfg.bin_of(s.gt_standardized);
            let (bin_left, bin_right) = cfg.bin_edges(b);
            BinRow {
                bin: b,
                bin_left,
                bin_right,
                gt_standardized: s.gt_standardized,
                rel_err: s.rel_err,
            }
        })
        .collect();
    ErrorExports { cdf, bins }
}

/// Samples every `(key, pair)` and builds the export tables.
pub fn error_exports<'a>(
    pairs: impl IntoIterator<Item = (&'a str, &'a EvalPair)>,
    cfg: &ExportConfig,
    seed: u64,
) -> Result<ErrorExports> {
    let mut all = Vec::new();
    for (key, pair) in pairs {
        all.extend(sample_errors(key, pair, cfg, seed)?);
    }
    Ok(build_exports(&all, cfg))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Grid;
    use proptest::prelude::*;

    fn pair(gt: Vec<f64>, pred: Vec<f64>) -> EvalPair {
        EvalPair {
            gt,
            pred,
            exclude: None,
        }
    }

    #[test]
    fn two_point_standardization() {
        let g = Grid::new(2, 1, vec![0.0f32, 10.0]).unwrap();
        let (z, s) = standardize(&g, None).unwrap();
        assert_eq!((s.mu, s.sigma), (5.0, 5.0));
        assert_eq!(z, vec![-1.0, 1.0]);
        assert_eq!(rescale_to_metric(&[-1.0, 1.0], &s), vec![0.0, 10.0]);
        assert_eq!(rescale_to_metric(&[0.0, 0.0], &s), vec![5.0, 5.0]);
    }

    #[test]
    fn constant_grid_is_degenerate() {
        let g = Grid::filled(4, 4, 3.0f32);
        assert!(matches!(
            standardize(&g, None),
            Err(Error::DegenerateInput(_))
        ));
        let p = pair(vec![1.0; 4], vec![0.0; 4]);
        assert!(matches!(metrics(&p), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn excluded_pixels_use_included_statistics() {
        let g = Grid::new(3, 1, vec![0.0f32, 10.0, 1000.0]).unwrap();
        let m = Grid::new(3, 1, vec![false, false, true]).unwrap();
        let (z, s) = standardize(&g, Some(&m)).unwrap();
        assert_eq!((s.mu, s.sigma), (5.0, 5.0));
        assert_eq!(z[2], 199.0);
    }

    #[test]
    fn constant_offset_closed_form() {
        let gt: Vec<f64> = (0..=100).map(|v| v as f64).collect();
        let pred: Vec<f64> = gt.iter().map(|v| v + 10.0).collect();
        let m = metrics(&pair(gt.clone(), pred)).unwrap();
        assert!((m.rel_err + 0.1).abs() < 1e-9);
        assert!((m.rel_abs_err - 0.1).abs() < 1e-9);
        assert!((m.mae - 10.0).abs() < 1e-9);
        assert!((m.rmse - 10.0).abs() < 1e-9);
        let zero = metrics(&pair(gt.clone(), gt)).unwrap();
        assert_eq!(
            (zero.rmse, zero.mae, zero.rel_err, zero.rel_abs_err),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn pred_spaces() {
        let gt = Grid::from_fn(8, 8, |x, y| (x * 10 + y) as f32);
        let (z, _) = standardize(&gt, None).unwrap();
        let rel = Grid::new(8, 8, z.iter().map(|&v| v as f32).collect()).unwrap();
        let p = EvalPair::new(&gt, &rel, None, PredSpace::Relative).unwrap();
        assert!(metrics(&p).unwrap().mae < 1e-4);
        let raw = gt.map(|v| 3.0 * v - 7.0);
        let p = EvalPair::new(&gt, &raw, None, PredSpace::Raw).unwrap();
        assert!(metrics(&p).unwrap().mae < 1e-4);
        assert_eq!("raw".parse::<PredSpace>().unwrap(), PredSpace::Raw);
        assert!("x".parse::<PredSpace>().is_err());
    }

    #[test]
    fn exports_for_perfect_and_offset_predictions() {
        let gt: Vec<f64> = (0..400).map(|v| (v % 101) as f64).collect();
        let cfg = ExportConfig::default();
        let perfect = pair(gt.clone(), gt.clone());
        let e = error_exports([("a", &perfect)], &cfg, 7).unwrap();
        assert_eq!(
            e.cdf,
            vec![CdfRow {
                rel_abs_err: 0.0,
                cumulative: 1.0
            }]
        );
        assert_eq!(e.bins.len(), 100);

        let off = pair(gt.clone(), gt.iter().map(|v| v + 10.0).collect());
        let e = error_exports([("a", &off)], &cfg, 7).unwrap();
        assert_eq!(e.cdf.len(), 1);
        assert!((e.cdf[0].rel_abs_err - 0.1).abs() < 1e-12);
        assert_eq!(e.cdf[0].cumulative, 1.0);
        assert_eq!(e, error_exports([("a", &off)], &cfg, 7).unwrap());
    }

    #[test]
    fn bin_clamping() {
        let cfg = ExportConfig::default();
        assert_eq!(cfg.bin_of(-10.0), 0);
        assert_eq!(cfg.bin_of(10.0), 12);
        assert_eq!(cfg.bin_of(0.0), 6);
        assert_eq!(cfg.bin_of(3.0), 12);
    }

    /// Direct double loop with its own range computation.
    fn naive(gt: &Grid<f32>, pred: &Grid<f32>) -> [f64; 4] {
        let (w, h) = gt.dims();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for y in 0..h {
            for x in 0..w {
                lo = lo.min(gt.get(x, y) as f64);
                hi = hi.max(gt.get(x, y) as f64);
            }
        }
        let (mut sq, mut ab, mut re, mut ra) = (0.0, 0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let d = gt.get(x, y) as f64 - pred.get(x, y) as f64;
                sq += d * d;
                ab += d.abs();
                re += d / (hi - lo);
                ra += d.abs() / (hi - lo);
            }
        }
        let n = (w * h) as f64;
        [(sq / n).sqrt(), ab / n, re / n, ra / n]
    }

    proptest! {
        #[test]
        fn matches_naive_and_orders(
            w in 2usize..32,
            h in 1usize..32,
            seed in any::<u64>(),
        ) {
            use rand::Rng as _;
            let mut r = crate::rng::rng(seed);
            let gt = Grid::from_fn(w, h, |_, _| r.random_range(-500.0f32..500.0));
            let pred = Grid::from_fn(w, h, |_, _| r.random_range(-500.0f32..500.0));
            let p = EvalPair::new(&gt, &pred, None, PredSpace::Metric).unwrap();
            let m = metrics(&p).unwrap();
            let o = naive(&gt, &pred);
            for (a, b) in [m.rmse, m.mae, m.rel_err, m.rel_abs_err].iter().zip(o) {
                prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12));
            }
            prop_assert!(m.rmse >= m.mae);
            prop_assert!(m.rel_abs_err >= m.rel_err.abs());
        }

        #[test]
        fn round_trip(vals in proptest::collection::vec(-3000.0f32..3000.0, 2..200)) {
            let n = vals.len();
            let g = Grid::new(n, 1, vals).unwrap();
            if let Ok((z, s)) = standardize(&g, None) {
                if s.sigma >= 1e-3 {
                    let back = rescale_to_metric(&z, &s);
                    for (a, b) in back.iter().zip(g.data()) {
                        prop_assert!((a - *b as f64).abs() <= 1e-5);
                    }
                }
            }
        }
    }
}
