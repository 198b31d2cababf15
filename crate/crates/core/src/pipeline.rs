//! Batch commands over a dataset directory.
//!
//! Output layout:
//!
//! ```text
//! <out>/.done/<sample dir>.json      completion record per processed sample
//! <out>/<split>/<id>_<row0>_<col0>/  accepted patches (split = unassigned until `split` runs)
//! <out>/dataset-manifest.csv
//! <out>/rejections.csv
//! <out>/clusters.json
//! <out>/stats/
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EvalConfig, PipelineConfig};
use crate::error::{Error, Result};
use crate::eval::{
    average_records, build_exports, metric_sums, sample_errors, write_rows, EvalPair, MetricRecord,
    MetricSums,
};
use crate::ingest::{extract_nodata_mask, load_sample, select_sample, Selection};
use crate::patching::{
    match_resolution, patch_dir_name, select_patch, tile, Patch, PatchRejection,
};
use crate::raster::{grid_read, GeoFootprint, RasterSample};
use crate::repair::{fill_missing, refine_elevation};
use crate::split::{
    assign_splits, cluster, verify_no_leakage, ClusterSet, SampleFootprint, SplitLabel,
};
use crate::stats::{
    patch_histograms, patch_stats, write_histogram_csv, HistogramSet, PatchPlacement, PatchStats,
};
use crate::verticalize::verticalize;

pub const DONE_DIR: &str = ".done";
pub const MANIFEST_FILE: &str = "dataset-manifest.csv";
pub const REJECTIONS_FILE: &str = "rejections.csv";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const STATS_DIR: &str = "stats";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CDF_FILE: &str = "cdf.csv";
pub const BINS_FILE: &str = "bins.csv";
pub const PRED_FILE: &str = "pred.mgrd";

const SPLIT_DIRS: [SplitLabel; 3] = [SplitLabel::Unassigned, SplitLabel::Train, SplitLabel::Val];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub row0: usize,
    pub col0: usize,
    pub accepted: bool,
    pub reasons: Vec<PatchRejection>,
    pub black_frac: f64,
    pub imputed_frac: f64,
    pub elev_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleStatus {
    Processed,
    Rejected,
}

/// Outcome of one sample, persisted as its completion marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub left: GeoFootprint,
    pub right: GeoFootprint,
    pub status: SampleStatus,
    /// Stage that rejected the sample; empty when processed.
    pub stage: String,
    pub reason: String,
    /// Processed ortho dimensions, 0 when rejected.
    pub width: usize,
    pub height: usize,
    pub alpha: f64,
    pub mirrored: bool,
    pub patches: Vec<PatchRecord>,
}

impl SampleRecord {
    fn rejected(sample: &RasterSample, stage: &str, reason: impl ToString) -> Self {
        Self {
            sample_id: sample.id.clone(),
            left: sample.left_footprint,
            right: sample.right_footprint,
            status: SampleStatus::Rejected,
            stage: stage.to_string(),
            reason: reason.to_string(),
            width: 0,
            height: 0,
            alpha: 0.0,
            mirrored: false,
            patches: Vec::new(),
        }
    }

    pub fn accepted_patches(&self) -> impl Iterator<Item = &PatchRecord> {
        self.patches.iter().filter(|p| p.accepted)
    }

    pub fn footprint(&self) -> SampleFootprint {
        SampleFootprint::new(
            self.sample_id.clone(),
            &self.left,
            &self.right,
            self.accepted_patches().count(),
        )
    }

    pub fn placement(&self) -> PatchPlacement {
        PatchPlacement {
            footprint: crate::split::bbox_union(&self.left, &self.right),
            sample_width: self.width,
            sample_height: self.height,
        }
    }
}

/// Runs one loaded sample through selection, repair, verticalisation and
/// tiling. Returns its record and the accepted patches. Rejections are
/// values; only unexpected failures are errors.
pub fn process_sample(
    sample: RasterSample,
    cfg: &PipelineConfig,
) -> Result<(SampleRecord, Vec<Patch>)> {
    if let Selection::Reject(r) = select_sample(&sample, &cfg.selection) {
        return Ok((SampleRecord::rejected(&sample, "select", r), Vec::new()));
    }
    let sentinel = cfg.selection.nodata_sentinel;
    let nodata = extract_nodata_mask(&sample.dem, sentinel);
    let prefilled = match fill_missing(&sample.dem, &nodata, &cfg.fill) {
        Ok(d) => d,
        Err(Error::Unrecoverable(_)) => {
            return Ok((
                SampleRecord::rejected(&sample, "repair", "unrecoverable"),
                Vec::new(),
            ))
        }
        Err(e) => return Err(e),
    };
    let staged = RasterSample {
        dem: prefilled,
        nodata_mask: nodata,
        ..sample.clone()
    };
    let (upright, rot) = match verticalize(&staged, &cfg.trim, sentinel) {
        Ok(v) => v,
        // Trimming only empties a sample whose framing lines are all black.
        Err(Error::DegenerateSample(_)) => {
            return Ok((
                SampleRecord::rejected(&sample, "verticalize", "black"),
                Vec::new(),
            ))
        }
        Err(e) => return Err(e),
    };
    let refilled = match fill_missing(&upright.dem, &upright.nodata_mask, &cfg.fill) {
        Ok(d) => d,
        Err(Error::Unrecoverable(_)) => {
            return Ok((
                SampleRecord::rejected(&sample, "repair", "unrecoverable"),
                Vec::new(),
            ))
        }
        Err(e) => return Err(e),
    };
    let (dem, outliers) =
        refine_elevation(&refilled, &upright.nodata_mask, &cfg.outlier, &cfg.fill)?;
    let repaired = RasterSample {
        dem,
        outlier_mask: outliers,
        ..upright
    };
    repaired.check_invariants()?;
    let matched = match_resolution(&repaired)?;
    let tiles = tile(&matched, &cfg.patch)?;
    let mut records = Vec::with_capacity(tiles.len());
    let mut kept = Vec::new();
    for p in tiles {
        let sel = select_patch(&p, &cfg.patch);
        records.push(PatchRecord {
            row0: p.row0,
            col0: p.col0,
            accepted: sel.accepted(),
            reasons: sel.reasons.clone(),
            black_frac: sel.measures.black_frac,
            imputed_frac: sel.measures.imputed_frac,
            elev_std: sel.measures.elev_std,
        });
        if sel.accepted() {
            kept.push(p);
        }
    }
    let (width, height) = matched.ortho.dims();
    Ok((
        SampleRecord {
            sample_id: sample.id.clone(),
            left: sample.left_footprint,
            right: sample.right_footprint,
            status: SampleStatus::Processed,
            stage: String::new(),
            reason: String::new(),
            width,
            height,
            alpha: rot.alpha,
            mirrored: rot.mirrored,
            patches: records,
        },
        kept,
    ))
}

/// Runs `f` on a dedicated pool of `threads` workers (rayon's default when `None`).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        b = b.num_threads(n);
    }
    let pool = b
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry
            .file_type()
            .map_err(|e| Error::io(entry.path(), e))?
            .is_dir()
        {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// All completion records under `out`, sorted by sample id.
pub fn read_records(out: &Path) -> Result<Vec<SampleRecord>> {
    let done = out.join(DONE_DIR);
    if !done.is_dir() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&done)
        .map_err(|e| Error::io(&done, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut records = paths
        .iter()
        .map(|p| read_json::<SampleRecord>(p))
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sample_id: String,
    pub row0: usize,
    pub col0: usize,
    pub split: SplitLabel,
    pub cluster_id: Option<usize>,
    pub black_frac: f64,
    pub imputed_frac: f64,
    pub elev_std: f64,
}

impl ManifestRow {
    pub fn dir_name(&self) -> String {
        patch_dir_name(&self.sample_id, self.row0, self.col0)
    }

    pub fn patch_dir(&self, out: &Path) -> PathBuf {
        out.join(self.split.as_str()).join(self.dir_name())
    }
}

fn manifest_rows(records: &[SampleRecord], clusters: Option<&ClusterSet>) -> Vec<ManifestRow> {
    let labels = clusters.map(|c| c.labels()).unwrap_or_default();
    let mut rows: Vec<ManifestRow> = records
        .iter()
        .flat_map(|r| {
            let (cluster_id, split) = match labels.get(r.sample_id.as_str()) {
                Some(&(id, split)) => (Some(id), split),
                None => (None, SplitLabel::Unassigned),
            };
            r.accepted_patches().map(move |p| ManifestRow {
                sample_id: r.sample_id.clone(),
                row0: p.row0,
                col0: p.col0,
                split,
                cluster_id,
                black_frac: p.black_frac,
                imputed_frac: p.imputed_frac,
                elev_std: p.elev_std,
            })
        })
        .collect();
    rows.sort_by(|a, b| (&a.sample_id, a.row0, a.col0).cmp(&(&b.sample_id, b.row0, b.col0)));
    rows
}

pub fn read_manifest(out: &Path) -> Result<Vec<ManifestRow>> {
    let path = out.join(MANIFEST_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(&path, e)))
        .collect()
}

#[derive(Debug, Serialize)]
struct RejectionRow<'a> {
    sample_id: &'a str,
    stage: &'a str,
    outcome: String,
    count: usize,
}

fn rejection_rows(records: &[SampleRecord]) -> Vec<RejectionRow<'_>> {
    let mut rows = Vec::new();
    for r in records {
        match r.status {
            SampleStatus::Rejected => rows.push(RejectionRow {
                sample_id: &r.sample_id,
                stage: &r.stage,
                outcome: r.reason.clone(),
                count: 1,
            }),
            SampleStatus::Processed => {
                let id = r.sample_id.as_str();
                rows.push(RejectionRow {
                    sample_id: id,
                    stage: "patch",
                    outcome: "total".into(),
                    count: r.patches.len(),
                });
                rows.push(RejectionRow {
                    sample_id: id,
                    stage: "patch",
                    outcome: "accepted".into(),
                    count: r.accepted_patches().count(),
                });
                for reason in [
                    PatchRejection::Black,
                    PatchRejection::Imputed,
                    PatchRejection::Flat,
                ] {
                    let n = r
                        .patches
                        .iter()
                        .filter(|p| p.reasons.contains(&reason))
                        .count();
                    if n > 0 {
                        rows.push(RejectionRow {
                            sample_id: id,
                            stage: "patch",
                            outcome: reason.to_string(),
                            count: n,
                        });
                    }
                }
            }
        }
    }
    rows
}

fn write_tables(
    out: &Path,
    records: &[SampleRecord],
    clusters: Option<&ClusterSet>,
) -> Result<Vec<ManifestRow>> {
    let rows = manifest_rows(records, clusters);
    write_rows(&out.join(MANIFEST_FILE), &rows)?;
    write_rows(&out.join(REJECTIONS_FILE), &rejection_rows(records))?;
    Ok(rows)
}

fn read_clusters(out: &Path) -> Result<Option<ClusterSet>> {
    let path = out.join(CLUSTERS_FILE);
    if path.exists() {
        Ok(Some(read_json(&path)?))
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessSummary {
    pub samples: usize,
    /// Samples whose results came from an earlier run.
    pub resumed: usize,
    pub rejected: usize,
    pub patches: usize,
    /// Sample directories that failed with an internal error.
    pub failures: Vec<(String, String)>,
}

/// Processes every sample directory under `input` into `out`. Samples with
/// a completion marker are skipped, so an interrupted run can be resumed.
pub fn cmd_process(
    input: &Path,
    out: &Path,
    cfg: &PipelineConfig,
    threads: Option<usize>,
) -> Result<ProcessSummary> {
    cfg.validate()?;
    let dirs = sorted_subdirs(input)?;
    let done = out.join(DONE_DIR);
    fs::create_dir_all(&done).map_err(|e| Error::io(&done, e))?;
    let clusters = read_clusters(out)?;
    let labels = clusters.as_ref().map(|c| c.labels()).unwrap_or_default();

    let results: Vec<(String, Result<(SampleRecord, bool)>)> = with_threads(threads, || {
        dirs.par_iter()
            .map(|dir| {
                let name = dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let marker = done.join(format!("{name}.json"));
                let run = || -> Result<(SampleRecord, bool)> {
                    if marker.exists() {
                        return Ok((read_json(&marker)?, true));
                    }
                    let sample = load_sample(dir)?;
                    let (record, patches) = process_sample(sample, cfg)?;
                    let split = labels
                        .get(record.sample_id.as_str())
                        .map(|&(_, s)| s)
                        .unwrap_or(SplitLabel::Unassigned);
                    for p in &patches {
                        p.write(out.join(split.as_str()).join(p.dir_name()))?;
                    }
                    write_json(&marker, &record)?;
                    log::info!(
                        "{}: {} of {} patches accepted",
                        record.sample_id,
                        patches.len(),
                        record.patches.len()
                    );
                    Ok((record, false))
                };
                (name, run())
            })
            .collect()
    })?;

    let mut records = Vec::new();
    let mut summary = ProcessSummary {
        samples: dirs.len(),
        resumed: 0,
        rejected: 0,
        patches: 0,
        failures: Vec::new(),
    };
    for (name, res) in results {
        match res {
            Ok((rec, resumed)) => {
                summary.resumed += resumed as usize;
                summary.rejected += (rec.status == SampleStatus::Rejected) as usize;
                summary.patches += rec.accepted_patches().count();
                records.push(rec);
            }
            Err(e) => {
                log::error!("{name}: {e}");
                summary.failures.push((name, e.to_string()));
            }
        }
    }
    // Include records from earlier runs whose input directories are gone.
    let mut all = read_records(out)?;
    all.retain(|r| !records.iter().any(|x| x.sample_id == r.sample_id));
    all.extend(records);
    all.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    write_tables(out, &all, clusters.as_ref())?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSummary {
    pub clusters: usize,
    pub train_patches: usize,
    pub val_patches: usize,
}

fn find_patch_dir(out: &Path, name: &str) -> Option<PathBuf> {
    SPLIT_DIRS
        .iter()
        .map(|s| out.join(s.as_str()).join(name))
        .find(|p| p.is_dir())
}

/// Clusters processed samples, assigns whole clusters to train/val, checks
/// for leakage and moves patch directories into their split.
pub fn cmd_split(out: &Path, train_fraction: f64, seed: u64) -> Result<SplitSummary> {
    let records = read_records(out)?;
    let footprints: Vec<SampleFootprint> = records.iter().map(|r| r.footprint()).collect();
    let clusters = assign_splits(&cluster(&footprints), train_fraction, seed)?;
    check_leakage(&clusters, &footprints)?;
    let labels = clusters.labels();
    for r in &records {
        let split = labels[r.sample_id.as_str()].1;
        for p in r.accepted_patches() {
            let name = patch_dir_name(&r.sample_id, p.row0, p.col0);
            let target = out.join(split.as_str()).join(&name);
            let current = find_patch_dir(out, &name)
                .ok_or_else(|| Error::Validation(format!("patch directory {name} is missing")))?;
            if current != target {
                let parent = target.parent().expect("split dir");
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                fs::rename(&current, &target).map_err(|e| Error::io(&current, e))?;
            }
        }
    }
    // Only succeeds once every patch has left the staging directory.
    let _ = fs::remove_dir(out.join(SplitLabel::Unassigned.as_str()));
    write_json(&out.join(CLUSTERS_FILE), &clusters)?;
    write_tables(out, &records, Some(&clusters))?;
    Ok(SplitSummary {
        clusters: clusters.clusters.len(),
        train_patches: clusters.patches_in(SplitLabel::Train),
        val_patches: clusters.patches_in(SplitLabel::Val),
    })
}

fn check_leakage(clusters: &ClusterSet, footprints: &[SampleFootprint]) -> Result<()> {
    let leaks = verify_no_leakage(clusters, footprints);
    if leaks.is_empty() {
        Ok(())
    } else {
        Err(Error::Leakage(
            leaks.iter().map(|l| l.to_string()).collect(),
        ))
    }
}

/// Re-checks an existing `clusters.json` against the sample footprints.
pub fn cmd_verify_split(out: &Path) -> Result<()> {
    let records = read_records(out)?;
    let clusters = read_clusters(out)?.ok_or_else(|| {
        Error::Validation(format!("{} not found", out.join(CLUSTERS_FILE).display()))
    })?;
    let footprints: Vec<SampleFootprint> = records.iter().map(|r| r.footprint()).collect();
    check_leakage(&clusters, &footprints)
}

#[derive(Debug, Serialize)]
struct PatchStatsRow<'a> {
    sample_id: &'a str,
    row0: usize,
    col0: usize,
    split: SplitLabel,
    cluster_id: Option<usize>,
    black_frac: f64,
    imputed_frac: f64,
    elev_std: f64,
    mean: f64,
    stddev: f64,
    masked_fraction: f64,
    mean_slope: f64,
    lat: f64,
    lon: f64,
}

#[derive(Debug, Default, Serialize)]
struct SplitSummaryJson {
    patches: usize,
    skipped_flat: usize,
    metric_underflow: u64,
    metric_overflow: u64,
    standardized_underflow: u64,
    standardized_overflow: u64,
    mean_elevation: f64,
    mean_stddev: f64,
    mean_slope: f64,
    mean_masked_fraction: f64,
}

/// Per-patch statistics and per-split histograms for every manifest row.
pub fn cmd_stats(out: &Path, cfg: &PipelineConfig, threads: Option<usize>) -> Result<()> {
    cfg.stats.validate()?;
    let rows = read_manifest(out)?;
    let records: HashMap<String, SampleRecord> = read_records(out)?
        .into_iter()
        .map(|r| (r.sample_id.clone(), r))
        .collect();
    let results: Vec<Result<(PatchStats, crate::stats::SplitHistograms)>> =
        with_threads(threads, || {
            rows.par_iter()
                .map(|row| {
                    let patch =
                        Patch::read(row.patch_dir(out), &row.sample_id, row.row0, row.col0)?;
                    let placement = records.get(&row.sample_id).map(|r| r.placement());
                    Ok((
                        patch_stats(&patch, &cfg.stats, placement.as_ref()),
                        patch_histograms(&patch, &cfg.stats),
                    ))
                })
                .collect()
        })?;
    let dir = out.join(STATS_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut hist = HistogramSet::default();
    let mut table = Vec::with_capacity(rows.len());
    let mut summary: BTreeMap<String, SplitSummaryJson> = BTreeMap::new();
    for (row, res) in rows.iter().zip(results) {
        let (s, h) = res?;
        hist.add(row.split.as_str(), &h);
        let e = summary.entry(row.split.as_str().to_string()).or_default();
        e.patches += 1;
        e.mean_elevation += s.mean;
        e.mean_stddev += s.stddev;
        e.mean_slope += s.mean_slope;
        e.mean_masked_fraction += s.masked_fraction;
        table.push(PatchStatsRow {
            sample_id: &row.sample_id,
            row0: row.row0,
            col0: row.col0,
            split: row.split,
            cluster_id: row.cluster_id,
            black_frac: row.black_frac,
            imputed_frac: row.imputed_frac,
            elev_std: row.elev_std,
            mean: s.mean,
            stddev: s.stddev,
            masked_fraction: s.masked_fraction,
            mean_slope: s.mean_slope,
            lat: s.lat,
            lon: s.lon,
        });
    }
    for (split, e) in summary.iter_mut() {
        let n = e.patches.max(1) as f64;
        e.mean_elevation /= n;
        e.mean_stddev /= n;
        e.mean_slope /= n;
        e.mean_masked_fraction /= n;
        if let Some(h) = hist.splits.get(split) {
            e.skipped_flat = h.skipped_flat;
            e.metric_underflow = h.metric.underflow;
            e.metric_overflow = h.metric.overflow;
            e.standardized_underflow = h.standardized.underflow;
            e.standardized_overflow = h.standardized.overflow;
        }
    }
    write_rows(&dir.join("patches.csv"), &table)?;
    write_histogram_csv(&dir.join("hist_metric.csv"), &hist, true)?;
    write_histogram_csv(&dir.join("hist_standardized.csv"), &hist, false)?;
    write_json(
        &dir.join("summary.json"),
        &serde_json::json!({
            "patches": rows.len(),
            "pixels_per_patch": cfg.stats.pixels_per_patch,
            "seed": cfg.stats.rng_seed,
            "splits": summary,
        }),
    )
}

#[derive(Debug, Serialize)]
struct MetricsRow {
    sample_id: String,
    row0: Option<usize>,
    col0: Option<usize>,
    split: String,
    rmse: f64,
    mae: f64,
    rel_err: f64,
    rel_abs_err: f64,
    pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub evaluated: usize,
    pub missing: usize,
    pub degenerate: usize,
    pub aggregate: MetricRecord,
}

fn find_prediction(pred_dir: &Path, row: &ManifestRow) -> Option<PathBuf> {
    let name = row.dir_name();
    [
        pred_dir
            .join(row.split.as_str())
            .join(&name)
            .join(PRED_FILE),
        pred_dir.join(&name).join(PRED_FILE),
    ]
    .into_iter()
    .find(|p| p.is_file())
}

/// Scores predictions under `pred_dir` against the dataset in `data`,
/// writing metrics, CDF and bin tables to `report`.
pub fn cmd_eval(
    pred_dir: &Path,
    data: &Path,
    report: &Path,
    cfg: &EvalConfig,
    threads: Option<usize>,
) -> Result<EvalSummary> {
    cfg.exports.validate()?;
    let rows = read_manifest(data)?;
    type Scored = Option<(MetricSums, Vec<crate::eval::ErrorSample>)>;
    let results: Vec<Result<Option<Scored>>> = with_threads(threads, || {
        rows.par_iter()
            .map(|row| -> Result<Option<Scored>> {
                let Some(pred_path) = find_prediction(pred_dir, row) else {
                    return Ok(None);
                };
                let gt = Patch::read(row.patch_dir(data), &row.sample_id, row.row0, row.col0)?;
                let pred = grid_read::<f32>(&pred_path)?;
                let exclude = cfg
                    .exclude_masked
                    .then(|| gt.invalid_mask.or(&gt.outlier_mask));
                let pair = match EvalPair::new(&gt.dem, &pred, exclude.as_ref(), cfg.pred_space) {
                    Ok(p) => p,
                    Err(Error::DegenerateInput(_)) => return Ok(Some(None)),
                    Err(e) => return Err(e),
                };
                let sums = match metric_sums(&pair) {
                    Ok(s) => s,
                    Err(Error::DegenerateInput(_)) => return Ok(Some(None)),
                    Err(e) => return Err(e),
                };
                let rec = sums.record();
                debug_assert!(
                    rec.rmse + 1e-9 >= rec.mae && rec.rel_abs_err + 1e-12 >= rec.rel_err.abs()
                );
                let samples = sample_errors(&row.dir_name(), &pair, &cfg.exports, cfg.seed)?;
                Ok(Some(Some((sums, samples))))
            })
            .collect()
    })?;
    let mut table = Vec::new();
    let mut records = Vec::new();
    let mut pooled = MetricSums::default();
    let mut samples = Vec::new();
    let (mut missing, mut degenerate) = (0, 0);
    for (row, res) in rows.iter().zip(results) {
        match res? {
            None => missing += 1,
            Some(None) => degenerate += 1,
            Some(Some((sums, s))) => {
                let rec = sums.record();
                pooled.merge(&sums);
                records.push(rec);
                samples.extend(s);
                table.push(MetricsRow {
                    sample_id: row.sample_id.clone(),
                    row0: Some(row.row0),
                    col0: Some(row.col0),
                    split: row.split.to_string(),
                    rmse: rec.rmse,
                    mae: rec.mae,
                    rel_err: rec.rel_err,
                    rel_abs_err: rec.rel_abs_err,
                    pixels: rec.pixels,
                });
            }
        }
    }
    let aggregate = if cfg.pixel_pooled {
        pooled.record()
    } else {
        average_records(&records)
    };
    table.push(MetricsRow {
        sample_id: if cfg.pixel_pooled {
            "aggregate-pooled"
        } else {
            "aggregate"
        }
        .into(),
        row0: None,
        col0: None,
        split: "all".into(),
        rmse: aggregate.rmse,
        mae: aggregate.mae,
        rel_err: aggregate.rel_err,
        rel_abs_err: aggregate.rel_abs_err,
        pixels: aggregate.pixels,
    });
    fs::create_dir_all(report).map_err(|e| Error::io(report, e))?;
    write_rows(&report.join(METRICS_FILE), &table)?;
    let exports = build_exports(&samples, &cfg.exports);
    write_rows(&report.join(CDF_FILE), &exports.cdf)?;
    write_rows(&report.join(BINS_FILE), &exports.bins)?;
    Ok(EvalSummary {
        evaluated: records.len(),
        missing,
        degenerate,
        aggregate,
    })
}

/// Writes a synthetic corpus of sample directories.
pub fn cmd_synth(out: &Path, cfg: &PipelineConfig) -> Result<Vec<String>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    crate::synth::write_corpus(&cfg.synth, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Grid;
    use crate::synth::SynthConfig;

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            synth: SynthConfig {
                width: 600,
                height: 660,
                samples: 2,
                ..SynthConfig::default()
            },
            patch: crate::patching::PatchConfig {
                patch_size: 128,
                ..Default::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn clean_sample_yields_patches_with_empty_masks() {
        let cfg = small_cfg();
        let synth = SynthConfig {
            nodata_blob_count: 0,
            island_count: 0,
            ..cfg.synth.clone()
        };
        let (s, _) = crate::synth::synth_sample(&synth, 0);
        let (rec, patches) = process_sample(s, &cfg).unwrap();
        assert_eq!(rec.status, SampleStatus::Processed);
        assert!(!patches.is_empty());
        for p in &patches {
            assert_eq!(p.invalid_mask.count_ones(), 0);
        }
    }

    #[test]
    fn black_ortho_is_rejected_as_black() {
        let cfg = small_cfg();
        let s = RasterSample::new(
            "dark",
            Grid::filled(300, 300, 0u8),
            Grid::from_fn(100, 100, |x, y| (x * y) as f32),
            GeoFootprint::new(0.0, 1.0, 0.0, 1.0).unwrap(),
            GeoFootprint::new(0.0, 1.0, 0.0, 1.0).unwrap(),
        );
        let (rec, patches) = process_sample(s, &cfg).unwrap();
        assert!(patches.is_empty());
        assert_eq!(
            (rec.stage.as_str(), rec.reason.as_str()),
            ("verticalize", "black")
        );
    }

    #[test]
    fn process_split_stats_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let (input, out) = (tmp.path().join("in"), tmp.path().join("out"));
        let cfg = small_cfg();
        cmd_synth(&input, &cfg).unwrap();
        let first = cmd_process(&input, &out, &cfg, Some(1)).unwrap();
        assert!(first.failures.is_empty());
        assert!(first.patches > 0);
        let again = cmd_process(&input, &out, &cfg, Some(1)).unwrap();
        assert_eq!(again.resumed, 2);
        let s = cmd_split(&out, 0.805, 0).unwrap();
        assert_eq!(s.train_patches + s.val_patches, first.patches);
        cmd_verify_split(&out).unwrap();
        for row in read_manifest(&out).unwrap() {
            assert!(row.patch_dir(&out).is_dir());
            assert_ne!(row.split, SplitLabel::Unassigned);
        }
        cmd_stats(&out, &cfg, Some(1)).unwrap();
        assert!(out.join(STATS_DIR).join("hist_metric.csv").is_file());
    }

    #[test]
    fn eval_with_ground_truth_as_prediction_scores_zero() {
        let tmp = tempfile::tempdir().unwrap();
        let (input, out, pred) = (
            tmp.path().join("in"),
            tmp.path().join("out"),
            tmp.path().join("pred"),
        );
        let mut cfg = small_cfg();
        cfg.synth.samples = 1;
        cmd_synth(&input, &cfg).unwrap();
        cmd_process(&input, &out, &cfg, Some(1)).unwrap();
        let rows = read_manifest(&out).unwrap();
        assert!(!rows.is_empty());
        for row in &rows {
            let p = Patch::read(row.patch_dir(&out), &row.sample_id, row.row0, row.col0).unwrap();
            let d = pred.join(row.dir_name());
            fs::create_dir_all(&d).unwrap();
            crate::raster::grid_write(&p.dem, d.join(PRED_FILE)).unwrap();
        }
        let sum = cmd_eval(&pred, &out, &pred, &cfg.eval, Some(1)).unwrap();
        assert_eq!(sum.evaluated, rows.len());
        assert_eq!(sum.aggregate.rmse, 0.0);
        assert_eq!(sum.aggregate.rel_abs_err, 0.0);
        assert!(pred.join(CDF_FILE).is_file());
    }

    #[test]
    fn unreadable_sample_is_reported_not_fatal() {
        let tmp = tempfile::tempdir().unwrap();
        let (input, out) = (tmp.path().join("in"), tmp.path().join("out"));
        let cfg = small_cfg();
        cmd_synth(&input, &cfg).unwrap();
        fs::create_dir_all(input.join("broken")).unwrap();
        let sum = cmd_process(&input, &out, &cfg, Some(1)).unwrap();
        assert_eq!(sum.failures.len(), 1);
        assert_eq!(sum.failures[0].0, "broken");
        assert!(sum.patches > 0);
    }
}
