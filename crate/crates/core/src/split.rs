//! Leakage-free train/validation splits.
//!
//! Samples whose left/right footprint unions intersect (closed intervals, so
//! touching edges count) are chained into clusters, and whole clusters are
//! handed to one split each.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::GeoFootprint;
use crate::rng::derive_seed;

/// Train share of patches in the reference dataset (65090 / 80898).
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.805;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleFootprint {
    pub sample_id: String,
    pub union_bbox: GeoFootprint,
    pub patch_count: usize,
}

impl SampleFootprint {
    pub fn new(
        sample_id: impl Into<String>,
        left: &GeoFootprint,
        right: &GeoFootprint,
        patch_count: usize,
    ) -> Self {
        Self {
            sample_id: sample_id.into(),
            union_bbox: bbox_union(left, right),
            patch_count,
        }
    }
}

/// Componentwise envelope of two footprints.
pub fn bbox_union(a: &GeoFootprint, b: &GeoFootprint) -> GeoFootprint {
    GeoFootprint {
        lon_min: a.lon_min.min(b.lon_min),
        lon_max: a.lon_max.max(b.lon_max),
        lat_min: a.lat_min.min(b.lat_min),
        lat_max: a.lat_max.max(b.lat_max),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Val,
    Unassigned,
}

impl SplitLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Val => "val",
            SplitLabel::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for SplitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cluster {
    pub cluster_id: usize,
    /// Sorted sample ids.
    pub members: Vec<String>,
    pub patch_count: usize,
    pub split: SplitLabel,
}

/// Serialises as the bare list of clusters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    /// Split label per sample id.
    pub fn labels(&self) -> HashMap<&str, (usize, SplitLabel)> {
        self.clusters
            .iter()
            .flat_map(|c| {
                c.members
                    .iter()
                    .map(move |m| (m.as_str(), (c.cluster_id, c.split)))
            })
            .collect()
    }

    pub fn total_patches(&self) -> usize {
        self.clusters.iter().map(|c| c.patch_count).sum()
    }

    pub fn patches_in(&self, split: SplitLabel) -> usize {
        self.clusters
            .iter()
            .filter(|c| c.split == split)
            .map(|c| c.patch_count)
            .sum()
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Connected components of the footprint-intersection graph. Cluster ids
/// follow the order of each cluster's smallest member id.
pub fn cluster(footprints: &[SampleFootprint]) -> ClusterSet {
    let n = footprints.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if footprints[i]
                .union_bbox
                .intersects(&footprints[j].union_bbox)
            {
                uf.union(i, j);
            }
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        let root = uf.find(i);
        groups.entry(root).or_default().push(i);
    }
    let mut clusters: Vec<(Vec<String>, usize)> = groups
        .into_values()
        .map(|idx| {
            let mut members: Vec<String> = idx
                .iter()
                .map(|&i| footprints[i].sample_id.clone())
                .collect();
            members.sort();
            let patches = idx.iter().map(|&i| footprints[i].patch_count).sum();
            (members, patches)
        })
        .collect();
    clusters.sort_by(|a, b| a.0[0].cmp(&b.0[0]));
    ClusterSet {
        clusters: clusters
            .into_iter()
            .enumerate()
            .map(|(cluster_id, (members, patch_count))| Cluster {
                cluster_id,
                members,
                patch_count,
                split: SplitLabel::Unassigned,
            })
            .collect(),
    }
}

/// Greedy largest-first assignment: each cluster goes to the split that is
/// currently furthest below its target patch count (ties go to train).
/// Clusters with equal patch counts are visited in a seed-dependent order.
pub fn assign_splits(clusters: &ClusterSet, train_fraction: f64, seed: u64) -> Result<ClusterSet> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let total = clusters.total_patches() as f64;
    let train_target = train_fraction * total;
    let val_target = total - train_target;
    let mut order: Vec<usize> = (0..clusters.clusters.len()).collect();
    order.sort_by_key(|&i| {
        let c = &clusters.clusters[i];
        (
            std::cmp::Reverse(c.patch_count),
            derive_seed(seed, "split-order", &[c.cluster_id as u64]),
            c.cluster_id,
        )
    });
    let mut out = clusters.clone();
    let (mut train, mut val) = (0.0f64, 0.0f64);
    for i in order {
        let c = &mut out.clusters[i];
        if train_target - train >= val_target - val {
            c.split = SplitLabel::Train;
            train += c.patch_count as f64;
        } else {
            c.split = SplitLabel::Val;
            val += c.patch_count as f64;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LeakagePair {
    pub a: String,
    pub a_split: SplitLabel,
    pub b: String,
    pub b_split: SplitLabel,
}

impl fmt::Display for LeakagePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({}) overlaps {} ({})",
            self.a, self.a_split, self.b, self.b_split
        )
    }
}

/// Every pair of train/val samples whose footprint unions intersect.
/// An empty list means the split is leakage-free. Samples absent from the
/// cluster set or still unassigned are not checked.
pub fn verify_no_leakage(
    clusters: &ClusterSet,
    footprints: &[SampleFootprint],
) -> Vec<LeakagePair> {
    let labels = clusters.labels();
    let labelled: Vec<(&SampleFootprint, SplitLabel)> = footprints
        .iter()
        .filter_map(|f| match labels.get(f.sample_id.as_str()) {
            Some(&(_, s)) if s != SplitLabel::Unassigned => Some((f, s)),
            _ => None,
        })
        .collect();
    let mut pairs = Vec::new();
    for (i, (fa, sa)) in labelled.iter().enumerate() {
        for (fb, sb) in &labelled[i + 1..] {
            if sa != sb && fa.union_bbox.intersects(&fb.union_bbox) {
                let (a, b) = if fa.sample_id <= fb.sample_id {
                    ((fa, sa), (fb, sb))
                } else {
                    ((fb, sb), (fa, sa))
                };
                pairs.push(LeakagePair {
                    a: a.0.sample_id.clone(),
                    a_split: *a.1,
                    b: b.0.sample_id.clone(),
                    b_split: *b.1,
                });
            }
        }
    }
    pairs.sort_by(|x, y| (&x.a, &x.b).cmp(&(&y.a, &y.b)));
    pairs
}
