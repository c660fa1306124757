//! Path-shape clustering inside an SD-cluster: pairwise DTW distances and
//! agglomerative hierarchical clustering over them.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtw::dtw_distance_banded;
use crate::error::{Error, Result};
use crate::geometry::TrajId;
use crate::preprocess::{ResampledPath, DEFAULT_SAMPLES};

/// Symmetric pairwise DTW distances with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<TrajId>,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_values(ids: Vec<TrajId>, values: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(Error::Validation(format!(
                "distance matrix for {n} ids needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::Validation(
                    "distance matrix diagonal must be zero".into(),
                ));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !(v.is_finite() && v >= 0.0) || v != values[j * n + i] {
                    return Err(Error::Validation(format!(
                        "distance matrix entry ({i}, {j}) is negative, non-finite or asymmetric"
                    )));
                }
            }
        }
        Ok(DistanceMatrix { ids, values })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[TrajId] {
        &self.ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    pub fn write_dense<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = self.ids.iter().map(|id| id.to_string()).collect();
        writeln!(out, "# {}", header.join(" "))?;
        for row in self
            .values
            .chunks(self.ids.len().max(1))
            .take(self.ids.len())
        {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}

/// Pairwise DTW over resampled paths; every unordered pair is evaluated once.
pub fn distance_matrix(paths: &[ResampledPath], band: Option<f64>) -> Result<DistanceMatrix> {
    let n = paths.len();
    if let Some(first) = paths.first() {
        if let Some(bad) = paths.iter().find(|p| p.len() != first.len()) {
            return Err(Error::MismatchedSampleCount {
                expected: first.len(),
                found: bad.len(),
            });
        }
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let dists = pairs
        .par_iter()
        .map(|&(i, j)| dtw_distance_banded(&paths[i].samples, &paths[j].samples, band))
        .collect::<Result<Vec<f64>>>()?;
    let mut values = vec![0.0; n * n];
    for (&(i, j), d) in pairs.iter().zip(dists) {
        values[i * n + j] = d;
        values[j * n + i] = d;
    }
    Ok(DistanceMatrix {
        ids: paths.iter().map(|p| p.source_id).collect(),
        values,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Complete,
    #[default]
    Average,
}

/// Where to cut the dendrogram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cut {
    /// Number of path-clusters per SD-cluster.
    TargetCount(usize),
    /// Stop merging once the closest pair is farther apart than this.
    DistanceThreshold(f64),
}

/// Default threshold, in DTW units for K=64 samples at 640x360: a mean
/// separation of 8 px per sample.
pub const DEFAULT_DISTANCE_THRESHOLD: f64 = 512.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathClusterParams {
    pub linkage: Linkage,
    /// A `distance_threshold` is stated for K=64 samples at 640x360 and is
    /// rescaled by `K/64` and the scene resolution at run time.
    pub cut: Cut,
    pub min_cluster_size: usize,
    /// Optional Sakoe-Chiba band width as a fraction of K.
    pub band: Option<f64>,
}

impl Default for PathClusterParams {
    fn default() -> Self {
        PathClusterParams {
            linkage: Linkage::Average,
            cut: Cut::DistanceThreshold(DEFAULT_DISTANCE_THRESHOLD),
            min_cluster_size: 1,
            band: None,
        }
    }
}

impl PathClusterParams {
    pub fn validate(&self) -> Result<()> {
        let cut_ok = match self.cut {
            Cut::TargetCount(n) => n > 0,
            Cut::DistanceThreshold(t) => t.is_finite() && t > 0.0,
        };
        let band_ok = self.band.is_none_or(|b| b.is_finite() && b > 0.0);
        if !cut_ok || self.min_cluster_size == 0 || !band_ok {
            return Err(Error::Validation(format!(
                "path-cluster parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Effective parameters for `k` samples per path and a pixel scale
    /// factor relative to 640x360.
    pub fn scaled(&self, k: usize, scale: f64) -> PathClusterParams {
        let cut = match self.cut {
            Cut::DistanceThreshold(t) => {
                Cut::DistanceThreshold(t * k as f64 / DEFAULT_SAMPLES as f64 * scale)
            }
            c => c,
        };
        PathClusterParams { cut, ..*self }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathCluster {
    pub sd_label: usize,
    /// 1-based, by decreasing size.
    pub index: usize,
    pub member_ids: Vec<TrajId>,
    pub medoid_id: TrajId,
}

impl PathCluster {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }
}

/// Member minimising the summed distance to the other members; ties go to
/// the smallest id.
pub fn medoid(m: &DistanceMatrix, members: &[usize]) -> Result<TrajId> {
    if members.is_empty() {
        return Err(Error::EmptyMembers);
    }
    let mut sorted = members.to_vec();
    sorted.sort_by_key(|&i| m.ids[i]);
    let best = sorted
        .iter()
        .map(|&i| {
            let total: f64 = sorted.iter().map(|&j| m.get(i, j)).sum();
            (total, m.ids[i])
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("non-empty");
    Ok(best.1)
}

type PairKey = (TrajId, TrajId);

#[derive(Clone, Copy, Debug)]
struct Candidate {
    dist: f64,
    key: PairKey,
    other: usize,
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    match a.dist.total_cmp(&b.dist) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a.key < b.key,
    }
}

/// Agglomeration state over a private copy of the distance matrix. Each
/// active cluster keeps a cached nearest neighbour; with average and
/// complete linkage a merge never brings a third cluster closer than its
/// current nearest neighbour, so only rows that pointed at the merged pair
/// need a rescan.
struct Agglomerator {
    n: usize,
    dist: Vec<f64>,
    active: Vec<bool>,
    size: Vec<usize>,
    min_id: Vec<TrajId>,
    members: Vec<Vec<usize>>,
    nearest: Vec<Option<Candidate>>,
    linkage: Linkage,
    n_active: usize,
}

impl Agglomerator {
    fn new(m: &DistanceMatrix, linkage: Linkage) -> Self {
        let n = m.len();
        let mut a = Agglomerator {
            n,
            dist: m.values.clone(),
            active: vec![true; n],
            size: vec![1; n],
            min_id: m.ids.clone(),
            members: (0..n).map(|i| vec![i]).collect(),
            nearest: vec![None; n],
            linkage,
            n_active: n,
        };
        for i in 0..n {
            a.nearest[i] = a.scan(i);
        }
        a
    }

    fn key(&self, i: usize, j: usize) -> PairKey {
        let (a, b) = (self.min_id[i], self.min_id[j]);
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    fn candidate(&self, i: usize, j: usize) -> Candidate {
        Candidate {
            dist: self.dist[i * self.n + j],
            key: self.key(i, j),
            other: j,
        }
    }

    fn scan(&self, i: usize) -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        for j in 0..self.n {
            if j == i || !self.active[j] {
                continue;
            }
            let c = self.candidate(i, j);
            if best.is_none_or(|b| better(&c, &b)) {
                best = Some(c);
            }
        }
        best
    }

    /// Closest active pair `(i, j, distance)` by (distance, pair of smallest
    /// member ids).
    fn closest(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, Candidate)> = None;
        for i in 0..self.n {
            if !self.active[i] {
                continue;
            }
            if let Some(c) = self.nearest[i] {
                if best.is_none_or(|(_, b)| better(&c, &b)) {
                    best = Some((i, c));
                }
            }
        }
        best.map(|(i, c)| (i, c.other, c.dist))
    }

    /// Closest pair involving at least one cluster smaller than `min_size`.
    fn closest_undersized(&self, min_size: usize) -> Option<(usize, usize)> {
        let mut best: Option<(usize, Candidate)> = None;
        for i in 0..self.n {
            if !self.active[i] || self.size[i] >= min_size {
                continue;
            }
            if let Some(c) = self.scan(i) {
                if best.is_none_or(|(_, b)| better(&c, &b)) {
                    best = Some((i, c));
                }
            }
        }
        best.map(|(i, c)| (i, c.other))
    }

    fn merge(&mut self, a: usize, b: usize) {
        let (a, b) = (a.min(b), a.max(b));
        let n = self.n;
        let (sa, sb) = (self.size[a] as f64, self.size[b] as f64);
        for k in 0..n {
            if !self.active[k] || k == a || k == b {
                continue;
            }
            let (dak, dbk) = (self.dist[a * n + k], self.dist[b * n + k]);
            let d = match self.linkage {
                Linkage::Complete => dak.max(dbk),
                Linkage::Average => (sa * dak + sb * dbk) / (sa + sb),
            };
            self.dist[a * n + k] = d;
            self.dist[k * n + a] = d;
        }
        self.active[b] = false;
        self.size[a] += self.size[b];
        self.min_id[a] = self.min_id[a].min(self.min_id[b]);
        let moved = std::mem::take(&mut self.members[b]);
        self.members[a].extend(moved);
        self.n_active -= 1;

        self.nearest[b] = None;
        self.nearest[a] = self.scan(a);
        for k in 0..n {
            if !self.active[k] || k == a {
                continue;
            }
            match self.nearest[k] {
                Some(c) if c.other == a || c.other == b => self.nearest[k] = self.scan(k),
                Some(c) => {
                    let via_a = self.candidate(k, a);
                    if better(&via_a, &c) {
                        self.nearest[k] = Some(via_a);
                    }
                }
                None => self.nearest[k] = self.scan(k),
            }
        }
    }

    fn clusters(self) -> Vec<Vec<usize>> {
        self.members
            .into_iter()
            .zip(self.active)
            .filter_map(|(m, active)| active.then_some(m))
            .collect()
    }
}

/// Agglomerative clustering of `m`, cut by count or distance, with
/// undersized clusters folded into their closest neighbour afterwards.
/// Clusters are returned by decreasing size (ties: smallest member id) and
/// indexed from 1.
pub fn cluster_paths(
    m: &DistanceMatrix,
    params: &PathClusterParams,
    sd_label: usize,
) -> Result<Vec<PathCluster>> {
    params.validate()?;
    let n = m.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if let Cut::TargetCount(target) = params.cut {
        if target > n {
            return Err(Error::TargetCountTooLarge {
                target,
                available: n,
            });
        }
    }

    let mut agg = Agglomerator::new(m, params.linkage);
    while agg.n_active > 1 {
        let Some((i, j, d)) = agg.closest() else {
            break;
        };
        let stop = match params.cut {
            Cut::TargetCount(target) => agg.n_active <= target,
            Cut::DistanceThreshold(t) => d > t,
        };
        if stop {
            break;
        }
        agg.merge(i, j);
    }
    while agg.n_active > 1 {
        let Some((i, j)) = agg.closest_undersized(params.min_cluster_size) else {
            break;
        };
        agg.merge(i, j);
    }

    let mut groups = agg.clusters();
    for g in &mut groups {
        g.sort_by_key(|&i| m.ids[i]);
    }
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then(m.ids[a[0]].cmp(&m.ids[b[0]])));
    groups
        .into_iter()
        .enumerate()
        .map(|(k, g)| {
            Ok(PathCluster {
                sd_label,
                index: k + 1,
                medoid_id: medoid(m, &g)?,
                member_ids: g.iter().map(|&i| m.ids[i]).collect(),
            })
        })
        .collect()
}

/// `traj_id,sd_label,path_index` rows.
pub fn write_path_assignments<W: Write>(
    clusters: &[PathCluster],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "traj_id,sd_label,path_index")?;
    let mut rows: Vec<(TrajId, usize, usize)> = clusters
        .iter()
        .flat_map(|c| {
            c.member_ids
                .iter()
                .map(move |&id| (id, c.sd_label, c.index))
        })
        .collect();
    rows.sort();
    for (id, sd, idx) in rows {
        writeln!(out, "{id},{sd},{idx}")?;
    }
    Ok(())
}
