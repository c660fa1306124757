//! Source-destination clustering: DBSCAN over 4-D endpoint vectors, followed
//! by declarative merge/discard directives and gate assignment.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{euclidean, Point, TrajId, Trajectory};
use crate::ingest::SceneSpec;

/// First and last position of a trajectory, as one 4-D point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointVector {
    pub sx: f64,
    pub sy: f64,
    pub dx: f64,
    pub dy: f64,
}

impl EndpointVector {
    pub fn source(&self) -> Point {
        Point::new(self.sx, self.sy)
    }

    pub fn destination(&self) -> Point {
        Point::new(self.dx, self.dy)
    }

    /// Unweighted 4-D Euclidean distance.
    pub fn distance(&self, other: &EndpointVector) -> f64 {
        let a = self.sx - other.sx;
        let b = self.sy - other.sy;
        let c = self.dx - other.dx;
        let d = self.dy - other.dy;
        (a * a + b * b + c * c + d * d).sqrt()
    }
}

pub fn endpoint_vector(traj: &Trajectory) -> EndpointVector {
    let (first, last) = (traj.first(), traj.last());
    EndpointVector {
        sx: first.x,
        sy: first.y,
        dx: last.x,
        dy: last.y,
    }
}

/// DBSCAN parameters. `eps` is in pixels at 640x360.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            eps: 8.0,
            min_pts: 25,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && self.eps > 0.0) || self.min_pts == 0 {
            return Err(Error::Validation(format!(
                "cluster parameters need eps > 0 and min_pts >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, scale: f64) -> ClusterParams {
        ClusterParams {
            eps: self.eps * scale,
            ..*self
        }
    }
}

fn cell_of(v: &EndpointVector, eps: f64) -> (i64, i64) {
    ((v.sx / eps).floor() as i64, (v.sy / eps).floor() as i64)
}

/// Closed eps-neighbourhoods (each point included in its own), found through
/// a grid over the source coordinates. Lists are in ascending index order.
fn neighbourhoods(points: &[(TrajId, EndpointVector)], eps: f64) -> Vec<Vec<usize>> {
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, (_, v)) in points.iter().enumerate() {
        grid.entry(cell_of(v, eps)).or_default().push(i);
    }
    points
        .par_iter()
        .map(|(_, v)| {
            let (cx, cy) = cell_of(v, eps);
            let mut out = Vec::new();
            for gx in cx.saturating_sub(1)..=cx.saturating_add(1) {
                for gy in cy.saturating_sub(1)..=cy.saturating_add(1) {
                    if let Some(cell) = grid.get(&(gx, gy)) {
                        out.extend(
                            cell.iter()
                                .copied()
                                .filter(|&j| v.distance(&points[j].1) <= eps),
                        );
                    }
                }
            }
            out.sort_unstable();
            out
        })
        .collect()
}

/// Density clustering of endpoint vectors.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`. Clusters are the connected components of cores; a border
/// point joins the cluster of its nearest core neighbour, ties going to the
/// core with the smallest trajectory id. Everything else is noise (`None`).
///
/// Labels are numbered from 0 by decreasing cluster size, ties broken by the
/// smallest member id, so the result does not depend on input order.
pub fn dbscan(points: &[(TrajId, EndpointVector)], params: &ClusterParams) -> Vec<Option<usize>> {
    let n = points.len();
    let hoods = neighbourhoods(points, params.eps);
    let core: Vec<bool> = hoods.iter().map(|h| h.len() >= params.min_pts).collect();

    let mut component = vec![usize::MAX; n];
    let mut n_components = 0;
    let mut stack = Vec::new();
    for seed in 0..n {
        if !core[seed] || component[seed] != usize::MAX {
            continue;
        }
        component[seed] = n_components;
        stack.push(seed);
        while let Some(i) = stack.pop() {
            for &j in &hoods[i] {
                if core[j] && component[j] == usize::MAX {
                    component[j] = n_components;
                    stack.push(j);
                }
            }
        }
        n_components += 1;
    }

    for i in 0..n {
        if core[i] {
            continue;
        }
        let nearest = hoods[i]
            .iter()
            .filter(|&&j| core[j])
            .map(|&j| (points[i].1.distance(&points[j].1), points[j].0, j))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, _, j)) = nearest {
            component[i] = component[j];
        }
    }

    // canonical relabelling
    let mut stats: Vec<(usize, TrajId)> = vec![(0, TrajId(u64::MAX)); n_components];
    for (i, &c) in component.iter().enumerate() {
        if c != usize::MAX {
            stats[c].0 += 1;
            stats[c].1 = stats[c].1.min(points[i].0);
        }
    }
    let mut order: Vec<usize> = (0..n_components).collect();
    order.sort_by(|&a, &b| {
        stats[b]
            .0
            .cmp(&stats[a].0)
            .then(stats[a].1.cmp(&stats[b].1))
    });
    let mut relabel = vec![0; n_components];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    component
        .into_iter()
        .map(|c| (c != usize::MAX).then(|| relabel[c]))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SdCluster {
    pub label: usize,
    pub member_ids: Vec<TrajId>,
    pub source_gate: Option<String>,
    pub dest_gate: Option<String>,
    pub centroid: EndpointVector,
}

impl SdCluster {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    pub fn gate_pair(&self) -> Option<(&str, &str)> {
        Some((self.source_gate.as_deref()?, self.dest_gate.as_deref()?))
    }

    pub fn name(&self) -> String {
        match self.gate_pair() {
            Some((s, d)) => format!("{s}->{d}"),
            None => format!("sd{}", self.label),
        }
    }
}

/// Groups labelled points into clusters ordered by label. Members are sorted
/// by id; centroids are mean endpoint vectors.
pub fn build_sd_clusters(
    points: &[(TrajId, EndpointVector)],
    labels: &[Option<usize>],
) -> Vec<SdCluster> {
    let mut groups: BTreeMap<usize, Vec<(TrajId, EndpointVector)>> = BTreeMap::new();
    for (p, label) in points.iter().zip(labels) {
        if let Some(l) = label {
            groups.entry(*l).or_default().push(*p);
        }
    }
    groups
        .into_iter()
        .map(|(label, mut members)| {
            members.sort_by_key(|m| m.0);
            let n = members.len() as f64;
            let mut c = EndpointVector {
                sx: 0.0,
                sy: 0.0,
                dx: 0.0,
                dy: 0.0,
            };
            for (_, v) in &members {
                c.sx += v.sx;
                c.sy += v.sy;
                c.dx += v.dx;
                c.dy += v.dy;
            }
            c.sx /= n;
            c.sy /= n;
            c.dx /= n;
            c.dy /= n;
            SdCluster {
                label,
                member_ids: members.into_iter().map(|m| m.0).collect(),
                source_gate: None,
                dest_gate: None,
                centroid: c,
            }
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscardDirective {
    pub label: usize,
    pub reason: String,
}

/// Version-controlled replacement for manual inspection of raw clusters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Directives {
    pub merges: Vec<Vec<usize>>,
    pub discards: Vec<DiscardDirective>,
}

impl Directives {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self, labels: &HashSet<usize>) -> Result<()> {
        let mut merged = HashSet::new();
        for set in &self.merges {
            if set.is_empty() {
                return Err(Error::InvalidDirectives("empty merge set".into()));
            }
            for &l in set {
                if !labels.contains(&l) {
                    return Err(Error::UnknownLabel(l as i64));
                }
                if !merged.insert(l) {
                    return Err(Error::InvalidDirectives(format!(
                        "label {l} appears in more than one merge position; union the sets first"
                    )));
                }
            }
        }
        let mut dropped = HashSet::new();
        for d in &self.discards {
            if !labels.contains(&d.label) {
                return Err(Error::UnknownLabel(d.label as i64));
            }
            if merged.contains(&d.label) {
                return Err(Error::InvalidDirectives(format!(
                    "label {} is both merged and discarded",
                    d.label
                )));
            }
            if !dropped.insert(d.label) {
                return Err(Error::InvalidDirectives(format!(
                    "label {} discarded twice",
                    d.label
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectiveOutcome {
    pub clusters: Vec<SdCluster>,
    /// Members of discarded clusters with their original label and reason.
    pub discarded: Vec<(TrajId, usize, String)>,
}

/// Applies merges and discards, then relabels survivors from 0 by decreasing
/// size (ties: smallest member id).
pub fn apply_directives(clusters: &[SdCluster], d: &Directives) -> Result<DirectiveOutcome> {
    let by_label: BTreeMap<usize, &SdCluster> = clusters.iter().map(|c| (c.label, c)).collect();
    d.validate(&by_label.keys().copied().collect())?;

    let mut discarded = Vec::new();
    let mut consumed = HashSet::new();
    for dd in &d.discards {
        let c = by_label[&dd.label];
        consumed.insert(dd.label);
        discarded.extend(
            c.member_ids
                .iter()
                .map(|&id| (id, dd.label, dd.reason.clone())),
        );
    }
    discarded.sort_by_key(|x| x.0);

    let mut out = Vec::new();
    for set in &d.merges {
        let parts: Vec<&SdCluster> = set.iter().map(|l| by_label[l]).collect();
        consumed.extend(set.iter().copied());
        if parts.len() == 1 {
            out.push(parts[0].clone());
            continue;
        }
        let total: usize = parts.iter().map(|c| c.len()).sum();
        let w = |c: &SdCluster| c.len() as f64 / total as f64;
        let centroid = EndpointVector {
            sx: parts.iter().map(|c| w(c) * c.centroid.sx).sum(),
            sy: parts.iter().map(|c| w(c) * c.centroid.sy).sum(),
            dx: parts.iter().map(|c| w(c) * c.centroid.dx).sum(),
            dy: parts.iter().map(|c| w(c) * c.centroid.dy).sum(),
        };
        let mut members: Vec<TrajId> = parts
            .iter()
            .flat_map(|c| c.member_ids.iter().copied())
            .collect();
        members.sort();
        out.push(SdCluster {
            label: 0,
            member_ids: members,
            source_gate: None,
            dest_gate: None,
            centroid,
        });
    }
    out.extend(
        clusters
            .iter()
            .filter(|c| !consumed.contains(&c.label))
            .cloned(),
    );
    out.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then(a.member_ids[0].cmp(&b.member_ids[0]))
    });
    for (i, c) in out.iter_mut().enumerate() {
        c.label = i;
    }
    Ok(DirectiveOutcome {
        clusters: out,
        discarded,
    })
}

fn nearest_gate(scene: &SceneSpec, p: Point, snap: f64) -> Option<String> {
    scene
        .gates
        .iter()
        .map(|g| (euclidean(p, g.position()), g))
        .filter(|(d, _)| *d <= snap)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, g)| g.name.clone())
}

/// Names each cluster's source and destination after the nearest gate within
/// `snap` of its centroid endpoints.
pub fn assign_gates(clusters: &[SdCluster], scene: &SceneSpec, snap: f64) -> Vec<SdCluster> {
    clusters
        .iter()
        .map(|c| SdCluster {
            source_gate: nearest_gate(scene, c.centroid.source(), snap),
            dest_gate: nearest_gate(scene, c.centroid.destination(), snap),
            ..c.clone()
        })
        .collect()
}

/// `traj_id,sd_label` rows; unclustered trajectories get -1.
pub fn write_sd_assignments<W: Write>(
    rows: &[(TrajId, Option<usize>)],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "traj_id,sd_label")?;
    for (id, label) in rows {
        match label {
            Some(l) => writeln!(out, "{id},{l}")?,
            None => writeln!(out, "{id},-1")?,
        }
    }
    Ok(())
}
