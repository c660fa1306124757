//! Scoring observed movement against the designed paths: corridor
//! deviation, per-cluster compliance, mismatch totals, time on screen and
//! forbidden-zone entries.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::endpoint::SdCluster;
use crate::error::{Error, Result};
use crate::geometry::{euclidean, point_to_polyline, Point, Polyline, TrajId, TrajectorySet};
use crate::ingest::{DesignedPath, ForbiddenZone, SceneSpec};
use crate::pathcluster::PathCluster;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationMode {
    /// Every member inherits the verdict of its cluster's medoid.
    #[default]
    Medoid,
    /// Every member is scored on its own.
    PerTrajectory,
}

/// `deviation_threshold` is in pixels at 640x360.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplianceParams {
    pub deviation_threshold: f64,
    pub deviation_quantile: f64,
    pub zone_min_points: usize,
    pub mode: ClassificationMode,
}

impl Default for ComplianceParams {
    fn default() -> Self {
        ComplianceParams {
            deviation_threshold: 12.0,
            deviation_quantile: 0.9,
            zone_min_points: 3,
            mode: ClassificationMode::Medoid,
        }
    }
}

impl ComplianceParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.deviation_threshold.is_finite()
            && self.deviation_threshold > 0.0
            && self.deviation_quantile > 0.0
            && self.deviation_quantile <= 1.0
            && self.zone_min_points >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "invalid compliance parameters: {self:?}"
            )))
        }
    }

    pub fn scaled(&self, scale: f64) -> ComplianceParams {
        ComplianceParams {
            deviation_threshold: self.deviation_threshold * scale,
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub max: f64,
    /// Nearest-rank quantile of the per-sample distances at the configured
    /// `deviation_quantile`.
    pub quantile: f64,
    /// Fraction of samples within `deviation_threshold` of the design.
    pub within_fraction: f64,
}

pub fn trajectory_deviation(
    samples: &[Point],
    design: &Polyline,
    params: &ComplianceParams,
) -> Deviation {
    if samples.is_empty() {
        return Deviation {
            max: 0.0,
            quantile: 0.0,
            within_fraction: 1.0,
        };
    }
    let mut d: Vec<f64> = samples
        .iter()
        .map(|&p| point_to_polyline(p, design))
        .collect();
    let within = d
        .iter()
        .filter(|&&v| v <= params.deviation_threshold)
        .count();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let rank = ((params.deviation_quantile * n as f64).ceil() as usize).clamp(1, n);
    Deviation {
        max: d[n - 1],
        quantile: d[rank - 1],
        within_fraction: within as f64 / n as f64,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Classification {
    pub compliant: bool,
    /// Index into the scene's `designed_paths` of the best-matching design.
    pub matched_design: Option<usize>,
    pub deviation: Option<Deviation>,
    pub reason: Option<String>,
}

/// Scores `samples` against every candidate design and keeps the best match
/// (highest within-fraction, then lowest quantile deviation, then lowest
/// index). Compliant when the best match keeps at least
/// `deviation_quantile` of the samples inside the corridor.
pub fn classify_path(
    samples: &[Point],
    designs: &[(usize, &DesignedPath)],
    params: &ComplianceParams,
) -> Classification {
    let best = designs
        .iter()
        .map(|(idx, dp)| (*idx, trajectory_deviation(samples, &dp.polyline, params)))
        .min_by(|a, b| {
            b.1.within_fraction
                .total_cmp(&a.1.within_fraction)
                .then(a.1.quantile.total_cmp(&b.1.quantile))
                .then(a.0.cmp(&b.0))
        });
    match best {
        None => Classification {
            compliant: false,
            matched_design: None,
            deviation: None,
            reason: Some("no designed path".into()),
        },
        Some((idx, dev)) => {
            let compliant = dev.within_fraction >= params.deviation_quantile;
            Classification {
                compliant,
                matched_design: Some(idx),
                deviation: Some(dev),
                reason: (!compliant).then(|| "outside design corridor".into()),
            }
        }
    }
}

/// Designed paths for an SD-cluster's gate pair (empty when either gate is
/// unassigned).
pub fn designs_for<'a>(scene: &'a SceneSpec, sd: &SdCluster) -> Vec<(usize, &'a DesignedPath)> {
    match sd.gate_pair() {
        Some((s, d)) => scene
            .designed_paths
            .iter()
            .enumerate()
            .filter(|(_, p)| p.source == s && p.destination == d)
            .collect(),
        None => Vec::new(),
    }
}

/// Verdict for a path-cluster, decided on its medoid's resampled path.
pub fn classify_cluster(
    medoid_samples: &[Point],
    designs: &[(usize, &DesignedPath)],
    params: &ComplianceParams,
) -> Classification {
    classify_path(medoid_samples, designs, params)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DurationStats {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize_durations(durations: &[f64]) -> Result<DurationStats> {
    if durations.is_empty() {
        return Err(Error::EmptyMembers);
    }
    let mut d = durations.to_vec();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let median = if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    };
    Ok(DurationStats {
        mean: d.iter().sum::<f64>() / n as f64,
        median,
        min: d[0],
        max: d[n - 1],
    })
}

/// Time-on-screen statistics (first to last raw observation) over `members`.
pub fn duration_stats(set: &TrajectorySet, members: &[TrajId]) -> Result<DurationStats> {
    let by_id: HashMap<TrajId, f64> = set.iter().map(|t| (t.id(), t.duration())).collect();
    let durations = members
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| Error::Validation(format!("unknown trajectory {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    summarize_durations(&durations)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZoneEvent {
    pub traj_id: TrajId,
    pub zone: String,
    pub first_entry_t: f64,
}

/// One event per (trajectory, zone) whose raw points stay strictly inside
/// the zone for at least `zone_min_points` consecutive observations. The
/// entry time is the first point of the first qualifying run.
pub fn forbidden_zone_events(
    set: &TrajectorySet,
    zones: &[ForbiddenZone],
    params: &ComplianceParams,
) -> Vec<ZoneEvent> {
    let mut events = Vec::new();
    for traj in set.iter() {
        for zone in zones {
            let mut run = 0;
            let mut run_start = 0.0;
            for p in traj.points() {
                if zone.polygon.contains_strict(p.position()) {
                    if run == 0 {
                        run_start = p.t;
                    }
                    run += 1;
                    if run >= params.zone_min_points {
                        events.push(ZoneEvent {
                            traj_id: traj.id(),
                            zone: zone.name.clone(),
                            first_entry_t: run_start,
                        });
                        break;
                    }
                } else {
                    run = 0;
                }
            }
        }
    }
    events
}

/// Trajectories starting within `snap` of `source` and ending within `snap`
/// of `destination`, regardless of clustering.
pub fn raw_sd_query(
    set: &TrajectorySet,
    scene: &SceneSpec,
    source: &str,
    destination: &str,
    snap: f64,
) -> Result<Vec<TrajId>> {
    let src = scene
        .gate(source)
        .ok_or_else(|| Error::UnknownGate(source.into()))?
        .position();
    let dst = scene
        .gate(destination)
        .ok_or_else(|| Error::UnknownGate(destination.into()))?
        .position();
    Ok(set
        .iter()
        .filter(|t| {
            euclidean(t.first().position(), src) <= snap
                && euclidean(t.last().position(), dst) <= snap
        })
        .map(|t| t.id())
        .collect())
}

/// Compliance verdicts and durations for one path-cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssessment {
    pub cluster: PathCluster,
    pub verdict: Classification,
    /// Aligned with `cluster.member_ids`.
    pub member_compliant: Vec<bool>,
    pub member_durations: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathClusterSummary {
    pub sd_label: usize,
    pub path_index: usize,
    pub name: String,
    pub size: usize,
    pub compliant: bool,
    pub compliant_members: usize,
    pub non_compliant_members: usize,
    pub matched_design: Option<usize>,
    pub reason: Option<String>,
    pub medoid_id: TrajId,
    pub medoid_deviation: Option<Deviation>,
    pub duration: DurationStats,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SdPairSummary {
    pub sd_label: usize,
    pub source_gate: Option<String>,
    pub dest_gate: Option<String>,
    pub size: usize,
    pub path_clusters: usize,
    pub compliant: usize,
    pub non_compliant: usize,
    pub mismatch_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SceneTotals {
    pub total_trajectories: usize,
    pub non_compliant: usize,
    pub mismatch_fraction: f64,
    pub wrong_way_events: usize,
    pub wrong_way_trajectories: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplianceReport {
    pub mode: ClassificationMode,
    pub sd_pairs: Vec<SdPairSummary>,
    pub path_clusters: Vec<PathClusterSummary>,
    pub totals: SceneTotals,
    pub wrong_way: Vec<ZoneEvent>,
}

fn fraction(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

/// Aggregates cluster verdicts into per-SD and scene-wide counts. Fails if
/// the path-clusters of an SD-cluster do not partition its members.
pub fn mismatch_report(
    sd_clusters: &[SdCluster],
    assessments: &[ClusterAssessment],
    wrong_way: Vec<ZoneEvent>,
    mode: ClassificationMode,
) -> Result<ComplianceReport> {
    let mut path_clusters = Vec::with_capacity(assessments.len());
    let mut sd_pairs = Vec::with_capacity(sd_clusters.len());
    for sd in sd_clusters {
        let mine: Vec<&ClusterAssessment> = assessments
            .iter()
            .filter(|a| a.cluster.sd_label == sd.label)
            .collect();
        let covered: BTreeSet<TrajId> = mine
            .iter()
            .flat_map(|a| a.cluster.member_ids.iter().copied())
            .collect();
        let total_members: usize = mine.iter().map(|a| a.cluster.len()).sum();
        if total_members != sd.len()
            || covered.len() != sd.len()
            || !sd.member_ids.iter().all(|id| covered.contains(id))
        {
            return Err(Error::Validation(format!(
                "path-clusters of SD-cluster {} do not partition its {} members",
                sd.label,
                sd.len()
            )));
        }
        let mut compliant = 0;
        for a in &mine {
            if a.member_compliant.len() != a.cluster.len()
                || a.member_durations.len() != a.cluster.len()
            {
                return Err(Error::Validation(format!(
                    "assessment of path-cluster {}.{} is not aligned with its members",
                    sd.label, a.cluster.index
                )));
            }
            let ok = a.member_compliant.iter().filter(|&&c| c).count();
            compliant += ok;
            path_clusters.push(PathClusterSummary {
                sd_label: sd.label,
                path_index: a.cluster.index,
                name: format!("{}.{}", sd.name(), a.cluster.index),
                size: a.cluster.len(),
                compliant: a.verdict.compliant,
                compliant_members: ok,
                non_compliant_members: a.cluster.len() - ok,
                matched_design: a.verdict.matched_design,
                reason: a.verdict.reason.clone(),
                medoid_id: a.cluster.medoid_id,
                medoid_deviation: a.verdict.deviation,
                duration: summarize_durations(&a.member_durations)?,
            });
        }
        sd_pairs.push(SdPairSummary {
            sd_label: sd.label,
            source_gate: sd.source_gate.clone(),
            dest_gate: sd.dest_gate.clone(),
            size: sd.len(),
            path_clusters: mine.len(),
            compliant,
            non_compliant: sd.len() - compliant,
            mismatch_fraction: fraction(sd.len() - compliant, sd.len()),
        });
    }
    let total: usize = sd_pairs.iter().map(|s| s.size).sum();
    let non_compliant: usize = sd_pairs.iter().map(|s| s.non_compliant).sum();
    let wrong_way_trajectories = wrong_way
        .iter()
        .map(|e| e.traj_id)
        .collect::<BTreeSet<_>>()
        .len();
    Ok(ComplianceReport {
        mode,
        sd_pairs,
        path_clusters,
        totals: SceneTotals {
            total_trajectories: total,
            non_compliant,
            mismatch_fraction: fraction(non_compliant, total),
            wrong_way_events: wrong_way.len(),
            wrong_way_trajectories,
        },
        wrong_way,
    })
}

impl ComplianceReport {
    /// Fixed-width plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let t = &self.totals;
        let _ = writeln!(
            s,
            "trajectories: {}  not following design: {} ({:.2}%)  wrong-way: {} events / {} trajectories",
            t.total_trajectories,
            t.non_compliant,
            100.0 * t.mismatch_fraction,
            t.wrong_way_events,
            t.wrong_way_trajectories
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<5} {:<22} {:>6} {:>8} {:>12} {:>9}",
            "sd", "gates", "size", "paths", "non-compl.", "mismatch"
        );
        for p in &self.sd_pairs {
            let gates = format!(
                "{}->{}",
                p.source_gate.as_deref().unwrap_or("?"),
                p.dest_gate.as_deref().unwrap_or("?")
            );
            let _ = writeln!(
                s,
                "{:<5} {:<22} {:>6} {:>8} {:>12} {:>8.2}%",
                p.sd_label,
                gates,
                p.size,
                p.path_clusters,
                p.non_compliant,
                100.0 * p.mismatch_fraction
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<28} {:>6} {:>10} {:>10} {:>10} {:>10}",
            "path-cluster", "size", "compliant", "mean s", "median s", "q-dev px"
        );
        for c in &self.path_clusters {
            let _ = writeln!(
                s,
                "{:<28} {:>6} {:>10} {:>10.2} {:>10.2} {:>10}",
                c.name,
                c.size,
                if c.compliant { "yes" } else { "no" },
                c.duration.mean,
                c.duration.median,
                c.medoid_deviation
                    .map_or_else(|| "-".to_string(), |d| format!("{:.2}", d.quantile)),
            );
        }
        s
    }
}
