//! Broken-trajectory filtering and arc-length resampling.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{euclidean, Point, TrajId, Trajectory, TrajectorySet};

/// Default number of samples per resampled path.
pub const DEFAULT_SAMPLES: usize = 64;

/// Criteria for a usable trajectory. `min_path_length` is in pixels at
/// 640x360 and is rescaled with the scene resolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    pub min_points: usize,
    pub min_path_length: f64,
    pub max_time_gap: f64,
    pub min_duration: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            min_points: 10,
            min_path_length: 40.0,
            max_time_gap: 2.0,
            min_duration: 1.0,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min_points > 0
            && self.min_path_length > 0.0
            && self.max_time_gap > 0.0
            && self.min_duration > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "filter parameters must be strictly positive: {self:?}"
            )))
        }
    }

    pub fn scaled(&self, scale: f64) -> FilterParams {
        FilterParams {
            min_path_length: self.min_path_length * scale,
            ..*self
        }
    }

    /// The first criterion `traj` violates, in declaration order.
    pub fn violation(&self, traj: &Trajectory) -> Option<DiscardReason> {
        if traj.len() < self.min_points {
            Some(DiscardReason::MinPoints)
        } else if traj.path_length() < self.min_path_length {
            Some(DiscardReason::MinPathLength)
        } else if traj.max_time_gap() > self.max_time_gap {
            Some(DiscardReason::MaxTimeGap)
        } else if traj.duration() < self.min_duration {
            Some(DiscardReason::MinDuration)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    MinPoints,
    MinPathLength,
    MaxTimeGap,
    MinDuration,
}

impl DiscardReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DiscardReason::MinPoints => "min_points",
            DiscardReason::MinPathLength => "min_path_length",
            DiscardReason::MaxTimeGap => "max_time_gap",
            DiscardReason::MinDuration => "min_duration",
        }
    }
}

impl fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutcome {
    pub kept: TrajectorySet,
    pub discarded: Vec<(TrajId, DiscardReason)>,
}

/// Splits `set` into usable trajectories and attributable discards. Both
/// outputs keep the input order.
pub fn filter_broken(set: &TrajectorySet, params: &FilterParams) -> FilterOutcome {
    let verdicts: Vec<Option<DiscardReason>> = set
        .trajectories()
        .par_iter()
        .map(|t| params.violation(t))
        .collect();
    let mut kept = Vec::with_capacity(set.len());
    let mut discarded = Vec::new();
    for (traj, verdict) in set.iter().zip(verdicts) {
        match verdict {
            None => kept.push(traj.clone()),
            Some(reason) => discarded.push((traj.id(), reason)),
        }
    }
    FilterOutcome {
        kept: TrajectorySet::from_parts_unchecked(kept, set.resolution()),
        discarded,
    }
}

pub fn write_discards<W: Write, R: fmt::Display>(
    discards: &[(TrajId, R)],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "traj_id,reason")?;
    for (id, reason) in discards {
        writeln!(out, "{id},{reason}")?;
    }
    Ok(())
}

/// A trajectory reduced to `k` points spaced uniformly in arc length.
#[derive(Clone, Debug, PartialEq)]
pub struct ResampledPath {
    pub source_id: TrajId,
    pub samples: Vec<Point>,
}

impl ResampledPath {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn resample(traj: &Trajectory, k: usize) -> Result<ResampledPath> {
    let positions: Vec<Point> = traj.positions().collect();
    let samples = resample_points(&positions, k).map_err(|e| match e {
        Error::DegenerateGeometry(_) => {
            Error::DegenerateGeometry(format!("trajectory {} has zero path length", traj.id()))
        }
        other => other,
    })?;
    Ok(ResampledPath {
        source_id: traj.id(),
        samples,
    })
}

/// Samples the piecewise-linear curve through `points` at arc-length
/// fractions `0, 1/(k-1), ..., 1`. Endpoints are copied exactly.
pub fn resample_points(points: &[Point], k: usize) -> Result<Vec<Point>> {
    if k < 2 {
        return Err(Error::Validation(format!(
            "sample count must be at least 2, got {k}"
        )));
    }
    let mut verts: Vec<Point> = Vec::with_capacity(points.len());
    for &p in points {
        if verts.last() != Some(&p) {
            verts.push(p);
        }
    }
    if verts.len() < 2 {
        return Err(Error::DegenerateGeometry("all points identical".into()));
    }
    let mut cum = Vec::with_capacity(verts.len());
    cum.push(0.0);
    for w in verts.windows(2) {
        let prev = cum[cum.len() - 1];
        cum.push(prev + euclidean(w[0], w[1]));
    }
    let total = cum[cum.len() - 1];
    if total.is_nan() || total <= 0.0 {
        return Err(Error::DegenerateGeometry("zero path length".into()));
    }

    let mut out = Vec::with_capacity(k);
    out.push(verts[0]);
    let mut seg = 0;
    for j in 1..k - 1 {
        let s = total * j as f64 / (k - 1) as f64;
        while seg + 2 < verts.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let (a, b) = (verts[seg], verts[seg + 1]);
        let frac = ((s - cum[seg]) / (cum[seg + 1] - cum[seg])).clamp(0.0, 1.0);
        out.push(Point::new(
            a.x + frac * (b.x - a.x),
            a.y + frac * (b.y - a.y),
        ));
    }
    out.push(verts[verts.len() - 1]);
    Ok(out)
}
