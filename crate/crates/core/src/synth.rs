//! Synthetic scenes with known ground truth.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`).
//! Uniform draws take the top 53 bits of `next_u64` scaled by 2^-53;
//! Gaussian draws use the cosine branch of the Box-Muller transform on two
//! uniforms. Both are implemented here so the sample streams do not depend
//! on the version of any distribution crate.

use std::io::Write;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{euclidean, Point, Polyline, TrackPoint, TrajId, Trajectory, TrajectorySet};
use crate::ingest::SceneSpec;

/// Trajectory start times are drawn uniformly from `[0, START_WINDOW)` seconds.
pub const START_WINDOW: f64 = 3600.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Index into the scene's designed paths; members are ground-truth compliant.
    Designed(usize),
    /// Any other polyline; members are ground-truth non-compliant.
    Free(Polyline),
}

/// A stop at a fraction of the route's arc length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dwell {
    pub at: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bundle {
    pub route: Route,
    pub count: usize,
    /// Standard deviation of the lateral displacement, pixels.
    pub sigma: f64,
    /// Pixels per second.
    pub speed: f64,
    #[serde(default)]
    pub dwell: Option<Dwell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub scene: SceneSpec,
    pub bundles: Vec<Bundle>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct GroundTruth {
    pub traj_id: TrajId,
    pub bundle: usize,
    pub compliant: bool,
}

struct Sampler(ChaCha8Rng);

impl Sampler {
    fn new(seed: u64) -> Self {
        Sampler(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform in [0, 1).
    fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.bundles.iter().enumerate() {
            if !(b.sigma.is_finite() && b.sigma >= 0.0) || !(b.speed.is_finite() && b.speed > 0.0) {
                return Err(Error::Validation(format!(
                    "bundle {i}: sigma must be >= 0 and speed > 0"
                )));
            }
            if let Route::Designed(idx) = b.route {
                if idx >= self.scene.designed_paths.len() {
                    return Err(Error::Validation(format!(
                        "bundle {i}: designed path {idx} does not exist"
                    )));
                }
            }
            if let Some(d) = b.dwell {
                if !(0.0..=1.0).contains(&d.at) || !(d.seconds.is_finite() && d.seconds >= 0.0) {
                    return Err(Error::Validation(format!(
                        "bundle {i}: dwell needs 0 <= at <= 1 and seconds >= 0"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn polyline<'a>(&'a self, bundle: &'a Bundle) -> &'a Polyline {
        match &bundle.route {
            Route::Designed(i) => &self.scene.designed_paths[*i].polyline,
            Route::Free(p) => p,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec: SynthSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Position and unit direction at arc length `s` along `p`.
fn locate(p: &Polyline, cum: &[f64], s: f64) -> (Point, (f64, f64)) {
    let v = p.vertices();
    let last_seg = v.len() - 2;
    let seg = (0..=last_seg).find(|&i| s < cum[i + 1]).unwrap_or(last_seg);
    let (a, b) = (v[seg], v[seg + 1]);
    let len = cum[seg + 1] - cum[seg];
    let f = ((s - cum[seg]) / len).clamp(0.0, 1.0);
    let pos = if s >= cum[cum.len() - 1] {
        b
    } else {
        Point::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y))
    };
    (pos, ((b.x - a.x) / len, (b.y - a.y) / len))
}

/// Samples every bundle at the scene frame rate. Trajectory ids run from 1
/// in bundle order.
pub fn generate(spec: &SynthSpec) -> Result<(TrajectorySet, Vec<GroundTruth>)> {
    spec.validate()?;
    let mut rng = Sampler::new(spec.seed);
    let dt = 1.0 / spec.scene.fps;
    let mut trajectories = Vec::new();
    let mut truth = Vec::new();
    let mut next_id = 1u64;

    for (bi, bundle) in spec.bundles.iter().enumerate() {
        let line = spec.polyline(bundle);
        let mut cum = vec![0.0];
        for (a, b) in line.segments() {
            cum.push(cum[cum.len() - 1] + euclidean(a, b));
        }
        let length = cum[cum.len() - 1];
        let travel = length / bundle.speed;
        let (dwell_at, dwell_s) = bundle
            .dwell
            .map_or((travel, 0.0), |d| (d.at * travel, d.seconds));
        let total = travel + dwell_s;
        let arc_at = |tau: f64| -> f64 {
            let moving = if tau < dwell_at {
                tau
            } else if tau < dwell_at + dwell_s {
                dwell_at
            } else {
                tau - dwell_s
            };
            (bundle.speed * moving).min(length)
        };

        for _ in 0..bundle.count {
            let t0 = rng.uniform() * START_WINDOW;
            let mut taus: Vec<f64> = (0..)
                .map(|i| i as f64 * dt)
                .take_while(|&tau| tau < total - 1e-9)
                .collect();
            taus.push(total);
            let points = taus
                .iter()
                .map(|&tau| {
                    let (pos, (ux, uy)) = locate(line, &cum, arc_at(tau));
                    let off = bundle.sigma * rng.standard_normal();
                    TrackPoint::new(pos.x - uy * off, pos.y + ux * off, t0 + tau)
                })
                .collect::<Result<Vec<_>>>()?;
            let id = TrajId(next_id);
            next_id += 1;
            trajectories.push(Trajectory::new(id, points)?);
            truth.push(GroundTruth {
                traj_id: id,
                bundle: bi,
                compliant: matches!(bundle.route, Route::Designed(_)),
            });
        }
    }
    let set = TrajectorySet::new(trajectories, spec.scene.resolution)?;
    Ok((set, truth))
}

pub fn write_ground_truth<W: Write>(truth: &[GroundTruth], mut out: W) -> std::io::Result<()> {
    writeln!(out, "traj_id,bundle,compliant")?;
    for g in truth {
        writeln!(out, "{},{},{}", g.traj_id, g.bundle, g.compliant)?;
    }
    Ok(())
}
