//! Trajectory and scene-file ingestion.
//!
//! Trajectory files are comma-separated with a `#resolution=WxH` comment line
//! ahead of a `traj_id,frame,x,y` or `traj_id,t,x,y` header. Scene files are
//! JSON documents describing gates, designed paths and forbidden zones.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    euclidean, Point, Polygon, Polyline, Resolution, TrackPoint, TrajId, Trajectory, TrajectorySet,
};

/// Gate-snap radius at 640x360.
pub const DEFAULT_GATE_SNAP: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    Entry,
    Exit,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gate {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub kind: GateKind,
}

impl Gate {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignedPath {
    pub source: String,
    pub destination: String,
    pub polyline: Polyline,
    #[serde(default)]
    pub required_stops: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForbiddenZone {
    pub name: String,
    pub polygon: Polygon,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ZoneDoc {
    name: String,
    polygon: Vec<[f64; 2]>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    resolution: Resolution,
    fps: f64,
    gates: Vec<Gate>,
    designed_paths: Vec<DesignedPath>,
    #[serde(default)]
    forbidden_zones: Vec<ZoneDoc>,
    #[serde(default)]
    signal_lines: Vec<Polyline>,
}

/// The design of an intersection: legal gates, intended paths, and
/// vehicle-only space, all in pixels at `resolution`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneDoc", into = "SceneDoc")]
pub struct SceneSpec {
    pub resolution: Resolution,
    pub fps: f64,
    pub gates: Vec<Gate>,
    pub designed_paths: Vec<DesignedPath>,
    pub forbidden_zones: Vec<ForbiddenZone>,
    pub signal_lines: Vec<Polyline>,
}

impl SceneSpec {
    /// Default gate-snap radius rescaled to this scene's resolution.
    pub fn default_snap(&self) -> f64 {
        DEFAULT_GATE_SNAP * self.resolution.reference_scale()
    }

    pub fn gate(&self, name: &str) -> Option<&Gate> {
        self.gates.iter().find(|g| g.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_snap(self.default_snap())
    }

    pub fn validate_with_snap(&self, snap: f64) -> Result<()> {
        self.resolution.validate()?;
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Validation(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        let mut names = HashSet::new();
        for g in &self.gates {
            if !names.insert(g.name.as_str()) {
                return Err(Error::DuplicateGate(g.name.clone()));
            }
            if !g.position().is_finite() {
                return Err(Error::Validation(format!(
                    "gate {:?} has a non-finite position",
                    g.name
                )));
            }
        }
        for path in &self.designed_paths {
            let src = self
                .gate(&path.source)
                .ok_or_else(|| Error::UnknownGate(path.source.clone()))?;
            let dst = self
                .gate(&path.destination)
                .ok_or_else(|| Error::UnknownGate(path.destination.clone()))?;
            let start_gap = euclidean(path.polyline.first(), src.position());
            let end_gap = euclidean(path.polyline.last(), dst.position());
            if start_gap > snap || end_gap > snap {
                return Err(Error::Validation(format!(
                    "designed path {}->{} does not start and end within {snap} px of its gates \
                     (start {start_gap:.2} px, end {end_gap:.2} px)",
                    path.source, path.destination
                )));
            }
        }
        Ok(())
    }

    /// Designed paths connecting `source` to `destination`, with their index
    /// in `designed_paths`.
    pub fn paths_between<'a>(
        &'a self,
        source: &'a str,
        destination: &'a str,
    ) -> impl Iterator<Item = (usize, &'a DesignedPath)> + 'a {
        self.designed_paths
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.source == source && p.destination == destination)
    }

    fn from_doc(doc: SceneDoc) -> Result<Self> {
        let mut zones = Vec::with_capacity(doc.forbidden_zones.len());
        for z in doc.forbidden_zones {
            let ring: Vec<Point> = z.polygon.into_iter().map(Point::from).collect();
            if ring.len() < 2 || ring.first() != ring.last() {
                return Err(Error::OpenPolygon(z.name));
            }
            let polygon = Polygon::from_closed_ring(ring).map_err(|e| match e {
                Error::Validation(msg) if msg.contains("self-intersecting") => {
                    Error::SelfIntersectingPolygon(z.name.clone())
                }
                other => Error::Validation(format!("zone {:?}: {other}", z.name)),
            })?;
            zones.push(ForbiddenZone {
                name: z.name,
                polygon,
            });
        }
        let scene = SceneSpec {
            resolution: doc.resolution,
            fps: doc.fps,
            gates: doc.gates,
            designed_paths: doc.designed_paths,
            forbidden_zones: zones,
            signal_lines: doc.signal_lines,
        };
        scene.validate()?;
        Ok(scene)
    }

    fn to_doc(&self) -> SceneDoc {
        SceneDoc {
            resolution: self.resolution,
            fps: self.fps,
            gates: self.gates.clone(),
            designed_paths: self.designed_paths.clone(),
            forbidden_zones: self
                .forbidden_zones
                .iter()
                .map(|z| ZoneDoc {
                    name: z.name.clone(),
                    polygon: z.polygon.closed_ring().iter().map(|p| [p.x, p.y]).collect(),
                })
                .collect(),
            signal_lines: self.signal_lines.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("scene serializes")
    }
}

impl TryFrom<SceneDoc> for SceneSpec {
    type Error = Error;

    fn try_from(doc: SceneDoc) -> Result<Self> {
        SceneSpec::from_doc(doc)
    }
}

impl From<SceneSpec> for SceneDoc {
    fn from(scene: SceneSpec) -> Self {
        scene.to_doc()
    }
}

pub fn parse_scene(text: &str) -> Result<SceneSpec> {
    let doc: SceneDoc = serde_json::from_str(text)?;
    SceneSpec::from_doc(doc)
}

pub fn read_scene(path: &Path) -> Result<SceneSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TimeColumn {
    Frame,
    Seconds,
}

fn parse_resolution_comment(text: &str) -> Result<Resolution> {
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(comment) = line.strip_prefix('#') else {
            break;
        };
        if let Some(value) = comment.trim().strip_prefix("resolution=") {
            let bad = || Error::Validation(format!("bad resolution comment {line:?}"));
            let (w, h) = value.trim().split_once(['x', 'X']).ok_or_else(bad)?;
            let res = Resolution::new(
                w.trim().parse().map_err(|_| bad())?,
                h.trim().parse().map_err(|_| bad())?,
            );
            res.validate()?;
            return Ok(res);
        }
    }
    Err(Error::MissingResolution)
}

fn time_column(header: &csv::StringRecord) -> Result<TimeColumn> {
    let cols: Vec<&str> = header.iter().collect();
    match cols.as_slice() {
        ["traj_id", "frame", "x", "y"] => Ok(TimeColumn::Frame),
        ["traj_id", "t", "x", "y"] => Ok(TimeColumn::Seconds),
        _ if cols.contains(&"frame") && cols.contains(&"t") => {
            Err(Error::MixedTimeColumns(cols.join(",")))
        }
        _ => Err(Error::UnknownHeader(cols.join(","))),
    }
}

/// Parses a trajectory file and expresses it in `scene` coordinates: frame
/// indices become seconds through `scene.fps`, and pixels are rescaled from
/// the file's declared resolution to `scene.resolution`.
pub fn parse_trajectories(text: &str, scene: &SceneSpec) -> Result<TrajectorySet> {
    let source_res = parse_resolution_comment(text)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?.clone();
    let column = time_column(&header)?;

    let mut rows: BTreeMap<u64, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(Error::MalformedRow {
                line,
                message: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let bad = |col: usize| Error::MalformedRow {
            line,
            message: format!("invalid {} value {:?}", &header[col], &record[col]),
        };
        let id: u64 = record[0].parse().map_err(|_| bad(0))?;
        let t = match column {
            TimeColumn::Frame => {
                let frame: u64 = record[1].parse().map_err(|_| bad(1))?;
                frame as f64 / scene.fps
            }
            TimeColumn::Seconds => record[1]
                .parse::<f64>()
                .ok()
                .filter(|t| t.is_finite() && *t >= 0.0)
                .ok_or_else(|| bad(1))?,
        };
        let x = record[2]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad(2))?;
        let y = record[3]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad(3))?;
        rows.entry(id).or_default().push((t, x, y));
    }

    let (fx, fy) = source_res.scale_to(scene.resolution);
    let mut trajectories = Vec::with_capacity(rows.len());
    for (id, mut pts) in rows {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = pts.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateTimestamp { id, t: w[0].0 });
        }
        let points = pts
            .into_iter()
            .map(|(t, x, y)| TrackPoint::new(x * fx, y * fy, t))
            .collect::<Result<Vec<_>>>()?;
        trajectories.push(Trajectory::new(TrajId(id), points)?);
    }
    TrajectorySet::new(trajectories, scene.resolution)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::MalformedRow {
        line,
        message: e.to_string(),
    }
}

pub fn read_trajectories(path: &Path, scene: &SceneSpec) -> Result<TrajectorySet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectories(&text, scene)
}

/// Rescales every coordinate onto `target` with independent x/y factors.
pub fn normalize(set: &TrajectorySet, target: Resolution) -> TrajectorySet {
    let (fx, fy) = set.resolution().scale_to(target);
    let trajectories = set
        .iter()
        .map(|t| t.map_positions(|p| Point::new(p.x * fx, p.y * fy)))
        .collect();
    TrajectorySet::from_parts_unchecked(trajectories, target)
}

/// Writes `set` in the seconds-based trajectory format.
pub fn write_trajectories<W: Write>(set: &TrajectorySet, mut out: W) -> std::io::Result<()> {
    writeln!(out, "#resolution={}", set.resolution())?;
    writeln!(out, "traj_id,t,x,y")?;
    for traj in set.iter() {
        for p in traj.points() {
            writeln!(out, "{},{},{},{}", traj.id(), p.t, p.x, p.y)?;
        }
    }
    Ok(())
}
