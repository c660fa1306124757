//! Static artifacts derived from a finished run: a pixel-space GeoJSON
//! overlay, per-SD-cluster SVG figures and the per-trajectory detail table.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write;

use serde_json::{json, Value};

use crate::compliance::{ClusterAssessment, ComplianceReport};
use crate::endpoint::SdCluster;
use crate::geometry::{Point, TrajId, TrajectorySet};
use crate::ingest::SceneSpec;
use crate::pathcluster::PathCluster;
use crate::preprocess::ResampledPath;

/// Categorical palette indexed by `path_index - 1`, cycling past its end.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

pub fn palette_color(path_index: usize) -> &'static str {
    PALETTE[path_index.saturating_sub(1) % PALETTE.len()]
}

const DESIGN_COLOR: &str = "#000000";
const ZONE_COLOR: &str = "#d62728";

/// `traj_id,sd_label,path_index,compliant,duration_s`, sorted by id.
pub fn write_detail<W: Write>(
    assessments: &[ClusterAssessment],
    mut out: W,
) -> std::io::Result<()> {
    let mut rows: Vec<(TrajId, usize, usize, bool, f64)> = assessments
        .iter()
        .flat_map(|a| {
            a.cluster
                .member_ids
                .iter()
                .zip(&a.member_compliant)
                .zip(&a.member_durations)
                .map(move |((id, c), d)| (*id, a.cluster.sd_label, a.cluster.index, *c, *d))
        })
        .collect();
    rows.sort_by_key(|r| r.0);
    writeln!(out, "traj_id,sd_label,path_index,compliant,duration_s")?;
    for (id, sd, idx, c, d) in rows {
        writeln!(out, "{id},{sd},{idx},{c},{d:.6}")?;
    }
    Ok(())
}

fn coords(points: &[Point]) -> Value {
    Value::Array(points.iter().map(|p| json!([p.x, p.y])).collect())
}

/// FeatureCollection in image pixel coordinates (origin top-left, y down).
/// Holds one LineString per path-cluster medoid, every designed path and
/// every forbidden zone.
pub fn geojson(
    scene: &SceneSpec,
    report: &ComplianceReport,
    resampled: &BTreeMap<TrajId, ResampledPath>,
) -> Value {
    let mut features = Vec::new();
    for (i, d) in scene.designed_paths.iter().enumerate() {
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": coords(d.polyline.vertices())},
            "properties": {
                "kind": "designed_path",
                "design_index": i,
                "source": d.source,
                "destination": d.destination,
                "required_stops": d.required_stops,
                "stroke": DESIGN_COLOR,
            },
        }));
    }
    for z in &scene.forbidden_zones {
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [coords(&z.polygon.closed_ring())]},
            "properties": {"kind": "forbidden_zone", "name": z.name, "fill": ZONE_COLOR},
        }));
    }
    for pc in &report.path_clusters {
        let Some(path) = resampled.get(&pc.medoid_id) else {
            continue;
        };
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": coords(&path.samples)},
            "properties": {
                "kind": "path_cluster_medoid",
                "sd_label": pc.sd_label,
                "path_index": pc.path_index,
                "name": pc.name,
                "size": pc.size,
                "compliant": pc.compliant,
                "medoid_id": pc.medoid_id,
                "stroke": palette_color(pc.path_index),
            },
        }));
    }
    json!({
        "type": "FeatureCollection",
        "crs_note": format!(
            "image pixel coordinates at {}, origin top-left, y pointing down; not geographic",
            scene.resolution
        ),
        "transform": Value::Null,
        "features": features,
    })
}

/// A rendered figure and the file name it should be saved under.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Figure {
    pub file_name: String,
    pub svg: String,
}

fn fmt_points(points: impl Iterator<Item = Point>) -> String {
    let mut s = String::new();
    for (i, p) in points.enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{:.2},{:.2}", p.x, p.y);
    }
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn svg_open(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n"
    )
}

/// Trajectory plot of one SD-cluster: exactly one `<polyline>` per member,
/// coloured by path-cluster index, with designed paths drawn as `<path>`
/// and forbidden zones as `<polygon>`.
pub fn sd_cluster_svg(
    scene: &SceneSpec,
    sd: &SdCluster,
    path_clusters: &[PathCluster],
    set: &TrajectorySet,
) -> String {
    let (w, h) = (
        scene.resolution.width as f64,
        scene.resolution.height as f64,
    );
    let mut s = svg_open(w, h);
    for z in &scene.forbidden_zones {
        let _ = writeln!(
            s,
            "<polygon class=\"zone\" points=\"{}\" fill=\"{ZONE_COLOR}\" fill-opacity=\"0.15\" stroke=\"{ZONE_COLOR}\"/>",
            fmt_points(z.polygon.vertices().iter().copied())
        );
    }
    let index_of: HashMap<TrajId, usize> = path_clusters
        .iter()
        .filter(|pc| pc.sd_label == sd.label)
        .flat_map(|pc| pc.member_ids.iter().map(move |id| (*id, pc.index)))
        .collect();
    for id in &sd.member_ids {
        let Some(t) = set.get(*id) else { continue };
        let color = index_of.get(id).map_or("#999999", |&i| palette_color(i));
        let _ = writeln!(
            s,
            "<polyline class=\"traj\" data-id=\"{id}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1\" stroke-opacity=\"0.6\"/>",
            fmt_points(t.positions())
        );
    }
    if let Some((src, dst)) = sd.gate_pair() {
        for (_, d) in scene.paths_between(src, dst) {
            let v = d.polyline.vertices();
            let mut path = format!("M {:.2} {:.2}", v[0].x, v[0].y);
            for p in &v[1..] {
                let _ = write!(path, " L {:.2} {:.2}", p.x, p.y);
            }
            let _ = writeln!(
                s,
                "<path class=\"design\" d=\"{path}\" fill=\"none\" stroke=\"{DESIGN_COLOR}\" stroke-width=\"3\" stroke-dasharray=\"8 4\"/>"
            );
        }
    }
    let _ = writeln!(
        s,
        "<text x=\"8\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">{}</text>",
        escape(&sd.name())
    );
    s.push_str("</svg>\n");
    s
}

/// Histogram of member durations for one SD pair, stacked by path-cluster.
pub fn duration_histogram_svg(
    sd: &SdCluster,
    path_clusters: &[PathCluster],
    set: &TrajectorySet,
) -> String {
    const W: f64 = 480.0;
    const H: f64 = 240.0;
    const PAD: f64 = 30.0;
    const BINS: usize = 20;

    let series: Vec<(usize, Vec<f64>)> = path_clusters
        .iter()
        .filter(|pc| pc.sd_label == sd.label)
        .map(|pc| {
            let d = pc
                .member_ids
                .iter()
                .filter_map(|id| set.get(*id))
                .map(|t| t.duration())
                .collect();
            (pc.index, d)
        })
        .collect();
    let all: Vec<f64> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
    let mut s = svg_open(W, H);
    let _ = writeln!(
        s,
        "<text x=\"8\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">{} duration (s)</text>",
        escape(&sd.name())
    );
    if all.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / BINS as f64
    } else {
        1.0
    };
    let bin = |d: f64| (((d - lo) / width) as usize).min(BINS - 1);
    let mut totals = [0usize; BINS];
    for &d in &all {
        totals[bin(d)] += 1;
    }
    let peak = *totals.iter().max().unwrap_or(&1) as f64;
    let bar_w = (W - 2.0 * PAD) / BINS as f64;
    let unit = (H - 2.0 * PAD) / peak;
    let mut stacked = [0usize; BINS];
    for (index, durations) in &series {
        let mut counts = [0usize; BINS];
        for &d in durations {
            counts[bin(d)] += 1;
        }
        for b in 0..BINS {
            if counts[b] == 0 {
                continue;
            }
            let x = PAD + b as f64 * bar_w;
            let y = H - PAD - (stacked[b] + counts[b]) as f64 * unit;
            let _ = writeln!(
                s,
                "<rect class=\"bar\" x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bw:.2}\" height=\"{bh:.2}\" fill=\"{}\"/>",
                palette_color(*index),
                bw = bar_w,
                bh = counts[b] as f64 * unit,
            );
            stacked[b] += counts[b];
        }
    }
    let _ = writeln!(
        s,
        "<line x1=\"{PAD}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"#000000\"/>",
        y = H - PAD,
        x2 = W - PAD
    );
    let _ = writeln!(
        s,
        "<text x=\"{PAD}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"11\">{lo:.1}</text>\n\
         <text x=\"{tx}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{hi:.1}</text>",
        ty = H - PAD + 14.0,
        tx = W - PAD
    );
    s.push_str("</svg>\n");
    s
}

/// Both figures for every SD-cluster, in label order.
pub fn svg_figures(
    scene: &SceneSpec,
    sd_clusters: &[SdCluster],
    path_clusters: &[PathCluster],
    set: &TrajectorySet,
) -> Vec<Figure> {
    let mut out = Vec::new();
    for sd in sd_clusters {
        out.push(Figure {
            file_name: format!("sd_{}.svg", sd.label),
            svg: sd_cluster_svg(scene, sd, path_clusters, set),
        });
        out.push(Figure {
            file_name: format!("durations_sd_{}.svg", sd.label),
            svg: duration_histogram_svg(sd, path_clusters, set),
        });
    }
    out
}
