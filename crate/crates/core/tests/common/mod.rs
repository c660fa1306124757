//! Independent reference implementations and fixtures shared by the
//! integration tests. Each oracle is deliberately naive.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use desirelines::endpoint::EndpointVector;
use desirelines::ingest::{parse_scene, write_trajectories, SceneSpec};
use desirelines::pipeline::RunConfig;
use desirelines::synth::{generate, Bundle, GroundTruth, Route, SynthSpec};
use desirelines::{Point, TrajId, TrajectorySet};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Top-down DTW with a memo table, following the textbook recurrence.
pub fn dtw_oracle(a: &[Point], b: &[Point]) -> f64 {
    fn go(
        i: usize,
        j: usize,
        a: &[Point],
        b: &[Point],
        memo: &mut HashMap<(usize, usize), f64>,
    ) -> f64 {
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let cost = ((a[i].x - b[j].x).powi(2) + (a[i].y - b[j].y).powi(2)).sqrt();
        let v = match (i, j) {
            (0, 0) => cost,
            (0, _) => cost + go(0, j - 1, a, b, memo),
            (_, 0) => cost + go(i - 1, 0, a, b, memo),
            _ => {
                let best = go(i - 1, j, a, b, memo)
                    .min(go(i, j - 1, a, b, memo))
                    .min(go(i - 1, j - 1, a, b, memo));
                cost + best
            }
        };
        memo.insert((i, j), v);
        v
    }
    go(a.len() - 1, b.len() - 1, a, b, &mut HashMap::new())
}

fn dist4(p: &EndpointVector, q: &EndpointVector) -> f64 {
    let d = [p.sx - q.sx, p.sy - q.sy, p.dx - q.dx, p.dy - q.dy];
    d.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// All-pairs DBSCAN: cores by neighbour count, clusters by flood fill over
/// core-core edges, border points to the nearest core (smallest id on
/// ties). Returns the partition as sorted member-id sets plus the noise set.
pub fn dbscan_oracle(
    points: &[(TrajId, EndpointVector)],
    eps: f64,
    min_pts: usize,
) -> (BTreeSet<Vec<TrajId>>, Vec<TrajId>) {
    let n = points.len();
    let d: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dist4(&points[i].1, &points[j].1)).collect())
        .collect();
    let core: Vec<bool> = (0..n)
        .map(|i| d[i].iter().filter(|&&x| x <= eps).count() >= min_pts)
        .collect();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if core[v] && comp[v] == usize::MAX && d[u][v] <= eps {
                    comp[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    let mut noise = Vec::new();
    for i in 0..n {
        if core[i] {
            continue;
        }
        let nearest = (0..n)
            .filter(|&j| core[j] && d[i][j] <= eps)
            .min_by(|&a, &b| {
                d[i][a]
                    .total_cmp(&d[i][b])
                    .then(points[a].0.cmp(&points[b].0))
            });
        match nearest {
            Some(j) => comp[i] = comp[j],
            None => noise.push(points[i].0),
        }
    }
    let mut groups: HashMap<usize, Vec<TrajId>> = HashMap::new();
    for i in 0..n {
        if comp[i] != usize::MAX {
            groups.entry(comp[i]).or_default().push(points[i].0);
        }
    }
    let partition = groups
        .into_values()
        .map(|mut g| {
            g.sort();
            g
        })
        .collect();
    noise.sort();
    (partition, noise)
}

/// Member with the smallest summed distance, by exhaustive summation.
pub fn medoid_oracle(ids: &[TrajId], dist: impl Fn(usize, usize) -> f64) -> TrajId {
    let mut best: Option<(f64, TrajId)> = None;
    for i in 0..ids.len() {
        let total: f64 = (0..ids.len()).map(|j| dist(i, j)).sum();
        let better = match best {
            None => true,
            Some((b, id)) => total < b || (total == b && ids[i] < id),
        };
        if better {
            best = Some((total, ids[i]));
        }
    }
    best.unwrap().1
}

pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn int(&mut self, lo: u64, hi_inclusive: u64) -> u64 {
        lo + self.0.next_u64() % (hi_inclusive - lo + 1)
    }
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Three designs on a 640x360 scene: a straight W->E, a straight N->S and
/// a dog-leg S->N whose endpoints a straight shortcut shares.
pub fn three_design_scene() -> SceneSpec {
    parse_scene(
        r#"{"resolution": [640, 360], "fps": 15,
            "gates": [
              {"name": "W_in", "x": 20, "y": 180, "kind": "entry"},
              {"name": "E_out", "x": 620, "y": 180, "kind": "exit"},
              {"name": "N_in", "x": 320, "y": 20, "kind": "entry"},
              {"name": "S_out", "x": 320, "y": 340, "kind": "exit"},
              {"name": "S_in", "x": 480, "y": 340, "kind": "entry"},
              {"name": "N_out", "x": 480, "y": 20, "kind": "exit"}],
            "designed_paths": [
              {"source": "W_in", "destination": "E_out", "polyline": [[20, 180], [620, 180]]},
              {"source": "N_in", "destination": "S_out", "polyline": [[320, 20], [320, 340]]},
              {"source": "S_in", "destination": "N_out", "polyline": [[480, 340], [480, 250], [560, 250], [560, 100], [480, 100], [480, 20]], "required_stops": 1}],
            "forbidden_zones": [
              {"name": "island", "polygon": [[460, 115], [500, 115], [500, 160], [460, 160], [460, 115]]}]}"#,
    )
    .unwrap()
}

pub fn shortcut() -> Route {
    Route::Free(vec![[480.0, 340.0], [480.0, 20.0]].try_into().unwrap())
}

pub fn bundle(route: Route, count: usize, sigma: f64) -> Bundle {
    Bundle {
        route,
        count,
        sigma,
        speed: 60.0,
        dwell: None,
    }
}

/// 90 trajectories on each design plus 30 on the shortcut.
pub fn recovery_spec(sigma: f64, seed: u64) -> SynthSpec {
    SynthSpec {
        scene: three_design_scene(),
        bundles: vec![
            bundle(Route::Designed(0), 90, sigma),
            bundle(Route::Designed(1), 90, sigma),
            bundle(Route::Designed(2), 90, sigma),
            bundle(shortcut(), 30, sigma),
        ],
        seed,
    }
}

/// Writes the scene and trajectories into `dir` and returns a default
/// config pointing at them.
pub fn write_inputs(dir: &Path, scene: &SceneSpec, set: &TrajectorySet) -> RunConfig {
    fs::create_dir_all(dir).unwrap();
    let scene_path = dir.join("scene.json");
    let traj_path = dir.join("trajectories.csv");
    fs::write(&scene_path, scene.to_json()).unwrap();
    let mut buf = Vec::new();
    write_trajectories(set, &mut buf).unwrap();
    fs::write(&traj_path, buf).unwrap();
    RunConfig::new(traj_path, scene_path)
}

pub fn synth_inputs(dir: &Path, spec: &SynthSpec) -> (RunConfig, Vec<GroundTruth>) {
    let (set, truth) = generate(spec).unwrap();
    (write_inputs(dir, &spec.scene, &set), truth)
}

/// Every file under `dir`, keyed by relative path.
pub fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push((
                    p.strip_prefix(base).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}

/// Sequence of 1-20 points in [0,100]^2, integer-valued when `integer`.
pub fn random_sequence(rng: &mut Rng, integer: bool) -> Vec<Point> {
    let n = rng.int(1, 20) as usize;
    (0..n)
        .map(|_| {
            let (x, y) = (rng.range(0.0, 100.0), rng.range(0.0, 100.0));
            if integer {
                Point {
                    x: x.round(),
                    y: y.round(),
                }
            } else {
                Point { x, y }
            }
        })
        .collect()
}

/// Up to 200 4-D points gathered around a few random centres plus uniform
/// background, with shuffled ids, a random eps in [1,50] and min_pts in
/// [2,30]. Integer instances make distance ties common.
pub fn random_dbscan_instance(
    rng: &mut Rng,
    integer: bool,
) -> (Vec<(TrajId, EndpointVector)>, f64, usize) {
    let n = rng.int(1, 200) as usize;
    let centres: Vec<[f64; 4]> = (0..rng.int(1, 6))
        .map(|_| [0; 4].map(|_| rng.range(0.0, 200.0)))
        .collect();
    let spread = rng.range(1.0, 30.0);
    let mut ids: Vec<u64> = (1..=n as u64).map(|i| i * 7 + rng.int(0, 6)).collect();
    for i in (1..ids.len()).rev() {
        let j = rng.int(0, i as u64) as usize;
        ids.swap(i, j);
    }
    let points = ids
        .into_iter()
        .map(|id| {
            let v = if rng.unit() < 0.15 {
                [0; 4].map(|_| rng.range(0.0, 200.0))
            } else {
                let c = centres[rng.int(0, centres.len() as u64 - 1) as usize];
                c.map(|x| x + rng.range(-spread, spread))
            };
            let v = if integer { v.map(f64::round) } else { v };
            (
                TrajId(id),
                EndpointVector {
                    sx: v[0],
                    sy: v[1],
                    dx: v[2],
                    dy: v[3],
                },
            )
        })
        .collect();
    let eps = rng.range(1.0, 50.0);
    let eps = if integer { eps.round() } else { eps };
    (points, eps, rng.int(2, 30) as usize)
}

/// Partition implied by per-point labels, in the oracle's format.
pub fn partition_of(
    points: &[(TrajId, EndpointVector)],
    labels: &[Option<usize>],
) -> (BTreeSet<Vec<TrajId>>, Vec<TrajId>) {
    let mut groups: HashMap<usize, Vec<TrajId>> = HashMap::new();
    let mut noise = Vec::new();
    for (p, l) in points.iter().zip(labels) {
        match l {
            Some(l) => groups.entry(*l).or_default().push(p.0),
            None => noise.push(p.0),
        }
    }
    noise.sort();
    let partition = groups
        .into_values()
        .map(|mut g| {
            g.sort();
            g
        })
        .collect();
    (partition, noise)
}
