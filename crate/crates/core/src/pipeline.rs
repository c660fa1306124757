//! End-to-end orchestration: ingest, filter, endpoint clustering, path
//! clustering and compliance scoring, plus writing every artifact.
//!
//! All pixel-valued parameters in a [`RunConfig`] are stated at 640x360 and
//! rescaled by the mean of the scene's x/y scale factors.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
pub use rayon::ThreadPool;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compliance::{
    classify_cluster, classify_path, designs_for, forbidden_zone_events, mismatch_report,
    ClassificationMode, ClusterAssessment, ComplianceParams, ComplianceReport,
};
use crate::endpoint::{
    apply_directives, assign_gates, build_sd_clusters, dbscan, endpoint_vector,
    write_sd_assignments, ClusterParams, Directives, SdCluster,
};
use crate::error::{Error, Result};
use crate::export;
use crate::geometry::{TrajId, TrajectorySet, REFERENCE_RESOLUTION};
use crate::ingest::{parse_scene, parse_trajectories, SceneSpec, DEFAULT_GATE_SNAP};
use crate::pathcluster::{
    cluster_paths, distance_matrix, write_path_assignments, DistanceMatrix, PathCluster,
    PathClusterParams,
};
use crate::preprocess::{
    filter_broken, resample, write_discards, FilterOutcome, FilterParams, ResampledPath,
    DEFAULT_SAMPLES,
};

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

fn default_snap() -> f64 {
    DEFAULT_GATE_SNAP
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exports {
    #[serde(default = "yes")]
    pub geojson: bool,
    #[serde(default = "yes")]
    pub svg: bool,
    #[serde(default)]
    pub distance_matrices: bool,
}

impl Default for Exports {
    fn default() -> Self {
        Exports {
            geojson: true,
            svg: true,
            distance_matrices: false,
        }
    }
}

/// Everything a run needs. Relative paths are resolved against the
/// directory of the config file they were read from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub trajectories: PathBuf,
    pub scene: PathBuf,
    #[serde(default)]
    pub directives: Option<PathBuf>,
    #[serde(default)]
    pub filter: FilterParams,
    #[serde(default)]
    pub cluster: ClusterParams,
    #[serde(default)]
    pub path_cluster: PathClusterParams,
    #[serde(default)]
    pub compliance: ComplianceParams,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_snap")]
    pub gate_snap: f64,
    #[serde(default)]
    pub exports: Exports,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// SHA-256 of each input file, keyed by `trajectories`, `scene` and
    /// `directives`. Checked before a run when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_checksums: Option<BTreeMap<String, String>>,
}

impl RunConfig {
    pub fn new(trajectories: impl Into<PathBuf>, scene: impl Into<PathBuf>) -> Self {
        RunConfig {
            trajectories: trajectories.into(),
            scene: scene.into(),
            directives: None,
            filter: FilterParams::default(),
            cluster: ClusterParams::default(),
            path_cluster: PathClusterParams::default(),
            compliance: ComplianceParams::default(),
            samples: DEFAULT_SAMPLES,
            gate_snap: DEFAULT_GATE_SNAP,
            exports: Exports::default(),
            out: None,
            input_checksums: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.trajectories);
        resolve(&mut cfg.scene);
        if let Some(d) = cfg.directives.as_mut() {
            resolve(d);
        }
        if let Some(o) = cfg.out.as_mut() {
            resolve(o);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.cluster.validate()?;
        self.path_cluster.validate()?;
        self.compliance.validate()?;
        if self.samples < 2 {
            return Err(Error::Validation(format!(
                "samples must be >= 2, got {}",
                self.samples
            )));
        }
        if !(self.gate_snap.is_finite() && self.gate_snap > 0.0) {
            return Err(Error::Validation("gate_snap must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters after rescaling to the scene resolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EffectiveParams {
    pub scale: f64,
    pub filter: FilterParams,
    pub cluster: ClusterParams,
    pub path_cluster: PathClusterParams,
    pub compliance: ComplianceParams,
    pub samples: usize,
    pub gate_snap: f64,
}

impl EffectiveParams {
    pub fn new(cfg: &RunConfig, scene: &SceneSpec) -> Self {
        let scale = scene.resolution.reference_scale();
        if !scene.resolution.is_isotropic_to(REFERENCE_RESOLUTION) {
            log::warn!(
                "scene resolution {} is not a uniform scaling of {}; pixel thresholds use the mean factor {scale}",
                scene.resolution,
                REFERENCE_RESOLUTION
            );
        }
        EffectiveParams {
            scale,
            filter: cfg.filter.scaled(scale),
            cluster: cfg.cluster.scaled(scale),
            path_cluster: cfg.path_cluster.scaled(cfg.samples, scale),
            compliance: cfg.compliance.scaled(scale),
            samples: cfg.samples,
            gate_snap: cfg.gate_snap * scale,
        }
    }
}

/// Raw input bytes plus their parsed forms.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub scene: SceneSpec,
    pub trajectories: TrajectorySet,
    pub directives: Directives,
    pub checksums: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Inputs {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let scene_text = read_text(&cfg.scene)?;
        let traj_text = read_text(&cfg.trajectories)?;
        let mut checksums = BTreeMap::new();
        checksums.insert("scene".to_string(), sha256_hex(scene_text.as_bytes()));
        checksums.insert("trajectories".to_string(), sha256_hex(traj_text.as_bytes()));
        let directives = match &cfg.directives {
            Some(path) => {
                let text = read_text(path)?;
                checksums.insert("directives".to_string(), sha256_hex(text.as_bytes()));
                Directives::parse(&text)?
            }
            None => Directives::default(),
        };
        if let Some(expected) = &cfg.input_checksums {
            for (name, sum) in expected {
                if checksums.get(name) != Some(sum) {
                    return Err(Error::Validation(format!(
                        "input {name:?} does not match the recorded checksum"
                    )));
                }
            }
        }
        let scene = parse_scene(&scene_text)?;
        scene.validate_with_snap(cfg.gate_snap * scene.resolution.reference_scale())?;
        let trajectories = parse_trajectories(&traj_text, &scene)?;
        Ok(Inputs {
            scene,
            trajectories,
            directives,
            checksums,
        })
    }
}

/// Output of the SD-clustering stage.
#[derive(Clone, Debug)]
pub struct EndpointStage {
    pub filter: FilterOutcome,
    /// Raw DBSCAN labels for every kept trajectory, in kept order.
    pub raw_labels: Vec<(TrajId, Option<usize>)>,
    pub raw_clusters: Vec<SdCluster>,
    pub directive_discards: Vec<(TrajId, usize, String)>,
    /// Clusters after directives, relabelled, with gates assigned.
    pub sd_clusters: Vec<SdCluster>,
}

impl EndpointStage {
    /// Final SD label of every kept trajectory (`None` for noise and
    /// directive discards), in kept order.
    pub fn final_labels(&self) -> Vec<(TrajId, Option<usize>)> {
        let mut label: HashMap<TrajId, usize> = HashMap::new();
        for c in &self.sd_clusters {
            for &id in &c.member_ids {
                label.insert(id, c.label);
            }
        }
        self.filter
            .kept
            .iter()
            .map(|t| (t.id(), label.get(&t.id()).copied()))
            .collect()
    }

    /// Every trajectory that did not reach an SD-cluster, with the reason.
    pub fn all_discards(&self) -> Vec<(TrajId, String)> {
        let mut out: Vec<(TrajId, String)> = self
            .filter
            .discarded
            .iter()
            .map(|(id, r)| (*id, r.to_string()))
            .collect();
        out.extend(
            self.raw_labels
                .iter()
                .filter(|(_, l)| l.is_none())
                .map(|(id, _)| (*id, "dbscan_noise".to_string())),
        );
        out.extend(self.directive_discards.iter().map(|(id, label, reason)| {
            (
                *id,
                format!("directive_discard:{label}:{}", reason.replace(',', ";")),
            )
        }));
        out.sort_by_key(|x| x.0);
        out
    }
}

pub fn cluster_endpoints(inputs: &Inputs, params: &EffectiveParams) -> Result<EndpointStage> {
    let filter = filter_broken(&inputs.trajectories, &params.filter);
    let points: Vec<_> = filter
        .kept
        .iter()
        .map(|t| (t.id(), endpoint_vector(t)))
        .collect();
    let labels = dbscan(&points, &params.cluster);
    let raw_clusters = assign_gates(
        &build_sd_clusters(&points, &labels),
        &inputs.scene,
        params.gate_snap,
    );
    let outcome = apply_directives(&raw_clusters, &inputs.directives)
        .map_err(|e| e.in_stage("directives"))?;
    let sd_clusters = assign_gates(&outcome.clusters, &inputs.scene, params.gate_snap);
    Ok(EndpointStage {
        filter,
        raw_labels: points.iter().map(|p| p.0).zip(labels).collect(),
        raw_clusters,
        directive_discards: outcome.discarded,
        sd_clusters,
    })
}

/// Output of the path-clustering stage.
#[derive(Clone, Debug)]
pub struct PathStage {
    pub resampled: BTreeMap<TrajId, ResampledPath>,
    pub matrices: Vec<(usize, DistanceMatrix)>,
    pub path_clusters: Vec<PathCluster>,
}

pub fn cluster_all_paths(stage: &EndpointStage, params: &EffectiveParams) -> Result<PathStage> {
    let by_id: HashMap<TrajId, &crate::geometry::Trajectory> =
        stage.filter.kept.iter().map(|t| (t.id(), t)).collect();
    let mut resampled = BTreeMap::new();
    let mut matrices = Vec::new();
    let mut path_clusters = Vec::new();
    for sd in &stage.sd_clusters {
        let paths = sd
            .member_ids
            .par_iter()
            .map(|id| resample(by_id[id], params.samples))
            .collect::<Result<Vec<_>>>()?;
        let m = distance_matrix(&paths, params.path_cluster.band)?;
        path_clusters.extend(cluster_paths(&m, &params.path_cluster, sd.label)?);
        matrices.push((sd.label, m));
        resampled.extend(paths.into_iter().map(|p| (p.source_id, p)));
    }
    Ok(PathStage {
        resampled,
        matrices,
        path_clusters,
    })
}

pub fn assess(
    inputs: &Inputs,
    endpoints: &EndpointStage,
    paths: &PathStage,
    params: &EffectiveParams,
) -> Result<(Vec<ClusterAssessment>, ComplianceReport)> {
    let durations: HashMap<TrajId, f64> = endpoints
        .filter
        .kept
        .iter()
        .map(|t| (t.id(), t.duration()))
        .collect();
    let sd_by_label: HashMap<usize, &SdCluster> =
        endpoints.sd_clusters.iter().map(|c| (c.label, c)).collect();
    let cp = &params.compliance;
    let assessments: Vec<ClusterAssessment> = paths
        .path_clusters
        .par_iter()
        .map(|pc| {
            let designs = designs_for(&inputs.scene, sd_by_label[&pc.sd_label]);
            let verdict = classify_cluster(&paths.resampled[&pc.medoid_id].samples, &designs, cp);
            let member_compliant = match cp.mode {
                ClassificationMode::Medoid => vec![verdict.compliant; pc.len()],
                ClassificationMode::PerTrajectory => pc
                    .member_ids
                    .iter()
                    .map(|id| classify_path(&paths.resampled[id].samples, &designs, cp).compliant)
                    .collect(),
            };
            ClusterAssessment {
                member_durations: pc.member_ids.iter().map(|id| durations[id]).collect(),
                cluster: pc.clone(),
                verdict,
                member_compliant,
            }
        })
        .collect();

    let clustered: Vec<_> = endpoints
        .sd_clusters
        .iter()
        .flat_map(|c| c.member_ids.iter().copied())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let clustered_set = TrajectorySet::from_parts_unchecked(
        endpoints
            .filter
            .kept
            .iter()
            .filter(|t| clustered.binary_search(&t.id()).is_ok())
            .cloned()
            .collect(),
        endpoints.filter.kept.resolution(),
    );
    let events = forbidden_zone_events(&clustered_set, &inputs.scene.forbidden_zones, cp);
    let report = mismatch_report(&endpoints.sd_clusters, &assessments, events, cp.mode)?;
    Ok((assessments, report))
}

/// How far to run the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Endpoints,
    Paths,
    Report,
    Full,
}

/// Everything a run computed.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub inputs: Inputs,
    pub params: EffectiveParams,
    pub endpoints: EndpointStage,
    pub paths: Option<PathStage>,
    pub assessments: Vec<ClusterAssessment>,
    pub report: Option<ComplianceReport>,
    pub manifest: RunConfig,
}

/// Runs the pipeline up to `stage` on a pool of `threads` workers (the
/// global pool when `None`). Results do not depend on the thread count.
pub fn run(cfg: &RunConfig, stage: Stage, threads: Option<usize>) -> Result<RunOutcome> {
    match threads {
        Some(n) => thread_pool(n)?.install(|| run_stages(cfg, stage)),
        None => run_stages(cfg, stage),
    }
}

/// A dedicated pool of `n` workers (at least one).
pub fn thread_pool(n: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .map_err(|e| Error::Validation(format!("cannot start {n} worker threads: {e}")))
}

fn run_stages(cfg: &RunConfig, stage: Stage) -> Result<RunOutcome> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let inputs = Inputs::load(cfg).map_err(|e| e.in_stage("ingest"))?;
    let params = EffectiveParams::new(cfg, &inputs.scene);
    let endpoints =
        cluster_endpoints(&inputs, &params).map_err(|e| e.in_stage("endpoint clustering"))?;
    let mut manifest = cfg.clone();
    manifest.out = None;
    manifest.input_checksums = Some(inputs.checksums.clone());

    let mut outcome = RunOutcome {
        inputs,
        params,
        endpoints,
        paths: None,
        assessments: Vec::new(),
        report: None,
        manifest,
    };
    if stage == Stage::Endpoints {
        return Ok(outcome);
    }
    let paths = cluster_all_paths(&outcome.endpoints, &outcome.params)
        .map_err(|e| e.in_stage("path clustering"))?;
    if stage >= Stage::Report {
        let (assessments, report) =
            assess(&outcome.inputs, &outcome.endpoints, &paths, &outcome.params)
                .map_err(|e| e.in_stage("compliance"))?;
        outcome.assessments = assessments;
        outcome.report = Some(report);
    }
    outcome.paths = Some(paths);
    Ok(outcome)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_with<F>(path: &Path, f: F) -> Result<PathBuf>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value)?;
    write_with(path, |w| writeln!(w, "{text}"))
}

impl RunOutcome {
    /// Writes every artifact the run produced into `dir` and returns the
    /// files written, in a fixed order.
    pub fn write_artifacts(&self, dir: &Path, stage: Stage) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        let ep = &self.endpoints;

        files.push(write_with(&dir.join("discards.csv"), |w| {
            write_discards(&ep.all_discards(), w)
        })?);
        files.push(write_with(&dir.join("sd_assignments_raw.csv"), |w| {
            write_sd_assignments(&ep.raw_labels, w)
        })?);
        files.push(write_json(
            &dir.join("sd_clusters_raw.json"),
            &ep.raw_clusters,
        )?);
        files.push(write_with(&dir.join("sd_assignments.csv"), |w| {
            write_sd_assignments(&ep.final_labels(), w)
        })?);
        files.push(write_json(&dir.join("sd_clusters.json"), &ep.sd_clusters)?);

        if let Some(paths) = &self.paths {
            files.push(write_with(&dir.join("path_assignments.csv"), |w| {
                write_path_assignments(&paths.path_clusters, w)
            })?);
            if self.manifest.exports.distance_matrices {
                let sub = dir.join("distances");
                fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
                for (label, m) in &paths.matrices {
                    files.push(write_with(&sub.join(format!("sd_{label}.txt")), |w| {
                        m.write_dense(w)
                    })?);
                }
            }
        }

        if let (Some(report), Some(paths)) = (&self.report, &self.paths) {
            files.push(write_json(&dir.join("report.json"), report)?);
            files.push(write_with(&dir.join("report.txt"), |w| {
                w.write_all(report.to_table().as_bytes())
            })?);
            files.push(write_with(&dir.join("trajectories_detail.csv"), |w| {
                export::write_detail(&self.assessments, w)
            })?);
            if stage == Stage::Full {
                if self.manifest.exports.geojson {
                    let doc = export::geojson(&self.inputs.scene, report, &paths.resampled);
                    files.push(write_json(&dir.join("overlay.geojson"), &doc)?);
                }
                if self.manifest.exports.svg {
                    let sub = dir.join("figures");
                    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
                    for fig in export::svg_figures(
                        &self.inputs.scene,
                        &ep.sd_clusters,
                        &paths.path_clusters,
                        &ep.filter.kept,
                    ) {
                        files.push(write_with(&sub.join(&fig.file_name), |w| {
                            w.write_all(fig.svg.as_bytes())
                        })?);
                    }
                }
            }
        }
        files.push(write_json(&dir.join("manifest.json"), &self.manifest)?);
        Ok(files)
    }
}

/// Runs the full pipeline and writes its artifacts to `out`.
pub fn run_pipeline(cfg: &RunConfig, out: &Path, threads: Option<usize>) -> Result<RunOutcome> {
    let outcome = run(cfg, Stage::Full, threads)?;
    outcome
        .write_artifacts(out, Stage::Full)
        .map_err(|e| e.in_stage("export"))?;
    Ok(outcome)
}
