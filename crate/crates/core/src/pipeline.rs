//! Whole-scene estimation and evaluation, and the seeded oracle benchmark.

use nalgebra::Point3;
use rayon::prelude::*;
use thiserror::Error;

use crate::index::{build_correspondences, build_index, IndexError, LseIndex, MatchParams};
use crate::lse::LseParams;
use crate::mesh::{model_diameter, sample_surface, MeshError, SurfaceMesh};
use crate::metrics::{add_correct, add_error, adi_error, aggregate, vsd_error, MetricRecord, MetricReport, MetricsError, VsdParams};
use crate::raster::{render, PixelMask, SceneMaps};
use crate::lookup::TriangleLookup;
use crate::robust::{estimate_all, surface_lookup, ModelContext, PoseHypothesis, RansacConfig};
use crate::synth::shapes::benchmark_models;
use crate::synth::{default_camera, random_scene, render_scene, NoiseParams, OracleModel, OracleOptions, SceneData, SynthError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("scene references unknown model {0}")]
    UnknownModel(String),
}

/// A model ready for estimation and evaluation.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub id: String,
    pub mesh: SurfaceMesh,
    pub index: LseIndex,
    pub diameter: f64,
    pub symmetric: bool,
    pub lookup: TriangleLookup,
}

impl PreparedModel {
    pub fn new(id: &str, mesh: SurfaceMesh, index: LseIndex, diameter: f64, symmetric: bool) -> Self {
        let lookup = surface_lookup(&mesh, &index);
        Self {
            id: id.to_string(),
            mesh,
            index,
            diameter,
            symmetric,
            lookup,
        }
    }

    /// Points used by ADD and ADI: the index sample positions.
    pub fn eval_points(&self) -> Vec<Point3<f64>> {
        self.index.entries().iter().map(|e| e.sample.position).collect()
    }
}

pub fn prepare_model(
    id: &str,
    mesh: SurfaceMesh,
    symmetric: bool,
    sample_count: usize,
    params: &LseParams,
    seed: u64,
) -> Result<PreparedModel, PipelineError> {
    let samples = sample_surface(&mesh, sample_count, seed)?;
    let diameter = model_diameter(&samples)?;
    let index = build_index(id, &samples, params)?;
    Ok(PreparedModel::new(id, mesh, index, diameter, symmetric))
}

/// Matches the scene's embedding map against every model and runs
/// mask-constrained RANSAC on each instance mask.
pub fn estimate_scene(
    scene: &SceneData,
    models: &[PreparedModel],
    matching: &MatchParams,
    ransac: &RansacConfig,
) -> Result<Vec<PoseHypothesis>, PipelineError> {
    let masks: Vec<PixelMask> = scene.masks.iter().map(|(_, m)| m.clone()).collect();
    let mut sets = Vec::with_capacity(models.len());
    let mut contexts = Vec::with_capacity(models.len());
    for m in models {
        let set = build_correspondences(&scene.lse, &masks, &m.index, matching)?;
        contexts.push(ModelContext::with_lookup(&m.mesh, &m.index, &m.lookup, &scene.lse)?.with_match_bounds(&set));
        sets.push(set);
    }
    Ok(estimate_all(&scene.masks, &sets, &contexts, &scene.camera, ransac))
}

fn render_alone(model: &PreparedModel, pose: &crate::camera::Pose, scene: &SceneData) -> Result<SceneMaps, PipelineError> {
    let mut maps = SceneMaps::for_camera(&scene.camera);
    render(&model.mesh, pose, &scene.camera, 1, &mut maps).map_err(|e| SynthError::Render(e.to_string()))?;
    Ok(maps)
}

/// One record per ground-truth object. An object counts as detected when a
/// hypothesis exists for its mask (instance `k + 1` for object `k`) with
/// the right model.
pub fn evaluate_scene(
    scene_name: &str,
    scene: &SceneData,
    hypotheses: &[PoseHypothesis],
    models: &[PreparedModel],
    vsd: &VsdParams,
) -> Result<Vec<MetricRecord>, PipelineError> {
    vsd.validate()?;
    let mut records = Vec::with_capacity(scene.gt.len());
    for (k, gt) in scene.gt.iter().enumerate() {
        let instance = k as u32 + 1;
        let model = models
            .iter()
            .find(|m| m.id == gt.model_id)
            .ok_or_else(|| PipelineError::UnknownModel(gt.model_id.clone()))?;
        let gt_pose = gt.pose()?;
        let gt_maps = render_alone(model, &gt_pose, scene)?;
        let mut record = MetricRecord {
            scene: scene_name.to_string(),
            object: instance,
            model_id: gt.model_id.clone(),
            add: None,
            adi: None,
            vsd: None,
            add_correct: false,
            vsd_correct: false,
            visibility: 0.0,
        };
        let hyp = hypotheses
            .iter()
            .find(|h| h.mask_id == instance && h.model_id == gt.model_id);
        match hyp {
            Some(h) => {
                let points = model.eval_points();
                let add = add_error(&points, &gt_pose, &h.pose)?;
                let adi = adi_error(&points, &gt_pose, &h.pose)?;
                let est_maps = render_alone(model, &h.pose, scene)?;
                let (err, visibility) = vsd_error(&gt_maps, &est_maps, &scene.depth, vsd)?;
                record.add = Some(add);
                record.adi = Some(adi);
                record.vsd = Some(err);
                record.add_correct = add_correct(add, adi, model.diameter, model.symmetric);
                record.vsd_correct = err < vsd.threshold;
                record.visibility = visibility;
            }
            None => {
                record.visibility = vsd_error(&gt_maps, &gt_maps, &scene.depth, vsd)?.1;
            }
        }
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub scenes: usize,
    pub objects_per_scene: usize,
    pub noise: NoiseParams,
    pub sample_count: usize,
    pub lse: LseParams,
    pub matching: MatchParams,
    pub ransac: RansacConfig,
    pub vsd: VsdParams,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            scenes: 20,
            objects_per_scene: 3,
            noise: NoiseParams::default(),
            sample_count: 20000,
            lse: LseParams::default(),
            matching: MatchParams::default(),
            ransac: RansacConfig::default(),
            vsd: VsdParams::default(),
            seed: 0,
        }
    }
}

/// The three procedural benchmark models, indexed with `cfg`.
pub fn benchmark_set(cfg: &BenchmarkConfig) -> Result<Vec<PreparedModel>, PipelineError> {
    benchmark_models()
        .into_iter()
        .enumerate()
        .map(|(k, m)| prepare_model(&m.id, m.mesh, m.symmetric, cfg.sample_count, &cfg.lse, cfg.seed.wrapping_add(k as u64)))
        .collect()
}

/// Oracle scene `k` of the benchmark.
pub fn benchmark_scene(models: &[PreparedModel], cfg: &BenchmarkConfig, k: usize) -> Result<SceneData, PipelineError> {
    let ids: Vec<(String, f64)> = models.iter().map(|m| (m.id.clone(), m.diameter)).collect();
    let spec = random_scene(
        &ids,
        cfg.objects_per_scene,
        default_camera(),
        cfg.noise.clone(),
        cfg.lse.unit_scale_to_cm,
        cfg.seed.wrapping_mul(1_000_003).wrapping_add(k as u64),
    );
    let oracle: Vec<OracleModel> = models.iter().map(|m| OracleModel::new(&m.mesh, &m.index)).collect();
    let options = OracleOptions {
        lookup_radius_cm: cfg.matching.suppression_radius_cm,
        exact_lse: false,
    };
    Ok(render_scene(&spec, &oracle, &options)?.to_data())
}

/// Generates, estimates and evaluates every benchmark scene.
pub fn run_benchmark(models: &[PreparedModel], cfg: &BenchmarkConfig) -> Result<MetricReport, PipelineError> {
    let per_scene: Vec<Result<Vec<MetricRecord>, PipelineError>> = (0..cfg.scenes)
        .into_par_iter()
        .map(|k| {
            let scene = benchmark_scene(models, cfg, k)?;
            let hyps = estimate_scene(&scene, models, &cfg.matching, &cfg.ransac)?;
            evaluate_scene(&format!("scene_{k:03}"), &scene, &hyps, models, &cfg.vsd)
        })
        .collect();
    let mut records = Vec::new();
    for r in per_scene {
        records.extend(r?);
    }
    Ok(aggregate(records, cfg.vsd.min_visibility))
}
