//! `lsepose` command-line driver.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::info;
use lsepose::mesh::point_diameter;
use lsepose::pipeline::{
    benchmark_scene, benchmark_set, estimate_scene, evaluate_scene, prepare_model, BenchmarkConfig, PipelineError,
    PreparedModel,
};
use lsepose::robust::{HypothesisFile, PoseHypothesis};
use lsepose::synth::shapes::benchmark_models;
use lsepose::synth::{
    default_camera, random_scene, read_scene, render_scene, write_scene, NoiseParams, OracleModel, OracleOptions,
    SceneSpec,
};
use lsepose::{aggregate, build_index, load_mesh, sample_surface, LseIndex, MeshFormat, MetricReport};
use serde::Serialize;

use config::PipelineConfig;

const ERROR_FORMAT_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "lsepose", version, about = "Pose estimation from local surface embeddings")]
struct Cli {
    /// Pipeline configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the full default configuration.
    DefaultConfig,
    /// Sample every configured model and write its embedding index.
    Embed,
    /// Render an oracle scene directory.
    Synth {
        /// Scene description (JSON); omit to place objects at random.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Number of objects for a random scene.
        #[arg(long, default_value_t = 3)]
        objects: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate poses for every mask of a scene directory.
    Estimate {
        #[arg(long)]
        scene: PathBuf,
        /// Hypotheses file; defaults to `<output_dir>/hypotheses.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score hypotheses against a scene's ground truth.
    Evaluate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        hypotheses: PathBuf,
        /// Report directory; defaults to the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the seeded synthetic benchmark on the built-in models.
    Bench {
        #[arg(long, default_value_t = 20)]
        scenes: usize,
    },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Data(String),
    NoDetection,
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::NoDetection => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::NoDetection => "no_detection",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(m) | CliError::Data(m) => m.clone(),
            CliError::NoDetection => "no mask produced a detection".into(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    format_version: u32,
    kind: &'a str,
    message: String,
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(data_err)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(data_err)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(CliError::Config)?,
        None => PipelineConfig::default(),
    };
    cfg.finish(cli.seed).map_err(CliError::Config)
}

fn mesh_format(path: &Path) -> Result<MeshFormat, CliError> {
    MeshFormat::from_path(path).ok_or_else(|| CliError::Config(format!("{}: unknown mesh format", path.display())))
}

/// Loads every configured mesh with its stored index.
fn load_models(cfg: &PipelineConfig) -> Result<Vec<PreparedModel>, CliError> {
    cfg.check_models().map_err(CliError::Config)?;
    let mut out = Vec::with_capacity(cfg.models.len());
    for m in &cfg.models {
        let mesh = load_mesh(&m.path, mesh_format(&m.path)?).map_err(data_err)?;
        let path = cfg.index_path(&m.id);
        let index = LseIndex::read(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if index.model_id() != m.id {
            return Err(CliError::Data(format!("{} holds model {}", path.display(), index.model_id())));
        }
        if index.params() != &cfg.lse {
            return Err(CliError::Config(format!("{} was built with different embedding parameters", path.display())));
        }
        let points: Vec<_> = index.entries().iter().map(|e| e.sample.position).collect();
        let diameter = point_diameter(&points).map_err(data_err)?;
        out.push(PreparedModel::new(&m.id, mesh, index, diameter, m.symmetric));
    }
    Ok(out)
}

fn cmd_embed(cfg: &PipelineConfig) -> Result<(), CliError> {
    cfg.check_models().map_err(CliError::Config)?;
    std::fs::create_dir_all(&cfg.index_dir).map_err(data_err)?;
    for (k, m) in cfg.models.iter().enumerate() {
        let mesh = load_mesh(&m.path, mesh_format(&m.path)?).map_err(data_err)?;
        let samples = sample_surface(&mesh, cfg.sample_count, cfg.seed.wrapping_add(k as u64)).map_err(data_err)?;
        let start = Instant::now();
        let index = build_index(&m.id, &samples, &cfg.lse).map_err(data_err)?;
        let path = cfg.index_path(&m.id);
        index.write(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let degenerate = 1.0 - index.len() as f64 / samples.len() as f64;
        println!(
            "{}: {} entries, degenerate fraction {:.4}, unstable fraction {:.4} ({:.1?})",
            m.id,
            index.len(),
            degenerate,
            index.unstable_fraction(),
            start.elapsed()
        );
    }
    Ok(())
}

fn cmd_synth(cfg: &PipelineConfig, spec: Option<&Path>, objects: usize, out: &Path) -> Result<(), CliError> {
    let models = load_models(cfg)?;
    let spec: SceneSpec = match spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => {
            let ids: Vec<(String, f64)> = models.iter().map(|m| (m.id.clone(), m.diameter)).collect();
            random_scene(&ids, objects, default_camera(), NoiseParams::default(), cfg.unit_scale_to_cm, cfg.seed)
        }
    };
    let oracle: Vec<OracleModel> = models.iter().map(|m| OracleModel::new(&m.mesh, &m.index)).collect();
    let options = OracleOptions {
        lookup_radius_cm: cfg.matching.suppression_radius_cm,
        exact_lse: false,
    };
    let scene = render_scene(&spec, &oracle, &options).map_err(data_err)?;
    write_scene(out, &scene.to_data()).map_err(data_err)?;
    println!("wrote {} objects to {}", spec.objects.len(), out.display());
    Ok(())
}

fn cmd_estimate(cfg: &PipelineConfig, scene_dir: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let models = load_models(cfg)?;
    let scene = read_scene(scene_dir).map_err(data_err)?;
    let start = Instant::now();
    let hyps = estimate_scene(&scene, &models, &cfg.matching, &cfg.ransac)?;
    info!("estimated {} masks in {:.2?}", scene.masks.len(), start.elapsed());
    let path = out.map_or_else(|| cfg.output_dir.join("hypotheses.json"), Path::to_path_buf);
    write_json(&path, &HypothesisFile::new(&hyps))?;
    for h in &hyps {
        println!("mask {}: {} score {:.4} inliers {}", h.mask_id, h.model_id, h.score, h.inliers.len());
    }
    if hyps.is_empty() {
        return Err(CliError::NoDetection);
    }
    Ok(())
}

fn read_hypotheses(path: &Path) -> Result<Vec<PoseHypothesis>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let file: HypothesisFile = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if file.format_version != lsepose::robust::HYPOTHESES_FORMAT_VERSION {
        return Err(CliError::Data(format!("{}: unsupported format version {}", path.display(), file.format_version)));
    }
    file.hypotheses
        .iter()
        .map(|r| {
            Ok(PoseHypothesis {
                model_id: r.model_id.clone(),
                mask_id: r.mask_id,
                pose: r.pose().map_err(data_err)?,
                score: r.score,
                inliers: Vec::new(),
            })
        })
        .collect()
}

fn cmd_evaluate(cfg: &PipelineConfig, scene_dir: &Path, hyp_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let models = load_models(cfg)?;
    let scene = read_scene(scene_dir).map_err(data_err)?;
    let hyps = read_hypotheses(hyp_path)?;
    let name = scene_dir.file_name().map_or_else(|| "scene".to_string(), |n| n.to_string_lossy().into_owned());
    let records = evaluate_scene(&name, &scene, &hyps, &models, &cfg.vsd)?;
    let report = aggregate(records, cfg.vsd.min_visibility);
    let dir = out.unwrap_or(&cfg.output_dir);
    write_json(&dir.join("metrics.json"), &report)?;
    std::fs::write(dir.join("metrics.csv"), report.to_csv()).map_err(data_err)?;
    println!(
        "{} objects evaluated: ADD(-I) recall {:.3}, VSD recall {:.3}",
        report.evaluated, report.add_recall, report.vsd_recall
    );
    Ok(())
}

#[derive(Serialize)]
struct BenchSummary {
    format_version: u32,
    zero_noise: MetricReport,
    noisy: MetricReport,
    index_build_seconds: f64,
    five_instance_estimate_seconds: f64,
    benchmark_seconds: f64,
}

fn cmd_bench(cfg: &PipelineConfig, scenes: usize) -> Result<(), CliError> {
    let mut bench = BenchmarkConfig {
        scenes,
        sample_count: cfg.sample_count,
        lse: cfg.lse.clone(),
        matching: cfg.matching.clone(),
        ransac: cfg.ransac.clone(),
        vsd: cfg.vsd.clone(),
        seed: cfg.seed,
        ..BenchmarkConfig::default()
    };
    let start = Instant::now();
    let first = benchmark_models().remove(0);
    let t = Instant::now();
    prepare_model(&first.id, first.mesh, first.symmetric, cfg.sample_count, &cfg.lse, cfg.seed)?;
    let index_secs = t.elapsed().as_secs_f64();
    let models = benchmark_set(&bench)?;

    let zero = lsepose::pipeline::run_benchmark(&models, &bench)?;
    bench.noise = NoiseParams {
        lse_sd: 0.25,
        mask_morph: 0,
        dropout: 0.2,
    };
    let noisy = lsepose::pipeline::run_benchmark(&models, &bench)?;
    let bench_secs = start.elapsed().as_secs_f64();

    bench.noise = NoiseParams::default();
    bench.objects_per_scene = 5;
    let scene = benchmark_scene(&models, &bench, 0)?;
    let t = Instant::now();
    estimate_scene(&scene, &models, &bench.matching, &bench.ransac)?;
    let five_secs = t.elapsed().as_secs_f64();

    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    println!(
        "zero noise: ADD(-I) {:.3} VSD {:.3} over {} objects [{}]",
        zero.add_recall,
        zero.vsd_recall,
        zero.evaluated,
        verdict(zero.add_recall >= 0.9 && zero.vsd_recall >= 0.9)
    );
    println!(
        "noise sd 0.25, 20% dropout: ADD(-I) {:.3} VSD {:.3} over {} objects [{}]",
        noisy.add_recall,
        noisy.vsd_recall,
        noisy.evaluated,
        verdict(noisy.add_recall >= 0.7 && noisy.vsd_recall >= 0.7)
    );
    println!("benchmark wall time {bench_secs:.1} s on {} threads", rayon::current_num_threads());
    println!("index build ({} samples) {index_secs:.2} s [{}]", cfg.sample_count, verdict(index_secs < 30.0));
    println!("5-instance scene estimate {five_secs:.2} s [{}]", verdict(five_secs < 10.0));
    write_json(
        &cfg.output_dir.join("bench.json"),
        &BenchSummary {
            format_version: 1,
            zero_noise: zero,
            noisy,
            index_build_seconds: index_secs,
            five_instance_estimate_seconds: five_secs,
            benchmark_seconds: bench_secs,
        },
    )
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::DefaultConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::Embed => cmd_embed(&cfg),
        Command::Synth { spec, objects, out } => cmd_synth(&cfg, spec.as_deref(), *objects, out),
        Command::Estimate { scene, out } => cmd_estimate(&cfg, scene, out.as_deref()),
        Command::Evaluate { scene, hypotheses, out } => cmd_evaluate(&cfg, scene, hypotheses, out.as_deref()),
        Command::Bench { scenes } => cmd_bench(&cfg, *scenes),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = ErrorRecord {
                format_version: ERROR_FORMAT_VERSION,
                kind: e.kind(),
                message: e.message(),
            };
            eprintln!("{}", serde_json::to_string(&record).expect("error record serializes"));
            ExitCode::from(e.code())
        }
    }
}
