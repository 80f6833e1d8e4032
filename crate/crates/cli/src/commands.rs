use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use oneshot_core::config::BenchmarkConfig;
use oneshot_core::segmenter::segment_rule_based;
use oneshot_core::sim::{
    compute_metrics, execute_rollout, generate_task, read_demo_jsonl, scripted_expert, write_demo_jsonl, PreparedDemo,
    RegionMode, TrialResult,
};
use oneshot_core::state::ProprioFrame;
use oneshot_core::vlm::{call_chat_endpoint, parse_response, render_prompt, to_response_json};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::CliError;
use crate::report::{self, ResultRow};
use crate::{DecomposeArgs, DecomposeMode, EvaluateArgs, GenDemosArgs, GridOverrides, ReportArgs, ReportFormat};

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    config_path: Option<String>,
    config: &'a BenchmarkConfig,
    output_dir: String,
    tool_version: &'static str,
    timestamp: String,
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<(), CliError> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io(Path::new("<stdout>"), e)),
        _ => Ok(()),
    }
}

fn load_config(path: Option<&Path>) -> Result<BenchmarkConfig, CliError> {
    Ok(match path {
        Some(p) => BenchmarkConfig::load(p)?,
        None => BenchmarkConfig::default(),
    })
}

fn apply_grid(cfg: &mut BenchmarkConfig, grid: &GridOverrides) -> Result<(), CliError> {
    if let Some(l) = &grid.levels {
        cfg.benchmark.levels = l.clone();
    }
    if let Some(s) = &grid.seeds {
        cfg.benchmark.seeds = s.clone();
    }
    cfg.validate()?;
    Ok(())
}

fn write_manifest(cfg: &BenchmarkConfig, config_path: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let manifest = RunManifest {
        config_path: config_path.map(|p| p.display().to_string()),
        config: cfg,
        output_dir: out.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION"),
        timestamp: chrono::Utc::now().to_rfc3339(),
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn gen_demos(args: GenDemosArgs) -> Result<(), CliError> {
    let mut cfg = load_config(args.grid.config.as_deref())?;
    apply_grid(&mut cfg, &args.grid)?;
    create_dir(&args.out)?;
    write_manifest(&cfg, args.grid.config.as_deref(), &args.out)?;
    let expert = cfg.expert();
    for &level in &cfg.benchmark.levels {
        for &seed in &cfg.benchmark.seeds {
            let task = generate_task(level, seed)?;
            let demo = scripted_expert(&task, &expert)?;
            let stem = format!("level{level}_seed{seed}");
            let demo_path = args.out.join(format!("{stem}.demo.jsonl"));
            let file = File::create(&demo_path).map_err(|e| CliError::io(&demo_path, e))?;
            let mut w = BufWriter::new(file);
            write_demo_jsonl(&demo, &mut w).map_err(|e| CliError::io(&demo_path, e))?;
            w.flush().map_err(|e| CliError::io(&demo_path, e))?;
            let task_path = args.out.join(format!("{stem}.task.json"));
            let text = serde_json::to_string_pretty(&task).expect("task serializes");
            fs::write(&task_path, text + "\n").map_err(|e| CliError::io(&task_path, e))?;
            emit(&format!(
                "{stem}: {} objects, {} interactions, {} frames -> {}\n",
                task.objects.len(),
                task.n_interactions,
                demo.len(),
                demo_path.display()
            ))?;
        }
    }
    Ok(())
}

fn read_proprio(path: &Path) -> Result<Vec<ProprioFrame>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let frames = read_demo_jsonl(BufReader::new(file))
        .map_err(|e| CliError::Format { path: path.display().to_string(), msg: e.to_string() })?;
    frames
        .iter()
        .map(|f| f.to_proprio())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Format { path: path.display().to_string(), msg: e.to_string() })
}

pub fn decompose(args: DecomposeArgs) -> Result<(), CliError> {
    let mut cfg = load_config(args.config.as_deref())?;
    let vlm = &mut cfg.vlm;
    if let Some(u) = args.endpoint {
        vlm.endpoint.url = u;
    }
    if let Some(m) = args.model {
        vlm.endpoint.model = m;
    }
    if let Some(k) = args.api_key_env {
        vlm.endpoint.api_key_env = k;
    }
    if let Some(t) = args.task_type {
        vlm.task_type = t;
    }
    if let Some(t) = args.timeout_secs {
        vlm.endpoint.timeout_secs = t;
    }
    if let Some(r) = args.max_retries {
        vlm.endpoint.max_retries = r;
    }
    vlm.lenient |= args.lenient;
    cfg.validate()?;

    let frames = read_proprio(&args.demo)?;
    let decomposition = match args.mode {
        DecomposeMode::Rule => segment_rule_based(&frames, cfg.pipeline.v_zero_threshold)?,
        DecomposeMode::Vlm => {
            let prompt = render_prompt(&frames, cfg.vlm.task_type()?)?;
            let body = call_chat_endpoint(&prompt, &cfg.vlm.endpoint)?;
            parse_response(body.as_bytes(), frames.len(), cfg.vlm.lenient)?
        }
    };
    let json = to_response_json(&decomposition);
    match args.output {
        Some(p) => fs::write(&p, json + "\n").map_err(|e| CliError::io(&p, e)),
        None => emit(&(json + "\n")),
    }
}

fn parse_models(names: &[String]) -> Result<Vec<RegionMode>, CliError> {
    names.iter().map(|n| n.parse().map_err(CliError::Usage)).collect()
}

/// Runs every (model, level, seed, trial) of the configured grid on `jobs` threads.
pub fn run_grid(cfg: &BenchmarkConfig, jobs: usize) -> Result<Vec<TrialResult>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let expert = cfg.expert();
    let mut cells = Vec::new();
    for model in cfg.models() {
        for &level in &cfg.benchmark.levels {
            for &seed in &cfg.benchmark.seeds {
                cells.push((model, level, seed));
            }
        }
    }
    pool.install(|| {
        let prepared: Vec<(u64, PreparedDemo, _)> = cells
            .par_iter()
            .map(|&(model, level, seed)| {
                let task = generate_task(level, seed)?;
                let demo = scripted_expert(&task, &expert)?;
                let pipeline = oneshot_core::sim::PipelineConfig { mode: model, ..cfg.pipeline.clone() };
                let p = PreparedDemo::new(&demo, &pipeline, &expert)
                    .map_err(|e| CliError::Decomposition(format!("level {level} seed {seed}: {e}")))?;
                Ok((seed, p, pipeline))
            })
            .collect::<Result<_, CliError>>()?;
        let trials: Vec<(usize, u32)> =
            (0..prepared.len()).flat_map(|i| (0..cfg.benchmark.trials).map(move |t| (i, t))).collect();
        let mut results: Vec<TrialResult> = trials
            .par_iter()
            .map(|&(i, trial)| {
                let (seed, p, pipeline) = &prepared[i];
                execute_rollout(p, pipeline, &cfg.planner, cfg.perturbation(), *seed, trial)
            })
            .collect();
        results.sort_by(|a, b| (&a.model, a.level, a.seed, a.trial).cmp(&(&b.model, b.level, b.seed, b.trial)));
        Ok(results)
    })
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let mut cfg = load_config(args.grid.config.as_deref())?;
    if let Some(t) = args.trials {
        cfg.benchmark.trials = t;
    }
    if let Some(m) = &args.models {
        cfg.benchmark.models = parse_models(m)?;
    }
    if let Some(p) = args.perturbation_m {
        cfg.benchmark.perturbation_m = p;
    }
    if let Some(p) = args.perturbation_rad {
        cfg.benchmark.perturbation_rad = p;
    }
    apply_grid(&mut cfg, &args.grid)?;
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let out: PathBuf = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.benchmark.output_dir));
    create_dir(&out)?;
    write_manifest(&cfg, args.grid.config.as_deref(), &out)?;

    let results = run_grid(&cfg, args.jobs)?;
    let rows: Vec<ResultRow> = results.iter().map(ResultRow::from).collect();
    report::write_results(&out.join("results.csv"), &rows)?;
    let metrics = compute_metrics(&report::tables_from_rows(&rows))?;
    let metrics_path = out.join("metrics.json");
    let text = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    fs::write(&metrics_path, text + "\n").map_err(|e| CliError::io(&metrics_path, e))?;
    emit(&report::markdown(&metrics))?;
    emit(&format!("results written to {}\n", out.display()))
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for p in &args.results {
        rows.extend(report::read_results(p)?);
    }
    let metrics = compute_metrics(&report::tables_from_rows(&rows))?;
    match args.format {
        ReportFormat::Markdown => emit(&report::markdown(&metrics)),
        ReportFormat::Csv => emit(&report::csv(&metrics)),
    }
}
