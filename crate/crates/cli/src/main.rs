use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bidiff::config::KeyValues;
use bidiff::dataset::{gen_dataset, DatasetSpec};
use bidiff::distill::{DistillConfig, RefineConfig};
use bidiff::pipeline::RunConfig;
use bidiff::selftest::run_selftest;
use bidiff::stages::{
    distill_stage, metrics_stage, refine_stage, render_stage, replay, sample_stage, RenderRequest, RenderSource,
};
use bidiff::Result;

const THREADS_VAR: &str = "BIDIFF_THREADS";

#[derive(Parser)]
#[command(name = "bidiff", version, about = "Coupled SDF-grid and multi-view diffusion sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bake grids, ring and random renders and priors for scene files.
    GenDataset(GenDatasetArgs),
    /// Run the coupled sampler on one scene.
    Sample(SampleArgs),
    /// Distill a sampled SDF grid into a hi-res density/color field.
    Distill(DistillArgs),
    /// Refine a hi-res field by score distillation against views.
    Refine(RefineArgs),
    /// Render a camera ring of a run or a hi-res field.
    Render(RenderArgs),
    /// Geometry and consistency metrics for a run.
    Metrics(MetricsArgs),
    /// Run the invariant suite.
    Selftest,
    /// Rerun any stage from the manifest it wrote.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct GenDatasetArgs {
    #[arg(long = "scene", required = true, num_args = 1..)]
    scenes: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid resolution N.
    #[arg(long)]
    resolution: Option<usize>,
    /// Also export the fixed ring at 256x256.
    #[arg(long)]
    hires: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DistillArgs {
    /// Run directory written by `sample`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Field file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RefineArgs {
    /// Field file written by `distill`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Noise-level range as fractions of the schedule, `lo:hi`.
    #[arg(long)]
    range: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    /// View set to refine against; defaults to the source run's V0.
    #[arg(long)]
    views: Option<PathBuf>,
    /// Defaults to `<input stem>_refined.sdfg` beside the input.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RenderArgs {
    /// Run directory written by `sample`.
    #[arg(long, conflicts_with = "field", required_unless_present = "field")]
    run: Option<PathBuf>,
    /// Field file written by `distill` or `refine`.
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    near: Option<f64>,
    #[arg(long)]
    far: Option<f64>,
    /// Background color `r,g,b` in [0, 1].
    #[arg(long)]
    background: Option<String>,
    /// S-density sharpness override.
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Run directory written by `sample`.
    #[arg(long)]
    run: PathBuf,
    /// Ground-truth scene; defaults to the run's input scene.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Hi-res field to score as well.
    #[arg(long)]
    field: Option<PathBuf>,
    /// Report file; defaults to `<run>/metrics.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<KeyValues> {
    match path {
        Some(p) => KeyValues::load(p),
        None => Ok(KeyValues::new()),
    }
}

fn set_opt<T: std::fmt::Display>(kv: &mut KeyValues, key: &str, value: Option<T>) {
    if let Some(v) = value {
        kv.set(key, v);
    }
}

fn print_manifest(kv: &KeyValues) {
    for key in kv.keys().filter(|k| k.starts_with("result.") || k.starts_with("metric.") || k.starts_with("timing.")) {
        println!("{key}={}", kv.get_str(key).unwrap_or(""));
    }
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::GenDataset(a) => {
            let mut kv = load_config(a.config.as_deref())?;
            let scenes: Vec<String> = a.scenes.iter().map(|p| p.display().to_string()).collect();
            kv.set("dataset.scenes", scenes.join(","));
            set_opt(&mut kv, "dataset.seed", a.seed);
            set_opt(&mut kv, "dataset.resolution", a.resolution);
            if a.hires {
                kv.set("dataset.hires", true);
            }
            let m = gen_dataset(&DatasetSpec::from_kv(&kv)?, &a.out)?;
            println!("wrote {} scene(s) to {}", a.scenes.len(), a.out.display());
            print_manifest(&m);
        }
        Command::Sample(a) => {
            let mut kv = load_config(a.config.as_deref())?;
            set_opt(&mut kv, "sampler.seed", a.seed);
            let m = sample_stage(&a.scene, &RunConfig::from_kv(&kv, &[])?, &a.out)?;
            print_manifest(&m);
        }
        Command::Distill(a) => {
            let mut kv = load_config(a.config.as_deref())?;
            set_opt(&mut kv, "distill.iterations", a.iters);
            set_opt(&mut kv, "distill.resolution", a.resolution);
            let m = distill_stage(&a.input, &DistillConfig::from_kv(&kv)?, a.seed, &a.out)?;
            print_manifest(&m);
        }
        Command::Refine(a) => {
            let mut kv = load_config(a.config.as_deref())?;
            set_opt(&mut kv, "refine.range", a.range);
            set_opt(&mut kv, "refine.iterations", a.iters);
            let out = a.out.unwrap_or_else(|| {
                let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("field");
                a.input.with_file_name(format!("{stem}_refined.sdfg"))
            });
            let m = refine_stage(&a.input, a.views.as_deref(), &RefineConfig::from_kv(&kv)?, a.seed, &out)?;
            println!("wrote {}", out.display());
            print_manifest(&m);
        }
        Command::Render(a) => {
            let mut kv = load_config(a.config.as_deref())?;
            set_opt(&mut kv, "render.count", a.views);
            set_opt(&mut kv, "render.size", a.size);
            set_opt(&mut kv, "render.samples", a.samples);
            set_opt(&mut kv, "render.near", a.near);
            set_opt(&mut kv, "render.far", a.far);
            set_opt(&mut kv, "render.background", a.background);
            set_opt(&mut kv, "render.s_override", a.s);
            set_opt(&mut kv, "render.seed", a.seed);
            let source = match (a.run, a.field) {
                (Some(r), _) => RenderSource::Run(r),
                (None, Some(f)) => RenderSource::Field(f),
                (None, None) => unreachable!("clap requires one input"),
            };
            let m = render_stage(&source, &RenderRequest::from_kv(&kv)?, &a.out)?;
            print_manifest(&m);
        }
        Command::Metrics(a) => {
            let out = a.out.unwrap_or_else(|| a.run.join("metrics.txt"));
            let report = metrics_stage(&a.run, a.scene.as_deref(), a.field.as_deref(), &out)?;
            for (k, v) in &report.scalars {
                println!("{k}={v}");
            }
            println!("report written to {}", out.display());
        }
        Command::Selftest => {
            let checks = run_selftest();
            for c in &checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                println!("{status} {} ({:.2}s): {}", c.name, c.seconds, c.detail);
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
        Command::Replay(a) => {
            let m = replay(&a.manifest, &a.out)?;
            print_manifest(&m);
        }
    }
    Ok(true)
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("{THREADS_VAR} must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}
