use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ctpack::config::{parse_memory, Config};
use ctpack::score::score_session;
use ctpack::session::{Session, Settings, Step};
use ctpack::SessionError;
use ctpack_core::synth::{generate, load_truth, GroundTruth, SceneSpec};

/// Packed micro-CT scan to one named mesh per object.
#[derive(Debug, Parser)]
#[command(name = "ctpack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic packed scan with layout and ground truth.
    Synth(SynthArgs),
    /// Check the alignment decision against the scan.
    Align(StepArgs),
    /// Build the low-resolution proxy volume.
    Subsample(StepArgs),
    /// Record thresholds and the proxy histogram.
    Thresholds(StepArgs),
    /// Split the proxy into tiers.
    Tiers(StepArgs),
    /// Find the cell grid of every tier and the extraction boxes.
    Grid(StepArgs),
    /// Cut every object's sub-volume out of the full-resolution scan.
    Extract(StepArgs),
    /// Surface every sub-volume into a PLY mesh.
    Surface(StepArgs),
    /// Run every pending step.
    Run(StepArgs),
    /// Serve the session API.
    Serve(ServeArgs),
    /// Score a session against a synthetic scan's truth.
    Score(ScoreArgs),
}

#[derive(Debug, Clone, Args)]
struct SessionArgs {
    /// TOML config with paths, decisions and run settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory holding the session.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory of 16-bit slice images.
    #[arg(long)]
    scan_dir: Option<PathBuf>,
    /// Layout CSV of this scan.
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Memory budget, e.g. 16GiB.
    #[arg(long, value_parser = parse_memory)]
    max_memory: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    resident_slices: Option<usize>,
    /// Surfacing isolevel; defaults to the object threshold.
    #[arg(long)]
    isolevel: Option<f64>,
    /// Box padding in proxy pixels.
    #[arg(long)]
    pad: Option<usize>,
}

#[derive(Debug, Args)]
struct StepArgs {
    #[command(flatten)]
    session: SessionArgs,
    /// Run the step again even if it is done.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    session: SessionArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    out: PathBuf,
    /// truth.json written by `synth`.
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Scene description as JSON; overrides the shape flags.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    tiers: usize,
    #[arg(long, default_value_t = 3)]
    rows: usize,
    #[arg(long, default_value_t = 4)]
    cols: usize,
    /// Width, height and slice count.
    #[arg(long, num_args = 3, default_values_t = [600, 600, 800])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Constant added to every voxel.
    #[arg(long, default_value_t = 0)]
    offset: u16,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let missing = e
                .downcast_ref::<SessionError>()
                .is_some_and(|s| matches!(s.root(), SessionError::MissingDecision(_)));
            ExitCode::from(if missing { 3 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let (step, args) = match cli.command {
        Command::Synth(a) => return synth(a),
        Command::Score(a) => return score(a),
        Command::Serve(a) => return serve(a),
        Command::Align(a) => (Step::Align, a),
        Command::Subsample(a) => (Step::Subsample, a),
        Command::Thresholds(a) => (Step::Thresholds, a),
        Command::Tiers(a) => (Step::Tiers, a),
        Command::Grid(a) => (Step::Grid, a),
        Command::Extract(a) => (Step::Extract, a),
        Command::Surface(a) | Command::Run(a) => (Step::Surface, a),
    };
    let mut session = open_session(&args.session)?;
    let report = if args.force { session.rerun(step)? } else { session.run(step)? };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

/// Settings come from the stored session, then the config, then flags.
fn open_session(args: &SessionArgs) -> Result<Session> {
    let cfg = args.config.as_deref().map(Config::load).transpose()?;
    let Some(out) = args.out.clone().or_else(|| cfg.as_ref().and_then(|c| c.out.clone())) else {
        bail!("no output directory; pass --out or set `out` in the config");
    };
    let mut settings = Session::stored_settings(&out)?;
    if let Some(c) = &cfg {
        if c.scan_dir.is_some() && c.layout.is_some() {
            settings = Some(Settings::from_config(c)?);
        } else if let Some(s) = settings.as_mut() {
            s.max_memory = c.max_memory;
            s.workers = c.workers;
            s.resident_slices = c.resident_slices;
            s.isolevel = c.isolevel;
            s.pad = c.pad;
        }
    }
    match (&args.scan_dir, &args.layout, settings.as_mut()) {
        (Some(scan), Some(layout), None) => settings = Some(Settings::new(scan, layout)),
        (scan, layout, Some(s)) => {
            if let Some(p) = scan {
                s.scan_dir = p.clone();
            }
            if let Some(p) = layout {
                s.layout = p.clone();
            }
        }
        _ => bail!("no session in {}; pass --scan-dir and --layout, or a config naming both", out.display()),
    }
    let mut settings = settings.expect("set above");
    settings.scan_dir = std::path::absolute(&settings.scan_dir)?;
    settings.layout = std::path::absolute(&settings.layout)?;
    if let Some(m) = args.max_memory {
        settings.max_memory = m;
    }
    if args.workers.is_some() {
        settings.workers = args.workers;
    }
    if let Some(r) = args.resident_slices {
        settings.resident_slices = r.max(1);
    }
    if args.isolevel.is_some() {
        settings.isolevel = args.isolevel;
    }
    if let Some(p) = args.pad {
        settings.pad = p;
    }
    let mut session = Session::open(&out, Some(settings))?;
    if let Some(c) = &cfg {
        session.apply_config(c)?;
    }
    Ok(session)
}

fn serve(args: ServeArgs) -> Result<ExitCode> {
    let session = open_session(&args.session)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(ctpack::server::serve(session, args.bind))?;
    Ok(ExitCode::SUCCESS)
}

fn score(args: ScoreArgs) -> Result<ExitCode> {
    let truth = load_truth(&args.truth)?;
    let session = Session::open(&args.out, None)?;
    let s = score_session(&session, &truth)?;
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(if s.passed() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn synth(args: SynthArgs) -> Result<ExitCode> {
    let spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            serde_json::from_str(&text).with_context(|| p.display().to_string())?
        }
        None => {
            let dims = [args.dims[0], args.dims[1], args.dims[2]];
            let mut s = SceneSpec::stacked(dims, args.tiers, (args.rows, args.cols), args.seed);
            s.intensity_offset = args.offset;
            s
        }
    };
    let truth = generate(&spec, &args.out)?;
    write_starter_config(&args.out, &truth)?;
    eprintln!(
        "wrote {} objects in {} tiers to {}; run with --config {}",
        truth.objects.len(),
        truth.tiers.len(),
        args.out.display(),
        args.out.join(STARTER_CONFIG).display()
    );
    Ok(ExitCode::SUCCESS)
}

const STARTER_CONFIG: &str = "ctpack.toml";

/// A config holding the decisions an operator would make for this scene.
fn write_starter_config(dir: &Path, truth: &GroundTruth) -> Result<()> {
    std::fs::write(dir.join("alignment.txt"), truth.alignment.to_text())?;
    let t = &truth.thresholds;
    let mut text = format!(
        "scan_dir = \"{}\"\nlayout = \"{}\"\nalignment = \"alignment.txt\"\n\n[thresholds]\na_divider = {:?}\nb_divider = {:?}\na_object = {:?}\n",
        ctpack_core::synth::SLICE_DIR,
        ctpack_core::synth::LAYOUT_FILE,
        t.a_divider,
        t.b_divider,
        t.a_object,
    );
    if t.b_object.is_finite() {
        text.push_str(&format!("b_object = {:?}\n", t.b_object));
    }
    std::fs::write(dir.join(STARTER_CONFIG), text)?;
    Ok(())
}
