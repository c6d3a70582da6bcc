use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};

use tempscene::config::PipelineConfig;
use tempscene::model::store::{load_model, save_model};
use tempscene::model::TemporalModel;
use tempscene::optimizer::trace_csv;
use tempscene::pipeline::{self, evaluate, induct, propose_all};
use tempscene::ply::{read_ply, write_ply, Encoding, PlyExtras};
use tempscene::scan::PreparedScan;
use tempscene::synth::{default_suite, generate_sequence, write_scene, SceneScript, SUITE_NOISE};
use tempscene::viz::{export_labeled, export_model, VizMode};

/// Exit code for pipeline failures.
const EXIT_PIPELINE: u8 = 1;
/// Exit code for unreadable input, bad arguments or a held lock.
const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(name = "tempscene", version, about = "Temporal instance-level scene models from indoor rescans")]
struct Cli {
    /// Pipeline configuration (TOML); defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the annealing seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One induction step: model + new scan -> next model and labeled scan.
    Induct {
        /// Model of the previous scans. Without it, `--scan` must be labeled
        /// and is used to bootstrap.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the annealing trace as CSV.
        #[arg(long)]
        trace: bool,
    },
    /// Bootstrap from scan_000.ply and induct every later scan of a scene.
    Run {
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: bool,
    },
    /// Score labeled predictions against ground truth.
    Evaluate {
        pred: PathBuf,
        gt: PathBuf,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate synthetic scenes, from a script or the default suite.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Scene script (TOML). Without it the default suite is written.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Suite sensor noise in meters.
        #[arg(long, default_value_t = SUITE_NOISE)]
        noise: f64,
    },
    /// Write a colored PLY of a labeled scan or of a model.
    ExportViz {
        /// Labeled PLY scan or model directory.
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "instance")]
        viz_mode: VizMode,
        /// Arrangement to compose a model at (default: latest).
        #[arg(long)]
        timestep: Option<usize>,
    },
    /// Dump the pose candidates of every model object for a scan.
    Propose {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scan: PathBuf,
        /// Output JSON file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exclusive `.lock` file in a directory, removed on drop.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(".lock");
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| anyhow!(LockHeld(format!("{}: {e}", path.display()))))?;
        Ok(Self { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug)]
struct LockHeld(String);

impl std::fmt::Display for LockHeld {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "directory is locked by another step ({})", self.0)
    }
}

impl std::error::Error for LockHeld {}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.anneal.seed = seed;
    }
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_induct(cfg: &PipelineConfig, model: Option<&Path>, scan: &Path, out: &Path, trace: bool) -> anyhow::Result<()> {
    let _lock = DirLock::acquire(out)?;
    let scan = read_ply(scan)?.cloud;
    let model = match model {
        Some(dir) => load_model(dir)?,
        None => {
            let model = TemporalModel::bootstrap(&scan)?;
            save_model(&model, &out.join("model"))?;
            println!("bootstrapped {} objects", model.object_count());
            return Ok(());
        }
    };
    let step = induct(&model, &scan, cfg, trace)?;
    save_model(&step.model, &out.join("model"))?;
    write_ply(
        &out.join("labeled.ply"),
        &step.labeled,
        PlyExtras {
            confidence: Some(&step.confidence),
            colors: None,
        },
        Encoding::BinaryLittleEndian,
    )?;
    write_json(&out.join("report.json"), &step.report)?;
    write_json(&out.join("timing.json"), &step.timing)?;
    if trace {
        fs::write(out.join("trace.csv"), trace_csv(&step.trace))?;
    }
    let placed = step.report.objects.iter().filter(|o| o.placed).count();
    println!(
        "step {}: objective {:.4}, {placed} placed, absent {:?}",
        step.report.timestep, step.report.objective.value, step.report.absent
    );
    Ok(())
}

fn cmd_run(cfg: &PipelineConfig, scene: &Path, out: &Path, trace: bool) -> anyhow::Result<()> {
    let _lock = DirLock::acquire(out)?;
    let reports = pipeline::run(scene, out, cfg, trace)?;
    println!("{} steps written to {}", reports.len() + 1, out.display());
    Ok(())
}

fn cmd_evaluate(pred: &Path, gt: &Path, csv: Option<&Path>) -> anyhow::Result<()> {
    let table = evaluate(pred, gt)?;
    print!("{}", table.to_csv());
    eprintln!("{}", table.summary());
    if let Some(path) = csv {
        fs::write(path, table.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_synth(out: &Path, script: Option<&Path>, noise: f64) -> anyhow::Result<()> {
    match script {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let script = SceneScript::from_toml(&text)
                .map_err(|m| tempscene::Error::parse(path, m))?;
            let seq = generate_sequence(&script)?;
            write_scene(&script, &seq, out)?;
            println!("wrote {} scans to {}", seq.truth.scans.len(), out.display());
        }
        None => {
            for (i, script) in default_suite(noise).iter().enumerate() {
                let dir = out.join(format!("scene_{i:02}"));
                let seq = generate_sequence(script)?;
                write_scene(script, &seq, &dir)?;
            }
            println!("wrote suite to {}", out.display());
        }
    }
    Ok(())
}

fn cmd_export(input: &Path, out: &Path, mode: VizMode, timestep: Option<usize>) -> anyhow::Result<()> {
    let points = if input.is_dir() {
        let model = load_model(input)?;
        let t = match timestep {
            Some(t) => t,
            None => model
                .history()
                .len()
                .checked_sub(1)
                .ok_or_else(|| anyhow!("model has no arrangements"))?,
        };
        export_model(&model, t, mode, out)?
    } else {
        if timestep.is_some() {
            bail!("--timestep applies to model directories only");
        }
        export_labeled(&read_ply(input)?.cloud, mode, out)?
    };
    println!("wrote {points} points to {}", out.display());
    Ok(())
}

fn cmd_propose(cfg: &PipelineConfig, model: &Path, scan: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let model = load_model(model)?;
    let mut scan = read_ply(scan)?.cloud;
    scan.clear_labels();
    let prepared = PreparedScan::new(scan, &cfg.scan)?;
    let sets = propose_all(&model, &prepared, cfg)?;
    let text = serde_json::to_string_pretty(&sets)? + "\n";
    match out {
        Some(path) => {
            let mut f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
            std::io::Write::write_all(&mut f, text.as_bytes())?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Induct { model, scan, out, trace } => cmd_induct(&cfg, model.as_deref(), scan, out, *trace),
        Command::Run { scene, out, trace } => cmd_run(&cfg, scene, out, *trace),
        Command::Evaluate { pred, gt, csv } => cmd_evaluate(pred, gt, csv.as_deref()),
        Command::Synth { out, script, noise } => cmd_synth(out, script.as_deref(), *noise),
        Command::ExportViz {
            input,
            out,
            viz_mode,
            timestep,
        } => cmd_export(input, out, *viz_mode, *timestep),
        Command::Propose { model, scan, out } => cmd_propose(&cfg, model, scan, out.as_deref()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<LockHeld>().is_some() || err.downcast_ref::<std::io::Error>().is_some() {
        return EXIT_INPUT;
    }
    match err.downcast_ref::<tempscene::Error>() {
        Some(e) if e.is_input_error() => EXIT_INPUT,
        Some(_) => EXIT_PIPELINE,
        None => EXIT_PIPELINE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // library messages already embed their causes
            match err.downcast_ref::<tempscene::Error>() {
                Some(e) => eprintln!("error: {e}"),
                None => eprintln!("error: {err:#}"),
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
