//! `grca` command-line tool. Every subcommand reads its inputs, calls one
//! operation from `grca::commands` and writes the JSON report.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 a failed check
//! (`--check`, or too many unmatched ids in `score`).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use grca::commands::{self, all_passed, Calibrations, Check, ScoreConfig, SimulateConfig, MAX_UNMATCHED_FRACTION};
use grca::credit::{AdvantageMode, CreditConfig, DEFAULT_LAMBDA, DEFAULT_STD_EPS};
use grca::geometry::QuantRanges;
use grca::simulator::{AnalysisConfig, SceneConfig, SimConfig};

#[derive(Parser)]
#[command(name = "grca", version, about = "Field-routed credit assignment for structured geometric outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score predictions against ground truth (IoU, KPA, RPC).
    Score(ScoreArgs),
    /// Routed and broadcast per-token advantages for a JSONL rollout file.
    Route(RouteArgs),
    /// Write simulator scenes as scenes.jsonl, gt.jsonl and an oracle pred.jsonl.
    Export(ExportArgs),
    /// Warm-start and train the toy policy; writes report.json and curve CSVs.
    Simulate(SimulateArgs),
    /// Broadcast versus routed gradient variance on a frozen policy.
    AnalyzeVariance(VarianceArgs),
}

#[derive(Args)]
struct ScoreArgs {
    /// JSONL of {"id", "text"}.
    #[arg(long)]
    pred: PathBuf,
    /// JSONL of {"id", "bbox2d", "bbox3d", optional "camera"}.
    #[arg(long)]
    gt: PathBuf,
    /// {"K", "R", "t"} shared by all ids, or an object keyed by id.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Quantization ranges as JSON; defaults to a 512x512 image and [-1, 1]^3.
    #[arg(long)]
    ranges: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RouteArgs {
    /// JSONL, one group per line.
    rollouts: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = DEFAULT_STD_EPS)]
    std_eps: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    scenes: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Routed,
    Broadcast,
    Both,
}

/// Overrides applied on top of the defaults or `--config`.
#[derive(Args)]
struct SimArgs {
    /// JSON simulator config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    clip_eps: Option<f64>,
    #[arg(long)]
    std_eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// RL learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    sft_steps: Option<usize>,
    #[arg(long)]
    sft_lr: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Exit with status 2 if any report check fails.
    #[arg(long)]
    check: bool,
}

impl SimArgs {
    fn resolve(&self, base: SimConfig) -> Result<SimConfig, String> {
        let mut c = match &self.config {
            Some(p) => serde_json::from_str(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?,
            None => base,
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$($field).+ = v; })*
            };
        }
        set!(
            lambda => lambda, group_size => group_size, clip_eps => clip_eps, std_eps => std_eps,
            seed => seed, scenes => scenes, steps => steps, lr => lr, sft_steps => sft.steps,
            sft_lr => sft.lr, threads => threads,
        );
        if let Some(s) = self.scenes {
            c.scenes_per_step = c.scenes_per_step.min(s);
        }
        c.validate().map_err(|e| e.to_string())?;
        Ok(c)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "routed")]
    mode: ModeArg,
    /// Comma-separated seeds; overrides --seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[command(flatten)]
    sim: SimArgs,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VarianceArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Scene whose rollouts are analyzed.
    #[arg(long)]
    scene: Option<usize>,
    /// Number of groups drawn from the frozen policy.
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read(p: &Path) -> Result<String, String> {
    fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn write(p: &Path, contents: &str) -> Result<(), String> {
    fs::write(p, contents).map_err(|e| format!("{}: {e}", p.display()))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn emit(out: Option<&Path>, json: &str) -> Result<(), String> {
    match out {
        Some(p) => write(p, json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn report_checks(checks: &[Check], enforce: bool) -> ExitCode {
    for c in checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if enforce && !all_passed(checks) {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn score(a: &ScoreArgs) -> Result<ExitCode, String> {
    let ranges = match &a.ranges {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?,
        None => QuantRanges::default(),
    };
    let calibrations = match &a.calib {
        Some(p) => Calibrations::from_json(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?,
        None => Calibrations::None,
    };
    let config = ScoreConfig {
        pred: a.pred.display().to_string(),
        gt: a.gt.display().to_string(),
        calib: a.calib.as_ref().map(|p| p.display().to_string()),
        ranges,
        max_unmatched_fraction: MAX_UNMATCHED_FRACTION,
    };
    let report = commands::score(&read(&a.pred)?, &read(&a.gt)?, &calibrations, config).map_err(|e| e.to_string())?;
    emit(a.out.as_deref(), &to_json(&report))?;
    if report.too_many_unmatched() {
        eprintln!(
            "{:.1}% of ids unmatched (limit {:.0}%)",
            100.0 * report.unmatched_fraction,
            100.0 * MAX_UNMATCHED_FRACTION
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn route(a: &RouteArgs) -> Result<ExitCode, String> {
    let config = CreditConfig { lambda: a.lambda, std_eps: a.std_eps };
    config.validate().map_err(|e| e.to_string())?;
    let report = commands::route(&read(&a.rollouts)?, config).map_err(|e| e.to_string())?;
    emit(a.out.as_deref(), &to_json(&report))?;
    Ok(ExitCode::SUCCESS)
}

fn export(a: &ExportArgs) -> Result<ExitCode, String> {
    let ex = commands::export_scenes(a.seed, a.scenes, &SceneConfig::default()).map_err(|e| e.to_string())?;
    fs::create_dir_all(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    write(&a.out.join("scenes.jsonl"), &ex.scenes_jsonl)?;
    write(&a.out.join("gt.jsonl"), &ex.gt_jsonl)?;
    write(&a.out.join("pred.jsonl"), &ex.pred_jsonl)?;
    Ok(ExitCode::SUCCESS)
}

fn simulate(a: &SimulateArgs) -> Result<ExitCode, String> {
    let sim = a.sim.resolve(SimConfig::default())?;
    let modes = match a.mode {
        ModeArg::Routed => vec![AdvantageMode::Routed],
        ModeArg::Broadcast => vec![AdvantageMode::Broadcast],
        ModeArg::Both => vec![AdvantageMode::Routed, AdvantageMode::Broadcast],
    };
    let seeds = if a.seeds.is_empty() { vec![sim.seed] } else { a.seeds.clone() };
    let report = commands::simulate(SimulateConfig { sim, seeds, modes }).map_err(|e| e.to_string())?;
    let json = to_json(&report);
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
            write(&dir.join("report.json"), &json)?;
            for (name, csv) in report.curve_files() {
                write(&dir.join(name), &csv)?;
            }
        }
        None => print!("{json}"),
    }
    Ok(report_checks(&report.checks, a.sim.check))
}

fn analyze_variance(a: &VarianceArgs) -> Result<ExitCode, String> {
    let defaults = AnalysisConfig::default();
    let config = AnalysisConfig {
        sim: a.sim.resolve(defaults.sim)?,
        scene: a.scene.unwrap_or(defaults.scene),
        groups: a.groups.unwrap_or(defaults.groups),
    };
    let report = commands::analyze_variance_cmd(&config).map_err(|e| e.to_string())?;
    emit(a.out.as_deref(), &to_json(&report))?;
    Ok(report_checks(&report.checks, a.sim.check))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Score(a) => score(a),
        Command::Route(a) => route(a),
        Command::Export(a) => export(a),
        Command::Simulate(a) => simulate(a),
        Command::AnalyzeVariance(a) => analyze_variance(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
