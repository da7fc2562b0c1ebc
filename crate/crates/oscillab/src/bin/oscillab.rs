//! Experiment CLI: one subcommand per lemma-scale experiment, each taking
//! an optional TOML/JSON config plus flag overrides, emitting CSV or JSON
//! reports and an optional plot script.

use clap::{Args, Parser, Subcommand};
use oscillab::explab::{self, ExperimentConfig, Format};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "oscillab", version, about = "oscillatory integral numerics lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Focusing example across dyadic cap scales
    Knapp(RunArgs),
    /// Wave packet decomposition suite
    Wavepackets(RunArgs),
    /// Transverse equidistribution trend
    Transequi(RunArgs),
    /// Parabolic rescaling identity and domain bookkeeping
    Rescale(RunArgs),
    /// Curvature and empirical decoupling scan
    Decouple(RunArgs),
    /// Polynomial partitioning contracts and dichotomy
    Partition(RunArgs),
    /// Exponent arithmetic checks
    Exponents(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output report path (default: <experiment>.csv in the current dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format
    #[arg(long, default_value = "csv")]
    format: String,
    /// Also emit a plot script next to the report
    #[arg(long)]
    emit_plot: bool,
    /// Record wall-clock runtimes in the rows (breaks byte-reproducibility)
    #[arg(long)]
    timings: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    big_k: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    a: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    d: Option<u32>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
}

impl RunArgs {
    fn build_config(&self, name: &str) -> oscillab::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.experiment = name.to_string();
        macro_rules! over {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        over!(seed, n, lambda, r, rho, big_k, k, a, p, alpha, d, points, grid);
        cfg.timings = self.timings || cfg.timings;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(name: &str, args: &RunArgs) -> oscillab::Result<bool> {
    let cfg = args.build_config(name)?;
    let rows = explab::run_experiment(name, &cfg)?;
    let format = match args.format.as_str() {
        "json" => Format::Json,
        _ => Format::Csv,
    };
    let ext = if format == Format::Json { "json" } else { "csv" };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{name}.{ext}")));
    explab::emit(&rows, format, &out)?;
    if args.emit_plot {
        let script = out.with_extension("py");
        let csv_name = out
            .file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default();
        explab::emit_plotscript(&rows, &csv_name, &script)?;
    }
    let mut all_pass = true;
    for r in &rows {
        let verdict = if r.pass { "pass" } else { "FAIL" };
        println!(
            "[{verdict}] {:<42} measured={:+.4e} reference={:+.4e}",
            r.experiment, r.measured, r.reference
        );
        all_pass &= r.pass;
    }
    eprintln!("report written to {}", out.display());
    Ok(all_pass)
}

fn main() -> ExitCode {
    explab::init_threads();
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Knapp(a) => ("knapp", a),
        Command::Wavepackets(a) => ("wavepackets", a),
        Command::Transequi(a) => ("transequi", a),
        Command::Rescale(a) => ("rescale", a),
        Command::Decouple(a) => ("decouple", a),
        Command::Partition(a) => ("partition", a),
        Command::Exponents(a) => ("exponents", a),
    };
    match run(name, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
