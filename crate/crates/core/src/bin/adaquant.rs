use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaquant::harness::{
    grid_search_s0, load_config, run_experiment, run_label, sweep, ExperimentSummary, TrainingConfig,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adaquant", version, about = "Federated training with adaptive update quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the config's master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Single training run with the configured quantization
    Run(Common),
    /// Fixed 2/4/8/16-bit baselines and the adaptive schedule on one bit budget
    Sweep(Common),
    /// Grid search over the adaptive schedule's starting level
    GridS0 {
        #[command(flatten)]
        common: Common,
        /// Comma-separated starting levels
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,8,16")]
        candidates: Vec<u32>,
    },
}

fn prepare(common: &Common) -> adaquant::Result<(TrainingConfig, PathBuf)> {
    let mut config = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let out = common
        .out_dir
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    std::fs::create_dir_all(&out).map_err(|source| adaquant::Error::Io {
        path: out.clone(),
        source,
    })?;
    Ok((config, out))
}

fn print_summary(s: &ExperimentSummary) {
    let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
    println!(
        "{:<14} rounds={:<6} bits={:<12} final_loss={:.6} eval={} bits_to_threshold={} s={}..{}",
        s.label,
        s.rounds,
        s.cumulative_bits,
        s.final_loss,
        opt(s.final_eval.map(|v| format!("{v:.4}"))),
        opt(s.bits_to_threshold.map(|v| v.to_string())),
        opt(s.s_trajectory.first().map(|v| v.to_string())),
        opt(s.s_trajectory.last().map(|v| v.to_string())),
    );
}

fn run(cli: Cli) -> adaquant::Result<()> {
    match cli.command {
        Command::Run(common) => {
            let (config, out) = prepare(&common)?;
            let csv = out.join(format!("{}.csv", run_label(&config.quant)));
            let result = run_experiment(&config, Some(&csv))?;
            print_summary(&result.summary);
            println!("wrote {}", csv.display());
        }
        Command::Sweep(common) => {
            let (config, out) = prepare(&common)?;
            let report = sweep(&config, Some(&out))?;
            println!("bit budget {} per client, threshold {:.6}", report.bit_budget, report.threshold);
            for r in &report.runs {
                print_summary(&r.summary);
            }
            println!("wrote {}", Path::new(&out).join("summary.csv").display());
        }
        Command::GridS0 { common, candidates } => {
            let (config, out) = prepare(&common)?;
            let report = grid_search_s0(&config, &candidates, Some(&out))?;
            for (_, s) in &report.ranked {
                print_summary(s);
            }
            println!("best s0 = {}", report.best);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
