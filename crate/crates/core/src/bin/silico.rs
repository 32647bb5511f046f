use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use silico::pipeline::demo::run_demo;
use silico::pipeline::{Run, RunConfig, Stage, StageOutcome};
use silico::Error;

#[derive(Parser)]
#[command(name = "silico", version, about = "Simulated-respondent survey runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Run identifier; outputs go to <runs-dir>/<run>.
    #[arg(long)]
    run: String,
    /// Redo the stage even if it already completed.
    #[arg(long)]
    force: bool,
    /// Root seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value = "demo")]
    run: String,
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Expand the battery into prompts.jsonl.
    Battery(StageArgs),
    /// Sample completions for every prompt.
    Complete(StageArgs),
    /// Embed completions and project them on their axes.
    Score(StageArgs),
    /// Fit per-wording priming regressions.
    Regress(StageArgs),
    /// Generate "This is because" justifications.
    Justify(StageArgs),
    /// Cluster justifications per sign group and label clusters.
    Cluster(StageArgs),
    /// Write coefficients, verdicts and the accuracy summary.
    Report(StageArgs),
    /// Run the whole pipeline offline on the bundled planted battery.
    Demo(DemoArgs),
}

fn print(outcome: &StageOutcome) {
    let tag = if outcome.skipped { "skip" } else { "done" };
    println!("[{tag}] {}: {}", outcome.stage, outcome.summary);
}

fn stage(stage: Stage, args: StageArgs) -> Result<(), Error> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let mut run = Run::open(&args.runs_dir, &args.run, config)?;
    print(&run.run_stage(stage, args.force)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Battery(a) => stage(Stage::Battery, a),
        Command::Complete(a) => stage(Stage::Complete, a),
        Command::Score(a) => stage(Stage::Score, a),
        Command::Regress(a) => stage(Stage::Regress, a),
        Command::Justify(a) => stage(Stage::Justify, a),
        Command::Cluster(a) => stage(Stage::Cluster, a),
        Command::Report(a) => stage(Stage::Report, a),
        Command::Demo(a) => run_demo(&a.runs_dir, &a.run, a.seed, a.force).map(|(run, outcomes)| {
            outcomes.iter().for_each(print);
            println!("outputs in {}", run.dir().display());
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
