use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use facetscope::cli::{self, Command, Overrides, RunOptions, Selection};
use facetscope::ingest::{rf_table_csv, Preset};
use facetscope::{fixture, Error};

#[derive(Parser)]
#[command(
    name = "facetscope",
    version,
    about = "Multi-faceted neuron analysis from top-activating images"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Rank every neuron's top-K images from an activation stream.
    Topk(RunArgs),
    /// CoF matrices, facet metrics, similarity matrices and plots.
    Analyze(RunArgs),
    /// ICA basis images for selected neurons.
    Visualize(RunArgs),
    /// Print the receptive-field table as CSV.
    RfTable {
        #[arg(long, default_value = "vgg16", conflicts_with = "config")]
        preset: String,
        /// Take the layer table from a config file instead.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the synthetic demo dataset and its config into a directory.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Restrict to one layer.
    #[arg(long)]
    layer: Option<u16>,
    /// Visualize the N highest- and N lowest-MF neurons per layer.
    #[arg(long, conflicts_with = "all")]
    top: Option<usize>,
    /// Visualize every neuron.
    #[arg(long)]
    all: bool,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// ICA seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn options(&self) -> RunOptions {
        let selection = if self.all {
            Some(Selection::All)
        } else {
            self.top.map(Selection::Top)
        };
        RunOptions {
            layer: self.layer,
            threads: self.threads,
            overrides: Overrides {
                seed: self.seed,
                selection,
            },
        }
    }
}

fn report(err: &Error) -> ExitCode {
    eprintln!("facetscope: {err}");
    ExitCode::from(cli::exit_code(err) as u8)
}

fn run_command(command: Command, args: &RunArgs) -> ExitCode {
    let result = cli::run(command, &args.config, args.options());
    match &result {
        Ok(o) if o.is_partial() => eprintln!("facetscope: {} skipped, see logs", o.skipped),
        Err(e) => eprintln!("facetscope: {e}"),
        Ok(_) => {}
    }
    ExitCode::from(cli::status(&result) as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FACETSCOPE_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    match cli.command {
        Sub::Topk(args) => run_command(Command::Topk, &args),
        Sub::Analyze(args) => run_command(Command::Analyze, &args),
        Sub::Visualize(args) => run_command(Command::Visualize, &args),
        Sub::RfTable { preset, config } => {
            let layers = match config {
                Some(path) => cli::RunConfig::load(&path).map(|c| c.preset.layers()),
                None => Preset::parse(&preset).map(Preset::layers),
            };
            match layers {
                Ok(layers) => {
                    print!("{}", rf_table_csv(&layers));
                    ExitCode::SUCCESS
                }
                Err(e) => report(&e),
            }
        }
        Sub::Fixture { out, seed } => match fixture::write_fixture(&out, seed) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => report(&e),
        },
    }
}
