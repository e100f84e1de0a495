use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use svd_replay::cli;

#[derive(Parser)]
#[command(name = "svd-replay", version, about = "Continual learning with SVD replay generators")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment config.
    Run { config: PathBuf },
    /// Tabulate finished runs and mark the significant best.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Dump a generator's components and samples as a PGM/PPM grid.
    InspectGenerator {
        store: PathBuf,
        #[arg(long)]
        task: usize,
        #[arg(long)]
        class: usize,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let result = match args.command {
        Command::Run { config } => cli::cmd_run(&config).map(|records| {
            if let Ok(rows) = cli::summarize(&records) {
                print!("{}", cli::format_table(&rows));
            }
        }),
        Command::Compare { dirs } => {
            cli::cmd_compare(&dirs).map(|rows| print!("{}", cli::format_table(&rows)))
        }
        Command::InspectGenerator {
            store,
            task,
            class,
            count,
            out,
            seed,
        } => cli::cmd_inspect_generator(&store, task, class, count, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
