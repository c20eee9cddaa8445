use std::path::PathBuf;
use std::process::ExitCode;

use bregproj_cli::{cmd_bench, cmd_ot, cmd_rates, cmd_solve, Flags};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bregproj", version, about = "Sequential Bregman projections for convex feasibility")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the projection method and write trace.jsonl and summary.json.
    Solve(Common),
    /// Local rate constants at x* as JSON on stdout.
    Rates(Common),
    /// Monte-Carlo comparison of random and adaptive control.
    Bench(Common),
    /// Entropic transport with a named algorithm.
    Ot(Common),
}

#[derive(Args)]
struct Common {
    problem: PathBuf,
    /// cyclic, greedy, random or adaptive.
    #[arg(long)]
    control: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Stopping residual.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    trace_every: Option<usize>,
    /// Record D_C(x_k) at every step.
    #[arg(long)]
    dc_trace: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write dc.csv (implies --dc-trace).
    #[arg(long)]
    csv: bool,
    /// rows, blocks:<tau> or gaussian:<s>,<tau>.
    #[arg(long)]
    sketch: Option<String>,
    /// Observed trace.jsonl to compare against (rates).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Paired trials per control (bench).
    #[arg(long)]
    trials: Option<usize>,
    /// sinkhorn, greenkhorn, random or adaptive (ot).
    #[arg(long)]
    algo: Option<String>,
}

impl Common {
    fn flags(&self) -> Flags {
        Flags {
            control: self.control.clone(),
            seed: self.seed,
            max_iter: self.max_iter,
            tol: self.tol,
            trace_every: self.trace_every,
            dc_trace: self.dc_trace,
            out: self.out.clone(),
            csv: self.csv,
            sketch: self.sketch.clone(),
            trace: self.trace.clone(),
            trials: self.trials,
            algo: self.algo.clone(),
        }
    }
}

fn init_threads() {
    if let Some(n) = std::env::var("BREGPROJ_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // an already-built pool is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(c) => cmd_solve(&c.problem, &c.flags()),
        Command::Ot(c) => cmd_ot(&c.problem, &c.flags()),
        Command::Rates(c) => cmd_rates(&c.problem, &c.flags()).map(|s| {
            print!("{s}");
            0
        }),
        Command::Bench(c) => cmd_bench(&c.problem, &c.flags()).map(|s| {
            print!("{s}");
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
