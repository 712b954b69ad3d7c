use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use equiprice::gen::GenConfig;
use equiprice::harness::{
    cmd_bench, cmd_generate, cmd_solve, cmd_trace, BenchArgs, EtaChoice, GenerateArgs, RunSettings,
    SolveArgs, StartRule, TraceArgs, EXIT_INPUT,
};
use equiprice::model::DomainKind;

#[derive(Parser)]
#[command(
    name = "equiprice",
    version,
    about = "Nearest equilibrium prices for two-agent supply/demand models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and write the report as JSON.
    Solve {
        instance: PathBuf,
        /// Report destination (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the per-iteration trace CSV here.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Solve one instance and write only the convergence trace CSV.
    Trace {
        instance: PathBuf,
        /// Trace destination (stdout if omitted).
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Average iterations and solve time over generated instances.
    Bench {
        /// Comma-separated dimensions, paired with --m by position.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        m: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, value_enum, default_value_t = DomainKind::Orthant)]
        domain: DomainKind,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Results CSV (stdout if omitted); a .meta.json sidecar goes next to it.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Run the trials of each row on all cores.
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Write one generated instance as JSON.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, value_enum, default_value_t = DomainKind::Orthant)]
        domain: DomainKind,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunFlags {
    /// First iterate: projection of p0 ("anchor") or of zero ("origin").
    #[arg(long, value_enum, default_value_t = StartRule::Anchor)]
    start: StartRule,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Projection-map step, or "auto" for mu_F.
    #[arg(long, default_value = "auto")]
    eta: EtaChoice,
    #[arg(long, default_value = "sqrt")]
    schedule: String,
    /// Record the map residual every this many iterations.
    #[arg(long, default_value_t = 10)]
    trace_every: usize,
}

impl From<RunFlags> for RunSettings {
    fn from(f: RunFlags) -> Self {
        RunSettings {
            start: f.start,
            eps: f.eps,
            max_iter: f.max_iter,
            eta: f.eta,
            schedule: f.schedule,
            trace_every: f.trace_every,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve {
            instance,
            out,
            trace,
            run,
        } => cmd_solve(&SolveArgs {
            instance,
            out,
            trace,
            settings: run.into(),
        }),
        Command::Trace { instance, csv, run } => cmd_trace(&TraceArgs {
            instance,
            csv,
            settings: run.into(),
        }),
        Command::Bench {
            n,
            m,
            trials,
            domain,
            seed,
            csv,
            parallel,
            run,
        } => cmd_bench(&BenchArgs {
            n_list: n,
            m_list: m,
            trials,
            domain,
            seed,
            csv,
            settings: run.into(),
            parallel,
        }),
        Command::Generate {
            n,
            m,
            domain,
            seed,
            out,
        } => cmd_generate(&GenerateArgs {
            config: GenConfig::new(n, m, domain, seed),
            out,
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INPUT as u8)
        }
    }
}
