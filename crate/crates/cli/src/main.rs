use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use harbor_core::driver::{self, load_meta_history, oracle_front, Format, History, RunConfig};
use harbor_core::evaluator::{serve_simulator, FidelityMode, ProcessAdapter};
use harbor_core::{Adapter, FlagSpace, SimSpec, Simulator, TaskSuite};

#[derive(Parser)]
#[command(name = "harbor", version, about = "Budgeted search over flag-gated harness configurations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search a flag space and write the run history.
    Run(Box<RunArgs>),
    /// Render the result stored in a history file.
    Report {
        #[arg(long)]
        history: PathBuf,
        #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
        format: OutputFormat,
    },
    /// Enumerate a simulator's true safe front (small spaces only).
    Oracle {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        sim: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 1e9)]
        budget_deploy: f64,
        #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
        format: OutputFormat,
    },
    /// Print a simulator's task suite as a suite document.
    Suite {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        sim: PathBuf,
    },
    /// Serve a simulator over the adapter protocol on stdin/stdout.
    ServeSim {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        sim: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Text,
    Machine,
}

impl From<OutputFormat> for Format {
    fn from(f: OutputFormat) -> Format {
        match f {
            OutputFormat::Text => Format::Text,
            OutputFormat::Machine => Format::Machine,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetMode {
    PrefixShuffle,
    Stratified,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    space: PathBuf,
    #[arg(long, conflicts_with = "adapter", required_unless_present = "adapter")]
    sim: Option<PathBuf>,
    /// Shell command speaking the adapter protocol.
    #[arg(long)]
    adapter: Option<String>,
    /// Task suite document; required with --adapter.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Run configuration document; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    history: PathBuf,
    #[arg(long, num_args = 1..)]
    meta: Vec<PathBuf>,
    #[arg(long)]
    budget_search: Option<f64>,
    #[arg(long)]
    budget_deploy: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Comma-separated, ascending, ending at the full suite size.
    #[arg(long, value_delimiter = ',')]
    fidelities: Option<Vec<usize>>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    regions: Option<usize>,
    #[arg(long)]
    sobol: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long, value_enum)]
    fidelity_mode: Option<SubsetMode>,
    #[arg(long)]
    lambda_meta: Option<f64>,
    #[arg(long)]
    lambda_main: Option<f64>,
    #[arg(long)]
    lambda_cross: Option<f64>,
    #[arg(long)]
    r0: Option<usize>,
    #[arg(long)]
    r_max: Option<usize>,
    #[arg(long)]
    tau_succ: Option<u32>,
    #[arg(long)]
    tau_fail: Option<u32>,
    #[arg(long)]
    samples: Option<usize>,
    /// Per-task adapter deadline in seconds.
    #[arg(long, default_value_t = 600)]
    task_timeout: u64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

impl RunArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let mut rc = match &self.config {
            Some(p) => toml::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident <- $arg:ident),* $(,)?) => {
                $(if let Some(v) = self.$arg.clone() { rc.$field = v; })*
            };
        }
        set!(
            budget_search <- budget_search,
            budget_deploy <- budget_deploy,
            delta <- delta,
            eta <- eta,
            fidelities <- fidelities,
            batch <- batch,
            regions <- regions,
            sobol <- sobol,
            seed <- seed,
            parallelism <- parallel,
            lambda_meta <- lambda_meta,
            r0 <- r0,
            tau_succ <- tau_succ,
            tau_fail <- tau_fail,
            samples <- samples,
        );
        if let Some(v) = self.lambda_main {
            rc.penalties.main = v;
        }
        if let Some(v) = self.lambda_cross {
            rc.penalties.cross = v;
        }
        if self.r_max.is_some() {
            rc.r_max = self.r_max;
        }
        if let Some(m) = self.fidelity_mode {
            rc.fidelity_mode = match m {
                SubsetMode::PrefixShuffle => FidelityMode::PrefixShuffle,
                SubsetMode::Stratified => FidelityMode::Stratified,
            };
        }
        Ok(rc)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_space(path: &Path) -> Result<FlagSpace> {
    FlagSpace::parse(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_sim(space: &FlagSpace, path: &Path) -> Result<Simulator> {
    let spec = SimSpec::parse(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Simulator::new(spec, space)?)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let space = load_space(&args.space)?;
    let rc = args.run_config()?;
    let sim;
    let process;
    let (adapter, mut suite): (&dyn Adapter, Option<TaskSuite>) = match (&args.sim, &args.adapter) {
        (Some(p), _) => {
            sim = load_sim(&space, p)?;
            let suite = sim.suite();
            (&sim, Some(suite))
        }
        (None, Some(cmd)) => {
            process = ProcessAdapter::new(cmd.as_str()).with_timeout(Duration::from_secs(args.task_timeout), 1.0);
            (&process, None)
        }
        (None, None) => bail!("one of --sim or --adapter is required"),
    };
    if let Some(p) = &args.suite {
        suite = Some(TaskSuite::parse(&read(p)?).with_context(|| format!("parsing {}", p.display()))?);
    }
    let Some(suite) = suite else { bail!("--adapter needs a --suite document") };
    let meta = load_meta_history(&args.meta, &space, rc.lambda_meta)?;

    let file = File::create(&args.history).with_context(|| format!("creating {}", args.history.display()))?;
    let rr = driver::run(&rc, &space, adapter, &suite, &meta, BufWriter::new(file))?;
    print!("{}", driver::report(&rr, args.format.into())?);
    Ok(())
}

fn cmd_report(history: &Path, format: OutputFormat) -> Result<()> {
    let h = History::read(history).with_context(|| format!("reading {}", history.display()))?;
    let Some(rr) = h.result() else { bail!("{} has no result line; the run did not finish", history.display()) };
    print!("{}", driver::report(rr, format.into())?);
    Ok(())
}

fn cmd_oracle(space: &Path, sim: &Path, delta: f64, budget_deploy: f64, format: OutputFormat) -> Result<()> {
    let space = load_space(space)?;
    let sim = load_sim(&space, sim)?;
    let front = oracle_front(&sim, delta, budget_deploy)?;
    let mut out = io::stdout().lock();
    match format {
        OutputFormat::Machine => writeln!(out, "{}", serde_json::to_string_pretty(&front)?)?,
        OutputFormat::Text => {
            writeln!(out, "Enumerated {} configurations", front.enumerated)?;
            writeln!(out, "Baseline mean {:.4}, safety threshold {:.4}", front.baseline_mean, front.threshold)?;
            writeln!(
                out,
                "Reference ({:.4}, {:.4}), hypervolume {:.6}",
                front.reference.0, front.reference.1, front.hypervolume
            )?;
            writeln!(out, "{:>8}  {:>8}  on-flags", "mean", "cost")?;
            for p in &front.points {
                let on: Vec<String> = p
                    .config
                    .iter()
                    .filter(|(name, v)| {
                        let i = space.index_of(name).expect("front flags come from the space");
                        space.flag(i).index_of(v).is_some_and(|idx| idx != space.flag(i).default)
                    })
                    .map(|(name, v)| format!("{name}={v}"))
                    .collect();
                writeln!(out, "{:>8.4}  {:>8.4}  {}", p.mean, p.cost, on.join(" "))?;
            }
        }
    }
    Ok(())
}

fn cmd_suite(space: &Path, sim: &Path) -> Result<()> {
    let space = load_space(space)?;
    let sim = load_sim(&space, sim)?;
    print!("{}", toml::to_string(&sim.suite())?);
    Ok(())
}

fn cmd_serve(space: &Path, sim: &Path) -> Result<()> {
    let space = load_space(space)?;
    let sim = load_sim(&space, sim)?;
    serve_simulator(&sim, io::stdin().lock(), io::stdout().lock())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(*args),
        Command::Report { history, format } => cmd_report(&history, format),
        Command::Oracle { space, sim, delta, budget_deploy, format } => {
            cmd_oracle(&space, &sim, delta, budget_deploy, format)
        }
        Command::Suite { space, sim } => cmd_suite(&space, &sim),
        Command::ServeSim { space, sim } => cmd_serve(&space, &sim),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("harbor: {e:#}");
            ExitCode::FAILURE
        }
    }
}
