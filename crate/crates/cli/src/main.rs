use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use weighted_eps::manifest::{generate_synthetic, save_manifest, SyntheticProfile};
use weighted_eps::metrics::Aggregate;
use weighted_eps::netsim::{DEFAULT_BANDWIDTH_BYTES_PER_SEC, DEFAULT_LOSS_RATE, DEFAULT_ONE_WAY_DELAY_MS};
use weighted_eps::scheduler::DEFAULT_QUANTUM;
use weighted_eps::{load_manifest, LinkParams, Quantum, Strategy, Urgency};
use weighted_eps_cli::{describe_manifest, run_sweep, ExperimentPlan, StrategyKind, DEFAULT_ITERATIONS};

#[derive(Parser)]
#[command(name = "eps-sweep", version, about = "Weighted HTTP/3 stream scheduling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every strategy on every manifest and write CSV artifacts.
    Sweep(SweepArgs),
    /// Print a one-line summary of each manifest.
    Describe {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
    },
    /// Write a synthetic manifest.
    Generate(GenerateArgs),
}

#[derive(clap::Args)]
struct SweepArgs {
    #[arg(long = "manifest", required = true, num_args = 1..)]
    manifests: Vec<PathBuf>,
    /// sequential-fifo, sequential-urgency, round-robin or weighted; all by default.
    #[arg(long = "strategy", num_args = 1..)]
    strategies: Vec<StrategyKind>,
    /// Comma-separated alpha values for the weighted strategy.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iterations: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BANDWIDTH_BYTES_PER_SEC)]
    bandwidth: u64,
    #[arg(long, default_value_t = DEFAULT_ONE_WAY_DELAY_MS)]
    delay: f64,
    #[arg(long, default_value_t = DEFAULT_LOSS_RATE)]
    loss: f64,
    #[arg(long, default_value_t = DEFAULT_QUANTUM)]
    quantum: u64,
    /// Strategy label the others are compared against, e.g. round-robin or weighted-a0.5.
    #[arg(long, default_value = "sequential-fifo")]
    baseline: Strategy,
    #[arg(long)]
    static_weights: bool,
    /// How per-site improvements are combined: mean or median.
    #[arg(long, default_value = "mean")]
    aggregate: Aggregate,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct GenerateArgs {
    #[arg(long)]
    resources: usize,
    #[arg(long)]
    bytes: u64,
    /// Urgency mix as level:fraction pairs, e.g. 0:0.1,3:0.5,7:0.4
    #[arg(long, value_delimiter = ',', required = true)]
    mix: Vec<String>,
    #[arg(long, default_value_t = 1)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Sweep(args) => sweep(args),
        Command::Describe { manifests } => {
            for path in manifests {
                match load_manifest(&path) {
                    Ok(m) => println!("{}", describe_manifest(&m)),
                    Err(e) => {
                        eprintln!("error: {}: {e}", path.display());
                        return ExitCode::from(1);
                    }
                }
            }
            ExitCode::SUCCESS
        }
        Command::Generate(args) => generate(args),
    }
}

fn sweep(args: SweepArgs) -> ExitCode {
    let quantum = match Quantum::new(args.quantum) {
        Ok(q) => q,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let mut plan = ExperimentPlan::new(args.manifests, args.out);
    if !args.strategies.is_empty() {
        plan.strategies = args.strategies;
    }
    plan.alphas = args.alpha;
    plan.iterations = args.iterations;
    plan.base_seed = args.seed;
    plan.link = LinkParams {
        bandwidth_bytes_per_sec: args.bandwidth,
        one_way_delay_ms: args.delay,
        loss_rate: args.loss,
        seed: 0,
    };
    plan.quantum = quantum;
    plan.baseline = args.baseline;
    plan.static_weights = args.static_weights;
    plan.aggregate = args.aggregate;

    match run_sweep(&plan) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            println!(
                "{} runs, {} files written to {}",
                outcome.runs,
                outcome.files.len(),
                plan.output_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn generate(args: GenerateArgs) -> ExitCode {
    let mut urgency_mix = std::collections::BTreeMap::new();
    for pair in &args.mix {
        let parsed = pair.split_once(':').and_then(|(u, f)| {
            let u = Urgency::new(u.trim().parse().ok()?).ok()?;
            Some((u, f.trim().parse::<f64>().ok()?))
        });
        match parsed {
            Some((u, f)) => {
                urgency_mix.insert(u, f);
            }
            None => {
                eprintln!("error: bad mix entry {pair:?} (expected level:fraction)");
                return ExitCode::from(1);
            }
        }
    }
    let profile = SyntheticProfile {
        resource_count: args.resources,
        total_bytes: args.bytes,
        urgency_mix,
        depth: args.depth,
    };
    let manifest = match generate_synthetic(&profile, args.seed) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = save_manifest(&manifest, &args.out) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    println!("{}", describe_manifest(&manifest));
    ExitCode::SUCCESS
}
