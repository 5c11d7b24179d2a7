//! `knar`: command-line front end wiring the pipeline together.
//!
//! Subcommands compose via JSONL files or stdin/stdout (`-`):
//! generate -> solve -> traj/softrecon -> eval, plus the gradcheck and
//! homocheck verification commands and the subset-sum/partition reducers.
//!
//! Exit codes: 0 on success, 1 on validation/schema/IO errors, 2 when a
//! verification subcommand exceeds its tolerance.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use knar_core::dataset::{
    read_dataset, write_dataset, DatasetRecord, DecisionTableRecord, PredictionRecord,
    ReductionInputRecord, SoftReconRecord, SolvedInstance,
};
use knar_core::instance::{
    reduce_partition, reduce_subset_sum, sample_instances, KnapsackInstance, SamplerConfig,
};
use knar_core::metrics::{evaluate, GreedyMode};
use knar_core::oracle::brute_force;
use knar_core::processor::{
    homogeneity_check, init_params, Aggregation, InputWidths, ProcessorConfig,
};
use knar_core::softrecon::{gradient_check, probs_from_tables, soft_reconstruct};
use knar_core::trajectory::{
    construction_trajectory, reconstruction_trajectory, TrajectoryRecord,
};

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_TOLERANCE: u8 = 2;

/// Largest item count `solve --brute-force-verify` cross-checks.
const VERIFY_MAX_ITEMS: usize = 12;

#[derive(Parser)]
#[command(
    name = "knar",
    version,
    about = "Knapsack DP pipeline: datasets, oracles, trajectories, and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample knapsack instances to JSONL
    Generate(GenerateArgs),
    /// Solve instances exactly: DP tables, decision tables, and optima
    Solve(SolveArgs),
    /// Emit hint trajectories from solved instances
    Traj(TrajArgs),
    /// Differentiable reconstruction over decision probability tables
    Softrecon(SoftreconArgs),
    /// Compare analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Check positive homogeneity of the message-passing processor
    Homocheck(HomocheckArgs),
    /// Reduce subset-sum or partition inputs to knapsack instances
    Reduce(ReduceArgs),
    /// Score predictions against solved ground truth
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Items per instance
    #[arg(long)]
    n: usize,
    /// Knapsack capacity
    #[arg(long)]
    capacity: u64,
    #[arg(long, default_value_t = 8)]
    w_max: u32,
    #[arg(long, default_value_t = 0.0)]
    value_low: f64,
    #[arg(long, default_value_t = 1.0)]
    value_high: f64,
    /// Multiplier on the value interval (10 for the scaled-value tests)
    #[arg(long, default_value_t = 1.0)]
    value_scale: f64,
    /// Number of instances
    #[arg(long, default_value_t = 64)]
    num: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long, default_value = "-")]
    output: String,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(short, long, default_value = "-")]
    input: String,
    #[arg(short, long, default_value = "-")]
    output: String,
    /// Cross-check the DP optimum against brute force (instances with
    /// n <= 12 only; larger ones are reported as skipped)
    #[arg(long)]
    brute_force_verify: bool,
    /// Absolute tolerance for the brute-force cross-check
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Phase {
    Construct,
    Reconstruct,
}

#[derive(Args)]
struct TrajArgs {
    /// Which phase's hints to emit
    #[arg(long, value_enum)]
    phase: Phase,
    #[arg(short, long, default_value = "-")]
    input: String,
    #[arg(short, long, default_value = "-")]
    output: String,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct SoftreconArgs {
    /// Solved instances (ground-truth shapes and, optionally, tables)
    #[arg(short, long, default_value = "-")]
    input: String,
    /// Decision probability tables predicted by an external model
    #[arg(long, conflicts_with = "use_true_decisions")]
    decision_tables: Option<String>,
    /// Run the deterministic-reconstruction baseline on the true tables
    #[arg(long)]
    use_true_decisions: bool,
    #[arg(short, long, default_value = "-")]
    output: String,
    /// Also write the soft selections as a prediction JSONL for `eval`
    #[arg(long)]
    predictions_out: Option<String>,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Largest item count drawn per trial
    #[arg(long, default_value_t = 6)]
    n: usize,
    /// Largest capacity drawn per trial
    #[arg(long, default_value_t = 10)]
    capacity: u64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-6)]
    h: f64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Max,
    Sum,
}

#[derive(Args)]
struct HomocheckArgs {
    #[arg(long, default_value_t = 128)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 8)]
    num_nodes: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Comma-separated positive scale factors
    #[arg(long, default_value = "0.5,2,10,100", value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    use_bias: bool,
    #[arg(long)]
    use_layer_norm: bool,
    #[arg(long)]
    use_gating: bool,
    #[arg(long, value_enum, default_value_t = AggregationArg::Max)]
    aggregation: AggregationArg,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Problem {
    SubsetSum,
    Partition,
}

#[derive(Args)]
struct ReduceArgs {
    /// Source problem kind
    #[arg(long, value_enum)]
    problem: Problem,
    #[arg(short, long, default_value = "-")]
    input: String,
    #[arg(short, long, default_value = "-")]
    output: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum GreedyModeArg {
    Skip,
    Stop,
}

#[derive(Args)]
struct EvalArgs {
    /// Solved ground-truth JSONL
    #[arg(long)]
    truth: String,
    /// Prediction JSONL with per-item probabilities
    #[arg(long)]
    predictions: String,
    #[arg(short, long, default_value = "-")]
    output: String,
    /// How greedy discretization treats items that no longer fit
    #[arg(long, value_enum, default_value_t = GreedyModeArg::Skip)]
    greedy_mode: GreedyModeArg,
}

fn main() -> ExitCode {
    // usage errors exit 1 like any other validation error; 2 stays
    // reserved for exceeded tolerances
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Generate(args) => cmd_generate(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Traj(args) => cmd_traj(args),
        Command::Softrecon(args) => cmd_softrecon(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Homocheck(args) => cmd_homocheck(args),
        Command::Reduce(args) => cmd_reduce(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

/// `--seed` flag, then the KNAR_SEED environment variable, then 0.
fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("KNAR_SEED") {
        Ok(text) => text
            .parse()
            .map_err(|_| anyhow!("KNAR_SEED must be an unsigned integer, got {text:?}")),
        Err(_) => Ok(0),
    }
}

fn read_records<R: DatasetRecord>(source: &str) -> Result<Vec<R>> {
    let records = if source == "-" {
        read_dataset(io::stdin().lock())
    } else {
        let file = File::open(source).with_context(|| format!("cannot open {source}"))?;
        read_dataset(BufReader::new(file))
    };
    records.with_context(|| format!("reading {source}"))
}

/// Writes records through a temp file in the destination directory so a
/// failure never leaves a partial output behind.
fn write_records<R: DatasetRecord>(records: &[R], destination: &str) -> Result<usize> {
    if destination == "-" {
        let stdout = io::stdout();
        let count = write_dataset(records, stdout.lock())?;
        return Ok(count);
    }
    let path = Path::new(destination);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or_else(|| Path::new(".")))
        .with_context(|| format!("cannot create temp file near {destination}"))?;
    let count = write_dataset(records, &mut tmp)?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| anyhow!("cannot persist {destination}: {}", e.error))?;
    Ok(count)
}

fn write_text(text: &str, destination: &str) -> Result<()> {
    if destination == "-" {
        let mut stdout = io::stdout().lock();
        stdout.write_all(text.as_bytes())?;
        stdout.write_all(b"\n")?;
        return Ok(());
    }
    let path = PathBuf::from(destination);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or_else(|| Path::new(".")))
        .with_context(|| format!("cannot create temp file near {destination}"))?;
    tmp.write_all(text.as_bytes())?;
    tmp.write_all(b"\n")?;
    tmp.persist(&path)
        .map_err(|e| anyhow!("cannot persist {destination}: {}", e.error))?;
    Ok(())
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("cannot build worker pool")
}

fn cmd_generate(args: GenerateArgs) -> Result<u8> {
    let config = SamplerConfig {
        n: args.n,
        capacity: args.capacity,
        w_max: args.w_max,
        value_low: args.value_low,
        value_high: args.value_high,
        value_scale: args.value_scale,
        num_samples: args.num,
        seed: resolve_seed(args.seed)?,
    };
    let instances = sample_instances(&config)?;
    let count = write_records(&instances, &args.output)?;
    eprintln!("generated {count} instances");
    Ok(EXIT_OK)
}

fn cmd_solve(args: SolveArgs) -> Result<u8> {
    let instances: Vec<KnapsackInstance> = read_records(&args.input)?;
    let pool = thread_pool(args.jobs)?;
    let solved: Vec<SolvedInstance> = pool.install(|| {
        instances
            .into_par_iter()
            .map(SolvedInstance::solve)
            .collect()
    });

    let mut exit = EXIT_OK;
    if args.brute_force_verify {
        let diffs: Vec<Option<f64>> = pool.install(|| {
            solved
                .par_iter()
                .map(|s| {
                    if s.instance.n() > VERIFY_MAX_ITEMS {
                        return None;
                    }
                    let reference = brute_force(&s.instance).expect("size checked");
                    Some((s.solution.total_value - reference.total_value).abs())
                })
                .collect()
        });
        let skipped = diffs.iter().filter(|d| d.is_none()).count();
        let mismatches: Vec<(&SolvedInstance, f64)> = solved
            .iter()
            .zip(&diffs)
            .filter_map(|(s, d)| d.filter(|&d| d > args.tol).map(|d| (s, d)))
            .collect();
        let verified = diffs.len() - skipped - mismatches.len();
        for (s, diff) in &mismatches {
            eprintln!(
                "verification failed for {}: |dp - brute| = {diff:.3e}",
                s.instance.id()
            );
        }
        if skipped > 0 {
            eprintln!(
                "{verified}/{} verified ({skipped} skipped: n > {VERIFY_MAX_ITEMS})",
                diffs.len() - skipped
            );
        } else {
            eprintln!("{verified}/{} verified", diffs.len());
        }
        if !mismatches.is_empty() {
            exit = EXIT_TOLERANCE;
        }
    }

    let count = write_records(&solved, &args.output)?;
    eprintln!("solved {count} instances");
    Ok(exit)
}

fn cmd_traj(args: TrajArgs) -> Result<u8> {
    let solved: Vec<SolvedInstance> = read_records(&args.input)?;
    let pool = thread_pool(args.jobs)?;
    let records: Result<Vec<TrajectoryRecord>> = pool.install(|| {
        solved
            .par_iter()
            .map(|s| match args.phase {
                Phase::Construct => construction_trajectory(&s.instance, &s.tables)
                    .map(TrajectoryRecord::Construct)
                    .map_err(Into::into),
                Phase::Reconstruct => {
                    reconstruction_trajectory(&s.instance, &s.tables.decision_table)
                        .map(TrajectoryRecord::Reconstruct)
                        .map_err(Into::into)
                }
            })
            .collect()
    });
    let count = write_records(&records?, &args.output)?;
    eprintln!("wrote {count} trajectories");
    Ok(EXIT_OK)
}

fn cmd_softrecon(args: SoftreconArgs) -> Result<u8> {
    let solved: Vec<SolvedInstance> = read_records(&args.input)?;

    let tables: Vec<knar_core::DecisionProbTable> = if args.use_true_decisions {
        solved
            .iter()
            .map(|s| probs_from_tables(&s.tables))
            .collect()
    } else {
        let source = args
            .decision_tables
            .as_deref()
            .ok_or_else(|| anyhow!("pass --decision-tables FILE or --use-true-decisions"))?;
        let records: Vec<DecisionTableRecord> = read_records(source)?;
        let mut by_id: std::collections::HashMap<&str, &DecisionTableRecord> =
            std::collections::HashMap::new();
        for record in &records {
            if by_id.insert(record.id.as_str(), record).is_some() {
                bail!("duplicate decision table for id {:?}", record.id);
            }
        }
        solved
            .iter()
            .map(|s| {
                by_id
                    .get(s.instance.id())
                    .map(|r| r.probs.clone())
                    .ok_or_else(|| anyhow!("no decision table for id {:?}", s.instance.id()))
            })
            .collect::<Result<_>>()?
    };

    let pool = thread_pool(args.jobs)?;
    let results: Result<Vec<SoftReconRecord>> = pool.install(|| {
        solved
            .par_iter()
            .zip(&tables)
            .map(|(s, probs)| {
                let result = soft_reconstruct(&s.instance, probs)
                    .with_context(|| format!("soft reconstruction of {}", s.instance.id()))?;
                Ok(SoftReconRecord {
                    id: s.instance.id().to_string(),
                    row_mass_error: result.row_mass_error(),
                    soft_selected: result.soft_selected,
                })
            })
            .collect()
    });
    let results = results?;

    if let Some(dest) = &args.predictions_out {
        let predictions: Vec<PredictionRecord> = results
            .iter()
            .map(|r| PredictionRecord {
                id: r.id.clone(),
                item_probs: r.soft_selected.clone(),
            })
            .collect();
        write_records(&predictions, dest)?;
    }
    let count = write_records(&results, &args.output)?;
    eprintln!("reconstructed {count} instances");
    Ok(EXIT_OK)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<u8> {
    let report = gradient_check(
        args.n,
        args.capacity,
        args.trials,
        args.h,
        resolve_seed(args.seed)?,
    )?;
    println!("{}", serde_json::to_string(&report)?);
    if report.max_rel_err < args.tol {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "gradient check exceeded tolerance: {:.3e} >= {:.3e}",
            report.max_rel_err, args.tol
        );
        Ok(EXIT_TOLERANCE)
    }
}

fn cmd_homocheck(args: HomocheckArgs) -> Result<u8> {
    if args.alphas.is_empty() || args.alphas.iter().any(|&a| !a.is_finite() || a <= 0.0) {
        bail!("scale factors must be positive and finite");
    }
    let config = ProcessorConfig {
        hidden_dim: args.hidden_dim,
        use_bias: args.use_bias,
        use_layer_norm: args.use_layer_norm,
        use_gating: args.use_gating,
        aggregation: match args.aggregation {
            AggregationArg::Max => Aggregation::Max,
            AggregationArg::Sum => Aggregation::Sum,
        },
    };
    let widths = InputWidths {
        node: 4,
        edge: 3,
        graph: 2,
    };
    let seed = resolve_seed(args.seed)?;
    let params = init_params(&config, widths, seed);
    let deviation = homogeneity_check(
        &params,
        &config,
        args.num_nodes,
        args.trials,
        &args.alphas,
        seed.wrapping_add(1),
    )?;
    let pass = deviation < args.tol;
    println!(
        "{}",
        serde_json::json!({
            "trials": args.trials,
            "alphas": args.alphas,
            "max_deviation": deviation,
            "tolerance": args.tol,
            "use_bias": args.use_bias,
            "use_layer_norm": args.use_layer_norm,
            "use_gating": args.use_gating,
            "pass": pass,
        })
    );
    if pass {
        Ok(EXIT_OK)
    } else {
        eprintln!("homogeneity deviation {deviation:.3e} >= {:.3e}", args.tol);
        Ok(EXIT_TOLERANCE)
    }
}

fn cmd_reduce(args: ReduceArgs) -> Result<u8> {
    let inputs: Vec<ReductionInputRecord> = read_records(&args.input)?;
    let mut instances = Vec::with_capacity(inputs.len());
    let mut odd_totals = 0usize;
    for record in &inputs {
        match args.problem {
            Problem::SubsetSum => {
                let target = record.target.ok_or_else(|| {
                    anyhow!(
                        "record {:?} has no target (required for subset-sum)",
                        record.id
                    )
                })?;
                instances.push(reduce_subset_sum(
                    record.id.clone(),
                    &record.numbers,
                    target,
                )?);
            }
            Problem::Partition => {
                let (instance, feasible_parity) =
                    reduce_partition(record.id.clone(), &record.numbers)?;
                odd_totals += usize::from(feasible_parity == 0);
                instances.push(instance);
            }
        }
    }
    let count = write_records(&instances, &args.output)?;
    match args.problem {
        Problem::SubsetSum => eprintln!("reduced {count} subset-sum records"),
        Problem::Partition => eprintln!(
            "reduced {count} partition records ({odd_totals} with odd totals, parity-infeasible)"
        ),
    }
    Ok(EXIT_OK)
}

fn cmd_eval(args: EvalArgs) -> Result<u8> {
    let truths: Vec<SolvedInstance> = read_records(&args.truth)?;
    let predictions: Vec<PredictionRecord> = read_records(&args.predictions)?;
    let mode = match args.greedy_mode {
        GreedyModeArg::Skip => GreedyMode::SkipAndContinue,
        GreedyModeArg::Stop => GreedyMode::StopAtFirstMisfit,
    };
    let report = evaluate(&truths, &predictions, mode)?;
    write_text(&serde_json::to_string_pretty(&report)?, &args.output)?;
    Ok(EXIT_OK)
}
