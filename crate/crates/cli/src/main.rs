use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use modno::autodiff::gradcheck::{random_mlp_suite, SUITE_FLOOR, SUITE_STEP};
use modno::bench::{
    emit_table, evaluate_modno, generate_shards, load_modno, run_experiment, save_modno, train_modno_once,
    ExperimentConfig, RunOptions, TableFormat,
};
use modno::datagen::{mean_baseline_error, DatasetShard};
use modno::trainer::CostLedger;

/// Worst per-parameter relative error accepted by `gradcheck`.
const GRADCHECK_TOL: f64 = 1e-6;

#[derive(Parser)]
#[command(
    name = "modno",
    version,
    about = "Shared-branch multi-operator DeepONet: data generation, training and experiment sweeps",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test shards for every operator of a config.
    Datagen(DatagenArgs),
    /// Train one shared-branch model at a single q.
    Train(TrainArgs),
    /// Score a checkpoint on test shards.
    Eval(EvalArgs),
    /// Full experiment: data, single DONs, the q sweep, tables and plots.
    Sweep(SweepArgs),
    /// Print the training-cost ledger of a config.
    Cost(CostArgs),
    /// Finite-difference check of the backward pass on random networks.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file, or a preset name (exp1 ... exp5).
    #[arg(long)]
    config: String,
    /// Overrides the data, initialization and trainer seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DatagenArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    /// Directory with shards written by `datagen`; generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Shared data fraction (default: first entry of the config sweep).
    #[arg(long)]
    q: Option<f64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory holding `op{i}_test.bin`.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Comma-separated shared data fractions replacing the config sweep.
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct CostArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<f64>>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    cases: usize,
}

fn load_config(args: &ConfigArgs) -> modno::Result<ExperimentConfig> {
    let path = Path::new(&args.config);
    let mut cfg = if path.exists() {
        ExperimentConfig::from_json(&fs::read_to_string(path)?)?
    } else {
        ExperimentConfig::preset(&args.config).map_err(|_| {
            modno::Error::Config(format!("{} is neither a config file nor a preset name", args.config))
        })?
    };
    if let Some(seed) = args.seed {
        cfg.seeds.data = seed;
        cfg.seeds.init = seed;
        cfg.train.rng_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn shard_path(dir: &Path, op: usize, split: &str) -> PathBuf {
    dir.join(format!("op{op}_{split}.bin"))
}

fn load_split(dir: &Path, n: usize, split: &str) -> modno::Result<Vec<DatasetShard>> {
    (0..n).map(|i| DatasetShard::load(&shard_path(dir, i, split))).collect()
}

fn datagen(a: DatagenArgs) -> modno::Result<()> {
    let cfg = load_config(&a.cfg)?;
    fs::create_dir_all(&a.out)?;
    let (train, test) = generate_shards(&cfg, a.threads)?;
    for (i, (tr, te)) in train.iter().zip(&test).enumerate() {
        tr.save(&shard_path(&a.out, i, "train"))?;
        te.save(&shard_path(&a.out, i, "test"))?;
        println!(
            "op{i} {}: {} train / {} test functions, {} queries, dt {:e}, mean baseline {:.2}%",
            cfg.operators[i].label,
            tr.len(),
            te.len(),
            tr.points.rows(),
            tr.dt,
            100.0 * mean_baseline_error(tr, te)?
        );
    }
    fs::write(a.out.join("config.json"), cfg.to_json()?)?;
    Ok(())
}

fn train(a: TrainArgs) -> modno::Result<()> {
    let cfg = load_config(&a.cfg)?;
    let q = a.q.unwrap_or_else(|| cfg.q_values.first().copied().unwrap_or(1.0));
    let (train, test) = match &a.data {
        Some(dir) => (
            load_split(dir, cfg.operators.len(), "train")?,
            load_split(dir, cfg.operators.len(), "test")?,
        ),
        None => generate_shards(&cfg, a.threads)?,
    };
    let (model, hist, encoding) = train_modno_once(&cfg, &train, q)?;
    fs::create_dir_all(&a.out)?;
    save_modno(&a.out.join("modno.ckpt"), &model, &cfg, &encoding)?;
    let mut f = std::io::BufWriter::new(fs::File::create(a.out.join("history.csv"))?);
    hist.write_csv(&mut f)?;
    f.flush()?;
    for (i, e) in evaluate_modno(&model, &encoding, &test)?.iter().enumerate() {
        println!("{}: {:.4}%", cfg.operators[i].label, 100.0 * e);
    }
    Ok(())
}

fn eval(a: EvalArgs) -> modno::Result<()> {
    let (model, header) = load_modno(&a.checkpoint)?;
    let test = load_split(&a.data, header.n_operators, "test")?;
    for (label, e) in header.labels.iter().zip(evaluate_modno(&model, &header.encoding, &test)?) {
        println!("{label}: {:.4}%", 100.0 * e);
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> modno::Result<()> {
    let mut cfg = load_config(&a.cfg)?;
    if let Some(q) = a.q {
        cfg.q_values = q;
        cfg.validate()?;
    }
    let opts = RunOptions {
        out_root: a.out,
        threads: a.threads,
        verbose: !a.quiet,
    };
    let report = run_experiment(&cfg, &opts)?;
    print!("{}", emit_table(&report.table, TableFormat::Markdown));
    println!("results in {}", report.run_dir.display());
    Ok(())
}

fn cost(a: CostArgs) -> modno::Result<()> {
    let cfg = load_config(&a.cfg)?;
    let qs = a.q.unwrap_or_else(|| cfg.q_values.clone());
    let counts: Vec<Vec<i64>> = cfg
        .operators
        .iter()
        .map(|op| vec![op.train_mesh.len() as i64; cfg.n_train])
        .collect();
    for q in qs {
        let ledger = CostLedger::matched(&counts, cfg.train.epochs as i64, q)?;
        let rel = if ledger.c_mol == ledger.c_sol {
            "=="
        } else if ledger.c_mol < ledger.c_sol {
            "<"
        } else {
            ">"
        };
        println!(
            "q={q}: c_mol {rel} c_sol ({} vs {}), ratio {}",
            ledger.c_mol,
            ledger.c_sol,
            ledger.ratio()
        );
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> modno::Result<bool> {
    let cases = random_mlp_suite(a.seed, a.cases)?;
    let mut worst: f64 = 0.0;
    for (i, c) in cases.iter().enumerate() {
        println!("case {i}: sizes {:?} {:?} max rel err {:e}", c.layer_sizes, c.activation, c.max_relative_error);
        worst = worst.max(c.max_relative_error);
    }
    let ok = worst < GRADCHECK_TOL;
    println!(
        "worst {worst:e} (h = {SUITE_STEP:e}, floor {SUITE_FLOOR:e}, tolerance {GRADCHECK_TOL:e}): {}",
        if ok { "ok" } else { "FAILED" }
    );
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Datagen(a) => datagen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Cost(a) => cost(a),
        Command::Gradcheck(a) => match gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(2),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
