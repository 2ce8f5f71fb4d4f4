use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use psdfact::io::{
    distance_from_values, format_history, format_tensor_history, format_tensor_summary,
    gen_distance, gen_planted, gen_planted_tensor, read_factors, read_matrix, read_tensor,
    write_atomic, write_factors, write_matrix, write_tensor, write_tensor_factors, Summary,
};
use psdfact::measurement::certify;
use psdfact::{
    blockwise_factorize, factorize, normalized_error, objective, tensor_factorize, Error, InitKind,
    SolverConfig,
};

/// Input is unreadable or invalid.
const EXIT_INPUT: u8 = 3;
/// The solver failed.
const EXIT_SOLVER: u8 = 4;

#[derive(Parser)]
#[command(
    name = "psdfact",
    version,
    about = "PSD factorization by matrix multiplicative updates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct SolveArgs {
    /// Input file.
    #[arg(long)]
    input: PathBuf,
    /// Factor size.
    #[arg(long)]
    r: usize,
    /// Block sizes summing to r, e.g. 2,2,1.
    #[arg(long, value_delimiter = ',')]
    blocks: Option<Vec<usize>>,
    #[arg(long, default_value_t = 500)]
    sweeps: usize,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value_t = 1e-8)]
    damping: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stop once the relative objective decrease per sweep drops below this.
    #[arg(long, default_value_t = 0.0)]
    rel_tol: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl SolveArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            r: self.r,
            max_sweeps: self.sweeps,
            damping: self.damping,
            restarts: self.restarts,
            seed: self.seed,
            rel_tol: self.rel_tol,
            init: match &self.blocks {
                Some(sizes) => InitKind::Block(sizes.clone()),
                None => InitKind::RandomPd,
            },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Distance,
    Planted,
    Tensor,
}

#[derive(Subcommand)]
enum Command {
    /// Factorize a nonnegative matrix.
    Factorize(SolveArgs),
    /// Write a synthetic instance.
    Generate {
        #[arg(long, value_enum)]
        kind: Kind,
        /// Points for distance; columns for planted.
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Rows for planted.
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 2)]
        r: usize,
        /// Slice count per mode for tensor.
        #[arg(long, default_value_t = 3)]
        d: usize,
        /// Block sizes of the planted factors.
        #[arg(long, value_delimiter = ',')]
        blocks: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Explicit points for distance, replacing the random draw.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the planted factors.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Print objective and normalized error of a factor file against data.
    Eval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        factors: PathBuf,
    },
    /// Factorize a 3-mode tensor.
    Tensor(SolveArgs),
    /// Monte Carlo check of the domination and trace inequalities.
    Certify {
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

struct Failure {
    code: u8,
    err: Error,
}

fn input_err(err: Error) -> Failure {
    Failure {
        code: EXIT_INPUT,
        err,
    }
}

fn solver_err(err: Error) -> Failure {
    Failure {
        code: EXIT_SOLVER,
        err,
    }
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| input_err(e.into()))
}

fn run_factorize(args: &SolveArgs) -> Result<(), Failure> {
    let x = read_matrix(&args.input).map_err(input_err)?;
    let cfg = args.config();
    cfg.validate().map_err(input_err)?;
    let hist = if args.blocks.is_some() {
        blockwise_factorize(&x, &cfg)
    } else {
        factorize(&x, &cfg)
    }
    .map_err(solver_err)?;
    prepare_out(&args.out)?;
    write_factors(&args.out.join("factors.txt"), &hist.factors).map_err(input_err)?;
    write_atomic(&args.out.join("history.csv"), &format_history(&hist)).map_err(input_err)?;
    let summary = Summary::from_history(&hist, cfg.restarts).format();
    write_atomic(&args.out.join("summary.txt"), &summary).map_err(input_err)?;
    print!("{summary}");
    Ok(())
}

fn run_tensor(args: &SolveArgs) -> Result<(), Failure> {
    let t = read_tensor(&args.input).map_err(input_err)?;
    let cfg = args.config();
    cfg.validate().map_err(input_err)?;
    if args.blocks.is_some() {
        return Err(input_err(Error::InvalidInput(
            "--blocks is not supported for tensors".into(),
        )));
    }
    let hist = tensor_factorize(&t, &cfg).map_err(solver_err)?;
    prepare_out(&args.out)?;
    write_tensor_factors(&args.out.join("factors.txt"), &hist.factors).map_err(input_err)?;
    write_atomic(&args.out.join("history.csv"), &format_tensor_history(&hist))
        .map_err(input_err)?;
    let summary = format_tensor_summary(&hist, cfg.restarts);
    write_atomic(&args.out.join("summary.txt"), &summary).map_err(input_err)?;
    print!("{summary}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_generate(
    kind: Kind,
    n: usize,
    m: usize,
    r: usize,
    d: usize,
    blocks: Option<&[usize]>,
    seed: u64,
    values: Option<&[f64]>,
    out: &Path,
    truth: Option<&Path>,
) -> Result<(), Failure> {
    match kind {
        Kind::Distance => {
            let x = match values {
                Some(v) => distance_from_values(v),
                None => gen_distance(n, seed).map(|(x, _)| x),
            }
            .map_err(input_err)?;
            write_matrix(out, &x).map_err(input_err)?;
        }
        Kind::Planted => {
            let (x, fp) = gen_planted(m, n, r, blocks, seed).map_err(input_err)?;
            write_matrix(out, &x).map_err(input_err)?;
            if let Some(path) = truth {
                write_factors(path, &fp).map_err(input_err)?;
            }
        }
        Kind::Tensor => {
            let (t, tf) = gen_planted_tensor(d, r, seed).map_err(input_err)?;
            write_tensor(out, &t).map_err(input_err)?;
            if let Some(path) = truth {
                write_tensor_factors(path, &tf).map_err(input_err)?;
            }
        }
    }
    Ok(())
}

fn run_eval(input: &Path, factors: &Path) -> Result<(), Failure> {
    let x = read_matrix(input).map_err(input_err)?;
    let fp = read_factors(factors).map_err(input_err)?;
    let f = objective(&x, &fp).map_err(input_err)?;
    let err = normalized_error(&x, &fp).map_err(input_err)?;
    println!("objective={f}\nerr={err}");
    Ok(())
}

fn run_certify(trials: usize, seed: u64) -> Result<ExitCode, Failure> {
    let report = certify(trials, seed).map_err(solver_err)?;
    println!("trials={}", report.trials);
    println!("min_domination_gap={}", report.min_domination_gap);
    println!("min_trace_cs_gap={}", report.min_trace_cs_gap);
    println!("tolerance={}", report.tolerance);
    println!("status={}", if report.passed() { "pass" } else { "fail" });
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Factorize(args) => run_factorize(args).map(|_| ExitCode::SUCCESS),
        Command::Tensor(args) => run_tensor(args).map(|_| ExitCode::SUCCESS),
        Command::Generate {
            kind,
            n,
            m,
            r,
            d,
            blocks,
            seed,
            values,
            out,
            truth,
        } => run_generate(
            *kind,
            *n,
            *m,
            *r,
            *d,
            blocks.as_deref(),
            *seed,
            values.as_deref(),
            out,
            truth.as_deref(),
        )
        .map(|_| ExitCode::SUCCESS),
        Command::Eval { input, factors } => run_eval(input, factors).map(|_| ExitCode::SUCCESS),
        Command::Certify { trials, seed } => run_certify(*trials, *seed),
    };
    match result {
        Ok(code) => code,
        Err(Failure { code, err }) => {
            eprintln!("error: {err}");
            ExitCode::from(code)
        }
    }
}
