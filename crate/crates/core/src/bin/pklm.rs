use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pklm::bench::{run_bench, write_bench_csv, BenchGrid};
use pklm::data::{load_csv, CsvOptions};
use pklm::perm_test::{pklm_test, TestConfig};
use pklm::projection::ClassReduction;
use pklm::report::ReportDocument;
use pklm::rng::substream;
use pklm::synth::{partial_mar_example, simulate, yuan_example, Case, Mechanism, SimSpec};

#[derive(Parser)]
#[command(name = "pklm", version, about = "Classifier-based permutation test of MCAR missingness")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "PKLM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test a CSV file for MCAR missingness.
    Test(TestArgs),
    /// Write a simulated incomplete dataset as CSV.
    Simulate(SimulateArgs),
    /// Estimate type-I error and power over a simulation grid.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct Hyper {
    #[arg(long, default_value_t = 100)]
    num_proj: usize,
    #[arg(long, default_value_t = 30)]
    nrep: usize,
    #[arg(long, default_value_t = 200)]
    num_trees: usize,
    #[arg(long, default_value_t = 10)]
    min_node_size: usize,
    #[arg(long, default_value_t = 2)]
    size_resp_set: usize,
    /// How to cut `B` down to --size-resp-set classes: shrink or merge.
    #[arg(long, default_value_t = ClassReduction::Shrink)]
    class_reduction: ClassReduction,
}

impl Hyper {
    fn config(&self, seed: u64, compute_partial: bool) -> TestConfig {
        TestConfig {
            num_proj: self.num_proj,
            nrep: self.nrep,
            num_trees_per_proj: self.num_trees,
            min_node_size: self.min_node_size,
            size_resp_set: self.size_resp_set,
            class_reduction: self.class_reduction,
            seed,
            compute_partial,
            ..TestConfig::default()
        }
    }
}

#[derive(Args)]
struct TestArgs {
    input: PathBuf,
    #[command(flatten)]
    hyper: Hyper,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also report per-variable partial p-values.
    #[arg(long)]
    partial: bool,
    /// Threshold for the printed verdict only.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Report path; defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[arg(long)]
    no_header: bool,
    /// Token marking a missing cell; repeatable. Defaults to "" and "NA".
    #[arg(long = "na")]
    na_tokens: Vec<String>,
    /// Drop rows with every cell missing instead of failing.
    #[arg(long)]
    drop_all_missing: bool,
    /// Include wall-clock time in the report (breaks byte-identical output).
    #[arg(long)]
    timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Example {
    /// Bivariate normal with X2 hidden on three bands of X1.
    Yuan,
    /// Four normal variables; X1 missing when X2 > 0.5, MCAR elsewhere.
    Partial,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, required_unless_present = "example")]
    case: Option<u8>,
    #[arg(long, value_enum, conflicts_with = "case")]
    example: Option<Example>,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    p: usize,
    #[arg(long, default_value_t = 0.65)]
    r: f64,
    #[arg(long, default_value = "mcar")]
    mechanism: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1")]
    cases: Vec<u8>,
    #[arg(long, value_delimiter = ',', default_value = "200")]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "4")]
    p: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.65")]
    r: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "mcar,mar")]
    mechanisms: Vec<String>,
    #[arg(long, default_value_t = 300)]
    reps: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: Hyper,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_test(args: TestArgs) -> Result<()> {
    let started = Instant::now();
    if !args.delimiter.is_ascii() {
        bail!("delimiter must be a single ASCII character");
    }
    let mut options = CsvOptions {
        delimiter: args.delimiter as u8,
        has_header: !args.no_header,
        ..CsvOptions::default()
    };
    if !args.na_tokens.is_empty() {
        options.missing_tokens = args.na_tokens.clone();
    }
    let mut data = load_csv(&args.input, &options)
        .with_context(|| format!("reading {}", args.input.display()))?;
    if args.drop_all_missing {
        let (kept, dropped) = data.drop_all_missing_rows()?;
        if !dropped.is_empty() {
            eprintln!("warning: dropped {} all-missing rows", dropped.len());
        }
        data = kept;
    }

    let config = args.hyper.config(args.seed, args.partial);
    let report = pklm_test(&data, &config)?;
    let mut doc = ReportDocument::new(
        &report,
        &config,
        data.names(),
        data.n_rows(),
        Some(args.input.display().to_string()),
    );
    if args.timing {
        doc.wall_time_seconds = Some(started.elapsed().as_secs_f64());
    }
    doc.verify()?;
    output(args.out.as_ref())?.write_all(doc.to_json()?.as_bytes())?;

    let verdict = if doc.no_missingness() {
        "no missingness (p = 1)".to_string()
    } else if doc.p_value <= args.alpha {
        format!("REJECT MCAR (p = {:.4}, alpha = {})", doc.p_value, args.alpha)
    } else {
        format!("do not reject MCAR (p = {:.4}, alpha = {})", doc.p_value, args.alpha)
    };
    if args.out.is_some() {
        println!("{verdict}");
    } else {
        eprintln!("{verdict}");
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut rng = substream(args.seed, &[]);
    let data = match (args.example, args.case) {
        (Some(Example::Yuan), _) => yuan_example(args.n, &mut rng)?,
        (Some(Example::Partial), _) => partial_mar_example(args.n, args.p, args.r, &mut rng)?,
        (None, Some(case)) => simulate(&SimSpec {
            case: Case::new(case)?,
            n: args.n,
            p: args.p,
            r: args.r,
            mechanism: args.mechanism.parse()?,
            seed: args.seed,
        })?,
        (None, None) => bail!("either --case or --example is required"),
    };
    data.write_csv(output(args.out.as_ref())?, &CsvOptions::default())?;
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let grid = BenchGrid {
        cases: args.cases.iter().map(|&c| Case::new(c)).collect::<Result<_, _>>()?,
        ns: args.n,
        ps: args.p,
        rs: args.r,
        mechanisms: args
            .mechanisms
            .iter()
            .map(|m| m.parse::<Mechanism>())
            .collect::<Result<_, _>>()?,
        reps: args.reps,
        alpha: args.alpha,
        seed: args.seed,
        test: args.hyper.config(0, false),
    };
    let rows = run_bench(&grid)?;
    write_bench_csv(&rows, output(args.out.as_ref())?)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
