use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use iab_core::bench::{bench_tmwm, linear_fit, write_bench_csv};
use iab_core::config::ExperimentConfig;
use iab_core::experiment::{run_experiments, ExperimentError, Overrides};
use iab_core::policies::Policy;

const CONFIG_ERROR: u8 = 1;
const RUN_FAILURE: u8 = 2;

/// Batch runner for the IAB resource allocation simulator.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// TOML experiment file. Defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Run a single policy: distr, msr, ba or mrba.
    #[arg(long)]
    policy: Option<Policy>,
    /// Packet size in bytes.
    #[arg(long)]
    s_udp: Option<u32>,
    /// Allocation period in subframes.
    #[arg(long)]
    t_alloc: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Simulated seconds per run.
    #[arg(long)]
    t_sim: Option<f64>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Reuse completed run directories.
    #[arg(long)]
    resume: bool,
    /// Time the tree matching at these node counts instead of simulating.
    #[arg(long, value_delimiter = ',', num_args = 0.., default_missing_value = "1,2,4,6,8")]
    bench_tmwm: Option<Vec<usize>>,
    /// Repetitions per size for --bench-tmwm.
    #[arg(long, default_value_t = 1000)]
    bench_reps: usize,
}

fn bench(args: &Args, sizes: &[usize]) -> ExitCode {
    if sizes.is_empty() || sizes.contains(&0) || args.bench_reps == 0 {
        eprintln!("error: --bench-tmwm sizes and --bench-reps must be positive");
        return ExitCode::from(CONFIG_ERROR);
    }
    let rows = bench_tmwm(sizes, args.bench_reps, args.seed.unwrap_or(1));
    if let Err(e) = std::fs::create_dir_all(&args.out_dir) {
        eprintln!("error: {}: {e}", args.out_dir.display());
        return ExitCode::from(RUN_FAILURE);
    }
    let path = args.out_dir.join("tmwm_bench.csv");
    let written = File::create(&path).map_err(|e| e.to_string()).and_then(|f| {
        write_bench_csv(&rows, BufWriter::new(f)).map_err(|e| e.to_string())
    });
    if let Err(e) = written {
        eprintln!("error: {}: {e}", path.display());
        return ExitCode::from(RUN_FAILURE);
    }
    for r in &rows {
        println!("nodes {:>7}  median {:>10.3} us  iqr [{:.3}, {:.3}]", r.nodes, r.median_us, r.q1_us, r.q3_us);
    }
    let x: Vec<f64> = rows.iter().map(|r| r.nodes as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.median_us).collect();
    if let Some(fit) = linear_fit(&x, &y) {
        println!("fit: {:.6} us/node + {:.3} us, R^2 = {:.4}", fit.slope, fit.intercept, fit.r_squared);
    }
    println!("wrote {}", path.display());
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(CONFIG_ERROR) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(sizes) = &args.bench_tmwm {
        return bench(&args, sizes);
    }
    let mut cfg = match &args.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(CONFIG_ERROR);
            }
        },
        None => ExperimentConfig::default(),
    };
    let overrides = Overrides {
        policy: args.policy,
        s_udp: args.s_udp,
        t_alloc: args.t_alloc,
        runs: args.runs,
        t_sim_s: args.t_sim,
        seed: args.seed,
    };
    if let Err(e) = overrides.apply(&mut cfg) {
        eprintln!("error: {e}");
        return ExitCode::from(CONFIG_ERROR);
    }
    match run_experiments(&cfg, &args.out_dir, args.jobs, args.resume) {
        Ok(report) => {
            println!("{} runs in {} cells, summary at {}", report.executed, report.cells.len(), args.out_dir.join("summary.csv").display());
            ExitCode::SUCCESS
        }
        Err(ExperimentError::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(CONFIG_ERROR)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(RUN_FAILURE)
        }
    }
}
