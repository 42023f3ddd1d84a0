//! Command-line surface: workload generation, attention runs, planner
//! queries, error studies, and benchmarks with JSON reports.
//!
//! Exit codes: 0 success, 1 usage error, 2 infeasible or precondition
//! violation, 3 I/O failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use distrattn::attention::{op_counts, AttentionConfig, Backend, OpCounts};
use distrattn::batch::{run_batch, PhaseTimings};
use distrattn::dtns;
use distrattn::eval::{emit_heatmap, score_error_stats};
use distrattn::matrix::{Matrix, Rng};
use distrattn::planner::{
    io_cost, occupancy, select_block_sizes, HardwareDescriptor,
};
use distrattn::Error;

#[derive(Parser)]
#[command(name = "distrattn", version, about = "CPU DistrAttention engine and benchmark kit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded Q/K/V tensor files (DTNS format)
    Gen(GenArgs),
    /// Run an attention backend over DTNS inputs
    Run(RunArgs),
    /// Select block sizes for a hardware descriptor
    Plan(PlanArgs),
    /// Reproduce the synthesized score-error study
    Errors(ErrorsArgs),
    /// Sweep backends over token lengths and group sizes
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    /// Output directory for q.dtns, k.dtns, v.dtns
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "distr")]
    backend: Backend,
    #[arg(long, default_value_t = 128)]
    l: usize,
    #[arg(long, default_value_t = 128)]
    m: usize,
    #[arg(long, default_value_t = 2)]
    gstar: usize,
    /// Score scale; defaults to 1/sqrt(d)
    #[arg(long)]
    scale: Option<f32>,
    #[arg(long, default_value_t = false)]
    causal: bool,
    /// Worker threads; defaults to $DISTRATTN_WORKERS or 1
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory holding q.dtns, k.dtns, v.dtns
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    d: u64,
    /// Hardware descriptor JSON; defaults to the shipped descriptor
    #[arg(long)]
    hw: Option<PathBuf>,
    /// Token length used for the I/O-cost column of the table
    #[arg(long, default_value_t = 1024)]
    n: u64,
    /// Write the full feasibility table as CSV
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct ErrorsArgs {
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    l: usize,
    #[arg(long, default_value_t = 2)]
    gstar: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write |S - S_hat| of trial 0 as CSV
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated token lengths
    #[arg(long = "n-sweep", value_delimiter = ',', required = true)]
    n_sweep: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long = "gstar-sweep", value_delimiter = ',', default_value = "2")]
    gstar_sweep: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 128)]
    l: usize,
    #[arg(long, default_value_t = 128)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunManifest {
    backend: String,
    n: usize,
    d: usize,
    heads: usize,
    l: usize,
    m: usize,
    gstar: usize,
    scale: Option<f32>,
    causal: bool,
    seed: u64,
    workers: usize,
    inputs: Vec<FileStamp>,
    output: FileStamp,
    timings: PhaseTimings,
    op_counts: OpCounts,
}

#[derive(Serialize)]
struct FileStamp {
    path: String,
    sha256: String,
}

fn stamp(path: &Path) -> Result<FileStamp, Error> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(FileStamp { path: path.display().to_string(), sha256: hex })
}

fn default_workers(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var("DISTRATTN_WORKERS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(1)
        .max(1)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::BadTensorFile(_) => 3,
        _ => 2,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not usage errors
            if e.use_stderr() {
                eprintln!("error: {}", e.kind());
                std::process::exit(1);
            }
            e.print().ok();
            std::process::exit(0);
        }
    };
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Run(args) => cmd_run(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Errors(args) => cmd_errors(args),
        Command::Bench(args) => cmd_bench(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn cmd_gen(args: GenArgs) -> Result<(), Error> {
    if args.n == 0 || args.d == 0 || args.heads == 0 {
        return Err(Error::InvalidArgument("n, d, heads must be positive".into()));
    }
    std::fs::create_dir_all(&args.out)?;
    let mut qs = Vec::new();
    let mut ks = Vec::new();
    let mut vs = Vec::new();
    for head in 0..args.heads {
        let mut rng = Rng::substream(args.seed, head as u64);
        qs.push(Matrix::random_uniform(&mut rng, args.n, args.d));
        ks.push(Matrix::random_uniform(&mut rng, args.n, args.d));
        vs.push(Matrix::random_uniform(&mut rng, args.n, args.d));
    }
    dtns::write_stack(&args.out.join("q.dtns"), &qs)?;
    dtns::write_stack(&args.out.join("k.dtns"), &ks)?;
    dtns::write_stack(&args.out.join("v.dtns"), &vs)?;
    println!("wrote {} heads of {}x{} to {}", args.heads, args.n, args.d, args.out.display());
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let q_path = args.input.join("q.dtns");
    let k_path = args.input.join("k.dtns");
    let v_path = args.input.join("v.dtns");
    let qs = dtns::read_stack(&q_path)?;
    let ks = dtns::read_stack(&k_path)?;
    let vs = dtns::read_stack(&v_path)?;
    if qs.len() != ks.len() || qs.len() != vs.len() {
        return Err(Error::ShapeMismatch("q/k/v head counts differ".into()));
    }
    let heads: Vec<(Matrix, Matrix, Matrix)> = qs
        .into_iter()
        .zip(ks)
        .zip(vs)
        .map(|((q, k), v)| (q, k, v))
        .collect();
    let (n, d) = (heads[0].0.rows(), heads[0].0.cols());

    let mut cfg = AttentionConfig::new(args.backend)
        .with_blocks(args.l, args.m)
        .with_group_size(args.gstar)
        .with_causal(args.causal)
        .with_seed(args.seed);
    if let Some(scale) = args.scale {
        cfg = cfg.with_scale(scale);
    }
    let workers = default_workers(args.workers);
    let result = run_batch(&heads, &cfg, workers)?;
    dtns::write_stack(&args.out, &result.outputs)?;

    if let Some(report_path) = &args.report {
        let manifest = RunManifest {
            backend: args.backend.to_string(),
            n,
            d,
            heads: heads.len(),
            l: args.l,
            m: args.m,
            gstar: args.gstar,
            scale: args.scale,
            causal: args.causal,
            seed: args.seed,
            workers,
            inputs: vec![stamp(&q_path)?, stamp(&k_path)?, stamp(&v_path)?],
            output: stamp(&args.out)?,
            timings: result.timings,
            op_counts: op_counts(&cfg, n, d),
        };
        std::fs::write(report_path, serde_json::to_string_pretty(&manifest).unwrap() + "\n")?;
    }
    println!("wrote {} ({} heads, {}x{}, backend {})", args.out.display(), heads.len(), n, d, args.backend);
    Ok(())
}

fn cmd_plan(args: PlanArgs) -> Result<(), Error> {
    let hw = match &args.hw {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<HardwareDescriptor>(&text)
                .map_err(|e| Error::InvalidArgument(format!("bad descriptor: {e}")))?
        }
        None => HardwareDescriptor::default(),
    };
    let spec = select_block_sizes(args.d, &hw)?;
    println!("{},{}", spec.l, spec.m);

    if let Some(table_path) = &args.table {
        let mut tiles = hw.candidate_tiles.clone();
        tiles.sort_unstable();
        let mut csv = String::from("l,m,blocks_per_sm,warps_per_sm,feasible,io_cost\n");
        for &l in &tiles {
            for &m in &tiles {
                let occ = occupancy(l, m, args.d, &hw);
                let cost = io_cost(l, args.n, args.d)?;
                csv.push_str(&format!(
                    "{l},{m},{},{},{},{cost}\n",
                    occ.blocks_per_sm, occ.warps_per_sm, occ.feasible
                ));
            }
        }
        std::fs::write(table_path, csv)?;
    }
    Ok(())
}

fn cmd_errors(args: ErrorsArgs) -> Result<(), Error> {
    let report = score_error_stats(
        args.n,
        args.d,
        args.l,
        args.gstar,
        args.trials,
        args.seed,
        args.heatmap.is_some(),
    )?;
    if let Some(path) = &args.heatmap {
        let hm = report.heatmap.as_ref().expect("heatmap was requested");
        let flat: Vec<f32> = hm.iter().flatten().copied().collect();
        let m = Matrix::from_vec(args.n, args.n, flat);
        emit_heatmap(&m, path)?;
    }
    let json = serde_json::to_string_pretty(&report).unwrap();
    if let Some(path) = &args.report {
        std::fs::write(path, json + "\n")?;
    } else {
        println!("{json}");
    }
    eprintln!(
        "n={} d={} l={} G*={} trials={}: mean {:.4}% min {:.2e}% max {:.3}%",
        args.n, args.d, args.l, args.gstar, args.trials,
        report.mean_pct, report.min_pct, report.max_pct
    );
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    n: usize,
    backend: String,
    gstar: usize,
    median_ms: f64,
    timings: PhaseTimings,
    score_mults: u64,
    score_mult_ratio_vs_exact: f64,
}

fn bench_once(
    heads: &[(Matrix, Matrix, Matrix)],
    cfg: &AttentionConfig,
    workers: usize,
    repeats: usize,
) -> Result<(f64, PhaseTimings), Error> {
    let mut times = Vec::with_capacity(repeats);
    let mut last_timings = PhaseTimings::default();
    for _ in 0..repeats {
        let t = Instant::now();
        let res = run_batch(heads, cfg, workers)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
        last_timings = res.timings;
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok((times[times.len() / 2], last_timings))
}

fn cmd_bench(args: BenchArgs) -> Result<(), Error> {
    if args.n_sweep.is_empty() || args.gstar_sweep.is_empty() || args.repeats == 0 {
        return Err(Error::InvalidArgument("sweeps and repeats must be nonempty".into()));
    }
    let workers = default_workers(args.workers);
    let mut rows: Vec<BenchRow> = Vec::new();
    for &n in &args.n_sweep {
        let mut rng = Rng::substream(args.seed, n as u64);
        let heads = vec![(
            Matrix::random_uniform(&mut rng, n, args.d),
            Matrix::random_uniform(&mut rng, n, args.d),
            Matrix::random_uniform(&mut rng, n, args.d),
        )];
        let exact_cfg = AttentionConfig::new(Backend::BlockedExact)
            .with_blocks(args.l, args.m)
            .with_seed(args.seed);
        let (median_ms, timings) = bench_once(&heads, &exact_cfg, workers, args.repeats)?;
        let exact_counts = op_counts(&exact_cfg, n, args.d);
        rows.push(BenchRow {
            n,
            backend: "blocked-exact".into(),
            gstar: 1,
            median_ms,
            timings,
            score_mults: exact_counts.score_mults_exact,
            score_mult_ratio_vs_exact: 1.0,
        });
        for &g in &args.gstar_sweep {
            let cfg = AttentionConfig::new(Backend::Distr)
                .with_blocks(args.l, args.m)
                .with_group_size(g)
                .with_seed(args.seed);
            let (median_ms, timings) = bench_once(&heads, &cfg, workers, args.repeats)?;
            let counts = op_counts(&cfg, n, args.d);
            rows.push(BenchRow {
                n,
                backend: "distr".into(),
                gstar: g,
                median_ms,
                timings,
                score_mults: counts.score_mults_distr,
                score_mult_ratio_vs_exact: counts.score_mults_exact as f64
                    / counts.score_mults_distr as f64,
            });
        }
    }
    let mut csv = String::from(
        "n,backend,gstar,median_ms,hash_us,plan_us,fuse_us,score_us,softmax_us,total_us,score_mults,score_mult_ratio_vs_exact\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{:.3},{},{},{},{},{},{},{},{}\n",
            r.n,
            r.backend,
            r.gstar,
            r.median_ms,
            r.timings.hash_us,
            r.timings.plan_us,
            r.timings.fuse_us,
            r.timings.score_us,
            r.timings.softmax_us,
            r.timings.total_us,
            r.score_mults,
            r.score_mult_ratio_vs_exact
        ));
    }
    if let Some(path) = &args.csv {
        std::fs::write(path, &csv)?;
    }
    if let Some(path) = &args.report {
        std::fs::write(path, serde_json::to_string_pretty(&rows).unwrap() + "\n")?;
    }
    if args.csv.is_none() && args.report.is_none() {
        print!("{csv}");
    }
    Ok(())
}
