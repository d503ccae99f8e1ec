use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use evosquish::config::RunConfig;
use evosquish::data::{write_synthetic_cifar, DataStore, DatasetManifest, SynthSpec};
use evosquish::engine::{benchmark_throughput, ConvAlgo, DEFAULT_BENCH_BATCH};
use evosquish::error::Error;
use evosquish::evolve::{load_generation, read_evolution_csv, run_evolution};
use evosquish::graph::{build_from_choice, save_arch_json, save_masks_bin, size_report};
use evosquish::reporting::{build_report, report_csv, report_json, report_svg};

/// Builds SqueezeNet-style seeds, evolves progressively smaller offspring
/// networks, and reports the size/accuracy/speed trajectory.
#[derive(Parser)]
#[command(name = "evosquish", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a seed architecture and write its manifest, masks and size report.
    Build(BuildArgs),
    /// Run (or resume) a multi-generation evolution described by a config file.
    Evolve(EvolveArgs),
    /// Measure inference throughput of a persisted generation.
    Bench(BenchArgs),
    /// Render the results table of a finished run.
    Report(ReportArgs),
    /// Write a synthetic dataset in the binary layout the loaders expect.
    GenData(GenDataArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// squeezenet-v11 or squeezenet-mini
    #[arg(long, default_value = "squeezenet-v11")]
    arch: String,
    /// Number of classifier outputs.
    #[arg(long)]
    classes: u32,
    /// Input shape as C,H,W (defaults per architecture).
    #[arg(long, value_parser = parse_shape)]
    input: Option<(u32, u32, u32)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvolveArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Generation directory holding arch.json, masks.bin and weights.bin.
    #[arg(long)]
    gen: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BENCH_BATCH)]
    batch: u32,
    /// Minimum timed window in seconds; zero still times one batch.
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
    /// Optional second generation directory to compare MAC counts against.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory containing evolution.csv.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    format: ReportFormat,
    /// External model size in bytes to compute extra reduction factors against.
    #[arg(long)]
    baseline_bytes: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Json,
    Svg,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    classes: u8,
    #[arg(long, default_value_t = 500)]
    train_per_class: u32,
    #[arg(long, default_value_t = 100)]
    test_per_class: u32,
    #[arg(long, default_value_t = 0.05)]
    noise: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_shape(s: &str) -> Result<(u32, u32, u32), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected C,H,W".into());
    }
    let mut dims = [0u32; 3];
    for (d, p) in dims.iter_mut().zip(parts.iter()) {
        *d = p.trim().parse().map_err(|_| format!("bad dimension {p:?}"))?;
    }
    Ok((dims[0], dims[1], dims[2]))
}

/// Exclusive marker preventing two evolve processes from sharing a run
/// directory; removed when the owning process finishes.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<RunLock, Error> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::RunLocked(path.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn init_thread_pool() {
    if let Ok(threads) = std::env::var("EVOSQUISH_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn cmd_build(args: &BuildArgs) -> Result<(), Error> {
    let arch = build_from_choice(&args.arch, args.classes, args.input)?;
    std::fs::create_dir_all(&args.out)?;
    save_arch_json(&arch, &args.out.join("arch.json"))?;
    save_masks_bin(&arch, &args.out.join("masks.bin"))?;
    let report = size_report(&arch)?;
    std::fs::write(&args.out.join("size_report.csv"), report.to_csv())?;
    std::fs::write(&args.out.join("size_report.json"), serde_json::to_string_pretty(&report)?)?;
    println!("architecture: {}", arch.name);
    println!("classes: {}", arch.num_classes);
    println!("total params: {}", report.total_params);
    println!("live params: {}", report.live_params);
    println!(
        "model size: {} bytes ({:.2} MB, {:.2} MiB)",
        report.model_size_bytes,
        report.model_size_mb(),
        report.model_size_mib()
    );
    println!("macs: {}", report.macs);
    println!("written to {}", args.out.display());
    Ok(())
}

fn cmd_evolve(args: &EvolveArgs) -> Result<(), Error> {
    let cfg = RunConfig::load(&args.config)?;
    let _lock = RunLock::acquire(&cfg.out_dir)?;
    let seed = cfg.build_seed()?;
    let manifest = DatasetManifest::load(&cfg.dataset)?;
    let store = DataStore::from_manifest(&manifest)?;
    let records = run_evolution(
        &seed,
        &cfg.environment,
        cfg.generations,
        &cfg.train,
        &store,
        &cfg.out_dir,
        cfg.measure_timing,
    )?;
    let last = records.last().expect("at least the seed record");
    println!(
        "completed {} generations: live params {} -> {}, top-1 {:.4} -> {:.4}",
        records.len() - 1,
        records[0].live_params,
        last.live_params,
        records[0].top1_accuracy,
        last.top1_accuracy
    );
    println!("artifacts under {}", cfg.out_dir.display());
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Error> {
    if args.batch == 0 {
        return Err(Error::InvalidConfig("bench batch size must be >= 1".into()));
    }
    let (arch, weights, _) = load_generation(&args.gen)?;
    let report = size_report(&arch)?;
    let ips = benchmark_throughput(&arch, &weights, args.batch, args.duration, ConvAlgo::Im2col, 0)?;
    println!("batch: {}", args.batch);
    println!("images_per_sec: {ips:.3}");
    println!("macs: {}", report.macs);
    if let Some(baseline) = &args.baseline {
        let (base_arch, _, _) = load_generation(baseline)?;
        let base = size_report(&base_arch)?;
        println!("baseline_macs: {}", base.macs);
        println!("macs_ratio: {:.4}", report.macs as f64 / base.macs as f64);
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), Error> {
    let records = read_evolution_csv(&args.run.join("evolution.csv"))?;
    let rows = build_report(&records, args.baseline_bytes)?;
    match args.format {
        ReportFormat::Csv => print!("{}", report_csv(&rows)),
        ReportFormat::Json => println!("{}", report_json(&rows)?),
        ReportFormat::Svg => {
            let svg = report_svg(&records)?;
            let path = args.run.join("report.svg");
            std::fs::write(&path, svg)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<(), Error> {
    if args.classes == 0 || args.classes > 10 {
        return Err(Error::InvalidConfig("classes must be in 1..=10".into()));
    }
    let spec = SynthSpec {
        classes: args.classes,
        train_per_class: args.train_per_class,
        test_per_class: args.test_per_class,
        noise: args.noise,
        seed: args.seed,
    };
    let (manifest, store) = write_synthetic_cifar(&args.out, &spec)?;
    println!("manifest: {}", args.out.join("manifest.json").display());
    println!("train samples: {}", store.train.len());
    println!("test samples: {}", store.test.len());
    println!("classes: {}", manifest.num_classes());
    Ok(())
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Build(args) => cmd_build(args),
        Command::Evolve(args) => cmd_evolve(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Report(args) => cmd_report(args),
        Command::GenData(args) => cmd_gen_data(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
