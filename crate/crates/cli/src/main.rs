use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dpg_core::cachemodel::{trace_dpg_retrieve, trace_naive_retrieve, CacheConfig};
use dpg_core::datagen::{gen_fk_pair, gen_record_file, DuplicatePolicy, KeyDistribution, RelationSpec};
use dpg_core::harness::{
    experiment_layout, experiment_rids, host_llc_bytes, miss_ratios, run_experiment, verify_suite, write_csv,
    ExperimentConfig, Operation, ResultRow,
};
use dpg_core::records::{naive_retrieve, RecordFile, RidSequence};

#[derive(Parser)]
#[command(
    name = "dpg",
    version,
    about = "Distribute-probe-gather retrieval, sort, join and lookup benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a record file (or an R/F foreign-key pair) with a manifest.
    Gen(GenArgs),
    /// Retrieve records by a rid sequence; benchmark mode unless --input is given.
    Retrieve(RetrieveArgs),
    /// Full record sort.
    Sort(OpArgs),
    /// Foreign-key join of generated R and F.
    Join(OpArgs),
    /// Individual and batch index lookups.
    Lookup(OpArgs),
    /// Run the randomized cross-oracle battery.
    Verify(VerifyArgs),
    /// Run a predefined experiment suite.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Records per file.
    #[arg(long, default_value_t = 1 << 15)]
    n: usize,
    /// Record size in bytes; a comma-separated list sweeps sizes.
    #[arg(long = "record-size", value_delimiter = ',', default_value = "32")]
    record_size: Vec<usize>,
    #[arg(long = "key-len", default_value_t = 10)]
    key_len: usize,
    /// uniform, exp, or exp(c).
    #[arg(long, default_value = "uniform")]
    dist: KeyDistribution,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Clone)]
struct CacheArgs {
    /// Model cache capacity.
    #[arg(long = "cache-bytes", default_value_t = 64 * 1024)]
    cache_bytes: usize,
    /// Model cache block size.
    #[arg(long = "block-bytes", default_value_t = 128)]
    block_bytes: usize,
}

impl CacheArgs {
    fn config(&self) -> anyhow::Result<CacheConfig> {
        Ok(CacheConfig::new(self.cache_bytes, self.block_bytes)?)
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Methods to run, comma-separated; defaults depend on the operation.
    #[arg(long, value_delimiter = ',')]
    method: Vec<String>,
    /// Count simulated cache misses for the retrieval step.
    #[arg(long)]
    trace: bool,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// CSV output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run uniform-only methods on skewed data anyway.
    #[arg(long)]
    force: bool,
    /// Worker threads for independent cells.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Join only: R draws its foreign keys with repetition.
    #[arg(long)]
    duplicates: bool,
}

#[derive(Args)]
struct OpArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    cache: CacheArgs,
    #[command(flatten)]
    run: RunArgs,
}

impl OpArgs {
    fn config(&self, operation: Operation) -> anyhow::Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            operation,
            methods: self.run.method.clone(),
            n: self.data.n,
            record_sizes: self.data.record_size.clone(),
            key_len: self.data.key_len,
            distribution: self.data.dist,
            duplicates: self.run.duplicates,
            seed: self.data.seed,
            cache: self.cache.config()?,
            reps: self.run.reps,
            trace: self.run.trace,
            force: self.run.force,
            parallel: self.run.parallel,
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Relation {
    File,
    Fk,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "file")]
    relation: Relation,
    /// F size for --relation fk (defaults to --n).
    #[arg(long = "n-f")]
    n_f: Option<usize>,
    #[arg(long)]
    duplicates: bool,
    /// Also write a rid sequence (permutation, or skewed for --dist exp).
    #[arg(long)]
    rids: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetrieveArgs {
    #[command(flatten)]
    op: OpArgs,
    /// Record file to read instead of generating data.
    #[arg(long, requires = "rids")]
    input: Option<PathBuf>,
    /// Rid sequence file for --input.
    #[arg(long)]
    rids: Option<PathBuf>,
    /// Where to write retrieved records in --input mode.
    #[arg(long = "save")]
    save: Option<PathBuf>,
    /// Write the access trace as text lines (--input mode, with --trace).
    #[arg(long = "trace-dump")]
    trace_dump: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Random instances per property.
    #[arg(long, default_value_t = 100)]
    instances: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    /// Traced naive vs DPG retrieval, 32..512-byte records at 16x the cache.
    RetrieveSweep,
    /// The six join methods (skew-safe ones only on skewed keys).
    Join,
    Sort,
    Lookup,
    /// Naive vs DPG wall clock on data 8x the host's last-level cache.
    Wallclock,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "retrieve-sweep")]
    suite: Vec<Suite>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    cache: CacheArgs,
    #[command(flatten)]
    run: RunArgs,
}

fn emit(rows: &[ResultRow], out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            write_csv(rows, BufWriter::new(f))?;
        }
        None => write_csv(rows, io::stdout().lock())?,
    }
    Ok(())
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn gen(args: &GenArgs) -> anyhow::Result<()> {
    let d = &args.data;
    let &[record_size] = d.record_size.as_slice() else {
        bail!("gen takes a single --record-size");
    };
    match args.relation {
        Relation::File => {
            let file = gen_record_file(d.n, record_size, d.key_len, d.dist, d.seed)?;
            file.save(&args.out)?;
            let manifest = format!(
                "n={}\nrecord_size={record_size}\nkey_len={}\ndistribution={}\nseed={}\n",
                d.n, d.key_len, d.dist, d.seed
            );
            std::fs::write(with_suffix(&args.out, ".manifest"), manifest)?;
        }
        Relation::Fk => {
            let spec = RelationSpec {
                n_r: d.n,
                n_f: args.n_f.unwrap_or(d.n),
                record_size_r: record_size,
                record_size_f: record_size,
                key_len: d.key_len,
                duplicates: if args.duplicates {
                    DuplicatePolicy::RandomWithDuplicates
                } else {
                    DuplicatePolicy::None
                },
                distribution: d.dist,
            };
            let (r, f) = gen_fk_pair(&spec, d.seed)?;
            r.save(with_suffix(&args.out, ".r"))?;
            f.save(with_suffix(&args.out, ".f"))?;
            std::fs::write(with_suffix(&args.out, ".manifest"), spec.manifest(d.seed))?;
        }
    }
    if let Some(p) = &args.rids {
        experiment_rids(d.n, d.dist, d.seed ^ 1).save(p)?;
    }
    Ok(())
}

fn retrieve_file(args: &RetrieveArgs, input: &Path) -> anyhow::Result<()> {
    let rids_path = args.rids.as_ref().expect("clap enforces --rids");
    let file = RecordFile::load(input).with_context(|| format!("reading {}", input.display()))?;
    let rids = RidSequence::load(rids_path).with_context(|| format!("reading {}", rids_path.display()))?;
    let cache = args.op.cache.config()?;
    let method = args.op.run.method.first().map_or("dpg", String::as_str);
    let expected = naive_retrieve(&file, &rids)?;
    let (output, run) = match method {
        "naive" => {
            let run = args
                .op
                .run
                .trace
                .then(|| trace_naive_retrieve(&file, &rids, cache))
                .transpose()?;
            (expected.clone(), run)
        }
        "dpg" | "dpg-uniform" | "dpg-sampled" => {
            let sampled = method == "dpg-sampled" || (method == "dpg" && !args.op.data.dist.is_uniform());
            let layout = experiment_layout(&file, &rids, cache, sampled, args.op.data.seed)?;
            let out = dpg_core::dpg::dpg_retrieve(&file, &rids, &layout)?;
            let run = args
                .op
                .run
                .trace
                .then(|| trace_dpg_retrieve(&file, &rids, &layout, cache))
                .transpose()?;
            (out, run)
        }
        other => bail!("unknown retrieval method {other:?}"),
    };
    if output.as_bytes() != expected.as_bytes() {
        bail!("{method} output differs from naive retrieval");
    }
    if let Some(p) = &args.save {
        output.save(p)?;
    }
    if let Some(run) = run {
        let mut stdout = io::stdout().lock();
        run.stats.write_csv(&run.trace.space, &mut stdout)?;
        for (phase, stats) in &run.phases {
            writeln!(stdout, "# phase {phase}: {} misses", stats.misses)?;
        }
        if let Some(p) = &args.trace_dump {
            run.trace.write_text(BufWriter::new(File::create(p)?))?;
        }
    }
    eprintln!("retrieved {} records with {method}", output.len());
    Ok(())
}

fn verify(args: &VerifyArgs) -> anyhow::Result<bool> {
    let report = verify_suite(args.seed, args.instances);
    for (property, passed, total) in report.summary() {
        println!("{property}: {passed}/{total}");
    }
    for c in report.failures() {
        println!("FAIL {} seed={}: {}", c.property, c.seed, c.detail);
    }
    Ok(report.passed())
}

fn bench(args: &BenchArgs) -> anyhow::Result<()> {
    let cache = args.cache.config()?;
    let d = &args.data;
    let base = |operation| ExperimentConfig {
        operation,
        methods: args.run.method.clone(),
        n: d.n,
        record_sizes: d.record_size.clone(),
        key_len: d.key_len,
        distribution: d.dist,
        duplicates: args.run.duplicates,
        seed: d.seed,
        cache,
        reps: args.run.reps,
        trace: args.run.trace,
        force: args.run.force,
        parallel: args.run.parallel,
    };
    let mut rows = Vec::new();
    for suite in &args.suite {
        match suite {
            Suite::RetrieveSweep => {
                let mut sweep = Vec::new();
                for mut c in ExperimentConfig::retrieve_sweep(&[32, 64, 128, 256, 512], cache, d.seed) {
                    c.reps = args.run.reps;
                    c.parallel = args.run.parallel;
                    sweep.extend(run_experiment(&c)?);
                }
                for (rs, ratio) in miss_ratios(&sweep) {
                    eprintln!("record_size {rs}: dpg/naive simulated misses {ratio:.3}");
                }
                rows.extend(sweep);
            }
            Suite::Join => rows.extend(run_experiment(&base(Operation::Join))?),
            Suite::Sort => rows.extend(run_experiment(&base(Operation::Sort))?),
            Suite::Lookup => rows.extend(run_experiment(&base(Operation::IndexLookup))?),
            Suite::Wallclock => {
                let llc = host_llc_bytes().unwrap_or(32 << 20);
                let c = ExperimentConfig {
                    methods: vec!["naive".into(), "dpg".into()],
                    n: 8 * llc / 32,
                    record_sizes: vec![32],
                    trace: false,
                    ..base(Operation::Retrieve)
                };
                let wall = run_experiment(&c)?;
                let wins = (0..c.reps)
                    .filter(|&rep| {
                        let t = |m: &str| {
                            wall.iter()
                                .find(|r| r.rep == rep && r.method == m)
                                .map(|r| r.elapsed_ns)
                        };
                        t("dpg") < t("naive")
                    })
                    .count();
                let verdict = if 2 * wins > c.reps {
                    "faster"
                } else {
                    "not faster (warning only)"
                };
                eprintln!(
                    "dpg {verdict} than naive in {wins}/{} repetitions on {} records",
                    c.reps, c.n
                );
                rows.extend(wall);
            }
        }
    }
    emit(&rows, args.run.out.as_deref())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Gen(args) => gen(&args)?,
        Command::Retrieve(args) => match &args.input {
            Some(input) => retrieve_file(&args, input)?,
            None => emit(
                &run_experiment(&args.op.config(Operation::Retrieve)?)?,
                args.op.run.out.as_deref(),
            )?,
        },
        Command::Sort(args) => emit(
            &run_experiment(&args.config(Operation::Sort)?)?,
            args.run.out.as_deref(),
        )?,
        Command::Join(args) => emit(
            &run_experiment(&args.config(Operation::Join)?)?,
            args.run.out.as_deref(),
        )?,
        Command::Lookup(args) => emit(
            &run_experiment(&args.config(Operation::IndexLookup)?)?,
            args.run.out.as_deref(),
        )?,
        Command::Verify(args) => return verify(&args),
        Command::Bench(args) => bench(&args)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
