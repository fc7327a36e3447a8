//! Experiment driver and self-verification battery.
//!
//! An experiment is a grid of cells, one per method, record size and
//! repetition. Each cell generates its own data from the config seed, runs
//! the operation under a wall clock, checks the output against an oracle
//! and, when tracing is on, replays the record-retrieval step through the
//! cache model.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::cachemodel::{trace_dpg_retrieve, trace_naive_retrieve, CacheConfig};
use crate::datagen::{
    exp_rids, gen_fk_pair, gen_record_file, random_permutation, random_rids, DuplicatePolicy, KeyDistribution,
    RelationSpec, SplitMix64,
};
use crate::dpg::{dpg_retrieve, skew_partition};
use crate::error::{Error, Result};
use crate::index::{EnhancedBPlusTree, HashIndex};
use crate::join::{keys_agree, nested_loop_join, row_multiset, same_rows, JoinMethod};
use crate::records::{choose_run_length, naive_retrieve, RecordFile, Rid, RidSequence, RunLayout};
use crate::sort::{full_sort, sort_pairs, KeyRid, Retrieval, SortBackend};

pub const CSV_HEADER: [&str; 9] = [
    "operation",
    "method",
    "record_size",
    "n",
    "distribution",
    "rep",
    "elapsed_ns",
    "misses",
    "oracle_ok",
];

/// Rid sample size for skew-aware layouts.
pub const SKEW_SAMPLE: usize = 16_384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operation {
    Retrieve,
    Sort,
    Join,
    IndexLookup,
}

impl Operation {
    pub fn default_methods(self) -> &'static [&'static str] {
        match self {
            Operation::Retrieve => &["naive", "dpg"],
            Operation::Sort => &["alpha", "superscalar", "countbucket", "alpha-naive"],
            Operation::Join => &[
                "dpg-move",
                "dpg-sort",
                "sort-merge-alpha",
                "sort-merge-superscalar",
                "sort-merge-countbucket",
                "radix",
            ],
            Operation::IndexLookup => &["bptree-individual", "bptree-batch", "hash-individual", "hash-batch"],
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operation::Retrieve => "retrieve",
            Operation::Sort => "sort",
            Operation::Join => "join",
            Operation::IndexLookup => "index-lookup",
        })
    }
}

impl FromStr for Operation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retrieve" => Ok(Operation::Retrieve),
            "sort" => Ok(Operation::Sort),
            "join" => Ok(Operation::Join),
            "index-lookup" | "lookup" => Ok(Operation::IndexLookup),
            other => Err(Error::Config(format!("unknown operation {other:?}"))),
        }
    }
}

/// A sort method: backend plus retrieval, written `backend[-naive]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SortMethod {
    pub backend: SortBackend,
    pub retrieval: Retrieval,
}

impl FromStr for SortMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (b, retrieval) = match s.strip_suffix("-naive") {
            Some(b) => (b, Retrieval::Naive),
            None => (s.strip_suffix("-dpg").unwrap_or(s), Retrieval::Dpg),
        };
        Ok(SortMethod {
            backend: b.parse()?,
            retrieval,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrieveMethod {
    Naive,
    /// Uniform runs, or sampled boundaries when the rids are declared skewed.
    Dpg,
    Uniform,
    Sampled,
}

impl FromStr for RetrieveMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(RetrieveMethod::Naive),
            "dpg" => Ok(RetrieveMethod::Dpg),
            "dpg-uniform" => Ok(RetrieveMethod::Uniform),
            "dpg-sampled" => Ok(RetrieveMethod::Sampled),
            other => Err(Error::Config(format!("unknown retrieval method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LookupMethod {
    BPlusIndividual,
    BPlusBatch,
    HashIndividual,
    HashBatch,
}

impl FromStr for LookupMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bptree-individual" => Ok(LookupMethod::BPlusIndividual),
            "bptree-batch" => Ok(LookupMethod::BPlusBatch),
            "hash-individual" => Ok(LookupMethod::HashIndividual),
            "hash-batch" => Ok(LookupMethod::HashBatch),
            other => Err(Error::Config(format!("unknown lookup method {other:?}"))),
        }
    }
}

/// Checks that `method` names a method of `op`, and whether it is meant for
/// skewed keys. Returns `Ok(false)` for a valid method that assumes
/// uniform keys.
pub fn method_valid_for_skew(op: Operation, method: &str) -> Result<bool> {
    Ok(match op {
        Operation::Retrieve => {
            method.parse::<RetrieveMethod>()?;
            true
        }
        Operation::Sort => !method.parse::<SortMethod>()?.backend.assumes_uniform_keys(),
        Operation::Join => method.parse::<JoinMethod>()?.valid_for_skew(),
        Operation::IndexLookup => {
            method.parse::<LookupMethod>()?;
            true
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub operation: Operation,
    /// Empty means the operation's defaults, filtered for the distribution.
    pub methods: Vec<String>,
    pub n: usize,
    pub record_sizes: Vec<usize>,
    pub key_len: usize,
    pub distribution: KeyDistribution,
    /// Join only: draw R's foreign keys with repetition.
    pub duplicates: bool,
    pub seed: u64,
    pub cache: CacheConfig,
    pub reps: usize,
    pub trace: bool,
    pub force: bool,
    /// Worker threads; 1 runs cells one at a time.
    pub parallel: usize,
}

impl ExperimentConfig {
    pub fn new(operation: Operation) -> Self {
        Self {
            operation,
            methods: Vec::new(),
            n: 1 << 15,
            record_sizes: vec![32],
            key_len: 10,
            distribution: KeyDistribution::Uniform,
            duplicates: false,
            seed: 1,
            cache: CacheConfig::default(),
            reps: 3,
            trace: false,
            force: false,
            parallel: 1,
        }
    }

    /// The retrieve sweep: each record size gets `16 * cache / size`
    /// records, traced.
    pub fn retrieve_sweep(record_sizes: &[usize], cache: CacheConfig, seed: u64) -> Vec<Self> {
        record_sizes
            .iter()
            .map(|&rs| Self {
                record_sizes: vec![rs],
                n: 16 * cache.capacity / rs,
                cache,
                seed,
                trace: true,
                reps: 1,
                ..Self::new(Operation::Retrieve)
            })
            .collect()
    }

    /// Methods to run after gating. Explicitly requested uniform-only
    /// methods on skewed data are refused unless `force` is set; defaults
    /// are filtered silently.
    pub fn resolved_methods(&self) -> Result<Vec<String>> {
        let skewed = !self.distribution.is_uniform();
        if self.methods.is_empty() {
            let mut out = Vec::new();
            for m in self.operation.default_methods() {
                if !skewed || self.force || method_valid_for_skew(self.operation, m)? {
                    out.push(m.to_string());
                }
            }
            return Ok(out);
        }
        for m in &self.methods {
            if !method_valid_for_skew(self.operation, m)? && skewed && !self.force {
                return Err(Error::Config(format!(
                    "{m} assumes uniformly distributed keys; pass --force to run it on {} data",
                    self.distribution
                )));
            }
        }
        Ok(self.methods.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.n == 0 || self.record_sizes.is_empty() {
            return Err(Error::Config("need at least one record and one record size".into()));
        }
        if self.n > u32::MAX as usize {
            return Err(Error::Config("record count exceeds the rid range".into()));
        }
        self.cache.validate()?;
        self.distribution.validate()?;
        self.resolved_methods()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultRow {
    pub operation: Operation,
    pub method: String,
    pub record_size: usize,
    pub n: usize,
    pub distribution: String,
    pub rep: usize,
    pub elapsed_ns: u64,
    pub misses: Option<u64>,
    pub oracle_ok: bool,
}

impl ResultRow {
    fn fields(&self) -> [String; 9] {
        [
            self.operation.to_string(),
            self.method.clone(),
            self.record_size.to_string(),
            self.n.to_string(),
            self.distribution.clone(),
            self.rep.to_string(),
            self.elapsed_ns.to_string(),
            self.misses.map(|m| m.to_string()).unwrap_or_default(),
            self.oracle_ok.to_string(),
        ]
    }
}

pub fn write_csv<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    out.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in rows {
        out.write_record(row.fields()).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// DPG-over-naive miss ratio per record size, from traced retrieve rows.
pub fn miss_ratios(rows: &[ResultRow]) -> Vec<(usize, f64)> {
    let mut naive: HashMap<usize, u64> = HashMap::new();
    let mut dpg: HashMap<usize, u64> = HashMap::new();
    for r in rows.iter().filter(|r| r.operation == Operation::Retrieve) {
        let Some(m) = r.misses else { continue };
        match r.method.as_str() {
            "naive" => *naive.entry(r.record_size).or_default() += m,
            "dpg" => *dpg.entry(r.record_size).or_default() += m,
            _ => {}
        }
    }
    let mut out: Vec<(usize, f64)> = dpg
        .iter()
        .filter_map(|(rs, &d)| naive.get(rs).map(|&n| (*rs, d as f64 / n.max(1) as f64)))
        .collect();
    out.sort_by_key(|p| p.0);
    out
}

struct Cell {
    method: String,
    record_size: usize,
    rep: usize,
}

/// Runs every cell of `config`. An oracle mismatch aborts the experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let methods = config.resolved_methods()?;
    let mut cells = Vec::new();
    for &record_size in &config.record_sizes {
        for method in &methods {
            for rep in 0..config.reps {
                cells.push(Cell {
                    method: method.clone(),
                    record_size,
                    rep,
                });
            }
        }
    }
    let rows: Vec<Result<ResultRow>> = if config.parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallel)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| cells.par_iter().map(|c| run_cell(config, c)).collect())
    } else {
        cells.iter().map(|c| run_cell(config, c)).collect()
    };
    rows.into_iter().collect()
}

fn run_cell(config: &ExperimentConfig, cell: &Cell) -> Result<ResultRow> {
    let (elapsed_ns, misses) = match config.operation {
        Operation::Retrieve => cell_retrieve(config, cell)?,
        Operation::Sort => cell_sort(config, cell)?,
        Operation::Join => cell_join(config, cell)?,
        Operation::IndexLookup => cell_lookup(config, cell)?,
    };
    Ok(ResultRow {
        operation: config.operation,
        method: cell.method.clone(),
        record_size: cell.record_size,
        n: config.n,
        distribution: config.distribution.to_string(),
        rep: cell.rep,
        elapsed_ns,
        misses,
        oracle_ok: true,
    })
}

fn data_seed(config: &ExperimentConfig, record_size: usize) -> u64 {
    config.seed ^ (record_size as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, u64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_nanos() as u64))
}

fn mismatch(config: &ExperimentConfig, cell: &Cell, what: &str) -> Error {
    Error::OracleMismatch(format!(
        "{} {} record_size={} seed={}: {what}",
        config.operation, cell.method, cell.record_size, config.seed
    ))
}

/// Rids for a retrieve cell: a permutation for uniform data, exponentially
/// skewed draws otherwise.
pub fn experiment_rids(n: usize, dist: KeyDistribution, seed: u64) -> RidSequence {
    match dist {
        KeyDistribution::Uniform => random_permutation(n, seed),
        KeyDistribution::Exponential { c } => exp_rids(n, n, c, seed),
    }
}

/// Uniform layout sized by the cache, or sampled boundaries with the same
/// number of runs.
pub fn experiment_layout(
    file: &RecordFile,
    rids: &RidSequence,
    cache: CacheConfig,
    sampled: bool,
    seed: u64,
) -> Result<RunLayout> {
    let uniform = choose_run_length(cache.capacity, cache.block_size, file.record_size(), file.len())?;
    if !sampled {
        return Ok(uniform);
    }
    let runs = uniform.num_runs();
    skew_partition(rids, file.len(), runs, SKEW_SAMPLE.max(runs), seed)
}

fn cell_retrieve(config: &ExperimentConfig, cell: &Cell) -> Result<(u64, Option<u64>)> {
    let seed = data_seed(config, cell.record_size);
    let file = gen_record_file(
        config.n,
        cell.record_size,
        config.key_len,
        KeyDistribution::Uniform,
        seed,
    )?;
    let rids = experiment_rids(config.n, config.distribution, seed ^ 1);
    let expected = naive_retrieve(&file, &rids)?;
    let method: RetrieveMethod = cell.method.parse()?;
    let layout = match method {
        RetrieveMethod::Naive => None,
        RetrieveMethod::Dpg => Some(experiment_layout(
            &file,
            &rids,
            config.cache,
            !config.distribution.is_uniform(),
            seed,
        )?),
        RetrieveMethod::Uniform => Some(experiment_layout(&file, &rids, config.cache, false, seed)?),
        RetrieveMethod::Sampled => Some(experiment_layout(&file, &rids, config.cache, true, seed)?),
    };
    let (out, ns) = timed(|| match &layout {
        None => naive_retrieve(&file, &rids),
        Some(l) => dpg_retrieve(&file, &rids, l),
    })?;
    if out.as_bytes() != expected.as_bytes() {
        return Err(mismatch(config, cell, "output differs from naive retrieval"));
    }
    let misses = if config.trace {
        Some(
            match &layout {
                None => trace_naive_retrieve(&file, &rids, config.cache)?,
                Some(l) => trace_dpg_retrieve(&file, &rids, l, config.cache)?,
            }
            .stats
            .misses,
        )
    } else {
        None
    };
    Ok((ns, misses))
}

/// Rid order that sorts `file` by key, ties by rid.
fn reference_order(file: &RecordFile) -> RidSequence {
    let mut idx: Vec<u32> = (0..file.len() as u32).collect();
    idx.sort_by(|&a, &b| file.key(a as usize).cmp(file.key(b as usize)));
    RidSequence::from_u32s(idx)
}

fn cell_sort(config: &ExperimentConfig, cell: &Cell) -> Result<(u64, Option<u64>)> {
    let seed = data_seed(config, cell.record_size);
    let file = gen_record_file(config.n, cell.record_size, config.key_len, config.distribution, seed)?;
    let method: SortMethod = cell.method.parse()?;
    let (out, ns) = timed(|| full_sort(&file, method.backend, method.retrieval, config.cache))?;
    let order = reference_order(&file);
    if out.as_bytes() != naive_retrieve(&file, &order)?.as_bytes() {
        return Err(mismatch(config, cell, "output is not the key-then-rid order"));
    }
    let misses = if config.trace {
        let run = match method.retrieval {
            Retrieval::Naive => trace_naive_retrieve(&file, &order, config.cache)?,
            Retrieval::Dpg => {
                let layout = experiment_layout(&file, &order, config.cache, false, seed)?;
                trace_dpg_retrieve(&file, &order, &layout, config.cache)?
            }
        };
        Some(run.stats.misses)
    } else {
        None
    };
    Ok((ns, misses))
}

/// Foreign-key join oracle: each R row paired with the F row holding its key.
fn fk_oracle_rows(r: &RecordFile, f: &RecordFile) -> Result<Vec<Vec<u8>>> {
    let by_key: HashMap<&[u8], usize> = (0..f.len()).map(|i| (f.key(i), i)).collect();
    let mut rows: Vec<Vec<u8>> = r
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let j = *by_key
                .get(r.key_of(rec))
                .ok_or(Error::ReferentialIntegrity { rid_r: i as u32 })?;
            Ok([rec, f.record(j)].concat())
        })
        .collect::<Result<_>>()?;
    rows.sort_unstable();
    Ok(rows)
}

fn join_spec(config: &ExperimentConfig, record_size: usize) -> RelationSpec {
    RelationSpec {
        n_r: config.n,
        n_f: config.n,
        record_size_r: record_size,
        record_size_f: record_size,
        key_len: config.key_len,
        duplicates: if config.duplicates {
            DuplicatePolicy::RandomWithDuplicates
        } else {
            DuplicatePolicy::None
        },
        distribution: config.distribution,
    }
}

fn cell_join(config: &ExperimentConfig, cell: &Cell) -> Result<(u64, Option<u64>)> {
    let (r, f) = gen_fk_pair(
        &join_spec(config, cell.record_size),
        data_seed(config, cell.record_size),
    )?;
    let method: JoinMethod = cell.method.parse()?;
    let (out, ns) = timed(|| method.run(&r, &f, config.cache))?;
    let expected = fk_oracle_rows(&r, &f)?;
    let got = row_multiset(&out);
    if got.len() != expected.len() || got.iter().zip(&expected).any(|(a, b)| *a != &b[..]) {
        return Err(mismatch(config, cell, "joined rows differ from the foreign-key oracle"));
    }
    Ok((ns, None))
}

/// Index pairs over `n` generated keys (duplicates dropped) and a query
/// list that is half present keys, half fresh random keys.
type LookupWorkload = (Vec<(Vec<u8>, Rid)>, Vec<Vec<u8>>);

fn lookup_workload(config: &ExperimentConfig, record_size: usize) -> Result<LookupWorkload> {
    let seed = data_seed(config, record_size);
    let file = gen_record_file(config.n, record_size, config.key_len, config.distribution, seed)?;
    let mut pairs: Vec<(Vec<u8>, Rid)> = (0..file.len()).map(|i| (file.key(i).to_vec(), Rid(i as u32))).collect();
    pairs.sort();
    pairs.dedup_by(|a, b| a.0 == b.0);
    let mut rng = SplitMix64::new(seed ^ 2);
    let queries = (0..config.n)
        .map(|_| {
            if rng.below(2) == 0 {
                pairs[rng.below(pairs.len() as u64) as usize].0.clone()
            } else {
                let mut k = vec![0u8; config.key_len];
                rng.fill_bytes(&mut k);
                k
            }
        })
        .collect();
    Ok((pairs, queries))
}

pub const BPTREE_FANOUT: usize = 64;

fn cell_lookup(config: &ExperimentConfig, cell: &Cell) -> Result<(u64, Option<u64>)> {
    let (pairs, queries) = lookup_workload(config, cell.record_size)?;
    let method: LookupMethod = cell.method.parse()?;
    let (out, ns) = match method {
        LookupMethod::BPlusIndividual | LookupMethod::BPlusBatch => {
            let tree = EnhancedBPlusTree::build(&pairs, BPTREE_FANOUT)?;
            timed(|| {
                if method == LookupMethod::BPlusBatch {
                    tree.batch_lookup(&queries)
                } else {
                    Ok(tree.lookup_each(&queries))
                }
            })?
        }
        LookupMethod::HashIndividual | LookupMethod::HashBatch => {
            let index = HashIndex::build(&pairs, 2 * pairs.len(), config.seed)?;
            let partition_slots = (config.cache.capacity / 2 / (config.key_len + 4)).max(1);
            timed(|| {
                if method == LookupMethod::HashBatch {
                    index.batch_lookup(&queries, partition_slots)
                } else {
                    Ok(index.lookup_each(&queries))
                }
            })?
        }
    };
    let oracle: HashMap<&[u8], Rid> = pairs.iter().map(|(k, r)| (&k[..], *r)).collect();
    if queries
        .iter()
        .zip(&out)
        .any(|(q, got)| oracle.get(&q[..]).copied() != *got)
    {
        return Err(mismatch(config, cell, "lookup results differ from a hash map"));
    }
    Ok((ns, None))
}

/// One checked instance of the verification battery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseResult {
    pub property: &'static str,
    pub seed: u64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub cases: Vec<CaseResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| !c.passed)
    }

    /// Per-property pass counts, in first-seen order.
    pub fn summary(&self) -> Vec<(&'static str, usize, usize)> {
        let mut out: Vec<(&'static str, usize, usize)> = Vec::new();
        for c in &self.cases {
            match out.iter_mut().find(|s| s.0 == c.property) {
                Some(s) => {
                    s.1 += c.passed as usize;
                    s.2 += 1;
                }
                None => out.push((c.property, c.passed as usize, 1)),
            }
        }
        out
    }
}

/// Outcome of one check: `Ok(Ok(()))` passes, `Ok(Err(why))` is a property
/// violation, `Err` an unexpected error (also a failure).
type Check = Result<std::result::Result<(), String>>;

fn record(report: &mut VerifyReport, property: &'static str, seed: u64, check: Check) {
    let (passed, detail) = match check {
        Ok(Ok(())) => (true, String::new()),
        Ok(Err(why)) => (false, why),
        Err(e) => (false, format!("error: {e}")),
    };
    report.cases.push(CaseResult {
        property,
        seed,
        passed,
        detail,
    });
}

fn check_dpg_equals_naive(seed: u64) -> Check {
    let mut rng = SplitMix64::new(seed);
    let sizes = [8, 32, 64, 256];
    let rs = sizes[rng.below(4) as usize];
    let n = 1 + rng.below(20_000) as usize;
    let file = gen_record_file(n, rs, 4.min(rs), KeyDistribution::Uniform, seed)?;
    let rids = match rng.below(3) {
        0 => random_permutation(n, seed),
        1 => random_rids(1 + rng.below(2 * n as u64) as usize, n, seed),
        _ => {
            let mut p = random_permutation(n, seed).into_inner();
            p.truncate(1 + rng.below(n as u64) as usize);
            RidSequence::new(p)
        }
    };
    let layout = if rng.below(4) == 0 {
        skew_partition(&rids, n, 1 + rng.below(32) as usize, 256, seed)?
    } else {
        RunLayout::uniform(n, 1 + rng.below(n as u64) as usize)?
    };
    let got = dpg_retrieve(&file, &rids, &layout)?;
    let want = naive_retrieve(&file, &rids)?;
    Ok(if got.as_bytes() == want.as_bytes() {
        Ok(())
    } else {
        Err(format!(
            "n={n} record_size={rs} m={} runs={}",
            rids.len(),
            layout.num_runs()
        ))
    })
}

fn check_backend_equivalence(seed: u64) -> Check {
    let mut rng = SplitMix64::new(seed);
    let n = 1 + rng.below(5_000) as usize;
    let key_len = 1 + rng.below(12) as usize;
    let alphabet = 1 + rng.below(256);
    let pairs: Vec<KeyRid> = (0..n as u32)
        .map(|i| {
            let key: Vec<u8> = (0..key_len).map(|_| rng.below(alphabet) as u8).collect();
            KeyRid::new(&key, i)
        })
        .collect();
    let mut reference = pairs.clone();
    reference.sort();
    for backend in [SortBackend::ALPHA, SortBackend::SUPERSCALAR, SortBackend::COUNT_BUCKET] {
        if sort_pairs(pairs.clone(), backend, 64)? != reference {
            return Ok(Err(format!("{backend} disagrees (n={n} key_len={key_len})")));
        }
    }
    Ok(Ok(()))
}

fn check_join_equivalence(seed: u64) -> Check {
    let mut rng = SplitMix64::new(seed);
    let n_f = 1 + rng.below(600) as usize;
    let dup = rng.below(2) == 0;
    let n_r = if dup {
        1 + rng.below(1200) as usize
    } else {
        1 + rng.below(n_f as u64) as usize
    };
    let dist = if rng.below(3) == 0 {
        KeyDistribution::exponential()
    } else {
        KeyDistribution::Uniform
    };
    let spec = RelationSpec {
        n_r,
        n_f,
        record_size_r: 16 + 8 * rng.below(4) as usize,
        record_size_f: 12 + 4 * rng.below(4) as usize,
        key_len: 8,
        duplicates: if dup {
            DuplicatePolicy::RandomWithDuplicates
        } else {
            DuplicatePolicy::None
        },
        distribution: dist,
    };
    let (r, f) = gen_fk_pair(&spec, seed)?;
    let cache = CacheConfig::new(4096, 64)?;
    let oracle = nested_loop_join(&r, &f)?;
    let mut methods = JoinMethod::COMPARED.to_vec();
    methods.push(JoinMethod::SortMerge {
        backend: SortBackend::ALPHA,
        retrieval: Retrieval::Naive,
    });
    for m in methods {
        if !dist.is_uniform() && matches!(m, JoinMethod::Radix) {
            continue;
        }
        let out = m.run(&r, &f, cache)?;
        if !same_rows(&out, &oracle) || !keys_agree(&out, &r, &f) {
            return Ok(Err(format!(
                "{m} differs from nested loop (|R|={n_r} |F|={n_f} {dist})"
            )));
        }
    }
    Ok(Ok(()))
}

fn check_batch_lookup(seed: u64) -> Check {
    let mut rng = SplitMix64::new(seed);
    let n = 1 + rng.below(20_000) as usize;
    let mut keys: Vec<u64> = (0..n).map(|_| rng.next_u64() & !1).collect();
    keys.sort_unstable();
    keys.dedup();
    let pairs: Vec<([u8; 8], Rid)> = keys
        .iter()
        .enumerate()
        .map(|(i, k)| (k.to_be_bytes(), Rid(i as u32)))
        .collect();
    let queries: Vec<[u8; 8]> = (0..1 + rng.below(5_000))
        .map(|_| {
            if rng.below(2) == 0 {
                pairs[rng.below(pairs.len() as u64) as usize].0
            } else {
                (rng.next_u64() | 1).to_be_bytes()
            }
        })
        .collect();
    let fanout = [4, 16, 64][rng.below(3) as usize];
    let tree = EnhancedBPlusTree::build(&pairs, fanout)?;
    if tree.batch_lookup(&queries)? != tree.lookup_each(&queries) {
        return Ok(Err(format!("B+ tree batch lookup differs (n={n} fanout={fanout})")));
    }
    let index = HashIndex::build(&pairs, 2 * pairs.len(), seed)?;
    let part = 1 + rng.below(4096) as usize;
    if index.batch_lookup(&queries, part)? != index.lookup_each(&queries) {
        return Ok(Err(format!("hash batch lookup differs (n={n} partition={part})")));
    }
    Ok(Ok(()))
}

pub const VERIFY_PROPERTIES: [&str; 4] = [
    "dpg-equals-naive",
    "backend-equivalence",
    "join-multiset",
    "batch-lookup",
];

/// Runs `instances` randomized cases of every property. Case seeds derive
/// from `seed`, so a failing case can be rerun alone with
/// [`verify_case`].
pub fn verify_suite(seed: u64, instances: usize) -> VerifyReport {
    let mut report = VerifyReport::default();
    let mut rng = SplitMix64::new(seed);
    for property in VERIFY_PROPERTIES {
        for _ in 0..instances {
            let case_seed = rng.next_u64();
            record(&mut report, property, case_seed, verify_case(property, case_seed));
        }
    }
    report
}

/// One case of the battery by property name.
pub fn verify_case(property: &str, seed: u64) -> Check {
    match property {
        "dpg-equals-naive" => check_dpg_equals_naive(seed),
        "backend-equivalence" => check_backend_equivalence(seed),
        "join-multiset" => check_join_equivalence(seed),
        "batch-lookup" => check_batch_lookup(seed),
        other => Err(Error::Config(format!("unknown property {other:?}"))),
    }
}

/// Last-level cache size of the host in bytes, when the OS reports it.
pub fn host_llc_bytes() -> Option<usize> {
    let base = std::path::Path::new("/sys/devices/system/cpu/cpu0/cache");
    let mut best = None;
    for entry in std::fs::read_dir(base).ok()?.flatten() {
        let Ok(size) = std::fs::read_to_string(entry.path().join("size")) else {
            continue;
        };
        let level: u32 = std::fs::read_to_string(entry.path().join("level"))
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(0);
        let size = size.trim();
        let bytes = if let Some(k) = size.strip_suffix('K') {
            k.parse::<usize>().ok().map(|v| v << 10)
        } else if let Some(m) = size.strip_suffix('M') {
            m.parse::<usize>().ok().map(|v| v << 20)
        } else {
            size.parse().ok()
        };
        if let Some(b) = bytes {
            if best.is_none_or(|(l, _)| level > l) {
                best = Some((level, b));
            }
        }
    }
    best.map(|(_, b)| b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(op: Operation) -> ExperimentConfig {
        ExperimentConfig {
            n: 3000,
            reps: 1,
            record_sizes: vec![16, 64],
            cache: CacheConfig::new(8192, 64).unwrap(),
            ..ExperimentConfig::new(op)
        }
    }

    fn non_timing(rows: &[ResultRow]) -> Vec<ResultRow> {
        rows.iter().cloned().map(|r| ResultRow { elapsed_ns: 0, ..r }).collect()
    }

    #[test]
    fn every_operation_runs_its_defaults() {
        for op in [
            Operation::Retrieve,
            Operation::Sort,
            Operation::Join,
            Operation::IndexLookup,
        ] {
            let mut c = small(op);
            c.trace = true;
            let rows = run_experiment(&c).unwrap();
            assert_eq!(rows.len(), 2 * op.default_methods().len(), "{op}");
            assert!(rows.iter().all(|r| r.oracle_ok));
        }
    }

    #[test]
    fn three_reps_three_rows() {
        let c = ExperimentConfig {
            reps: 3,
            methods: vec!["dpg".into()],
            record_sizes: vec![32],
            ..small(Operation::Retrieve)
        };
        let rows = run_experiment(&c).unwrap();
        assert_eq!(rows.iter().map(|r| r.rep).collect::<Vec<_>>(), [0, 1, 2]);
    }

    #[test]
    fn deterministic_non_timing_columns() {
        let mut c = small(Operation::Sort);
        c.trace = true;
        let a = run_experiment(&c).unwrap();
        c.parallel = 3;
        let b = run_experiment(&c).unwrap();
        assert_eq!(non_timing(&a), non_timing(&b));
    }

    #[test]
    fn skewed_join_keeps_only_skew_safe_methods() {
        let mut c = small(Operation::Join);
        c.distribution = KeyDistribution::exponential();
        let rows = run_experiment(&c).unwrap();
        let mut methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
        methods.dedup();
        assert_eq!(
            methods,
            ["dpg-sort", "sort-merge-alpha", "dpg-sort", "sort-merge-alpha"]
        );

        c.methods = vec!["radix".into()];
        assert!(matches!(run_experiment(&c), Err(Error::Config(_))));
        c.force = true;
        assert_eq!(run_experiment(&c).unwrap().len(), 2);
    }

    #[test]
    fn skewed_sort_refuses_superscalar() {
        let mut c = small(Operation::Sort);
        c.distribution = KeyDistribution::exponential();
        c.methods = vec!["superscalar".into()];
        assert!(run_experiment(&c).is_err());
        c.methods.clear();
        let rows = run_experiment(&c).unwrap();
        assert!(rows.iter().all(|r| !r.method.starts_with("superscalar")));
    }

    #[test]
    fn unknown_method_rejected() {
        let mut c = small(Operation::Retrieve);
        c.methods = vec!["teleport".into()];
        assert!(run_experiment(&c).is_err());
        c.methods.clear();
        c.reps = 0;
        assert!(run_experiment(&c).is_err());
    }

    #[test]
    fn csv_layout() {
        let row = ResultRow {
            operation: Operation::IndexLookup,
            method: "hash-batch".into(),
            record_size: 32,
            n: 10,
            distribution: "uniform".into(),
            rep: 2,
            elapsed_ns: 99,
            misses: None,
            oracle_ok: true,
        };
        let mut buf = Vec::new();
        write_csv(&[row.clone(), ResultRow { misses: Some(7), ..row }], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "operation,method,record_size,n,distribution,rep,elapsed_ns,misses,oracle_ok\n\
             index-lookup,hash-batch,32,10,uniform,2,99,,true\n\
             index-lookup,hash-batch,32,10,uniform,2,99,7,true\n"
        );
    }

    #[test]
    fn retrieve_sweep_ratio_rises_with_record_size() {
        let mut rows = Vec::new();
        for c in ExperimentConfig::retrieve_sweep(&[32, 64, 128, 256, 512], CacheConfig::default(), 5) {
            rows.extend(run_experiment(&c).unwrap());
        }
        let ratios = miss_ratios(&rows);
        assert_eq!(ratios.len(), 5);
        // the advantage shrinks as records approach the block size, then
        // levels off once every record spans whole blocks
        let block = CacheConfig::default().block_size;
        let upto: Vec<f64> = ratios.iter().filter(|r| r.0 <= block).map(|r| r.1).collect();
        assert!(upto.windows(2).all(|w| w[0] < w[1]), "{ratios:?}");
        let last = *upto.last().unwrap();
        assert!(
            ratios
                .iter()
                .filter(|r| r.0 > block)
                .all(|r| (r.1 - last).abs() < 0.1 * last),
            "{ratios:?}"
        );
    }

    #[test]
    fn skewed_retrieve_uses_sampled_runs() {
        let mut c = small(Operation::Retrieve);
        c.distribution = KeyDistribution::exponential();
        c.methods = vec!["dpg".into(), "dpg-uniform".into(), "dpg-sampled".into()];
        assert_eq!(run_experiment(&c).unwrap().len(), 6);
    }

    #[test]
    #[cfg(not(feature = "mutation-skip-gather-advance"))]
    fn verify_suite_passes() {
        let report = verify_suite(11, 5);
        assert_eq!(report.cases.len(), 20);
        assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
        assert_eq!(report.summary().len(), 4);
    }

    #[test]
    fn verify_case_reruns_by_seed() {
        let report = verify_suite(3, 2);
        for c in &report.cases {
            let again = verify_case(c.property, c.seed).unwrap().is_ok();
            assert_eq!(again, c.passed);
        }
        assert!(verify_case("nope", 1).is_err());
    }
}
