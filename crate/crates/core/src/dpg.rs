//! Distribute-probe-gather record retrieval.
//!
//! Retrieving records by an arbitrary rid sequence touches the source file
//! at random. DPG replaces that with three passes whose accesses are either
//! sequential or confined to one cache-sized run of the source:
//!
//! 1. **distribute** the rids into per-run lists, keeping input order;
//! 2. **probe** run `i` of the source with rid list `i`, producing an
//!    internal run in rid-list order;
//! 3. **gather** by re-reading the rids and taking the next record of the
//!    owning internal run.
//!
//! Because phases 1 and 3 visit the runs in the same relative order, the
//! gathered output equals [`naive_retrieve`](crate::records::naive_retrieve).

use crate::datagen::SplitMix64;
use crate::error::{Error, Result};
use crate::records::{RecordFile, Rid, RidSequence, RunLayout};

/// Rids split by run, each list in input order.
#[derive(Debug, Clone)]
pub struct RidRuns {
    runs: Vec<Vec<Rid>>,
    layout: RunLayout,
}

impl RidRuns {
    pub fn runs(&self) -> &[Vec<Rid>] {
        &self.runs
    }

    pub fn layout(&self) -> &RunLayout {
        &self.layout
    }

    pub fn total(&self) -> usize {
        self.runs.iter().map(Vec::len).sum()
    }
}

/// Probed records, run `i` ordered like rid run `i`.
#[derive(Debug, Clone)]
pub struct RecordRuns {
    runs: Vec<RecordFile>,
    layout: RunLayout,
}

impl RecordRuns {
    pub fn runs(&self) -> &[RecordFile] {
        &self.runs
    }

    pub fn layout(&self) -> &RunLayout {
        &self.layout
    }
}

/// Stable counting distribution of `items` into `num_runs` buckets.
///
/// One pass counts bucket sizes so every bucket is allocated exactly once,
/// a second pass appends. Items keep their relative order within a bucket.
pub fn distribute_by<T: Copy>(items: &[T], num_runs: usize, mut run_of: impl FnMut(&T) -> usize) -> Vec<Vec<T>> {
    let mut counts = vec![0usize; num_runs];
    let mut ids = Vec::with_capacity(items.len());
    for item in items {
        let r = run_of(item);
        counts[r] += 1;
        ids.push(r as u32);
    }
    let mut runs: Vec<Vec<T>> = counts.iter().map(|&c| Vec::with_capacity(c)).collect();
    for (item, &r) in items.iter().zip(&ids) {
        runs[r as usize].push(*item);
    }
    runs
}

/// Inverse of [`distribute_by`]: walks `run_ids` (the run of each original
/// position) and takes the next unconsumed element of that run.
///
/// Every run must be consumed exactly.
pub fn gather_by<T: Copy>(run_ids: impl IntoIterator<Item = usize>, runs: &[Vec<T>]) -> Result<Vec<T>> {
    let mut cursors = vec![0usize; runs.len()];
    let mut out = Vec::with_capacity(runs.iter().map(Vec::len).sum());
    for (pos, r) in run_ids.into_iter().enumerate() {
        let run = runs
            .get(r)
            .ok_or_else(|| Error::Consistency(format!("position {pos} names run {r} of {}", runs.len())))?;
        let c = &mut cursors[r];
        let item = run
            .get(*c)
            .ok_or_else(|| Error::Consistency(format!("run {r} exhausted at position {pos}")))?;
        out.push(*item);
        *c += 1;
    }
    check_cursors(&cursors, runs.iter().map(Vec::len))?;
    Ok(out)
}

fn check_cursors(cursors: &[usize], lens: impl Iterator<Item = usize>) -> Result<()> {
    for (r, (&c, len)) in cursors.iter().zip(lens).enumerate() {
        if c != len {
            return Err(Error::Consistency(format!(
                "run {r} has {len} entries but {c} were gathered"
            )));
        }
    }
    Ok(())
}

/// Phase I: split `rids` into per-run lists.
pub fn distribute(rids: &RidSequence, layout: &RunLayout) -> Result<RidRuns> {
    rids.validate(layout.n())?;
    let runs = distribute_by(rids.as_slice(), layout.num_runs(), |&r| layout.run_of_unchecked(r));
    Ok(RidRuns {
        runs,
        layout: layout.clone(),
    })
}

/// Phase II: for each run, copy the addressed records of that input run
/// into an internal run, in rid-list order.
pub fn probe(file: &RecordFile, rid_runs: &RidRuns) -> Result<RecordRuns> {
    let layout = &rid_runs.layout;
    if layout.n() != file.len() {
        return Err(Error::Consistency(format!(
            "layout covers {} records but the file has {}",
            layout.n(),
            file.len()
        )));
    }
    let runs = rid_runs
        .runs
        .iter()
        .map(|rids| {
            let mut run = file.empty_like(rids.len());
            for rid in rids {
                run.push(file.record(rid.index()));
            }
            run
        })
        .collect();
    Ok(RecordRuns {
        runs,
        layout: layout.clone(),
    })
}

/// Phase III: emit records in `rids` order by draining the internal runs.
pub fn gather(rids: &RidSequence, record_runs: &RecordRuns) -> Result<RecordFile> {
    let layout = &record_runs.layout;
    rids.validate(layout.n())?;
    let template = record_runs
        .runs
        .first()
        .ok_or_else(|| Error::Consistency("no record runs".into()))?;
    let mut out = template.empty_like(rids.len());
    let mut cursors = vec![0usize; record_runs.runs.len()];
    for (pos, rid) in rids.iter().enumerate() {
        let r = layout.run_of_unchecked(rid);
        let run = &record_runs.runs[r];
        let c = &mut cursors[r];
        if *c >= run.len() {
            return Err(Error::Consistency(format!(
                "run {r} exhausted at position {pos} (rid {rid})"
            )));
        }
        out.push(run.record(*c));
        if cfg!(not(feature = "mutation-skip-gather-advance")) {
            *c += 1;
        }
    }
    check_cursors(&cursors, record_runs.runs.iter().map(RecordFile::len))?;
    Ok(out)
}

/// Retrieves `file[rids[i]]` for every `i` using the three DPG phases.
pub fn dpg_retrieve(file: &RecordFile, rids: &RidSequence, layout: &RunLayout) -> Result<RecordFile> {
    if rids.is_empty() {
        return Ok(file.empty_like(0));
    }
    let rid_runs = distribute(rids, layout)?;
    let record_runs = probe(file, &rid_runs)?;
    gather(rids, &record_runs)
}

/// Builds a boundary-mode layout whose runs receive roughly equal shares of
/// `rids`, by sorting a uniform sample and cutting at its quantiles.
///
/// Equal quantiles collapse, and a cut at the smallest sampled rid would only
/// carve off an empty run, so the layout may have fewer than `num_runs` runs
/// (one run when every rid is the same).
pub fn skew_partition(
    rids: &RidSequence,
    n: usize,
    num_runs: usize,
    sample_size: usize,
    seed: u64,
) -> Result<RunLayout> {
    if rids.is_empty() {
        return Err(Error::EmptyInput("cannot sample an empty rid sequence"));
    }
    if num_runs == 0 || sample_size < num_runs {
        return Err(Error::Config(format!(
            "need num_runs >= 1 and sample_size >= num_runs (got {num_runs}, {sample_size})"
        )));
    }
    rids.validate(n)?;

    let mut rng = SplitMix64::new(seed);
    let src = rids.as_slice();
    let mut sample: Vec<u32> = (0..sample_size)
        .map(|_| src[rng.below(src.len() as u64) as usize].0)
        .collect();
    sample.sort_unstable();

    let mut cuts: Vec<u32> = (1..num_runs)
        .map(|i| sample[i * sample_size / num_runs])
        .filter(|&c| c > sample[0])
        .collect();
    cuts.dedup();
    RunLayout::with_boundaries(n, cuts)
}
