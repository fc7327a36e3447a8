//! Logical access traces and a fully-associative LRU cache simulator.
//!
//! Algorithms describe their memory behaviour as [`AccessEvent`]s against
//! named regions (input file, rid list, run `i`, ...). An [`AddressSpace`]
//! places the regions at disjoint addresses and [`simulate`] replays the
//! trace at cache-block granularity. Miss counts are the deterministic
//! stand-in for wall-clock timing.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use crate::dpg::{distribute, gather, probe};
use crate::error::{Error, Result};
use crate::records::{naive_retrieve, RecordFile, RidSequence, RunLayout};

const RID_BYTES: u64 = 4;
const REGION_ALIGN: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheConfig {
    pub capacity: usize,
    pub block_size: usize,
}

impl CacheConfig {
    pub fn new(capacity: usize, block_size: usize) -> Result<Self> {
        let c = Self { capacity, block_size };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.block_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "block size {} is not a power of two",
                self.block_size
            )));
        }
        if self.capacity == 0 || !self.capacity.is_multiple_of(self.block_size) {
            return Err(Error::Config(format!(
                "capacity {} is not a positive multiple of the block size {}",
                self.capacity, self.block_size
            )));
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.capacity / self.block_size
    }
}

impl Default for CacheConfig {
    /// 64 KiB of 128-byte blocks.
    fn default() -> Self {
        Self {
            capacity: 64 * 1024,
            block_size: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

impl fmt::Display for AccessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessKind::Read => "R",
            AccessKind::Write => "W",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessEvent {
    pub region: RegionId,
    pub offset: u64,
    pub len: u32,
    pub kind: AccessKind,
}

impl AccessEvent {
    pub fn read(region: RegionId, offset: u64, len: usize) -> Self {
        Self {
            region,
            offset,
            len: len as u32,
            kind: AccessKind::Read,
        }
    }

    pub fn write(region: RegionId, offset: u64, len: usize) -> Self {
        Self {
            region,
            offset,
            len: len as u32,
            kind: AccessKind::Write,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub name: String,
    pub base: u64,
    pub size: u64,
}

/// Disjoint placement of named regions.
#[derive(Debug, Clone, Default)]
pub struct AddressSpace {
    regions: Vec<Region>,
    next_base: u64,
}

impl AddressSpace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Places regions at caller-chosen bases; overlapping ranges are rejected.
    pub fn from_regions(regions: Vec<Region>) -> Result<Self> {
        let mut sorted: Vec<&Region> = regions.iter().collect();
        sorted.sort_by_key(|r| r.base);
        for w in sorted.windows(2) {
            if w[0].base + w[0].size > w[1].base {
                return Err(Error::Config(format!(
                    "regions {} and {} overlap",
                    w[0].name, w[1].name
                )));
            }
        }
        let next_base = regions
            .iter()
            .map(|r| r.base + r.size)
            .max()
            .unwrap_or(0)
            .next_multiple_of(REGION_ALIGN);
        Ok(Self { regions, next_base })
    }

    /// Appends a page-aligned region after all existing ones.
    pub fn add(&mut self, name: impl Into<String>, size: u64) -> RegionId {
        let id = RegionId(self.regions.len() as u32);
        self.regions.push(Region {
            name: name.into(),
            base: self.next_base,
            size,
        });
        self.next_base = (self.next_base + size.max(1)).next_multiple_of(REGION_ALIGN);
        id
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, id: RegionId) -> &Region {
        &self.regions[id.0 as usize]
    }

    pub fn find(&self, name: &str) -> Option<RegionId> {
        self.regions
            .iter()
            .position(|r| r.name == name)
            .map(|i| RegionId(i as u32))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RegionStats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
}

/// Block-granular counters. `accesses == hits + misses` always.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub by_region: Vec<RegionStats>,
}

impl CacheStats {
    pub fn region(&self, id: RegionId) -> RegionStats {
        self.by_region.get(id.0 as usize).copied().unwrap_or_default()
    }

    /// Misses summed over every region whose name starts with `prefix`.
    pub fn misses_in(&self, space: &AddressSpace, prefix: &str) -> u64 {
        space
            .regions()
            .iter()
            .zip(&self.by_region)
            .filter(|(r, _)| r.name.starts_with(prefix))
            .map(|(_, s)| s.misses)
            .sum()
    }

    pub fn miss_rate(&self) -> f64 {
        if self.accesses == 0 {
            0.0
        } else {
            self.misses as f64 / self.accesses as f64
        }
    }

    /// `self - earlier`, for per-phase accounting.
    pub fn since(&self, earlier: &CacheStats) -> CacheStats {
        let by_region = self
            .by_region
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let e = earlier.by_region.get(i).copied().unwrap_or_default();
                RegionStats {
                    accesses: s.accesses - e.accesses,
                    hits: s.hits - e.hits,
                    misses: s.misses - e.misses,
                }
            })
            .collect();
        CacheStats {
            accesses: self.accesses - earlier.accesses,
            hits: self.hits - earlier.hits,
            misses: self.misses - earlier.misses,
            evictions: self.evictions - earlier.evictions,
            by_region,
        }
    }

    /// CSV `region,accesses,hits,misses`, one row per region.
    pub fn write_csv<W: Write>(&self, space: &AddressSpace, mut w: W) -> Result<()> {
        writeln!(w, "region,accesses,hits,misses")?;
        for (r, s) in space.regions().iter().zip(&self.by_region) {
            writeln!(w, "{},{},{},{}", r.name, s.accesses, s.hits, s.misses)?;
        }
        Ok(())
    }
}

const NIL: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Slot {
    block: u64,
    prev: u32,
    next: u32,
}

/// Fully-associative LRU set of block addresses.
struct Lru {
    capacity: usize,
    map: HashMap<u64, u32>,
    slots: Vec<Slot>,
    head: u32, // most recent
    tail: u32, // least recent
}

impl Lru {
    fn new(capacity: usize) -> Self {
        Self {
            capacity,
            map: HashMap::with_capacity(capacity * 2),
            slots: Vec::with_capacity(capacity),
            head: NIL,
            tail: NIL,
        }
    }

    fn unlink(&mut self, i: u32) {
        let Slot { prev, next, .. } = self.slots[i as usize];
        match prev {
            NIL => self.head = next,
            p => self.slots[p as usize].next = next,
        }
        match next {
            NIL => self.tail = prev,
            n => self.slots[n as usize].prev = prev,
        }
    }

    fn push_front(&mut self, i: u32) {
        self.slots[i as usize].prev = NIL;
        self.slots[i as usize].next = self.head;
        if self.head != NIL {
            self.slots[self.head as usize].prev = i;
        }
        self.head = i;
        if self.tail == NIL {
            self.tail = i;
        }
    }

    /// Touches `block`; returns `(hit, evicted)`.
    fn touch(&mut self, block: u64) -> (bool, bool) {
        if let Some(&i) = self.map.get(&block) {
            if self.head != i {
                self.unlink(i);
                self.push_front(i);
            }
            return (true, false);
        }
        if self.slots.len() < self.capacity {
            let i = self.slots.len() as u32;
            self.slots.push(Slot {
                block,
                prev: NIL,
                next: NIL,
            });
            self.push_front(i);
            self.map.insert(block, i);
            (false, false)
        } else {
            let victim = self.tail;
            self.unlink(victim);
            let old = self.slots[victim as usize].block;
            self.map.remove(&old);
            self.slots[victim as usize].block = block;
            self.push_front(victim);
            self.map.insert(block, victim);
            (false, true)
        }
    }
}

/// Streaming simulator: feed events one at a time, read stats at any point.
pub struct CacheSim<'a> {
    config: CacheConfig,
    space: &'a AddressSpace,
    lru: Lru,
    stats: CacheStats,
}

impl<'a> CacheSim<'a> {
    pub fn new(config: CacheConfig, space: &'a AddressSpace) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            space,
            lru: Lru::new(config.num_blocks()),
            stats: CacheStats {
                by_region: vec![RegionStats::default(); space.regions().len()],
                ..Default::default()
            },
        })
    }

    pub fn access(&mut self, ev: &AccessEvent) -> Result<()> {
        let region = self
            .space
            .regions()
            .get(ev.region.0 as usize)
            .ok_or_else(|| Error::Config(format!("unknown region {}", ev.region.0)))?;
        if ev.offset + ev.len as u64 > region.size {
            return Err(Error::Config(format!(
                "access [{}, {}) outside region {} of {} bytes",
                ev.offset,
                ev.offset + ev.len as u64,
                region.name,
                region.size
            )));
        }
        if ev.len == 0 {
            return Ok(());
        }
        let bs = self.config.block_size as u64;
        let start = region.base + ev.offset;
        let first = start / bs;
        let last = (start + ev.len as u64 - 1) / bs;
        let rs = &mut self.stats.by_region[ev.region.0 as usize];
        for block in first..=last {
            let (hit, evicted) = self.lru.touch(block);
            self.stats.accesses += 1;
            rs.accesses += 1;
            if hit {
                self.stats.hits += 1;
                rs.hits += 1;
            } else {
                self.stats.misses += 1;
                rs.misses += 1;
            }
            if evicted {
                self.stats.evictions += 1;
            }
        }
        Ok(())
    }

    pub fn stats(&self) -> &CacheStats {
        &self.stats
    }

    pub fn into_stats(self) -> CacheStats {
        self.stats
    }
}

/// Replays `trace` through a cold cache.
pub fn simulate(trace: &[AccessEvent], config: CacheConfig, space: &AddressSpace) -> Result<CacheStats> {
    let mut sim = CacheSim::new(config, space)?;
    for ev in trace {
        sim.access(ev)?;
    }
    Ok(sim.into_stats())
}

/// A recorded trace with named phase boundaries.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub space: AddressSpace,
    pub events: Vec<AccessEvent>,
    /// `(phase name, index of its first event)`.
    pub phases: Vec<(String, usize)>,
}

impl Trace {
    pub fn begin_phase(&mut self, name: impl Into<String>) {
        self.phases.push((name.into(), self.events.len()));
    }

    #[inline]
    pub fn push(&mut self, ev: AccessEvent) {
        self.events.push(ev);
    }

    /// Simulates the whole trace, returning total stats and one delta per
    /// phase.
    pub fn simulate(&self, config: CacheConfig) -> Result<(CacheStats, Vec<(String, CacheStats)>)> {
        let mut sim = CacheSim::new(config, &self.space)?;
        let mut phases = Vec::with_capacity(self.phases.len());
        let mut bounds: Vec<usize> = self.phases.iter().map(|(_, i)| *i).collect();
        bounds.push(self.events.len());
        let mut consumed = 0;
        for (k, (name, start)) in self.phases.iter().enumerate() {
            for ev in &self.events[consumed..*start] {
                sim.access(ev)?;
            }
            let before = sim.stats().clone();
            for ev in &self.events[*start..bounds[k + 1]] {
                sim.access(ev)?;
            }
            consumed = bounds[k + 1];
            phases.push((name.clone(), sim.stats().since(&before)));
        }
        for ev in &self.events[consumed..] {
            sim.access(ev)?;
        }
        Ok((sim.into_stats(), phases))
    }

    /// Text dump, one `kind region offset length` line per event.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        for ev in &self.events {
            let name = &self.space.region(ev.region).name;
            writeln!(w, "{} {} {} {}", ev.kind, name, ev.offset, ev.len)?;
        }
        Ok(())
    }
}

/// Output of a traced retrieval.
#[derive(Debug, Clone)]
pub struct TracedRun {
    pub output: RecordFile,
    pub trace: Trace,
    pub stats: CacheStats,
    pub phases: Vec<(String, CacheStats)>,
}

impl TracedRun {
    pub fn phase(&self, name: &str) -> Option<&CacheStats> {
        self.phases.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn misses_in(&self, prefix: &str) -> u64 {
        self.stats.misses_in(&self.trace.space, prefix)
    }
}

/// Naive retrieval with its trace: sequential rid reads, random input reads,
/// sequential output writes.
pub fn trace_naive_retrieve(file: &RecordFile, rids: &RidSequence, config: CacheConfig) -> Result<TracedRun> {
    let output = naive_retrieve(file, rids)?;
    let rs = file.record_size() as u64;
    let m = rids.len() as u64;

    let mut trace = Trace::default();
    let rid_list = trace.space.add("rids", m * RID_BYTES);
    let input = trace.space.add("input", file.len() as u64 * rs);
    let out = trace.space.add("output", m * rs);
    trace.events.reserve(3 * rids.len());
    trace.begin_phase("retrieve");
    for (i, rid) in rids.iter().enumerate() {
        let i = i as u64;
        trace.push(AccessEvent::read(rid_list, i * RID_BYTES, RID_BYTES as usize));
        trace.push(AccessEvent::read(input, rid.0 as u64 * rs, rs as usize));
        trace.push(AccessEvent::write(out, i * rs, rs as usize));
    }
    let (stats, phases) = trace.simulate(config)?;
    Ok(TracedRun {
        output,
        trace,
        stats,
        phases,
    })
}

/// DPG retrieval with its per-phase trace. Phases are named `distribute`,
/// `probe` and `gather`; regions are `rids`, `input`, `output`,
/// `rid_run[i]` and `internal_run[i]`.
pub fn trace_dpg_retrieve(
    file: &RecordFile,
    rids: &RidSequence,
    layout: &RunLayout,
    config: CacheConfig,
) -> Result<TracedRun> {
    let rs = file.record_size() as u64;
    let m = rids.len() as u64;
    let mut trace = Trace::default();
    let rid_list = trace.space.add("rids", m * RID_BYTES);
    let input = trace.space.add("input", file.len() as u64 * rs);
    let out = trace.space.add("output", m * rs);

    if rids.is_empty() {
        let (stats, phases) = trace.simulate(config)?;
        return Ok(TracedRun {
            output: file.empty_like(0),
            trace,
            stats,
            phases,
        });
    }

    let rid_runs = distribute(rids, layout)?;
    let record_runs = probe(file, &rid_runs)?;
    let output = gather(rids, &record_runs)?;

    let run_regions: Vec<(RegionId, RegionId)> = rid_runs
        .runs()
        .iter()
        .enumerate()
        .map(|(i, run)| {
            let len = run.len() as u64;
            (
                trace.space.add(format!("rid_run[{i}]"), len * RID_BYTES),
                trace.space.add(format!("internal_run[{i}]"), len * rs),
            )
        })
        .collect();
    trace.events.reserve(6 * rids.len());

    trace.begin_phase("distribute");
    let mut cursors = vec![0u64; layout.num_runs()];
    for (i, rid) in rids.iter().enumerate() {
        trace.push(AccessEvent::read(rid_list, i as u64 * RID_BYTES, RID_BYTES as usize));
        let r = layout.run_of_unchecked(rid);
        trace.push(AccessEvent::write(
            run_regions[r].0,
            cursors[r] * RID_BYTES,
            RID_BYTES as usize,
        ));
        cursors[r] += 1;
    }

    trace.begin_phase("probe");
    for (r, run) in rid_runs.runs().iter().enumerate() {
        let (rid_run, internal) = run_regions[r];
        for (j, rid) in run.iter().enumerate() {
            let j = j as u64;
            trace.push(AccessEvent::read(rid_run, j * RID_BYTES, RID_BYTES as usize));
            trace.push(AccessEvent::read(input, rid.0 as u64 * rs, rs as usize));
            trace.push(AccessEvent::write(internal, j * rs, rs as usize));
        }
    }

    trace.begin_phase("gather");
    cursors.iter_mut().for_each(|c| *c = 0);
    for (i, rid) in rids.iter().enumerate() {
        let i = i as u64;
        trace.push(AccessEvent::read(rid_list, i * RID_BYTES, RID_BYTES as usize));
        let r = layout.run_of_unchecked(rid);
        trace.push(AccessEvent::read(run_regions[r].1, cursors[r] * rs, rs as usize));
        cursors[r] += 1;
        trace.push(AccessEvent::write(out, i * rs, rs as usize));
    }

    let (stats, phases) = trace.simulate(config)?;
    Ok(TracedRun {
        output,
        trace,
        stats,
        phases,
    })
}
