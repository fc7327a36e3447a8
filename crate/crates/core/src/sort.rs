//! Three-phase main-memory sorting: extract key-rid pairs, sort the pairs,
//! then retrieve the records in sorted rid order.
//!
//! All backends order pairs by key bytes (unsigned lexicographic) and break
//! ties by ascending rid, so their outputs are directly comparable.

use std::fmt;
use std::str::FromStr;

use smallvec::SmallVec;

use crate::cachemodel::CacheConfig;
use crate::dpg::dpg_retrieve;
use crate::error::{Error, Result};
use crate::records::{choose_run_length, naive_retrieve, RecordFile, Rid, RidSequence};

/// Inline storage covers the 10-byte Datamation key without allocating.
pub type Key = SmallVec<[u8; 16]>;

pub const DEFAULT_PREFIX_BITS: u32 = 7;
pub const DEFAULT_BITS_PER_PASS: u32 = 8;

/// Key plus the rid of its record. Ordered by key, then rid.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyRid {
    pub key: Key,
    pub rid: Rid,
}

impl KeyRid {
    pub fn new(key: &[u8], rid: u32) -> Self {
        Self {
            key: Key::from_slice(key),
            rid: Rid(rid),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortBackend {
    /// Quicksorted runs merged by a tournament tree. `None` derives the run
    /// size from the cache.
    Alpha { run_size: Option<usize> },
    /// Distribution on the top `prefix_bits` key bits, then per-bucket sort.
    SuperScalar { prefix_bits: u32 },
    /// Stable LSD counting passes over (key, rid).
    CountBucket { bits_per_pass: u32 },
}

impl SortBackend {
    pub const ALPHA: SortBackend = SortBackend::Alpha { run_size: None };
    pub const SUPERSCALAR: SortBackend = SortBackend::SuperScalar {
        prefix_bits: DEFAULT_PREFIX_BITS,
    };
    pub const COUNT_BUCKET: SortBackend = SortBackend::CountBucket {
        bits_per_pass: DEFAULT_BITS_PER_PASS,
    };

    pub fn validate(&self) -> Result<()> {
        match *self {
            SortBackend::Alpha { run_size: Some(r) } if r < 2 => {
                Err(Error::Config(format!("alpha run size must be at least 2, got {r}")))
            }
            SortBackend::SuperScalar { prefix_bits: b } if !(1..=16).contains(&b) => {
                Err(Error::Config(format!("prefix_bits must be in [1, 16], got {b}")))
            }
            SortBackend::CountBucket { bits_per_pass: b } if !(1..=16).contains(&b) => {
                Err(Error::Config(format!("bits_per_pass must be in [1, 16], got {b}")))
            }
            _ => Ok(()),
        }
    }

    /// True when the backend only balances on uniformly distributed keys.
    pub fn assumes_uniform_keys(&self) -> bool {
        matches!(self, SortBackend::SuperScalar { .. })
    }
}

impl fmt::Display for SortBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SortBackend::Alpha { .. } => "alpha",
            SortBackend::SuperScalar { .. } => "superscalar",
            SortBackend::CountBucket { .. } => "countbucket",
        })
    }
}

impl FromStr for SortBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SortBackend::ALPHA),
            "superscalar" => Ok(SortBackend::SUPERSCALAR),
            "countbucket" | "count-bucket" => Ok(SortBackend::COUNT_BUCKET),
            other => Err(Error::Config(format!("unknown sort backend {other:?}"))),
        }
    }
}

/// How the final record-copy phase reads the source file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retrieval {
    Naive,
    Dpg,
}

impl fmt::Display for Retrieval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Retrieval::Naive => "naive",
            Retrieval::Dpg => "dpg",
        })
    }
}

impl Retrieval {
    /// Copies `file[rids[i]]` in order, by the chosen method.
    pub fn retrieve(self, file: &RecordFile, rids: &RidSequence, cache: CacheConfig) -> Result<RecordFile> {
        match self {
            Retrieval::Naive => naive_retrieve(file, rids),
            Retrieval::Dpg if file.is_empty() => naive_retrieve(file, rids),
            Retrieval::Dpg => {
                let layout = choose_run_length(cache.capacity, cache.block_size, file.record_size(), file.len())?;
                dpg_retrieve(file, rids, &layout)
            }
        }
    }
}

/// One sequential scan producing `(key_i, i)` for every record.
pub fn extract_key_rids(file: &RecordFile) -> Vec<KeyRid> {
    (0..file.len()).map(|i| KeyRid::new(file.key(i), i as u32)).collect()
}

/// Quicksort fixed-size runs, then merge them through a tournament tree.
pub fn alpha_sort(mut pairs: Vec<KeyRid>, run_size: usize) -> Result<Vec<KeyRid>> {
    if run_size < 2 {
        return Err(Error::Config(format!(
            "alpha run size must be at least 2, got {run_size}"
        )));
    }
    if pairs.len() <= run_size {
        pairs.sort_unstable();
        return Ok(pairs);
    }
    let mut runs: Vec<Vec<KeyRid>> = Vec::with_capacity(pairs.len().div_ceil(run_size));
    while !pairs.is_empty() {
        let tail = pairs.split_off(pairs.len().saturating_sub(run_size));
        runs.push(tail);
    }
    runs.reverse();
    for run in &mut runs {
        run.sort_unstable();
    }
    Ok(TournamentMerge::new(runs).collect())
}

/// k-way merge where each internal node holds the index of the run whose
/// head wins that subtree. Popping replays only the path of the winner.
struct TournamentMerge<T: Ord> {
    runs: Vec<std::vec::IntoIter<T>>,
    heads: Vec<Option<T>>,
    leaves: usize,
    tree: Vec<usize>,
}

const EMPTY: usize = usize::MAX;

impl<T: Ord> TournamentMerge<T> {
    fn new(runs: Vec<Vec<T>>) -> Self {
        let leaves = runs.len().next_power_of_two().max(1);
        let mut runs: Vec<_> = runs.into_iter().map(Vec::into_iter).collect();
        let heads = runs.iter_mut().map(Iterator::next).collect();
        let mut m = Self {
            runs,
            heads,
            leaves,
            tree: vec![EMPTY; 2 * leaves],
        };
        for i in 0..m.runs.len() {
            m.tree[leaves + i] = i;
        }
        for node in (1..leaves).rev() {
            m.tree[node] = m.play(m.tree[2 * node], m.tree[2 * node + 1]);
        }
        m
    }

    fn head(&self, i: usize) -> Option<&T> {
        self.heads.get(i).and_then(Option::as_ref)
    }

    fn play(&self, a: usize, b: usize) -> usize {
        match (self.head(a), self.head(b)) {
            (None, None) => EMPTY,
            (Some(_), None) => a,
            (None, Some(_)) => b,
            (Some(x), Some(y)) if y < x => b,
            _ => a,
        }
    }
}

impl<T: Ord> Iterator for TournamentMerge<T> {
    type Item = T;

    fn next(&mut self) -> Option<T> {
        let w = self.tree[1];
        if w == EMPTY {
            return None;
        }
        let item = self.heads[w].take()?;
        self.heads[w] = self.runs[w].next();
        let mut node = (self.leaves + w) / 2;
        while node >= 1 {
            self.tree[node] = self.play(self.tree[2 * node], self.tree[2 * node + 1]);
            node /= 2;
        }
        Some(item)
    }
}

#[inline]
fn top_bits(key: &[u8], bits: u32) -> usize {
    let hi = key.first().copied().unwrap_or(0) as u32;
    let lo = key.get(1).copied().unwrap_or(0) as u32;
    (((hi << 8) | lo) >> (16 - bits)) as usize
}

/// Sizes of the `2^prefix_bits` prefix buckets [`superscalar_sort`] would use.
pub fn prefix_bucket_sizes(pairs: &[KeyRid], prefix_bits: u32) -> Vec<usize> {
    let mut counts = vec![0usize; 1 << prefix_bits];
    for p in pairs {
        counts[top_bits(&p.key, prefix_bits)] += 1;
    }
    counts
}

/// Key-prefix distribution sort: bucket by the top `prefix_bits` bits of the
/// key, comparison-sort each bucket, concatenate.
///
/// Correct for any input; balanced only when the prefixes are uniform.
pub fn superscalar_sort(pairs: Vec<KeyRid>, prefix_bits: u32) -> Result<Vec<KeyRid>> {
    if !(1..=16).contains(&prefix_bits) {
        return Err(Error::Config(format!(
            "prefix_bits must be in [1, 16], got {prefix_bits}"
        )));
    }
    let counts = prefix_bucket_sizes(&pairs, prefix_bits);
    let mut buckets: Vec<Vec<KeyRid>> = counts.iter().map(|&c| Vec::with_capacity(c)).collect();
    for p in pairs {
        let b = top_bits(&p.key, prefix_bits);
        buckets[b].push(p);
    }
    let mut out = Vec::with_capacity(counts.iter().sum());
    for mut b in buckets {
        b.sort_unstable();
        out.append(&mut b);
    }
    Ok(out)
}

/// Stable LSD radix sort of `(sort_key, payload)` pairs by the low
/// `key_bits` bits, `bits_per_pass` bits at a time.
///
/// Each pass counts bucket occupancy, turns the counts into bucket offsets
/// and scatters.
pub fn count_bucket_sort<T: Copy>(items: &[(u64, T)], key_bits: u32, bits_per_pass: u32) -> Result<Vec<(u64, T)>> {
    if !(1..=16).contains(&bits_per_pass) {
        return Err(Error::Config(format!(
            "bits_per_pass must be in [1, 16], got {bits_per_pass}"
        )));
    }
    if key_bits > 64 {
        return Err(Error::Config(format!("key_bits must be at most 64, got {key_bits}")));
    }
    if key_bits < 64 {
        if let Some(&(key, _)) = items.iter().find(|(k, _)| k >> key_bits != 0) {
            return Err(Error::KeyOutOfRange { key, key_bits });
        }
    }
    let mut src = items.to_vec();
    if key_bits == 0 {
        return Ok(src);
    }
    let mut dst = src.clone();
    let buckets = 1usize << bits_per_pass;
    let mask = (buckets - 1) as u64;
    let mut counts = vec![0usize; buckets];
    let mut shift = 0;
    while shift < key_bits {
        counts.iter_mut().for_each(|c| *c = 0);
        for &(k, _) in &src {
            counts[((k >> shift) & mask) as usize] += 1;
        }
        let mut offset = 0;
        for c in counts.iter_mut() {
            let n = *c;
            *c = offset;
            offset += n;
        }
        for &item in &src {
            let b = ((item.0 >> shift) & mask) as usize;
            dst[counts[b]] = item;
            counts[b] += 1;
        }
        std::mem::swap(&mut src, &mut dst);
        shift += bits_per_pass;
    }
    Ok(src)
}

/// `width`-bit digit of `key` read as a big-endian integer, starting at bit
/// `lsb` counted from the least significant end. Bits above the key are 0.
#[inline]
fn key_digit(key: &[u8], lsb: usize, width: u32) -> usize {
    let byte = lsb / 8;
    let mut v = 0u32;
    for k in 0..3 {
        if let Some(i) = (key.len()).checked_sub(1 + byte + k) {
            v |= (key[i] as u32) << (8 * k);
        }
    }
    ((v >> (lsb % 8)) & ((1u32 << width) - 1)) as usize
}

/// Stable LSD counting sort of key-rid pairs on the composite `(key, rid)`:
/// rid digits first, then key digits from the least significant byte up.
pub fn count_bucket_sort_pairs(pairs: Vec<KeyRid>, bits_per_pass: u32) -> Result<Vec<KeyRid>> {
    if !(1..=16).contains(&bits_per_pass) {
        return Err(Error::Config(format!(
            "bits_per_pass must be in [1, 16], got {bits_per_pass}"
        )));
    }
    if pairs.is_empty() {
        return Ok(pairs);
    }
    let key_len = pairs.iter().map(|p| p.key.len()).max().unwrap_or(0);
    if pairs.iter().any(|p| p.key.len() != key_len) {
        return Err(Error::Config("count bucket sort needs equal-length keys".into()));
    }
    let max_rid = pairs.iter().map(|p| p.rid.0).max().unwrap_or(0);
    let rid_bits = (u32::BITS - max_rid.leading_zeros()).max(1);

    let buckets = 1usize << bits_per_pass;
    let mut order: Vec<u32> = (0..pairs.len() as u32).collect();
    let mut next = order.clone();
    let mut counts = vec![0usize; buckets];

    let mut pass = |digit: &dyn Fn(&KeyRid) -> usize, order: &mut Vec<u32>, next: &mut Vec<u32>| {
        counts.iter_mut().for_each(|c| *c = 0);
        for &i in order.iter() {
            counts[digit(&pairs[i as usize])] += 1;
        }
        let mut offset = 0;
        for c in counts.iter_mut() {
            let n = *c;
            *c = offset;
            offset += n;
        }
        for &i in order.iter() {
            let b = digit(&pairs[i as usize]);
            next[counts[b]] = i;
            counts[b] += 1;
        }
        std::mem::swap(order, next);
    };

    let mut shift = 0;
    while shift < rid_bits {
        let width = bits_per_pass.min(rid_bits - shift);
        let mask = (1u32 << width) - 1;
        pass(
            &|p: &KeyRid| ((p.rid.0 >> shift) & mask) as usize,
            &mut order,
            &mut next,
        );
        shift += bits_per_pass;
    }
    let key_bits = key_len * 8;
    let mut lsb = 0;
    while lsb < key_bits {
        let width = bits_per_pass.min((key_bits - lsb) as u32);
        pass(&|p: &KeyRid| key_digit(&p.key, lsb, width), &mut order, &mut next);
        lsb += bits_per_pass as usize;
    }

    let mut slots: Vec<Option<KeyRid>> = pairs.into_iter().map(Some).collect();
    Ok(order
        .into_iter()
        .map(|i| slots[i as usize].take().expect("each index appears once"))
        .collect())
}

/// Sorts key-rid pairs with `backend`. `default_run_size` fills in an
/// unspecified alpha run size.
pub fn sort_pairs(pairs: Vec<KeyRid>, backend: SortBackend, default_run_size: usize) -> Result<Vec<KeyRid>> {
    backend.validate()?;
    match backend {
        SortBackend::Alpha { run_size } => alpha_sort(pairs, run_size.unwrap_or(default_run_size).max(2)),
        SortBackend::SuperScalar { prefix_bits } => superscalar_sort(pairs, prefix_bits),
        SortBackend::CountBucket { bits_per_pass } => count_bucket_sort_pairs(pairs, bits_per_pass),
    }
}

/// Sorts the records of `file` by key (ties by original rid).
pub fn full_sort(
    file: &RecordFile,
    backend: SortBackend,
    retrieval: Retrieval,
    cache: CacheConfig,
) -> Result<RecordFile> {
    backend.validate()?;
    if file.is_empty() {
        return Ok(file.empty_like(0));
    }
    let layout = choose_run_length(cache.capacity, cache.block_size, file.record_size(), file.len())?;
    let run_size = layout.run_length().unwrap_or(file.len());
    let sorted = sort_pairs(extract_key_rids(file), backend, run_size)?;
    let rids: RidSequence = sorted.into_iter().map(|p| p.rid).collect();
    retrieval.retrieve(file, &rids, cache)
}
