//! Equijoins of two record files.
//!
//! Every method emits rows laid out as the R record followed by the F
//! record, with the row key taken from the R half. Row order differs by
//! method, so results are compared as multisets.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::cachemodel::CacheConfig;
use crate::error::{Error, Result};
use crate::index::IndexRef;
use crate::records::{RecordFile, Rid, RidSequence};
use crate::sort::{count_bucket_sort, full_sort, Key, Retrieval, SortBackend};

/// A joined file: R record ++ F record per row.
pub type JoinedFile = RecordFile;

/// `(key, rid_R, rid_F)`: R[rid_r] references F[rid_f] through `key`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JoinTriple {
    pub key: Key,
    pub rid_r: Rid,
    pub rid_f: Rid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LookupMode {
    Individual,
    Batch,
}

/// Empty joined file for `r` and `f`, keyed like `r`.
pub fn joined_like(r: &RecordFile, f: &RecordFile, capacity: usize) -> Result<JoinedFile> {
    let mut out = RecordFile::with_key_offset(r.record_size() + f.record_size(), r.key_len(), r.key_offset())?;
    out.reserve(capacity);
    Ok(out)
}

struct RowWriter {
    out: JoinedFile,
    row: Vec<u8>,
}

impl RowWriter {
    fn new(r: &RecordFile, f: &RecordFile, capacity: usize) -> Result<Self> {
        Ok(Self {
            out: joined_like(r, f, capacity)?,
            row: Vec::with_capacity(r.record_size() + f.record_size()),
        })
    }

    #[inline]
    fn emit(&mut self, r_rec: &[u8], f_rec: &[u8]) {
        self.row.clear();
        self.row.extend_from_slice(r_rec);
        self.row.extend_from_slice(f_rec);
        self.out.push(&self.row);
    }

    fn finish(self) -> JoinedFile {
        self.out
    }
}

/// Scans R and resolves every join key through the index on F.
pub fn construct_join_triples(r: &RecordFile, f_index: IndexRef<'_>, mode: LookupMode) -> Result<Vec<JoinTriple>> {
    let keys: Vec<&[u8]> = (0..r.len()).map(|i| r.key(i)).collect();
    let found = match mode {
        LookupMode::Individual => keys.iter().map(|k| f_index.lookup(k)).collect(),
        LookupMode::Batch => f_index.batch_lookup(&keys)?,
    };
    keys.iter()
        .zip(found)
        .enumerate()
        .map(|(i, (k, rid_f))| {
            let rid_r = i as u32;
            let rid_f = rid_f.ok_or(Error::ReferentialIntegrity { rid_r })?;
            Ok(JoinTriple {
                key: Key::from_slice(k),
                rid_r: Rid(rid_r),
                rid_f,
            })
        })
        .collect()
}

fn check_triples(r: &RecordFile, f: &RecordFile, triples: &[JoinTriple]) -> Result<()> {
    for (i, t) in triples.iter().enumerate() {
        if t.rid_r.index() >= r.len() {
            return Err(Error::RidOutOfRange {
                index: i,
                rid: t.rid_r.0,
                len: r.len(),
            });
        }
        if t.rid_f.index() >= f.len() {
            return Err(Error::RidOutOfRange {
                index: i,
                rid: t.rid_f.0,
                len: f.len(),
            });
        }
    }
    Ok(())
}

/// Moves F's records into R's order with DPG, then zips with R.
pub fn dpg_move_join(r: &RecordFile, f: &RecordFile, triples: &[JoinTriple], cache: CacheConfig) -> Result<JoinedFile> {
    check_triples(r, f, triples)?;
    let rid_f: RidSequence = triples.iter().map(|t| t.rid_f).collect();
    let moved = Retrieval::Dpg.retrieve(f, &rid_f, cache)?;
    let mut w = RowWriter::new(r, f, triples.len())?;
    for (t, f_rec) in triples.iter().zip(moved.records()) {
        w.emit(r.record(t.rid_r.index()), f_rec);
    }
    Ok(w.finish())
}

/// Bits and bits-per-pass used to sort rid pairs by `rid_F` over `n_f`
/// records: two passes over `ceil(log2 n_f)` bits.
pub fn rid_sort_bits(n_f: usize) -> (u32, u32) {
    let key_bits = (usize::BITS - n_f.saturating_sub(1).leading_zeros()).max(1);
    (key_bits, key_bits.div_ceil(2))
}

/// Sorts rid pairs by `rid_F`, moves R's records into that order with DPG,
/// then merges with a sequential scan of F. F records nobody references
/// are skipped.
pub fn dpg_sort_join(r: &RecordFile, f: &RecordFile, triples: &[JoinTriple], cache: CacheConfig) -> Result<JoinedFile> {
    check_triples(r, f, triples)?;
    let pairs: Vec<(u64, Rid)> = triples.iter().map(|t| (t.rid_f.0 as u64, t.rid_r)).collect();
    let (key_bits, bits_per_pass) = rid_sort_bits(f.len());
    let sorted = count_bucket_sort(&pairs, key_bits, bits_per_pass)?;
    let rid_r: RidSequence = sorted.iter().map(|&(_, rid)| rid).collect();
    let moved = Retrieval::Dpg.retrieve(r, &rid_r, cache)?;

    let mut w = RowWriter::new(r, f, triples.len())?;
    let mut j = 0;
    for (fid, f_rec) in f.records().enumerate() {
        while j < sorted.len() && sorted[j].0 == fid as u64 {
            w.emit(moved.record(j), f_rec);
            j += 1;
        }
    }
    debug_assert_eq!(j, sorted.len());
    Ok(w.finish())
}

/// Sorts both relations on the key and merges, emitting the cross product
/// of every pair of equal-key groups.
pub fn sort_merge_join(
    r: &RecordFile,
    f: &RecordFile,
    backend: SortBackend,
    retrieval: Retrieval,
    cache: CacheConfig,
) -> Result<JoinedFile> {
    let sr = full_sort(r, backend, retrieval, cache)?;
    let sf = full_sort(f, backend, retrieval, cache)?;
    let mut w = RowWriter::new(r, f, r.len().max(f.len()))?;
    let (mut i, mut j) = (0, 0);
    while i < sr.len() && j < sf.len() {
        let (kr, kf) = (sr.key(i), sf.key(j));
        match kr.cmp(kf) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                let gi = (i..sr.len()).find(|&x| sr.key(x) != kr).unwrap_or(sr.len());
                let gj = (j..sf.len()).find(|&y| sf.key(y) != kf).unwrap_or(sf.len());
                for x in i..gi {
                    for y in j..gj {
                        w.emit(sr.record(x), sf.record(y));
                    }
                }
                i = gi;
                j = gj;
            }
        }
    }
    Ok(w.finish())
}

/// Integer view of a key: its last (up to) eight bytes, big-endian.
#[inline]
pub fn key_low_bits(key: &[u8]) -> u64 {
    let tail = &key[key.len().saturating_sub(8)..];
    tail.iter().fold(0u64, |acc, &b| (acc << 8) | b as u64)
}

/// Smallest radix width whose average partition of the larger relation
/// fits in half the cache.
pub fn choose_radix_bits(r: &RecordFile, f: &RecordFile, cache: CacheConfig) -> u32 {
    let larger = (r.len() * r.record_size()).max(f.len() * f.record_size());
    let target = (cache.capacity / 2).max(1);
    let mut bits = 0;
    while bits < MAX_RADIX_BITS && larger.div_ceil(1 << bits) > target {
        bits += 1;
    }
    bits
}

pub const MAX_RADIX_BITS: u32 = 20;

/// Rids of `file` grouped by cluster, with cluster start offsets.
fn radix_partition(file: &RecordFile, radix_bits: u32) -> (Vec<u32>, Vec<usize>) {
    let mask = (1u64 << radix_bits) - 1;
    let clusters = 1usize << radix_bits;
    let cluster_of: Vec<usize> = (0..file.len())
        .map(|i| (key_low_bits(file.key(i)) & mask) as usize)
        .collect();
    let mut offsets = vec![0usize; clusters + 1];
    for &c in &cluster_of {
        offsets[c + 1] += 1;
    }
    for c in 0..clusters {
        offsets[c + 1] += offsets[c];
    }
    let mut next = offsets.clone();
    let mut rids = vec![0u32; file.len()];
    for (i, &c) in cluster_of.iter().enumerate() {
        rids[next[c]] = i as u32;
        next[c] += 1;
    }
    (rids, offsets)
}

/// Partitions both relations on the low `radix_bits` of the key, then hash
/// joins each pair of matching clusters, building on the smaller side.
pub fn radix_join(r: &RecordFile, f: &RecordFile, radix_bits: u32, _cache: CacheConfig) -> Result<JoinedFile> {
    if radix_bits > MAX_RADIX_BITS {
        return Err(Error::Config(format!(
            "radix_bits must be at most {MAX_RADIX_BITS}, got {radix_bits}"
        )));
    }
    let (r_rids, r_off) = radix_partition(r, radix_bits);
    let (f_rids, f_off) = radix_partition(f, radix_bits);
    let mut w = RowWriter::new(r, f, r.len().max(f.len()))?;
    let mut table: HashMap<&[u8], Vec<u32>> = HashMap::new();
    for c in 0..(1usize << radix_bits) {
        let rc = &r_rids[r_off[c]..r_off[c + 1]];
        let fc = &f_rids[f_off[c]..f_off[c + 1]];
        if rc.is_empty() || fc.is_empty() {
            continue;
        }
        table.clear();
        if rc.len() <= fc.len() {
            for &x in rc {
                table.entry(r.key(x as usize)).or_default().push(x);
            }
            for &y in fc {
                if let Some(xs) = table.get(f.key(y as usize)) {
                    for &x in xs {
                        w.emit(r.record(x as usize), f.record(y as usize));
                    }
                }
            }
        } else {
            for &y in fc {
                table.entry(f.key(y as usize)).or_default().push(y);
            }
            for &x in rc {
                if let Some(ys) = table.get(r.key(x as usize)) {
                    for &y in ys {
                        w.emit(r.record(x as usize), f.record(y as usize));
                    }
                }
            }
        }
    }
    Ok(w.finish())
}

/// Every key-equal pair, R-major. The correctness oracle for the other
/// methods.
pub fn nested_loop_join(r: &RecordFile, f: &RecordFile) -> Result<JoinedFile> {
    let mut w = RowWriter::new(r, f, r.len())?;
    for r_rec in r.records() {
        let kr = r.key_of(r_rec);
        for f_rec in f.records() {
            if f.key_of(f_rec) == kr {
                w.emit(r_rec, f_rec);
            }
        }
    }
    Ok(w.finish())
}

/// Rows of `file`, sorted, for order-insensitive comparison.
pub fn row_multiset(file: &RecordFile) -> Vec<&[u8]> {
    let mut rows: Vec<&[u8]> = file.records().collect();
    rows.sort_unstable();
    rows
}

pub fn same_rows(a: &RecordFile, b: &RecordFile) -> bool {
    a.record_size() == b.record_size() && a.len() == b.len() && row_multiset(a) == row_multiset(b)
}

/// True when both halves of every row carry the same key.
pub fn keys_agree(joined: &JoinedFile, r: &RecordFile, f: &RecordFile) -> bool {
    let (rs, ko, kl) = (r.record_size(), f.key_offset(), f.key_len());
    joined.records().all(|row| {
        let (rh, fh) = row.split_at(rs);
        r.key_of(rh) == &fh[ko..ko + kl]
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinMethod {
    DpgMove,
    DpgSort,
    SortMerge { backend: SortBackend, retrieval: Retrieval },
    Radix,
    NestedLoop,
}

impl JoinMethod {
    /// The six compared methods: both DPG joins, sort-merge on each sort
    /// backend with DPG retrieval, and radix join.
    pub const COMPARED: [JoinMethod; 6] = [
        JoinMethod::DpgMove,
        JoinMethod::DpgSort,
        JoinMethod::SortMerge {
            backend: SortBackend::ALPHA,
            retrieval: Retrieval::Dpg,
        },
        JoinMethod::SortMerge {
            backend: SortBackend::SUPERSCALAR,
            retrieval: Retrieval::Dpg,
        },
        JoinMethod::SortMerge {
            backend: SortBackend::COUNT_BUCKET,
            retrieval: Retrieval::Dpg,
        },
        JoinMethod::Radix,
    ];

    /// Methods that still perform acceptably on skewed keys.
    pub fn valid_for_skew(&self) -> bool {
        match self {
            JoinMethod::DpgSort | JoinMethod::NestedLoop => true,
            JoinMethod::SortMerge { backend, .. } => matches!(backend, SortBackend::Alpha { .. }),
            JoinMethod::DpgMove | JoinMethod::Radix => false,
        }
    }

    /// Runs the join. The DPG joins build a hash index on F and construct
    /// their triples with batch lookups.
    pub fn run(&self, r: &RecordFile, f: &RecordFile, cache: CacheConfig) -> Result<JoinedFile> {
        match *self {
            JoinMethod::DpgMove | JoinMethod::DpgSort => {
                let triples = triples_via_hash(r, f, cache)?;
                if *self == JoinMethod::DpgMove {
                    dpg_move_join(r, f, &triples, cache)
                } else {
                    dpg_sort_join(r, f, &triples, cache)
                }
            }
            JoinMethod::SortMerge { backend, retrieval } => sort_merge_join(r, f, backend, retrieval, cache),
            JoinMethod::Radix => radix_join(r, f, choose_radix_bits(r, f, cache), cache),
            JoinMethod::NestedLoop => nested_loop_join(r, f),
        }
    }
}

/// Join triples through a load-factor-0.5 hash index on F whose batch
/// partitions fill half the cache.
pub fn triples_via_hash(r: &RecordFile, f: &RecordFile, cache: CacheConfig) -> Result<Vec<JoinTriple>> {
    let pairs: Vec<(&[u8], Rid)> = (0..f.len()).map(|i| (f.key(i), Rid(i as u32))).collect();
    let index = crate::index::HashIndex::build(&pairs, (2 * f.len()).max(1), 0x5EED)?;
    let slot_bytes = f.key_len() + 4;
    let partition_slots = (cache.capacity / 2 / slot_bytes).max(1);
    construct_join_triples(
        r,
        IndexRef::Hash {
            index: &index,
            partition_slots,
        },
        LookupMode::Batch,
    )
}

impl fmt::Display for JoinMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JoinMethod::DpgMove => f.write_str("dpg-move"),
            JoinMethod::DpgSort => f.write_str("dpg-sort"),
            JoinMethod::SortMerge { backend, retrieval } => {
                write!(f, "sort-merge-{backend}")?;
                if *retrieval == Retrieval::Naive {
                    f.write_str("-naive")?;
                }
                Ok(())
            }
            JoinMethod::Radix => f.write_str("radix"),
            JoinMethod::NestedLoop => f.write_str("nested-loop"),
        }
    }
}

impl FromStr for JoinMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dpg-move" => Ok(JoinMethod::DpgMove),
            "dpg-sort" => Ok(JoinMethod::DpgSort),
            "radix" => Ok(JoinMethod::Radix),
            "nested-loop" => Ok(JoinMethod::NestedLoop),
            _ => {
                let rest = s
                    .strip_prefix("sort-merge-")
                    .ok_or_else(|| Error::Config(format!("unknown join method {s:?}")))?;
                let (backend, retrieval) = match rest.strip_suffix("-naive") {
                    Some(b) => (b, Retrieval::Naive),
                    None => (rest, Retrieval::Dpg),
                };
                Ok(JoinMethod::SortMerge {
                    backend: backend.parse()?,
                    retrieval,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_fk_pair, DuplicatePolicy, KeyDistribution, RelationSpec, SplitMix64};
    use crate::index::{EnhancedBPlusTree, HashIndex};

    fn file(rs: usize, kl: usize, rows: &[&[u8]]) -> RecordFile {
        let mut f = RecordFile::new(rs, kl).unwrap();
        for r in rows {
            f.push(r);
        }
        f
    }

    fn cache() -> CacheConfig {
        CacheConfig::new(4096, 64).unwrap()
    }

    fn spec(n_r: usize, n_f: usize, dup: DuplicatePolicy, dist: KeyDistribution) -> RelationSpec {
        RelationSpec {
            n_r,
            n_f,
            record_size_r: 24,
            record_size_f: 16,
            key_len: 8,
            duplicates: dup,
            distribution: dist,
        }
    }

    fn hash_of(f: &RecordFile) -> HashIndex {
        let pairs: Vec<_> = (0..f.len()).map(|i| (f.key(i), Rid(i as u32))).collect();
        HashIndex::build(&pairs, 2 * f.len(), 9).unwrap()
    }

    #[test]
    fn triples_small() {
        let r = file(2, 1, &[b"xR", b"yR"]);
        let f = file(2, 1, &[b"y0", b"a1", b"b2", b"x3"]);
        let idx = hash_of(&f);
        let t = construct_join_triples(
            &r,
            IndexRef::Hash {
                index: &idx,
                partition_slots: 2,
            },
            LookupMode::Individual,
        )
        .unwrap();
        assert_eq!(
            t,
            vec![
                JoinTriple {
                    key: Key::from_slice(b"x"),
                    rid_r: Rid(0),
                    rid_f: Rid(3)
                },
                JoinTriple {
                    key: Key::from_slice(b"y"),
                    rid_r: Rid(1),
                    rid_f: Rid(0)
                },
            ]
        );
    }

    #[test]
    fn triples_missing_key() {
        let r = file(1, 1, &[b"a", b"z"]);
        let f = file(1, 1, &[b"a"]);
        let idx = hash_of(&f);
        for mode in [LookupMode::Individual, LookupMode::Batch] {
            let err = construct_join_triples(
                &r,
                IndexRef::Hash {
                    index: &idx,
                    partition_slots: 4,
                },
                mode,
            );
            assert!(matches!(err, Err(Error::ReferentialIntegrity { rid_r: 1 })));
        }
    }

    #[test]
    fn triples_batch_equals_individual() {
        let (r, f) = gen_fk_pair(
            &spec(
                100_000,
                20_000,
                DuplicatePolicy::RandomWithDuplicates,
                KeyDistribution::Uniform,
            ),
            1,
        )
        .unwrap();
        let mut sorted: Vec<_> = (0..f.len()).map(|i| (f.key(i), Rid(i as u32))).collect();
        sorted.sort();
        let tree = EnhancedBPlusTree::build(&sorted, 16).unwrap();
        let idx = hash_of(&f);
        for index in [
            IndexRef::BPlus(&tree),
            IndexRef::Hash {
                index: &idx,
                partition_slots: 512,
            },
        ] {
            let a = construct_join_triples(&r, index, LookupMode::Individual).unwrap();
            let b = construct_join_triples(&r, index, LookupMode::Batch).unwrap();
            assert_eq!(a.len(), r.len());
            assert_eq!(a, b);
            for t in a.iter().step_by(97) {
                assert_eq!(r.key(t.rid_r.index()), &t.key[..]);
                assert_eq!(f.key(t.rid_f.index()), &t.key[..]);
            }
        }
    }

    #[test]
    fn single_triple_move() {
        let r = file(2, 1, &[b"kr"]);
        let f = file(3, 1, &[b"zzz", b"kff"]);
        let t = [JoinTriple {
            key: Key::from_slice(b"k"),
            rid_r: Rid(0),
            rid_f: Rid(1),
        }];
        let out = dpg_move_join(&r, &f, &t, cache()).unwrap();
        assert_eq!(out.as_bytes(), b"krkff");
        assert_eq!(out.record_size(), 5);
    }

    #[test]
    fn rid_sort_bits_for_two_to_the_twenty() {
        assert_eq!(rid_sort_bits(1 << 20), (20, 10));
        assert_eq!(rid_sort_bits(1), (1, 1));
        assert_eq!(rid_sort_bits(1000), (10, 5));
    }

    #[test]
    fn sort_join_on_f_ordered_keys_is_f_ordered() {
        let r = file(2, 1, &[b"c0", b"a1", b"b2"]);
        let f = file(2, 1, &[b"aF", b"bF", b"cF"]);
        let idx = hash_of(&f);
        let t = construct_join_triples(
            &r,
            IndexRef::Hash {
                index: &idx,
                partition_slots: 8,
            },
            LookupMode::Batch,
        )
        .unwrap();
        let out = dpg_sort_join(&r, &f, &t, cache()).unwrap();
        assert_eq!(out.as_bytes(), b"a1aFb2bFc0cF");
    }

    #[test]
    fn sort_merge_small() {
        let r = file(1, 1, &[b"a", b"b"]);
        let f = file(1, 1, &[b"b", b"c"]);
        let out = sort_merge_join(&r, &f, SortBackend::ALPHA, Retrieval::Dpg, cache()).unwrap();
        assert_eq!(out.as_bytes(), b"bb");
    }

    #[test]
    fn sort_merge_many_to_many() {
        let r = file(2, 1, &[b"k1", b"j0", b"k2"]);
        let f = file(2, 1, &[b"kA", b"kB", b"kC", b"xD"]);
        for backend in [SortBackend::ALPHA, SortBackend::SUPERSCALAR, SortBackend::COUNT_BUCKET] {
            let out = sort_merge_join(&r, &f, backend, Retrieval::Naive, cache()).unwrap();
            assert_eq!(out.len(), 6);
            assert!(same_rows(&out, &nested_loop_join(&r, &f).unwrap()));
        }
    }

    #[test]
    fn nested_loop_edges() {
        let r = file(1, 1, &[b"a", b"b"]);
        let f = file(1, 1, &[b"c"]);
        assert!(nested_loop_join(&r, &f).unwrap().is_empty());
        let one = file(1, 1, &[b"q"]);
        assert_eq!(nested_loop_join(&one, &one).unwrap().as_bytes(), b"qq");
    }

    #[test]
    fn nested_loop_count_is_histogram_product() {
        let mut rng = SplitMix64::new(4);
        let mk = |rng: &mut SplitMix64| {
            let mut fl = RecordFile::new(4, 1).unwrap();
            for _ in 0..1000 {
                let mut rec = [0u8; 4];
                rng.fill_bytes(&mut rec);
                rec[0] %= 50;
                fl.push(&rec);
            }
            fl
        };
        let (r, f) = (mk(&mut rng), mk(&mut rng));
        let mut hr = [0usize; 50];
        let mut hf = [0usize; 50];
        for i in 0..1000 {
            hr[r.key(i)[0] as usize] += 1;
            hf[f.key(i)[0] as usize] += 1;
        }
        let expected: usize = hr.iter().zip(&hf).map(|(a, b)| a * b).sum();
        assert_eq!(nested_loop_join(&r, &f).unwrap().len(), expected);
    }

    #[test]
    fn radix_edges() {
        let r = file(2, 1, &[b"a1", b"b2", b"a3"]);
        let f = file(2, 1, &[b"aX", b"cY"]);
        let oracle = nested_loop_join(&r, &f).unwrap();
        for bits in [0, 1, 3] {
            assert!(same_rows(&radix_join(&r, &f, bits, cache()).unwrap(), &oracle));
        }
        let same = file(1, 1, &[&b"k"[..]; 7]);
        let other = file(1, 1, &[&b"k"[..]; 5]);
        let out = radix_join(&same, &other, 4, cache()).unwrap();
        assert_eq!(out.len(), 35);
        assert!(radix_join(&r, &f, 40, cache()).is_err());
    }

    #[test]
    fn radix_bits_fit_half_cache() {
        let (r, f) = gen_fk_pair(
            &spec(10_000, 10_000, DuplicatePolicy::None, KeyDistribution::Uniform),
            2,
        )
        .unwrap();
        let bits = choose_radix_bits(&r, &f, cache());
        assert!((r.len() * r.record_size()).div_ceil(1 << bits) <= cache().capacity / 2);
        assert!((r.len() * r.record_size()).div_ceil(1 << (bits - 1)) > cache().capacity / 2);
        assert!(same_rows(
            &radix_join(&r, &f, bits, cache()).unwrap(),
            &nested_loop_join(&r, &f).unwrap()
        ));
    }

    #[test]
    fn all_methods_match_oracle() {
        let cases = [
            (DuplicatePolicy::None, KeyDistribution::Uniform, 3000, 3000),
            (
                DuplicatePolicy::RandomWithDuplicates,
                KeyDistribution::Uniform,
                4000,
                800,
            ),
            (
                DuplicatePolicy::RandomWithDuplicates,
                KeyDistribution::exponential(),
                4000,
                1500,
            ),
        ];
        for (k, (dup, dist, n_r, n_f)) in cases.into_iter().enumerate() {
            let (r, f) = gen_fk_pair(&spec(n_r, n_f, dup, dist), k as u64).unwrap();
            let oracle = nested_loop_join(&r, &f).unwrap();
            assert_eq!(oracle.len(), r.len());
            let mut methods = JoinMethod::COMPARED.to_vec();
            methods.push(JoinMethod::SortMerge {
                backend: SortBackend::ALPHA,
                retrieval: Retrieval::Naive,
            });
            for m in methods {
                let out = m.run(&r, &f, cache()).unwrap();
                assert!(same_rows(&out, &oracle), "{m} case {k}");
                assert!(keys_agree(&out, &r, &f), "{m}");
            }
        }
    }

    #[test]
    fn method_names_round_trip() {
        let mut all = JoinMethod::COMPARED.to_vec();
        all.push(JoinMethod::NestedLoop);
        all.push(JoinMethod::SortMerge {
            backend: SortBackend::SUPERSCALAR,
            retrieval: Retrieval::Naive,
        });
        for m in all {
            assert_eq!(m.to_string().parse::<JoinMethod>().unwrap(), m);
        }
        assert!("sort-merge-bogus".parse::<JoinMethod>().is_err());
        let skew: Vec<String> = JoinMethod::COMPARED
            .iter()
            .filter(|m| m.valid_for_skew())
            .map(|m| m.to_string())
            .collect();
        assert_eq!(skew, ["dpg-sort", "sort-merge-alpha"]);
    }
}
