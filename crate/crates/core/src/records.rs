//! Fixed-size record files, record ids and the run partitioning shared by
//! every two-pass algorithm in the crate.
//!
//! A [`RecordFile`] is a single contiguous byte buffer; record `i` lives at
//! `[i * record_size, (i + 1) * record_size)`. Rids are dense 0-based
//! positions into that buffer.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Default Datamation key width.
pub const DEFAULT_KEY_LEN: usize = 10;

const FILE_MAGIC: &[u8; 4] = b"DPGF";
const RID_MAGIC: &[u8; 4] = b"DPGR";

/// Position of a record inside a [`RecordFile`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(transparent)]
pub struct Rid(pub u32);

impl Rid {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for Rid {
    fn from(v: u32) -> Self {
        Rid(v)
    }
}

impl fmt::Display for Rid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Ordered retrieval request. Duplicates are allowed and the length is
/// independent of the file size.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RidSequence {
    rids: Vec<Rid>,
}

impl RidSequence {
    pub fn new(rids: Vec<Rid>) -> Self {
        Self { rids }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rids: (0..n as u32).map(Rid).collect(),
        }
    }

    pub fn from_u32s(rids: impl IntoIterator<Item = u32>) -> Self {
        Self {
            rids: rids.into_iter().map(Rid).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rids.is_empty()
    }

    pub fn as_slice(&self) -> &[Rid] {
        &self.rids
    }

    pub fn iter(&self) -> impl Iterator<Item = Rid> + '_ {
        self.rids.iter().copied()
    }

    pub fn into_inner(self) -> Vec<Rid> {
        self.rids
    }

    /// Checks every rid against a file of `n` records.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self.rids.iter().position(|r| r.index() >= n) {
            Some(index) => Err(Error::RidOutOfRange {
                index,
                rid: self.rids[index].0,
                len: n,
            }),
            None => Ok(()),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let count = u32::try_from(self.rids.len()).map_err(|_| Error::Format("rid count exceeds u32".into()))?;
        w.write_all(RID_MAGIC)?;
        w.write_all(&count.to_le_bytes())?;
        for r in &self.rids {
            w.write_all(&r.0.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 8];
        r.read_exact(&mut header)?;
        if &header[..4] != RID_MAGIC {
            return Err(Error::Format("bad rid sequence magic".into()));
        }
        let count = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let mut raw = vec![0u8; count * 4];
        r.read_exact(&mut raw)?;
        let rids = raw
            .chunks_exact(4)
            .map(|c| Rid(u32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok(Self { rids })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

impl FromIterator<Rid> for RidSequence {
    fn from_iter<I: IntoIterator<Item = Rid>>(iter: I) -> Self {
        Self {
            rids: iter.into_iter().collect(),
        }
    }
}

/// Contiguous sequence of fixed-size records.
#[derive(Clone, PartialEq, Eq)]
pub struct RecordFile {
    record_size: usize,
    key_len: usize,
    key_offset: usize,
    data: Vec<u8>,
}

impl fmt::Debug for RecordFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RecordFile")
            .field("n", &self.len())
            .field("record_size", &self.record_size)
            .field("key_len", &self.key_len)
            .field("key_offset", &self.key_offset)
            .finish()
    }
}

impl RecordFile {
    /// Empty file with the key at offset 0.
    pub fn new(record_size: usize, key_len: usize) -> Result<Self> {
        Self::with_key_offset(record_size, key_len, 0)
    }

    pub fn with_key_offset(record_size: usize, key_len: usize, key_offset: usize) -> Result<Self> {
        if key_len == 0 {
            return Err(Error::Config("key_len must be at least 1".into()));
        }
        if key_offset + key_len > record_size {
            return Err(Error::Config(format!(
                "key [{key_offset}, {}) does not fit in a {record_size}-byte record",
                key_offset + key_len
            )));
        }
        Ok(Self {
            record_size,
            key_len,
            key_offset,
            data: Vec::new(),
        })
    }

    /// Wraps an existing buffer; its length must be a multiple of `record_size`.
    pub fn from_bytes(record_size: usize, key_len: usize, data: Vec<u8>) -> Result<Self> {
        let mut f = Self::new(record_size, key_len)?;
        if !data.len().is_multiple_of(record_size) {
            return Err(Error::Config(format!(
                "buffer of {} bytes is not a whole number of {record_size}-byte records",
                data.len()
            )));
        }
        f.data = data;
        Ok(f)
    }

    /// Empty file sharing `self`'s geometry, with room for `n` records.
    pub fn empty_like(&self, n: usize) -> Self {
        Self {
            record_size: self.record_size,
            key_len: self.key_len,
            key_offset: self.key_offset,
            data: Vec::with_capacity(n * self.record_size),
        }
    }

    pub fn reserve(&mut self, additional: usize) {
        self.data.reserve(additional * self.record_size);
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.record_size
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn record_size(&self) -> usize {
        self.record_size
    }

    pub fn key_len(&self) -> usize {
        self.key_len
    }

    pub fn key_offset(&self) -> usize {
        self.key_offset
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn record(&self, i: usize) -> &[u8] {
        let start = i * self.record_size;
        &self.data[start..start + self.record_size]
    }

    pub fn record_mut(&mut self, i: usize) -> &mut [u8] {
        let start = i * self.record_size;
        &mut self.data[start..start + self.record_size]
    }

    #[inline]
    pub fn key(&self, i: usize) -> &[u8] {
        let start = i * self.record_size + self.key_offset;
        &self.data[start..start + self.key_len]
    }

    /// Key bytes of an arbitrary record laid out like this file's records.
    #[inline]
    pub fn key_of<'a>(&self, record: &'a [u8]) -> &'a [u8] {
        &record[self.key_offset..self.key_offset + self.key_len]
    }

    /// Appends one record. Panics if `record` has the wrong length.
    #[inline]
    pub fn push(&mut self, record: &[u8]) {
        assert_eq!(record.len(), self.record_size, "record length mismatch");
        self.data.extend_from_slice(record);
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = &[u8]> + '_ {
        self.data.chunks_exact(self.record_size)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let to_u32 = |v: usize, what: &str| u32::try_from(v).map_err(|_| Error::Format(format!("{what} exceeds u32")));
        w.write_all(FILE_MAGIC)?;
        w.write_all(&to_u32(self.len(), "record count")?.to_le_bytes())?;
        w.write_all(&to_u32(self.record_size, "record size")?.to_le_bytes())?;
        w.write_all(&to_u32(self.key_len, "key length")?.to_le_bytes())?;
        w.write_all(&self.data)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[..4] != FILE_MAGIC {
            return Err(Error::Format("bad record file magic".into()));
        }
        let field = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
        let (n, record_size, key_len) = (field(4), field(8), field(12));
        if record_size == 0 {
            return Err(Error::Format("record size of zero".into()));
        }
        let mut data = vec![0u8; n * record_size];
        r.read_exact(&mut data)?;
        Self::from_bytes(record_size, key_len, data).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Partitioning {
    /// Fixed-length runs; `shift` is set when the length is a power of two.
    Uniform { run_length: usize, shift: Option<u32> },
    /// Ascending cut points; run `i` covers `[cuts[i-1], cuts[i])`.
    Boundaries(Vec<u32>),
}

/// How a file of `n` records is split into runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    n: usize,
    num_runs: usize,
    partitioning: Partitioning,
    fits_cache: bool,
}

impl RunLayout {
    /// Uniform layout with runs of `run_length` records.
    pub fn uniform(n: usize, run_length: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput("layout over an empty file"));
        }
        if run_length == 0 {
            return Err(Error::Config("run length must be positive".into()));
        }
        let shift = run_length.is_power_of_two().then(|| run_length.trailing_zeros());
        Ok(Self {
            n,
            num_runs: n.div_ceil(run_length),
            partitioning: Partitioning::Uniform { run_length, shift },
            fits_cache: true,
        })
    }

    /// Layout with explicit cut points. Cuts must be strictly ascending and
    /// lie strictly inside `(0, n)`.
    pub fn with_boundaries(n: usize, cuts: Vec<u32>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput("layout over an empty file"));
        }
        if cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("run boundaries must be strictly ascending".into()));
        }
        if cuts.first().is_some_and(|&c| c == 0) || cuts.last().is_some_and(|&c| c as usize >= n) {
            return Err(Error::Config(format!("run boundaries must lie in (0, {n})")));
        }
        Ok(Self {
            n,
            num_runs: cuts.len() + 1,
            partitioning: Partitioning::Boundaries(cuts),
            fits_cache: true,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_runs(&self) -> usize {
        self.num_runs
    }

    /// Run length for uniform layouts, `None` in boundary mode.
    pub fn run_length(&self) -> Option<usize> {
        match self.partitioning {
            Partitioning::Uniform { run_length, .. } => Some(run_length),
            Partitioning::Boundaries(_) => None,
        }
    }

    pub fn boundaries(&self) -> Option<&[u32]> {
        match &self.partitioning {
            Partitioning::Uniform { .. } => None,
            Partitioning::Boundaries(b) => Some(b),
        }
    }

    /// False when [`choose_run_length`] could not satisfy both cache
    /// constraints. Algorithms stay correct, only locality suffers.
    pub fn fits_cache(&self) -> bool {
        self.fits_cache
    }

    /// Run containing `rid`.
    pub fn run_of(&self, rid: Rid) -> Result<usize> {
        if rid.index() >= self.n {
            return Err(Error::RidOutOfRange {
                index: 0,
                rid: rid.0,
                len: self.n,
            });
        }
        Ok(self.run_of_unchecked(rid))
    }

    /// Run containing `rid`, assuming `rid < n`.
    #[inline]
    pub fn run_of_unchecked(&self, rid: Rid) -> usize {
        match &self.partitioning {
            Partitioning::Uniform { shift: Some(s), .. } => rid.index() >> s,
            Partitioning::Uniform { run_length, .. } => rid.index() / run_length,
            Partitioning::Boundaries(cuts) => cuts.partition_point(|&c| c <= rid.0),
        }
    }

    /// Half-open record range of run `i`.
    pub fn run_range(&self, i: usize) -> std::ops::Range<usize> {
        match &self.partitioning {
            Partitioning::Uniform { run_length, .. } => {
                let start = (i * run_length).min(self.n);
                start..((i + 1) * run_length).min(self.n)
            }
            Partitioning::Boundaries(cuts) => {
                let start = if i == 0 { 0 } else { cuts[i - 1] as usize };
                let end = cuts.get(i).map_or(self.n, |&c| c as usize);
                start..end
            }
        }
    }
}

/// Picks a uniform run length for a file of `n` records of `record_size`
/// bytes against a cache of `cache_capacity` bytes in `block_size` blocks.
///
/// A stream buffer is two cache blocks. Two constraints apply:
/// - probe: one run of records plus one rid-run buffer fits in the cache,
/// - distribute/gather: one buffer per run fits in the cache.
///
/// The starting point is the largest power of two `L` with
/// `L * record_size <= cache_capacity / 2`. If that yields too many runs for
/// the buffer constraint, `L` is doubled until both hold. When no power of
/// two satisfies both, the length with the best worst-case slack is returned
/// and the layout is flagged via [`RunLayout::fits_cache`].
pub fn choose_run_length(cache_capacity: usize, block_size: usize, record_size: usize, n: usize) -> Result<RunLayout> {
    if n == 0 {
        return Err(Error::EmptyInput("cannot choose a run length for zero records"));
    }
    if record_size == 0 || block_size == 0 {
        return Err(Error::Config("record and block sizes must be positive".into()));
    }
    if cache_capacity <= 2 * record_size {
        return Err(Error::Config(format!(
            "cache of {cache_capacity} bytes cannot hold two {record_size}-byte records"
        )));
    }

    let buffer = 2 * block_size as i128;
    let cap = cache_capacity as i128;
    // (probe slack, distribute/gather slack)
    let slack = |l: usize| {
        let runs = n.div_ceil(l) as i128;
        (cap - (l * record_size) as i128 - buffer, cap - runs * buffer)
    };

    let ideal = ((cache_capacity / 2) / record_size).max(1);
    let start = 1usize << (usize::BITS - 1 - ideal.leading_zeros());
    let limit = n.next_power_of_two().max(start);

    let mut best: Option<(usize, i128)> = None;
    let mut l = start;
    loop {
        let (probe, spread) = slack(l);
        if probe >= 0 && spread >= 0 {
            return RunLayout::uniform(n, l);
        }
        let worst = probe.min(spread);
        if best.is_none_or(|(_, w)| worst > w) {
            best = Some((l, worst));
        }
        if l >= limit {
            break;
        }
        l *= 2;
    }
    // Lengths below `start` only add runs, so they cannot fix the buffer
    // constraint; but they can still win on slack when records are huge.
    let mut l = start / 2;
    while l >= 1 {
        let (probe, spread) = slack(l);
        let worst = probe.min(spread);
        if best.is_none_or(|(_, w)| worst > w) {
            best = Some((l, worst));
        }
        l /= 2;
    }
    let (l, _) = best.expect("at least one candidate");
    let mut layout = RunLayout::uniform(n, l)?;
    layout.fits_cache = false;
    Ok(layout)
}

/// Copies `file[rids[i]]` to position `i` of the output, in rid order.
pub fn naive_retrieve(file: &RecordFile, rids: &RidSequence) -> Result<RecordFile> {
    rids.validate(file.len())?;
    let mut out = file.empty_like(rids.len());
    for rid in rids.iter() {
        out.push(file.record(rid.index()));
    }
    Ok(out)
}
