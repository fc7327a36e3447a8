//! Seeded generation of record files, rid sequences and foreign-key
//! relation pairs.
//!
//! Everything is a pure function of its parameters and seed. The exponential
//! distribution follows the classic `exp(c * (random() >> 10))` recipe on
//! 31-bit draws, with the value written big-endian as fixed point into the
//! leading key bytes so byte order matches numeric order.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::records::{RecordFile, RidSequence};

/// Default exponent constant for [`KeyDistribution::Exponential`].
pub const DEFAULT_EXP_C: f64 = -0.000_000_1;

/// SplitMix64 generator. Small, fast, and identical on every platform.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// 31-bit draw, the range of UNIX `random()`.
    #[inline]
    pub fn next_u31(&mut self) -> u32 {
        (self.next_u64() >> 33) as u32
    }

    /// Uniform value in `[0, bound)`. `bound` must be positive.
    #[inline]
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    pub fn fill_bytes(&mut self, buf: &mut [u8]) {
        let mut chunks = buf.chunks_exact_mut(8);
        for c in &mut chunks {
            c.copy_from_slice(&self.next_u64().to_le_bytes());
        }
        let rest = chunks.into_remainder();
        if !rest.is_empty() {
            let v = self.next_u64().to_le_bytes();
            rest.copy_from_slice(&v[..rest.len()]);
        }
    }

    /// Fisher-Yates.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeyDistribution {
    Uniform,
    /// `exp(c * (random() >> 10))`, `c < 0`.
    Exponential {
        c: f64,
    },
}

impl KeyDistribution {
    pub fn exponential() -> Self {
        KeyDistribution::Exponential { c: DEFAULT_EXP_C }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, KeyDistribution::Uniform)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KeyDistribution::Exponential { c } if c.is_nan() || c >= 0.0 => {
                Err(Error::Config(format!("exponential constant must be negative, got {c}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for KeyDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyDistribution::Uniform => f.write_str("uniform"),
            KeyDistribution::Exponential { c } if *c == DEFAULT_EXP_C => f.write_str("exp"),
            KeyDistribution::Exponential { c } => write!(f, "exp({c})"),
        }
    }
}

impl FromStr for KeyDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(KeyDistribution::Uniform),
            "exp" | "exponential" => Ok(KeyDistribution::exponential()),
            other => {
                let c = other
                    .strip_prefix("exp(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|c| c.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown distribution {other:?}")))?;
                let d = KeyDistribution::Exponential { c };
                d.validate()?;
                Ok(d)
            }
        }
    }
}

/// One exponential draw, in `(0, 1]`.
#[inline]
pub fn exp_draw(rng: &mut SplitMix64, c: f64) -> f64 {
    (c * (rng.next_u31() >> 10) as f64).exp()
}

/// Fixed-point image of a value in `[0, 1]`, saturating at `u64::MAX`.
#[inline]
pub fn magnitude_to_u64(v: f64) -> u64 {
    // `as` saturates for out-of-range floats.
    (v * 18_446_744_073_709_551_616.0) as u64
}

/// Numeric magnitude encoded in the first (up to 8) bytes of a key.
pub fn key_magnitude(key: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    let n = key.len().min(8);
    buf[..n].copy_from_slice(&key[..n]);
    u64::from_be_bytes(buf)
}

fn fill_key(rng: &mut SplitMix64, dist: KeyDistribution, key: &mut [u8]) {
    match dist {
        KeyDistribution::Uniform => rng.fill_bytes(key),
        KeyDistribution::Exponential { c } => {
            let be = magnitude_to_u64(exp_draw(rng, c)).to_be_bytes();
            let n = key.len().min(8);
            key[..n].copy_from_slice(&be[..n]);
            rng.fill_bytes(&mut key[n..]);
        }
    }
}

fn check_geometry(n: usize, record_size: usize, key_len: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("record count must be at least 1".into()));
    }
    if key_len == 0 || key_len > record_size {
        return Err(Error::Config(format!(
            "need 1 <= key_len <= record_size (got {key_len}, {record_size})"
        )));
    }
    Ok(())
}

/// `n` records with keys drawn from `dist` and pseudorandom payloads.
pub fn gen_record_file(
    n: usize,
    record_size: usize,
    key_len: usize,
    dist: KeyDistribution,
    seed: u64,
) -> Result<RecordFile> {
    check_geometry(n, record_size, key_len)?;
    dist.validate()?;
    let mut rng = SplitMix64::new(seed);
    let mut data = vec![0u8; n * record_size];
    for rec in data.chunks_exact_mut(record_size) {
        let (key, payload) = rec.split_at_mut(key_len);
        fill_key(&mut rng, dist, key);
        rng.fill_bytes(payload);
    }
    RecordFile::from_bytes(record_size, key_len, data)
}

/// Uniformly shuffled permutation of `0..n`.
pub fn random_permutation(n: usize, seed: u64) -> RidSequence {
    let mut v: Vec<u32> = (0..n as u32).collect();
    SplitMix64::new(seed).shuffle(&mut v);
    RidSequence::from_u32s(v)
}

/// `m` rids over `[0, n)` drawn with replacement.
pub fn random_rids(m: usize, n: usize, seed: u64) -> RidSequence {
    let mut rng = SplitMix64::new(seed);
    RidSequence::from_u32s((0..m).map(|_| rng.below(n as u64) as u32))
}

/// `m` rids over `[0, n)` shaped by the exponential generator: each draw
/// `v in (0, 1]` maps to `floor(v * n)`, clamped to `n - 1`.
pub fn exp_rids(m: usize, n: usize, c: f64, seed: u64) -> RidSequence {
    let mut rng = SplitMix64::new(seed);
    RidSequence::from_u32s((0..m).map(|_| {
        let v = exp_draw(&mut rng, c);
        ((v * n as f64) as usize).min(n - 1) as u32
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DuplicatePolicy {
    /// R keys are distinct (requires `n_r <= n_f`).
    None,
    /// Each R key is drawn independently from F's keys.
    RandomWithDuplicates,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationSpec {
    pub n_r: usize,
    pub n_f: usize,
    pub record_size_r: usize,
    pub record_size_f: usize,
    pub key_len: usize,
    pub duplicates: DuplicatePolicy,
    pub distribution: KeyDistribution,
}

impl RelationSpec {
    pub fn validate(&self) -> Result<()> {
        check_geometry(self.n_r, self.record_size_r, self.key_len)?;
        check_geometry(self.n_f, self.record_size_f, self.key_len)?;
        self.distribution.validate()?;
        if self.duplicates == DuplicatePolicy::None && self.n_r > self.n_f {
            return Err(Error::Config(format!(
                "{} distinct R keys cannot reference only {} F keys",
                self.n_r, self.n_f
            )));
        }
        Ok(())
    }

    /// Text form for the sidecar manifest.
    pub fn manifest(&self, seed: u64) -> String {
        format!(
            "n_r={}\nn_f={}\nrecord_size_r={}\nrecord_size_f={}\nkey_len={}\nduplicates={:?}\ndistribution={}\nseed={}\n",
            self.n_r,
            self.n_f,
            self.record_size_r,
            self.record_size_f,
            self.key_len,
            self.duplicates,
            self.distribution,
            seed
        )
    }
}

/// Generates `(R, F)` where F has unique keys and every R key is one of F's.
pub fn gen_fk_pair(spec: &RelationSpec, seed: u64) -> Result<(RecordFile, RecordFile)> {
    spec.validate()?;
    let mut rng = SplitMix64::new(seed);
    let key_len = spec.key_len;

    let mut seen: HashSet<Vec<u8>> = HashSet::with_capacity(spec.n_f);
    let mut f_data = vec![0u8; spec.n_f * spec.record_size_f];
    let max_attempts = 64 * spec.n_f + 1024;
    let mut attempts = 0;
    for rec in f_data.chunks_exact_mut(spec.record_size_f) {
        let (key, payload) = rec.split_at_mut(key_len);
        loop {
            attempts += 1;
            if attempts > max_attempts {
                return Err(Error::Config(format!(
                    "could not draw {} distinct {key_len}-byte keys",
                    spec.n_f
                )));
            }
            fill_key(&mut rng, spec.distribution, key);
            if seen.insert(key.to_vec()) {
                break;
            }
        }
        rng.fill_bytes(payload);
    }
    let f = RecordFile::from_bytes(spec.record_size_f, key_len, f_data)?;

    let picks: Vec<usize> = match spec.duplicates {
        DuplicatePolicy::None => {
            let mut idx: Vec<usize> = (0..spec.n_f).collect();
            rng.shuffle(&mut idx);
            idx.truncate(spec.n_r);
            idx
        }
        DuplicatePolicy::RandomWithDuplicates => (0..spec.n_r).map(|_| rng.below(spec.n_f as u64) as usize).collect(),
    };
    let mut r_data = vec![0u8; spec.n_r * spec.record_size_r];
    for (rec, &fi) in r_data.chunks_exact_mut(spec.record_size_r).zip(&picks) {
        let (key, payload) = rec.split_at_mut(key_len);
        key.copy_from_slice(f.key(fi));
        rng.fill_bytes(payload);
    }
    let r = RecordFile::from_bytes(spec.record_size_r, key_len, r_data)?;
    Ok((r, f))
}
