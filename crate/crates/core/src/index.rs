//! Bulk-built, read-only indexes over `(key, rid)` pairs and their two-pass
//! batch lookups.
//!
//! The B+ tree is "enhanced": every node is packed full except possibly the
//! rightmost node of each level, so the shape is implicit and the node array
//! needs no child pointers. Internal nodes have `fanout` children; leaves
//! hold `fanout - 1` pairs.
//!
//! Batch lookups follow the DPG pattern. Keys are first routed to a
//! partition of the index (a lower subtree, or a range of hash slots),
//! resolved partition by partition, and the results gathered back into
//! input order.

use std::fmt;

use crate::dpg::{distribute_by, gather_by};
use crate::error::{Error, Result};
use crate::records::Rid;
use crate::sort::Key;

/// Level-by-level node counts of an enhanced B+ tree, root first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeShape {
    pub fanout: usize,
    pub leaf_capacity: usize,
    pub level_nodes: Vec<usize>,
}

impl TreeShape {
    pub fn for_count(n: usize, fanout: usize) -> Result<Self> {
        if fanout < 2 {
            return Err(Error::Construction(format!("fanout must be at least 2, got {fanout}")));
        }
        if n == 0 {
            return Err(Error::EmptyInput("cannot shape a tree over zero pairs"));
        }
        let leaf_capacity = fanout - 1;
        let mut level_nodes = vec![n.div_ceil(leaf_capacity)];
        while *level_nodes.last().unwrap() > 1 {
            let parents = level_nodes.last().unwrap().div_ceil(fanout);
            level_nodes.push(parents);
        }
        level_nodes.reverse();
        Ok(Self {
            fanout,
            leaf_capacity,
            level_nodes,
        })
    }

    /// Number of node levels; a lookup visits exactly this many nodes.
    pub fn height(&self) -> usize {
        self.level_nodes.len()
    }

    /// Levels in the cached upper half, `ceil(h / 2)`.
    pub fn top_levels(&self) -> usize {
        self.height().div_ceil(2)
    }

    /// Depth whose nodes root the lower subtrees. Kept below the leaf level
    /// only when there is a leaf level to split off; a single-node tree is
    /// its own subtree.
    pub fn split_depth(&self) -> usize {
        self.top_levels().min(self.height() - 1)
    }

    /// Slots (children or pairs) in the top half.
    pub fn top_slots(&self) -> usize {
        let h = self.height();
        self.level_nodes[..self.top_levels()]
            .iter()
            .enumerate()
            .map(|(d, &nodes)| nodes * if d + 1 == h { self.leaf_capacity } else { self.fanout })
            .sum()
    }
}

/// `m^((log_m N) / 2)`: the size of the top half of a fanout-`m` tree over
/// `n` entries when the height is taken as the real-valued `log_m N`.
pub fn top_half_slot_estimate(n: f64, fanout: f64) -> f64 {
    fanout.powf(n.ln() / fanout.ln() / 2.0)
}

/// One node touched during a lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeVisit {
    pub depth: usize,
    pub node: usize,
}

/// Node visits of a batch lookup, grouped by pass.
#[derive(Debug, Clone, Default)]
pub struct BatchVisits {
    /// Upper-half routing, in key order.
    pub routing: Vec<NodeVisit>,
    /// Per lower subtree (in processing order): the subtree root and every
    /// node visited while that subtree was active.
    pub subtrees: Vec<(usize, Vec<NodeVisit>)>,
}

struct InternalLevel {
    /// Smallest key under each child of this level's nodes.
    child_mins: Vec<u8>,
    children: usize,
}

pub struct EnhancedBPlusTree {
    shape: TreeShape,
    key_len: usize,
    /// Root level first; `levels.len() == height - 1`.
    levels: Vec<InternalLevel>,
    leaf_keys: Vec<u8>,
    leaf_rids: Vec<Rid>,
}

impl fmt::Debug for EnhancedBPlusTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnhancedBPlusTree")
            .field("len", &self.len())
            .field("key_len", &self.key_len)
            .field("shape", &self.shape)
            .finish()
    }
}

impl EnhancedBPlusTree {
    /// Bulk-builds from pairs sorted by strictly ascending key.
    pub fn build<K: AsRef<[u8]>>(pairs: &[(K, Rid)], fanout: usize) -> Result<Self> {
        let shape = TreeShape::for_count(pairs.len(), fanout)?;
        let key_len = pairs[0].0.as_ref().len();
        if key_len == 0 {
            return Err(Error::Construction("empty keys".into()));
        }
        let mut leaf_keys = Vec::with_capacity(pairs.len() * key_len);
        let mut leaf_rids = Vec::with_capacity(pairs.len());
        for (i, (k, rid)) in pairs.iter().enumerate() {
            let k = k.as_ref();
            if k.len() != key_len {
                return Err(Error::Construction(format!(
                    "key {i} has length {} but the first key has {key_len}",
                    k.len()
                )));
            }
            if i > 0 && pairs[i - 1].0.as_ref() >= k {
                return Err(Error::Construction(format!(
                    "keys must be strictly ascending; pair {i} is out of order or duplicated"
                )));
            }
            leaf_keys.extend_from_slice(k);
            leaf_rids.push(*rid);
        }

        // Build bottom-up: the min keys of level d+1's nodes become the
        // child_mins of level d.
        let h = shape.height();
        let mut levels = Vec::with_capacity(h - 1);
        let lc = shape.leaf_capacity;
        let mut mins: Vec<u8> = leaf_keys
            .chunks(lc * key_len)
            .flat_map(|node| node[..key_len].to_vec())
            .collect();
        for d in (0..h - 1).rev() {
            let children = shape.level_nodes[d + 1];
            debug_assert_eq!(mins.len(), children * key_len);
            let next: Vec<u8> = mins
                .chunks(fanout * key_len)
                .flat_map(|node| node[..key_len].to_vec())
                .collect();
            levels.push(InternalLevel {
                child_mins: std::mem::replace(&mut mins, next),
                children,
            });
        }
        levels.reverse();
        Ok(Self {
            shape,
            key_len,
            levels,
            leaf_keys,
            leaf_rids,
        })
    }

    pub fn len(&self) -> usize {
        self.leaf_rids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaf_rids.is_empty()
    }

    pub fn shape(&self) -> &TreeShape {
        &self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height()
    }

    pub fn fanout(&self) -> usize {
        self.shape.fanout
    }

    pub fn key_len(&self) -> usize {
        self.key_len
    }

    /// In-order scan of the leaves.
    pub fn leaf_scan(&self) -> impl Iterator<Item = (&[u8], Rid)> + '_ {
        self.leaf_keys
            .chunks_exact(self.key_len)
            .zip(self.leaf_rids.iter().copied())
    }

    /// Child of internal node `node` at `depth` that covers `key`.
    #[inline]
    fn route(&self, depth: usize, node: usize, key: &[u8]) -> usize {
        let level = &self.levels[depth];
        let m = self.shape.fanout;
        let first = node * m;
        let last = ((node + 1) * m).min(level.children);
        let kl = self.key_len;
        let mins = &level.child_mins[first * kl..last * kl];
        // last child whose min key <= key; the first child if none
        let pos = partition_point_chunks(mins, kl, |c| c <= key);
        first + pos.saturating_sub(1)
    }

    #[inline]
    fn search_leaf(&self, leaf: usize, key: &[u8]) -> Option<Rid> {
        let lc = self.shape.leaf_capacity;
        let first = leaf * lc;
        let last = ((leaf + 1) * lc).min(self.len());
        let kl = self.key_len;
        let keys = &self.leaf_keys[first * kl..last * kl];
        let pos = partition_point_chunks(keys, kl, |c| c < key);
        (pos < last - first && &keys[pos * kl..(pos + 1) * kl] == key).then(|| self.leaf_rids[first + pos])
    }

    /// Descends from `node` at `depth` to a leaf, reporting each node.
    fn descend(&self, mut depth: usize, mut node: usize, key: &[u8], visit: &mut impl FnMut(NodeVisit)) -> Option<Rid> {
        let leaf_depth = self.height() - 1;
        while depth < leaf_depth {
            visit(NodeVisit { depth, node });
            node = self.route(depth, node, key);
            depth += 1;
        }
        visit(NodeVisit { depth, node });
        self.search_leaf(node, key)
    }

    pub fn lookup(&self, key: &[u8]) -> Option<Rid> {
        self.descend(0, 0, key, &mut |_| {})
    }

    /// Lookup that reports every node it visits (always `height` of them).
    pub fn lookup_traced(&self, key: &[u8], visit: &mut impl FnMut(NodeVisit)) -> Option<Rid> {
        self.descend(0, 0, key, visit)
    }

    /// Individual lookup of every key, in order.
    pub fn lookup_each<K: AsRef<[u8]>>(&self, keys: &[K]) -> Vec<Option<Rid>> {
        keys.iter().map(|k| self.lookup(k.as_ref())).collect()
    }

    pub fn batch_lookup<K: AsRef<[u8]>>(&self, keys: &[K]) -> Result<Vec<Option<Rid>>> {
        self.batch_lookup_inner(keys, None)
    }

    pub fn batch_lookup_with_visits<K: AsRef<[u8]>>(&self, keys: &[K]) -> Result<(Vec<Option<Rid>>, BatchVisits)> {
        let mut visits = BatchVisits::default();
        let out = self.batch_lookup_inner(keys, Some(&mut visits))?;
        Ok((out, visits))
    }

    fn batch_lookup_inner<K: AsRef<[u8]>>(
        &self,
        keys: &[K],
        mut visits: Option<&mut BatchVisits>,
    ) -> Result<Vec<Option<Rid>>> {
        let split = self.shape.split_depth();
        let num_subtrees = self.shape.level_nodes[split];

        // Pass 1: route through the upper half only.
        let mut subtree_of = Vec::with_capacity(keys.len());
        for k in keys {
            let k = k.as_ref();
            let mut node = 0;
            for depth in 0..split {
                if let Some(v) = visits.as_deref_mut() {
                    v.routing.push(NodeVisit { depth, node });
                }
                node = self.route(depth, node, k);
            }
            subtree_of.push(node as u32);
        }

        // Distribute key positions by subtree.
        let positions: Vec<u32> = (0..keys.len() as u32).collect();
        let runs = distribute_by(&positions, num_subtrees, |&p| subtree_of[p as usize] as usize);

        // Pass 2: finish every key of one lower subtree before the next.
        let mut results: Vec<Vec<Option<Rid>>> = Vec::with_capacity(num_subtrees);
        for (s, run) in runs.iter().enumerate() {
            let mut seen = Vec::new();
            let mut record = |v: NodeVisit| seen.push(v);
            let found: Vec<Option<Rid>> = run
                .iter()
                .map(|&p| {
                    if visits.is_some() {
                        self.descend(split, s, keys[p as usize].as_ref(), &mut record)
                    } else {
                        self.descend(split, s, keys[p as usize].as_ref(), &mut |_| {})
                    }
                })
                .collect();
            if let Some(v) = visits.as_deref_mut() {
                if !run.is_empty() {
                    v.subtrees.push((s, seen));
                }
            }
            results.push(found);
        }

        // Pass 3: back to input order.
        gather_by(subtree_of.iter().map(|&s| s as usize), &results)
    }
}

/// `partition_point` over a flat array of fixed-width keys.
#[inline]
fn partition_point_chunks(flat: &[u8], width: usize, pred: impl Fn(&[u8]) -> bool) -> usize {
    let (mut lo, mut hi) = (0, flat.len() / width);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if pred(&flat[mid * width..(mid + 1) * width]) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

const EMPTY_SLOT: u32 = u32::MAX;

/// Open hash array with one `(key, rid)` per slot and a per-slot overflow
/// list for colliding pairs.
pub struct HashIndex {
    key_len: usize,
    num_slots: usize,
    seed: u64,
    slot_keys: Vec<u8>,
    slot_rids: Vec<u32>,
    overflow: Vec<Vec<(Key, Rid)>>,
    len: usize,
}

impl fmt::Debug for HashIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HashIndex")
            .field("len", &self.len)
            .field("num_slots", &self.num_slots)
            .field("seed", &self.seed)
            .finish()
    }
}

/// Seeded multiplicative hash of `key`, reduced onto `[0, num_slots)`.
#[inline]
pub fn hash_slot(key: &[u8], seed: u64, num_slots: usize) -> usize {
    const MUL: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut h = seed ^ (key.len() as u64).wrapping_mul(MUL);
    for chunk in key.chunks(8) {
        let mut buf = [0u8; 8];
        buf[..chunk.len()].copy_from_slice(chunk);
        h = (h ^ u64::from_le_bytes(buf)).wrapping_mul(MUL);
        h ^= h >> 29;
    }
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 32;
    ((h as u128 * num_slots as u128) >> 64) as usize
}

impl HashIndex {
    pub fn build<K: AsRef<[u8]>>(pairs: &[(K, Rid)], num_slots: usize, seed: u64) -> Result<Self> {
        if num_slots < pairs.len() || num_slots == 0 || num_slots >= EMPTY_SLOT as usize {
            return Err(Error::Construction(format!(
                "{num_slots} slots cannot hold {} pairs",
                pairs.len()
            )));
        }
        let key_len = pairs.first().map_or(0, |p| p.0.as_ref().len());
        let mut idx = Self {
            key_len,
            num_slots,
            seed,
            slot_keys: vec![0u8; num_slots * key_len],
            slot_rids: vec![EMPTY_SLOT; num_slots],
            overflow: vec![Vec::new(); num_slots],
            len: 0,
        };
        for (i, (k, rid)) in pairs.iter().enumerate() {
            let k = k.as_ref();
            if k.len() != key_len {
                return Err(Error::Construction(format!("key {i} has a different length")));
            }
            if rid.0 == EMPTY_SLOT {
                return Err(Error::Construction(format!("rid {} is reserved", rid.0)));
            }
            let slot = idx.slot_of(k);
            if idx.probe_slot(slot, k).0.is_some() {
                return Err(Error::Construction(format!("duplicate key at pair {i}")));
            }
            if idx.slot_rids[slot] == EMPTY_SLOT {
                idx.slot_keys[slot * key_len..(slot + 1) * key_len].copy_from_slice(k);
                idx.slot_rids[slot] = rid.0;
            } else {
                idx.overflow[slot].push((Key::from_slice(k), *rid));
            }
            idx.len += 1;
        }
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn slot_of(&self, key: &[u8]) -> usize {
        hash_slot(key, self.seed, self.num_slots)
    }

    /// Longest overflow list.
    pub fn max_chain(&self) -> usize {
        self.overflow.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Resolves `key` within `slot`; also returns how many pairs were
    /// compared.
    #[inline]
    fn probe_slot(&self, slot: usize, key: &[u8]) -> (Option<Rid>, usize) {
        if self.slot_rids[slot] == EMPTY_SLOT {
            return (None, 1);
        }
        let kl = self.key_len;
        if &self.slot_keys[slot * kl..(slot + 1) * kl] == key {
            return (Some(Rid(self.slot_rids[slot])), 1);
        }
        for (i, (k, rid)) in self.overflow[slot].iter().enumerate() {
            if &k[..] == key {
                return (Some(*rid), i + 2);
            }
        }
        (None, 1 + self.overflow[slot].len())
    }

    pub fn lookup(&self, key: &[u8]) -> Option<Rid> {
        self.probe_slot(self.slot_of(key), key).0
    }

    /// Lookup plus the number of pairs compared.
    pub fn lookup_with_probes(&self, key: &[u8]) -> (Option<Rid>, usize) {
        self.probe_slot(self.slot_of(key), key)
    }

    pub fn lookup_each<K: AsRef<[u8]>>(&self, keys: &[K]) -> Vec<Option<Rid>> {
        keys.iter().map(|k| self.lookup(k.as_ref())).collect()
    }

    /// Two-pass batch lookup with the hash array cut into partitions of
    /// `partition_slots` consecutive slots.
    pub fn batch_lookup<K: AsRef<[u8]>>(&self, keys: &[K], partition_slots: usize) -> Result<Vec<Option<Rid>>> {
        if partition_slots == 0 {
            return Err(Error::Config("partition size must be positive".into()));
        }
        let num_partitions = self.num_slots.div_ceil(partition_slots);
        // One scan computes every hash; the slot number is the permutation
        // vector that drives the distribution.
        let hashed: Vec<(u32, u32)> = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (i as u32, self.slot_of(k.as_ref()) as u32))
            .collect();
        let runs = distribute_by(&hashed, num_partitions, |&(_, slot)| slot as usize / partition_slots);
        let results: Vec<Vec<Option<Rid>>> = runs
            .iter()
            .map(|run| {
                run.iter()
                    .map(|&(i, slot)| self.probe_slot(slot as usize, keys[i as usize].as_ref()).0)
                    .collect()
            })
            .collect();
        gather_by(
            hashed.iter().map(|&(_, slot)| slot as usize / partition_slots),
            &results,
        )
    }
}

/// Either index over F, as used for join-triple construction.
#[derive(Debug, Clone, Copy)]
pub enum IndexRef<'a> {
    BPlus(&'a EnhancedBPlusTree),
    Hash {
        index: &'a HashIndex,
        partition_slots: usize,
    },
}

impl IndexRef<'_> {
    pub fn lookup(&self, key: &[u8]) -> Option<Rid> {
        match self {
            IndexRef::BPlus(t) => t.lookup(key),
            IndexRef::Hash { index, .. } => index.lookup(key),
        }
    }

    pub fn batch_lookup<K: AsRef<[u8]>>(&self, keys: &[K]) -> Result<Vec<Option<Rid>>> {
        match self {
            IndexRef::BPlus(t) => t.batch_lookup(keys),
            IndexRef::Hash { index, partition_slots } => index.batch_lookup(keys, *partition_slots),
        }
    }
}
