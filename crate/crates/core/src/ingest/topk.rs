//! Bounded per-neuron stores of the K highest-scoring images.
//!
//! Ranking is a total order: score descending, then image_id ascending, then
//! (class_id, loc_row, loc_col) ascending so that duplicate image ids still
//! rank deterministically. Any permutation of the input stream therefore
//! finalizes to the same list.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stream::ActivationRecord;
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub image_id: u32,
    pub class_id: u32,
    pub score: f32,
    pub loc_row: u32,
    pub loc_col: u32,
}

impl From<&ActivationRecord> for RankedEntry {
    fn from(rec: &ActivationRecord) -> Self {
        RankedEntry {
            image_id: rec.image_id,
            class_id: rec.class_id,
            score: rec.score,
            loc_row: rec.loc_row,
            loc_col: rec.loc_col,
        }
    }
}

/// `Less` when `a` ranks ahead of `b`.
pub fn rank_cmp(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.image_id.cmp(&b.image_id))
        .then(a.class_id.cmp(&b.class_id))
        .then(a.loc_row.cmp(&b.loc_row))
        .then(a.loc_col.cmp(&b.loc_col))
}

// Max-heap element whose maximum is the worst-ranked entry.
#[derive(Debug, Clone, Copy)]
struct Worst(RankedEntry);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_cmp(&self.0, &other.0)
    }
}

/// Finalized top-K list of one neuron, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub layer_index: u16,
    pub neuron_id: u32,
    /// Number of records the store observed.
    pub seen: u64,
    pub entries: Vec<RankedEntry>,
}

#[derive(Debug, Clone)]
pub struct TopKStore {
    layer_index: u16,
    neuron_id: u32,
    capacity: usize,
    heap: BinaryHeap<Worst>,
    seen: u64,
}

impl TopKStore {
    pub fn new(layer_index: u16, neuron_id: u32, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::usage("top-K capacity must be positive"));
        }
        Ok(Self {
            layer_index,
            neuron_id,
            capacity,
            heap: BinaryHeap::with_capacity(capacity + 1),
            seen: 0,
        })
    }

    pub fn layer_index(&self) -> u16 {
        self.layer_index
    }

    pub fn neuron_id(&self) -> u32 {
        self.neuron_id
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn update(&mut self, rec: &ActivationRecord) -> Result<()> {
        if rec.layer_index != self.layer_index || rec.neuron_id != self.neuron_id {
            return Err(Error::usage(format!(
                "record for layer {} neuron {} offered to store of layer {} neuron {}",
                rec.layer_index, rec.neuron_id, self.layer_index, self.neuron_id
            )));
        }
        self.seen += 1;
        let entry = RankedEntry::from(rec);
        if self.heap.len() < self.capacity {
            self.heap.push(Worst(entry));
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if rank_cmp(&entry, &worst.0) == Ordering::Less {
                *worst = Worst(entry);
            }
        }
        Ok(())
    }

    pub fn finalize(&self) -> Result<RankedList> {
        if self.heap.is_empty() {
            return Err(Error::data(format!(
                "neuron never observed (layer {} neuron {})",
                self.layer_index, self.neuron_id
            )));
        }
        let mut entries: Vec<RankedEntry> = self.heap.iter().map(|w| w.0).collect();
        entries.sort_by(rank_cmp);
        Ok(RankedList {
            layer_index: self.layer_index,
            neuron_id: self.neuron_id,
            seen: self.seen,
            entries,
        })
    }
}

/// Runs one store per (layer, neuron) over `records` and finalizes them.
/// Neurons are processed in parallel; each store sees its records in stream
/// order, and the result is keyed so it is independent of scheduling.
pub fn rank_records(
    records: &[ActivationRecord],
    k: usize,
) -> Result<BTreeMap<(u16, u32), RankedList>> {
    if k == 0 {
        return Err(Error::usage("top-K capacity must be positive"));
    }
    let mut groups: BTreeMap<(u16, u32), Vec<&ActivationRecord>> = BTreeMap::new();
    for rec in records {
        groups
            .entry((rec.layer_index, rec.neuron_id))
            .or_default()
            .push(rec);
    }
    let groups: Vec<_> = groups.into_iter().collect();
    let lists = groups
        .into_par_iter()
        .map(|((layer, neuron), recs)| {
            let mut store = TopKStore::new(layer, neuron, k)?;
            for rec in recs {
                store.update(rec)?;
            }
            Ok(((layer, neuron), store.finalize()?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(lists.into_iter().collect())
}

/// Records buffered per parallel round in [`rank_stream`].
pub const STREAM_CHUNK: usize = 1 << 18;

/// Streaming counterpart of [`rank_records`]: consumes `records` in chunks of
/// [`STREAM_CHUNK`], so memory is bounded by the stores plus one chunk.
/// Records rejected by `keep` are skipped. Stops at the first error.
pub fn rank_stream<I, F>(records: I, k: usize, keep: F) -> Result<BTreeMap<(u16, u32), RankedList>>
where
    I: IntoIterator<Item = Result<ActivationRecord>>,
    F: Fn(&ActivationRecord) -> bool,
{
    rank_chunked(records, k, keep, STREAM_CHUNK)
}

fn rank_chunked<I, F>(
    records: I,
    k: usize,
    keep: F,
    chunk: usize,
) -> Result<BTreeMap<(u16, u32), RankedList>>
where
    I: IntoIterator<Item = Result<ActivationRecord>>,
    F: Fn(&ActivationRecord) -> bool,
{
    if k == 0 {
        return Err(Error::usage("top-K capacity must be positive"));
    }
    let mut stores: BTreeMap<(u16, u32), TopKStore> = BTreeMap::new();
    let mut iter = records.into_iter();
    loop {
        let mut groups: BTreeMap<(u16, u32), Vec<ActivationRecord>> = BTreeMap::new();
        let mut taken = 0;
        for rec in iter.by_ref() {
            let rec = rec?;
            taken += 1;
            if keep(&rec) {
                groups
                    .entry((rec.layer_index, rec.neuron_id))
                    .or_default()
                    .push(rec);
            }
            if taken == chunk {
                break;
            }
        }
        for &(layer, neuron) in groups.keys() {
            if let std::collections::btree_map::Entry::Vacant(slot) = stores.entry((layer, neuron))
            {
                slot.insert(TopKStore::new(layer, neuron, k)?);
            }
        }
        stores
            .par_iter_mut()
            .filter_map(|(key, store)| groups.get(key).map(|recs| (store, recs)))
            .try_for_each(|(store, recs)| recs.iter().try_for_each(|rec| store.update(rec)))?;
        if taken < chunk {
            break;
        }
    }
    stores
        .into_iter()
        .map(|(key, store)| Ok((key, store.finalize()?)))
        .collect()
}
