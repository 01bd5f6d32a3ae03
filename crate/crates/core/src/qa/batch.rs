use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ids::{FrameId, Target};
use crate::segmentation::{PolygonAnnotation, SegStatus};
use crate::store::Record;

/// An annotation as shown in a blind review. Nothing here identifies who
/// made it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchItem {
    Assessment {
        item_id: String,
        target: Target,
        c1: bool,
        c2: bool,
        c3: bool,
        cvs: bool,
    },
    Segmentation {
        item_id: String,
        frame_id: FrameId,
        status: SegStatus,
        image_width: u32,
        image_height: u32,
        polygons: Vec<PolygonAnnotation>,
    },
}

impl BatchItem {
    fn set_item_id(&mut self, id: String) {
        match self {
            BatchItem::Assessment { item_id, .. } | BatchItem::Segmentation { item_id, .. } => *item_id = id,
        }
    }
}

/// One pool entry: the store key it came from plus its blind form.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub source: String,
    pub item: BatchItem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewBatch {
    pub batch_id: String,
    pub seed: u64,
    pub created_for: Option<NaiveDate>,
    pub pool_size: usize,
    pub items: Vec<BatchItem>,
}

/// Stored link from a batch back to its sources, kept for the audit trail
/// and never sent to reviewers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch_id: String,
    pub seed: u64,
    pub created_for: Option<NaiveDate>,
    pub sources: Vec<String>,
}

impl Record for BatchRecord {
    const COLLECTION: &'static str = "review_batches";
    fn key(&self) -> String {
        self.batch_id.clone()
    }
}

/// Indices of a uniform sample without replacement, in draw order.
///
/// ChaCha8 seeded with `seed` drives a partial Fisher-Yates shuffle of
/// `0..pool`, so the result depends only on `(pool, size, seed)`.
pub fn sample_indices(pool: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > pool {
        return Err(Error::BatchTooLarge { size, pool });
    }
    if pool == 0 {
        return Err(Error::Invalid("review pool is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..pool).collect();
    let (picked, _) = idx.partial_shuffle(&mut rng, size);
    Ok(picked.to_vec())
}

/// Draws `size` entries from `pool`. The pool is ordered by source key
/// first, so the caller's ordering does not matter.
pub fn make_review_batch(
    mut pool: Vec<PoolEntry>,
    size: usize,
    seed: u64,
    created_for: Option<NaiveDate>,
) -> Result<(ReviewBatch, BatchRecord)> {
    pool.sort_by(|a, b| a.source.cmp(&b.source));
    let picked = sample_indices(pool.len(), size, seed)?;
    let mut hasher = Sha256::new();
    hasher.update(seed.to_be_bytes());
    let mut sources = Vec::with_capacity(size);
    let mut items = Vec::with_capacity(size);
    for (n, i) in picked.into_iter().enumerate() {
        let entry = &pool[i];
        hasher.update(entry.source.as_bytes());
        hasher.update([0]);
        sources.push(entry.source.clone());
        let mut item = entry.item.clone();
        item.set_item_id(format!("item-{n}"));
        items.push(item);
    }
    let batch_id = format!("batch-{}", hex::encode(&hasher.finalize()[..8]));
    let record = BatchRecord {
        batch_id: batch_id.clone(),
        seed,
        created_for,
        sources,
    };
    let batch = ReviewBatch {
        batch_id,
        seed,
        created_for,
        pool_size: pool.len(),
        items,
    };
    Ok((batch, record))
}
