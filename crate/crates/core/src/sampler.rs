//! Epoch schedules mixing driving and indoor datasets.
//!
//! Every driving dataset is replicated by the same integral factor `r`, the
//! smallest one with `r * driving >= ratio * indoor`. Batches are assembled
//! from two shuffled group queues in proportion to their remaining sizes,
//! with at least one entry of each group while both queues are nonempty.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::Group;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Entry {
    pub dataset: String,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSchedule {
    /// Entries in batch order; every consecutive `batch_size` slice is a batch.
    pub entries: Vec<Entry>,
    pub ratio_target: f64,
    pub batch_size: usize,
    pub replication: usize,
    pub driving_entries: usize,
    pub indoor_entries: usize,
}

impl EpochSchedule {
    /// Realized driving:indoor ratio of the entries before tail dropping.
    pub fn realized_ratio(&self) -> f64 {
        self.driving_entries as f64 / self.indoor_entries as f64
    }

    pub fn num_batches(&self) -> usize {
        self.entries.len() / self.batch_size
    }
}

/// Smallest integral factor `r >= 1` with `r * driving >= ratio * indoor`.
pub fn replication_factor(driving: usize, indoor: usize, ratio: f64) -> usize {
    if driving == 0 || ratio <= 0.0 {
        return 1;
    }
    let need = ratio * indoor as f64;
    let mut r = ((need / driving as f64).ceil() as usize).max(1);
    // guard against floating error in the division
    while r > 1 && ((r - 1) * driving) as f64 >= need {
        r -= 1;
    }
    while ((r * driving) as f64) < need {
        r += 1;
    }
    r
}

pub fn build_schedule(
    sizes: &BTreeMap<String, usize>,
    groups: &BTreeMap<String, Group>,
    ratio_target: f64,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<EpochSchedule> {
    if batch_size < 2 {
        return Err(Error::config("batch_size", "must be at least 2"));
    }
    if !(ratio_target >= 0.0 && ratio_target.is_finite()) {
        return Err(Error::config("sampler.ratio", "must be finite and nonnegative"));
    }
    let group_of = |id: &str| {
        groups
            .get(id)
            .copied()
            .ok_or_else(|| Error::config("datasets", format!("dataset `{id}` has no group")))
    };
    let mut driving_sets = Vec::new();
    let mut indoor_sets = Vec::new();
    for (id, &n) in sizes {
        match group_of(id)? {
            Group::Driving => driving_sets.push((id.clone(), n)),
            Group::Indoor => indoor_sets.push((id.clone(), n)),
        }
    }
    let driving: usize = driving_sets.iter().map(|d| d.1).sum();
    let indoor: usize = indoor_sets.iter().map(|d| d.1).sum();
    if ratio_target > 0.0 {
        if driving == 0 {
            return Err(Error::EmptyGroup(Group::Driving.to_string()));
        }
        if indoor == 0 {
            return Err(Error::EmptyGroup(Group::Indoor.to_string()));
        }
    }
    let replication = if indoor == 0 { 1 } else { replication_factor(driving, indoor, ratio_target) };

    let expand = |sets: &[(String, usize)], times: usize| -> Vec<Entry> {
        let mut v = Vec::new();
        for (id, n) in sets {
            for _ in 0..times {
                v.extend((0..*n).map(|index| Entry {
                    dataset: id.clone(),
                    index,
                }));
            }
        }
        v
    };
    let mut d_queue = expand(&driving_sets, replication);
    let mut i_queue = expand(&indoor_sets, 1);
    d_queue.shuffle(rng);
    i_queue.shuffle(rng);
    let (driving_entries, indoor_entries) = (d_queue.len(), i_queue.len());
    let entries = assemble(d_queue, i_queue, batch_size, rng);
    Ok(EpochSchedule {
        entries,
        ratio_target,
        batch_size,
        replication,
        driving_entries,
        indoor_entries,
    })
}

/// Stratified batch assembly: each batch takes a share of driving entries
/// proportional to the remaining counts, clamped to keep both groups present.
fn assemble(d: Vec<Entry>, i: Vec<Entry>, batch: usize, rng: &mut impl Rng) -> Vec<Entry> {
    let mut d = d.into_iter().peekable();
    let mut i = i.into_iter().peekable();
    let mut d_left = d.len();
    let mut i_left = i.len();
    let mut out = Vec::with_capacity(d_left + i_left);
    while d_left + i_left >= batch {
        let mut take_d = if d_left == 0 {
            0
        } else if i_left == 0 {
            batch
        } else {
            let exact = batch as f64 * d_left as f64 / (d_left + i_left) as f64;
            let base = exact.floor();
            // randomized rounding keeps the expected share exact
            let n = base as usize + usize::from(rng.random::<f64>() < exact - base);
            n.clamp(1, batch - 1)
        };
        take_d = take_d.min(d_left).max(batch.saturating_sub(i_left));
        let take_i = batch - take_d;
        let mut chunk: Vec<Entry> = d.by_ref().take(take_d).chain(i.by_ref().take(take_i)).collect();
        chunk.shuffle(rng);
        out.extend(chunk);
        d_left -= take_d;
        i_left -= take_i;
    }
    out
}

/// Consecutive `batch_size` slices of the schedule; the tail is dropped.
pub fn batches(schedule: &EpochSchedule) -> Vec<&[Entry]> {
    schedule.entries.chunks_exact(schedule.batch_size).collect()
}
