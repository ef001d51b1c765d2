use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SPLIT_COUNT: usize = 10;

/// Index ranges over a stored record order. The three ranges partition
/// `0..count`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    pub fn count(&self) -> usize {
        self.test.end
    }

    pub fn is_partition_of(&self, count: usize) -> bool {
        self.train.start == 0
            && self.train.end == self.val.start
            && self.val.end == self.test.start
            && self.test.end == count
            && self.train.start <= self.train.end
            && self.val.start <= self.val.end
            && self.test.start <= self.test.end
    }
}

/// A random permutation of `0..count` plus contiguous ranges into it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub permutation: Vec<usize>,
    pub ranges: SplitRanges,
}

impl SplitPlan {
    pub fn indices(&self, range: &Range<usize>) -> &[usize] {
        &self.permutation[range.clone()]
    }
}

/// Sizes proportional to `ratios` by largest remainder, so each part is
/// within one of its exact share.
pub fn split_sizes(count: usize, ratios: [u32; 3]) -> Result<[usize; 3]> {
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    if total == 0 {
        return Err(Error::config("split ratios must not all be zero"));
    }
    let mut sizes = [0usize; 3];
    let mut rems = [(0u64, 0usize); 3];
    for (i, &r) in ratios.iter().enumerate() {
        let exact = count as u64 * r as u64;
        sizes[i] = (exact / total) as usize;
        rems[i] = (exact % total, i);
    }
    let mut left = count - sizes.iter().sum::<usize>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &rems {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

pub fn split(count: usize, ratios: [u32; 3], seed: u64) -> Result<SplitPlan> {
    if count < MIN_SPLIT_COUNT {
        return Err(Error::config(format!("{count} records are too few to split (need {MIN_SPLIT_COUNT})")));
    }
    let [a, b, _] = split_sizes(count, ratios)?;
    let mut permutation: Vec<usize> = (0..count).collect();
    permutation.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(SplitPlan { permutation, ranges: SplitRanges { train: 0..a, val: a..a + b, test: a + b..count } })
}
