use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Indices of a dataset split into train / validation / test.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffled 70/15/15 split of `0..n`. Validation and test get at least one
/// item each when `n ≥ 3`.
pub fn split_indices(n: usize, seed: u64) -> Splits {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_val = (n as f64 * 0.15).round() as usize;
    let mut n_test = n_val;
    if n >= 3 {
        n_val = n_val.max(1);
        n_test = n_test.max(1);
    }
    let n_train = n.saturating_sub(n_val + n_test);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Splits { train: idx, val, test }
}

/// Consecutive chunks of a shuffled copy of `idx`.
pub fn batches(idx: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut v = idx.to_vec();
    v.shuffle(rng);
    v.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
