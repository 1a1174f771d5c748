use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Fold index per instance. Each class is shuffled and dealt round-robin, the
/// negatives continuing where the positives stopped, so fold sizes and
/// per-fold positive counts each differ by at most one.
pub fn stratified_folds(y: &[u8], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 0).collect();
    if pos.len() + neg.len() != y.len() {
        return Err(Error::domain("labels must be 0 or 1"));
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass(format!(
            "{} positive, {} negative",
            pos.len(),
            neg.len()
        )));
    }
    for (name, class) in [("positive", &pos), ("negative", &neg)] {
        if class.len() < k {
            return Err(Error::domain(format!(
                "{name} class has {} members, fewer than {k} folds",
                class.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0; y.len()];
    let mut next = rng.gen_range(0..k);
    for mut class in [pos, neg] {
        class.shuffle(&mut rng);
        for i in class {
            assign[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(assign)
}

/// `(train, test)` indices for one fold, both ascending.
pub fn split_fold(assign: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..assign.len()).partition(|&i| assign[i] != fold)
}
