use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};

/// Pairs every distinct person (in order of first appearance) with a
/// garment-owner entry drawn uniformly from the entries that belong to a
/// *different* person. Returns `(source_entry, owner_entry)` indices.
pub fn pair_across_persons<K: PartialEq>(persons: &[K], seed: u64) -> Result<Vec<(usize, usize)>> {
    if persons.len() < 2 {
        return Err(contract!(
            "pairing needs at least 2 manifest entries, got {}",
            persons.len()
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for (i, key) in persons.iter().enumerate() {
        if persons[..i].contains(key) {
            continue;
        }
        let others: Vec<usize> = (0..persons.len()).filter(|&j| persons[j] != *key).collect();
        if others.is_empty() {
            return Err(contract!("all manifest entries show the same person"));
        }
        pairs.push((i, others[rng.random_range(0..others.len())]));
    }
    Ok(pairs)
}
