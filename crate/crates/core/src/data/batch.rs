use rand::seq::SliceRandom;

use crate::rng::{stream, Purpose};

/// Seeded permutation of `0..n` cut into batches; the last batch may be short.
///
/// Each epoch uses its own stream, so epochs differ but `(seed, epoch)` is reproducible.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Purpose::Shuffle, epoch));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(b: &[Vec<usize>]) -> Vec<usize> {
        let mut all: Vec<usize> = b.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }

    #[test]
    fn full_batch_covers_everything() {
        let b = batches(17, 17, 1, 0);
        assert_eq!(b.len(), 1);
        assert_eq!(sorted(&b), (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn epochs_are_distinct_permutations() {
        let e0 = batches(100, 8, 5, 0);
        let e1 = batches(100, 8, 5, 1);
        assert_ne!(e0, e1);
        assert_eq!(sorted(&e0), (0..100).collect::<Vec<_>>());
        assert_eq!(sorted(&e1), (0..100).collect::<Vec<_>>());
        assert_eq!(e0.len(), 13);
        assert_eq!(e0.last().unwrap().len(), 4);
        assert_eq!(e0, batches(100, 8, 5, 0));
    }
}
