use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// A scored candidate ordered by `(distance, key)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Candidate<K> {
    pub distance: f64,
    pub key: K,
}

impl<K: Ord> PartialEq for Candidate<K> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<K: Ord> Eq for Candidate<K> {}

impl<K: Ord> PartialOrd for Candidate<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K: Ord> Ord for Candidate<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then_with(|| self.key.cmp(&other.key))
    }
}

/// Bounded max-heap keeping the `k` smallest candidates seen so far.
pub(crate) struct TopK<K> {
    k: usize,
    heap: BinaryHeap<Candidate<K>>,
}

impl<K: Ord> TopK<K> {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k.min(1 << 16) + 1),
        }
    }

    #[inline]
    pub fn push(&mut self, distance: f64, key: K) {
        if self.k == 0 {
            return;
        }
        let cand = Candidate { distance, key };
        if self.heap.len() < self.k {
            self.heap.push(cand);
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if cand < *worst {
                *worst = cand;
            }
        }
    }

    pub fn into_sorted_vec(self) -> Vec<Candidate<K>> {
        self.heap.into_sorted_vec()
    }
}

/// Merges partial top-k lists into a single sorted top-k list.
#[cfg_attr(not(feature = "parallel"), allow(dead_code))]
pub(crate) fn merge<K: Ord>(parts: Vec<Vec<Candidate<K>>>, k: usize) -> Vec<Candidate<K>> {
    let mut all: Vec<Candidate<K>> = parts.into_iter().flatten().collect();
    all.sort_unstable();
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_smallest_in_order() {
        let mut top = TopK::new(3);
        for (d, key) in [(0.5, 1u32), (0.1, 2), (0.9, 3), (0.3, 4), (0.1, 0)] {
            top.push(d, key);
        }
        let got: Vec<_> = top
            .into_sorted_vec()
            .iter()
            .map(|c| (c.distance, c.key))
            .collect();
        assert_eq!(got, vec![(0.1, 0), (0.1, 2), (0.3, 4)]);
    }

    #[test]
    fn zero_capacity_is_empty() {
        let mut top = TopK::new(0);
        top.push(1.0, 1u8);
        assert!(top.into_sorted_vec().is_empty());
    }
}
