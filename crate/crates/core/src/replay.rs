//! Proportional prioritized replay over a sum tree.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{Action, NavState};
use crate::error::{Error, Result};
use crate::seed::Rng;

/// Added to |TD error| so every priority stays positive.
pub const PRIORITY_EPS: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: NavState,
    pub action: Action,
    pub reward: f64,
    pub next_state: NavState,
    pub terminal: bool,
}

/// Binary sum tree with leaves stored at `capacity..2*capacity` of a power-of-two layout.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.next_power_of_two().max(1);
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1.min(self.nodes.len() - 1)]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut k = self.leaves + i;
        self.nodes[k] = value;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass`, skipping zero-priority leaves.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut k = 1;
        if self.leaves == 1 {
            return 0;
        }
        while k < self.leaves {
            let left = self.nodes[2 * k];
            if mass < left || self.nodes[2 * k + 1] <= 0.0 {
                k *= 2;
            } else {
                mass -= left;
                k = 2 * k + 1;
            }
        }
        k - self.leaves
    }

    pub fn leaf_sum(&self) -> f64 {
        self.nodes[self.leaves..].iter().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayStats {
    pub size: usize,
    pub capacity: usize,
    pub max_priority: f64,
    pub evictions: u64,
    pub stale_updates: u64,
}

/// Handle returned by [`PrioritizedBuffer::sample`]: the insertion sequence number.
pub type ReplayIndex = u64;

#[derive(Debug, Clone)]
pub struct Sampled<'a, T> {
    pub items: Vec<&'a T>,
    pub indices: Vec<ReplayIndex>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PrioritizedBuffer<T> {
    capacity: usize,
    alpha: f64,
    items: Vec<T>,
    /// Raw priorities p_i; the tree holds p_i^alpha.
    priorities: Vec<f64>,
    tree: SumTree,
    next_seq: u64,
    max_priority: f64,
    evictions: u64,
    stale_updates: u64,
}

impl<T> PrioritizedBuffer<T> {
    pub fn new(capacity: usize, alpha: f64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            alpha,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            priorities: Vec::with_capacity(capacity.min(1 << 16)),
            tree: SumTree::new(capacity),
            next_seq: 0,
            max_priority: 1.0,
            evictions: 0,
            stale_updates: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn stats(&self) -> ReplayStats {
        ReplayStats {
            size: self.len(),
            capacity: self.capacity,
            max_priority: self.max_priority,
            evictions: self.evictions,
            stale_updates: self.stale_updates,
        }
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    pub fn priority(&self, seq: ReplayIndex) -> Option<f64> {
        self.slot(seq).map(|s| self.priorities[s])
    }

    fn slot(&self, seq: ReplayIndex) -> Option<usize> {
        if seq >= self.next_seq || self.next_seq - seq > self.capacity as u64 {
            return None;
        }
        Some((seq % self.capacity as u64) as usize)
    }

    /// Oldest retained item first.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let n = self.items.len();
        let start = if n < self.capacity {
            0
        } else {
            (self.next_seq % self.capacity as u64) as usize
        };
        (0..n).map(move |i| &self.items[(start + i) % n])
    }

    /// Inserts with the current maximum priority, evicting the oldest item when full.
    pub fn push(&mut self, item: T) -> ReplayIndex {
        let seq = self.next_seq;
        let slot = (seq % self.capacity as u64) as usize;
        if self.items.len() < self.capacity {
            self.items.push(item);
            self.priorities.push(self.max_priority);
        } else {
            self.items[slot] = item;
            self.priorities[slot] = self.max_priority;
            self.evictions += 1;
        }
        self.tree.set(slot, self.max_priority.powf(self.alpha));
        self.next_seq += 1;
        seq
    }

    /// Stratified proportional sampling with importance weights normalized by the batch maximum.
    pub fn sample(&self, batch_size: usize, beta: f64, rng: &mut Rng) -> Result<Sampled<'_, T>> {
        let n = self.len();
        if batch_size == 0 || n < batch_size {
            return Err(Error::Invalid(format!(
                "cannot sample {batch_size} items from a buffer of {n}"
            )));
        }
        let total = self.tree.total();
        let segment = total / batch_size as f64;
        let oldest = self.next_seq - n as u64;
        let mut items = Vec::with_capacity(batch_size);
        let mut indices = Vec::with_capacity(batch_size);
        let mut weights = Vec::with_capacity(batch_size);
        for i in 0..batch_size {
            let mass = segment * (i as f64 + rng.gen::<f64>());
            let slot = self.tree.find(mass.min(total * (1.0 - 1e-12))).min(n - 1);
            let p = self.tree.get(slot) / total;
            weights.push((n as f64 * p).powf(-beta));
            items.push(&self.items[slot]);
            // sequence number currently stored in this slot
            let base = oldest - oldest % self.capacity as u64;
            let mut seq = base + slot as u64;
            if seq < oldest {
                seq += self.capacity as u64;
            }
            indices.push(seq);
        }
        let max = weights.iter().cloned().fold(0.0, f64::max);
        for w in &mut weights {
            *w /= max;
        }
        Ok(Sampled {
            items,
            indices,
            weights,
        })
    }

    /// Sets priority |δ| + ε for each index; indices of evicted items are skipped and counted.
    pub fn update_priorities(&mut self, indices: &[ReplayIndex], td_errors: &[f64]) {
        for (&seq, &td) in indices.iter().zip(td_errors) {
            let Some(slot) = self.slot(seq) else {
                self.stale_updates += 1;
                continue;
            };
            let p = td.abs() + PRIORITY_EPS;
            let p = if p.is_finite() { p } else { self.max_priority };
            self.priorities[slot] = p;
            self.max_priority = self.max_priority.max(p);
            self.tree.set(slot, p.powf(self.alpha));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedSource;
    use approx::assert_abs_diff_eq;

    fn rng() -> Rng {
        SeedSource::new(7).fork("replay-test")
    }

    #[test]
    fn push_and_evict() {
        let mut b = PrioritizedBuffer::new(3, 0.6);
        assert_eq!(b.push('a'), 0);
        assert_eq!(b.len(), 1);
        for c in ['b', 'c', 'd'] {
            b.push(c);
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.iter().copied().collect::<String>(), "bcd");
        b.push('e');
        assert_eq!(b.iter().copied().collect::<String>(), "cde");
        assert_eq!(b.stats().evictions, 2);
        assert_eq!(b.priority(0), None);
        assert_eq!(b.priority(2), Some(1.0));
    }

    #[test]
    fn new_items_get_max_priority() {
        let mut b = PrioritizedBuffer::new(4, 1.0);
        b.push(0);
        b.push(1);
        b.update_priorities(&[0], &[5.0]);
        let s = b.push(2);
        assert_abs_diff_eq!(b.priority(s).unwrap(), 5.0 + PRIORITY_EPS);
    }

    #[test]
    fn uniform_priorities_give_unit_weights() {
        let mut b = PrioritizedBuffer::new(8, 0.6);
        for i in 0..8 {
            b.push(i);
        }
        let s = b.sample(4, 0.7, &mut rng()).unwrap();
        assert!(s.weights.iter().all(|w| (*w - 1.0).abs() < 1e-12));
        assert!(b.sample(9, 0.4, &mut rng()).is_err());
    }

    #[test]
    fn beta_zero_gives_unit_weights() {
        let mut b = PrioritizedBuffer::new(4, 1.0);
        for i in 0..4 {
            b.push(i);
        }
        b.update_priorities(&[0, 1, 2, 3], &[0.1, 2.0, 7.0, 0.0]);
        let s = b.sample(4, 0.0, &mut rng()).unwrap();
        assert!(s.weights.iter().all(|w| *w == 1.0));
    }

    #[test]
    fn sampling_ratio_follows_priorities() {
        let mut b = PrioritizedBuffer::new(2, 1.0);
        b.push(0usize);
        b.push(1usize);
        b.update_priorities(&[0, 1], &[1.0 - PRIORITY_EPS, 3.0 - PRIORITY_EPS]);
        let mut counts = [0usize; 2];
        let mut r = rng();
        for _ in 0..100_000 {
            let s = b.sample(1, 0.4, &mut r).unwrap();
            counts[*s.items[0]] += 1;
        }
        let ratio = counts[1] as f64 / counts[0] as f64;
        assert!((ratio - 3.0).abs() / 3.0 < 0.02, "{counts:?}");
    }

    #[test]
    fn stale_updates_are_skipped() {
        let mut b = PrioritizedBuffer::new(2, 0.6);
        for i in 0..3 {
            b.push(i);
        }
        b.update_priorities(&[0, 2], &[4.0, 1.0]);
        assert_eq!(b.stats().stale_updates, 1);
        assert_abs_diff_eq!(b.priority(2).unwrap(), 1.0 + PRIORITY_EPS);
        assert_abs_diff_eq!(b.tree().total(), b.tree().leaf_sum(), epsilon = 1e-9);
    }

    #[test]
    fn sampled_indices_round_trip() {
        let mut b = PrioritizedBuffer::new(5, 0.6);
        for i in 0..13u64 {
            b.push(i);
        }
        let s = b.sample(5, 0.4, &mut rng()).unwrap();
        for (item, seq) in s.items.iter().zip(&s.indices) {
            assert_eq!(**item, *seq);
        }
    }

    #[test]
    fn zero_td_keeps_positive_priority() {
        let mut b = PrioritizedBuffer::new(2, 0.6);
        b.push(());
        b.update_priorities(&[0], &[0.0]);
        assert_eq!(b.priority(0), Some(PRIORITY_EPS));
    }
}
