//! Temperature-weighted bucket quotas with a per-bucket cap and
//! largest-remainder redistribution of the leftover budget.

use std::cmp::Ordering;

use crate::config::{ceil_count, floor_count};

/// Quota computation for buckets given in key-ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// Quality mass, shifted by the global maximum `q` (scale-free).
    pub mass: Vec<f64>,
    /// Normalized weight `p_j`; sums to 1.
    pub weight: Vec<f64>,
    /// `min(|B_j|, cap, floor(M p_j))`.
    pub initial: Vec<usize>,
    /// Final quota after redistribution.
    pub quota: Vec<usize>,
    /// `ceil(gamma * M)`.
    pub cap: usize,
    /// Buckets whose proportional share exceeded the cap.
    pub cap_hits: usize,
}

impl Allocation {
    pub fn total(&self) -> usize {
        self.quota.iter().sum()
    }
}

/// Fractional remainder on a 1e-9 grid, so remainders that are equal in
/// exact arithmetic compare equal.
fn remainder_key(share: f64, floor: usize) -> u64 {
    ((share - floor as f64).max(0.0) * 1e9).round() as u64
}

/// Allocates budget `m` across buckets.
///
/// `buckets[j]` holds the `q` of bucket `j`'s members in ascending sample-id
/// order; buckets must be in ascending key order. Masses are summed in that
/// member order and weights over buckets in key order. Leftover units go one
/// at a time by descending fractional share (ties: larger mass, then key),
/// cycling until the budget is spent or every bucket is at capacity
/// `min(|B_j|, cap)`.
pub fn allocate(buckets: &[&[f64]], tau: f64, gamma: f64, m: usize) -> Allocation {
    let k = buckets.len();
    let q_max = buckets
        .iter()
        .flat_map(|b| b.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let mass: Vec<f64> = buckets
        .iter()
        .map(|b| b.iter().map(|&q| ((q - q_max) / tau).exp()).sum())
        .collect();
    let total: f64 = mass.iter().sum();
    let weight: Vec<f64> = mass.iter().map(|&mj| mj / total).collect();

    let cap = ceil_count(gamma * m as f64);
    let budget = m as f64;
    let mut frac = Vec::with_capacity(k);
    let mut initial = Vec::with_capacity(k);
    let mut capacity = Vec::with_capacity(k);
    let mut cap_hits = 0;
    for (j, &p) in weight.iter().enumerate() {
        let share = budget * p;
        let floor = floor_count(share);
        frac.push(remainder_key(share, floor));
        let size = buckets[j].len();
        if cap < floor && cap <= size {
            cap_hits += 1;
        }
        capacity.push(size.min(cap));
        initial.push(size.min(cap).min(floor));
    }

    let mut quota = initial.clone();
    let mut leftover = m.saturating_sub(quota.iter().sum());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        frac[b]
            .cmp(&frac[a])
            .then(mass[b].partial_cmp(&mass[a]).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    let mut active: Vec<usize> = order.into_iter().filter(|&j| quota[j] < capacity[j]).collect();
    while leftover > 0 && !active.is_empty() {
        if leftover >= active.len() {
            // Whole passes: every active bucket takes one unit per pass.
            let headroom = active.iter().map(|&j| capacity[j] - quota[j]).min().unwrap_or(0);
            let passes = (leftover / active.len()).min(headroom);
            for &j in &active {
                quota[j] += passes;
            }
            leftover -= passes * active.len();
            active.retain(|&j| quota[j] < capacity[j]);
        } else {
            for &j in active.iter().take(leftover) {
                quota[j] += 1;
            }
            leftover = 0;
        }
    }

    Allocation {
        mass,
        weight,
        initial,
        quota,
        cap,
        cap_hits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bucket() {
        let qs = vec![0.3; 10];
        let a = allocate(&[&qs], 0.2, 1.0, 10);
        assert_eq!(a.quota, vec![10]);
        assert_eq!(a.weight, vec![1.0]);
    }

    #[test]
    fn worked_instance() {
        let b1 = [2.0; 3];
        let b2 = [1.0; 8];
        let a = allocate(&[&b1, &b2], 1.0, 0.5, 10);
        assert_eq!(a.cap, 5);
        assert_eq!(a.initial, vec![3, 4]);
        assert_eq!(a.quota, vec![3, 5]);
        assert_eq!(a.total(), 8);
        // p_1 = 3e / (3e + 8)
        let e = std::f64::consts::E;
        assert!((a.weight[0] - 3.0 * e / (3.0 * e + 8.0)).abs() < 1e-12);
    }

    #[test]
    fn cycles_until_capacity() {
        // One dominant bucket capped at 2; the rest absorb the leftover over
        // several passes.
        let big = [10.0; 50];
        let small = [0.0; 10];
        let a = allocate(&[&big, &small, &small], 1.0, 0.2, 10);
        assert_eq!(a.cap, 2);
        assert_eq!(a.initial, vec![2, 0, 0]);
        assert_eq!(a.quota, vec![2, 2, 2]);
        assert_eq!(a.cap_hits, 1);
    }

    #[test]
    fn extreme_q_does_not_overflow() {
        let hi = [1e4, 1e4];
        let lo = [-1e4];
        let a = allocate(&[&hi, &lo], 1e-3, 1.0, 2);
        assert!(a.weight.iter().all(|w| w.is_finite()));
        assert_eq!(a.quota, vec![2, 0]);
    }

    #[test]
    fn never_exceeds_budget() {
        let b: Vec<Vec<f64>> = (0..7).map(|j| vec![j as f64 / 7.0; j + 1]).collect();
        let refs: Vec<&[f64]> = b.iter().map(Vec::as_slice).collect();
        for m in 1..=28 {
            let a = allocate(&refs, 0.3, 0.4, m);
            assert!(a.total() <= m);
            for (j, &q) in a.quota.iter().enumerate() {
                assert!(q <= b[j].len().min(a.cap));
            }
        }
    }
}
