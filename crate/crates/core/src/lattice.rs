//! Counting points of the integer pyramid `P(D, K) = { p in Z^D : sum |p_i| = K }`.
//!
//! `N(d, k)` obeys `N(d, k) = N(d-1, k) + N(d-1, k-1) + N(d, k-1)` with
//! `N(d, 0) = 1` and `N(0, k >= 1) = 0`. The cumulative sums
//! `V(d, k) = N(d, 1) + ... + N(d, k)` let the encoder replace a run of table
//! lookups with a single difference.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

use crate::bignum::CodeInteger;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatticeError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("bit budget must be at least 1")]
    ZeroBits,
    #[error("N(1, K) = 2 for every K >= 1, so a 1-dimensional pyramid has no largest K")]
    UnboundedPulses,
    #[error("the bit budget allows more than {0} pulses")]
    TooManyPulses(usize),
}

/// Upper bound on `K` accepted by [`choose_pulses`].
pub const MAX_PULSES: usize = 1 << 20;

/// Precomputed `N(d, k)` and `V(d, k)` for `0 <= d <= D`, `0 <= k <= K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeTable {
    dim: usize,
    pulses: usize,
    counts: Vec<CodeInteger>,
    cumulative: Vec<CodeInteger>,
}

impl SizeTable {
    /// Builds the table row by row: each row is a prefix scan over `k` of the
    /// previous row's diagonal sums.
    pub fn build(dim: usize, pulses: usize) -> Self {
        let width = pulses + 1;
        let mut counts = Vec::with_capacity((dim + 1) * width);
        counts.push(CodeInteger::one());
        counts.extend(std::iter::repeat_n(CodeInteger::zero(), pulses));
        for d in 1..=dim {
            let prev = (d - 1) * width;
            let mut running = CodeInteger::one();
            counts.push(running.clone());
            for k in 1..=pulses {
                running = &(&running + &counts[prev + k]) + &counts[prev + k - 1];
                counts.push(running.clone());
            }
        }

        let mut cumulative = Vec::with_capacity(counts.len());
        for d in 0..=dim {
            let mut acc = CodeInteger::zero();
            cumulative.push(acc.clone());
            for k in 1..=pulses {
                acc += &counts[d * width + k];
                cumulative.push(acc.clone());
            }
        }

        Self { dim, pulses, counts, cumulative }
    }

    /// Shared table for `(dim, pulses)`, built once per process.
    pub fn cached(dim: usize, pulses: usize) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<SizeTable>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(t) = cache.lock().unwrap().get(&(dim, pulses)) {
            return Arc::clone(t);
        }
        let table = Arc::new(Self::build(dim, pulses));
        cache
            .lock()
            .unwrap()
            .entry((dim, pulses))
            .or_insert(table)
            .clone()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pulses(&self) -> usize {
        self.pulses
    }

    /// `N(d, k)`. Panics outside the table.
    #[inline]
    pub fn n(&self, d: usize, k: usize) -> &CodeInteger {
        assert!(d <= self.dim && k <= self.pulses, "N({d}, {k}) outside table");
        &self.counts[d * (self.pulses + 1) + k]
    }

    /// `V(d, k) = sum_{i=1..k} N(d, i)`. Panics outside the table.
    #[inline]
    pub fn v(&self, d: usize, k: usize) -> &CodeInteger {
        assert!(d <= self.dim && k <= self.pulses, "V({d}, {k}) outside table");
        &self.cumulative[d * (self.pulses + 1) + k]
    }

    /// Size of the full codebook, `N(D, K)`.
    pub fn code_count(&self) -> &CodeInteger {
        self.n(self.dim, self.pulses)
    }

    /// `(d, k, N, V)` rows in row-major order.
    pub fn rows(&self) -> impl Iterator<Item = (usize, usize, &CodeInteger, &CodeInteger)> + '_ {
        (0..=self.dim).flat_map(move |d| (0..=self.pulses).map(move |k| (d, k, self.n(d, k), self.v(d, k))))
    }
}

/// `N(dim, pulses)`.
pub fn count_codes(dim: usize, pulses: usize) -> CodeInteger {
    // Only the last column is needed; keep one column per k.
    let mut col: Vec<CodeInteger> = vec![CodeInteger::one(); dim + 1];
    for _ in 1..=pulses {
        col = next_column(&col);
    }
    col[dim].clone()
}

/// Advances `N(., k)` to `N(., k + 1)`.
fn next_column(col: &[CodeInteger]) -> Vec<CodeInteger> {
    let mut next = Vec::with_capacity(col.len());
    next.push(CodeInteger::zero());
    for d in 1..col.len() {
        let v = &(&next[d - 1] + &col[d - 1]) + &col[d];
        next.push(v);
    }
    next
}

/// Largest `K` whose `N(dim, K)` codes fit in `bits_per_group` bits, i.e.
/// `N(dim, K) <= 2^bits_per_group`. Returns 0 when even `N(dim, 1) = 2 dim`
/// does not fit.
pub fn choose_pulses(dim: usize, bits_per_group: usize) -> Result<usize, LatticeError> {
    if dim == 0 {
        return Err(LatticeError::ZeroDimension);
    }
    if bits_per_group == 0 {
        return Err(LatticeError::ZeroBits);
    }
    let fits = |n: &CodeInteger| {
        // n <= 2^b  <=>  n - 1 < 2^b
        n.checked_sub(&CodeInteger::one()).map(|m| m.bit_length() <= bits_per_group).unwrap_or(true)
    };
    if !fits(&CodeInteger::from(2 * dim as u64)) {
        return Ok(0);
    }
    if dim == 1 {
        return Err(LatticeError::UnboundedPulses);
    }
    let mut col: Vec<CodeInteger> = vec![CodeInteger::one(); dim + 1];
    let mut k = 0;
    loop {
        let next = next_column(&col);
        if !fits(&next[dim]) {
            return Ok(k);
        }
        col = next;
        k += 1;
        if k > MAX_PULSES {
            return Err(LatticeError::TooManyPulses(MAX_PULSES));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(d: usize, k: usize) -> u64 {
        SizeTable::build(d.max(1), k).n(d, k).to_u64().unwrap()
    }

    #[test]
    fn base_cases() {
        let t = SizeTable::build(6, 6);
        for d in 0..=6 {
            assert_eq!(t.n(d, 0), &CodeInteger::one());
            assert!(t.v(d, 0).is_zero());
        }
        for k in 1..=6 {
            assert!(t.n(0, k).is_zero());
        }
    }

    #[test]
    fn small_counts() {
        assert_eq!(n(2, 7), 28);
        assert_eq!(n(1, 5), 2);
        assert_eq!(n(3, 1), 6);
        assert_eq!(n(3, 2), 18);
        assert_eq!(n(2, 2), 8);
    }

    #[test]
    fn count_codes_matches_table() {
        let t = SizeTable::build(9, 12);
        for d in 0..=9 {
            for k in 0..=12 {
                assert_eq!(&count_codes(d, k), t.n(d, k), "d={d} k={k}");
            }
        }
    }

    #[test]
    fn cumulative_differences() {
        let t = SizeTable::build(5, 9);
        for d in 0..=5 {
            for k in 1..=9 {
                assert_eq!(&t.v(d, k).checked_sub(t.v(d, k - 1)).unwrap(), t.n(d, k));
            }
        }
    }

    #[test]
    fn pulse_selection() {
        // N(2, 8) = 32 fits five bits exactly, N(2, 9) = 36 does not.
        assert_eq!(choose_pulses(2, 5).unwrap(), 8);
        assert_eq!(choose_pulses(3, 1).unwrap(), 0);
        assert_eq!(choose_pulses(1, 1).unwrap_err(), LatticeError::UnboundedPulses);
        assert_eq!(choose_pulses(0, 4).unwrap_err(), LatticeError::ZeroDimension);
        assert_eq!(choose_pulses(2, 40).unwrap_err(), LatticeError::TooManyPulses(MAX_PULSES));
        let k = choose_pulses(16, 40).unwrap();
        assert!(count_codes(16, k) <= CodeInteger::one().shift_left(40));
        assert!(count_codes(16, k + 1) > CodeInteger::one().shift_left(40));
    }

    #[test]
    fn pulse_selection_is_monotone_in_bits() {
        for d in 2..=8 {
            let mut prev = 0;
            for b in 1..=(6 * d).min(24) {
                let k = choose_pulses(d, b).unwrap();
                assert!(k >= prev);
                prev = k;
            }
        }
    }

    #[test]
    fn cache_returns_same_table() {
        let a = SizeTable::cached(7, 5);
        let b = SizeTable::cached(7, 5);
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(a.code_count(), &count_codes(7, 5));
    }
}
