//! Arbitrary-precision unsigned integers on 64-bit limbs.
//!
//! Only the operations needed to enumerate pyramid codes are provided:
//! addition, subtraction, comparison and shifts. Values are kept normalized
//! (no most-significant zero limbs), so zero is the empty limb vector and
//! derived equality is numeric equality.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Shl, Shr};

use thiserror::Error;

const LIMB_BITS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BignumError {
    #[error("subtraction underflow: subtrahend exceeds minuend")]
    Underflow,
}

/// Non-negative integer stored as little-endian 64-bit limbs.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct CodeInteger {
    limbs: Vec<u64>,
}

impl CodeInteger {
    pub const fn zero() -> Self {
        Self { limbs: Vec::new() }
    }

    pub fn one() -> Self {
        Self::from(1u64)
    }

    /// Builds a value from little-endian limbs; trailing zero limbs are dropped.
    pub fn from_limbs(limbs: Vec<u64>) -> Self {
        let mut v = Self { limbs };
        v.normalize();
        v
    }

    /// Little-endian limbs without most-significant zeros.
    pub fn limbs(&self) -> &[u64] {
        &self.limbs
    }

    pub fn is_zero(&self) -> bool {
        self.limbs.is_empty()
    }

    pub fn to_u64(&self) -> Option<u64> {
        match self.limbs.len() {
            0 => Some(0),
            1 => Some(self.limbs[0]),
            _ => None,
        }
    }

    /// Number of significant bits: 0 for zero, otherwise `floor(log2 self) + 1`.
    pub fn bit_length(&self) -> usize {
        match self.limbs.last() {
            None => 0,
            Some(&top) => (self.limbs.len() - 1) * LIMB_BITS + (LIMB_BITS - top.leading_zeros() as usize),
        }
    }

    pub fn bit(&self, index: usize) -> bool {
        let limb = index / LIMB_BITS;
        limb < self.limbs.len() && (self.limbs[limb] >> (index % LIMB_BITS)) & 1 == 1
    }

    /// `count <= 64` bits starting at bit `start`, right-aligned.
    pub fn bits(&self, start: usize, count: usize) -> u64 {
        debug_assert!(count <= LIMB_BITS);
        if count == 0 {
            return 0;
        }
        let limb = start / LIMB_BITS;
        let offset = start % LIMB_BITS;
        let lo = self.limbs.get(limb).copied().unwrap_or(0) >> offset;
        let hi = if offset == 0 {
            0
        } else {
            self.limbs.get(limb + 1).copied().unwrap_or(0) << (LIMB_BITS - offset)
        };
        let word = lo | hi;
        if count == LIMB_BITS {
            word
        } else {
            word & ((1u64 << count) - 1)
        }
    }

    /// Exact sum.
    pub fn add(&self, other: &Self) -> Self {
        let (long, short) = if self.limbs.len() >= other.limbs.len() {
            (&self.limbs, &other.limbs)
        } else {
            (&other.limbs, &self.limbs)
        };
        let mut out = Vec::with_capacity(long.len() + 1);
        let mut carry = false;
        for (i, &a) in long.iter().enumerate() {
            let b = short.get(i).copied().unwrap_or(0);
            let (s1, c1) = a.overflowing_add(b);
            let (s2, c2) = s1.overflowing_add(carry as u64);
            out.push(s2);
            carry = c1 || c2;
        }
        if carry {
            out.push(1);
        }
        Self { limbs: out }
    }

    /// Exact difference, or [`BignumError::Underflow`] if `other > self`.
    pub fn checked_sub(&self, other: &Self) -> Result<Self, BignumError> {
        if self.cmp(other) == Ordering::Less {
            return Err(BignumError::Underflow);
        }
        let mut out = Vec::with_capacity(self.limbs.len());
        let mut borrow = false;
        for (i, &a) in self.limbs.iter().enumerate() {
            let b = other.limbs.get(i).copied().unwrap_or(0);
            let (d1, b1) = a.overflowing_sub(b);
            let (d2, b2) = d1.overflowing_sub(borrow as u64);
            out.push(d2);
            borrow = b1 || b2;
        }
        debug_assert!(!borrow);
        Ok(Self::from_limbs(out))
    }

    /// `self * 2^bits`.
    pub fn shift_left(&self, bits: usize) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        let whole = bits / LIMB_BITS;
        let part = bits % LIMB_BITS;
        let mut out = vec![0u64; whole];
        out.reserve(self.limbs.len() + 1);
        if part == 0 {
            out.extend_from_slice(&self.limbs);
        } else {
            let mut carry = 0u64;
            for &limb in &self.limbs {
                out.push((limb << part) | carry);
                carry = limb >> (LIMB_BITS - part);
            }
            if carry != 0 {
                out.push(carry);
            }
        }
        Self { limbs: out }
    }

    /// `floor(self / 2^bits)`.
    pub fn shift_right(&self, bits: usize) -> Self {
        let whole = bits / LIMB_BITS;
        if whole >= self.limbs.len() {
            return Self::zero();
        }
        let part = bits % LIMB_BITS;
        let src = &self.limbs[whole..];
        let out = if part == 0 {
            src.to_vec()
        } else {
            (0..src.len())
                .map(|i| {
                    let hi = src.get(i + 1).map_or(0, |&w| w << (LIMB_BITS - part));
                    (src[i] >> part) | hi
                })
                .collect()
        };
        Self::from_limbs(out)
    }

    fn normalize(&mut self) {
        while self.limbs.last() == Some(&0) {
            self.limbs.pop();
        }
    }

    /// In-place division by a small divisor, returning the remainder.
    fn div_rem_small(&mut self, divisor: u64) -> u64 {
        let mut rem = 0u128;
        for limb in self.limbs.iter_mut().rev() {
            let cur = (rem << 64) | *limb as u128;
            *limb = (cur / divisor as u128) as u64;
            rem = cur % divisor as u128;
        }
        self.normalize();
        rem as u64
    }
}

impl From<u64> for CodeInteger {
    fn from(v: u64) -> Self {
        Self::from_limbs(vec![v])
    }
}

impl From<u128> for CodeInteger {
    fn from(v: u128) -> Self {
        Self::from_limbs(vec![v as u64, (v >> 64) as u64])
    }
}

impl Ord for CodeInteger {
    fn cmp(&self, other: &Self) -> Ordering {
        self.limbs
            .len()
            .cmp(&other.limbs.len())
            .then_with(|| self.limbs.iter().rev().cmp(other.limbs.iter().rev()))
    }
}

impl PartialOrd for CodeInteger {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Add for &CodeInteger {
    type Output = CodeInteger;

    fn add(self, rhs: Self) -> CodeInteger {
        CodeInteger::add(self, rhs)
    }
}

impl AddAssign<&CodeInteger> for CodeInteger {
    fn add_assign(&mut self, rhs: &CodeInteger) {
        *self = CodeInteger::add(self, rhs);
    }
}

impl Shl<usize> for &CodeInteger {
    type Output = CodeInteger;

    fn shl(self, bits: usize) -> CodeInteger {
        self.shift_left(bits)
    }
}

impl Shr<usize> for &CodeInteger {
    type Output = CodeInteger;

    fn shr(self, bits: usize) -> CodeInteger {
        self.shift_right(bits)
    }
}

impl fmt::Display for CodeInteger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const CHUNK: u64 = 10_000_000_000_000_000_000;
        if self.is_zero() {
            return f.pad("0");
        }
        let mut rest = self.clone();
        let mut chunks = Vec::new();
        while !rest.is_zero() {
            chunks.push(rest.div_rem_small(CHUNK));
        }
        let mut s = chunks.pop().unwrap().to_string();
        for c in chunks.iter().rev() {
            s.push_str(&format!("{c:019}"));
        }
        f.pad(&s)
    }
}

impl fmt::Debug for CodeInteger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CodeInteger({self})")
    }
}
