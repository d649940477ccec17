//! Randomized Hadamard rotations.
//!
//! `Q = H diag(s) / sqrt(n)` with `H` the Sylvester Hadamard matrix and `s` a
//! seeded `+-1` vector. `Q` is orthogonal, so rotating the weights by
//! `W' = Q_r W Q_c^T` and the inputs by `x' = Q_c x` leaves the layer output
//! unchanged up to the row rotation while spreading outliers across
//! coordinates.
//!
//! Signs come from splitmix64 seeded with the user seed: output word `w`
//! (starting at the first output) supplies the signs of indices
//! `64 w .. 64 w + 63`, bit `i mod 64` set meaning `-1`.

use rayon::prelude::*;
use thiserror::Error;

use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoherenceError {
    #[error("dimension {0} is not a power of two; only power-of-two Hadamard sizes are supported")]
    NotPowerOfTwo(usize),
    #[error("vector of length {got} does not match transform size {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// One step of the splitmix64 generator.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Size and sign vector of one randomized Hadamard transform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HadamardSpec {
    dim: usize,
    negative: Vec<bool>,
}

impl HadamardSpec {
    pub fn new(dim: usize, seed: u64) -> Result<Self, CoherenceError> {
        check_pow2(dim)?;
        let mut state = seed;
        let mut negative = Vec::with_capacity(dim);
        while negative.len() < dim {
            let word = splitmix64(&mut state);
            let take = (dim - negative.len()).min(64);
            negative.extend((0..take).map(|b| (word >> b) & 1 == 1));
        }
        Ok(Self { dim, negative })
    }

    /// Plain normalized Hadamard transform, all signs positive.
    pub fn unsigned(dim: usize) -> Result<Self, CoherenceError> {
        check_pow2(dim)?;
        Ok(Self { dim, negative: vec![false; dim] })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sign(&self, i: usize) -> f64 {
        if self.negative[i] {
            -1.0
        } else {
            1.0
        }
    }

    /// Dense `Q`, for tests and small diagnostics.
    pub fn materialize<T: Scalar>(&self) -> DenseMatrix<T> {
        let scale = 1.0 / (self.dim as f64).sqrt();
        DenseMatrix::from_fn(self.dim, self.dim, |i, j| {
            let h = if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            T::of(h * self.sign(j) * scale)
        })
    }
}

fn check_pow2(dim: usize) -> Result<(), CoherenceError> {
    if dim == 0 || !dim.is_power_of_two() {
        Err(CoherenceError::NotPowerOfTwo(dim))
    } else {
        Ok(())
    }
}

fn butterfly<T: Scalar>(v: &mut [T]) {
    let n = v.len();
    let mut h = 1;
    while h < n {
        for block in v.chunks_exact_mut(2 * h) {
            let (a, b) = block.split_at_mut(h);
            for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                let (s, d) = (*x + *y, *x - *y);
                *x = s;
                *y = d;
            }
        }
        h *= 2;
    }
}

/// Applies `Q` (forward) or `Q^T` (inverse) in place.
pub fn fwht<T: Scalar>(v: &mut [T], spec: &HadamardSpec, direction: Direction) -> Result<(), CoherenceError> {
    if v.len() != spec.dim {
        return Err(CoherenceError::LengthMismatch { expected: spec.dim, got: v.len() });
    }
    let scale = T::of(1.0 / (spec.dim as f64).sqrt());
    let flip = |v: &mut [T]| {
        for (x, &neg) in v.iter_mut().zip(&spec.negative) {
            if neg {
                *x = -*x;
            }
        }
    };
    if direction == Direction::Forward {
        flip(v);
    }
    butterfly(v);
    for x in v.iter_mut() {
        *x *= scale;
    }
    if direction == Direction::Inverse {
        flip(v);
    }
    Ok(())
}

/// Applies the transform to every row.
fn transform_rows<T: Scalar>(m: &mut DenseMatrix<T>, spec: &HadamardSpec, direction: Direction) -> Result<(), CoherenceError> {
    if m.cols() != spec.dim {
        return Err(CoherenceError::LengthMismatch { expected: spec.dim, got: m.cols() });
    }
    let cols = m.cols();
    m.as_mut_slice()
        .par_chunks_exact_mut(cols)
        .try_for_each(|row| fwht(row, spec, direction))
}

/// Applies the transform to every column, with whole rows as butterfly lanes.
fn transform_cols<T: Scalar>(m: &mut DenseMatrix<T>, spec: &HadamardSpec, direction: Direction) -> Result<(), CoherenceError> {
    let (rows, cols) = m.shape();
    if rows != spec.dim {
        return Err(CoherenceError::LengthMismatch { expected: spec.dim, got: rows });
    }
    let scale = T::of(1.0 / (rows as f64).sqrt());
    let data = m.as_mut_slice();
    let flip = |data: &mut [T]| {
        for (row, &neg) in data.chunks_exact_mut(cols).zip(&spec.negative) {
            if neg {
                row.iter_mut().for_each(|x| *x = -*x);
            }
        }
    };
    if direction == Direction::Forward {
        flip(data);
    }
    let mut h = 1;
    while h < rows {
        data.par_chunks_exact_mut(2 * h * cols).for_each(|block| {
            let (a, b) = block.split_at_mut(h * cols);
            for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                let (s, d) = (*x + *y, *x - *y);
                *x = s;
                *y = d;
            }
        });
        h *= 2;
    }
    data.par_iter_mut().for_each(|x| *x *= scale);
    if direction == Direction::Inverse {
        flip(data);
    }
    Ok(())
}

/// `Q_r W Q_c^T`.
pub fn rotate_matrix<T: Scalar>(
    w: &DenseMatrix<T>,
    row_spec: &HadamardSpec,
    col_spec: &HadamardSpec,
) -> Result<DenseMatrix<T>, CoherenceError> {
    let mut out = w.clone();
    transform_rows(&mut out, col_spec, Direction::Forward)?;
    transform_cols(&mut out, row_spec, Direction::Forward)?;
    Ok(out)
}

/// `Q_r^T W Q_c`, the inverse of [`rotate_matrix`].
pub fn unrotate_matrix<T: Scalar>(
    w: &DenseMatrix<T>,
    row_spec: &HadamardSpec,
    col_spec: &HadamardSpec,
) -> Result<DenseMatrix<T>, CoherenceError> {
    let mut out = w.clone();
    transform_cols(&mut out, row_spec, Direction::Inverse)?;
    transform_rows(&mut out, col_spec, Direction::Inverse)?;
    Ok(out)
}

/// `Q H Q^T` for a second-moment matrix of inputs rotated by `Q`.
pub fn rotate_gram<T: Scalar>(h: &DenseMatrix<T>, spec: &HadamardSpec) -> Result<DenseMatrix<T>, CoherenceError> {
    let mut out = h.clone();
    transform_rows(&mut out, spec, Direction::Forward)?;
    transform_cols(&mut out, spec, Direction::Forward)?;
    Ok(out)
}

/// Row and column transforms of a weight matrix derived from one stored seed.
/// The row transform uses `seed`, the column transform `!seed`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoherencePair {
    pub rows: HadamardSpec,
    pub cols: HadamardSpec,
}

impl CoherencePair {
    pub fn from_seed(rows: usize, cols: usize, seed: u64) -> Result<Self, CoherenceError> {
        Ok(Self { rows: HadamardSpec::new(rows, seed)?, cols: HadamardSpec::new(cols, !seed)? })
    }

    pub fn rotate<T: Scalar>(&self, w: &DenseMatrix<T>) -> Result<DenseMatrix<T>, CoherenceError> {
        rotate_matrix(w, &self.rows, &self.cols)
    }

    pub fn unrotate<T: Scalar>(&self, w: &DenseMatrix<T>) -> Result<DenseMatrix<T>, CoherenceError> {
        unrotate_matrix(w, &self.rows, &self.cols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_transform() {
        let spec = HadamardSpec::unsigned(2).unwrap();
        let mut v = [1.0f64, 0.0];
        fwht(&mut v, &spec, Direction::Forward).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[0] - h).abs() < 1e-15 && (v[1] - h).abs() < 1e-15);
    }

    #[test]
    fn non_power_of_two_is_rejected() {
        assert_eq!(HadamardSpec::new(12, 1).unwrap_err(), CoherenceError::NotPowerOfTwo(12));
        assert_eq!(HadamardSpec::unsigned(0).unwrap_err(), CoherenceError::NotPowerOfTwo(0));
    }

    #[test]
    fn length_mismatch() {
        let spec = HadamardSpec::new(8, 3).unwrap();
        let mut v = vec![0.0f32; 4];
        assert_eq!(
            fwht(&mut v, &spec, Direction::Forward),
            Err(CoherenceError::LengthMismatch { expected: 8, got: 4 })
        );
    }

    #[test]
    fn materialized_transform_is_orthogonal() {
        for dim in [1, 2, 4, 16, 32] {
            let q: DenseMatrix<f64> = HadamardSpec::new(dim, 99).unwrap().materialize();
            let qtq = q.transpose().matmul(&q).unwrap();
            assert!(qtq.sub(&DenseMatrix::identity(dim)).unwrap().max_abs() < 1e-6);
        }
    }

    #[test]
    fn fast_transform_matches_dense() {
        let spec = HadamardSpec::new(16, 7).unwrap();
        let q: DenseMatrix<f64> = spec.materialize();
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let dense = q.matmul(&DenseMatrix::new(16, 1, x.clone()).unwrap()).unwrap();
        let mut fast = x;
        fwht(&mut fast, &spec, Direction::Forward).unwrap();
        for (a, b) in fast.iter().zip(dense.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn signs_are_seed_determined() {
        let a = HadamardSpec::new(256, 42).unwrap();
        let b = HadamardSpec::new(256, 42).unwrap();
        let c = HadamardSpec::new(256, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn splitmix_reference_values() {
        // First outputs of splitmix64 seeded with 0.
        let mut s = 0u64;
        assert_eq!(splitmix64(&mut s), 0xe220_a839_7b1d_cdaf);
        assert_eq!(splitmix64(&mut s), 0x6e78_9e6a_a1b9_65f4);
    }

    #[test]
    fn gram_rotation_matches_dense() {
        let spec = HadamardSpec::new(4, 5).unwrap();
        let q: DenseMatrix<f64> = spec.materialize();
        let h = DenseMatrix::new(4, 4, vec![2.0, 0.5, 0.0, 0.1, 0.5, 1.0, 0.2, 0.0, 0.0, 0.2, 3.0, 0.3, 0.1, 0.0, 0.3, 1.5]).unwrap();
        let dense = q.matmul(&h).unwrap().matmul(&q.transpose()).unwrap();
        let fast = rotate_gram(&h, &spec).unwrap();
        assert!(fast.sub(&dense).unwrap().max_abs() < 1e-12);
    }
}
