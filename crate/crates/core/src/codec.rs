//! Pyramid quantization, code enumeration and bit packing.
//!
//! A direction is snapped to an integer point of `P(D, K)`, which is mapped
//! bijectively onto `[0, N(D, K))`. Codes are stored LSB-first: code `i`
//! occupies stream bits `[i b, (i + 1) b)`, and stream bit `p` is bit `p & 7`
//! of byte `p >> 3`.

use thiserror::Error;

use crate::bignum::CodeInteger;
use crate::lattice::SizeTable;
use crate::scalar::{round_half_away, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("vector has no coordinates")]
    Empty,
    #[error("pulse count must be at least 1")]
    ZeroPulses,
    #[error("input coordinate {index} is not finite")]
    NonFinite { index: usize },
    #[error("point has dimension {got}, table expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point has L1 norm {got}, expected {expected}")]
    NormMismatch { expected: u64, got: u64 },
    #[error("code {code} is outside [0, {count})")]
    CodeOutOfRange { code: CodeInteger, count: CodeInteger },
    #[error("code {index} needs {needed} bits but the budget is {budget}")]
    CodeTooWide { index: usize, needed: usize, budget: usize },
    #[error("bit width must be at least 1")]
    ZeroWidth,
    #[error("packed stream holds {got} bytes, {expected} expected")]
    StreamLength { expected: usize, got: usize },
    #[error("pulse adjustment did not converge within {0} steps")]
    NoConvergence(usize),
}

/// Integer point with `sum |coords| = K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PyramidPoint {
    coords: Vec<i32>,
}

impl PyramidPoint {
    /// Checks the L1 invariant against `pulses`.
    pub fn new(coords: Vec<i32>, pulses: usize) -> Result<Self, CodecError> {
        if coords.is_empty() {
            return Err(CodecError::Empty);
        }
        let l1 = l1_norm(&coords);
        if l1 != pulses as u64 {
            return Err(CodecError::NormMismatch { expected: pulses as u64, got: l1 });
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[i32] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn pulses(&self) -> usize {
        l1_norm(&self.coords) as usize
    }

    /// `sum p_i^2`.
    pub fn energy(&self) -> f64 {
        self.coords.iter().map(|&c| (c as f64) * (c as f64)).sum()
    }

    pub fn into_coords(self) -> Vec<i32> {
        self.coords
    }
}

fn l1_norm(coords: &[i32]) -> u64 {
    coords.iter().map(|c| c.unsigned_abs() as u64).sum()
}

/// Nearest point of `P(D, pulses)` to the direction of `v`.
///
/// The vector is scaled onto the L1 ball of radius `pulses` and rounded; the
/// pulse count is then repaired one unit at a time, always taking the change
/// that adds the least squared error against the scaled target (lowest index
/// on ties). Finally single-pulse moves between coordinates are applied while
/// they strictly raise the cosine to `v`, which is what the least-squares
/// amplitude fit downstream actually minimizes. The zero vector maps to
/// `(K, 0, ..., 0)`.
pub fn quantize_direction<T: Scalar>(v: &[T], pulses: usize) -> Result<PyramidPoint, CodecError> {
    let dim = v.len();
    if dim == 0 {
        return Err(CodecError::Empty);
    }
    if pulses == 0 {
        return Err(CodecError::ZeroPulses);
    }
    let x: Vec<f64> = v.iter().map(|&e| e.as_f64()).collect();
    if let Some(index) = x.iter().position(|e| !e.is_finite()) {
        return Err(CodecError::NonFinite { index });
    }
    let l1: f64 = x.iter().map(|e| e.abs()).sum();
    if l1 == 0.0 {
        let mut coords = vec![0; dim];
        coords[0] = pulses as i32;
        return Ok(PyramidPoint { coords });
    }

    let k = pulses as f64;
    let target: Vec<f64> = x.iter().map(|&e| k * e / l1).collect();
    let mut p: Vec<i64> = target.iter().map(|&t| round_half_away(t) as i64).collect();
    let sign_of = |t: f64| if t < 0.0 { -1 } else { 1 };

    let cap = 4 * dim;
    let mut steps = 0;
    loop {
        let total: i64 = p.iter().map(|c| c.abs()).sum();
        if total == pulses as i64 {
            break;
        }
        if steps == cap {
            return Err(CodecError::NoConvergence(cap));
        }
        steps += 1;
        // Growing |p_i| by one adds 1 + 2(|p_i| - |t_i|) squared error,
        // shrinking it adds 1 - 2(|p_i| - |t_i|).
        let grow = total < pulses as i64;
        let mut best: Option<(usize, f64)> = None;
        for (i, (&pi, &ti)) in p.iter().zip(&target).enumerate() {
            if !grow && pi == 0 {
                continue;
            }
            let gap = pi.abs() as f64 - ti.abs();
            let cost = if grow { 1.0 + 2.0 * gap } else { 1.0 - 2.0 * gap };
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((i, cost));
            }
        }
        let (i, _) = best.expect("a coordinate is always adjustable");
        let dir = if p[i] != 0 { p[i].signum() } else { sign_of(target[i]) };
        p[i] += if grow { dir } else { -dir };
    }

    refine_pulses(&x, &mut p);
    Ok(PyramidPoint { coords: p.into_iter().map(|c| c as i32).collect() })
}

/// Moves single pulses between coordinates while `<p, x> / |p|` strictly grows.
fn refine_pulses(x: &[f64], p: &mut [i64]) {
    let dim = p.len();
    if dim < 2 {
        return;
    }
    let mut dot: f64 = p.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum();
    let mut energy: f64 = p.iter().map(|&a| (a * a) as f64).sum();
    let dir = |pj: i64, xj: f64| -> i64 {
        if pj != 0 {
            pj.signum()
        } else if xj < 0.0 {
            -1
        } else {
            1
        }
    };

    for _ in 0..64 * dim {
        let current = dot / energy.sqrt();
        let mut best: Option<(usize, usize, f64, f64, f64)> = None;
        let mut best_score = current + 1e-12 * current.abs().max(f64::MIN_POSITIVE);
        for i in 0..dim {
            if p[i] == 0 {
                continue;
            }
            let si = p[i].signum();
            let dot_rm = dot - si as f64 * x[i];
            let energy_rm = energy - (2 * p[i].abs() - 1) as f64;
            for j in 0..dim {
                if j == i {
                    continue;
                }
                let sj = dir(p[j], x[j]);
                let d = dot_rm + sj as f64 * x[j];
                let e = energy_rm + (2 * p[j].abs() + 1) as f64;
                let score = d / e.sqrt();
                if score > best_score {
                    best_score = score;
                    best = Some((i, j, d, e, score));
                }
            }
        }
        let Some((i, j, d, e, _)) = best else { return };
        let sj = dir(p[j], x[j]);
        p[i] -= p[i].signum();
        p[j] += sj;
        dot = d;
        energy = e;
    }
}

/// Maps `p` to its index in `[0, N(D, K))`.
///
/// The run `sum_{j=1}^{|x_i|-1} N(d-1, k-j)` is taken in one step as
/// `V(d-1, k-1) - V(d-1, k-|x_i|)`.
pub fn encode(p: &PyramidPoint, table: &SizeTable) -> Result<CodeInteger, CodecError> {
    check_point(p, table)?;
    let dim = table.dim();
    let mut code = CodeInteger::zero();
    let mut k = table.pulses();
    for (i, &x) in p.coords.iter().enumerate() {
        if k == 0 {
            break;
        }
        let a = x.unsigned_abs() as usize;
        if a == 0 {
            continue;
        }
        let d = dim - i;
        code += table.n(d - 1, k);
        if a > 1 {
            let run = table
                .v(d - 1, k - 1)
                .checked_sub(table.v(d - 1, k - a))
                .expect("V is non-decreasing in k");
            code += &run.shift_left(1);
        }
        if x < 0 {
            code += table.n(d - 1, k - a);
        }
        k -= a;
    }
    Ok(code)
}

fn check_point(p: &PyramidPoint, table: &SizeTable) -> Result<(), CodecError> {
    if p.dim() != table.dim() {
        return Err(CodecError::DimensionMismatch { expected: table.dim(), got: p.dim() });
    }
    let l1 = l1_norm(&p.coords);
    if l1 != table.pulses() as u64 {
        return Err(CodecError::NormMismatch { expected: table.pulses() as u64, got: l1 });
    }
    Ok(())
}

/// Inverse of [`encode`].
///
/// The negative branch consumes the positive half of its block, which is the
/// step whose omission breaks decoding of points with a negative coordinate
/// before the last position.
pub fn decode(code: &CodeInteger, table: &SizeTable) -> Result<PyramidPoint, CodecError> {
    let count = table.code_count();
    if code >= count {
        return Err(CodecError::CodeOutOfRange { code: code.clone(), count: count.clone() });
    }
    let dim = table.dim();
    let mut rem = code.clone();
    let mut k = table.pulses();
    let mut coords = vec![0i32; dim];
    for (i, slot) in coords.iter_mut().enumerate() {
        if k == 0 {
            break;
        }
        let d = dim - i;
        let zeros = table.n(d - 1, k);
        if rem < *zeros {
            continue;
        }
        rem = rem.checked_sub(zeros).expect("checked above");
        let j = if k > LINEAR_MAGNITUDE_SCAN {
            magnitude_by_bisection(&mut rem, table, d - 1, k)
        } else {
            magnitude_by_scan(&mut rem, table, d - 1, k)
        }
        .ok_or_else(|| CodecError::CodeOutOfRange { code: code.clone(), count: count.clone() })?;
        let half = table.n(d - 1, k - j);
        if rem < *half {
            *slot = j as i32;
        } else {
            *slot = -(j as i32);
            rem = rem.checked_sub(half).expect("checked above");
        }
        k -= j;
    }
    debug_assert!(k == 0 && rem.is_zero());
    Ok(PyramidPoint { coords })
}

/// Above this many pulses, magnitudes are found by bisection over `V`.
const LINEAR_MAGNITUDE_SCAN: usize = 16;

/// Strips the blocks for magnitudes below the true one from `rem`; the sign
/// block of `2 N(rest, k - j)` codes is left in it.
fn magnitude_by_scan(rem: &mut CodeInteger, table: &SizeTable, rest: usize, k: usize) -> Option<usize> {
    for j in 1..=k {
        let block = table.n(rest, k - j).shift_left(1);
        if *rem < block {
            return Some(j);
        }
        *rem = rem.checked_sub(&block).expect("checked above");
    }
    None
}

/// Same result as the scan. Codes skipped before magnitude `j` number
/// `2 (V(rest, k-1) - V(rest, k-j))`, non-decreasing in `j`.
fn magnitude_by_bisection(rem: &mut CodeInteger, table: &SizeTable, rest: usize, k: usize) -> Option<usize> {
    let top = table.v(rest, k - 1);
    let skipped = |j: usize| top.checked_sub(table.v(rest, k - j)).expect("V is non-decreasing in k").shift_left(1);
    // Largest j in [1, k] with skipped(j) <= rem.
    let (mut lo, mut hi) = (1, k);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if skipped(mid) <= *rem {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    *rem = rem.checked_sub(&skipped(lo)).expect("checked above");
    (*rem < table.n(rest, k - lo).shift_left(1)).then_some(lo)
}

/// `p / |p|_2`.
pub fn to_sphere<T: Scalar>(p: &PyramidPoint) -> Vec<T> {
    let norm = p.energy().sqrt();
    p.coords.iter().map(|&c| T::of(c as f64 / norm)).collect()
}

/// Fixed-width codes packed LSB-first into bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    pub bits_per_group: usize,
    pub group_count: usize,
    pub bytes: Vec<u8>,
}

impl PackedCodes {
    /// `ceil(group_count * bits_per_group / 8)`.
    pub fn byte_len(bits_per_group: usize, group_count: usize) -> usize {
        (bits_per_group * group_count).div_ceil(8)
    }

    pub fn from_bytes(bits_per_group: usize, group_count: usize, bytes: Vec<u8>) -> Result<Self, CodecError> {
        if bits_per_group == 0 {
            return Err(CodecError::ZeroWidth);
        }
        let expected = Self::byte_len(bits_per_group, group_count);
        if bytes.len() != expected {
            return Err(CodecError::StreamLength { expected, got: bytes.len() });
        }
        Ok(Self { bits_per_group, group_count, bytes })
    }

    /// Code at position `index`.
    pub fn get(&self, index: usize) -> CodeInteger {
        let mut reader = BitReader::new(&self.bytes);
        reader.seek(index * self.bits_per_group);
        reader.read_code(self.bits_per_group)
    }
}

pub fn pack_codes(codes: &[CodeInteger], bits_per_group: usize) -> Result<PackedCodes, CodecError> {
    if bits_per_group == 0 {
        return Err(CodecError::ZeroWidth);
    }
    let mut writer = BitWriter::with_capacity_bits(codes.len() * bits_per_group);
    for (index, code) in codes.iter().enumerate() {
        let needed = code.bit_length();
        if needed > bits_per_group {
            return Err(CodecError::CodeTooWide { index, needed, budget: bits_per_group });
        }
        writer.write_code(code, bits_per_group);
    }
    Ok(PackedCodes { bits_per_group, group_count: codes.len(), bytes: writer.into_bytes() })
}

pub fn unpack_codes(packed: &PackedCodes) -> Vec<CodeInteger> {
    let mut reader = BitReader::new(&packed.bytes);
    (0..packed.group_count).map(|_| reader.read_code(packed.bits_per_group)).collect()
}

/// Appends LSB-first bit fields to a byte buffer.
#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity_bits(bits: usize) -> Self {
        Self { bytes: Vec::with_capacity(bits.div_ceil(8)), len: 0 }
    }

    /// Writes the low `count <= 64` bits of `value`.
    pub fn write_bits(&mut self, mut value: u64, mut count: usize) {
        debug_assert!(count <= 64);
        while count > 0 {
            let offset = self.len & 7;
            if offset == 0 {
                self.bytes.push(0);
            }
            let take = (8 - offset).min(count);
            let mask = (1u64 << take) - 1;
            *self.bytes.last_mut().unwrap() |= ((value & mask) << offset) as u8;
            value = value.checked_shr(take as u32).unwrap_or(0);
            count -= take;
            self.len += take;
        }
    }

    /// Writes the low `width` bits of `code`.
    pub fn write_code(&mut self, code: &CodeInteger, width: usize) {
        let mut start = 0;
        while start < width {
            let take = (width - start).min(64);
            self.write_bits(code.bits(start, take), take);
            start += take;
        }
    }

    /// Pads with zero bits to the next byte boundary.
    pub fn align(&mut self) {
        self.len = self.bytes.len() * 8;
    }

    pub fn bit_len(&self) -> usize {
        self.len
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// Reads LSB-first bit fields. Bits past the end read as zero.
#[derive(Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn seek(&mut self, bit: usize) {
        self.pos = bit;
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn align(&mut self) {
        self.pos = self.pos.div_ceil(8) * 8;
    }

    pub fn read_bits(&mut self, count: usize) -> u64 {
        debug_assert!(count <= 64);
        let mut out = 0u64;
        let mut filled = 0;
        while filled < count {
            let byte = self.bytes.get(self.pos >> 3).copied().unwrap_or(0) as u64;
            let offset = self.pos & 7;
            let take = (8 - offset).min(count - filled);
            out |= ((byte >> offset) & ((1 << take) - 1)) << filled;
            filled += take;
            self.pos += take;
        }
        out
    }

    pub fn read_code(&mut self, width: usize) -> CodeInteger {
        let mut limbs = Vec::with_capacity(width.div_ceil(64));
        let mut left = width;
        while left > 0 {
            let take = left.min(64);
            limbs.push(self.read_bits(take));
            left -= take;
        }
        CodeInteger::from_limbs(limbs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(c: &[i32]) -> PyramidPoint {
        PyramidPoint::new(c.to_vec(), c.iter().map(|x| x.unsigned_abs() as usize).sum()).unwrap()
    }

    fn code(v: u64) -> CodeInteger {
        CodeInteger::from(v)
    }

    #[test]
    fn one_dimensional_codes() {
        for k in 1..6 {
            let t = SizeTable::build(1, k);
            assert_eq!(encode(&pt(&[k as i32]), &t).unwrap(), code(0));
            assert_eq!(encode(&pt(&[-(k as i32)]), &t).unwrap(), code(1));
        }
    }

    #[test]
    fn two_dimensional_single_pulse_codes() {
        let t = SizeTable::build(2, 1);
        let expected = [([0, 1], 0), ([0, -1], 1), ([1, 0], 2), ([-1, 0], 3)];
        for (p, c) in expected {
            assert_eq!(encode(&pt(&p), &t).unwrap(), code(c));
            assert_eq!(decode(&code(c), &t).unwrap(), pt(&p));
        }
    }

    #[test]
    fn negative_leading_coordinate_roundtrips() {
        let t = SizeTable::build(3, 4);
        for p in [[-1, 0, 3], [-2, 1, -1], [0, -3, 1], [-4, 0, 0]] {
            let c = encode(&pt(&p), &t).unwrap();
            assert_eq!(decode(&c, &t).unwrap(), pt(&p));
        }
    }

    #[test]
    fn encode_rejects_wrong_norm_and_dim() {
        let t = SizeTable::build(2, 3);
        let bad = PyramidPoint { coords: vec![1, 1] };
        assert!(matches!(encode(&bad, &t), Err(CodecError::NormMismatch { .. })));
        let bad = PyramidPoint { coords: vec![1, 1, 1] };
        assert!(matches!(encode(&bad, &t), Err(CodecError::DimensionMismatch { .. })));
    }

    #[test]
    fn decode_rejects_out_of_range() {
        let t = SizeTable::build(2, 7);
        assert!(decode(&code(27), &t).is_ok());
        assert!(matches!(decode(&code(28), &t), Err(CodecError::CodeOutOfRange { .. })));
    }

    #[test]
    fn quantize_fixed_points_and_simple_cases() {
        let p = quantize_direction(&[2.0f64, -1.0, 0.0, 3.0], 6).unwrap();
        assert_eq!(p.coords(), &[2, -1, 0, 3]);
        let p = quantize_direction(&[0.6f64, 0.4], 1).unwrap();
        assert_eq!(p.coords(), &[1, 0]);
        let p = quantize_direction(&[0.0f32; 5], 3).unwrap();
        assert_eq!(p.coords(), &[3, 0, 0, 0, 0]);
    }

    #[test]
    fn quantize_adversarial_inputs_hit_the_pyramid() {
        let inputs: Vec<Vec<f64>> = vec![
            vec![1.0; 7],
            vec![-1.0; 7],
            vec![0.0, 0.0, 5.0, 0.0],
            vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0],
            vec![1e-300, -1e-300, 1e-300],
            vec![1e300, 1e300],
            vec![0.5, 0.5, 0.5, 0.5],
        ];
        for v in &inputs {
            for k in 1..12 {
                let p = quantize_direction(v, k).unwrap();
                assert_eq!(p.pulses(), k, "{v:?} k={k}");
                assert_eq!(p.dim(), v.len());
            }
        }
    }

    #[test]
    fn quantize_rejects_bad_input() {
        assert_eq!(quantize_direction::<f64>(&[], 3), Err(CodecError::Empty));
        assert_eq!(quantize_direction(&[1.0f64], 0), Err(CodecError::ZeroPulses));
        assert_eq!(
            quantize_direction(&[1.0f64, f64::NAN], 2),
            Err(CodecError::NonFinite { index: 1 })
        );
    }

    #[test]
    fn sphere_projection() {
        let s: Vec<f64> = to_sphere(&pt(&[4, 0, 0]));
        assert_eq!(s, vec![1.0, 0.0, 0.0]);
        let s: Vec<f64> = to_sphere(&pt(&[1, 1]));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s[0] - h).abs() < 1e-15 && (s[1] - h).abs() < 1e-15);
    }

    #[test]
    fn pack_layout() {
        let packed = pack_codes(&[code(3), code(17)], 5).unwrap();
        assert_eq!(packed.bytes, vec![0x23, 0x02]);
        assert_eq!(unpack_codes(&packed), vec![code(3), code(17)]);
        assert_eq!(packed.get(1), code(17));
        assert!(pack_codes(&[], 7).unwrap().bytes.is_empty());
    }

    #[test]
    fn pack_rejects_wide_code() {
        let err = pack_codes(&[code(1), code(32)], 5).unwrap_err();
        assert_eq!(err, CodecError::CodeTooWide { index: 1, needed: 6, budget: 5 });
        assert_eq!(pack_codes(&[code(0)], 0).unwrap_err(), CodecError::ZeroWidth);
    }

    #[test]
    fn packed_length_is_checked() {
        assert!(PackedCodes::from_bytes(5, 2, vec![0, 0]).is_ok());
        assert_eq!(
            PackedCodes::from_bytes(5, 2, vec![0, 0, 0]).unwrap_err(),
            CodecError::StreamLength { expected: 2, got: 3 }
        );
    }

    #[test]
    fn wide_codes_cross_limb_boundaries() {
        let big = CodeInteger::from_limbs(vec![0x0123_4567_89ab_cdef, 0xfedc_ba98_7654_3210, 0x5]);
        let codes = vec![code(1), big.clone(), code(0), big.clone()];
        let packed = pack_codes(&codes, 131).unwrap();
        assert_eq!(packed.bytes.len(), (4 * 131usize).div_ceil(8));
        assert_eq!(unpack_codes(&packed), codes);
    }

    #[test]
    fn bisection_matches_scan() {
        let table = SizeTable::build(3, 40);
        for rest in 0..=2 {
            for k in 1..=40 {
                let total = table.n(rest + 1, k).checked_sub(table.n(rest, k)).unwrap().to_u64().unwrap();
                for r in 0..total {
                    let (mut a, mut b) = (code(r), code(r));
                    let ja = magnitude_by_scan(&mut a, &table, rest, k);
                    let jb = magnitude_by_bisection(&mut b, &table, rest, k);
                    assert_eq!((ja, &a), (jb, &b), "rest={rest} k={k} r={r}");
                }
            }
        }
        let n = table.code_count().to_u64().unwrap();
        for c in 0..n {
            assert_eq!(encode(&decode(&code(c), &table).unwrap(), &table).unwrap(), code(c));
        }
    }
}
