//! Layer quantization: coherence rotation, per-group direction and amplitude
//! quantization, Hessian-aware error feedback, code packing, and the inverse.
//!
//! Arithmetic runs in `f64` whatever the element type of the input matrix.

use rayon::prelude::*;
use thiserror::Error;

use crate::amplitude::{self, AmplitudeCodebook, AmplitudeError, AmplitudeRecord, BetaParams};
use crate::bignum::CodeInteger;
use crate::codec::{self, CodecError, PackedCodes, PyramidPoint};
use crate::coherence::{CoherenceError, CoherencePair};
use crate::lattice::{self, LatticeError, SizeTable};
use crate::matrix::{DenseMatrix, MatrixError};
use crate::scalar::{round_half_away, Scalar};
use crate::Matrix;

/// Stored width of full-precision amplitudes and row norms (`f32`).
pub const STORED_FLOAT_BITS: u32 = 32;

/// Width at which full-precision amplitudes are counted when reporting BPW
/// the way model-dtype amplitudes are usually counted.
pub const REPORTED_FLOAT_BITS: u32 = 16;

pub const DEFAULT_DAMPENING: f64 = 0.01;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("matrix has {cols} columns, not a multiple of groupsize {groupsize}")]
    Ragged { cols: usize, groupsize: usize },
    #[error("hessian is {got}x{got}, layer has {expected} input columns")]
    HessianShape { expected: usize, got: usize },
    #[error("hessian feedback enabled but no hessian supplied")]
    MissingHessian,
    #[error("dampened hessian is not positive definite (dampening {dampening}); increase --dampening")]
    NotPositiveDefinite { dampening: f64 },
    #[error("no calibration samples")]
    NoSamples,
    #[error("sample has {got} features, expected {expected}")]
    SampleShape { expected: usize, got: usize },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Amplitude(#[from] AmplitudeError),
    #[error(transparent)]
    Coherence(#[from] CoherenceError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Quantizer settings for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PvqConfig {
    /// Group size `D`.
    pub groupsize: usize,
    /// Direction code width per group.
    pub bits_per_group: usize,
    /// Amplitude bits per group; 0 keeps amplitudes at full precision.
    pub amplitude_bits: u32,
    /// Seed of the Hadamard rotation, `None` to skip coherence processing.
    pub coherence_seed: Option<u64>,
    /// Propagate each group's error into later columns through the Hessian.
    pub hessian_feedback: bool,
    /// Relative diagonal dampening `lambda` of the Hessian.
    pub dampening: f64,
}

impl PvqConfig {
    pub fn new(groupsize: usize, bits_per_group: usize) -> Self {
        Self {
            groupsize,
            bits_per_group,
            amplitude_bits: 0,
            coherence_seed: None,
            hessian_feedback: false,
            dampening: DEFAULT_DAMPENING,
        }
    }

    /// Builds from a per-weight direction budget, which must give an integer
    /// number of bits per group.
    pub fn from_direction_bits(groupsize: usize, direction_bits: f64) -> Result<Self, PipelineError> {
        let bits = direction_bits * groupsize as f64;
        let rounded = bits.round();
        if !(direction_bits > 0.0) || (bits - rounded).abs() > 1e-9 {
            return Err(PipelineError::Config(format!(
                "direction bits {direction_bits} x groupsize {groupsize} = {bits} is not a whole number of bits per group"
            )));
        }
        Ok(Self::new(groupsize, rounded as usize))
    }

    pub fn with_amplitude_bits(mut self, bits: u32) -> Self {
        self.amplitude_bits = bits;
        self
    }

    pub fn with_coherence(mut self, seed: u64) -> Self {
        self.coherence_seed = Some(seed);
        self
    }

    pub fn with_hessian_feedback(mut self, on: bool) -> Self {
        self.hessian_feedback = on;
        self
    }

    pub fn with_dampening(mut self, lambda: f64) -> Self {
        self.dampening = lambda;
        self
    }

    /// Largest pulse count whose codes fit `bits_per_group`.
    pub fn pulses(&self) -> Result<usize, PipelineError> {
        if self.groupsize < 2 {
            return Err(PipelineError::Config(format!("groupsize must be at least 2, got {}", self.groupsize)));
        }
        if self.bits_per_group == 0 {
            return Err(PipelineError::Config("bits per group must be at least 1".into()));
        }
        let k = lattice::choose_pulses(self.groupsize, self.bits_per_group)?;
        if k == 0 {
            return Err(PipelineError::Config(format!(
                "{} bits cannot hold even one pulse in dimension {} (needs {} codes)",
                self.bits_per_group,
                self.groupsize,
                2 * self.groupsize
            )));
        }
        Ok(k)
    }

    /// Direction bits per weight, `bits_per_group / D`.
    pub fn direction_bpw(&self) -> f64 {
        self.bits_per_group as f64 / self.groupsize as f64
    }

    /// Direction plus amplitude bits per weight, with full-precision
    /// amplitudes counted at `full_amplitude_bits`. Per-row norms are excluded.
    pub fn nominal_bpw(&self, full_amplitude_bits: u32) -> f64 {
        let amp = if self.amplitude_bits > 0 { self.amplitude_bits } else { full_amplitude_bits };
        self.direction_bpw() + amp as f64 / self.groupsize as f64
    }

    fn validate(&self) -> Result<usize, PipelineError> {
        let k = self.pulses()?;
        if self.amplitude_bits > amplitude::MAX_AMPLITUDE_BITS {
            return Err(PipelineError::Config(format!(
                "amplitude bits must be at most {}, got {}",
                amplitude::MAX_AMPLITUDE_BITS,
                self.amplitude_bits
            )));
        }
        if !(self.dampening >= 0.0 && self.dampening.is_finite()) {
            return Err(PipelineError::Config(format!("dampening must be >= 0, got {}", self.dampening)));
        }
        Ok(k)
    }
}

/// Empirical input second moment `H = E[x x^T]` and its dampened factor.
#[derive(Debug, Clone)]
pub struct HessianState {
    gram: Matrix,
    dampened: Matrix,
    factor: Matrix,
    samples: usize,
    dampening: f64,
}

impl HessianState {
    /// Wraps a symmetric second-moment matrix, adding
    /// `dampening * mean(diag H) * I` before factoring.
    pub fn from_gram(gram: Matrix, samples: usize, dampening: f64) -> Result<Self, PipelineError> {
        let n = gram.rows();
        if gram.cols() != n {
            return Err(MatrixError::NotSquare(gram.rows(), gram.cols()).into());
        }
        let mean_diag = (0..n).map(|i| gram.get(i, i)).sum::<f64>() / n.max(1) as f64;
        let mut dampened = gram.clone();
        for i in 0..n {
            dampened.set(i, i, gram.get(i, i) + dampening * mean_diag);
        }
        let factor = dampened.cholesky().map_err(|_| PipelineError::NotPositiveDefinite { dampening })?;
        Ok(Self { gram, dampened, factor, samples, dampening })
    }

    /// Undampened `H`.
    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn dampened(&self) -> &Matrix {
        &self.dampened
    }

    /// Lower Cholesky factor of the dampened `H`.
    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn dampening(&self) -> f64 {
        self.dampening
    }

    pub fn dim(&self) -> usize {
        self.gram.rows()
    }
}

/// Streaming accumulation of `sum x x^T`.
#[derive(Debug, Clone)]
pub struct HessianAccumulator {
    sum: Matrix,
    count: usize,
}

impl HessianAccumulator {
    pub fn new(features: usize) -> Self {
        Self { sum: Matrix::zeros(features, features), count: 0 }
    }

    pub fn push<T: Scalar>(&mut self, x: &[T]) -> Result<(), PipelineError> {
        let n = self.sum.rows();
        if x.len() != n {
            return Err(PipelineError::SampleShape { expected: n, got: x.len() });
        }
        let x: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &xj) in self.sum.row_mut(i).iter_mut().zip(&x) {
                *o += xi * xj;
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(self, dampening: f64) -> Result<HessianState, PipelineError> {
        if self.count == 0 {
            return Err(PipelineError::NoSamples);
        }
        let scale = 1.0 / self.count as f64;
        let n = self.sum.rows();
        // Average the two triangles so H is exactly symmetric.
        let gram = Matrix::from_fn(n, n, |i, j| 0.5 * (self.sum.get(i, j) + self.sum.get(j, i)) * scale);
        HessianState::from_gram(gram, self.count, dampening)
    }
}

/// `H = (1/M) sum_m x_m x_m^T` over the rows of `activations` (M x C).
pub fn estimate_hessian<T: Scalar>(activations: &DenseMatrix<T>, dampening: f64) -> Result<HessianState, PipelineError> {
    let mut acc = HessianAccumulator::new(activations.cols());
    for row in activations.rows_iter() {
        acc.push(row)?;
    }
    acc.finish(dampening)
}

/// Least-squares scale of `p` against `w`, `<p, w> / <p, p>`, clamped at 0.
pub fn optimal_scale(w: &[f64], p: &PyramidPoint) -> f64 {
    let dot: f64 = p.coords().iter().zip(w).map(|(&c, &x)| c as f64 * x).sum();
    (dot / p.energy()).max(0.0)
}

/// `Tr((W - W') H (W - W')^T)`.
pub fn proxy_loss<T: Scalar>(w: &DenseMatrix<T>, w_hat: &DenseMatrix<T>, h: &Matrix) -> Result<f64, PipelineError> {
    let diff = w.sub(w_hat)?.cast::<f64>();
    if h.rows() != diff.cols() || h.cols() != diff.cols() {
        return Err(PipelineError::HessianShape { expected: diff.cols(), got: h.rows() });
    }
    Ok(diff
        .as_slice()
        .par_chunks_exact(diff.cols().max(1))
        .map(|d| {
            let mut total = 0.0;
            for (i, &di) in d.iter().enumerate() {
                if di == 0.0 {
                    continue;
                }
                let hd: f64 = h.row(i).iter().zip(d).map(|(&a, &b)| a * b).sum();
                total += di * hd;
            }
            total
        })
        .sum())
}

/// Per-group amplitudes as stored.
#[derive(Debug, Clone, PartialEq)]
pub enum AmplitudePayload {
    /// `N x G` amplitudes in `f32`.
    Full(Vec<f32>),
    /// One record per row; `row_norm_sq` is held at `f32` precision.
    Quantized(Vec<AmplitudeRecord>),
}

/// A quantized `N x (G D)` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub rows: usize,
    pub groups: usize,
    pub config: PvqConfig,
    pub pulses: usize,
    pub hessian_used: bool,
    pub codes: PackedCodes,
    pub amplitudes: AmplitudePayload,
}

impl QuantizedTensor {
    pub fn cols(&self) -> usize {
        self.groups * self.config.groupsize
    }

    pub fn weight_count(&self) -> usize {
        self.rows * self.cols()
    }

    /// Direction payload bytes, `ceil(N G bits_per_group / 8)`.
    pub fn direction_bytes(&self) -> usize {
        PackedCodes::byte_len(self.config.bits_per_group, self.rows * self.groups)
    }

    /// Amplitude payload bytes.
    pub fn amplitude_bytes(&self) -> usize {
        amplitude_payload_len(self.rows, self.groups, self.config.amplitude_bits)
    }

    /// Direction and amplitude bits per weight, full amplitudes counted at `full_amplitude_bits`.
    pub fn nominal_bpw(&self, full_amplitude_bits: u32) -> f64 {
        self.config.nominal_bpw(full_amplitude_bits)
    }
}

/// Bytes of the amplitude section for an `N x G` layer.
pub fn amplitude_payload_len(rows: usize, groups: usize, amplitude_bits: u32) -> usize {
    if amplitude_bits == 0 {
        rows * groups * 4
    } else {
        rows * ((groups * amplitude_bits as usize).div_ceil(8) + 4)
    }
}

struct Prepared {
    k: usize,
    groups: usize,
    work: Matrix,
    feedback: Option<Matrix>,
}

fn prepare<T: Scalar>(
    w: &DenseMatrix<T>,
    config: &PvqConfig,
    hessian: Option<&HessianState>,
) -> Result<Prepared, PipelineError> {
    let k = config.validate()?;
    let (rows, cols) = w.shape();
    let d = config.groupsize;
    if cols == 0 || cols % d != 0 {
        return Err(PipelineError::Ragged { cols, groupsize: d });
    }
    let groups = cols / d;
    if config.amplitude_bits > 0 && groups < 2 {
        return Err(AmplitudeError::TooFewGroups(groups).into());
    }
    let pair = match config.coherence_seed {
        Some(seed) => Some(CoherencePair::from_seed(rows, cols, seed)?),
        None => None,
    };
    let mut work = w.cast::<f64>();
    if let Some(pair) = &pair {
        work = pair.rotate(&work)?;
    }
    let feedback = if config.hessian_feedback {
        let h = hessian.ok_or(PipelineError::MissingHessian)?;
        if h.dim() != cols {
            return Err(PipelineError::HessianShape { expected: cols, got: h.dim() });
        }
        let mut damp = h.dampened().clone();
        if let Some(pair) = &pair {
            damp = crate::coherence::rotate_gram(&damp, &pair.cols)?;
        }
        Some(inverse_upper_factor(&damp, h.dampening())?)
    } else {
        None
    };
    Ok(Prepared { k, groups, work, feedback })
}

/// Upper `U` with `H^{-1} = U^T U`.
fn inverse_upper_factor(h: &Matrix, dampening: f64) -> Result<Matrix, PipelineError> {
    let npd = |_| PipelineError::NotPositiveDefinite { dampening };
    let inv = h.spd_inverse().map_err(npd)?;
    Ok(inv.cholesky().map_err(npd)?.transpose())
}

/// Quantizes a layer.
///
/// Groups are processed left to right. With feedback, the residual
/// `E_g = W_g - s_g P_g` of group `g` is pushed into the later columns as
/// `W_rest -= E_g U_gg^{-1} U_{g,rest}`, where `U` is the upper Cholesky factor
/// of the inverse dampened Hessian; this equals
/// `E_g [H^{-1}]_{gg}^{-1} [H^{-1}]_{g,rest}` restricted to unquantized columns.
pub fn quantize_layer<T: Scalar>(
    w: &DenseMatrix<T>,
    config: &PvqConfig,
    hessian: Option<&HessianState>,
) -> Result<QuantizedTensor, PipelineError> {
    let Prepared { k, groups, mut work, feedback } = prepare(w, config, hessian)?;
    let (rows, cols) = work.shape();
    let d = config.groupsize;

    let mut points: Vec<Vec<PyramidPoint>> = vec![Vec::with_capacity(groups); rows];
    let mut amps = Matrix::zeros(rows, groups);

    for g in 0..groups {
        let lo = g * d;
        let hi = lo + d;
        let step: Vec<(PyramidPoint, f64)> = work
            .as_slice()
            .par_chunks_exact(cols)
            .map(|row| {
                let group = &row[lo..hi];
                let p = codec::quantize_direction(group, k)?;
                let s = optimal_scale(group, &p);
                Ok((p, s))
            })
            .collect::<Result<_, CodecError>>()?;

        if let Some(u) = &feedback {
            if hi < cols {
                work.as_mut_slice()
                    .par_chunks_exact_mut(cols)
                    .zip(&step)
                    .for_each(|(row, (p, s))| propagate_error(row, p, *s, u, lo, hi));
            }
        }

        for (r, (p, s)) in step.into_iter().enumerate() {
            amps.set(r, g, s * p.energy().sqrt());
            points[r].push(p);
        }
    }

    let amplitudes = if config.amplitude_bits > 0 {
        let records = amps
            .as_slice()
            .par_chunks_exact(groups)
            .map(|row| {
                let mut rec = amplitude::quantize_row_amplitudes(row, config.amplitude_bits, d)?;
                rec.row_norm_sq = rec.row_norm_sq as f32 as f64;
                Ok(rec)
            })
            .collect::<Result<_, AmplitudeError>>()?;
        AmplitudePayload::Quantized(records)
    } else {
        AmplitudePayload::Full(amps.as_slice().iter().map(|&a| a as f32).collect())
    };

    let table = SizeTable::cached(d, k);
    let codes: Vec<CodeInteger> = points
        .par_iter()
        .map(|row| row.iter().map(|p| codec::encode(p, &table)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    let codes = codec::pack_codes(&codes, config.bits_per_group)?;

    Ok(QuantizedTensor {
        rows,
        groups,
        config: config.clone(),
        pulses: k,
        hessian_used: feedback.is_some(),
        codes,
        amplitudes,
    })
}

/// `row[hi..] -= x U[lo..hi, hi..]` with `x U[lo..hi, lo..hi] = e`.
fn propagate_error(row: &mut [f64], p: &PyramidPoint, s: f64, u: &Matrix, lo: usize, hi: usize) {
    let d = hi - lo;
    let e: Vec<f64> = (0..d).map(|i| row[lo + i] - s * p.coords()[i] as f64).collect();
    let mut x = vec![0.0; d];
    for j in 0..d {
        let mut acc = e[j];
        for i in 0..j {
            acc -= x[i] * u.get(lo + i, lo + j);
        }
        x[j] = acc / u.get(lo + j, lo + j);
    }
    let (_, rest) = row.split_at_mut(hi);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let urow = &u.row(lo + i)[hi..];
        for (r, &uv) in rest.iter_mut().zip(urow) {
            *r -= xi * uv;
        }
    }
}

/// Per-group amplitudes in the unit-sphere convention, row-major `N x G`.
pub fn group_amplitudes(qt: &QuantizedTensor) -> Result<Vec<f64>, PipelineError> {
    match &qt.amplitudes {
        AmplitudePayload::Full(a) => Ok(a.iter().map(|&v| v as f64).collect()),
        AmplitudePayload::Quantized(records) => {
            let bits = qt.config.amplitude_bits;
            let d = qt.config.groupsize;
            // Tabulate only when there are more amplitudes than levels.
            if bits <= AmplitudeCodebook::MAX_BITS && (1usize << bits) <= qt.rows * qt.groups {
                let book = AmplitudeCodebook::new(BetaParams::for_groups(d, qt.groups)?, bits)?;
                let rows = records.iter().map(|r| book.dequantize_row(r)).collect::<Result<Vec<_>, _>>()?;
                Ok(rows.concat())
            } else {
                let rows = records
                    .iter()
                    .map(|r| amplitude::dequantize_row_amplitudes(r, bits, d))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(rows.concat())
            }
        }
    }
}

/// Reconstructs `N x C` weights: amplitude times unit codeword per group,
/// then the inverse rotation.
pub fn dequantize_layer<T: Scalar>(qt: &QuantizedTensor) -> Result<DenseMatrix<T>, PipelineError> {
    let d = qt.config.groupsize;
    let cols = qt.cols();
    let table = SizeTable::cached(d, qt.pulses);
    let amps = group_amplitudes(qt)?;
    let codes = codec::unpack_codes(&qt.codes);
    let mut out = Matrix::zeros(qt.rows, cols);
    out.as_mut_slice()
        .par_chunks_exact_mut(cols.max(1))
        .enumerate()
        .try_for_each(|(r, row)| -> Result<(), PipelineError> {
            for g in 0..qt.groups {
                let idx = r * qt.groups + g;
                let p = codec::decode(&codes[idx], &table)?;
                let unit: Vec<f64> = codec::to_sphere(&p);
                for (o, u) in row[g * d..(g + 1) * d].iter_mut().zip(unit) {
                    *o = amps[idx] * u;
                }
            }
            Ok(())
        })?;
    if let Some(seed) = qt.config.coherence_seed {
        out = CoherencePair::from_seed(qt.rows, cols, seed)?.unrotate(&out)?;
    }
    Ok(out.cast())
}

/// Search-free PVQ of an activation vector with full-precision amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCodes {
    pub groupsize: usize,
    pub pulses: usize,
    pub codes: PackedCodes,
    pub amplitudes: Vec<f64>,
}

pub fn quantize_activations<T: Scalar>(
    x: &[T],
    groupsize: usize,
    bits_per_group: usize,
) -> Result<ActivationCodes, PipelineError> {
    let config = PvqConfig::new(groupsize, bits_per_group);
    let k = config.pulses()?;
    if x.is_empty() || !x.len().is_multiple_of(groupsize) {
        return Err(PipelineError::Ragged { cols: x.len(), groupsize });
    }
    let table = SizeTable::cached(groupsize, k);
    let mut codes = Vec::with_capacity(x.len() / groupsize);
    let mut amplitudes = Vec::with_capacity(x.len() / groupsize);
    for group in x.chunks_exact(groupsize) {
        let g: Vec<f64> = group.iter().map(|v| v.as_f64()).collect();
        let p = codec::quantize_direction(&g, k)?;
        amplitudes.push(optimal_scale(&g, &p) * p.energy().sqrt());
        codes.push(codec::encode(&p, &table)?);
    }
    Ok(ActivationCodes { groupsize, pulses: k, codes: codec::pack_codes(&codes, bits_per_group)?, amplitudes })
}

pub fn dequantize_activations<T: Scalar>(a: &ActivationCodes) -> Result<Vec<T>, PipelineError> {
    let table = SizeTable::cached(a.groupsize, a.pulses);
    let mut out = Vec::with_capacity(a.amplitudes.len() * a.groupsize);
    for (code, &amp) in codec::unpack_codes(&a.codes).iter().zip(&a.amplitudes) {
        let p = codec::decode(code, &table)?;
        out.extend(codec::to_sphere::<f64>(&p).into_iter().map(|u| T::of(amp * u)));
    }
    Ok(out)
}

/// Symmetric round-to-nearest of one group: `scale = max|x| / (2^(bits-1) - 1)`.
pub fn rtn_group<T: Scalar>(x: &[T], bits: u32) -> Vec<T> {
    let qmax = ((1i64 << (bits - 1)) - 1) as f64;
    let max = x.iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
    if max == 0.0 {
        return vec![T::zero(); x.len()];
    }
    let scale = max / qmax;
    x.iter()
        .map(|v| T::of(round_half_away(v.as_f64() / scale).clamp(-qmax, qmax) * scale))
        .collect()
}

/// Round-to-nearest baseline over row groups of `groupsize`; returns the
/// dequantized matrix.
pub fn rtn_quantize<T: Scalar>(w: &DenseMatrix<T>, groupsize: usize, bits: u32) -> Result<DenseMatrix<T>, PipelineError> {
    if bits < 2 {
        return Err(PipelineError::Config(format!("RTN needs at least 2 bits, got {bits}")));
    }
    if groupsize == 0 || !w.cols().is_multiple_of(groupsize) {
        return Err(PipelineError::Ragged { cols: w.cols(), groupsize });
    }
    let mut out = w.clone();
    for chunk in out.as_mut_slice().chunks_exact_mut(groupsize) {
        let q = rtn_group(chunk, bits);
        chunk.copy_from_slice(&q);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bpw_anchors() {
        let c = PvqConfig::from_direction_bits(128, 3.0).unwrap();
        assert_eq!(c.bits_per_group, 384);
        assert_eq!(c.nominal_bpw(REPORTED_FLOAT_BITS), 3.125);
        let c = PvqConfig::from_direction_bits(16, 3.0).unwrap().with_amplitude_bits(4);
        assert_eq!(c.nominal_bpw(REPORTED_FLOAT_BITS), 3.25);
        assert_eq!(PvqConfig::new(16, 40).direction_bpw(), 2.5);
    }

    #[test]
    fn fractional_bits_per_group_rejected() {
        assert!(PvqConfig::from_direction_bits(16, 2.5).is_ok());
        assert!(matches!(PvqConfig::from_direction_bits(16, 2.51), Err(PipelineError::Config(_))));
        assert!(matches!(PvqConfig::from_direction_bits(16, 0.0), Err(PipelineError::Config(_))));
    }

    #[test]
    fn config_without_pulses_rejected() {
        assert!(matches!(PvqConfig::new(8, 3).pulses(), Err(PipelineError::Config(_))));
        assert!(matches!(PvqConfig::new(1, 8).pulses(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn scale_examples() {
        let p = PyramidPoint::new(vec![2, -1, 0], 3).unwrap();
        assert!((optimal_scale(&[2.0, -1.0, 0.0], &p) - 1.0).abs() < 1e-15);
        assert!((optimal_scale(&[5.0, -2.5, 0.0], &p) - 2.5).abs() < 1e-15);
        assert_eq!(optimal_scale(&[-2.0, 1.0, 0.0], &p), 0.0);
    }

    #[test]
    fn one_hot_samples_give_scaled_identity() {
        let c = 4;
        let acts = Matrix::from_fn(8, c, |i, j| if i % c == j { 1.0 } else { 0.0 });
        let h = estimate_hessian(&acts, 0.0).unwrap();
        for i in 0..c {
            for j in 0..c {
                let expect = if i == j { 0.25 } else { 0.0 };
                assert_eq!(h.gram().get(i, j), expect);
            }
        }
    }

    #[test]
    fn empty_and_mismatched_samples() {
        assert!(matches!(HessianAccumulator::new(3).finish(0.01), Err(PipelineError::NoSamples)));
        let mut acc = HessianAccumulator::new(3);
        assert!(matches!(acc.push(&[1.0f64, 2.0]), Err(PipelineError::SampleShape { expected: 3, got: 2 })));
    }

    #[test]
    fn zero_hessian_cannot_be_dampened() {
        let err = HessianState::from_gram(Matrix::zeros(3, 3), 1, 0.01).unwrap_err();
        assert!(matches!(err, PipelineError::NotPositiveDefinite { .. }));
    }

    #[test]
    fn rtn_example() {
        let out = rtn_group(&[1.0f64, -0.5, 0.25], 2);
        assert_eq!(out, vec![1.0, -1.0, 0.0]);
        let grid = Matrix::new(1, 4, vec![0.75, -0.25, 0.5, 0.0]).unwrap();
        assert_eq!(rtn_quantize(&grid, 4, 3).unwrap(), grid);
        assert!(rtn_quantize(&grid, 3, 3).is_err());
        assert!(rtn_quantize(&grid, 4, 1).is_err());
    }

    #[test]
    fn zero_matrix_roundtrips_exactly() {
        let w = Matrix::zeros(4, 16);
        for amp_bits in [0, 3] {
            let cfg = PvqConfig::new(8, 16).with_amplitude_bits(amp_bits).with_coherence(5);
            let qt = quantize_layer(&w, &cfg, None).unwrap();
            let back: Matrix = dequantize_layer(&qt).unwrap();
            assert!(back.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn missing_or_misshapen_hessian() {
        let w = Matrix::zeros(2, 8);
        let cfg = PvqConfig::new(4, 8).with_hessian_feedback(true);
        assert!(matches!(quantize_layer(&w, &cfg, None), Err(PipelineError::MissingHessian)));
        let h = HessianState::from_gram(Matrix::identity(4), 1, 0.01).unwrap();
        assert!(matches!(quantize_layer(&w, &cfg, Some(&h)), Err(PipelineError::HessianShape { .. })));
    }

    #[test]
    fn ragged_and_non_pow2_shapes() {
        let w = Matrix::zeros(2, 10);
        assert!(matches!(quantize_layer(&w, &PvqConfig::new(4, 8), None), Err(PipelineError::Ragged { .. })));
        let w = Matrix::zeros(3, 8);
        assert!(matches!(
            quantize_layer(&w, &PvqConfig::new(4, 8).with_coherence(1), None),
            Err(PipelineError::Coherence(CoherenceError::NotPowerOfTwo(3)))
        ));
        let w = Matrix::zeros(2, 4);
        assert!(matches!(
            quantize_layer(&w, &PvqConfig::new(4, 8).with_amplitude_bits(2), None),
            Err(PipelineError::Amplitude(AmplitudeError::TooFewGroups(1)))
        ));
    }

    #[test]
    fn activation_zero_vector() {
        let a = quantize_activations(&[0.0f32; 16], 8, 16).unwrap();
        let back: Vec<f32> = dequantize_activations(&a).unwrap();
        assert!(back.iter().all(|&v| v == 0.0));
    }
}
