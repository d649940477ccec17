//! On-disk containers.
//!
//! `DTF1` holds a dense row-major tensor:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `DTF1` |
//! | 1 | dtype (0 = f32, 1 = f64) |
//! | 1 | ndim |
//! | 8 x ndim | dims, u64 |
//! | .. | payload |
//!
//! `PVQT` holds a quantized layer: a 45-byte header (magic, version u16,
//! flags u16, N u64, G u64, D u32, K u32, bits_per_group u32,
//! amplitude_bits u8, seed u64), the packed direction codes, then the
//! amplitudes. Quantized amplitudes are stored per row as `G` levels packed
//! LSB-first, padded to a byte, followed by the `f32` squared row norm;
//! otherwise `N x G` `f32` values follow. Everything is little-endian.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::amplitude::AmplitudeRecord;
use crate::codec::{BitReader, BitWriter, PackedCodes};
use crate::matrix::DenseMatrix;
use crate::pipeline::{amplitude_payload_len, AmplitudePayload, PvqConfig, QuantizedTensor, DEFAULT_DAMPENING};
use crate::scalar::Scalar;

pub const DTF_MAGIC: [u8; 4] = *b"DTF1";
pub const PVQT_MAGIC: [u8; 4] = *b"PVQT";
pub const PVQT_VERSION: u16 = 1;
pub const PVQT_HEADER_LEN: usize = 45;

pub const FLAG_COHERENCE: u16 = 1;
pub const FLAG_HESSIAN: u16 = 1 << 1;
pub const FLAG_AMPLITUDES_QUANTIZED: u16 = 1 << 2;
const KNOWN_FLAGS: u16 = FLAG_COHERENCE | FLAG_HESSIAN | FLAG_AMPLITUDES_QUANTIZED;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("bad magic at offset 0: expected {expected:?}, found {found:?}")]
    Magic { expected: String, found: String },
    #[error("truncated {field} at offset {offset}: need {expected} bytes, have {actual}")]
    Truncated { field: &'static str, offset: usize, expected: usize, actual: usize },
    #[error("file length {actual} bytes, expected {expected} from header")]
    Length { expected: usize, actual: usize },
    #[error("invalid {field} at offset {offset}: {reason}")]
    Field { field: &'static str, offset: usize, reason: String },
    #[error("{0}")]
    Shape(String),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(file_err(path))?;
    tmp.write_all(bytes).map_err(file_err(path))?;
    tmp.as_file().sync_all().map_err(file_err(path))?;
    tmp.persist(path).map_err(|e| IoError::File { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(file_err(path))
}

/// Little-endian cursor that reports the field and offset of short reads.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], IoError> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(IoError::Truncated { field, offset: self.pos, expected: n, actual: left });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const L: usize>(&mut self, field: &'static str) -> Result<[u8; L], IoError> {
        Ok(self.take(L, field)?.try_into().unwrap())
    }

    fn u8(&mut self, field: &'static str) -> Result<u8, IoError> {
        Ok(self.array::<1>(field)?[0])
    }

    fn u16(&mut self, field: &'static str) -> Result<u16, IoError> {
        Ok(u16::from_le_bytes(self.array(field)?))
    }

    fn u32(&mut self, field: &'static str) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.array(field)?))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.array(field)?))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn check_magic(cur: &mut Cursor, expected: [u8; 4]) -> Result<(), IoError> {
    let found = cur.take(4.min(cur.remaining()), "magic")?;
    if found != expected {
        return Err(IoError::Magic {
            expected: String::from_utf8_lossy(&expected).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// Dense tensor as stored in a `DTF1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl DenseTensor {
    pub fn dtype(&self) -> Dtype {
        match self.data {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_matrix<T: Scalar>(m: &DenseMatrix<T>, dtype: Dtype) -> Self {
        let dims = vec![m.rows() as u64, m.cols() as u64];
        let data = match dtype {
            Dtype::F32 => TensorData::F32(m.as_slice().iter().map(|v| v.as_f64() as f32).collect()),
            Dtype::F64 => TensorData::F64(m.as_slice().iter().map(|v| v.as_f64()).collect()),
        };
        Self { dims, data }
    }

    /// Views a 2-D tensor as a matrix; a 1-D tensor becomes a single row.
    pub fn to_matrix<T: Scalar>(&self) -> Result<DenseMatrix<T>, IoError> {
        let (rows, cols) = match self.dims.as_slice() {
            [c] => (1, *c as usize),
            [r, c] => (*r as usize, *c as usize),
            d => return Err(IoError::Shape(format!("expected a 1-D or 2-D tensor, got {} dims", d.len()))),
        };
        let data: Vec<T> = match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| T::of(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::of(x)).collect(),
        };
        DenseMatrix::new(rows, cols, data).map_err(|e| IoError::Shape(e.to_string()))
    }
}

pub fn encode_dtf(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 8 * t.dims.len() + t.len() * t.dtype().size());
    out.extend_from_slice(&DTF_MAGIC);
    out.push(t.dtype().code());
    out.push(t.dims.len() as u8);
    for d in &t.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    match &t.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn decode_dtf(bytes: &[u8]) -> Result<DenseTensor, IoError> {
    let mut cur = Cursor::new(bytes);
    check_magic(&mut cur, DTF_MAGIC)?;
    let dtype = match cur.u8("dtype")? {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => {
            return Err(IoError::Field { field: "dtype", offset: 4, reason: format!("unknown code {other}") })
        }
    };
    let ndim = cur.u8("ndim")? as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(cur.u64("dims")?);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(usize::try_from(d).ok()?))
        .and_then(|c| c.checked_mul(dtype.size()))
        .ok_or_else(|| IoError::Field { field: "dims", offset: 6, reason: "element count overflows".into() })?;
    let expected = cur.pos + count;
    if bytes.len() != expected {
        return Err(IoError::Length { expected, actual: bytes.len() });
    }
    let payload = cur.take(count, "payload")?;
    let data = match dtype {
        Dtype::F32 => TensorData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
        Dtype::F64 => TensorData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
    };
    Ok(DenseTensor { dims, data })
}

pub fn read_dtf(path: &Path) -> Result<DenseTensor, IoError> {
    decode_dtf(&read_file(path)?)
}

pub fn write_dtf(path: &Path, t: &DenseTensor) -> Result<(), IoError> {
    write_atomic(path, &encode_dtf(t))
}

/// Exact byte size of a `PVQT` file for the given layout.
pub fn pvqt_len(rows: usize, groups: usize, bits_per_group: usize, amplitude_bits: u32) -> usize {
    PVQT_HEADER_LEN
        + PackedCodes::byte_len(bits_per_group, rows * groups)
        + amplitude_payload_len(rows, groups, amplitude_bits)
}

pub fn encode_pvqt(qt: &QuantizedTensor) -> Vec<u8> {
    let c = &qt.config;
    let mut flags = 0u16;
    if c.coherence_seed.is_some() {
        flags |= FLAG_COHERENCE;
    }
    if qt.hessian_used {
        flags |= FLAG_HESSIAN;
    }
    if matches!(qt.amplitudes, AmplitudePayload::Quantized(_)) {
        flags |= FLAG_AMPLITUDES_QUANTIZED;
    }
    let mut out = Vec::with_capacity(pvqt_len(qt.rows, qt.groups, c.bits_per_group, c.amplitude_bits));
    out.extend_from_slice(&PVQT_MAGIC);
    out.extend_from_slice(&PVQT_VERSION.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(qt.rows as u64).to_le_bytes());
    out.extend_from_slice(&(qt.groups as u64).to_le_bytes());
    out.extend_from_slice(&(c.groupsize as u32).to_le_bytes());
    out.extend_from_slice(&(qt.pulses as u32).to_le_bytes());
    out.extend_from_slice(&(c.bits_per_group as u32).to_le_bytes());
    out.push(c.amplitude_bits as u8);
    out.extend_from_slice(&c.coherence_seed.unwrap_or(0).to_le_bytes());
    out.extend_from_slice(&qt.codes.bytes);
    match &qt.amplitudes {
        AmplitudePayload::Full(a) => a.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        AmplitudePayload::Quantized(records) => {
            for rec in records {
                let mut w = BitWriter::with_capacity_bits(rec.levels.len() * c.amplitude_bits as usize);
                for &l in &rec.levels {
                    w.write_bits(l, c.amplitude_bits as usize);
                }
                out.extend_from_slice(&w.into_bytes());
                out.extend_from_slice(&(rec.row_norm_sq as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_pvqt(bytes: &[u8]) -> Result<QuantizedTensor, IoError> {
    let mut cur = Cursor::new(bytes);
    check_magic(&mut cur, PVQT_MAGIC)?;
    let version = cur.u16("version")?;
    if version != PVQT_VERSION {
        return Err(IoError::Field { field: "version", offset: 4, reason: format!("unsupported version {version}") });
    }
    let flags = cur.u16("flags")?;
    if flags & !KNOWN_FLAGS != 0 {
        return Err(IoError::Field { field: "flags", offset: 6, reason: format!("unknown bits {:#06x}", flags & !KNOWN_FLAGS) });
    }
    let rows = cur.u64("N")?;
    let groups = cur.u64("G")?;
    let d = cur.u32("D")? as usize;
    let k = cur.u32("K")? as usize;
    let bpg = cur.u32("bits_per_group")? as usize;
    let amp_bits = cur.u8("amplitude_bits")? as u32;
    let seed = cur.u64("seed")?;

    let field = |field, offset, reason: String| IoError::Field { field, offset, reason };
    let rows = usize::try_from(rows).map_err(|_| field("N", 8, "too large".into()))?;
    let groups = usize::try_from(groups).map_err(|_| field("G", 16, "too large".into()))?;
    if groups == 0 {
        return Err(field("G", 16, "must be at least 1".into()));
    }
    let config = PvqConfig {
        groupsize: d,
        bits_per_group: bpg,
        amplitude_bits: amp_bits,
        coherence_seed: (flags & FLAG_COHERENCE != 0).then_some(seed),
        hessian_feedback: flags & FLAG_HESSIAN != 0,
        dampening: DEFAULT_DAMPENING,
    };
    let expected_k = config.pulses().map_err(|e| field("D", 24, e.to_string()))?;
    if k != expected_k {
        return Err(field("K", 28, format!("{k} does not match {expected_k} pulses implied by D={d}, {bpg} bits")));
    }
    let quantized = flags & FLAG_AMPLITUDES_QUANTIZED != 0;
    if quantized != (amp_bits > 0) {
        return Err(field("amplitude_bits", 40, format!("{amp_bits} disagrees with the amplitudes-quantized flag")));
    }
    if amp_bits > crate::amplitude::MAX_AMPLITUDE_BITS {
        return Err(field("amplitude_bits", 40, format!("{amp_bits} exceeds {}", crate::amplitude::MAX_AMPLITUDE_BITS)));
    }
    if quantized && groups < 2 {
        return Err(field("G", 16, "quantized amplitudes need at least 2 groups".into()));
    }

    let expected = rows
        .checked_mul(groups)
        .and_then(|n| n.checked_mul(bpg.max(amp_bits as usize + 32)))
        .map(|_| pvqt_len(rows, groups, bpg, amp_bits))
        .ok_or_else(|| field("N", 8, "layout size overflows".into()))?;
    if bytes.len() != expected {
        return Err(IoError::Length { expected, actual: bytes.len() });
    }

    let code_len = PackedCodes::byte_len(bpg, rows * groups);
    let codes = PackedCodes::from_bytes(bpg, rows * groups, cur.take(code_len, "direction payload")?.to_vec())
        .map_err(|e| field("direction payload", PVQT_HEADER_LEN, e.to_string()))?;
    let amplitudes = if quantized {
        let level_bytes = (groups * amp_bits as usize).div_ceil(8);
        let mut records = Vec::with_capacity(rows);
        for _ in 0..rows {
            let mut reader = BitReader::new(cur.take(level_bytes, "amplitude levels")?);
            let levels = (0..groups).map(|_| reader.read_bits(amp_bits as usize)).collect();
            let offset = cur.pos;
            let norm = f32::from_le_bytes(cur.array("row_norm_sq")?);
            if !(norm.is_finite() && norm >= 0.0) {
                return Err(field("row_norm_sq", offset, format!("{norm} is not a finite nonnegative value")));
            }
            records.push(AmplitudeRecord { levels, row_norm_sq: norm as f64 });
        }
        AmplitudePayload::Quantized(records)
    } else {
        let start = cur.pos;
        let raw = cur.take(rows * groups * 4, "amplitudes")?;
        let amps: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if let Some(i) = amps.iter().position(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(field("amplitudes", start + 4 * i, format!("{} is not a finite nonnegative value", amps[i])));
        }
        AmplitudePayload::Full(amps)
    };
    debug_assert_eq!(cur.remaining(), 0);
    Ok(QuantizedTensor { rows, groups, config, pulses: k, hessian_used: flags & FLAG_HESSIAN != 0, codes, amplitudes })
}

pub fn read_pvqt(path: &Path) -> Result<QuantizedTensor, IoError> {
    decode_pvqt(&read_file(path)?)
}

pub fn write_pvqt(path: &Path, qt: &QuantizedTensor) -> Result<(), IoError> {
    write_atomic(path, &encode_pvqt(qt))
}
