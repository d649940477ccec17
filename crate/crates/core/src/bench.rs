//! Benchmarks on synthetic Gaussian sources: QSNR of group quantizers and a
//! Kolmogorov-Smirnov check of the Beta amplitude model.
//!
//! Samples come from ChaCha8 streams. Work is split into fixed batches whose
//! stream index is the batch number, so results do not depend on the thread
//! count.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::amplitude::{beta_cdf, AmplitudeError, BetaParams};
use crate::codec;
use crate::lattice::SizeTable;
use crate::pipeline::{optimal_scale, rtn_group, PvqConfig};

/// Samples per RNG stream.
pub const BATCH: usize = 256;

/// Minimum sample count accepted by the harnesses.
pub const MIN_SAMPLES: usize = 1000;

pub const CSV_HEADER: &str = "method,D,bpw,qsnr_db,samples,seed";

/// Asymptotic two-sided KS coefficient for alpha = 0.01.
pub const KS_COEFF_001: f64 = 1.63;

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error(transparent)]
    Amplitude(#[from] AmplitudeError),
}

/// Deterministic RNG for batch `batch` of a run seeded with `seed`.
pub fn batch_rng(seed: u64, batch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch as u64);
    rng
}

fn gaussian_batch(seed: u64, batch: usize, count: usize, dim: usize) -> Vec<f64> {
    let mut rng = batch_rng(seed, batch);
    (0..count * dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn batches(samples: usize) -> impl ParallelIterator<Item = (usize, usize)> {
    (0..samples.div_ceil(BATCH)).into_par_iter().map(move |b| (b, BATCH.min(samples - b * BATCH)))
}

/// A group quantizer under test. `prepare` fixes the rate and returns the
/// quantize-dequantize map, or a reason the rate cannot be met.
pub trait GroupQuantizer: Sync {
    fn name(&self) -> &str;
    fn prepare(&self, groupsize: usize, bpw: f64) -> Result<Box<dyn Fn(&[f64]) -> Vec<f64> + Sync>, String>;
}

/// PVQ with `round(bpw D)` direction bits per group and an unquantized amplitude.
pub struct Pvq;

/// Symmetric round-to-nearest with `bpw` bits per weight and an unquantized scale.
pub struct Rtn;

/// Returns its input; the error-free reference.
pub struct Identity;

impl GroupQuantizer for Pvq {
    fn name(&self) -> &str {
        "pvq"
    }

    fn prepare(&self, groupsize: usize, bpw: f64) -> Result<Box<dyn Fn(&[f64]) -> Vec<f64> + Sync>, String> {
        let config = PvqConfig::from_direction_bits(groupsize, bpw).map_err(|e| e.to_string())?;
        let k = config.pulses().map_err(|e| e.to_string())?;
        // Exercise the full codec path so the benchmark measures what is stored.
        let table = SizeTable::cached(groupsize, k);
        Ok(Box::new(move |x: &[f64]| {
            let p = codec::quantize_direction(x, k).expect("finite input");
            let code = codec::encode(&p, &table).expect("valid point");
            let p = codec::decode(&code, &table).expect("valid code");
            let s = optimal_scale(x, &p);
            p.coords().iter().map(|&c| s * c as f64).collect()
        }))
    }
}

impl GroupQuantizer for Rtn {
    fn name(&self) -> &str {
        "rtn"
    }

    fn prepare(&self, _groupsize: usize, bpw: f64) -> Result<Box<dyn Fn(&[f64]) -> Vec<f64> + Sync>, String> {
        if bpw.fract() != 0.0 || !(2.0..=32.0).contains(&bpw) {
            return Err(format!("RTN needs an integer bit width in 2..=32, got {bpw}"));
        }
        let bits = bpw as u32;
        Ok(Box::new(move |x: &[f64]| rtn_group(x, bits)))
    }
}

impl GroupQuantizer for Identity {
    fn name(&self) -> &str {
        "identity"
    }

    fn prepare(&self, _groupsize: usize, _bpw: f64) -> Result<Box<dyn Fn(&[f64]) -> Vec<f64> + Sync>, String> {
        Ok(Box::new(|x: &[f64]| x.to_vec()))
    }
}

/// Built-in quantizer by CLI name.
pub fn quantizer_by_name(name: &str) -> Result<&'static dyn GroupQuantizer, BenchError> {
    match name {
        "pvq" => Ok(&Pvq),
        "rtn" => Ok(&Rtn),
        "identity" => Ok(&Identity),
        other => Err(BenchError::UnknownMethod(other.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QsnrReport {
    pub method: String,
    pub groupsize: usize,
    pub bpw: f64,
    /// `+inf` when the reconstruction is exact.
    pub qsnr_db: f64,
    pub samples: usize,
    pub seed: u64,
}

/// A rate the quantizer could not be configured for.
#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub method: String,
    pub groupsize: usize,
    pub bpw: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QsnrRun {
    pub reports: Vec<QsnrReport>,
    pub skipped: Vec<Skipped>,
}

/// `10 log10(signal / error)`, `+inf` for zero error.
pub fn qsnr_db(signal: f64, error: f64) -> f64 {
    if error == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / error).log10()
    }
}

/// QSNR of `method` on iid standard Gaussian `D`-vectors at each rate. Every
/// rate sees the same samples.
pub fn run_qsnr(
    method: &dyn GroupQuantizer,
    groupsize: usize,
    bpws: &[f64],
    samples: usize,
    seed: u64,
) -> Result<QsnrRun, BenchError> {
    if samples < MIN_SAMPLES {
        return Err(BenchError::TooFewSamples(samples));
    }
    let mut run = QsnrRun::default();
    for &bpw in bpws {
        let q = match method.prepare(groupsize, bpw) {
            Ok(q) => q,
            Err(reason) => {
                run.skipped.push(Skipped { method: method.name().into(), groupsize, bpw, reason });
                continue;
            }
        };
        let sums: Vec<(f64, f64)> = batches(samples)
            .map(|(b, count)| {
                let data = gaussian_batch(seed, b, count, groupsize);
                let mut signal = 0.0;
                let mut error = 0.0;
                for x in data.chunks_exact(groupsize) {
                    let y = q(x);
                    signal += x.iter().map(|v| v * v).sum::<f64>();
                    error += x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                }
                (signal, error)
            })
            .collect();
        let (signal, error) = sums.iter().fold((0.0, 0.0), |(s, e), &(a, b)| (s + a, e + b));
        run.reports.push(QsnrReport {
            method: method.name().into(),
            groupsize,
            bpw,
            qsnr_db: qsnr_db(signal, error),
            samples,
            seed,
        });
    }
    Ok(run)
}

/// Two-sided KS statistic `sup |F_n(x) - F(x)|`; sorts `samples`.
pub fn ks_statistic(samples: &mut [f64], mut cdf: impl FnMut(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsReport {
    pub groupsize: usize,
    pub groups: usize,
    pub reference: BetaParams,
    pub samples: usize,
    pub seed: u64,
    pub statistic: f64,
    /// `1.63 / sqrt(n)`.
    pub critical: f64,
}

impl KsReport {
    pub fn passes(&self) -> bool {
        self.statistic < self.critical
    }
}

/// Energy shares `|v_1|^2 / |w|^2` of the first of `G` groups of size `D`,
/// one per independent Gaussian draw of `w`.
pub fn sample_energy_shares(groupsize: usize, groups: usize, samples: usize, seed: u64) -> Vec<f64> {
    let width = groupsize * groups;
    let per: Vec<Vec<f64>> = batches(samples)
        .map(|(b, count)| {
            gaussian_batch(seed, b, count, width)
                .chunks_exact(width)
                .map(|w| {
                    let total: f64 = w.iter().map(|v| v * v).sum();
                    let first: f64 = w[..groupsize].iter().map(|v| v * v).sum();
                    first / total
                })
                .collect()
        })
        .collect();
    per.concat()
}

/// KS test of sampled shares against `reference`, by default the model
/// `Beta(D/2, D(G-1)/2)`.
pub fn run_beta_ks(
    groupsize: usize,
    groups: usize,
    samples: usize,
    seed: u64,
    reference: Option<BetaParams>,
) -> Result<KsReport, BenchError> {
    if samples < MIN_SAMPLES {
        return Err(BenchError::TooFewSamples(samples));
    }
    let reference = match reference {
        Some(r) => r,
        None => BetaParams::for_groups(groupsize, groups)?,
    };
    let mut shares = sample_energy_shares(groupsize, groups, samples, seed);
    let mut failure = None;
    let statistic = ks_statistic(&mut shares, |x| {
        beta_cdf(x, &reference).unwrap_or_else(|e| {
            failure.get_or_insert(e);
            f64::NAN
        })
    });
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(KsReport {
        groupsize,
        groups,
        reference,
        samples,
        seed,
        statistic,
        critical: KS_COEFF_001 / (samples as f64).sqrt(),
    })
}

pub fn emit_csv(reports: &[QsnrReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.method, r.groupsize, r.bpw, r.qsnr_db, r.samples, r.seed);
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<QsnrReport>, BenchError> {
    let mut lines = text.split_terminator('\n');
    match lines.next() {
        Some(CSV_HEADER) => {}
        other => {
            return Err(BenchError::Csv { line: 1, reason: format!("expected header {CSV_HEADER:?}, got {other:?}") })
        }
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let line_no = i + 2;
            let err = |reason: String| BenchError::Csv { line: line_no, reason };
            let fields: Vec<&str> = line.split(',').collect();
            let [method, d, bpw, qsnr, samples, seed] = fields[..] else {
                return Err(err(format!("expected 6 fields, got {}", fields.len())));
            };
            Ok(QsnrReport {
                method: method.to_string(),
                groupsize: d.parse().map_err(|e| err(format!("D: {e}")))?,
                bpw: bpw.parse().map_err(|e| err(format!("bpw: {e}")))?,
                qsnr_db: qsnr.parse().map_err(|e| err(format!("qsnr_db: {e}")))?,
                samples: samples.parse().map_err(|e| err(format!("samples: {e}")))?,
                seed: seed.parse().map_err(|e| err(format!("seed: {e}")))?,
            })
        })
        .collect()
}
