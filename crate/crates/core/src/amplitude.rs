//! Amplitude quantization through Beta quantiles.
//!
//! For Gaussian weights grouped into `G` groups of size `D`, the share of
//! energy in one group, `|v_g|^2 / |w|^2`, is `Beta(D/2, D(G-1)/2)`
//! distributed. A `b`-bit level is `floor(CDF(x) 2^b)` and dequantization maps
//! the center of the level back through the quantile function,
//! `PPF((level + 0.5) / 2^b)`.

use statrs::function::gamma::ln_gamma;
use thiserror::Error;

/// Largest supported amplitude bit width.
pub const MAX_AMPLITUDE_BITS: u32 = 32;

const CF_MAX_ITER: usize = 10_000;
const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AmplitudeError {
    #[error("Beta parameters must be positive and finite, got ({alpha}, {beta})")]
    InvalidParams { alpha: f64, beta: f64 },
    #[error("argument {0} is outside [0, 1]")]
    OutOfDomain(f64),
    #[error("amplitude bits must be in 1..={MAX_AMPLITUDE_BITS}, got {0}")]
    InvalidBits(u32),
    #[error("level {level} does not fit in {bits} bits")]
    LevelOutOfRange { level: u64, bits: u32 },
    #[error("amplitude quantization needs at least 2 groups per row, got {0}")]
    TooFewGroups(usize),
    #[error("amplitude {index} is negative or not finite")]
    InvalidAmplitude { index: usize },
    #[error("continued fraction did not converge for x={x}")]
    NoConvergence { x: f64 },
}

/// Shape parameters of a Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    alpha: f64,
    beta: f64,
    ln_beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, AmplitudeError> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(AmplitudeError::InvalidParams { alpha, beta });
        }
        let ln_beta = ln_gamma(alpha) + ln_gamma(beta) - ln_gamma(alpha + beta);
        Ok(Self { alpha, beta, ln_beta })
    }

    /// `Beta(D/2, D(G-1)/2)`, the law of one group's energy share.
    pub fn for_groups(groupsize: usize, groups: usize) -> Result<Self, AmplitudeError> {
        if groups < 2 {
            return Err(AmplitudeError::TooFewGroups(groups));
        }
        let d = groupsize as f64;
        Self::new(d / 2.0, d * (groups as f64 - 1.0) / 2.0)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Density at `x` in the open interval.
    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 || x >= 1.0 {
            return 0.0;
        }
        ((self.alpha - 1.0) * x.ln() + (self.beta - 1.0) * (-x).ln_1p() - self.ln_beta).exp()
    }
}

fn check_unit(x: f64) -> Result<(), AmplitudeError> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(AmplitudeError::OutOfDomain(x))
    }
}

/// Regularized incomplete beta `I_x(alpha, beta)`.
pub fn beta_cdf(x: f64, params: &BetaParams) -> Result<f64, AmplitudeError> {
    check_unit(x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let (a, b) = (params.alpha, params.beta);
    // The continued fraction converges fast below the mean; use the
    // reflection I_x(a, b) = 1 - I_{1-x}(b, a) above it.
    if x > (a + 1.0) / (a + b + 2.0) {
        let tail = incbeta_cf(b, a, 1.0 - x, params.ln_beta)?;
        Ok((1.0 - tail).clamp(0.0, 1.0))
    } else {
        Ok(incbeta_cf(a, b, x, params.ln_beta)?.clamp(0.0, 1.0))
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn incbeta_cf(a: f64, b: f64, x: f64, ln_beta: f64) -> Result<f64, AmplitudeError> {
    let prefix = (a * x.ln() + b * (-x).ln_1p() - ln_beta).exp() / a;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;

    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let even = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + even * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + even / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let odd = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + odd * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + odd / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < CF_EPS {
            return Ok(prefix * h);
        }
    }
    Err(AmplitudeError::NoConvergence { x })
}

/// Quantile function: the `x` with `I_x(alpha, beta) = q`.
///
/// Newton steps on the CDF, falling back to bisection whenever a step leaves
/// the current bracket.
pub fn beta_ppf(q: f64, params: &BetaParams) -> Result<f64, AmplitudeError> {
    check_unit(q)?;
    if q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mean = params.alpha / (params.alpha + params.beta);
    let mut x = mean;
    for _ in 0..400 {
        let f = beta_cdf(x, params)? - q;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let density = params.pdf(x);
        let newton = if density > 0.0 && density.is_finite() { x - f / density } else { f64::NAN };
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= 1e-15 * x.max(1e-300) || hi - lo <= f64::EPSILON * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

fn check_bits(bits: u32) -> Result<(), AmplitudeError> {
    if (1..=MAX_AMPLITUDE_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(AmplitudeError::InvalidBits(bits))
    }
}

/// `floor(CDF(x) 2^bits)`, clamped to the top level.
pub fn quantize_amplitude(x: f64, bits: u32, params: &BetaParams) -> Result<u64, AmplitudeError> {
    check_bits(bits)?;
    let levels = 1u64 << bits;
    let cdf = beta_cdf(x, params)?;
    Ok(((cdf * levels as f64).floor() as u64).min(levels - 1))
}

/// `PPF((level + 0.5) / 2^bits)`.
pub fn dequantize_amplitude(level: u64, bits: u32, params: &BetaParams) -> Result<f64, AmplitudeError> {
    check_bits(bits)?;
    let levels = 1u64 << bits;
    if level >= levels {
        return Err(AmplitudeError::LevelOutOfRange { level, bits });
    }
    beta_ppf((level as f64 + 0.5) / levels as f64, params)
}

/// Quantized amplitudes of one row: one level per group plus `|s|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeRecord {
    pub levels: Vec<u64>,
    pub row_norm_sq: f64,
}

/// Quantizes the energy shares `s_i^2 / |s|^2` of a row of group amplitudes.
pub fn quantize_row_amplitudes(
    amplitudes: &[f64],
    bits: u32,
    groupsize: usize,
) -> Result<AmplitudeRecord, AmplitudeError> {
    check_bits(bits)?;
    let params = BetaParams::for_groups(groupsize, amplitudes.len())?;
    if let Some(index) = amplitudes.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(AmplitudeError::InvalidAmplitude { index });
    }
    let row_norm_sq: f64 = amplitudes.iter().map(|s| s * s).sum();
    if row_norm_sq == 0.0 {
        return Ok(AmplitudeRecord { levels: vec![0; amplitudes.len()], row_norm_sq });
    }
    let levels = amplitudes
        .iter()
        .map(|s| quantize_amplitude((s * s / row_norm_sq).min(1.0), bits, &params))
        .collect::<Result<_, _>>()?;
    Ok(AmplitudeRecord { levels, row_norm_sq })
}

/// `s_i = sqrt(PPF((level_i + 0.5) / 2^b) |s|^2)`.
pub fn dequantize_row_amplitudes(
    record: &AmplitudeRecord,
    bits: u32,
    groupsize: usize,
) -> Result<Vec<f64>, AmplitudeError> {
    let params = BetaParams::for_groups(groupsize, record.levels.len())?;
    check_bits(bits)?;
    if record.row_norm_sq == 0.0 {
        return Ok(vec![0.0; record.levels.len()]);
    }
    record
        .levels
        .iter()
        .map(|&l| Ok((dequantize_amplitude(l, bits, &params)? * record.row_norm_sq).sqrt()))
        .collect()
}

/// All `2^b` dequantized energy shares of one parameter set, so a row costs
/// lookups instead of quantile evaluations.
#[derive(Debug, Clone)]
pub struct AmplitudeCodebook {
    bits: u32,
    centers: Vec<f64>,
}

impl AmplitudeCodebook {
    /// Widest tabulated level count, `2^20` entries.
    pub const MAX_BITS: u32 = 20;

    pub fn new(params: BetaParams, bits: u32) -> Result<Self, AmplitudeError> {
        if !(1..=Self::MAX_BITS).contains(&bits) {
            return Err(AmplitudeError::InvalidBits(bits));
        }
        let centers = (0..1u64 << bits)
            .map(|level| dequantize_amplitude(level, bits, &params))
            .collect::<Result<_, _>>()?;
        Ok(Self { bits, centers })
    }

    pub fn share(&self, level: u64) -> Result<f64, AmplitudeError> {
        self.centers
            .get(level as usize)
            .copied()
            .ok_or(AmplitudeError::LevelOutOfRange { level, bits: self.bits })
    }

    pub fn dequantize_row(&self, record: &AmplitudeRecord) -> Result<Vec<f64>, AmplitudeError> {
        if record.row_norm_sq == 0.0 {
            return Ok(vec![0.0; record.levels.len()]);
        }
        record
            .levels
            .iter()
            .map(|&l| Ok((self.share(l)? * record.row_norm_sq).sqrt()))
            .collect()
    }
}

/// CDF sampled on a uniform grid and linearly interpolated.
///
/// Only accurate where the density is smooth; near an endpoint with a shape
/// parameter below 1 the density diverges and interpolation error grows.
#[derive(Debug, Clone)]
pub struct InterpolatedCdf {
    values: Vec<f64>,
}

impl InterpolatedCdf {
    pub const DEFAULT_POINTS: usize = 10_000;

    pub fn new(params: &BetaParams, points: usize) -> Result<Self, AmplitudeError> {
        let points = points.max(2);
        let step = 1.0 / (points - 1) as f64;
        let values = (0..points)
            .map(|i| beta_cdf((i as f64 * step).min(1.0), params))
            .collect::<Result<_, _>>()?;
        Ok(Self { values })
    }

    pub fn cdf(&self, x: f64) -> Result<f64, AmplitudeError> {
        check_unit(x)?;
        let last = self.values.len() - 1;
        let pos = x * last as f64;
        let i = (pos.floor() as usize).min(last - 1);
        let t = pos - i as f64;
        Ok(self.values[i] + t * (self.values[i + 1] - self.values[i]))
    }

    pub fn quantize(&self, x: f64, bits: u32) -> Result<u64, AmplitudeError> {
        check_bits(bits)?;
        let levels = 1u64 << bits;
        Ok(((self.cdf(x)? * levels as f64).floor() as u64).min(levels - 1))
    }
}
