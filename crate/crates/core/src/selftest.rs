//! Exhaustive codec verification over small pyramids.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::bench::batch_rng;
use crate::codec::{self, PyramidPoint};
use crate::lattice::SizeTable;

/// Every point of `P(dim, pulses)` in lexicographic order of coordinates,
/// most negative first.
pub fn enumerate_pyramid(dim: usize, pulses: usize) -> Vec<PyramidPoint> {
    fn rec(prefix: &mut Vec<i32>, dim: usize, left: i32, out: &mut Vec<PyramidPoint>) {
        if prefix.len() + 1 == dim {
            for last in [-left, left] {
                prefix.push(last);
                out.push(PyramidPoint::new(prefix.clone(), prefix.iter().map(|c| c.unsigned_abs() as usize).sum()).unwrap());
                prefix.pop();
                if left == 0 {
                    break;
                }
            }
            return;
        }
        for x in -left..=left {
            prefix.push(x);
            rec(prefix, dim, left - x.abs(), out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if dim > 0 {
        rec(&mut Vec::with_capacity(dim), dim, pulses as i32, &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub dim: usize,
    pub pulses: usize,
    pub point: Vec<i32>,
    pub code: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SelftestReport {
    /// `(d, k)` pairs covered.
    pub cases: usize,
    /// Individual points and quantizer probes checked.
    pub checks: usize,
    pub failures: Vec<Failure>,
}

/// Random probes per `(d, k)` for the quantizer invariants.
const PROBES: usize = 64;

/// Checks, for `1 <= d <= max_d` and `1 <= k <= max_k`: every point encodes
/// below `N(d, k)`, codes are distinct and cover the range, decode inverts
/// encode, every point is a fixed point of the quantizer, and quantized random
/// vectors have exactly `k` pulses.
pub fn run_selftest(max_d: usize, max_k: usize, seed: u64) -> SelftestReport {
    let cases: Vec<(usize, usize)> = (1..=max_d).flat_map(|d| (1..=max_k).map(move |k| (d, k))).collect();
    let results: Vec<(usize, Vec<Failure>)> = cases
        .par_iter()
        .enumerate()
        .map(|(case, &(d, k))| check_case(d, k, seed, case))
        .collect();
    let mut report = SelftestReport { cases: cases.len(), ..Default::default() };
    for (checks, failures) in results {
        report.checks += checks;
        report.failures.extend(failures);
    }
    report
}

fn check_case(d: usize, k: usize, seed: u64, case: usize) -> (usize, Vec<Failure>) {
    let table = SizeTable::cached(d, k);
    let points = enumerate_pyramid(d, k);
    let count = table.code_count().to_u64().expect("selftest sizes fit u64");
    let mut failures = Vec::new();
    let mut fail = |point: &[i32], code: String, reason: String| {
        failures.push(Failure { dim: d, pulses: k, point: point.to_vec(), code, reason })
    };
    if points.len() as u64 != count {
        fail(&[], "-".into(), format!("enumerated {} points, N({d},{k}) = {count}", points.len()));
    }
    let mut seen = vec![false; count as usize];
    for p in &points {
        let code = match codec::encode(p, &table) {
            Ok(c) => c,
            Err(e) => {
                fail(p.coords(), "-".into(), format!("encode failed: {e}"));
                continue;
            }
        };
        let Some(c) = code.to_u64().filter(|&c| c < count) else {
            fail(p.coords(), code.to_string(), "code out of range".into());
            continue;
        };
        if std::mem::replace(&mut seen[c as usize], true) {
            fail(p.coords(), code.to_string(), "duplicate code".into());
        }
        match codec::decode(&code, &table) {
            Ok(q) if q == *p => {}
            Ok(q) => fail(p.coords(), code.to_string(), format!("decoded to {:?}", q.coords())),
            Err(e) => fail(p.coords(), code.to_string(), format!("decode failed: {e}")),
        }
        let real: Vec<f64> = p.coords().iter().map(|&c| c as f64).collect();
        match codec::quantize_direction(&real, k) {
            Ok(q) if q == *p => {}
            Ok(q) => fail(p.coords(), code.to_string(), format!("not a quantizer fixed point, got {:?}", q.coords())),
            Err(e) => fail(p.coords(), code.to_string(), format!("quantize failed: {e}")),
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        fail(&[], missing.to_string(), "code never produced".into());
    }

    let mut rng = batch_rng(seed, case);
    for _ in 0..PROBES {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        match codec::quantize_direction(&v, k) {
            Ok(q) if q.pulses() == k && q.dim() == d => {}
            Ok(q) => fail(q.coords(), "-".into(), format!("quantizer returned {} pulses", q.pulses())),
            Err(e) => fail(&[], "-".into(), format!("quantize of random vector failed: {e}")),
        }
    }
    (points.len() + PROBES, failures)
}
