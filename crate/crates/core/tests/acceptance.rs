//! Acceptance suite: one line per criterion, nonzero exit if any fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use rand::Rng;

use pvq::amplitude::{beta_cdf, beta_ppf, BetaParams};
use pvq::bench::{self, Pvq, Rtn};
use pvq::codec::{self, PyramidPoint};
use pvq::coherence::CoherencePair;
use pvq::io::{self, DenseTensor, Dtype};
use pvq::lattice::SizeTable;
use pvq::pipeline::{self, HessianState, PvqConfig, REPORTED_FLOAT_BITS};
use pvq::{CodeInteger, Matrix};

use common::*;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn big(c: &CodeInteger) -> BigUint {
    c.to_string().parse().unwrap()
}

fn size_table() -> Outcome {
    let t = SizeTable::build(2, 7);
    ensure!(t.n(2, 7).to_u64() == Some(28), "N(2,7) = {}", t.n(2, 7));
    ensure!(brute_force_points(2, 7).len() == 28, "enumeration of P(2,7) disagrees");
    let t = SizeTable::build(12, 12);
    for d in 0..=12 {
        ensure!(t.n(d, 0).to_u64() == Some(1), "N({d},0) = {}", t.n(d, 0));
        for k in 0..=12 {
            if d == 0 && k > 0 {
                ensure!(t.n(0, k).is_zero(), "N(0,{k}) = {}", t.n(0, k));
            }
            ensure!(big(t.n(d, k)) == closed_form_count(d, k), "N({d},{k}) disagrees with closed form");
        }
    }
    Ok("N(2,7)=28, base cases, closed form d,k<=12".into())
}

fn check_all_points(d: usize, k: usize) -> Result<usize, String> {
    let table = SizeTable::build(d, k);
    let count = table.code_count().to_u64().unwrap() as usize;
    let points = brute_force_points(d, k);
    ensure!(points.len() == count, "|P({d},{k})| = {} but N = {count}", points.len());
    let mut seen = vec![false; count];
    for p in points {
        let pt = PyramidPoint::new(p.clone(), k).unwrap();
        let code = codec::encode(&pt, &table).map_err(|e| format!("encode {p:?}: {e}"))?;
        let c = code.to_u64().unwrap() as usize;
        ensure!(c < count, "({d},{k}) {p:?} -> {c} out of range");
        ensure!(!seen[c], "({d},{k}) {p:?} -> duplicate code {c}");
        seen[c] = true;
        ensure!(c as u128 == literal_encode(&p), "({d},{k}) {p:?} -> {c}, literal sum {}", literal_encode(&p));
        let back = codec::decode(&code, &table).map_err(|e| format!("decode {c}: {e}"))?;
        ensure!(back.coords() == p.as_slice(), "({d},{k}) {c} decodes to {:?}, not {p:?}", back.coords());
    }
    Ok(count)
}

fn bijectivity() -> Outcome {
    let mut points = 0;
    let mut negative_inner = 0;
    for d in 1..=4 {
        for k in 1..=8 {
            points += check_all_points(d, k)?;
        }
    }
    for p in brute_force_points(4, 8) {
        if p[..3].iter().any(|&x| x < 0) {
            negative_inner += 1;
        }
    }
    // Larger codebooks: (5, 12) has 28,610 points, (6, 10) has 58,744. The
    // literal sum walks every pulse level, so for huge K only a few codes get it.
    let mut rng = rng(2);
    for (d, k) in [(5usize, 12usize), (6, 10), (3, 499), (2, 200_000)] {
        let table = SizeTable::build(d, k);
        let n = table.code_count().to_u64().unwrap();
        ensure!(n <= 1_000_000, "spot check ({d},{k}) has N = {n}");
        ensure!(big(table.code_count()) == closed_form_count(d, k), "N({d},{k}) mismatch");
        let mut codes: Vec<u64> = (0..2000).map(|_| rng.random_range(0..n)).collect();
        codes.extend([0, n - 1]);
        let literal_every = if k > 1000 { codes.len() / 16 } else { 1 };
        for (i, c) in codes.into_iter().enumerate() {
            let p = codec::decode(&CodeInteger::from(c), &table).map_err(|e| format!("decode {c}: {e}"))?;
            ensure!(p.pulses() == k, "({d},{k}) code {c} decodes off the pyramid");
            let back = codec::encode(&p, &table).unwrap().to_u64().unwrap();
            ensure!(back == c, "({d},{k}) code {c} -> {:?} -> {back}", p.coords());
            if i % literal_every == 0 {
                ensure!(literal_encode(p.coords()) == c as u128, "({d},{k}) literal sum disagrees at {c}");
            }
        }
    }
    let n = check_all_points(5, 12)?;
    Ok(format!("{points} points exhaustively (d<=4, k<=8, {negative_inner} with an inner negative), full (5,12) N={n}, spot checks to N<=1e6"))
}

fn near_optimality() -> Outcome {
    let mut rng = rng(3);
    let mut worst: f64 = 0.0;
    for d in 2..=4 {
        for k in 2..=8 {
            let book: Vec<Vec<f64>> =
                brute_force_points(d, k).into_iter().map(|p| p.into_iter().map(f64::from).collect()).collect();
            let (mut greedy, mut best) = (0.0, 0.0);
            for _ in 0..1000 {
                let v = gaussian_vec(&mut rng, d);
                let p = codec::quantize_direction(&v, k).unwrap();
                let q: Vec<f64> = p.coords().iter().map(|&c| c as f64).collect();
                greedy += spherical_error(&v, &q);
                best += book.iter().map(|c| spherical_error(&v, c)).fold(f64::INFINITY, f64::min);
            }
            let rel = (greedy - best) / best;
            ensure!(rel <= 0.01, "D={d} K={k}: greedy MSE {greedy} vs exhaustive {best} ({:.2}%)", 100.0 * rel);
            worst = worst.max(rel);
        }
    }
    Ok(format!("worst relative excess {:.3}% over 21 (D,K) cells", 100.0 * worst))
}

fn beta_amplitude_model() -> Outcome {
    let report = bench::run_beta_ks(4, 4, 10_000, 4, None).map_err(|e| e.to_string())?;
    ensure!(report.reference.alpha() == 2.0 && report.reference.beta() == 6.0, "model is not Beta(2,6)");
    ensure!(report.critical == 0.0163, "critical value {}", report.critical);
    ensure!(report.passes(), "KS {} >= {}", report.statistic, report.critical);

    // Same statistic from independently drawn shares and the binomial-sum CDF.
    let mut rng = rng(4);
    let mut shares: Vec<f64> = (0..10_000)
        .map(|_| {
            let w = gaussian_vec(&mut rng, 16);
            w[..4].iter().map(|x| x * x).sum::<f64>() / w.iter().map(|x| x * x).sum::<f64>()
        })
        .collect();
    shares.sort_by(f64::total_cmp);
    let n = shares.len() as f64;
    let ks = |cdf: &dyn Fn(f64) -> f64| {
        shares.iter().enumerate().map(|(i, &x)| (cdf(x) - i as f64 / n).max((i + 1) as f64 / n - cdf(x))).fold(0.0, f64::max)
    };
    let own = ks(&|x| integer_beta_cdf(x, 2, 6));
    ensure!(own < 0.0163, "independent KS {own}");
    let control = ks(&|x| integer_beta_cdf(x, 2, 2));
    ensure!(control >= 0.0163, "Beta(2,2) control passed with KS {control}");
    let lib_control = bench::run_beta_ks(4, 4, 10_000, 4, Some(BetaParams::new(2.0, 2.0).unwrap())).unwrap();
    ensure!(!lib_control.passes(), "library Beta(2,2) control passed");
    Ok(format!("KS {:.4} (independent {own:.4}) < 0.0163; Beta(2,2) control {control:.3}", report.statistic))
}

fn qsnr_ordering() -> Outcome {
    let bpws = [2.0, 3.0, 4.0];
    let mut margin = f64::INFINITY;
    for d in [8, 16, 32] {
        let pvq = bench::run_qsnr(&Pvq, d, &bpws, 1000, 5).map_err(|e| e.to_string())?;
        let rtn = bench::run_qsnr(&Rtn, d, &bpws, 1000, 5).map_err(|e| e.to_string())?;
        ensure!(pvq.reports.len() == 3 && rtn.reports.len() == 3, "D={d}: skipped rates");
        for (p, r) in pvq.reports.iter().zip(&rtn.reports) {
            ensure!(p.qsnr_db > r.qsnr_db, "D={d} bpw={}: PVQ {} <= RTN {}", p.bpw, p.qsnr_db, r.qsnr_db);
            margin = margin.min(p.qsnr_db - r.qsnr_db);
        }
        for run in [&pvq, &rtn] {
            for pair in run.reports.windows(2) {
                ensure!(pair[1].qsnr_db > pair[0].qsnr_db, "D={d} {}: QSNR not monotone", pair[0].method);
            }
        }
    }
    Ok(format!("PVQ > RTN in 9 cells, smallest margin {margin:.2} dB, monotone in BPW"))
}

fn error_feedback() -> Outcome {
    let mut rng = rng(6);
    let config = PvqConfig::new(16, 48);
    let mut ratios = Vec::new();
    for trial in 0..20 {
        let w = gaussian_matrix(&mut rng, 64, 256);
        let h = random_psd(&mut rng, 256, 512, 1.0);
        let state = HessianState::from_gram(h.clone(), 512, pipeline::DEFAULT_DAMPENING).map_err(|e| e.to_string())?;
        let plain: Matrix = pipeline::dequantize_layer(&pipeline::quantize_layer(&w, &config, None).unwrap()).unwrap();
        let fed_qt = pipeline::quantize_layer(&w, &config.clone().with_hessian_feedback(true), Some(&state)).unwrap();
        let fed: Matrix = pipeline::dequantize_layer(&fed_qt).unwrap();
        let before = reference_proxy_loss(&w, &plain, &h);
        let after = reference_proxy_loss(&w, &fed, &h);
        ensure!(after <= before, "trial {trial}: proxy loss {after} with feedback > {before} without");
        ratios.push(after / before);
    }
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(format!("20/20 instances improved, worst ratio {worst:.3}"))
}

fn bit_accounting() -> Outcome {
    let a = PvqConfig::from_direction_bits(128, 3.0).unwrap();
    ensure!(a.nominal_bpw(REPORTED_FLOAT_BITS) == 3.125, "D=128 gives {}", a.nominal_bpw(REPORTED_FLOAT_BITS));
    let b = PvqConfig::from_direction_bits(16, 3.0).unwrap().with_amplitude_bits(4);
    ensure!(b.nominal_bpw(REPORTED_FLOAT_BITS) == 3.25, "D=16 b_a=4 gives {}", b.nominal_bpw(REPORTED_FLOAT_BITS));
    let c = PvqConfig::new(16, 40);
    ensure!(c.direction_bpw() == 2.5, "40/16 gives {}", c.direction_bpw());

    let mut rng = rng(7);
    for (rows, cols, d, bpg, amp) in [(8, 256, 128, 384, 0u32), (16, 64, 16, 48, 4), (3, 48, 16, 40, 0), (5, 80, 16, 37, 3)] {
        let w = gaussian_matrix(&mut rng, rows, cols);
        let qt = pipeline::quantize_layer(&w, &PvqConfig::new(d, bpg).with_amplitude_bits(amp), None).unwrap();
        let bytes = io::encode_pvqt(&qt);
        let groups = cols / d;
        let directions = (rows * groups * bpg).div_ceil(8);
        let amplitudes = if amp == 0 { rows * groups * 4 } else { rows * ((groups * amp as usize).div_ceil(8) + 4) };
        let expected = 45 + directions + amplitudes;
        ensure!(bytes.len() == expected, "{rows}x{cols} D={d}: {} bytes, header arithmetic {expected}", bytes.len());
        ensure!(qt.codes.bytes.len() == directions, "direction payload {} != {directions}", qt.codes.bytes.len());
    }
    Ok("3.125, 3.25, 2.5 exact; file sizes match header arithmetic".into())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = rng(8);
    let w = gaussian_matrix(&mut rng, 64, 256);
    let x = gaussian_matrix(&mut rng, 512, 256);
    let input = dir.path().join("w.dtf");
    let calib = dir.path().join("x.dtf");
    io::write_dtf(&input, &DenseTensor::from_matrix(&w, Dtype::F32)).unwrap();
    io::write_dtf(&calib, &DenseTensor::from_matrix(&x, Dtype::F32)).unwrap();
    let run = |out: &Path| -> Result<Vec<u8>, String> {
        let status = Command::new(env!("CARGO_BIN_EXE_pvq"))
            .args(["quantize", "--groupsize", "16", "--direction-bits", "3", "--amplitude-bits", "4", "--coherence", "--seed", "11"])
            .arg("--input")
            .arg(&input)
            .arg("--calib")
            .arg(&calib)
            .arg("-o")
            .arg(out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(status.status.success(), "quantize failed: {}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(out).map_err(|e| e.to_string())
    };
    let a = run(&dir.path().join("a.pvqt"))?;
    let b = run(&dir.path().join("b.pvqt"))?;
    ensure!(a == b, "two runs differ");

    let mut worst: f64 = 0.0;
    for (rows, cols, seed) in [(64usize, 256usize, 11u64), (1, 1024, 0), (128, 32, u64::MAX)] {
        let m = gaussian_matrix(&mut rng, rows, cols);
        let pair = CoherencePair::from_seed(rows, cols, seed).unwrap();
        let back = pair.unrotate(&pair.rotate(&m).unwrap()).unwrap();
        let rel = back.sub(&m).unwrap().frobenius_norm() / m.frobenius_norm();
        ensure!(rel <= 1e-5, "{rows}x{cols}: coherence roundtrip error {rel}");
        worst = worst.max(rel);
    }
    Ok(format!("byte-identical {}-byte files; coherence roundtrip error {worst:.1e}", a.len()))
}

fn beta_accuracy() -> Outcome {
    let pairs = [(2.0, 6.0), (0.5, 0.5), (1.0, 3.0), (8.0, 120.0), (0.7, 40.0), (64.0, 1984.0)];
    let mut worst: f64 = 0.0;
    for (a, b) in pairs {
        let params = BetaParams::new(a, b).unwrap();
        for i in 0..1000 {
            let q = (i as f64 + 0.5) / 1000.0;
            let x = beta_ppf(q, &params).map_err(|e| e.to_string())?;
            let err = (beta_cdf(x, &params).unwrap() - q).abs();
            ensure!(err <= 1e-7, "Beta({a},{b}) q={q}: |cdf(ppf(q)) - q| = {err}");
            worst = worst.max(err);
        }
    }
    let uniform = BetaParams::new(1.0, 1.0).unwrap();
    for i in 0..=1000 {
        let x = i as f64 / 1000.0;
        ensure!((beta_cdf(x, &uniform).unwrap() - x).abs() <= 1e-12, "Beta(1,1) cdf({x})");
        ensure!((beta_ppf(x, &uniform).unwrap() - x).abs() <= 1e-12, "Beta(1,1) ppf({x})");
    }
    // Median of Beta(2,6) by quadrature of the density.
    let params = BetaParams::new(2.0, 6.0).unwrap();
    let median = beta_ppf(0.5, &params).unwrap();
    let mass = simpson(|t| 42.0 * t * (1.0 - t).powi(5), 0.0, median, 2000);
    ensure!((mass - 0.5).abs() < 1e-9, "quadrature mass below the median is {mass}");
    Ok(format!("worst round-trip error {worst:.1e} over 6 pairs; Beta(1,1) identity"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("size table anchor", size_table, Duration::from_secs(1)),
        ("encode/decode bijectivity", bijectivity, Duration::from_secs(30)),
        ("quantizer near-optimality", near_optimality, Duration::from_secs(60)),
        ("Beta amplitude model (KS)", beta_amplitude_model, Duration::from_secs(10)),
        ("QSNR ordering", qsnr_ordering, Duration::from_secs(120)),
        ("error feedback", error_feedback, Duration::from_secs(120)),
        ("bit accounting", bit_accounting, Duration::from_secs(5)),
        ("determinism", determinism, Duration::from_secs(60)),
        ("Beta CDF/PPF accuracy", beta_accuracy, Duration::from_secs(10)),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *budget => Err(format!("{detail}; took {elapsed:.1?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} ({elapsed:.2?}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name} ({elapsed:.2?}): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
