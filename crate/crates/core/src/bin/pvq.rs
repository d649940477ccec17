use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use pvq::amplitude::BetaParams;
use pvq::bench::{self, QsnrReport};
use pvq::io::{self, DenseTensor, Dtype, PVQT_HEADER_LEN};
use pvq::pipeline::{self, HessianState, PvqConfig, QuantizedTensor, REPORTED_FLOAT_BITS, STORED_FLOAT_BITS};
use pvq::selftest;
use pvq::{Matrix, SizeTable};

#[derive(Parser)]
#[command(name = "pvq", version, about = "Pyramid vector quantization of weight tensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a 2-D DTF1 tensor into a PVQT file.
    Quantize(QuantizeArgs),
    /// Reconstruct a float32 DTF1 tensor from a PVQT file.
    Dequantize {
        #[arg(long)]
        input: PathBuf,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Print the header, bit rates and payload checksums of a PVQT file.
    Info {
        #[arg(long)]
        input: PathBuf,
        /// Width at which full-precision amplitudes are counted in `bpw`.
        #[arg(long, default_value_t = REPORTED_FLOAT_BITS)]
        report_amplitude_bits: u32,
    },
    /// Synthetic benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Exhaustively verify encode/decode and the quantizer on small pyramids.
    Selftest {
        #[arg(long, default_value_t = 4)]
        max_d: usize,
        #[arg(long, default_value_t = 8)]
        max_k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the size table N(d, k) and V(d, k) as CSV.
    Table {
        #[arg(long)]
        groupsize: usize,
        #[arg(long)]
        pulses: usize,
    },
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    input: PathBuf,
    /// M x C calibration activations; enables Hessian error feedback.
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long)]
    groupsize: usize,
    /// Direction bits per weight; times the groupsize must be an integer.
    #[arg(long)]
    direction_bits: f64,
    /// Amplitude bits per group, 0 for full-precision amplitudes.
    #[arg(long, default_value_t = 0)]
    amplitude_bits: u32,
    /// Randomized Hadamard rotation of rows and columns.
    #[arg(long)]
    coherence: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = pipeline::DEFAULT_DAMPENING)]
    dampening: f64,
    /// Width at which full-precision amplitudes are counted in `bpw`. They
    /// are stored as float32; `stored_bpw` always counts 32.
    #[arg(long, default_value_t = REPORTED_FLOAT_BITS)]
    report_amplitude_bits: u32,
    #[arg(short = 'o', long = "output")]
    output: PathBuf,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// QSNR on iid standard Gaussian groups, as CSV.
    Qsnr {
        #[arg(long, value_delimiter = ',', default_value = "pvq,rtn")]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
        groupsize: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
        bpw: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write CSV here instead of stdout.
        #[arg(short = 'o', long = "output")]
        output: Option<PathBuf>,
    },
    /// Kolmogorov-Smirnov test of group energy shares against the Beta model.
    Ks {
        #[arg(long, default_value_t = 4)]
        groupsize: usize,
        #[arg(long, default_value_t = 4)]
        groups: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Test against Beta(a, b) instead of the model distribution.
        #[arg(long, value_delimiter = ',')]
        against: Option<Vec<f64>>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("PVQ_THREADS") else { return Ok(()) };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("PVQ_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    Ok(())
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    configure_threads()?;
    match cli.command {
        Command::Quantize(args) => quantize(args)?,
        Command::Dequantize { input, output } => dequantize(&input, &output)?,
        Command::Info { input, report_amplitude_bits } => info(&input, report_amplitude_bits)?,
        Command::Bench(cmd) => bench_cmd(cmd)?,
        Command::Selftest { max_d, max_k, seed } => return selftest_cmd(max_d, max_k, seed),
        Command::Table { groupsize, pulses } => table(groupsize, pulses),
    }
    Ok(ExitCode::SUCCESS)
}

fn read_matrix(path: &Path, what: &str) -> Result<Matrix> {
    let t = io::read_dtf(path).with_context(|| format!("reading {what}"))?;
    t.to_matrix().with_context(|| format!("{what} {}", path.display()))
}

/// Bits per weight actually occupied by the file.
fn file_bpw(len: usize, weights: usize) -> f64 {
    len as f64 * 8.0 / weights as f64
}

/// Payload bits per weight with amplitudes and row norms at their stored width.
fn stored_bpw(qt: &QuantizedTensor) -> f64 {
    let row_norm = if qt.config.amplitude_bits > 0 { STORED_FLOAT_BITS as f64 / qt.cols() as f64 } else { 0.0 };
    qt.nominal_bpw(STORED_FLOAT_BITS) + row_norm
}

fn quantize(a: QuantizeArgs) -> Result<()> {
    let w = read_matrix(&a.input, "input")?;
    let mut config = PvqConfig::from_direction_bits(a.groupsize, a.direction_bits)?
        .with_amplitude_bits(a.amplitude_bits)
        .with_dampening(a.dampening);
    if a.coherence {
        config = config.with_coherence(a.seed);
    }

    let hessian: Option<HessianState> = match &a.calib {
        Some(path) => {
            let x = read_matrix(path, "calibration")?;
            if x.cols() != w.cols() {
                bail!("calibration has {} columns, input has {}", x.cols(), w.cols());
            }
            Some(pipeline::estimate_hessian(&x, a.dampening)?)
        }
        None => None,
    };

    let qt = match &hessian {
        Some(h) => {
            let plain = pipeline::quantize_layer(&w, &config, None)?;
            let fed = pipeline::quantize_layer(&w, &config.clone().with_hessian_feedback(true), Some(h))?;
            let before = pipeline::proxy_loss(&w, &pipeline::dequantize_layer(&plain)?, h.gram())?;
            let after = pipeline::proxy_loss(&w, &pipeline::dequantize_layer(&fed)?, h.gram())?;
            println!("proxy_loss_without_feedback={before}");
            println!("proxy_loss_with_feedback={after}");
            fed
        }
        None => pipeline::quantize_layer(&w, &config, None)?,
    };

    let bytes = io::encode_pvqt(&qt);
    io::write_atomic(&a.output, &bytes)?;
    println!("shape={}x{}", qt.rows, qt.cols());
    println!("K={}", qt.pulses);
    println!("bits_per_group={}", qt.config.bits_per_group);
    println!("bpw={}", qt.nominal_bpw(a.report_amplitude_bits));
    println!("stored_bpw={}", stored_bpw(&qt));
    println!("file_bpw={}", file_bpw(bytes.len(), qt.weight_count()));
    Ok(())
}

fn dequantize(input: &Path, output: &Path) -> Result<()> {
    let qt = io::read_pvqt(input)?;
    let w: Matrix = pipeline::dequantize_layer(&qt)?;
    io::write_dtf(output, &DenseTensor::from_matrix(&w, Dtype::F32))?;
    println!("shape={}x{}", w.rows(), w.cols());
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn info(input: &Path, report_bits: u32) -> Result<()> {
    let bytes = io::read_file(input)?;
    let qt = io::decode_pvqt(&bytes)?;
    let c = &qt.config;
    let codes_end = PVQT_HEADER_LEN + qt.direction_bytes();
    println!("format=PVQT version={}", io::PVQT_VERSION);
    println!("shape={}x{}", qt.rows, qt.cols());
    println!("groups={}", qt.groups);
    println!("groupsize={}", c.groupsize);
    println!("K={}", qt.pulses);
    println!("bits_per_group={}", c.bits_per_group);
    println!("direction_bits={}", c.direction_bpw());
    println!("amplitude_bits={}", c.amplitude_bits);
    match c.coherence_seed {
        Some(seed) => println!("coherence=on seed={seed}"),
        None => println!("coherence=off"),
    }
    println!("hessian={}", if qt.hessian_used { "on" } else { "off" });
    println!("bpw={}", qt.nominal_bpw(report_bits));
    println!("stored_bpw={}", stored_bpw(&qt));
    println!("file_bpw={}", file_bpw(bytes.len(), qt.weight_count()));
    println!("file_bytes={}", bytes.len());
    println!("direction_sha256={}", hex(&Sha256::digest(&bytes[PVQT_HEADER_LEN..codes_end])));
    println!("amplitude_sha256={}", hex(&Sha256::digest(&bytes[codes_end..])));
    Ok(())
}

fn bench_cmd(cmd: BenchCommand) -> Result<()> {
    match cmd {
        BenchCommand::Qsnr { methods, groupsize, bpw, samples, seed, output } => {
            let mut reports: Vec<QsnrReport> = Vec::new();
            for name in &methods {
                let method = bench::quantizer_by_name(name)?;
                for &d in &groupsize {
                    let run = bench::run_qsnr(method, d, &bpw, samples, seed)?;
                    for s in &run.skipped {
                        eprintln!("skipped method={} D={} bpw={}: {}", s.method, s.groupsize, s.bpw, s.reason);
                    }
                    reports.extend(run.reports);
                }
            }
            let csv = bench::emit_csv(&reports);
            match output {
                Some(path) => io::write_atomic(&path, csv.as_bytes())?,
                None => print!("{csv}"),
            }
        }
        BenchCommand::Ks { groupsize, groups, samples, seed, against } => {
            let reference = match against.as_deref() {
                None => None,
                Some(&[a, b]) => Some(BetaParams::new(a, b)?),
                Some(other) => bail!("--against takes two values a,b, got {}", other.len()),
            };
            let r = bench::run_beta_ks(groupsize, groups, samples, seed, reference)?;
            println!(
                "D={} G={} reference=Beta({}, {}) samples={} seed={} ks={} critical={} result={}",
                r.groupsize,
                r.groups,
                r.reference.alpha(),
                r.reference.beta(),
                r.samples,
                r.seed,
                r.statistic,
                r.critical,
                if r.passes() { "pass" } else { "fail" }
            );
        }
    }
    Ok(())
}

fn selftest_cmd(max_d: usize, max_k: usize, seed: u64) -> Result<ExitCode> {
    if max_d == 0 || max_k == 0 {
        bail!("--max-d and --max-k must be at least 1");
    }
    let report = selftest::run_selftest(max_d, max_k, seed);
    for f in &report.failures {
        println!("FAIL d={} k={} point={:?} code={}: {}", f.dim, f.pulses, f.point, f.code, f.reason);
    }
    println!(
        "selftest cases={} checks={} passed={} failures={}",
        report.cases,
        report.checks,
        report.checks.saturating_sub(report.failures.len()),
        report.failures.len()
    );
    Ok(if report.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn table(groupsize: usize, pulses: usize) {
    let t = SizeTable::build(groupsize, pulses);
    println!("d,k,N,V");
    for (d, k, n, v) in t.rows() {
        println!("{d},{k},{n},{v}");
    }
}
