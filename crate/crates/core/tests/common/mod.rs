//! Reference implementations shared by the integration tests. Each one is
//! written independently of the library code it checks.
#![allow(dead_code)]

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use pvq::Matrix;

/// All integer vectors in `[-k, k]^d` with L1 norm `k`, by brute force.
pub fn brute_force_points(d: usize, k: usize) -> Vec<Vec<i32>> {
    let k = k as i32;
    let side = (2 * k + 1) as usize;
    let total = side.pow(d as u32);
    let mut out = Vec::new();
    for mut idx in 0..total {
        let mut v = Vec::with_capacity(d);
        for _ in 0..d {
            v.push((idx % side) as i32 - k);
            idx /= side;
        }
        if v.iter().map(|x| x.abs()).sum::<i32>() == k {
            out.push(v);
        }
    }
    out
}

pub fn binomial(n: u64, r: u64) -> BigUint {
    if r > n {
        return BigUint::zero();
    }
    let mut acc = BigUint::one();
    for i in 0..r {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// `N(d, k) = sum_i 2^i C(d, i) C(k - 1, i - 1)`: choose the `i` nonzero
/// positions, their signs, and a composition of `k` into `i` positive parts.
pub fn closed_form_count(d: usize, k: usize) -> BigUint {
    if k == 0 {
        return BigUint::one();
    }
    (1..=d.min(k) as u64)
        .map(|i| (BigUint::one() << i as usize) * binomial(d as u64, i) * binomial(k as u64 - 1, i - 1))
        .sum()
}

/// Literal encoder: each block of `|x_i| = j` values is skipped one `j` at a
/// time, in `u128`.
pub fn literal_encode(p: &[i32]) -> u128 {
    let d = p.len();
    let mut k: usize = p.iter().map(|x| x.unsigned_abs() as usize).sum();
    let n = |d: usize, k: usize| -> u128 { closed_form_count(d, k).try_into().unwrap() };
    let mut code = 0u128;
    for (i, &x) in p.iter().enumerate() {
        if k == 0 {
            break;
        }
        let rest = d - i - 1;
        let a = x.unsigned_abs() as usize;
        if a == 0 {
            continue;
        }
        code += n(rest, k);
        for j in 1..a {
            code += 2 * n(rest, k - j);
        }
        if x < 0 {
            code += n(rest, k - a);
        }
        k -= a;
    }
    code
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, gaussian_vec(rng, rows * cols)).unwrap()
}

/// `X^T X / m` for `X = Z M`, `Z` Gaussian `m x c` and `M = I + mix G / sqrt(c)`,
/// which gives a full-rank PSD matrix with correlated features.
pub fn random_psd(rng: &mut impl Rng, c: usize, m: usize, mix: f64) -> Matrix {
    let z = gaussian_matrix(rng, m, c);
    let g = gaussian_matrix(rng, c, c);
    let mixing = Matrix::from_fn(c, c, |i, j| if i == j { 1.0 } else { 0.0 } + mix * g.get(i, j) / (c as f64).sqrt());
    let x = z.matmul(&mixing).unwrap();
    let mut h = x.transpose().matmul(&x).unwrap();
    h.as_mut_slice().iter_mut().for_each(|v| *v /= m as f64);
    Matrix::from_fn(c, c, |i, j| 0.5 * (h.get(i, j) + h.get(j, i)))
}

/// `sum_r (w_r - v_r) H (w_r - v_r)^T`, entry by entry.
pub fn reference_proxy_loss(w: &Matrix, v: &Matrix, h: &Matrix) -> f64 {
    let mut total = 0.0;
    for r in 0..w.rows() {
        let d: Vec<f64> = (0..w.cols()).map(|j| w.get(r, j) - v.get(r, j)).collect();
        for i in 0..d.len() {
            for j in 0..d.len() {
                total += d[i] * h.get(i, j) * d[j];
            }
        }
    }
    total
}

/// `I_x(a, b)` for integer shapes: `P(Binomial(a + b - 1, x) >= a)`.
pub fn integer_beta_cdf(x: f64, a: u64, b: u64) -> f64 {
    let n = a + b - 1;
    (a..=n)
        .map(|j| {
            let c: f64 = binomial(n, j).to_string().parse().unwrap();
            c * x.powi(j as i32) * (1.0 - x).powi((n - j) as i32)
        })
        .sum()
}

/// Composite Simpson integral of `f` over `[lo, hi]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `|u / |u| - v / |v||^2`.
pub fn spherical_error(u: &[f64], v: &[f64]) -> f64 {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.iter().zip(v).map(|(a, b)| (a / nu - b / nv).powi(2)).sum()
}
