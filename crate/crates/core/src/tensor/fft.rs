//! One-dimensional discrete Fourier transforms on complex buffers.
//!
//! `transform` picks an iterative radix-2 Cooley-Tukey FFT for power-of-two
//! lengths and a direct O(n^2) sum otherwise. Both are exposed so they can be
//! cross-checked.

use std::f64::consts::PI;

pub use num_complex::Complex64;

/// Exponent sign of the transform kernel `exp(sign * 2 pi i jk / n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    /// `-1`: the forward (analysis) transform.
    Forward,
    /// `+1`: the unnormalized inverse (synthesis) transform.
    Backward,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Forward => -1.0,
            Sign::Backward => 1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Forward => Sign::Backward,
            Sign::Backward => Sign::Forward,
        }
    }
}

fn twiddles(n: usize, sign: Sign) -> Vec<Complex64> {
    let s = sign.value();
    (0..n)
        .map(|m| Complex64::from_polar(1.0, s * 2.0 * PI * m as f64 / n as f64))
        .collect()
}

/// Direct evaluation of `out[k] = sum_j x[j] exp(sign 2 pi i jk/n)`.
pub fn naive_dft(input: &[Complex64], sign: Sign) -> Vec<Complex64> {
    let n = input.len();
    let w = twiddles(n, sign);
    naive_with_table(input, &w)
}

fn naive_with_table(input: &[Complex64], w: &[Complex64]) -> Vec<Complex64> {
    let n = input.len();
    (0..n)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut idx = 0usize;
            for x in input {
                acc += x * w[idx];
                idx += k;
                if idx >= n {
                    idx -= n;
                }
            }
            acc
        })
        .collect()
}

/// In-place radix-2 FFT. Panics unless `data.len()` is a power of two.
pub fn radix2_fft(data: &mut [Complex64], sign: Sign) {
    let n = data.len();
    assert!(n.is_power_of_two(), "radix-2 FFT needs a power-of-two length, got {n}");
    let w = twiddles(n, sign);
    radix2_with_table(data, &w);
}

fn radix2_with_table(data: &mut [Complex64], w: &[Complex64]) {
    let n = data.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let t = data[start + k + half] * w[k * step];
                let u = data[start + k];
                data[start + k] = u + t;
                data[start + k + half] = u - t;
            }
        }
        len <<= 1;
    }
}

/// Reusable plan for repeated transforms of one length and sign.
pub struct Plan {
    table: Vec<Complex64>,
    pow2: bool,
}

impl Plan {
    pub fn new(n: usize, sign: Sign) -> Self {
        Plan {
            table: twiddles(n, sign),
            pow2: n.is_power_of_two(),
        }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// `exp(sign 2 pi i k / n)` for `k in 0..n`.
    pub fn table(&self) -> &[Complex64] {
        &self.table
    }

    /// Transforms `line` in place; `scratch` must have the same length.
    pub fn run(&self, line: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        if self.pow2 {
            radix2_with_table(line, &self.table);
        } else {
            scratch.clear();
            scratch.extend_from_slice(&naive_with_table(line, &self.table));
            line.copy_from_slice(scratch);
        }
    }
}

/// Smallest prime factor of `n >= 2`.
fn smallest_factor(n: usize) -> usize {
    if n % 2 == 0 {
        return 2;
    }
    let mut f = 3;
    while f * f <= n {
        if n % f == 0 {
            return f;
        }
        f += 2;
    }
    n
}

/// In-place transform of a block of `n` elements, each a contiguous run of `inner`
/// complex values held in split planes (`re[j * inner + i]`).
///
/// Decimation in time over the prime factors of `n`: radix-2 stages for powers of
/// two, direct DFT for prime lengths.
pub(crate) fn transform_block(re: &mut [f64], im: &mut [f64], n: usize, inner: usize, sign: Sign) {
    if n <= 1 {
        return;
    }
    let p = smallest_factor(n);
    if p == n {
        direct_block(re, im, n, inner, sign);
        return;
    }
    let m = n / p;
    let row = m * inner;
    // Sub-sequence r holds elements r, r + p, r + 2p, ...
    let mut sr = vec![0.0; n * inner];
    let mut si = vec![0.0; n * inner];
    for r in 0..p {
        for q in 0..m {
            let src = (r + p * q) * inner;
            let dst = r * row + q * inner;
            sr[dst..dst + inner].copy_from_slice(&re[src..src + inner]);
            si[dst..dst + inner].copy_from_slice(&im[src..src + inner]);
        }
        transform_block(&mut sr[r * row..(r + 1) * row], &mut si[r * row..(r + 1) * row], m, inner, sign);
    }
    let step = sign.value() * 2.0 * PI / n as f64;
    for r in 1..p {
        for k in 1..m {
            let (s, c) = (step * (r * k) as f64).sin_cos();
            let off = r * row + k * inner;
            for i in off..off + inner {
                let (a, b) = (sr[i], si[i]);
                sr[i] = a * c - b * s;
                si[i] = a * s + b * c;
            }
        }
    }
    // out[k + m q] = sum_r w_p^{rq} t_r[k]
    let wp = twiddles(p, sign);
    re.iter_mut().for_each(|v| *v = 0.0);
    im.iter_mut().for_each(|v| *v = 0.0);
    for q in 0..p {
        for r in 0..p {
            let w = wp[(r * q) % p];
            for k in 0..m {
                let dst = (k + m * q) * inner;
                let src = r * row + k * inner;
                let (yr, yi) = (&mut re[dst..dst + inner], &mut im[dst..dst + inner]);
                let (ar, ai) = (&sr[src..src + inner], &si[src..src + inner]);
                for i in 0..inner {
                    yr[i] += w.re * ar[i] - w.im * ai[i];
                    yi[i] += w.re * ai[i] + w.im * ar[i];
                }
            }
        }
    }
}

fn direct_block(re: &mut [f64], im: &mut [f64], n: usize, inner: usize, sign: Sign) {
    let w = twiddles(n, sign);
    let mut yr = vec![0.0; n * inner];
    let mut yi = vec![0.0; n * inner];
    for k in 0..n {
        let (or, oi) = (&mut yr[k * inner..(k + 1) * inner], &mut yi[k * inner..(k + 1) * inner]);
        for j in 0..n {
            let t = w[(j * k) % n];
            let (ar, ai) = (&re[j * inner..(j + 1) * inner], &im[j * inner..(j + 1) * inner]);
            for i in 0..inner {
                or[i] += t.re * ar[i] - t.im * ai[i];
                oi[i] += t.re * ai[i] + t.im * ar[i];
            }
        }
    }
    re.copy_from_slice(&yr);
    im.copy_from_slice(&yi);
}

/// Mixed-strategy transform of one line.
pub fn transform(input: &[Complex64], sign: Sign) -> Vec<Complex64> {
    let mut out = input.to_vec();
    let mut scratch = Vec::new();
    Plan::new(input.len(), sign).run(&mut out, &mut scratch);
    out
}
