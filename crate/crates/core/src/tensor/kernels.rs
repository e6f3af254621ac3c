//! Buffer-level kernels behind the tensor ops. Row-major, no graph logic.

use super::fft::{transform_block, Sign};

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style right-aligned broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out` (right-aligned), zero on broadcast axes.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let off = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                own[i - off]
            }
        })
        .collect()
}

/// Calls `f(out_index, a_offset, b_offset)` for every element of `out`.
fn walk2(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    if out.is_empty() {
        f(0, 0, 0);
        return;
    }
    let rank = out.len();
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    loop {
        let (mut pa, mut pb) = (oa, ob);
        for _ in 0..inner {
            f(o, pa, pb);
            o += 1;
            pa += ia;
            pb += ib;
        }
        // carry into outer axes
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * idx[d];
            ob -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn binary(a: &[f64], ash: &[usize], b: &[f64], bsh: &[usize], out: &[usize], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let n: usize = out.iter().product();
    if ash == bsh {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    if b.len() == 1 {
        let y = b[0];
        if a.len() == n {
            return a.iter().map(|&x| f(x, y)).collect();
        }
    }
    if a.len() == 1 && b.len() == n {
        let x = a[0];
        return b.iter().map(|&y| f(x, y)).collect();
    }
    // b is a trailing block repeated over a's leading axes (bias add)
    if a.len() == n && !b.is_empty() && is_trailing(bsh, out) {
        let bn = b.len();
        let mut v = Vec::with_capacity(n);
        for chunk in a.chunks(bn) {
            v.extend(chunk.iter().zip(b).map(|(&x, &y)| f(x, y)));
        }
        return v;
    }
    if b.len() == n && !a.is_empty() && is_trailing(ash, out) {
        let an = a.len();
        let mut v = Vec::with_capacity(n);
        for chunk in b.chunks(an) {
            v.extend(a.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
        }
        return v;
    }
    let sa = aligned_strides(ash, out);
    let sb = aligned_strides(bsh, out);
    let mut v = vec![0.0; n];
    walk2(out, &sa, &sb, |o, pa, pb| v[o] = f(a[pa], b[pb]));
    v
}

/// True when `shape` (ignoring leading unit axes) equals the tail of `out`.
fn is_trailing(shape: &[usize], out: &[usize]) -> bool {
    let trimmed: &[usize] = {
        let first = shape.iter().position(|&d| d != 1).unwrap_or(shape.len());
        &shape[first..]
    };
    trimmed.len() <= out.len() && out[out.len() - trimmed.len()..] == *trimmed
}

pub(crate) fn broadcast_to(x: &[f64], shape: &[usize], out: &[usize]) -> Vec<f64> {
    let n: usize = out.iter().product();
    if shape == out {
        return x.to_vec();
    }
    if x.len() == 1 {
        return vec![x[0]; n];
    }
    if is_trailing(shape, out) {
        let mut v = Vec::with_capacity(n);
        while v.len() < n {
            v.extend_from_slice(x);
        }
        return v;
    }
    let sx = aligned_strides(shape, out);
    let zero = vec![0; out.len()];
    let mut v = vec![0.0; n];
    walk2(out, &sx, &zero, |o, p, _| v[o] = x[p]);
    v
}

/// Sums `x` (of shape `shape`) down to the broadcast-compatible `target`.
pub(crate) fn sum_to(x: &[f64], shape: &[usize], target: &[usize]) -> Vec<f64> {
    let tn: usize = target.iter().product();
    if shape == target {
        return x.to_vec();
    }
    if tn == 1 {
        return vec![pairwise_sum(x)];
    }
    let mut v = vec![0.0; tn];
    if is_trailing(target, shape) {
        for chunk in x.chunks(tn) {
            for (acc, &y) in v.iter_mut().zip(chunk) {
                *acc += y;
            }
        }
        return v;
    }
    let st = aligned_strides(target, shape);
    let zero = vec![0; shape.len()];
    walk2(shape, &st, &zero, |o, p, _| v[p] += x[o]);
    v
}

/// Pairwise (cascade) summation.
pub(crate) fn pairwise_sum(x: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if x.len() <= BLOCK {
        return x.iter().sum();
    }
    let mid = x.len() / 2;
    pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
}

/// `c += a (m x k) * b (k x n)`, row-major, in 4 x 8 register tiles.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
        // SAFETY: the required target features were detected at runtime.
        unsafe { gemm_fma(a, b, c, m, k, n) };
        return;
    }
    gemm_body::<false>(a, b, c, m, k, n);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_fma(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_body::<true>(a, b, c, m, k, n);
}

#[inline(always)]
fn madd<const FMA: bool>(a: f64, b: f64, c: f64) -> f64 {
    if FMA {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

const MR: usize = 4;
const NR: usize = 8;
const KC: usize = 256;

#[inline(always)]
fn gemm_body<const FMA: bool>(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let a = &a[..m * k];
    let b = &b[..k * n];
    let c = &mut c[..m * n];
    let mut p0 = 0;
    while p0 < k {
        let kc = KC.min(k - p0);
        let mut i = 0;
        while i + MR <= m {
            let rows: [&[f64]; MR] = std::array::from_fn(|r| &a[(i + r) * k + p0..(i + r) * k + p0 + kc]);
            let mut j = 0;
            while j + NR <= n {
                let mut acc = [[0.0f64; NR]; MR];
                for pp in 0..kc {
                    let off = (p0 + pp) * n + j;
                    let bv: &[f64; NR] = b[off..off + NR].try_into().unwrap();
                    for r in 0..MR {
                        let av = rows[r][pp];
                        for q in 0..NR {
                            acc[r][q] = madd::<FMA>(av, bv[q], acc[r][q]);
                        }
                    }
                }
                for (r, acc_r) in acc.iter().enumerate() {
                    let row = &mut c[(i + r) * n + j..(i + r) * n + j + NR];
                    for q in 0..NR {
                        row[q] += acc_r[q];
                    }
                }
                j += NR;
            }
            if j < n {
                for (r, arow) in rows.iter().enumerate() {
                    let crow = &mut c[(i + r) * n + j..(i + r + 1) * n];
                    for (pp, &av) in arow.iter().enumerate() {
                        let off = (p0 + pp) * n;
                        for (cv, &bv) in crow.iter_mut().zip(&b[off + j..off + n]) {
                            *cv = madd::<FMA>(av, bv, *cv);
                        }
                    }
                }
            }
            i += MR;
        }
        for r in i..m {
            let crow = &mut c[r * n..(r + 1) * n];
            for pp in 0..kc {
                let av = a[r * k + p0 + pp];
                let off = (p0 + pp) * n;
                for (cv, &bv) in crow.iter_mut().zip(&b[off..off + n]) {
                    *cv = madd::<FMA>(av, bv, *cv);
                }
            }
        }
        p0 += kc;
    }
}

/// Batched matmul with broadcast batch axes. Returns (data, out_shape) or None on mismatch.
pub(crate) fn matmul(a: &[f64], ash: &[usize], b: &[f64], bsh: &[usize]) -> Option<(Vec<f64>, Vec<usize>)> {
    if ash.len() < 2 || bsh.len() < 2 {
        return None;
    }
    let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
    let (k2, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
    if k != k2 {
        return None;
    }
    let abatch = &ash[..ash.len() - 2];
    let bbatch = &bsh[..bsh.len() - 2];
    let batch = broadcast_shape(abatch, bbatch)?;
    let mut out_shape = batch.clone();
    out_shape.extend([m, n]);
    let nb: usize = batch.iter().product();
    let mut c = vec![0.0; nb * m * n];
    if bbatch.iter().product::<usize>() == 1 && abatch.iter().product::<usize>() == nb {
        // weight-style right operand: one big GEMM
        gemm_acc(a, b, &mut c, nb * m, k, n);
        return Some((c, out_shape));
    }
    let sa = aligned_strides(abatch, &batch);
    let sb = aligned_strides(bbatch, &batch);
    let (asz, bsz, csz) = (m * k, k * n, m * n);
    if batch.is_empty() {
        gemm_acc(a, b, &mut c, m, k, n);
    } else {
        walk2(&batch, &sa, &sb, |o, pa, pb| {
            gemm_acc(
                &a[pa * asz..(pa + 1) * asz],
                &b[pb * bsz..(pb + 1) * bsz],
                &mut c[o * csz..(o + 1) * csz],
                m,
                k,
                n,
            );
        });
    }
    Some((c, out_shape))
}

/// Axis permutation; `width` words per element (2 for complex).
pub(crate) fn permute(x: &[f64], shape: &[usize], perm: &[usize], width: usize) -> (Vec<f64>, Vec<usize>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src = strides(shape);
    let ps: Vec<usize> = perm.iter().map(|&p| src[p]).collect();
    let zero = vec![0; shape.len()];
    let n: usize = shape.iter().product();
    let mut v = vec![0.0; n * width];
    if width == 1 {
        walk2(&out_shape, &ps, &zero, |o, p, _| v[o] = x[p]);
    } else {
        walk2(&out_shape, &ps, &zero, |o, p, _| {
            v[o * width..(o + 1) * width].copy_from_slice(&x[p * width..(p + 1) * width]);
        });
    }
    (v, out_shape)
}

/// (outer, axis_len, inner) decomposition around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn slice_axis(x: &[f64], shape: &[usize], axis: usize, start: usize, len: usize, width: usize) -> Vec<f64> {
    let (outer, n, inner) = split_axis(shape, axis);
    let row = inner * width;
    let mut v = Vec::with_capacity(outer * len * row);
    for o in 0..outer {
        let base = (o * n + start) * row;
        v.extend_from_slice(&x[base..base + len * row]);
    }
    v
}

pub(crate) fn pad_axis(x: &[f64], shape: &[usize], axis: usize, start: usize, total: usize, width: usize) -> Vec<f64> {
    let (outer, n, inner) = split_axis(shape, axis);
    let row = inner * width;
    let mut v = vec![0.0; outer * total * row];
    for o in 0..outer {
        let dst = (o * total + start) * row;
        v[dst..dst + n * row].copy_from_slice(&x[o * n * row..(o + 1) * n * row]);
    }
    v
}

pub(crate) fn concat_axis(parts: &[(&[f64], &[usize])], axis: usize, width: usize) -> Vec<f64> {
    let (outer, _, inner) = split_axis(parts[0].1, axis);
    let row = inner * width;
    let total: usize = parts.iter().map(|(d, _)| d.len()).sum();
    let mut v = Vec::with_capacity(total);
    for o in 0..outer {
        for (d, s) in parts {
            let n = s[axis];
            v.extend_from_slice(&d[o * n * row..(o + 1) * n * row]);
        }
    }
    v
}

/// Softmax along `axis` with max subtraction.
pub(crate) fn softmax(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = split_axis(shape, axis);
    let mut v = vec![0.0; x.len()];
    let mut line = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let mut mx = f64::NEG_INFINITY;
            for j in 0..n {
                mx = mx.max(x[at(j)]);
            }
            for j in 0..n {
                let e = (x[at(j)] - mx).exp();
                v[at(j)] = e;
                line[j] = e;
            }
            let s = ordered_sum(&mut line);
            for j in 0..n {
                v[at(j)] /= s;
            }
        }
    }
    v
}

/// Sum of the values in ascending order, so the result does not depend on
/// their arrangement.
fn ordered_sum(line: &mut [f64]) -> f64 {
    if line.len() > 2 {
        line.sort_unstable_by(f64::total_cmp);
    }
    line.iter().sum()
}

/// Sum along `axis`, keeping it with length 1. Each line is summed in sorted
/// order, which makes the result invariant to permutations along `axis`.
pub(crate) fn sum_axis(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = split_axis(shape, axis);
    let mut v = vec![0.0; outer * inner];
    let mut line = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            for (j, slot) in line.iter_mut().enumerate() {
                *slot = x[(o * n + j) * inner + i];
            }
            v[o * inner + i] = ordered_sum(&mut line);
        }
    }
    v
}

/// Scaled DFT of interleaved complex data along each of `axes`.
pub(crate) fn fourier(x: &[f64], shape: &[usize], axes: &[usize], sign: Sign, scale: f64) -> Vec<f64> {
    let total = x.len() / 2;
    let mut re: Vec<f64> = x.iter().step_by(2).copied().collect();
    let mut im: Vec<f64> = x.iter().skip(1).step_by(2).copied().collect();
    for &axis in axes {
        let (outer, n, inner) = split_axis(shape, axis);
        let block = n * inner;
        for o in 0..outer {
            let range = o * block..(o + 1) * block;
            transform_block(&mut re[range.clone()], &mut im[range], n, inner, sign);
        }
    }
    let mut out = Vec::with_capacity(total * 2);
    for (r, i) in re.into_iter().zip(im) {
        out.push(r * scale);
        out.push(i * scale);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
    }

    #[test]
    fn general_broadcast_matches_manual() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x1x3
        let b = vec![10.0, 20.0]; // 2x1
        let out = binary(&a, &[2, 1, 3], &b, &[2, 1], &[2, 2, 3], |x, y| x + y);
        assert_eq!(
            out,
            vec![10., 11., 12., 20., 21., 22., 13., 14., 15., 23., 24., 25.]
        );
        let back = sum_to(&out, &[2, 2, 3], &[2, 1]);
        assert_eq!(back, vec![75.0, 135.0]);
    }

    #[test]
    fn permute_transposes() {
        let x: Vec<f64> = (0..6).map(|v| v as f64).collect();
        let (y, s) = permute(&x, &[2, 3], &[1, 0], 1);
        assert_eq!(s, vec![3, 2]);
        assert_eq!(y, vec![0., 3., 1., 4., 2., 5.]);
    }
}
