//! Small dense helpers on `f64` slices. Points live in `Vec<f64>`, square
//! matrices are row-major `Vec<f64>` of length `d*d`.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// y += s * x
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn scaled(x: &[f64], s: f64) -> Vec<f64> {
    x.iter().map(|v| v * s).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// out[i*n + j] += s * a[i] * b[j]
pub fn outer_acc(out: &mut [f64], s: f64, a: &[f64], b: &[f64]) {
    let n = b.len();
    debug_assert_eq!(out.len(), a.len() * n);
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[i * n + j] += s * ai * bj;
        }
    }
}

/// (M v)_i = sum_j M[i*d+j] v[j]
pub fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    debug_assert_eq!(m.len(), d * d);
    (0..d).map(|i| dot(&m[i * d..(i + 1) * d], v)).collect()
}

/// (M^T v)_j = sum_i M[i*d+j] v[i]
pub fn mat_t_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    debug_assert_eq!(m.len(), d * d);
    let mut out = vec![0.0; d];
    for (i, vi) in v.iter().enumerate() {
        for j in 0..d {
            out[j] += m[i * d + j] * vi;
        }
    }
    out
}

/// Frobenius inner product A : B = sum_ij A_ij B_ij.
pub fn frobenius_dot(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b)
}

pub fn frobenius_norm(a: &[f64]) -> f64 {
    norm(a)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Sum in a canonical (value-sorted) order so the result does not depend on
/// the order in which the terms were supplied. Used for measure averages so
/// that permuting an ensemble permutes trajectories bit-exactly.
pub fn stable_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

/// Component-wise permutation-invariant mean of `n`-dimensional rows.
pub fn stable_mean_rows<'a, I>(rows: I, dim: usize) -> Vec<f64>
where
    I: Iterator<Item = &'a [f64]> + Clone,
{
    let count = rows.clone().count();
    assert!(count > 0, "mean of an empty collection");
    let mut out = Vec::with_capacity(dim);
    let mut column = Vec::with_capacity(count);
    for j in 0..dim {
        column.clear();
        column.extend(rows.clone().map(|r| r[j]));
        out.push(stable_sum(&mut column) / count as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mat_vec_and_transpose() {
        let m = vec![1.0, 2.0, 3.0, 4.0]; // [[1,2],[3,4]]
        assert_eq!(mat_vec(&m, &[1.0, 1.0]), vec![3.0, 7.0]);
        assert_eq!(mat_t_vec(&m, &[1.0, 1.0]), vec![4.0, 6.0]);
    }

    #[test]
    fn stable_sum_is_order_independent() {
        let mut a = vec![1e16, 1.0, -1e16, 0.5, 3.25];
        let mut b = vec![0.5, -1e16, 3.25, 1e16, 1.0];
        assert_eq!(stable_sum(&mut a).to_bits(), stable_sum(&mut b).to_bits());
    }

    #[test]
    fn stable_mean_matches_plain_mean_on_exact_values() {
        let rows = [vec![1.0, 2.0], vec![3.0, 4.0]];
        let mean = stable_mean_rows(rows.iter().map(|r| r.as_slice()), 2);
        assert_eq!(mean, vec![2.0, 3.0]);
    }
}
