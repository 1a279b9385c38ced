//! Dense helpers for the small vectors and matrices used throughout.
//!
//! Matrices are stored row-major in a flat `Vec<f64>`.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `out = A x` for a `rows × cols` matrix.
pub fn matvec_into(a: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        out[i] = dot(&a[i * cols..(i + 1) * cols], x);
    }
}

pub fn matvec(a: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows];
    matvec_into(a, rows, cols, x, &mut out);
    out
}

/// `out = xᵀ A` for a `rows × cols` matrix.
pub fn vecmat(x: &[f64], a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for i in 0..rows {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        for (o, aij) in out.iter_mut().zip(&a[i * cols..(i + 1) * cols]) {
            *o += xi * aij;
        }
    }
    out
}

pub fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

pub fn frobenius(a: &[f64]) -> f64 {
    norm(a)
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 500;

/// Spectral norm of a `rows × cols` matrix by power iteration on `AᵀA`.
pub fn spectral_norm(a: &[f64], rows: usize, cols: usize) -> f64 {
    top_singular(a, rows, cols).0
}

/// Largest singular value with its right singular vector.
pub fn top_singular(a: &[f64], rows: usize, cols: usize) -> (f64, Vec<f64>) {
    let fro = frobenius(a);
    if fro == 0.0 || cols == 0 {
        let mut v = vec![0.0; cols];
        if cols > 0 {
            v[0] = 1.0;
        }
        return (0.0, v);
    }
    // Start from a fixed, generic direction so results are reproducible.
    let mut v: Vec<f64> = (0..cols).map(|j| 1.0 + 0.1 * j as f64).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut sigma = 0.0;
    let mut av = vec![0.0; rows];
    for _ in 0..POWER_MAX_ITERS {
        matvec_into(a, rows, cols, &v, &mut av);
        let w = vecmat(&av, a, rows, cols);
        let nw = norm(&w);
        if nw == 0.0 {
            break;
        }
        let next_sigma = nw.sqrt();
        let next: Vec<f64> = w.iter().map(|x| x / nw).collect();
        let change = (next_sigma - sigma).abs();
        v = next;
        sigma = next_sigma;
        if change <= POWER_TOL * sigma.max(1e-300) {
            break;
        }
    }
    // Rayleigh quotient is more accurate than the iterate norm.
    matvec_into(a, rows, cols, &v, &mut av);
    (norm(&av).max(sigma.min(fro)), v)
}

/// Largest eigenvalue of the symmetric part `(A + Aᵀ)/2` of a square matrix.
pub fn sym_part_max_eig(a: &[f64], d: usize) -> f64 {
    let mut s = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            s[i * d + j] = 0.5 * (a[i * d + j] + a[j * d + i]);
        }
    }
    // Shift to make the spectrum nonnegative, then power-iterate.
    let shift = frobenius(&s);
    for i in 0..d {
        s[i * d + i] += shift;
    }
    let mut v: Vec<f64> = (0..d).map(|j| 1.0 + 0.1 * j as f64).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = matvec(&s, d, d, &v);
        let nw = norm(&w);
        if nw == 0.0 {
            break;
        }
        let next = dot(&v, &w);
        v = w.iter().map(|x| x / nw).collect();
        let done = (next - lambda).abs() <= POWER_TOL * next.abs().max(1e-300);
        lambda = next;
        if done {
            break;
        }
    }
    lambda - shift
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = [3.0, 0.0, 0.0, -5.0];
        assert!((spectral_norm(&a, 2, 2) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_of_rank_one() {
        // u vᵀ with |u| = 5, |v| = 1 has norm 5.
        let a = [3.0 * 0.6, 3.0 * 0.8, 4.0 * 0.6, 4.0 * 0.8];
        assert!((spectral_norm(&a, 2, 2) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_zero() {
        assert_eq!(spectral_norm(&[0.0; 4], 2, 2), 0.0);
    }

    #[test]
    fn sym_eig_of_rotation_is_zero() {
        let j = [0.0, -1.0, 1.0, 0.0];
        assert!(sym_part_max_eig(&j, 2).abs() < 1e-9);
        let neg = [-2.0, 0.0, 0.0, -3.0];
        assert!((sym_part_max_eig(&neg, 2) + 2.0).abs() < 1e-8);
    }
}
