//! Truncated factorization of a symmetric similarity matrix.
//!
//! Similarity matrices are symmetric but need not be positive semidefinite,
//! so the factorization goes through a symmetric eigendecomposition
//! (Householder tridiagonalization followed by implicit QL). The `k`
//! eigenpairs of largest magnitude are kept; the embedding is
//! `U · sqrt(|λ|)` and the eigenvalue signs are recorded separately, so
//! `E · diag(sign) · Eᵀ` is the rank-`k` reconstruction.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    rank: usize,
    order: usize,
    /// |λ|, descending.
    singular_values: Vec<f64>,
    /// ±1 per kept component.
    signs: Vec<f64>,
    /// `order × rank`, orthonormal columns.
    left_vectors: Vec<f64>,
    /// `order × rank`, row `i` is the embedding of group `i`.
    embedding: Vec<f64>,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn left_vectors(&self) -> &[f64] {
        &self.left_vectors
    }

    pub fn embedding_row(&self, i: usize) -> &[f64] {
        &self.embedding[i * self.rank..(i + 1) * self.rank]
    }

    /// `Σ_c sign_c · E[i][c] · E[j][c]`.
    pub fn reconstruct(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.embedding_row(i), self.embedding_row(j));
        a.iter()
            .zip(b)
            .zip(&self.signs)
            .map(|((x, y), s)| s * x * y)
            .sum()
    }
}

/// Keeps the `rank` dominant eigenpairs of `matrix`.
pub fn truncated_svd(matrix: &SimilarityMatrix, rank: usize) -> Result<SvdFactors> {
    factorize(matrix.values(), matrix.order(), rank)
}

/// Same as [`truncated_svd`] for a raw symmetric `order × order` matrix.
pub fn factorize(values: &[f64], order: usize, rank: usize) -> Result<SvdFactors> {
    if rank > order {
        return Err(Error::RankTooLarge { rank, order });
    }
    assert_eq!(values.len(), order * order);
    let (eigenvalues, vectors) = symmetric_eigen(values, order);
    let mut idx: Vec<usize> = (0..order).collect();
    // stable order: by |λ| descending, ties by index
    idx.sort_by(|&a, &b| {
        eigenvalues[b]
            .abs()
            .partial_cmp(&eigenvalues[a].abs())
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(rank);
    let mut singular_values = Vec::with_capacity(rank);
    let mut signs = Vec::with_capacity(rank);
    let mut left_vectors = vec![0.0; order * rank];
    let mut embedding = vec![0.0; order * rank];
    for (c, &e) in idx.iter().enumerate() {
        let lambda = eigenvalues[e];
        singular_values.push(lambda.abs());
        signs.push(if lambda < 0.0 { -1.0 } else { 1.0 });
        // fix the sign of each vector: largest-magnitude entry positive
        let mut pivot = 0;
        for r in 0..order {
            if vectors[r * order + e].abs() > vectors[pivot * order + e].abs() {
                pivot = r;
            }
        }
        let flip = if vectors[pivot * order + e] < 0.0 {
            -1.0
        } else {
            1.0
        };
        let scale = libm::sqrt(lambda.abs());
        for r in 0..order {
            let u = flip * vectors[r * order + e];
            left_vectors[r * rank + c] = u;
            embedding[r * rank + c] = u * scale;
        }
    }
    Ok(SvdFactors {
        rank,
        order,
        singular_values,
        signs,
        left_vectors,
        embedding,
    })
}

/// Eigenvalues and eigenvectors (as columns of a row-major `n × n` matrix)
/// of a symmetric matrix.
pub fn symmetric_eigen(values: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut v = values.to_vec();
    // symmetrize defensively against round-off in the input
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (v[i * n + j] + v[j * n + i]);
            v[i * n + j] = m;
            v[j * n + i] = m;
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut v, &mut d, &mut e, n);
    ql_implicit(&mut v, &mut d, &mut e, n);
    (d, v)
}

/// Householder reduction to tridiagonal form. On return `v` holds the
/// accumulated orthogonal transform, `d` the diagonal and `e[1..]` the
/// sub-diagonal.
fn tridiagonalize(v: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) {
    let at = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = libm::sqrt(h);
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for j in 0..i {
                e[j] = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in j + 1..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL iterations on the tridiagonal form, accumulating into `v`.
fn ql_implicit(v: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) {
    let at = |i: usize, j: usize| i * n + j;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            loop {
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = libm::hypot(p, 1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for i in l + 2..n {
                    d[i] -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = libm::hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[at(k, i + 1)];
                        v[at(k, i + 1)] = s * v[at(k, i)] + c * h;
                        v[at(k, i)] = c * v[at(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::Metric;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sim(values: Vec<f64>, n: usize) -> SimilarityMatrix {
        SimilarityMatrix::new(Metric::Correlation, n, values).unwrap()
    }

    fn random_psd(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum();
            }
        }
        out
    }

    fn rel_frobenius(f: &SvdFactors, values: &[f64], n: usize) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let d = f.reconstruct(i, j) - values[i * n + j];
                num += d * d;
                den += values[i * n + j] * values[i * n + j];
            }
        }
        libm::sqrt(num / den)
    }

    #[test]
    fn identity_full_rank() {
        let n = 6;
        let mut id = vec![0.0; n * n];
        (0..n).for_each(|i| id[i * n + i] = 1.0);
        let f = truncated_svd(&sim(id.clone(), n), n).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((f.reconstruct(i, j) - id[i * n + j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rank_one_exact() {
        let v = [0.3, -1.2, 0.5, 2.0, 0.1];
        let n = v.len();
        let m: Vec<f64> = (0..n * n).map(|x| v[x / n] * v[x % n]).collect();
        let f = truncated_svd(&sim(m.clone(), n), 1).unwrap();
        assert!(rel_frobenius(&f, &m, n) < 1e-8);
    }

    #[test]
    fn rank_too_large() {
        assert_eq!(
            truncated_svd(&sim(vec![1.0], 1), 2),
            Err(Error::RankTooLarge { rank: 2, order: 1 })
        );
    }

    #[test]
    fn left_vectors_orthonormal_and_sorted() {
        let n = 20;
        let m = random_psd(n, 4);
        let f = truncated_svd(&sim(m, n), 8).unwrap();
        let u = f.left_vectors();
        for a in 0..8 {
            for b in 0..8 {
                let dot: f64 = (0..n).map(|r| u[r * 8 + a] * u[r * 8 + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8);
            }
        }
        assert!(f.singular_values().windows(2).all(|w| w[0] >= w[1]));
        assert!(f.singular_values().iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn indefinite_matrix_keeps_signs() {
        // eigenvalues 3 and -2
        let m = vec![0.5, 2.5, 2.5, 0.5];
        let f = factorize(&m, 2, 2).unwrap();
        assert_eq!(f.singular_values(), &[3.0, 2.0]);
        assert_eq!(f.signs(), &[1.0, -1.0]);
        for i in 0..2 {
            for j in 0..2 {
                assert!((f.reconstruct(i, j) - m[i * 2 + j]).abs() < 1e-12);
            }
        }
    }
}
