use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use grouplm_core::embed::{factorize, symmetric_eigen};

/// Cyclic Jacobi rotations; returns the eigenvalues in ascending order.
fn jacobi_eigenvalues(values: &[f64], n: usize) -> Vec<f64> {
    let mut a = values.to_vec();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = rng.random_range(-1.0..1.0);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    a
}

#[test]
fn eigenvalues_match_jacobi() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [1, 2, 5, 12, 25] {
        let a = random_symmetric(&mut rng, n);
        let (mut got, vectors) = symmetric_eigen(&a, n);
        got.sort_by(f64::total_cmp);
        let want = jacobi_eigenvalues(&a, n);
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-10);
        }
        assert_eq!(vectors.len(), n * n);
    }
}

#[test]
fn eigenvectors_satisfy_the_eigen_equation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 16;
    let a = random_symmetric(&mut rng, n);
    let (values, vectors) = symmetric_eigen(&a, n);
    for (c, &lambda) in values.iter().enumerate() {
        for i in 0..n {
            let av: f64 = (0..n).map(|k| a[i * n + k] * vectors[k * n + c]).sum();
            assert_abs_diff_eq!(av, lambda * vectors[i * n + c], epsilon = 1e-10);
        }
    }
}

#[test]
fn factorization_keeps_largest_magnitudes() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 10;
    let a = random_symmetric(&mut rng, n);
    let mut by_magnitude = jacobi_eigenvalues(&a, n);
    by_magnitude.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
    let f = factorize(&a, n, 4).unwrap();
    for (k, want) in by_magnitude.iter().take(4).enumerate() {
        assert_abs_diff_eq!(
            f.singular_values()[k] * f.signs()[k],
            *want,
            epsilon = 1e-10
        );
    }
}
