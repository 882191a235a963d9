//! Hermitian eigendecomposition by cyclic complex Jacobi rotations.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::covariance::CovarianceMatrix;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 64;

/// Spectral decomposition `R = V·Λ·Vᴴ`, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    eigenvalues: Array1<f64>,
    eigenvectors: Array2<Complex64>,
}

impl EigenDecomposition {
    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors as columns, matching `eigenvalues` order.
    pub fn eigenvectors(&self) -> &Array2<Complex64> {
        &self.eigenvectors
    }

    pub fn reconstruct(&self) -> Array2<Complex64> {
        let n = self.eigenvalues.len();
        let mut out = Array2::zeros((n, n));
        for k in 0..n {
            let lam = self.eigenvalues[k];
            let v = self.eigenvectors.column(k);
            for i in 0..n {
                for j in 0..n {
                    out[[i, j]] += v[i] * v[j].conj() * lam;
                }
            }
        }
        out
    }
}

pub fn hermitian_eigen(cov: &CovarianceMatrix) -> Result<EigenDecomposition> {
    hermitian_eigen_matrix(cov.entries())
}

/// Decomposes a Hermitian matrix. Inputs whose relative Hermitian defect
/// exceeds 1e-8 are rejected; smaller defects are symmetrized away.
pub fn hermitian_eigen_matrix(m: &Array2<Complex64>) -> Result<EigenDecomposition> {
    let (rows, cols) = m.dim();
    if rows != cols || rows == 0 {
        return Err(Error::InvalidInput(format!("eigensolver needs a square matrix, got {rows}×{cols}")));
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    let n = rows;
    let norm = m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut defect = 0.0;
    for i in 0..n {
        for j in 0..n {
            defect += (m[[i, j]] - m[[j, i]].conj()).norm_sqr();
        }
    }
    if norm > 0.0 && defect.sqrt() > 1e-8 * norm {
        return Err(Error::InvalidInput("matrix is not Hermitian".into()));
    }

    let mut a = Array2::from_shape_fn((n, n), |(i, j)| (m[[i, j]] + m[[j, i]].conj()) * 0.5);
    let mut v = Array2::<Complex64>::eye(n);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]].norm_sqr())
            .sum();
        if off <= (1e-15 * norm).powi(2) || off == 0.0 {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[[y, y]].re.total_cmp(&a[[x, x]].re));
    let eigenvalues = Array1::from_iter(order.iter().map(|&k| a[[k, k]].re));
    let mut eigenvectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.column_mut(dst).assign(&v.column(src));
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Annihilates `a[p][q]` with a unitary rotation `J` acting on columns
/// `p, q`: `A ← Jᴴ·A·J`, `V ← V·J`.
fn rotate(a: &mut Array2<Complex64>, v: &mut Array2<Complex64>, p: usize, q: usize) {
    let apq = a[[p, q]];
    let mag = apq.norm();
    if mag == 0.0 {
        return;
    }
    let phase = apq / mag;
    let app = a[[p, p]].re;
    let aqq = a[[q, q]].re;
    let theta = (aqq - app) / (2.0 * mag);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = a.nrows();

    // J = [[c, s], [-s·e^{-iα}, c·e^{-iα}]] on (p, q)
    let pc = phase.conj();
    for k in 0..n {
        let akp = a[[k, p]];
        let akq = a[[k, q]];
        a[[k, p]] = akp * c - akq * pc * s;
        a[[k, q]] = akp * s + akq * pc * c;
    }
    for k in 0..n {
        let apk = a[[p, k]];
        let aqk = a[[q, k]];
        a[[p, k]] = apk * c - aqk * phase * s;
        a[[q, k]] = apk * s + aqk * phase * c;
    }
    a[[p, q]] = Complex64::new(0.0, 0.0);
    a[[q, p]] = Complex64::new(0.0, 0.0);
    a[[p, p]].im = 0.0;
    a[[q, q]].im = 0.0;
    for k in 0..n {
        let vkp = v[[k, p]];
        let vkq = v[[k, q]];
        v[[k, p]] = vkp * c - vkq * pc * s;
        v[[k, q]] = vkp * s + vkq * pc * c;
    }
}

/// Moore–Penrose pseudo-inverse of a Hermitian matrix; eigenvalues whose
/// magnitude is below `rel_tol × max|λ|` are dropped.
pub fn hermitian_pinv(m: &Array2<Complex64>, rel_tol: f64) -> Result<Array2<Complex64>> {
    let eig = hermitian_eigen_matrix(m)?;
    let max = eig.eigenvalues.iter().fold(0.0f64, |acc, l| acc.max(l.abs()));
    if max == 0.0 {
        return Err(Error::DegenerateInput("zero matrix has no usable pseudo-inverse"));
    }
    let n = m.nrows();
    let mut out = Array2::zeros((n, n));
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam.abs() <= rel_tol * max {
            continue;
        }
        let col = eig.eigenvectors.column(k);
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] += col[i] * col[j].conj() / lam;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{steering_matrix, ArrayGeometry, DirectionPair};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, TAU};

    fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> Array2<Complex64> {
        let g = Array2::from_shape_fn((n, n), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        Array2::from_shape_fn((n, n), |(i, j)| g[[i, j]] + g[[j, i]].conj())
    }

    /// Eigenvalues of the real symmetric embedding [[Re, -Im], [Im, Re]],
    /// which carries every eigenvalue twice, from an independent solver.
    fn oracle_eigenvalues(m: &Array2<Complex64>) -> Vec<f64> {
        let n = m.nrows();
        let emb = DMatrix::from_fn(2 * n, 2 * n, |r, c| {
            let z = m[[r % n, c % n]];
            match (r < n, c < n) {
                (true, true) | (false, false) => z.re,
                (true, false) => -z.im,
                (false, true) => z.im,
            }
        });
        let mut vals: Vec<f64> = emb.symmetric_eigenvalues().iter().copied().collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        vals.into_iter().step_by(2).collect()
    }

    fn frob(m: &Array2<Complex64>) -> f64 {
        m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn identity_and_diagonal() {
        let eye = Array2::<Complex64>::eye(6);
        let eig = hermitian_eigen_matrix(&eye).unwrap();
        assert!(eig.eigenvalues().iter().all(|&l| (l - 1.0).abs() < 1e-15));

        let mut d = Array2::<Complex64>::zeros((6, 6));
        for (i, v) in [1.0, 0.0, 3.0, 0.0, 2.0, 0.0].iter().enumerate() {
            d[[i, i]] = Complex64::new(*v, 0.0);
        }
        let eig = hermitian_eigen_matrix(&d).unwrap();
        assert_eq!(eig.eigenvalues().to_vec(), vec![3.0, 2.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn matches_independent_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [2, 3, 6, 12] {
            for _ in 0..20 {
                let m = random_hermitian(&mut rng, n);
                let eig = hermitian_eigen_matrix(&m).unwrap();
                let oracle = oracle_eigenvalues(&m);
                for (a, b) in eig.eigenvalues().iter().zip(oracle.iter()) {
                    assert!((a - b).abs() < 1e-8, "{a} vs {b}");
                }
                let err = frob(&(eig.reconstruct() - &m));
                assert!(err <= 1e-8 * frob(&m));
                let v = eig.eigenvectors();
                let gram = v.t().mapv(|z| z.conj()).dot(v);
                let dev = frob(&(gram - Array2::<Complex64>::eye(n)));
                assert!(dev < 1e-10);
                assert!(eig.eigenvalues().windows(2).into_iter().all(|w| w[0] >= w[1]));
            }
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = Array2::<Complex64>::eye(3);
        m[[0, 1]] = Complex64::new(0.5, 0.0);
        assert!(matches!(hermitian_eigen_matrix(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn distinct_directions_have_full_rank_steering() {
        let g = ArrayGeometry::default_uca();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..50 {
            let dirs: Vec<_> = (0..3)
                .map(|_| DirectionPair::new(rng.random_range(0.0..PI), rng.random_range(0.0..TAU)).unwrap())
                .collect();
            let a = steering_matrix(&g, &dirs).unwrap();
            // squared singular values are the eigenvalues of AᴴA
            let gram = a.t().mapv(|z| z.conj()).dot(&a);
            let eig = hermitian_eigen_matrix(&gram).unwrap();
            assert!(eig.eigenvalues().iter().all(|&l| l.max(0.0).sqrt() > 1e-9));
        }
        let d = DirectionPair::new(1.0, 2.0).unwrap();
        let a = steering_matrix(&g, &[d, d]).unwrap();
        let gram = a.t().mapv(|z| z.conj()).dot(&a);
        let eig = hermitian_eigen_matrix(&gram).unwrap();
        assert!(eig.eigenvalues()[1].abs() < 1e-9 * eig.eigenvalues()[0]);
    }

    #[test]
    fn pinv_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let m = random_hermitian(&mut rng, 5);
        let p = hermitian_pinv(&m, 1e-12).unwrap();
        let should_be_eye = m.dot(&p);
        assert!(frob(&(should_be_eye - Array2::<Complex64>::eye(5))) < 1e-9);

        // rank one: M·P·M = M
        let x = Array2::from_shape_fn((4, 1), |_| Complex64::new(rng.random(), rng.random()));
        let r1 = x.dot(&x.t().mapv(|z| z.conj()));
        let p = hermitian_pinv(&r1, 1e-8).unwrap();
        assert!(p.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        assert!(frob(&(r1.dot(&p).dot(&r1) - &r1)) < 1e-9 * frob(&r1));

        assert!(matches!(
            hermitian_pinv(&Array2::zeros((3, 3)), 1e-8),
            Err(Error::DegenerateInput(_))
        ));
    }
}
