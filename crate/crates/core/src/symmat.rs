//! Dense real symmetric matrices and the spectral primitives built on them.
//!
//! Every factor, scaler and intermediate in the solver is a [`SymMatrix`].
//! Storage is a full row-major square whose lower triangle mirrors the upper
//! one; all mutation goes through [`SymMatrix::set`], which writes both cells,
//! so symmetry holds by construction. Products that are only symmetric in
//! exact arithmetic (`W M W`) are symmetrized before they are stored.

use std::fmt;

use crate::error::{Error, Result};

/// Jacobi stops once the off-diagonal Frobenius mass is below this fraction of ‖M‖_F.
const JACOBI_REL_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.data.chunks(self.dim)).finish()
    }
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "SymMatrix dimension must be at least 1");
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, value: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = value;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        m
    }

    /// Builds a matrix from the upper triangle of `f`; `f(i, j)` is only called for `i <= j`.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds a matrix from full rows, rejecting non-square, asymmetric or non-finite input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::invalid("empty matrix"));
        }
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                let v = rows[i][j];
                if !v.is_finite() {
                    return Err(Error::invalid(format!("non-finite entry at ({i}, {j})")));
                }
                if v != rows[j][i] {
                    return Err(Error::invalid(format!("asymmetric entry at ({i}, {j})")));
                }
            }
        }
        Ok(Self::from_fn(dim, |i, j| rows[i][j]))
    }

    /// Symmetric part `(M + Mᵀ)/2` of a general row-major square matrix.
    pub fn symmetrize(dim: usize, general: &[f64]) -> Self {
        assert_eq!(general.len(), dim * dim);
        Self::from_fn(dim, |i, j| {
            if i == j {
                general[i * dim + i]
            } else {
                0.5 * (general[i * dim + j] + general[j * dim + i])
            }
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    /// Row-major view of all r² entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || self.get(i, j) == 0.0))
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius inner product ⟨A, B⟩ = tr(AB) for symmetric A, B.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, factor: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        debug_assert_eq!(self.dim, other.dim);
        SymMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        debug_assert_eq!(self.dim, other.dim);
        SymMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled_mut(&mut self, alpha: f64, other: &SymMatrix) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn add_identity_mut(&mut self, value: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += value;
        }
    }

    /// Entrywise (Schur) product.
    pub fn schur(&self, other: &SymMatrix) -> SymMatrix {
        debug_assert_eq!(self.dim, other.dim);
        SymMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    /// Sum of all entries.
    pub fn entry_sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// General product `self · other`, row-major; not symmetric in general.
    pub fn matmul(&self, other: &SymMatrix) -> Vec<f64> {
        mul_square(self.dim, &self.data, &other.data)
    }

    /// Congruence `self · inner · self`, symmetrized.
    pub fn sandwich(&self, inner: &SymMatrix) -> SymMatrix {
        debug_assert_eq!(self.dim, inner.dim);
        let left = mul_square(self.dim, &self.data, &inner.data);
        SymMatrix::symmetrize(self.dim, &mul_square(self.dim, &left, &self.data))
    }
}

fn mul_square(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

/// Frobenius distance of a general row-major square matrix from the identity.
pub fn distance_from_identity(dim: usize, general: &[f64]) -> f64 {
    general
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            let target = if idx / dim == idx % dim { 1.0 } else { 0.0 };
            (v - target).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Eigenvalues in nondecreasing order with matching orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Row-major r×r; column k is the eigenvector for `eigenvalues[k]`.
    pub eigenvectors: Vec<f64>,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| self.eigenvectors[i * n + k]).collect()
    }

    /// `U diag(f(λ)) Uᵀ`.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.dim();
        let mapped: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let u = &self.eigenvectors;
        SymMatrix::from_fn(n, |i, j| {
            (0..n)
                .map(|k| u[i * n + k] * mapped[k] * u[j * n + k])
                .sum()
        })
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.map_eigenvalues(|l| l)
    }

    /// ‖UᵀU − I‖_F.
    pub fn orthogonality_residual(&self) -> f64 {
        let n = self.dim();
        let u = &self.eigenvectors;
        let mut sum = 0.0;
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|i| u[i * n + a] * u[i * n + b]).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                sum += (dot - target).powi(2);
            }
        }
        sum.sqrt()
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn eig_sym(m: &SymMatrix) -> Result<SpectralDecomposition> {
    if !m.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let n = m.dim();
    let mut a = m.data.clone();
    let mut v = SymMatrix::identity(n).data;
    let threshold = JACOBI_REL_TOL * m.frobenius_norm();

    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&a) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_norm(&a) > threshold {
        return Err(Error::IterationFailure {
            sweeps: JACOBI_MAX_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[x * n + x].total_cmp(&a[y * n + y]));
    let eigenvalues = order.iter().map(|&k| a[k * n + k]).collect();
    let mut eigenvectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            eigenvectors[i * n + dst] = v[i * n + src];
        }
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Default PSD tolerance relative to the spectrum: `1e-10 · (1 + max(λ_max, 0))`.
pub fn default_tolerance(spectrum: &SpectralDecomposition) -> f64 {
    1e-10 * (1.0 + spectrum.max_eigenvalue().max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Psdness {
    PositiveDefinite,
    PositiveSemidefinite,
    Indefinite,
}

pub fn classify_psd(m: &SymMatrix, tol: f64) -> Result<Psdness> {
    let spec = eig_sym(m)?;
    Ok(classify_spectrum(&spec, tol))
}

pub fn classify_spectrum(spec: &SpectralDecomposition, tol: f64) -> Psdness {
    let lmin = spec.min_eigenvalue();
    if lmin > tol {
        Psdness::PositiveDefinite
    } else if lmin >= -tol {
        Psdness::PositiveSemidefinite
    } else {
        Psdness::Indefinite
    }
}

/// Smallest eigenvalue.
pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64> {
    Ok(eig_sym(m)?.min_eigenvalue())
}

/// Principal square root; eigenvalues within tolerance below zero are clamped to 0.
pub fn sym_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    let spec = eig_sym(m)?;
    let tol = default_tolerance(&spec);
    if spec.min_eigenvalue() < -tol {
        return Err(Error::NotPsd {
            min_eigenvalue: spec.min_eigenvalue(),
        });
    }
    Ok(spec.map_eigenvalues(|l| l.max(0.0).sqrt()))
}

pub fn sym_inv(m: &SymMatrix) -> Result<SymMatrix> {
    let spec = eig_sym(m)?;
    let tol = default_tolerance(&spec);
    if spec.min_eigenvalue() <= tol {
        return Err(Error::Singular {
            min_eigenvalue: spec.min_eigenvalue(),
        });
    }
    Ok(spec.map_eigenvalues(|l| 1.0 / l))
}

fn require_pd(m: &SymMatrix) -> Result<SpectralDecomposition> {
    let spec = eig_sym(m)?;
    if classify_spectrum(&spec, default_tolerance(&spec)) != Psdness::PositiveDefinite {
        return Err(Error::NotPd {
            min_eigenvalue: spec.min_eigenvalue(),
        });
    }
    Ok(spec)
}

/// Matrix geometric mean `C # D = C^{1/2} (C^{-1/2} D C^{-1/2})^{1/2} C^{1/2}`,
/// the unique positive definite solution of `X C⁻¹ X = D`.
pub fn geometric_mean(c: &SymMatrix, d: &SymMatrix) -> Result<SymMatrix> {
    if c.dim() != d.dim() {
        return Err(Error::DimMismatch {
            expected: c.dim(),
            found: d.dim(),
        });
    }
    let c_spec = require_pd(c)?;
    require_pd(d)?;
    let c_half = c_spec.map_eigenvalues(f64::sqrt);
    let c_neg_half = c_spec.map_eigenvalues(|l| 1.0 / l.sqrt());
    let middle = sym_sqrt(&c_neg_half.sandwich(d))?;
    Ok(c_half.sandwich(&middle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn close(a: &SymMatrix, b: &SymMatrix, tol: f64) -> bool {
        a.sub(b).frobenius_norm() <= tol
    }

    #[test]
    fn set_writes_both_triangles() {
        let mut m = SymMatrix::zeros(3);
        m.set(0, 2, 5.0);
        assert_eq!(m.get(2, 0), 5.0);
    }

    #[test]
    fn from_rows_rejects_asymmetry() {
        let r = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn eig_identity() {
        let s = eig_sym(&SymMatrix::identity(2)).unwrap();
        assert_eq!(s.eigenvalues, vec![1.0, 1.0]);
        assert!(s.orthogonality_residual() <= 1e-12);
    }

    #[test]
    fn eig_diagonal_sorted() {
        let s = eig_sym(&SymMatrix::from_diag(&[3.0, -2.0])).unwrap();
        assert_eq!(s.eigenvalues, vec![-2.0, 3.0]);
    }

    #[test]
    fn eig_two_by_two() {
        // λ² − 4λ + 3 = 0
        let m = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let s = eig_sym(&m).unwrap();
        assert!((s.eigenvalues[0] - 1.0).abs() < 1e-14);
        assert!((s.eigenvalues[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn eig_residuals_dims_1_to_16() {
        let mut rng = Rng::new(11);
        for n in 1..=16 {
            for _ in 0..5 {
                let m = rng.random_sym(n);
                let s = eig_sym(&m).unwrap();
                let rel = 1e-10 * (1.0 + m.frobenius_norm());
                assert!(close(&s.reconstruct(), &m, rel), "n={n}");
                assert!(s.orthogonality_residual() <= 1e-10);
                assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }

    #[test]
    fn eig_rejects_nan() {
        let mut m = SymMatrix::identity(2);
        m.set(0, 1, f64::NAN);
        assert!(eig_sym(&m).is_err());
    }

    #[test]
    fn sqrt_cases() {
        assert_eq!(
            sym_sqrt(&SymMatrix::identity(3)).unwrap(),
            SymMatrix::identity(3)
        );
        let s = sym_sqrt(&SymMatrix::from_diag(&[4.0, 9.0])).unwrap();
        assert!(close(&s, &SymMatrix::from_diag(&[2.0, 3.0]), 1e-14));
        let m = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let s = sym_sqrt(&m).unwrap();
        let sq = SymMatrix::symmetrize(2, &s.matmul(&s));
        assert!(close(&sq, &m, 1e-10));
    }

    #[test]
    fn sqrt_clamps_tiny_negative_and_rejects_indefinite() {
        let m = SymMatrix::from_diag(&[1.0, -1e-13]);
        let s = sym_sqrt(&m).unwrap();
        assert_eq!(s.get(1, 1), 0.0);
        let bad = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(sym_sqrt(&bad), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn inverse_cases() {
        assert!(close(
            &sym_inv(&SymMatrix::identity(2)).unwrap(),
            &SymMatrix::identity(2),
            1e-15
        ));
        let inv = sym_inv(&SymMatrix::from_diag(&[2.0, 4.0])).unwrap();
        assert!(close(&inv, &SymMatrix::from_diag(&[0.5, 0.25]), 1e-15));
        let mut rng = Rng::new(3);
        for n in 1..=8 {
            let m = rng.random_pd(n, 1.0);
            let inv = sym_inv(&m).unwrap();
            assert!(distance_from_identity(n, &m.matmul(&inv)) <= 1e-9);
        }
        assert!(matches!(
            sym_inv(&SymMatrix::from_diag(&[1.0, 0.0])),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn geometric_mean_cases() {
        let i2 = SymMatrix::identity(2);
        assert!(close(&geometric_mean(&i2, &i2).unwrap(), &i2, 1e-14));
        let g = geometric_mean(
            &SymMatrix::from_diag(&[4.0, 1.0]),
            &SymMatrix::from_diag(&[9.0, 16.0]),
        )
        .unwrap();
        assert!(close(&g, &SymMatrix::from_diag(&[6.0, 4.0]), 1e-13));
        let mut rng = Rng::new(5);
        for n in 1..=6 {
            let c = rng.random_pd(n, 0.5);
            let g = geometric_mean(&c, &sym_inv(&c).unwrap()).unwrap();
            assert!(close(&g, &SymMatrix::identity(n), 1e-8), "n={n}");
        }
    }

    #[test]
    fn geometric_mean_requires_pd() {
        let pd = SymMatrix::identity(2);
        let psd = SymMatrix::from_diag(&[1.0, 0.0]);
        assert!(matches!(
            geometric_mean(&pd, &psd),
            Err(Error::NotPd { .. })
        ));
        assert!(matches!(
            geometric_mean(&psd, &pd),
            Err(Error::NotPd { .. })
        ));
    }

    #[test]
    fn classification() {
        assert_eq!(
            classify_psd(&SymMatrix::identity(2), 1e-10).unwrap(),
            Psdness::PositiveDefinite
        );
        assert_eq!(
            classify_psd(&SymMatrix::zeros(2), 1e-10).unwrap(),
            Psdness::PositiveSemidefinite
        );
        let m = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(classify_psd(&m, 1e-10).unwrap(), Psdness::Indefinite);
    }
}
