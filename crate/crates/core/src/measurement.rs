//! The linear measurement map `Z ↦ (tr(A_1 Z), …, tr(A_m Z))`, its adjoint,
//! the composition `[AᵀA](B) = Σ_k tr(A_k B) A_k`, and the scaler used by the
//! multiplicative update.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::symmat::{geometric_mean, sym_inv, SymMatrix};

#[derive(Debug, Clone)]
pub struct MeasurementMap {
    dim: usize,
    mats: Vec<SymMatrix>,
}

impl MeasurementMap {
    /// Requires at least one matrix, all of the same dimension. Positive
    /// semidefiniteness is not checked here; the operations that need
    /// definiteness report `NotPd` themselves.
    pub fn new(mats: Vec<SymMatrix>) -> Result<Self> {
        let first = mats
            .first()
            .ok_or_else(|| Error::invalid("measurement map needs at least one matrix"))?;
        let dim = first.dim();
        for m in &mats {
            if m.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: m.dim(),
                });
            }
        }
        Ok(Self { dim, mats })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn mats(&self) -> &[SymMatrix] {
        &self.mats
    }

    fn check_dim(&self, z: &SymMatrix) -> Result<()> {
        if z.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: z.dim(),
            });
        }
        Ok(())
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.mats.len() {
            return Err(Error::DimMismatch {
                expected: self.mats.len(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, z: &SymMatrix) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        Ok(self.mats.iter().map(|a| a.inner(z)).collect())
    }

    /// `Σ_k x_k A_k`
    pub fn adjoint(&self, x: &[f64]) -> Result<SymMatrix> {
        self.check_len(x)?;
        let mut out = SymMatrix::zeros(self.dim);
        for (a, &xk) in self.mats.iter().zip(x) {
            out.add_scaled_mut(xk, a);
        }
        Ok(out)
    }

    pub fn ata(&self, b: &SymMatrix) -> Result<SymMatrix> {
        self.adjoint(&self.apply(b)?)
    }

    /// `W = ([AᵀA](B))⁻¹ # B`, the congruence scaler of the multiplicative update.
    pub fn mmu_scaler(&self, b_old: &SymMatrix) -> Result<SymMatrix> {
        let gram = self.ata(b_old)?;
        let inv = sym_inv(&gram).map_err(singular_as_not_pd)?;
        geometric_mean(&inv, b_old)
    }

    /// `[AᵀA](B) # B⁻¹`: the matrix whose congruence dominates `AᵀA`.
    /// Equal to the inverse of [`Self::mmu_scaler`].
    pub fn domination_matrix(&self, b: &SymMatrix) -> Result<SymMatrix> {
        let gram = self.ata(b)?;
        let b_inv = sym_inv(b).map_err(singular_as_not_pd)?;
        geometric_mean(&gram, &b_inv)
    }

    /// `⟨Z, WZW⟩ − ⟨Z, [AᵀA](Z)⟩` with `W = [AᵀA](B) # B⁻¹`; nonnegative up to
    /// rounding for PD `A_k` and `B`.
    pub fn domination_gap(&self, b: &SymMatrix, z: &SymMatrix) -> Result<f64> {
        Ok(self.domination_terms(b, z)?.gap())
    }

    pub fn domination_terms(&self, b: &SymMatrix, z: &SymMatrix) -> Result<DominationTerms> {
        self.check_dim(z)?;
        let w = self.domination_matrix(b)?;
        let upper = z.inner(&w.sandwich(z));
        let lower = z.inner(&self.ata(z)?);
        Ok(DominationTerms { upper, lower })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DominationTerms {
    /// ⟨Z, WZW⟩
    pub upper: f64,
    /// ⟨Z, [AᵀA](Z)⟩
    pub lower: f64,
}

impl DominationTerms {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }

    /// Gap divided by `1 + |⟨Z, WZW⟩|`.
    pub fn normalized_gap(&self) -> f64 {
        self.gap() / (1.0 + self.upper.abs())
    }
}

fn singular_as_not_pd(e: Error) -> Error {
    match e {
        Error::Singular { min_eigenvalue } => Error::NotPd { min_eigenvalue },
        other => other,
    }
}

/// `tr(X²)·tr(Y²) − tr(XY)²`, nonnegative by Cauchy–Schwarz.
pub fn trace_cs_gap(x: &SymMatrix, y: &SymMatrix) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    let xy = x.inner(y);
    Ok(x.inner(x) * y.inner(y) - xy * xy)
}

/// Random strictly PD map `A_k = G_k G_kᵀ + 0.1 I`.
pub fn random_map(rng: &mut Rng, r: usize, m: usize) -> MeasurementMap {
    let mats = (0..m).map(|_| rng.random_pd(r, 0.1)).collect();
    MeasurementMap::new(mats).expect("nonempty, same dimension")
}

#[derive(Debug, Clone)]
pub struct CertifyReport {
    pub trials: usize,
    /// Minimum of `gap / (1 + |⟨Z,WZW⟩|)` over all trials.
    pub min_domination_gap: f64,
    /// Minimum of `gap / (1 + tr(X²)·tr(Y²))` over all trials.
    pub min_trace_cs_gap: f64,
    pub tolerance: f64,
}

impl CertifyReport {
    pub fn passed(&self) -> bool {
        self.min_domination_gap >= -self.tolerance && self.min_trace_cs_gap >= -self.tolerance
    }
}

pub const CERTIFY_TOLERANCE: f64 = 1e-9;

/// Monte Carlo check of the domination and trace Cauchy–Schwarz inequalities
/// on random instances with `r ≤ 6`, `m ≤ 10`.
pub fn certify(trials: usize, seed: u64) -> Result<CertifyReport> {
    let mut rng = Rng::new(seed);
    let mut min_dom = f64::INFINITY;
    let mut min_cs = f64::INFINITY;
    for _ in 0..trials {
        let r = rng.range_inclusive(1, 6);
        let m = rng.range_inclusive(1, 10);
        let map = random_map(&mut rng, r, m);
        let b = rng.random_pd(r, 0.1);
        let z = rng.random_sym(r);
        min_dom = min_dom.min(map.domination_terms(&b, &z)?.normalized_gap());

        let x = rng.random_sym(r);
        let y = rng.random_sym(r);
        let scale = 1.0 + x.inner(&x) * y.inner(&y);
        min_cs = min_cs.min(trace_cs_gap(&x, &y)? / scale);
    }
    Ok(CertifyReport {
        trials,
        min_domination_gap: min_dom,
        min_trace_cs_gap: min_cs,
        tolerance: CERTIFY_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_map() -> MeasurementMap {
        MeasurementMap::new(vec![
            SymMatrix::from_diag(&[1.0, 0.0]),
            SymMatrix::from_diag(&[0.0, 1.0]),
        ])
        .unwrap()
    }

    #[test]
    fn apply_examples() {
        let id = MeasurementMap::new(vec![SymMatrix::identity(2)]).unwrap();
        assert_eq!(id.apply(&SymMatrix::identity(2)).unwrap(), vec![2.0]);
        assert_eq!(
            diag_map()
                .apply(&SymMatrix::from_diag(&[3.0, 5.0]))
                .unwrap(),
            vec![3.0, 5.0]
        );
        let ones = MeasurementMap::new(vec![SymMatrix::from_fn(2, |_, _| 1.0)]).unwrap();
        assert_eq!(
            ones.apply(&SymMatrix::from_diag(&[2.0, 2.0])).unwrap(),
            vec![4.0]
        );
    }

    #[test]
    fn dim_mismatch() {
        let map = diag_map();
        assert!(matches!(
            map.apply(&SymMatrix::identity(3)),
            Err(Error::DimMismatch { .. })
        ));
        assert!(matches!(
            map.adjoint(&[1.0]),
            Err(Error::DimMismatch { .. })
        ));
        assert!(MeasurementMap::new(vec![SymMatrix::identity(2), SymMatrix::identity(3)]).is_err());
        assert!(MeasurementMap::new(vec![]).is_err());
    }

    #[test]
    fn adjoint_examples() {
        let map = diag_map();
        assert_eq!(map.adjoint(&[0.0, 0.0]).unwrap(), SymMatrix::zeros(2));
        assert_eq!(
            map.adjoint(&[3.0, 5.0]).unwrap(),
            SymMatrix::from_diag(&[3.0, 5.0])
        );
    }

    #[test]
    fn adjointness_random() {
        let mut rng = Rng::new(21);
        for _ in 0..50 {
            let r = rng.range_inclusive(1, 6);
            let m = rng.range_inclusive(1, 8);
            let map = random_map(&mut rng, r, m);
            let z = rng.random_sym(r);
            let x: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
            let lhs: f64 = map
                .apply(&z)
                .unwrap()
                .iter()
                .zip(&x)
                .map(|(a, b)| a * b)
                .sum();
            let rhs = z.inner(&map.adjoint(&x).unwrap());
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn ata_examples() {
        let id = MeasurementMap::new(vec![SymMatrix::identity(3)]).unwrap();
        let mut rng = Rng::new(2);
        let b = rng.random_sym(3);
        let got = id.ata(&b).unwrap();
        assert!(
            got.sub(&SymMatrix::scaled_identity(3, b.trace()))
                .frobenius_norm()
                < 1e-14
        );
        let d = SymMatrix::from_diag(&[1.5, 2.5]);
        assert_eq!(diag_map().ata(&d).unwrap(), d);
    }

    #[test]
    fn scaler_examples() {
        // r = 1: W = (Σ a_k²)^{-1/2}
        let a = [0.5, 2.0, 1.5];
        let map =
            MeasurementMap::new(a.iter().map(|&v| SymMatrix::from_diag(&[v])).collect()).unwrap();
        let w = map.mmu_scaler(&SymMatrix::from_diag(&[3.7])).unwrap();
        let expect = 1.0 / a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((w.get(0, 0) - expect).abs() < 1e-14);

        let id = MeasurementMap::new(vec![SymMatrix::identity(2)]).unwrap();
        let w = id.mmu_scaler(&SymMatrix::identity(2)).unwrap();
        let expect = SymMatrix::scaled_identity(2, 1.0 / 2f64.sqrt());
        assert!(w.sub(&expect).frobenius_norm() < 1e-14);
    }

    #[test]
    fn scaler_identity_random() {
        let mut rng = Rng::new(8);
        for _ in 0..50 {
            let r = rng.range_inclusive(1, 5);
            let m = rng.range_inclusive(1, 8);
            let map = random_map(&mut rng, r, m);
            let b = rng.random_pd(r, 0.1);
            let w = map.mmu_scaler(&b).unwrap();
            let back = w.sandwich(&map.ata(&b).unwrap());
            assert!(back.sub(&b).frobenius_norm() <= 1e-8 * (1.0 + b.frobenius_norm()));
        }
    }

    #[test]
    fn domination_matrix_inverts_scaler() {
        let mut rng = Rng::new(9);
        let map = random_map(&mut rng, 4, 6);
        let b = rng.random_pd(4, 0.1);
        let w = map.mmu_scaler(&b).unwrap();
        let t = map.domination_matrix(&b).unwrap();
        let prod = w.matmul(&t);
        assert!(crate::symmat::distance_from_identity(4, &prod) < 1e-8);
    }

    #[test]
    fn domination_examples() {
        let mut rng = Rng::new(10);
        let map = random_map(&mut rng, 3, 4);
        let b = rng.random_pd(3, 0.1);
        assert_eq!(map.domination_gap(&b, &SymMatrix::zeros(3)).unwrap(), 0.0);

        // m = 1, B = A⁻¹: random search over Z.
        let a = rng.random_pd(3, 0.1);
        let single = MeasurementMap::new(vec![a.clone()]).unwrap();
        let b = sym_inv(&a).unwrap();
        for _ in 0..200 {
            let z = rng.random_sym(3);
            assert!(single.domination_gap(&b, &z).unwrap() >= -1e-9);
        }
    }

    #[test]
    fn trace_cs_examples() {
        let x = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, -3.0]]).unwrap();
        assert!(trace_cs_gap(&x, &x).unwrap().abs() < 1e-12);
        let gap =
            trace_cs_gap(&SymMatrix::identity(2), &SymMatrix::from_diag(&[1.0, -1.0])).unwrap();
        assert_eq!(gap, 4.0);
        assert!(trace_cs_gap(&SymMatrix::identity(2), &SymMatrix::identity(3)).is_err());
    }

    #[test]
    fn certify_passes() {
        let report = certify(200, 4).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
