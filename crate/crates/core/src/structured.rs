//! Block-diagonal factor structure and the diagonal (NMF) specialization.
//!
//! A conforming factor is split into its dense diagonal blocks and every
//! update is computed block by block, so entries outside the blocks are never
//! written and stay exactly zero.

use crate::error::{Error, Result};
use crate::mmu::{factorize, DataMatrix, FactorPair, InitKind, RunHistory, SolverConfig};
use crate::symmat::SymMatrix;

/// Floor applied to NMF factor entries on construction.
pub const NMF_ENTRY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStructure {
    sizes: Vec<usize>,
}

impl BlockStructure {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::invalid("block sizes must be positive and nonempty"));
        }
        Ok(Self { sizes })
    }

    /// A single block covering all of `r`.
    pub fn dense(r: usize) -> Self {
        Self { sizes: vec![r] }
    }

    pub fn diagonal(r: usize) -> Self {
        Self { sizes: vec![1; r] }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_diagonal(&self) -> bool {
        self.sizes.iter().all(|&s| s == 1)
    }

    pub fn offsets(&self) -> Vec<usize> {
        self.sizes
            .iter()
            .scan(0, |acc, &s| {
                let start = *acc;
                *acc += s;
                Some(start)
            })
            .collect()
    }

    fn check(&self, m: &SymMatrix) -> Result<()> {
        if m.dim() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: m.dim(),
            });
        }
        Ok(())
    }

    /// Copies out the diagonal blocks; off-block entries are ignored.
    pub fn split(&self, m: &SymMatrix) -> Result<Vec<SymMatrix>> {
        self.check(m)?;
        Ok(self
            .offsets()
            .into_iter()
            .zip(&self.sizes)
            .map(|(off, &s)| SymMatrix::from_fn(s, |i, j| m.get(off + i, off + j)))
            .collect())
    }

    pub fn assemble(&self, blocks: &[SymMatrix]) -> Result<SymMatrix> {
        if blocks.len() != self.sizes.len() {
            return Err(Error::DimMismatch {
                expected: self.sizes.len(),
                found: blocks.len(),
            });
        }
        let mut out = SymMatrix::zeros(self.dim());
        for ((off, &s), block) in self.offsets().into_iter().zip(&self.sizes).zip(blocks) {
            if block.dim() != s {
                return Err(Error::DimMismatch {
                    expected: s,
                    found: block.dim(),
                });
            }
            for i in 0..s {
                for j in i..s {
                    out.set(off + i, off + j, block.get(i, j));
                }
            }
        }
        Ok(out)
    }

    fn block_of(&self) -> Vec<usize> {
        self.sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
            .collect()
    }
}

/// True iff every entry outside the diagonal blocks is exactly zero.
pub fn conforms(m: &SymMatrix, bs: &BlockStructure) -> Result<bool> {
    bs.check(m)?;
    let owner = bs.block_of();
    let n = m.dim();
    Ok((0..n).all(|i| (0..n).all(|j| owner[i] == owner[j] || m.get(i, j) == 0.0)))
}

/// Runs the alternating solver with block-diagonal initialization. `cfg.init`
/// must be `Diagonal` or `Block`.
pub fn blockwise_factorize(x: &DataMatrix, cfg: &SolverConfig) -> Result<RunHistory> {
    match cfg.init {
        InitKind::Diagonal | InitKind::Block(_) => factorize(x, cfg),
        InitKind::RandomPd => Err(Error::invalid(
            "blockwise factorization requires a Diagonal or Block initialization",
        )),
    }
}

/// Nonnegative factors `X ≈ A B` with `A` m×r and `B` r×n, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NmfFactors {
    m: usize,
    r: usize,
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl NmfFactors {
    /// Zero entries are raised to [`NMF_ENTRY_FLOOR`]; negative or non-finite entries are rejected.
    pub fn new(m: usize, r: usize, n: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != m * r {
            return Err(Error::DimMismatch {
                expected: m * r,
                found: a.len(),
            });
        }
        if b.len() != r * n {
            return Err(Error::DimMismatch {
                expected: r * n,
                found: b.len(),
            });
        }
        let clamp = |v: Vec<f64>| -> Result<Vec<f64>> {
            v.into_iter()
                .map(|e| {
                    if !e.is_finite() || e < 0.0 {
                        Err(Error::invalid("NMF factors must be finite and nonnegative"))
                    } else {
                        Ok(e.max(NMF_ENTRY_FLOOR))
                    }
                })
                .collect()
        };
        Ok(Self {
            m,
            r,
            n,
            a: clamp(a)?,
            b: clamp(b)?,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.m, self.r, self.n)
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn a_row(&self, i: usize) -> &[f64] {
        &self.a[i * self.r..(i + 1) * self.r]
    }

    pub fn b_col(&self, j: usize) -> Vec<f64> {
        (0..self.r).map(|k| self.b[k * self.n + j]).collect()
    }

    /// `A B`, row-major m×n.
    pub fn product(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m * self.n];
        for i in 0..self.m {
            for k in 0..self.r {
                let aik = self.a[i * self.r + k];
                for j in 0..self.n {
                    out[i * self.n + j] += aik * self.b[k * self.n + j];
                }
            }
        }
        out
    }

    /// `‖X − AB‖_F²`
    pub fn objective(&self, x: &DataMatrix) -> Result<f64> {
        self.check_data(x)?;
        Ok(self
            .product()
            .iter()
            .zip(x.as_slice())
            .map(|(p, v)| (v - p).powi(2))
            .sum())
    }

    /// Diagonal embedding `A_i = diag(a_i)`, `B_j = diag(b_j)` with the all-ones block structure.
    pub fn to_factor_pair(&self) -> FactorPair {
        let a = (0..self.m)
            .map(|i| SymMatrix::from_diag(self.a_row(i)))
            .collect();
        let b = (0..self.n)
            .map(|j| SymMatrix::from_diag(&self.b_col(j)))
            .collect();
        FactorPair::new(self.r, a, b, Some(BlockStructure::diagonal(self.r)))
            .expect("diagonal embedding conforms")
    }

    /// Reads the diagonals of a factor pair. Entries are taken verbatim.
    pub fn from_factor_pair(fp: &FactorPair) -> Self {
        let (m, r, n) = (fp.a.len(), fp.r, fp.b.len());
        let a = fp.a.iter().flat_map(|ai| ai.diag()).collect();
        let mut b = vec![0.0; r * n];
        for (j, bj) in fp.b.iter().enumerate() {
            for k in 0..r {
                b[k * n + j] = bj.get(k, k);
            }
        }
        Self { m, r, n, a, b }
    }

    fn check_data(&self, x: &DataMatrix) -> Result<()> {
        if x.rows() != self.m || x.cols() != self.n {
            return Err(Error::DimMismatch {
                expected: self.m * self.n,
                found: x.rows() * x.cols(),
            });
        }
        Ok(())
    }
}

/// One multiplicative NMF step: `A ← A∘(XBᵀ)/(ABBᵀ)`, then `B ← B∘(AᵀX)/(AᵀAB)`
/// using the updated `A`.
pub fn lee_seung_step(x: &DataMatrix, nf: &NmfFactors) -> Result<NmfFactors> {
    nf.check_data(x)?;
    let (m, r, n) = nf.shape();
    let xv = x.as_slice();

    // A-update
    let mut bbt = vec![0.0; r * r];
    for p in 0..r {
        for q in 0..r {
            bbt[p * r + q] = (0..n).map(|j| nf.b[p * n + j] * nf.b[q * n + j]).sum();
        }
    }
    let mut a = nf.a.clone();
    for i in 0..m {
        for k in 0..r {
            let num: f64 = (0..n).map(|j| xv[i * n + j] * nf.b[k * n + j]).sum();
            let den: f64 = (0..r).map(|q| nf.a[i * r + q] * bbt[q * r + k]).sum();
            if den <= 0.0 {
                return Err(Error::DivisionByZero { row: i, col: k });
            }
            a[i * r + k] = nf.a[i * r + k] * num / den;
        }
    }

    // B-update with the new A
    let mut ata = vec![0.0; r * r];
    for p in 0..r {
        for q in 0..r {
            ata[p * r + q] = (0..m).map(|i| a[i * r + p] * a[i * r + q]).sum();
        }
    }
    let mut b = nf.b.clone();
    for k in 0..r {
        for j in 0..n {
            let num: f64 = (0..m).map(|i| a[i * r + k] * xv[i * n + j]).sum();
            let den: f64 = (0..r).map(|q| ata[k * r + q] * nf.b[q * n + j]).sum();
            if den <= 0.0 {
                return Err(Error::DivisionByZero { row: k, col: j });
            }
            b[k * n + j] = nf.b[k * n + j] * num / den;
        }
    }
    Ok(NmfFactors { m, r, n, a, b })
}

/// Diagonal form of the multiplicative update for one column:
/// `b(k) · (Σ_i x_i a_i(k)) / (Σ_i ⟨a_i, b⟩ a_i(k))`, returned as `diag(·)`.
pub fn diagonal_mmu_update(a_list: &[Vec<f64>], b_j: &[f64], x: &[f64]) -> Result<SymMatrix> {
    if a_list.len() != x.len() {
        return Err(Error::DimMismatch {
            expected: a_list.len(),
            found: x.len(),
        });
    }
    let r = b_j.len();
    if let Some(bad) = a_list.iter().find(|a| a.len() != r) {
        return Err(Error::DimMismatch {
            expected: r,
            found: bad.len(),
        });
    }
    let fitted: Vec<f64> = a_list
        .iter()
        .map(|a| a.iter().zip(b_j).map(|(p, q)| p * q).sum())
        .collect();
    let diag = (0..r)
        .map(|k| {
            let num: f64 = a_list.iter().zip(x).map(|(a, xi)| xi * a[k]).sum();
            let den: f64 = a_list.iter().zip(&fitted).map(|(a, f)| f * a[k]).sum();
            if den <= 0.0 {
                Err(Error::DivisionByZero { row: k, col: 0 })
            } else {
                Ok(b_j[k] * num / den)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SymMatrix::from_diag(&diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::MeasurementMap;
    use crate::mmu::subproblem_update;
    use crate::rng::Rng;

    #[test]
    fn structure_validation() {
        assert!(BlockStructure::new(vec![]).is_err());
        assert!(BlockStructure::new(vec![2, 0]).is_err());
        let bs = BlockStructure::new(vec![2, 1, 3]).unwrap();
        assert_eq!(bs.dim(), 6);
        assert_eq!(bs.offsets(), vec![0, 2, 3]);
    }

    #[test]
    fn conforms_examples() {
        let d = SymMatrix::from_diag(&[1.0, 2.0, 3.0]);
        assert!(conforms(&d, &BlockStructure::diagonal(3)).unwrap());
        let dense = SymMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        assert!(!conforms(&dense, &BlockStructure::diagonal(2)).unwrap());
        let bs = BlockStructure::new(vec![2, 1]).unwrap();
        let built = bs
            .assemble(&[
                SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 5.0]]).unwrap(),
                SymMatrix::from_diag(&[3.0]),
            ])
            .unwrap();
        assert!(conforms(&built, &bs).unwrap());
        assert!(conforms(&built, &BlockStructure::diagonal(2)).is_err());
    }

    #[test]
    fn split_assemble_roundtrip() {
        let bs = BlockStructure::new(vec![1, 2]).unwrap();
        let mut rng = Rng::new(4);
        let blocks = vec![rng.random_pd(1, 0.1), rng.random_pd(2, 0.1)];
        let m = bs.assemble(&blocks).unwrap();
        assert_eq!(bs.split(&m).unwrap(), blocks);
    }

    #[test]
    fn nmf_new_clamps_zeros_and_rejects_negatives() {
        let nf = NmfFactors::new(1, 1, 1, vec![0.0], vec![2.0]).unwrap();
        assert_eq!(nf.a(), &[NMF_ENTRY_FLOOR]);
        assert!(NmfFactors::new(1, 1, 1, vec![-1.0], vec![2.0]).is_err());
        assert!(NmfFactors::new(1, 2, 1, vec![1.0], vec![2.0]).is_err());
    }

    #[test]
    fn ls_fixed_point() {
        let nf = NmfFactors::new(
            2,
            2,
            3,
            vec![1.0, 2.0, 0.5, 1.5],
            vec![1.0, 0.2, 3.0, 0.7, 1.1, 0.4],
        )
        .unwrap();
        let x = DataMatrix::new(2, 3, nf.product()).unwrap();
        let next = lee_seung_step(&x, &nf).unwrap();
        for (p, q) in next
            .a()
            .iter()
            .zip(nf.a())
            .chain(next.b().iter().zip(nf.b()))
        {
            assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn ls_hand_instance() {
        // a1 = (1,2), a2 = (2,1), b = (1,1), x = (3,3): numerator 9, denominator 9.
        let a = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let d = diagonal_mmu_update(&a, &[1.0, 1.0], &[3.0, 3.0]).unwrap();
        assert_eq!(d, SymMatrix::identity(2));

        let nf = NmfFactors::new(2, 2, 1, vec![1.0, 2.0, 2.0, 1.0], vec![1.0, 1.0]).unwrap();
        let x = DataMatrix::new(2, 1, vec![3.0, 3.0]).unwrap();
        let next = lee_seung_step(&x, &nf).unwrap();
        assert_eq!(next.b(), &[1.0, 1.0]);
    }

    #[test]
    fn diagonal_update_symmetric_case() {
        let a = vec![vec![0.5, 0.5, 0.5]; 4];
        let b = [2.0, 2.0, 2.0];
        let x = [1.0, 2.0, 3.0, 4.0];
        let d = diagonal_mmu_update(&a, &b, &x).unwrap();
        let inner: f64 = 0.5 * 2.0 * 3.0;
        let factor = x.iter().sum::<f64>() / (4.0 * inner);
        for k in 0..3 {
            assert!((d.get(k, k) - 2.0 * factor).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_update_rejects_zero_denominator() {
        let a = vec![vec![0.0, 1.0]];
        assert!(matches!(
            diagonal_mmu_update(&a, &[1.0, 1.0], &[1.0]),
            Err(Error::DivisionByZero { .. })
        ));
    }

    #[test]
    fn diagonal_update_matches_embedded_general_update() {
        let mut rng = Rng::new(77);
        for _ in 0..100 {
            let r = rng.range_inclusive(1, 5);
            let m = rng.range_inclusive(1, 8);
            let a: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..r).map(|_| 0.1 + rng.uniform()).collect())
                .collect();
            let b: Vec<f64> = (0..r).map(|_| 0.1 + rng.uniform()).collect();
            let x: Vec<f64> = (0..m).map(|_| rng.uniform()).collect();
            let direct = diagonal_mmu_update(&a, &b, &x).unwrap();
            let map =
                MeasurementMap::new(a.iter().map(|v| SymMatrix::from_diag(v)).collect()).unwrap();
            let general = subproblem_update(&map, &x, &SymMatrix::from_diag(&b)).unwrap();
            for k in 0..r {
                let (p, q) = (direct.get(k, k), general.get(k, k));
                assert!((p - q).abs() <= 1e-10 * (1.0 + q.abs()));
            }
        }
    }

    #[test]
    fn ls_objective_nonincreasing() {
        let mut rng = Rng::new(12);
        for _ in 0..20 {
            let (m, r, n) = (
                rng.range_inclusive(2, 8),
                rng.range_inclusive(1, 4),
                rng.range_inclusive(2, 8),
            );
            let x = DataMatrix::new(m, n, (0..m * n).map(|_| rng.uniform()).collect()).unwrap();
            let mut nf = NmfFactors::new(
                m,
                r,
                n,
                (0..m * r).map(|_| 0.1 + rng.uniform()).collect(),
                (0..r * n).map(|_| 0.1 + rng.uniform()).collect(),
            )
            .unwrap();
            let mut f = nf.objective(&x).unwrap();
            for _ in 0..30 {
                nf = lee_seung_step(&x, &nf).unwrap();
                let g = nf.objective(&x).unwrap();
                assert!(g <= f + 1e-12 * (1.0 + f));
                f = g;
            }
        }
    }
}
