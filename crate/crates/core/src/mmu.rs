//! Matrix multiplicative updates and the alternating PSD factorization solver.
//!
//! For fixed PD measurement matrices `A_k` and data `x ≥ 0`, one update of
//! `B ↦ ‖x − A(B)‖²` is
//!
//! ```text
//! W     = ([AᵀA](B_old))⁻¹ # B_old
//! B_new = W (Aᵀx) W
//! ```
//!
//! which never increases the objective and keeps `B` positive definite.
//! [`factorize`] alternates this update over all rows (the `A_i`) and then all
//! columns (the `B_j`) of the data matrix.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measurement::MeasurementMap;
use crate::rng::Rng;
use crate::structured::{conforms, BlockStructure};
use crate::symmat::{geometric_mean, min_eigenvalue, sym_inv, SymMatrix};

/// Value a factor is frozen at when its data vector is zero and damping is off.
pub const FROZEN_FLOOR: f64 = 1e-12;

/// Diagonal shift used by random initialization.
pub const INIT_SHIFT: f64 = 0.1;

/// Work (updates × r³) above which a half-sweep fans out over threads.
const PARALLEL_WORK_THRESHOLD: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DataMatrix {
    /// Row-major entries; all must be finite and nonnegative.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("data matrix must be nonempty"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!(
                "entry ({}, {}) is negative or non-finite",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimMismatch {
                expected: cols,
                found: bad.len(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.sum_sq().sqrt()
    }
}

/// Factor families `{A_i}` (one per row) and `{B_j}` (one per column).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub r: usize,
    pub a: Vec<SymMatrix>,
    pub b: Vec<SymMatrix>,
    pub structure: Option<BlockStructure>,
}

impl FactorPair {
    pub fn new(
        r: usize,
        a: Vec<SymMatrix>,
        b: Vec<SymMatrix>,
        structure: Option<BlockStructure>,
    ) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::invalid("factor families must be nonempty"));
        }
        for m in a.iter().chain(&b) {
            if m.dim() != r {
                return Err(Error::DimMismatch {
                    expected: r,
                    found: m.dim(),
                });
            }
        }
        if let Some(bs) = &structure {
            if bs.dim() != r {
                return Err(Error::DimMismatch {
                    expected: r,
                    found: bs.dim(),
                });
            }
            for m in a.iter().chain(&b) {
                if !conforms(m, bs)? {
                    return Err(Error::invalid("factor does not conform to block structure"));
                }
            }
        }
        Ok(Self { r, a, b, structure })
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    /// `tr(A_i B_j)`
    pub fn eval(&self, i: usize, j: usize) -> f64 {
        self.a[i].inner(&self.b[j])
    }

    /// Row-major m×n matrix of `tr(A_i B_j)`.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.m() * self.n());
        for ai in &self.a {
            out.extend(self.b.iter().map(|bj| ai.inner(bj)));
        }
        out
    }

    /// Smallest eigenvalue over all factors.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        self.a
            .iter()
            .chain(&self.b)
            .map(min_eigenvalue)
            .try_fold(f64::INFINITY, |acc, l| l.map(|l| acc.min(l)))
    }

    fn block_structure(&self) -> BlockStructure {
        self.structure
            .clone()
            .unwrap_or_else(|| BlockStructure::dense(self.r))
    }

    fn check_data(&self, x: &DataMatrix) -> Result<()> {
        if x.rows() != self.m() {
            return Err(Error::DimMismatch {
                expected: self.m(),
                found: x.rows(),
            });
        }
        if x.cols() != self.n() {
            return Err(Error::DimMismatch {
                expected: self.n(),
                found: x.cols(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitKind {
    RandomPd,
    Diagonal,
    Block(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub r: usize,
    pub max_sweeps: usize,
    pub damping: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Stop once the relative objective decrease of a sweep falls below this; 0 disables.
    pub rel_tol: f64,
    pub init: InitKind,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            r: 1,
            max_sweeps: 500,
            damping: 1e-8,
            restarts: 1,
            seed: 0,
            rel_tol: 0.0,
            init: InitKind::RandomPd,
        }
    }
}

impl SolverConfig {
    pub fn with_rank(r: usize) -> Self {
        Self {
            r,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::invalid("r must be positive"));
        }
        if self.max_sweeps == 0 {
            return Err(Error::invalid("max_sweeps must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be positive"));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::invalid("damping must be finite and nonnegative"));
        }
        if !(self.rel_tol >= 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::invalid("rel_tol must be finite and nonnegative"));
        }
        self.structure().map(|_| ())
    }

    /// Block structure implied by `init`; `None` for unstructured factors.
    pub fn structure(&self) -> Result<Option<BlockStructure>> {
        let bs = match &self.init {
            InitKind::RandomPd => return Ok(None),
            InitKind::Diagonal => BlockStructure::diagonal(self.r),
            InitKind::Block(sizes) => BlockStructure::new(sizes.clone())?,
        };
        if bs.dim() != self.r {
            return Err(Error::invalid(format!(
                "block sizes sum to {}, expected r = {}",
                bs.dim(),
                self.r
            )));
        }
        Ok(Some(bs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrozenFactor {
    pub side: Side,
    pub index: usize,
    pub sweep: usize,
}

/// Objective around one half-sweep: `before` at the incoming (damped) factors,
/// `after` at the freshly updated family before damping is added.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSweepReport {
    pub side: Side,
    pub before: f64,
    pub after: f64,
    pub frozen: Vec<usize>,
}

impl HalfSweepReport {
    /// `(after − before) / (1 + before)`; positive values are increases.
    pub fn relative_increase(&self) -> f64 {
        (self.after - self.before) / (1.0 + self.before)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    pub sweep: usize,
    pub objective: f64,
    pub err: f64,
    pub kkt_a: f64,
    pub kkt_b: f64,
}

#[derive(Debug, Clone)]
pub struct RunHistory {
    /// Sweep 0 is the initialization.
    pub records: Vec<SweepRecord>,
    pub half_sweeps: Vec<HalfSweepReport>,
    pub factors: FactorPair,
    pub frozen: Vec<FrozenFactor>,
    pub restart: usize,
    pub elapsed: Duration,
}

impl RunHistory {
    pub fn final_record(&self) -> &SweepRecord {
        self.records.last().expect("history has the initial record")
    }

    pub fn final_objective(&self) -> f64 {
        self.final_record().objective
    }

    pub fn final_err(&self) -> f64 {
        self.final_record().err
    }

    pub fn sweeps(&self) -> usize {
        self.final_record().sweep
    }

    /// Largest pre-damping relative objective increase over all half-sweeps.
    pub fn max_relative_increase(&self) -> f64 {
        self.half_sweeps
            .iter()
            .map(HalfSweepReport::relative_increase)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Measurement matrices split into the blocks of a structure.
struct BlockedMap {
    structure: BlockStructure,
    /// `blocks[k][b]` is block `b` of measurement matrix `k`.
    blocks: Vec<Vec<SymMatrix>>,
}

impl BlockedMap {
    fn new(mats: &[SymMatrix], structure: BlockStructure) -> Result<Self> {
        let blocks = mats
            .iter()
            .map(|m| structure.split(m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { structure, blocks })
    }

    fn update(&self, x: &[f64], b_old: &SymMatrix) -> Result<SymMatrix> {
        if x.len() != self.blocks.len() {
            return Err(Error::DimMismatch {
                expected: self.blocks.len(),
                found: x.len(),
            });
        }
        let old = self.structure.split(b_old)?;
        let traces: Vec<f64> = self
            .blocks
            .iter()
            .map(|ak| ak.iter().zip(&old).map(|(p, q)| p.inner(q)).sum())
            .collect();
        let new_blocks = old
            .iter()
            .enumerate()
            .map(|(blk, b_blk)| {
                let dim = b_blk.dim();
                let mut gram = SymMatrix::zeros(dim);
                let mut adj = SymMatrix::zeros(dim);
                for ((ak, &t), &xk) in self.blocks.iter().zip(&traces).zip(x) {
                    gram.add_scaled_mut(t, &ak[blk]);
                    adj.add_scaled_mut(xk, &ak[blk]);
                }
                let inv = sym_inv(&gram).map_err(|e| match e {
                    Error::Singular { min_eigenvalue } => Error::NotPd { min_eigenvalue },
                    other => other,
                })?;
                let w = geometric_mean(&inv, b_blk)?;
                Ok(w.sandwich(&adj))
            })
            .collect::<Result<Vec<_>>>()?;
        self.structure.assemble(&new_blocks)
    }
}

/// One multiplicative update `B_new = W (Aᵀx) W` with `W = ([AᵀA](B_old))⁻¹ # B_old`.
pub fn subproblem_update(map: &MeasurementMap, x: &[f64], b_old: &SymMatrix) -> Result<SymMatrix> {
    if x.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::invalid("data vector must be nonnegative"));
    }
    if b_old.dim() != map.dim() {
        return Err(Error::DimMismatch {
            expected: map.dim(),
            found: b_old.dim(),
        });
    }
    BlockedMap::new(map.mats(), BlockStructure::dense(map.dim()))?.update(x, b_old)
}

fn objective_of(x: &DataMatrix, a: &[SymMatrix], b: &[SymMatrix]) -> f64 {
    let mut total = 0.0;
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            let d = x.get(i, j) - ai.inner(bj);
            total += d * d;
        }
    }
    total
}

/// `Σ_{ij} (X_ij − tr(A_i B_j))²`
pub fn objective(x: &DataMatrix, fp: &FactorPair) -> Result<f64> {
    fp.check_data(x)?;
    Ok(objective_of(x, &fp.a, &fp.b))
}

/// Objective divided by `Σ X_ij²`.
pub fn normalized_error(x: &DataMatrix, fp: &FactorPair) -> Result<f64> {
    let denom = x.sum_sq();
    if denom == 0.0 {
        return Err(Error::ZeroData);
    }
    Ok(objective(x, fp)? / denom)
}

pub(crate) fn kkt_side(
    data_vec: impl Fn(usize) -> Vec<f64>,
    targets: &[SymMatrix],
    fixed: &[SymMatrix],
) -> f64 {
    targets
        .iter()
        .enumerate()
        .map(|(t, target)| {
            let xv = data_vec(t);
            let mut diff = SymMatrix::zeros(target.dim());
            for (f, &xk) in fixed.iter().zip(&xv) {
                diff.add_scaled_mut(xk - f.inner(target), f);
            }
            diff.frobenius_norm()
        })
        .fold(0.0, f64::max)
}

/// Stationarity residuals `(max_i ‖Bᵀ(X_{i:}) − [BᵀB](A_i)‖_F, max_j ‖Aᵀ(X_{:j}) − [AᵀA](B_j)‖_F)`,
/// each divided by `1 + ‖X‖_F`.
pub fn kkt_residual(x: &DataMatrix, fp: &FactorPair) -> Result<(f64, f64)> {
    fp.check_data(x)?;
    let scale = 1.0 + x.frobenius_norm();
    let ka = kkt_side(|i| x.row(i).to_vec(), &fp.a, &fp.b);
    let kb = kkt_side(|j| x.column(j), &fp.b, &fp.a);
    Ok((ka / scale, kb / scale))
}

pub(crate) struct FamilyUpdate {
    pub(crate) undamped: Vec<SymMatrix>,
    pub(crate) damped: Vec<SymMatrix>,
    pub(crate) frozen: Vec<usize>,
}

pub(crate) fn update_family(
    targets: &[SymMatrix],
    fixed: &[SymMatrix],
    data_vec: impl Fn(usize) -> Vec<f64> + Sync,
    structure: BlockStructure,
    damping: f64,
) -> Result<FamilyUpdate> {
    let r = structure.dim();
    let map = BlockedMap::new(fixed, structure)?;
    let one = |t: usize| -> Result<SymMatrix> {
        let xv = data_vec(t);
        if xv.iter().all(|v| *v == 0.0) {
            return Ok(SymMatrix::zeros(r));
        }
        map.update(&xv, &targets[t])
    };
    let work = targets.len() * fixed.len() * r * r * r;
    let undamped: Vec<SymMatrix> = if work >= PARALLEL_WORK_THRESHOLD {
        (0..targets.len())
            .into_par_iter()
            .map(one)
            .collect::<Result<_>>()?
    } else {
        (0..targets.len()).map(one).collect::<Result<_>>()?
    };

    let mut frozen = Vec::new();
    let damped = undamped
        .iter()
        .enumerate()
        .map(|(t, u)| {
            let mut d = u.clone();
            if damping > 0.0 {
                d.add_identity_mut(damping);
            } else if data_vec(t).iter().all(|v| *v == 0.0) {
                frozen.push(t);
                d = SymMatrix::scaled_identity(r, FROZEN_FLOOR);
            }
            d
        })
        .collect();
    Ok(FamilyUpdate {
        undamped,
        damped,
        frozen,
    })
}

/// Updates every `A_i` against row `X_{i:}` with the `B_j` held fixed, then adds `ε I`.
pub fn half_sweep_a(
    x: &DataMatrix,
    fp: &FactorPair,
    damping: f64,
) -> Result<(FactorPair, HalfSweepReport)> {
    fp.check_data(x)?;
    let before = objective_of(x, &fp.a, &fp.b);
    let up = update_family(
        &fp.a,
        &fp.b,
        |i| x.row(i).to_vec(),
        fp.block_structure(),
        damping,
    )?;
    let after = objective_of(x, &up.undamped, &fp.b);
    let next = FactorPair {
        a: up.damped,
        ..fp.clone()
    };
    Ok((
        next,
        HalfSweepReport {
            side: Side::A,
            before,
            after,
            frozen: up.frozen,
        },
    ))
}

/// Updates every `B_j` against column `X_{:j}` with the `A_i` held fixed, then adds `ε I`.
pub fn half_sweep_b(
    x: &DataMatrix,
    fp: &FactorPair,
    damping: f64,
) -> Result<(FactorPair, HalfSweepReport)> {
    fp.check_data(x)?;
    let before = objective_of(x, &fp.a, &fp.b);
    let up = update_family(&fp.b, &fp.a, |j| x.column(j), fp.block_structure(), damping)?;
    let after = objective_of(x, &fp.a, &up.undamped);
    let next = FactorPair {
        b: up.damped,
        ..fp.clone()
    };
    Ok((
        next,
        HalfSweepReport {
            side: Side::B,
            before,
            after,
            frozen: up.frozen,
        },
    ))
}

/// Random PD factors `G Gᵀ + 0.1 I` (per block when structured), drawn for
/// `A_1..A_m` then `B_1..B_n`, then scaled by a common factor so the mean of
/// `tr(A_i B_j)` equals the mean of `X`.
pub fn init_factors(x: &DataMatrix, cfg: &SolverConfig, restart: usize) -> Result<FactorPair> {
    cfg.validate()?;
    let structure = cfg.structure()?;
    let bs = structure
        .clone()
        .unwrap_or_else(|| BlockStructure::dense(cfg.r));
    let mut rng = Rng::new(Rng::stream_seed(cfg.seed, restart as u64));
    let mut draw = || -> SymMatrix {
        let blocks: Vec<SymMatrix> = bs
            .sizes()
            .iter()
            .map(|&s| rng.random_pd(s, INIT_SHIFT))
            .collect();
        bs.assemble(&blocks).expect("blocks match structure")
    };
    let a: Vec<SymMatrix> = (0..x.rows()).map(|_| draw()).collect();
    let b: Vec<SymMatrix> = (0..x.cols()).map(|_| draw()).collect();

    let mut fp = FactorPair::new(cfg.r, a, b, structure)?;
    let fitted_mean = fp.reconstruct().iter().sum::<f64>() / (x.rows() * x.cols()) as f64;
    let target = x.mean();
    if target > 0.0 && fitted_mean > 0.0 {
        let s = (target / fitted_mean).sqrt();
        for f in fp.a.iter_mut().chain(fp.b.iter_mut()) {
            *f = f.scale(s);
        }
    }
    Ok(fp)
}

/// Stateful alternating solver over one initialization.
pub struct Solver<'a> {
    data: &'a DataMatrix,
    factors: FactorPair,
    damping: f64,
    sweep: usize,
    frozen: Vec<FrozenFactor>,
}

impl<'a> Solver<'a> {
    pub fn new(data: &'a DataMatrix, factors: FactorPair, damping: f64) -> Result<Self> {
        factors.check_data(data)?;
        Ok(Self {
            data,
            factors,
            damping,
            sweep: 0,
            frozen: Vec::new(),
        })
    }

    pub fn factors(&self) -> &FactorPair {
        &self.factors
    }

    pub fn into_factors(self) -> FactorPair {
        self.factors
    }

    /// One full sweep: A-half-sweep, then B-half-sweep against the new `A_i`.
    pub fn sweep(&mut self) -> Result<[HalfSweepReport; 2]> {
        self.sweep += 1;
        let (fp, rep_a) = half_sweep_a(self.data, &self.factors, self.damping)?;
        let (fp, rep_b) = half_sweep_b(self.data, &fp, self.damping)?;
        self.factors = fp;
        for (rep, side) in [(&rep_a, Side::A), (&rep_b, Side::B)] {
            self.frozen
                .extend(rep.frozen.iter().map(|&index| FrozenFactor {
                    side,
                    index,
                    sweep: self.sweep,
                }));
        }
        Ok([rep_a, rep_b])
    }

    pub fn record(&self) -> Result<SweepRecord> {
        let objective = objective(self.data, &self.factors)?;
        let denom = self.data.sum_sq();
        let (kkt_a, kkt_b) = kkt_residual(self.data, &self.factors)?;
        Ok(SweepRecord {
            sweep: self.sweep,
            objective,
            err: if denom > 0.0 {
                objective / denom
            } else {
                f64::NAN
            },
            kkt_a,
            kkt_b,
        })
    }
}

/// Runs the alternating solver from the given factors.
pub fn factorize_from(
    x: &DataMatrix,
    initial: FactorPair,
    cfg: &SolverConfig,
    restart: usize,
) -> Result<RunHistory> {
    let start = Instant::now();
    let mut solver = Solver::new(x, initial, cfg.damping)?;
    let mut records = vec![solver.record()?];
    let mut half_sweeps = Vec::with_capacity(2 * cfg.max_sweeps);
    for _ in 0..cfg.max_sweeps {
        let prev = records.last().expect("nonempty").objective;
        half_sweeps.extend(solver.sweep()?);
        let rec = solver.record()?;
        records.push(rec);
        if cfg.rel_tol > 0.0 && prev > 0.0 && (prev - rec.objective) / prev < cfg.rel_tol {
            break;
        }
    }
    let frozen = std::mem::take(&mut solver.frozen);
    Ok(RunHistory {
        records,
        half_sweeps,
        factors: solver.into_factors(),
        frozen,
        restart,
        elapsed: start.elapsed(),
    })
}

/// Best-of-restarts alternating factorization. Restart `k` is seeded from
/// `Rng::stream_seed(cfg.seed, k)`; the run with the least final objective is
/// returned, ties going to the lowest restart index.
pub fn factorize(x: &DataMatrix, cfg: &SolverConfig) -> Result<RunHistory> {
    cfg.validate()?;
    if x.sum_sq() == 0.0 {
        return Err(Error::ZeroData);
    }
    let start = Instant::now();
    let runs: Vec<RunHistory> = (0..cfg.restarts)
        .into_par_iter()
        .map(|k| factorize_from(x, init_factors(x, cfg, k)?, cfg, k))
        .collect::<Result<_>>()?;
    let mut best = runs
        .into_iter()
        .reduce(|best, run| {
            if run.final_objective() < best.final_objective() {
                run
            } else {
                best
            }
        })
        .expect("at least one restart");
    best.elapsed = start.elapsed();
    Ok(best)
}
