//! PSD factorization of nonnegative 3-mode tensors,
//! `T[i1,i2,i3] ≈ sum(C¹_{i1} ∘ C²_{i2} ∘ C³_{i3})`, by block coordinate descent.
//!
//! Holding two families fixed, each slice factor of the third mode is a
//! least-squares problem over the Schur-product measurement map and gets one
//! multiplicative update. Modes are cycled 1, 2, 3 in every sweep.
//!
//! Storage and slice order: `i1` varies fastest, then `i2`, then `i3`. For the
//! update of mode `k`, the two remaining modes `p < q` enumerate measurements
//! with `i_p` fastest.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measurement::MeasurementMap;
use crate::mmu::{kkt_side, update_family, InitKind, SolverConfig, INIT_SHIFT};
use crate::rng::Rng;
use crate::structured::BlockStructure;
use crate::symmat::SymMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    d: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(d: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("tensor dimension must be positive"));
        }
        if data.len() != d * d * d {
            return Err(Error::DimMismatch {
                expected: d * d * d,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "tensor entries must be finite and nonnegative",
            ));
        }
        Ok(Self { d, data })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn index(&self, i1: usize, i2: usize, i3: usize) -> usize {
        i1 + self.d * (i2 + self.d * i3)
    }

    pub fn get(&self, i1: usize, i2: usize, i3: usize) -> f64 {
        self.data[self.index(i1, i2, i3)]
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Entries with mode `mode` fixed at `t`, ordered by the remaining modes `p < q`, `i_p` fastest.
    pub fn slice(&self, mode: Mode, t: usize) -> Vec<f64> {
        let d = self.d;
        let mut out = Vec::with_capacity(d * d);
        for iq in 0..d {
            for ip in 0..d {
                let idx = match mode {
                    Mode::First => self.index(t, ip, iq),
                    Mode::Second => self.index(ip, t, iq),
                    Mode::Third => self.index(ip, iq, t),
                };
                out.push(self.data[idx]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    First,
    Second,
    Third,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::First, Mode::Second, Mode::Third];

    pub fn index(self) -> usize {
        match self {
            Mode::First => 0,
            Mode::Second => 1,
            Mode::Third => 2,
        }
    }

    /// The two other modes in increasing order.
    pub fn others(self) -> (Mode, Mode) {
        match self {
            Mode::First => (Mode::Second, Mode::Third),
            Mode::Second => (Mode::First, Mode::Third),
            Mode::Third => (Mode::First, Mode::Second),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFactors {
    pub r: usize,
    pub families: [Vec<SymMatrix>; 3],
}

impl TensorFactors {
    pub fn new(r: usize, families: [Vec<SymMatrix>; 3]) -> Result<Self> {
        let d = families[0].len();
        if d == 0 {
            return Err(Error::invalid("factor families must be nonempty"));
        }
        for fam in &families {
            if fam.len() != d {
                return Err(Error::DimMismatch {
                    expected: d,
                    found: fam.len(),
                });
            }
            if let Some(m) = fam.iter().find(|m| m.dim() != r) {
                return Err(Error::DimMismatch {
                    expected: r,
                    found: m.dim(),
                });
            }
        }
        Ok(Self { r, families })
    }

    pub fn d(&self) -> usize {
        self.families[0].len()
    }

    pub fn family(&self, mode: Mode) -> &[SymMatrix] {
        &self.families[mode.index()]
    }
}

fn eval_families(families: &[Vec<SymMatrix>; 3]) -> Vec<f64> {
    let d = families[0].len();
    let mut out = vec![0.0; d * d * d];
    for (i3, c3) in families[2].iter().enumerate() {
        for (i2, c2) in families[1].iter().enumerate() {
            let c23 = c2.schur(c3);
            for (i1, c1) in families[0].iter().enumerate() {
                out[i1 + d * (i2 + d * i3)] = c1.inner(&c23);
            }
        }
    }
    out
}

/// `T[i1,i2,i3] = Σ_{p,q} C¹_{i1}(p,q) C²_{i2}(p,q) C³_{i3}(p,q)`.
pub fn tensor_eval(tf: &TensorFactors) -> Tensor3 {
    Tensor3 {
        d: tf.d(),
        data: eval_families(&tf.families),
    }
}

fn loss_of(t: &Tensor3, families: &[Vec<SymMatrix>; 3]) -> f64 {
    eval_families(families)
        .iter()
        .zip(&t.data)
        .map(|(p, q)| (p - q).powi(2))
        .sum()
}

/// Squared loss `Σ (T − eval(tf))²`.
pub fn tensor_loss(t: &Tensor3, tf: &TensorFactors) -> Result<f64> {
    check_shapes(t, tf)?;
    Ok(loss_of(t, &tf.families))
}

fn check_shapes(t: &Tensor3, tf: &TensorFactors) -> Result<()> {
    if t.d() != tf.d() {
        return Err(Error::DimMismatch {
            expected: t.d(),
            found: tf.d(),
        });
    }
    Ok(())
}

fn schur_products(first: &[SymMatrix], second: &[SymMatrix]) -> Vec<SymMatrix> {
    second
        .iter()
        .flat_map(|s| first.iter().map(move |f| f.schur(s)))
        .collect()
}

/// Map with measurement matrices `first[ip] ∘ second[iq]`, `ip` fastest.
pub fn schur_map(first: &[SymMatrix], second: &[SymMatrix]) -> Result<MeasurementMap> {
    if first.len() != second.len() {
        return Err(Error::DimMismatch {
            expected: first.len(),
            found: second.len(),
        });
    }
    if let Some(f) = first.first() {
        if let Some(bad) = first.iter().chain(second).find(|m| m.dim() != f.dim()) {
            return Err(Error::DimMismatch {
                expected: f.dim(),
                found: bad.dim(),
            });
        }
    }
    MeasurementMap::new(schur_products(first, second))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeReport {
    pub mode: Mode,
    /// Global loss before the update.
    pub before: f64,
    /// Global loss after the update, before damping.
    pub after: f64,
    pub frozen: Vec<usize>,
}

impl ModeReport {
    pub fn relative_increase(&self) -> f64 {
        (self.after - self.before) / (1.0 + self.before)
    }
}

/// Updates every slice factor of `mode` against its tensor slice, then adds `ε I`.
pub fn tensor_mode_update(
    t: &Tensor3,
    tf: &TensorFactors,
    mode: Mode,
    damping: f64,
) -> Result<(TensorFactors, ModeReport)> {
    check_shapes(t, tf)?;
    let (p, q) = mode.others();
    let mats = schur_products(tf.family(p), tf.family(q));
    let before = loss_of(t, &tf.families);
    let up = update_family(
        tf.family(mode),
        &mats,
        |s| t.slice(mode, s),
        BlockStructure::dense(tf.r),
        damping,
    )?;
    let mut undamped = tf.families.clone();
    undamped[mode.index()] = up.undamped;
    let after = loss_of(t, &undamped);
    let mut families = tf.families.clone();
    families[mode.index()] = up.damped;
    Ok((
        TensorFactors { r: tf.r, families },
        ModeReport {
            mode,
            before,
            after,
            frozen: up.frozen,
        },
    ))
}

/// Per-mode stationarity residuals `max_s ‖Aᵀx_s − [AᵀA](C_s)‖_F / (1 + ‖T‖_F)`.
pub fn tensor_kkt_residual(t: &Tensor3, tf: &TensorFactors) -> Result<[f64; 3]> {
    check_shapes(t, tf)?;
    let scale = 1.0 + t.sum_sq().sqrt();
    let mut out = [0.0; 3];
    for mode in Mode::ALL {
        let (p, q) = mode.others();
        let mats = schur_products(tf.family(p), tf.family(q));
        out[mode.index()] = kkt_side(|s| t.slice(mode, s), tf.family(mode), &mats) / scale;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorSweepRecord {
    pub sweep: usize,
    pub objective: f64,
    pub err: f64,
    pub kkt: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct TensorRunHistory {
    pub records: Vec<TensorSweepRecord>,
    pub mode_updates: Vec<ModeReport>,
    pub factors: TensorFactors,
    pub restart: usize,
    pub elapsed: Duration,
}

impl TensorRunHistory {
    pub fn final_record(&self) -> &TensorSweepRecord {
        self.records.last().expect("history has the initial record")
    }

    pub fn final_objective(&self) -> f64 {
        self.final_record().objective
    }

    pub fn final_err(&self) -> f64 {
        self.final_record().err
    }

    pub fn max_relative_increase(&self) -> f64 {
        self.mode_updates
            .iter()
            .map(ModeReport::relative_increase)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Random PD slice factors `G Gᵀ + 0.1 I` for modes 1, 2, 3 in turn, scaled by a
/// common factor so the tensor mean matches.
pub fn init_tensor_factors(
    t: &Tensor3,
    cfg: &SolverConfig,
    restart: usize,
) -> Result<TensorFactors> {
    cfg.validate()?;
    if cfg.init != InitKind::RandomPd {
        return Err(Error::invalid(
            "tensor factorization supports only random PD initialization",
        ));
    }
    let mut rng = Rng::new(Rng::stream_seed(cfg.seed, restart as u64));
    let d = t.d();
    let mut draw = || {
        (0..d)
            .map(|_| rng.random_pd(cfg.r, INIT_SHIFT))
            .collect::<Vec<_>>()
    };
    let mut families = [draw(), draw(), draw()];
    let fitted = eval_families(&families).iter().sum::<f64>() / (d * d * d) as f64;
    let target = t.mean();
    if target > 0.0 && fitted > 0.0 {
        let s = (target / fitted).cbrt();
        for f in families.iter_mut().flatten() {
            *f = f.scale(s);
        }
    }
    TensorFactors::new(cfg.r, families)
}

fn record(t: &Tensor3, tf: &TensorFactors, sweep: usize) -> Result<TensorSweepRecord> {
    let objective = tensor_loss(t, tf)?;
    Ok(TensorSweepRecord {
        sweep,
        objective,
        err: objective / t.sum_sq(),
        kkt: tensor_kkt_residual(t, tf)?,
    })
}

pub fn tensor_factorize_from(
    t: &Tensor3,
    initial: TensorFactors,
    cfg: &SolverConfig,
    restart: usize,
) -> Result<TensorRunHistory> {
    let start = Instant::now();
    let mut tf = initial;
    let mut records = vec![record(t, &tf, 0)?];
    let mut mode_updates = Vec::with_capacity(3 * cfg.max_sweeps);
    for sweep in 1..=cfg.max_sweeps {
        let prev = records.last().expect("nonempty").objective;
        for mode in Mode::ALL {
            let (next, rep) = tensor_mode_update(t, &tf, mode, cfg.damping)?;
            tf = next;
            mode_updates.push(rep);
        }
        let rec = record(t, &tf, sweep)?;
        records.push(rec);
        if cfg.rel_tol > 0.0 && prev > 0.0 && (prev - rec.objective) / prev < cfg.rel_tol {
            break;
        }
    }
    Ok(TensorRunHistory {
        records,
        mode_updates,
        factors: tf,
        restart,
        elapsed: start.elapsed(),
    })
}

/// Best-of-restarts tensor factorization, seeded as in [`crate::mmu::factorize`].
pub fn tensor_factorize(t: &Tensor3, cfg: &SolverConfig) -> Result<TensorRunHistory> {
    cfg.validate()?;
    if t.sum_sq() == 0.0 {
        return Err(Error::ZeroData);
    }
    let start = Instant::now();
    let runs: Vec<TensorRunHistory> = (0..cfg.restarts)
        .into_par_iter()
        .map(|k| tensor_factorize_from(t, init_tensor_factors(t, cfg, k)?, cfg, k))
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
