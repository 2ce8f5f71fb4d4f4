//! Text file formats and synthetic instance generators.
//!
//! * Matrix file: one row per line, comma-separated, no header, blank lines ignored.
//! * Factor file: `psdfact-factors v1`, `m n r`, `blocks s1,s2,...` or `blocks none`,
//!   then `A i` / `B j` labels (1-based), each followed by r comma-separated rows.
//! * Tensor file: `psdfact-tensor v1`, `d d d`, then d³ values one per line with
//!   `i1` fastest and `i3` slowest.
//! * Tensor factor file: `psdfact-tensor-factors v1`, `d r`, then `C k i` labels
//!   (mode k, slice i, both 1-based) each followed by r rows.
//!
//! Factor values are written with 17 significant digits, which round-trips f64 exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mmu::{DataMatrix, FactorPair, RunHistory};
use crate::rng::Rng;
use crate::structured::BlockStructure;
use crate::symmat::SymMatrix;
use crate::tensor3::{Tensor3, TensorFactors, TensorRunHistory};

pub const FACTOR_MAGIC: &str = "psdfact-factors v1";
pub const TENSOR_MAGIC: &str = "psdfact-tensor v1";
pub const TENSOR_FACTOR_MAGIC: &str = "psdfact-tensor-factors v1";
pub const HISTORY_HEADER: &str = "sweep,objective,err,kkt_a,kkt_b";
pub const TENSOR_HISTORY_HEADER: &str = "sweep,objective,err,kkt_1,kkt_2,kkt_3";

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn parse_f64(token: &str, line: usize) -> Result<f64> {
    let v: f64 = token.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("not a number: {:?}", token.trim()),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: "non-finite value".into(),
        });
    }
    Ok(v)
}

fn parse_row(text: &str, line: usize) -> Result<Vec<f64>> {
    text.split(',').map(|t| parse_f64(t, line)).collect()
}

fn parse_usize(token: &str, line: usize) -> Result<usize> {
    token.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("not a nonnegative integer: {:?}", token.trim()),
    })
}

fn fmt_exact(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_matrix(text: &str) -> Result<DataMatrix> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(parse_row(line, idx + 1)?);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no data rows".into(),
        });
    }
    DataMatrix::from_rows(&rows)
}

pub fn format_matrix(x: &DataMatrix) -> String {
    let mut out = String::new();
    for row in x.to_rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn read_matrix(path: &Path) -> Result<DataMatrix> {
    parse_matrix(&fs::read_to_string(path)?)
}

pub fn write_matrix(path: &Path, x: &DataMatrix) -> Result<()> {
    write_atomic(path, &format_matrix(x))
}

fn push_sym(out: &mut String, m: &SymMatrix) {
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_exact(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
}

pub fn format_factors(fp: &FactorPair) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{FACTOR_MAGIC}");
    let _ = writeln!(out, "{} {} {}", fp.m(), fp.n(), fp.r);
    match &fp.structure {
        Some(bs) => {
            let sizes: Vec<String> = bs.sizes().iter().map(usize::to_string).collect();
            let _ = writeln!(out, "blocks {}", sizes.join(","));
        }
        None => out.push_str("blocks none\n"),
    }
    for (i, a) in fp.a.iter().enumerate() {
        let _ = writeln!(out, "A {}", i + 1);
        push_sym(&mut out, a);
    }
    for (j, b) in fp.b.iter().enumerate() {
        let _ = writeln!(out, "B {}", j + 1);
        push_sym(&mut out, b);
    }
    out
}

/// Line cursor over non-blank lines, tracking 1-based line numbers.
struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (idx, line) in self.inner.by_ref() {
            self.last = idx + 1;
            if !line.trim().is_empty() {
                return Ok((idx + 1, line.trim()));
            }
        }
        Err(Error::Parse {
            line: self.last + 1,
            msg: "unexpected end of file".into(),
        })
    }

    fn expect_end(&mut self) -> Result<()> {
        for (idx, line) in self.inner.by_ref() {
            if !line.trim().is_empty() {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: "trailing content".into(),
                });
            }
        }
        Ok(())
    }

    fn sym(&mut self, r: usize) -> Result<SymMatrix> {
        let mut rows = Vec::with_capacity(r);
        let mut first_line = 0;
        for k in 0..r {
            let (no, line) = self.next_line()?;
            if k == 0 {
                first_line = no;
            }
            let row = parse_row(line, no)?;
            if row.len() != r {
                return Err(Error::Parse {
                    line: no,
                    msg: format!("expected {r} values, found {}", row.len()),
                });
            }
            rows.push(row);
        }
        SymMatrix::from_rows(&rows).map_err(|e| Error::Parse {
            line: first_line,
            msg: e.to_string(),
        })
    }

    fn label(&mut self, expected: &str) -> Result<()> {
        let (no, line) = self.next_line()?;
        if line.split_whitespace().collect::<Vec<_>>().join(" ") != expected {
            return Err(Error::Parse {
                line: no,
                msg: format!("expected label {expected:?}, found {line:?}"),
            });
        }
        Ok(())
    }

    fn magic(&mut self, magic: &str) -> Result<()> {
        let (no, line) = self.next_line()?;
        if line != magic {
            return Err(Error::Parse {
                line: no,
                msg: format!("expected header {magic:?}"),
            });
        }
        Ok(())
    }

    fn integers(&mut self, count: usize) -> Result<(usize, Vec<usize>)> {
        let (no, line) = self.next_line()?;
        let vals = line
            .split_whitespace()
            .map(|t| parse_usize(t, no))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != count {
            return Err(Error::Parse {
                line: no,
                msg: format!("expected {count} integers"),
            });
        }
        Ok((no, vals))
    }
}

pub fn parse_factors(text: &str) -> Result<FactorPair> {
    let mut lines = Lines::new(text);
    lines.magic(FACTOR_MAGIC)?;
    let (dims_line, dims) = lines.integers(3)?;
    let (m, n, r) = (dims[0], dims[1], dims[2]);
    if m == 0 || n == 0 || r == 0 {
        return Err(Error::Parse {
            line: dims_line,
            msg: "m, n and r must be positive".into(),
        });
    }
    let (no, blocks_line) = lines.next_line()?;
    let spec = blocks_line
        .strip_prefix("blocks ")
        .ok_or_else(|| Error::Parse {
            line: no,
            msg: "expected `blocks ...`".into(),
        })?;
    let structure = if spec.trim() == "none" {
        None
    } else {
        let sizes = spec
            .split(',')
            .map(|t| parse_usize(t, no))
            .collect::<Result<Vec<_>>>()?;
        Some(BlockStructure::new(sizes).map_err(|e| Error::Parse {
            line: no,
            msg: e.to_string(),
        })?)
    };
    let mut a = Vec::with_capacity(m);
    for i in 0..m {
        lines.label(&format!("A {}", i + 1))?;
        a.push(lines.sym(r)?);
    }
    let mut b = Vec::with_capacity(n);
    for j in 0..n {
        lines.label(&format!("B {}", j + 1))?;
        b.push(lines.sym(r)?);
    }
    lines.expect_end()?;
    FactorPair::new(r, a, b, structure)
}

pub fn read_factors(path: &Path) -> Result<FactorPair> {
    parse_factors(&fs::read_to_string(path)?)
}

pub fn write_factors(path: &Path, fp: &FactorPair) -> Result<()> {
    write_atomic(path, &format_factors(fp))
}

pub fn format_tensor(t: &Tensor3) -> String {
    let d = t.d();
    let mut out = format!("{TENSOR_MAGIC}\n{d} {d} {d}\n");
    for v in t.as_slice() {
        let _ = writeln!(out, "{v}");
    }
    out
}

pub fn parse_tensor(text: &str) -> Result<Tensor3> {
    let mut lines = Lines::new(text);
    lines.magic(TENSOR_MAGIC)?;
    let (no, dims) = lines.integers(3)?;
    if dims[0] != dims[1] || dims[1] != dims[2] || dims[0] == 0 {
        return Err(Error::Parse {
            line: no,
            msg: "tensor modes must share one positive dimension".into(),
        });
    }
    let d = dims[0];
    let mut data = Vec::with_capacity(d * d * d);
    for _ in 0..d * d * d {
        let (no, line) = lines.next_line()?;
        data.push(parse_f64(line, no)?);
    }
    lines.expect_end()?;
    Tensor3::new(d, data)
}

pub fn read_tensor(path: &Path) -> Result<Tensor3> {
    parse_tensor(&fs::read_to_string(path)?)
}

pub fn write_tensor(path: &Path, t: &Tensor3) -> Result<()> {
    write_atomic(path, &format_tensor(t))
}

pub fn format_tensor_factors(tf: &TensorFactors) -> String {
    let mut out = format!("{TENSOR_FACTOR_MAGIC}\n{} {}\n", tf.d(), tf.r);
    for (k, fam) in tf.families.iter().enumerate() {
        for (i, c) in fam.iter().enumerate() {
            let _ = writeln!(out, "C {} {}", k + 1, i + 1);
            push_sym(&mut out, c);
        }
    }
    out
}

pub fn parse_tensor_factors(text: &str) -> Result<TensorFactors> {
    let mut lines = Lines::new(text);
    lines.magic(TENSOR_FACTOR_MAGIC)?;
    let (no, dims) = lines.integers(2)?;
    let (d, r) = (dims[0], dims[1]);
    if d == 0 || r == 0 {
        return Err(Error::Parse {
            line: no,
            msg: "d and r must be positive".into(),
        });
    }
    let mut families: [Vec<SymMatrix>; 3] = Default::default();
    for (k, fam) in families.iter_mut().enumerate() {
        for i in 0..d {
            lines.label(&format!("C {} {}", k + 1, i + 1))?;
            fam.push(lines.sym(r)?);
        }
    }
    lines.expect_end()?;
    TensorFactors::new(r, families)
}

pub fn write_tensor_factors(path: &Path, tf: &TensorFactors) -> Result<()> {
    write_atomic(path, &format_tensor_factors(tf))
}

pub fn format_history(h: &RunHistory) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in &h.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.sweep, r.objective, r.err, r.kkt_a, r.kkt_b
        );
    }
    out
}

pub fn format_tensor_history(h: &TensorRunHistory) -> String {
    let mut out = format!("{TENSOR_HISTORY_HEADER}\n");
    for r in &h.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.sweep, r.objective, r.err, r.kkt[0], r.kkt[1], r.kkt[2]
        );
    }
    out
}

/// `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub objective: f64,
    pub err: f64,
    pub kkt_a: f64,
    pub kkt_b: f64,
    pub sweeps: usize,
    pub restarts: usize,
    pub seconds: f64,
}

impl Summary {
    pub fn from_history(h: &RunHistory, restarts: usize) -> Self {
        let rec = h.final_record();
        Self {
            objective: rec.objective,
            err: rec.err,
            kkt_a: rec.kkt_a,
            kkt_b: rec.kkt_b,
            sweeps: rec.sweep,
            restarts,
            seconds: h.elapsed.as_secs_f64(),
        }
    }

    pub fn format(&self) -> String {
        format!(
            "objective={}\nerr={}\nkkt_a={}\nkkt_b={}\nsweeps={}\nrestarts={}\nseconds={}\n",
            self.objective,
            self.err,
            self.kkt_a,
            self.kkt_b,
            self.sweeps,
            self.restarts,
            self.seconds
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let get = |key: &str| -> Result<String> {
            text.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .map(str::to_owned)
                .ok_or_else(|| Error::Parse {
                    line: 0,
                    msg: format!("missing key {key}"),
                })
        };
        let num = |s: String| parse_f64(&s, 0);
        Ok(Self {
            objective: num(get("objective")?)?,
            err: num(get("err")?)?,
            kkt_a: num(get("kkt_a")?)?,
            kkt_b: num(get("kkt_b")?)?,
            sweeps: parse_usize(&get("sweeps")?, 0)?,
            restarts: parse_usize(&get("restarts")?, 0)?,
            seconds: num(get("seconds")?)?,
        })
    }
}

/// Tensor run summary: same keys as [`Summary`] with one KKT residual per mode.
pub fn format_tensor_summary(h: &TensorRunHistory, restarts: usize) -> String {
    let rec = h.final_record();
    format!(
        "objective={}\nerr={}\nkkt_1={}\nkkt_2={}\nkkt_3={}\nsweeps={}\nrestarts={}\nseconds={}\n",
        rec.objective,
        rec.err,
        rec.kkt[0],
        rec.kkt[1],
        rec.kkt[2],
        rec.sweep,
        restarts,
        h.elapsed.as_secs_f64()
    )
}

/// `M_ij = (v_i − v_j)²`
pub fn distance_from_values(v: &[f64]) -> Result<DataMatrix> {
    let n = v.len();
    if n < 2 {
        return Err(Error::invalid("distance matrix needs at least two points"));
    }
    let data = (0..n * n)
        .map(|idx| (v[idx / n] - v[idx % n]).powi(2))
        .collect();
    DataMatrix::new(n, n, data)
}

/// Distance matrix of `n` standard-normal points; returns the matrix and the points.
pub fn gen_distance(n: usize, seed: u64) -> Result<(DataMatrix, Vec<f64>)> {
    let mut rng = Rng::new(seed);
    let v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    Ok((distance_from_values(&v)?, v))
}

/// Exact rank-2 factors `A_i = (1, v_i)(1, v_i)ᵀ`, `B_j = (−v_j, 1)(−v_j, 1)ᵀ`.
pub fn distance_factors(v: &[f64]) -> FactorPair {
    let outer = |p: f64, q: f64| SymMatrix::from_fn(2, |i, j| [p, q][i] * [p, q][j]);
    let a = v.iter().map(|&vi| outer(1.0, vi)).collect();
    let b = v.iter().map(|&vj| outer(-vj, 1.0)).collect();
    FactorPair::new(2, a, b, None).expect("2×2 factors")
}

/// Random PD factors `G Gᵀ + 0.1 I` (per block if `blocks` is given) and their
/// exact trace matrix.
pub fn gen_planted(
    m: usize,
    n: usize,
    r: usize,
    blocks: Option<&[usize]>,
    seed: u64,
) -> Result<(DataMatrix, FactorPair)> {
    if m == 0 || n == 0 || r == 0 {
        return Err(Error::invalid("m, n and r must be positive"));
    }
    let structure = blocks
        .map(|b| BlockStructure::new(b.to_vec()))
        .transpose()?;
    let bs = structure
        .clone()
        .unwrap_or_else(|| BlockStructure::dense(r));
    if bs.dim() != r {
        return Err(Error::invalid(format!(
            "block sizes sum to {}, expected {r}",
            bs.dim()
        )));
    }
    let mut rng = Rng::new(seed);
    let mut draw = || -> SymMatrix {
        let parts: Vec<SymMatrix> = bs.sizes().iter().map(|&s| rng.random_pd(s, 0.1)).collect();
        bs.assemble(&parts).expect("blocks match")
    };
    let a: Vec<SymMatrix> = (0..m).map(|_| draw()).collect();
    let b: Vec<SymMatrix> = (0..n).map(|_| draw()).collect();
    let fp = FactorPair::new(r, a, b, structure)?;
    let x = DataMatrix::new(m, n, fp.reconstruct().iter().map(|v| v.max(0.0)).collect())?;
    Ok((x, fp))
}

/// Random PD tensor factors and their exact tensor.
pub fn gen_planted_tensor(d: usize, r: usize, seed: u64) -> Result<(Tensor3, TensorFactors)> {
    if d == 0 || r == 0 {
        return Err(Error::invalid("d and r must be positive"));
    }
    let mut rng = Rng::new(seed);
    let mut fam = || (0..d).map(|_| rng.random_pd(r, 0.1)).collect::<Vec<_>>();
    let tf = TensorFactors::new(r, [fam(), fam(), fam()])?;
    let t = crate::tensor3::tensor_eval(&tf);
    let clamped = t.as_slice().iter().map(|v| v.max(0.0)).collect();
    Ok((Tensor3::new(d, clamped)?, tf))
}
