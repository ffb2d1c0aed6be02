//! Dense row-major matrices and the handful of kernels the rest of the crate needs.
//!
//! Everything is `f64`. The GW objective sums fourth-order products over every
//! quadruple of indices, so single precision loses digits quickly.

use std::io::{BufRead, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Wraps `data` (row-major). Rejects a length mismatch and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from nested rows; every row must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "ragged rows: row 0 has {cols} columns, row {i} has {}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        self.row_iter().map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs` without materialising the transpose.
    pub fn t_matmul(&self, rhs: &DenseMatrix) -> Result<Self> {
        if self.rows != rhs.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.cols, rhs.cols);
        for b in 0..self.rows {
            let lhs_row = self.row(b);
            let rhs_row = rhs.row(b);
            for (i, &a) in lhs_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, r) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * r;
                }
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// Submatrix with the given row and column indices (repeats allowed).
    pub fn select(&self, row_idx: &[usize], col_idx: &[usize]) -> Self {
        Self::from_fn(row_idx.len(), col_idx.len(), |i, j| {
            self.get(row_idx[i], col_idx[j])
        })
    }

    pub fn select_rows(&self, row_idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(row_idx.len() * self.cols);
        for &r in row_idx {
            data.extend_from_slice(self.row(r));
        }
        Self {
            rows: row_idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.row_iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.row_iter() {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self.get(i, j) - self.get(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Writes the matrix as CSV preceded by a `# rows=<n> cols=<d>` header line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# rows={} cols={}", self.rows, self.cols)?;
        for r in self.row_iter() {
            let line: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Reads the CSV format produced by [`DenseMatrix::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty matrix file".into()))??;
        let (rows, cols) = parse_header(&header)?;
        let mut data = Vec::with_capacity(rows * cols);
        let mut seen = 0usize;
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let values: Vec<&str> = line.split(',').collect();
            if values.len() != cols {
                return Err(Error::Parse(format!(
                    "line {}: expected {cols} values, found {}",
                    lineno + 2,
                    values.len()
                )));
            }
            for v in values {
                let x: f64 = v
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))?;
                data.push(x);
            }
            seen += 1;
        }
        if seen != rows {
            return Err(Error::Parse(format!(
                "header declares {rows} rows, file has {seen}"
            )));
        }
        Self::new(rows, cols, data)
    }
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse(format!("missing `# rows=.. cols=..` header: {line:?}")))?;
    let mut rows = None;
    let mut cols = None;
    for tok in body.split_whitespace() {
        if let Some(v) = tok.strip_prefix("rows=") {
            rows = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("cols=") {
            cols = v.parse().ok();
        }
    }
    match (rows, cols) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::Parse(format!("malformed header: {line:?}"))),
    }
}

impl Serialize for DenseMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.row_iter())
    }
}

impl<'de> Deserialize<'de> for DenseMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let nested = Vec::<Vec<f64>>::deserialize(d)?;
        DenseMatrix::from_rows(&nested).map_err(serde::de::Error::custom)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Cosine of the angle between `a` and `b`; errors on a zero-norm vector.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// All-pairs Euclidean distance between the rows of `x`.
pub fn pairwise_distance(x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.is_empty() {
        return Err(Error::Dimension("pairwise distance of an empty matrix".into()));
    }
    let n = x.rows();
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(x.row(i), x.row(j));
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    Ok(out)
}

/// All-pairs cosine similarity between the rows of `x`.
pub fn cosine_similarity(x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.is_empty() {
        return Err(Error::Dimension("cosine similarity of an empty matrix".into()));
    }
    let norms: Vec<f64> = x.row_iter().map(norm).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::Degenerate(format!("row {i} has zero norm")));
    }
    let n = x.rows();
    let mut out = DenseMatrix::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = (dot(x.row(i), x.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            out.set(i, j, c);
            out.set(j, i, c);
        }
    }
    Ok(out)
}

fn column_means(m: &DenseMatrix) -> Vec<f64> {
    let n = m.rows() as f64;
    m.col_sums().into_iter().map(|s| s / n).collect()
}

/// `(1/(B-1)) Āᵀ B̄` with both operands column-mean centered.
pub fn centered_cross_covariance(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows() != b.rows() {
        return Err(Error::Dimension(format!(
            "row counts differ: {} vs {}",
            a.rows(),
            b.rows()
        )));
    }
    let batch = a.rows();
    if batch < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: batch,
        });
    }
    let mean_a = column_means(a);
    let mean_b = column_means(b);
    let mut out = DenseMatrix::zeros(a.cols(), b.cols());
    for r in 0..batch {
        let ra = a.row(r);
        let rb = b.row(r);
        for (i, (&x, &mx)) in ra.iter().zip(&mean_a).enumerate() {
            let ca = x - mx;
            let out_row = out.row_mut(i);
            for ((o, &y), &my) in out_row.iter_mut().zip(rb).zip(&mean_b) {
                *o += ca * (y - my);
            }
        }
    }
    let scale = 1.0 / (batch as f64 - 1.0);
    Ok(out.scale(scale))
}

pub fn frobenius_norm(m: &DenseMatrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Normalises every row to unit L2 norm. Rows with norm below `floor` are scaled by `1/floor`.
pub fn normalize_rows(m: &DenseMatrix, floor: f64) -> DenseMatrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let n = norm(out.row(i)).max(floor);
        for v in out.row_mut(i) {
            *v /= n;
        }
    }
    out
}
