//! Numerical kernel: sparse containers, offline truncated SVD, the weighted
//! rank-1 thin-SVD update and factored-form Frobenius distances.
//!
//! Dense work is delegated to `faer`. Every factorization handed out by this
//! module has its column signs canonicalized (largest-magnitude entry of each
//! left singular vector is positive) so results are reproducible bit for bit.

use std::collections::BTreeMap;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};

pub type Matrix = Mat<f64>;

/// Below this norm the residual of an update vector is treated as lying in
/// the span of the current basis.
pub const IN_SPAN_TOL: f64 = 1e-12;

/// Sparse real matrix keyed by `(row, col)`.
///
/// Entries are kept in a `BTreeMap` so that every traversal (and therefore
/// every floating point accumulation built on top of one) is ordered.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            entries: BTreeMap::new(),
        }
    }

    /// Builds a matrix from triplets, summing duplicate coordinates.
    pub fn from_triplets<I>(rows: usize, cols: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut out = SparseMatrix::new(rows, cols);
        for (r, c, v) in triplets {
            out.add(r, c, v)?;
        }
        Ok(out)
    }

    pub fn from_dense(a: MatRef<'_, f64>) -> Result<Self> {
        let mut out = SparseMatrix::new(a.nrows(), a.ncols());
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                let v = a[(i, j)];
                if v != 0.0 {
                    out.add(i, j, v)?;
                }
            }
        }
        Ok(out)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Adds `value` to entry `(row, col)`.
    pub fn add(&mut self, row: usize, col: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite("sparse matrix entry"));
        }
        if row >= self.rows || col >= self.cols {
            return Err(Error::Dimension(format!(
                "entry ({row}, {col}) outside {}x{}",
                self.rows, self.cols
            )));
        }
        *self.entries.entry((row, col)).or_insert(0.0) += value;
        Ok(())
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite("sparse matrix entry"));
        }
        if row >= self.rows || col >= self.cols {
            return Err(Error::Dimension(format!(
                "entry ({row}, {col}) outside {}x{}",
                self.rows, self.cols
            )));
        }
        self.entries.insert((row, col), value);
        Ok(())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries.get(&(row, col)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(r, c), &v)| (r, c, v))
    }

    pub fn is_zero(&self) -> bool {
        self.entries.values().all(|&v| v == 0.0)
    }

    /// Grows the logical shape; existing entries are untouched.
    pub fn grow(&mut self, rows: usize, cols: usize) -> Result<()> {
        if rows < self.rows || cols < self.cols {
            return Err(Error::Dimension(format!(
                "cannot shrink {}x{} to {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        self.rows = rows;
        self.cols = cols;
        Ok(())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (r, _, v) in self.iter() {
            out[r] += v;
        }
        out
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (_, c, v) in self.iter() {
            out[c] += v;
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        SparseMatrix {
            rows: self.cols,
            cols: self.rows,
            entries: self.iter().map(|(r, c, v)| ((c, r), v)).collect(),
        }
    }

    /// Entry-wise map preserving the sparsity pattern.
    pub fn map_entries(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> SparseMatrix {
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self.iter().map(|(r, c, v)| ((r, c), f(r, c, v))).collect(),
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut out = Mat::zeros(self.rows, self.cols);
        for (r, c, v) in self.iter() {
            out[(r, c)] = v;
        }
        out
    }

    /// Row-major adjacency lists, used for sparse products.
    pub(crate) fn row_lists(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.rows];
        for (r, c, v) in self.iter() {
            out[r].push((c, v));
        }
        out
    }

    /// Exact sparse product `self * other`.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let rhs = other.row_lists();
        let mut out = SparseMatrix::new(self.rows, other.cols);
        for (r, k, a) in self.iter() {
            for &(c, b) in &rhs[k] {
                *out.entries.entry((r, c)).or_insert(0.0) += a * b;
            }
        }
        Ok(out)
    }
}

/// Truncated SVD triple `left * diag(singular) * right^T`.
#[derive(Clone, Debug)]
pub struct FactoredMatrix {
    left: Matrix,
    singular: Vec<f64>,
    right: Matrix,
}

impl FactoredMatrix {
    pub fn from_parts(left: Matrix, singular: Vec<f64>, right: Matrix) -> Result<Self> {
        let k = singular.len();
        if k == 0 {
            return Err(Error::Dimension("rank budget must be positive".into()));
        }
        if left.ncols() != k || right.ncols() != k {
            return Err(Error::Dimension(format!(
                "bases have {} and {} columns but {k} singular values",
                left.ncols(),
                right.ncols()
            )));
        }
        if singular.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Invalid(
                "singular values must be finite and non-negative".into(),
            ));
        }
        Ok(FactoredMatrix {
            left,
            singular,
            right,
        })
    }

    /// The zero matrix of shape `rows x cols` carried with `rank` zero columns.
    pub fn zeros(rows: usize, cols: usize, rank: usize) -> Self {
        FactoredMatrix {
            left: Mat::zeros(rows, rank),
            singular: vec![0.0; rank],
            right: Mat::zeros(cols, rank),
        }
    }

    pub fn rows(&self) -> usize {
        self.left.nrows()
    }

    pub fn cols(&self) -> usize {
        self.right.nrows()
    }

    pub fn rank_budget(&self) -> usize {
        self.singular.len()
    }

    pub fn left(&self) -> MatRef<'_, f64> {
        self.left.as_ref()
    }

    pub fn right(&self) -> MatRef<'_, f64> {
        self.right.as_ref()
    }

    pub fn singular(&self) -> &[f64] {
        &self.singular
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut scaled = self.left.clone();
        scale_columns(&mut scaled, &self.singular);
        &scaled * self.right.transpose()
    }

    /// One entry of the reconstruction, in O(k).
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        (0..self.rank_budget())
            .map(|j| self.left[(row, j)] * self.singular[j] * self.right[(col, j)])
            .sum()
    }

    /// Largest absolute deviation of `left^T left` and `right^T right` from
    /// the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        gram_defect(self.left.as_ref()).max(gram_defect(self.right.as_ref()))
    }
}

fn gram_defect(a: MatRef<'_, f64>) -> f64 {
    let g = a.transpose() * a;
    let mut worst: f64 = 0.0;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

pub(crate) fn scale_columns(a: &mut Matrix, factors: &[f64]) {
    for (j, &f) in factors.iter().enumerate() {
        for x in a.col_as_slice_mut(j) {
            *x *= f;
        }
    }
}

/// Flips column pairs so the largest-magnitude entry of each left column is
/// positive. Ties resolve to the lowest row index.
fn canonicalize_signs(left: &mut Matrix, right: &mut Matrix) {
    for j in 0..left.ncols() {
        let col = left.col_as_slice(j);
        let mut pivot = 0.0f64;
        for &x in col {
            if x.abs() > pivot.abs() {
                pivot = x;
            }
        }
        if pivot < 0.0 {
            for x in left.col_as_slice_mut(j) {
                *x = -*x;
            }
            for x in right.col_as_slice_mut(j) {
                *x = -*x;
            }
        }
    }
}

fn check_finite(a: MatRef<'_, f64>, what: &'static str) -> Result<()> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if !a[(i, j)].is_finite() {
                return Err(Error::NonFinite(what));
            }
        }
    }
    Ok(())
}

/// Best rank-`k` factors of a dense matrix. Zero matrices are accepted here
/// and produce zero singular values.
pub fn truncated_svd_dense(a: MatRef<'_, f64>, k: usize) -> Result<FactoredMatrix> {
    let (m, n) = (a.nrows(), a.ncols());
    if k == 0 || k > m.min(n) {
        return Err(Error::Dimension(format!(
            "rank {k} not in 1..={} for a {m}x{n} matrix",
            m.min(n)
        )));
    }
    check_finite(a, "matrix to factorize")?;
    let svd = a.thin_svd().map_err(|_| Error::NoConvergence)?;
    let mut left = svd.U().get(.., 0..k).to_owned();
    let mut right = svd.V().get(.., 0..k).to_owned();
    let s = svd.S().column_vector();
    let singular: Vec<f64> = (0..k).map(|j| s[j].max(0.0)).collect();
    canonicalize_signs(&mut left, &mut right);
    Ok(FactoredMatrix {
        left,
        singular,
        right,
    })
}

/// Offline truncated SVD of a sparse matrix.
pub fn truncated_svd(a: &SparseMatrix, k: usize) -> Result<FactoredMatrix> {
    let (m, n) = (a.rows(), a.cols());
    if k == 0 || k > m.min(n) {
        return Err(Error::Dimension(format!(
            "rank {k} not in 1..={} for a {m}x{n} matrix",
            m.min(n)
        )));
    }
    if a.is_zero() {
        return Err(Error::Degenerate("matrix has no nonzero entry".into()));
    }
    truncated_svd_dense(a.to_dense().as_ref(), k)
}

/// Exact SVD of a small dense matrix, keeping all `min(rows, cols)` triplets.
pub fn small_full_svd(k: MatRef<'_, f64>) -> Result<FactoredMatrix> {
    let r = k.nrows().min(k.ncols());
    if r == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    truncated_svd_dense(k, r)
}

/// Weighted rank-1 thin-SVD update.
///
/// Returns factors approximating `F + w * u * i^T`, truncated back to the
/// rank budget of `F`. The result is exact whenever the updated matrix has
/// rank at most the budget. Bases are not re-orthonormalized.
pub fn brand_update(
    f: &FactoredMatrix,
    u: &[f64],
    i: &[f64],
    w: f64,
) -> Result<FactoredMatrix> {
    if u.len() != f.rows() || i.len() != f.cols() {
        return Err(Error::Dimension(format!(
            "update vectors of length {} and {} for a {}x{} factorization",
            u.len(),
            i.len(),
            f.rows(),
            f.cols()
        )));
    }
    if !w.is_finite() {
        return Err(Error::NonFinite("update weight"));
    }
    if u.iter().chain(i).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("update vector"));
    }
    if w == 0.0 {
        return Ok(f.clone());
    }
    let k = f.rank_budget();

    let scaled: Vec<f64> = u.iter().map(|x| w * x).collect();
    let (m_proj, p_dir, p_norm) = split_against_basis(f.left.as_ref(), &scaled);
    let (n_proj, q_dir, q_norm) = split_against_basis(f.right.as_ref(), i);

    // K = [S 0; 0 0] + [m; |p|] [n; |q|]^T
    let mut kmat = Mat::<f64>::zeros(k + 1, k + 1);
    for j in 0..k {
        kmat[(j, j)] = f.singular[j];
    }
    for c in 0..=k {
        let b = if c < k { n_proj[c] } else { q_norm };
        for r in 0..=k {
            let a = if r < k { m_proj[r] } else { p_norm };
            kmat[(r, c)] += a * b;
        }
    }
    let inner = small_full_svd(kmat.as_ref())?;

    let left = rotate_basis(f.left.as_ref(), &p_dir, inner.left.as_ref(), k);
    let right = rotate_basis(f.right.as_ref(), &q_dir, inner.right.as_ref(), k);
    Ok(FactoredMatrix {
        left,
        singular: inner.singular[..k].to_vec(),
        right,
    })
}

/// Splits `x` into basis coordinates `B^T x` and the normalized residual.
/// A residual below [`IN_SPAN_TOL`] is reported as a zero direction with norm 0.
fn split_against_basis(basis: MatRef<'_, f64>, x: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let k = basis.ncols();
    let coords: Vec<f64> = (0..k)
        .map(|j| {
            let col = basis.col(j);
            x.iter().enumerate().map(|(r, v)| col[r] * v).sum()
        })
        .collect();
    let mut residual = x.to_vec();
    for (j, &c) in coords.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let col = basis.col(j);
        for (r, v) in residual.iter_mut().enumerate() {
            *v -= col[r] * c;
        }
    }
    let norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = 1.0f64.max(x.iter().map(|v| v * v).sum::<f64>().sqrt());
    if norm < IN_SPAN_TOL * scale {
        residual.iter_mut().for_each(|v| *v = 0.0);
        (coords, residual, 0.0)
    } else {
        residual.iter_mut().for_each(|v| *v /= norm);
        (coords, residual, norm)
    }
}

/// First `k` columns of `[basis dir] * rot`.
fn rotate_basis(basis: MatRef<'_, f64>, dir: &[f64], rot: MatRef<'_, f64>, k: usize) -> Matrix {
    let mut out = basis * rot.get(0..k, 0..k);
    for j in 0..k {
        let c = rot[(k, j)];
        if c == 0.0 {
            continue;
        }
        for (x, d) in out.col_as_slice_mut(j).iter_mut().zip(dir) {
            *x += c * d;
        }
    }
    out
}

/// Zero-pads the bases to `new_rows x new_cols`.
pub fn extend_dims(f: &FactoredMatrix, new_rows: usize, new_cols: usize) -> Result<FactoredMatrix> {
    if new_rows < f.rows() || new_cols < f.cols() {
        return Err(Error::Dimension(format!(
            "cannot shrink {}x{} to {new_rows}x{new_cols}",
            f.rows(),
            f.cols()
        )));
    }
    let pad = |a: &Matrix, rows: usize| {
        if rows == a.nrows() {
            a.clone()
        } else {
            Mat::from_fn(rows, a.ncols(), |i, j| if i < a.nrows() { a[(i, j)] } else { 0.0 })
        }
    };
    Ok(FactoredMatrix {
        left: pad(&f.left, new_rows),
        singular: f.singular.clone(),
        right: pad(&f.right, new_cols),
    })
}

/// `|| F1 - F2 ||_F` without forming either matrix.
///
/// Both differences share the column spaces of `[U1 U2]` and `[V1 V2]`; with
/// thin QR factors `R_U`, `R_V` of those blocks the distance equals
/// `|| R_U diag(S1, -S2) R_V^T ||_F`. This is exact even when the bases have
/// drifted from orthonormality and does not cancel catastrophically for
/// nearby factorizations. Cost is O((m + n) k^2).
pub fn factored_frobenius_distance(f1: &FactoredMatrix, f2: &FactoredMatrix) -> Result<f64> {
    if f1.rows() != f2.rows() || f1.cols() != f2.cols() {
        return Err(Error::Dimension(format!(
            "cannot compare {}x{} with {}x{}",
            f1.rows(),
            f1.cols(),
            f2.rows(),
            f2.cols()
        )));
    }
    if f1.singular == f2.singular && f1.left == f2.left && f1.right == f2.right {
        return Ok(0.0);
    }
    let (k1, k2) = (f1.rank_budget(), f2.rank_budget());
    let stacked = |a: &Matrix, b: &Matrix| {
        let rows = a.nrows();
        Mat::from_fn(rows, k1 + k2, |i, j| if j < k1 { a[(i, j)] } else { b[(i, j - k1)] })
    };
    let left = stacked(&f1.left, &f2.left);
    let right = stacked(&f1.right, &f2.right);
    if left.nrows() == 0 || right.nrows() == 0 {
        return Ok(0.0);
    }
    let r_left = left.qr().thin_R().to_owned();
    let r_right = right.qr().thin_R().to_owned();
    let signed: Vec<f64> = f1
        .singular
        .iter()
        .copied()
        .chain(f2.singular.iter().map(|s| -s))
        .collect();
    let mut scaled = r_left;
    scale_columns(&mut scaled, &signed);
    let core = &scaled * r_right.transpose();
    Ok(core.norm_l2())
}
