//! Degree normalization, frequency-controlled embeddings and the
//! attribute-integrated path embeddings built from six co-occurrence
//! factorizations.
//!
//! The six matrices, with `R'` the degree-normalized interaction matrix:
//!
//! | slot             | matrix     | shape |
//! |------------------|------------|-------|
//! | `user_item`      | `R'`       | m x n |
//! | `user_attr`      | `G`        | m x p |
//! | `item_attr`      | `H`        | n x q |
//! | `attr_item`      | `G^T R'`   | p x n |
//! | `user_item_attr` | `R' H`     | m x q |
//! | `attr_attr`      | `G^T R' H` | p x q |
//!
//! User and item embeddings concatenate three user-to-item paths:
//! `user-item`, `user-user_attr-item` and `user-item_attr-item`.

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::{scale_columns, FactoredMatrix, Matrix, SparseMatrix};

/// Lower clamp applied to every degree.
pub const DEGREE_FLOOR: f64 = 1.0;

/// Singular values below this fraction of the largest are treated as zero
/// when raised to the frequency exponent.
const SINGULAR_CUTOFF: f64 = 1e-12;

/// Per-user and per-item degrees with the normalization exponent.
#[derive(Clone, Debug, PartialEq)]
pub struct DegreeScalers {
    user_deg: Vec<f64>,
    item_deg: Vec<f64>,
    alpha: f64,
    floor: f64,
}

impl DegreeScalers {
    pub fn new(user_deg: Vec<f64>, item_deg: Vec<f64>, alpha: f64) -> Result<Self> {
        Self::with_floor(user_deg, item_deg, alpha, DEGREE_FLOOR)
    }

    /// Degrees are clamped to at least `floor`.
    pub fn with_floor(
        mut user_deg: Vec<f64>,
        mut item_deg: Vec<f64>,
        alpha: f64,
        floor: f64,
    ) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Invalid(format!("alpha must be >= 0, got {alpha}")));
        }
        if !(floor.is_finite() && floor > 0.0) {
            return Err(Error::Invalid(format!("degree floor must be > 0, got {floor}")));
        }
        for d in user_deg.iter_mut().chain(item_deg.iter_mut()) {
            if !d.is_finite() {
                return Err(Error::NonFinite("degree"));
            }
            *d = d.max(floor);
        }
        Ok(DegreeScalers {
            user_deg,
            item_deg,
            alpha,
            floor,
        })
    }

    /// Row and column sums of `r`, clamped.
    pub fn from_matrix(r: &SparseMatrix, alpha: f64, floor: f64) -> Result<Self> {
        Self::with_floor(r.row_sums(), r.col_sums(), alpha, floor)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn user_degrees(&self) -> &[f64] {
        &self.user_deg
    }

    pub fn item_degrees(&self) -> &[f64] {
        &self.item_deg
    }

    /// `user_deg[u]^-alpha`
    pub fn user_factor(&self, u: usize) -> f64 {
        self.user_deg[u].powf(-self.alpha)
    }

    /// `item_deg[i]^-alpha`
    pub fn item_factor(&self, i: usize) -> f64 {
        self.item_deg[i].powf(-self.alpha)
    }

    /// Per-item multipliers `item_deg^alpha` undoing the item-side scaling
    /// of a score vector.
    pub fn item_multipliers(&self) -> Vec<f64> {
        self.item_deg.iter().map(|d| d.powf(self.alpha)).collect()
    }

    /// Appends clamped unit degrees for entities that arrived mid-stage.
    pub fn extend(&mut self, users: usize, items: usize) {
        if users > self.user_deg.len() {
            self.user_deg.resize(users, self.floor);
        }
        if items > self.item_deg.len() {
            self.item_deg.resize(items, self.floor);
        }
    }

    fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if rows != self.user_deg.len() || cols != self.item_deg.len() {
            return Err(Error::Dimension(format!(
                "scalers for {}x{} applied to {rows}x{cols}",
                self.user_deg.len(),
                self.item_deg.len()
            )));
        }
        Ok(())
    }
}

/// `D_U^-alpha R D_I^-alpha`
pub fn normalize(r: &SparseMatrix, scalers: &DegreeScalers) -> Result<SparseMatrix> {
    scalers.check_shape(r.rows(), r.cols())?;
    let uf: Vec<f64> = (0..r.rows()).map(|u| scalers.user_factor(u)).collect();
    let itf: Vec<f64> = (0..r.cols()).map(|i| scalers.item_factor(i)).collect();
    Ok(r.map_entries(|u, i, v| v * uf[u] * itf[i]))
}

/// `D_U^alpha X D_I^alpha`, the inverse of [`normalize`] on dense matrices.
pub fn denormalize(x: MatRef<'_, f64>, scalers: &DegreeScalers) -> Result<Matrix> {
    scalers.check_shape(x.nrows(), x.ncols())?;
    let a = scalers.alpha;
    Ok(Mat::from_fn(x.nrows(), x.ncols(), |u, i| {
        x[(u, i)] * scalers.user_deg[u].powf(a) * scalers.item_deg[i].powf(a)
    }))
}

/// Singular values raised to `gamma`; near-zero values map to zero.
pub fn frequency_weights(singular: &[f64], gamma: f64) -> Result<Vec<f64>> {
    let top = singular.iter().copied().fold(0.0f64, f64::max);
    singular
        .iter()
        .map(|&s| {
            if s <= SINGULAR_CUTOFF * top || s == 0.0 {
                if gamma <= 0.0 {
                    Err(Error::Degenerate(format!(
                        "zero singular value with frequency exponent {gamma}"
                    )))
                } else {
                    Ok(0.0)
                }
            } else {
                Ok(s.powf(gamma))
            }
        })
        .collect()
}

/// `(U S^gamma, V S^gamma)`
pub fn frequency_embed(f: &FactoredMatrix, gamma: f64) -> Result<(Matrix, Matrix)> {
    if !gamma.is_finite() {
        return Err(Error::NonFinite("frequency exponent"));
    }
    let weights = frequency_weights(f.singular(), gamma)?;
    let mut left = f.left().to_owned();
    let mut right = f.right().to_owned();
    scale_columns(&mut left, &weights);
    scale_columns(&mut right, &weights);
    Ok((left, right))
}

/// `(G^T R, R H, G^T R H)`. Empty attribute blocks give empty outputs.
pub fn derive_matrices(
    r: &SparseMatrix,
    g: &SparseMatrix,
    h: &SparseMatrix,
) -> Result<(SparseMatrix, SparseMatrix, SparseMatrix)> {
    if g.rows() != r.rows() || h.rows() != r.cols() {
        return Err(Error::Dimension(format!(
            "R is {}x{}, G has {} rows, H has {} rows",
            r.rows(),
            r.cols(),
            g.rows(),
            h.rows()
        )));
    }
    let gt = g.transpose();
    let gtr = gt.matmul(r)?;
    let rh = r.matmul(h)?;
    let gtrh = gtr.matmul(h)?;
    Ok((gtr, rh, gtrh))
}

/// The six factorizations behind the embeddings. `None` marks a disabled
/// slot (zero rank budget or no attributes); its paths contribute zeros.
#[derive(Clone, Debug)]
pub struct PathFactors {
    pub user_item: FactoredMatrix,
    pub user_attr: Option<FactoredMatrix>,
    pub item_attr: Option<FactoredMatrix>,
    pub attr_item: Option<FactoredMatrix>,
    pub user_item_attr: Option<FactoredMatrix>,
    pub attr_attr: Option<FactoredMatrix>,
    /// Width `p` of user attribute vectors.
    pub user_attr_width: usize,
    /// Width `q` of item attribute vectors.
    pub item_attr_width: usize,
}

impl PathFactors {
    /// Interaction-only factors (`p = q = 0`).
    pub fn plain(user_item: FactoredMatrix) -> Self {
        PathFactors {
            user_item,
            user_attr: None,
            item_attr: None,
            attr_item: None,
            user_item_attr: None,
            attr_attr: None,
            user_attr_width: 0,
            item_attr_width: 0,
        }
    }

    pub fn users(&self) -> usize {
        self.user_item.rows()
    }

    pub fn items(&self) -> usize {
        self.user_item.cols()
    }

    fn validate(&self) -> Result<()> {
        let (m, n) = (self.users(), self.items());
        let (p, q) = (self.user_attr_width, self.item_attr_width);
        let checks: [(&str, &Option<FactoredMatrix>, usize, usize); 5] = [
            ("user_attr", &self.user_attr, m, p),
            ("item_attr", &self.item_attr, n, q),
            ("attr_item", &self.attr_item, p, n),
            ("user_item_attr", &self.user_item_attr, m, q),
            ("attr_attr", &self.attr_attr, p, q),
        ];
        for (name, f, rows, cols) in checks {
            if let Some(f) = f {
                if f.rows() != rows || f.cols() != cols {
                    return Err(Error::Dimension(format!(
                        "{name} factorization is {}x{}, expected {rows}x{cols}",
                        f.rows(),
                        f.cols()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// User and item embeddings assembled from the three concatenated paths.
#[derive(Clone, Debug)]
pub struct EmbeddingBundle {
    user_emb: Matrix,
    item_emb: Matrix,
    path_weights: [f64; 3],
    gamma: f64,
    factors: PathFactors,
    scalers: DegreeScalers,
}

/// Builds `E_U = a1 E_U1 || a2 E_U2 || a3 E_U3` and the matching `E_I`.
pub fn build_path_embeddings(
    factors: PathFactors,
    path_weights: [f64; 3],
    gamma: f64,
    scalers: DegreeScalers,
) -> Result<EmbeddingBundle> {
    factors.validate()?;
    scalers.check_shape(factors.users(), factors.items())?;
    if path_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Invalid("path weights must be finite and >= 0".into()));
    }
    if !(gamma.is_finite() && gamma > 0.0 && gamma <= 0.5) {
        return Err(Error::Invalid(format!("gamma must lie in (0, 0.5], got {gamma}")));
    }
    let (user_emb, item_emb) = assemble(&factors, path_weights, gamma)?;
    Ok(EmbeddingBundle {
        user_emb,
        item_emb,
        path_weights,
        gamma,
        factors,
        scalers,
    })
}

fn assemble(factors: &PathFactors, weights: [f64; 3], gamma: f64) -> Result<(Matrix, Matrix)> {
    let (m, n) = (factors.users(), factors.items());
    let (p, q) = (factors.user_attr_width, factors.item_attr_width);
    let k1 = factors.user_item.rank_budget();
    let width = k1 + p + q;

    let (u1, i1) = frequency_embed(&factors.user_item, gamma)?;
    // path 2: user -> user_attr -> item
    let u2 = reconstruct_slot(factors.user_attr.as_ref(), false, m, p, gamma)?;
    let i2 = reconstruct_slot(factors.attr_item.as_ref(), true, n, p, gamma)?;
    // path 3: user -> item_attr -> item
    let u3 = reconstruct_slot(factors.user_item_attr.as_ref(), false, m, q, gamma)?;
    let i3 = reconstruct_slot(factors.item_attr.as_ref(), false, n, q, gamma)?;

    let concat = |rows: usize, blocks: [(&Matrix, f64); 3]| {
        let mut out = Mat::<f64>::zeros(rows, width);
        let mut offset = 0;
        for (block, w) in blocks {
            for j in 0..block.ncols() {
                let src = block.col_as_slice(j);
                for (dst, &x) in out.col_as_slice_mut(offset + j).iter_mut().zip(src) {
                    *dst = w * x;
                }
            }
            offset += block.ncols();
        }
        out
    };
    let [a1, a2, a3] = weights;
    Ok((
        concat(m, [(&u1, a1), (&u2, a2), (&u3, a3)]),
        concat(n, [(&i1, a1), (&i2, a2), (&i3, a3)]),
    ))
}

/// Frequency-weighted reconstruction `U S^(2 gamma) V^T` of one slot, or its
/// transpose when `transpose` is set. Disabled slots give zeros.
fn reconstruct_slot(
    f: Option<&FactoredMatrix>,
    transpose: bool,
    rows: usize,
    cols: usize,
    gamma: f64,
) -> Result<Matrix> {
    let Some(f) = f else {
        return Ok(Mat::zeros(rows, cols));
    };
    let (l, r) = frequency_embed(f, gamma)?;
    Ok(if transpose {
        &r * l.transpose()
    } else {
        &l * r.transpose()
    })
}

impl EmbeddingBundle {
    pub fn user_emb(&self) -> MatRef<'_, f64> {
        self.user_emb.as_ref()
    }

    pub fn item_emb(&self) -> MatRef<'_, f64> {
        self.item_emb.as_ref()
    }

    /// `k1 + p + q`
    pub fn width(&self) -> usize {
        self.user_emb.ncols()
    }

    pub fn path_weights(&self) -> [f64; 3] {
        self.path_weights
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn factors(&self) -> &PathFactors {
        &self.factors
    }

    pub fn scalers(&self) -> &DegreeScalers {
        &self.scalers
    }

    pub fn into_parts(self) -> (PathFactors, DegreeScalers) {
        (self.factors, self.scalers)
    }

    pub fn user_row(&self, u: usize) -> Vec<f64> {
        let row = self.user_emb.row(u);
        (0..self.width()).map(|j| row[j]).collect()
    }

    pub fn item_row(&self, i: usize) -> Vec<f64> {
        let row = self.item_emb.row(i);
        (0..self.width()).map(|j| row[j]).collect()
    }

    /// `user_emb * item_emb^T`
    pub fn score_matrix(&self) -> Matrix {
        &self.user_emb * self.item_emb.transpose()
    }

    /// Embeddings of the two paths that revisit attributes:
    /// `(E_U4, E_I4, E_U5, E_I5)`. `None` when any slot they need is
    /// disabled.
    pub fn revisiting_paths(&self) -> Result<Option<(Matrix, Matrix, Matrix, Matrix)>> {
        let f = &self.factors;
        let (Some(g), Some(h), Some(gr), Some(rh), Some(grh)) = (
            f.user_attr.as_ref(),
            f.item_attr.as_ref(),
            f.attr_item.as_ref(),
            f.user_item_attr.as_ref(),
            f.attr_attr.as_ref(),
        ) else {
            return Ok(None);
        };
        let gamma = self.gamma;
        let (m, n) = (f.users(), f.items());
        let (p, q) = (f.user_attr_width, f.item_attr_width);
        let (eg6, eh6) = frequency_embed(grh, gamma)?;
        let u2 = reconstruct_slot(Some(g), false, m, p, gamma)?;
        let i3 = reconstruct_slot(Some(h), false, n, q, gamma)?;
        let u5 = reconstruct_slot(Some(rh), false, m, q, gamma)?;
        let i4 = reconstruct_slot(Some(gr), true, n, p, gamma)?;
        Ok(Some((&u2 * &eg6, &i3 * &eh6, &u5 * &eh6, &i4 * &eg6)))
    }

    /// Mutable access for the engine, which rebuilds the dense embeddings
    /// with [`EmbeddingBundle::refresh`] after touching the factors.
    pub(crate) fn factors_mut(&mut self) -> &mut PathFactors {
        &mut self.factors
    }

    pub(crate) fn scalers_mut(&mut self) -> &mut DegreeScalers {
        &mut self.scalers
    }

    pub(crate) fn refresh(&mut self) -> Result<()> {
        let (u, i) = assemble(&self.factors, self.path_weights, self.gamma)?;
        self.user_emb = u;
        self.item_emb = i;
        Ok(())
    }
}
