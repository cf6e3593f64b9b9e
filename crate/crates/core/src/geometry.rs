//! Linear algebra on the unit sphere `S^{d-1}`.
//!
//! Batches of embeddings are `M x d` matrices whose rows are unit vectors.
//! The row-norm invariant is checked on construction and never silently
//! repaired: use [`normalize_rows`] to project raw data onto the sphere.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance on `| |row| - 1 |` accepted by [`EmbeddingBatch::new`].
pub const UNIT_NORM_TOL: f64 = 1e-12;

const ZERO_ROW_NORM: f64 = 1e-300;
const DEGENERATE_STEP_NORM: f64 = 1e-12;

/// `M` unit-norm points in `R^d`, stored one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    points: DMatrix<f64>,
}

impl EmbeddingBatch {
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::InvalidArity(format!(
                "batch must be non-empty, got {}x{}",
                points.nrows(),
                points.ncols()
            )));
        }
        for (row, r) in points.row_iter().enumerate() {
            let norm = r.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::NotUnitNorm {
                    row,
                    norm,
                    tol: UNIT_NORM_TOL,
                });
            }
        }
        Ok(Self { points })
    }

    /// Builds a batch from a list of rows. Every row must already be unit norm.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows_to_matrix(rows)?)
    }

    /// Wraps a matrix without checking row norms. Callers must guarantee the
    /// invariant (used by the optimizer after retraction).
    pub(crate) fn from_matrix_unchecked(points: DMatrix<f64>) -> Self {
        Self { points }
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.points
    }

    /// Number of points `M`.
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.points.row(i).transpose()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.points
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    /// Applies `x -> x Q^T` to every row, `Q` being a `d x d` matrix.
    /// Only orthogonal `Q` preserve the invariant; this is checked.
    pub fn transform(&self, q: &DMatrix<f64>) -> Result<Self> {
        if q.nrows() != self.dim() || q.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "transform is {}x{}, batch dimension is {}",
                q.nrows(),
                q.ncols(),
                self.dim()
            )));
        }
        normalize_rows(&(&self.points * q.transpose()))
    }

    /// Vertices of a regular `(M-1)`-simplex centred at the origin, embedded
    /// in the first `M-1` coordinates of `R^d`.
    ///
    /// Built from the Helmert basis of the hyperplane orthogonal to the
    /// all-ones vector: the centred standard basis `e_i - 1/M` has
    /// coordinates `h_k[i]` in that basis, scaled to unit norm.
    pub fn regular_simplex(m: usize, d: usize) -> Result<Self> {
        if m < 2 || m > d + 1 {
            return Err(Error::InvalidArity(format!(
                "regular simplex needs 2 <= M <= d+1, got M={m}, d={d}"
            )));
        }
        let scale = (m as f64 / (m as f64 - 1.0)).sqrt();
        let mut points = DMatrix::zeros(m, d);
        for k in 1..m {
            let norm = ((k * (k + 1)) as f64).sqrt();
            for i in 0..m {
                let h = match i.cmp(&k) {
                    std::cmp::Ordering::Less => 1.0 / norm,
                    std::cmp::Ordering::Equal => -(k as f64) / norm,
                    std::cmp::Ordering::Greater => 0.0,
                };
                points[(i, k - 1)] = scale * h;
            }
        }
        normalize_rows(&points)
    }

    /// The `2d` points `+e_1, -e_1, ..., +e_d, -e_d`.
    pub fn cross_polytope(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArity("cross-polytope needs d >= 1".into()));
        }
        let mut points = DMatrix::zeros(2 * d, d);
        for k in 0..d {
            points[(2 * k, k)] = 1.0;
            points[(2 * k + 1, k)] = -1.0;
        }
        Ok(Self { points })
    }
}

impl Serialize for EmbeddingBatch {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EmbeddingBatch {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        Self::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let m = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if m == 0 || d == 0 {
        return Err(Error::InvalidArity("matrix must be non-empty".into()));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != d) {
        return Err(Error::DimensionMismatch(format!(
            "row {bad} has length {}, expected {d}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(m, d, |i, j| rows[i][j]))
}

/// Outcome of a geometric certification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationCheck {
    pub passed: bool,
    pub max_deviation: f64,
    pub details: BTreeMap<String, f64>,
}

impl ConfigurationCheck {
    fn from_residuals(details: BTreeMap<String, f64>, tol: f64) -> Self {
        let max_deviation = details.values().copied().fold(0.0, f64::max);
        Self {
            passed: max_deviation <= tol,
            max_deviation,
            details,
        }
    }
}

/// Projects every row of `raw` onto the unit sphere.
pub fn normalize_rows(raw: &DMatrix<f64>) -> Result<EmbeddingBatch> {
    if raw.nrows() == 0 || raw.ncols() == 0 {
        return Err(Error::InvalidArity("matrix must be non-empty".into()));
    }
    let mut points = raw.clone();
    for (row, mut r) in points.row_iter_mut().enumerate() {
        let norm = r.norm();
        if !(norm >= ZERO_ROW_NORM) {
            return Err(Error::ZeroRow { row });
        }
        r /= norm;
    }
    Ok(EmbeddingBatch { points })
}

fn check_same_dim(a: &EmbeddingBatch, b: &EmbeddingBatch) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

pub(crate) fn check_same_shape(a: &EmbeddingBatch, b: &EmbeddingBatch) -> Result<()> {
    check_same_dim(a, b)?;
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "batch sizes {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Inner products `<a_i, b_j>`, clamped to `[-1, 1]`.
pub fn gram(a: &EmbeddingBatch, b: &EmbeddingBatch) -> Result<DMatrix<f64>> {
    check_same_dim(a, b)?;
    let mut g = &a.points * b.points.transpose();
    g.apply(|x| *x = x.clamp(-1.0, 1.0));
    Ok(g)
}

/// Squared distances `|a_i - b_j|^2 = 2 - 2 <a_i, b_j>`, in `[0, 4]`.
pub fn pairwise_sq_dist(a: &EmbeddingBatch, b: &EmbeddingBatch) -> Result<DMatrix<f64>> {
    let mut g = gram(a, b)?;
    g.apply(|x| *x = 2.0 - 2.0 * *x);
    Ok(g)
}

/// Removes the radial component of `g` at the unit vector `u`.
pub fn tangent_project(u: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    g - u * g.dot(u)
}

/// Moves `u` by `step` and projects back onto the sphere.
pub fn retract(u: &DVector<f64>, step: &DVector<f64>) -> Result<DVector<f64>> {
    let moved = u + step;
    let norm = moved.norm();
    if !(norm >= DEGENERATE_STEP_NORM) {
        return Err(Error::DegenerateStep { norm });
    }
    Ok(moved / norm)
}

/// Certifies that the rows form a regular `(M-1)`-simplex centred at the
/// origin: zero mean and every off-diagonal inner product equal to
/// `-1/(M-1)`. Rotation invariant.
pub fn is_regular_simplex(u: &EmbeddingBatch, tol: f64) -> Result<ConfigurationCheck> {
    let m = u.len();
    if m < 2 || m > u.dim() + 1 {
        return Err(Error::InvalidArity(format!(
            "simplex check needs 2 <= M <= d+1, got M={m}, d={}",
            u.dim()
        )));
    }
    let mean_norm = (u.points.row_sum() / m as f64).norm();
    let target = -1.0 / (m as f64 - 1.0);
    let g = gram(u, u)?;
    let mut gram_residual: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                gram_residual = gram_residual.max((g[(i, j)] - target).abs());
            }
        }
    }
    let details = BTreeMap::from([
        ("gram_residual".to_string(), gram_residual),
        ("mean_norm".to_string(), mean_norm),
    ]);
    Ok(ConfigurationCheck::from_residuals(details, tol))
}

/// Certifies a cross-polytope through its Gram signature: per row, one
/// inner product of `-1` and zeros elsewhere.
pub fn is_cross_polytope(u: &EmbeddingBatch, tol: f64) -> Result<ConfigurationCheck> {
    let m = u.len();
    if !m.is_multiple_of(2) {
        return Err(Error::InvalidArity(format!(
            "cross-polytope needs an even number of points, got {m}"
        )));
    }
    let g = gram(u, u)?;
    let mut antipodal_residual: f64 = 0.0;
    let mut orthogonal_residual: f64 = 0.0;
    for i in 0..m {
        let partner = (0..m)
            .filter(|&j| j != i)
            .min_by(|&a, &b| g[(i, a)].total_cmp(&g[(i, b)]))
            .expect("M >= 2");
        antipodal_residual = antipodal_residual.max((g[(i, partner)] + 1.0).abs());
        for j in 0..m {
            if j != i && j != partner {
                orthogonal_residual = orthogonal_residual.max(g[(i, j)].abs());
            }
        }
    }
    let details = BTreeMap::from([
        ("antipodal_residual".to_string(), antipodal_residual),
        ("orthogonal_residual".to_string(), orthogonal_residual),
    ]);
    Ok(ConfigurationCheck::from_residuals(details, tol))
}

/// `max_i |u_i - v_i|`.
pub fn alignment_gap(u: &EmbeddingBatch, v: &EmbeddingBatch) -> Result<f64> {
    check_same_shape(u, v)?;
    Ok((0..u.len())
        .map(|i| (u.points.row(i) - v.points.row(i)).norm())
        .fold(0.0, f64::max))
}
