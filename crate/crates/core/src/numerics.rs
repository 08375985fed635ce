//! Dense linear-algebra primitives shared by every other module.
//!
//! Everything here is a pure function of its inputs. Each SVD or LU
//! factorization performed through this module bumps a thread-local
//! counter, which lets callers assert that a code path is free of
//! factorizations (see [`factorization_count`]).

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative feasibility tolerance for consistent linear systems.
pub const DEFAULT_FEASIBILITY: f64 = 1e-6;

thread_local! {
    static FACTORIZATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of matrix factorizations performed so far on the current thread.
pub fn factorization_count() -> u64 {
    FACTORIZATIONS.with(Cell::get)
}

fn bump_factorizations() {
    FACTORIZATIONS.with(|c| c.set(c.get() + 1));
}

/// Singular values below `relative_cutoff * sigma_max` are treated as zero.
///
/// When no cutoff is configured the shape-dependent default
/// `max(rows, cols) * f64::EPSILON` is used.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankTolerance(Option<f64>);

impl RankTolerance {
    pub const fn auto() -> Self {
        RankTolerance(None)
    }

    pub fn relative(cutoff: f64) -> Result<Self> {
        if !(cutoff.is_finite() && cutoff > 0.0) {
            return Err(Error::InvalidInput(format!(
                "rank cutoff must be positive and finite, got {cutoff}"
            )));
        }
        Ok(RankTolerance(Some(cutoff)))
    }

    pub fn relative_cutoff(&self, rows: usize, cols: usize) -> f64 {
        self.0
            .unwrap_or_else(|| rows.max(cols).max(1) as f64 * f64::EPSILON)
    }

    fn threshold(&self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        self.relative_cutoff(rows, cols) * sigma_max
    }
}

pub(crate) fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries")))
    }
}

/// SVD `m = U diag(s) V^T` with singular values in decreasing order.
/// `full` returns square `U` and `V`, otherwise the thin factors.
struct Svd {
    u: DMatrix<f64>,
    s: Vec<f64>,
    v: DMatrix<f64>,
}

// nalgebra's bidiagonal SVD loses accuracy on rank-deficient inputs, so the
// decomposition is delegated to faer.
fn svd(m: &DMatrix<f64>, full: bool) -> Result<Svd> {
    bump_factorizations();
    let a = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let failed = |_| Error::NumericalFailure("SVD did not converge".into());
    let dec = if full {
        a.svd().map_err(failed)?
    } else {
        a.thin_svd().map_err(failed)?
    };
    let (fu, fv) = (dec.U(), dec.V());
    let sv = dec.S().column_vector();
    Ok(Svd {
        u: DMatrix::from_fn(fu.nrows(), fu.ncols(), |i, j| fu[(i, j)]),
        s: (0..sv.nrows()).map(|k| sv[k]).collect(),
        v: DMatrix::from_fn(fv.nrows(), fv.ncols(), |i, j| fv[(i, j)]),
    })
}

/// Singular values in decreasing order.
pub(crate) fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    bump_factorizations();
    faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
        .singular_values()
        .map_err(|_| Error::NumericalFailure("SVD did not converge".into()))
}

/// Moore-Penrose pseudoinverse via the SVD.
pub fn pseudoinverse(m: &DMatrix<f64>, tol: RankTolerance) -> Result<DMatrix<f64>> {
    ensure_finite(m, "matrix")?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    let dec = svd(m, false)?;
    let sigma_max = dec.s.first().copied().unwrap_or(0.0);
    let cut = tol.threshold(rows, cols, sigma_max);

    let mut pinv = DMatrix::zeros(cols, rows);
    for (k, &s) in dec.s.iter().enumerate() {
        if s > cut && s > 0.0 {
            // pinv += v_k u_k^T / s
            pinv.ger(1.0 / s, &dec.v.column(k), &dec.u.column(k), 1.0);
        }
    }
    Ok(pinv)
}

/// Number of singular values above the relative cutoff.
pub fn numerical_rank(m: &DMatrix<f64>, tol: RankTolerance) -> Result<usize> {
    ensure_finite(m, "matrix")?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(0);
    }
    let sv = singular_values(m)?;
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return Ok(0);
    }
    let cut = tol.threshold(rows, cols, sigma_max);
    Ok(sv.iter().filter(|&&s| s > cut).count())
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space_basis(m: &DMatrix<f64>, tol: RankTolerance) -> Result<DMatrix<f64>> {
    ensure_finite(m, "matrix")?;
    let (rows, cols) = m.shape();
    if rows == 0 {
        return Ok(DMatrix::identity(cols, cols));
    }
    let dec = svd(m, true)?;
    let sigma_max = dec.s.first().copied().unwrap_or(0.0);
    let cut = tol.threshold(rows, cols, sigma_max);
    // Right vectors beyond the singular values span the remaining kernel.
    let null: Vec<_> = (0..cols)
        .filter(|&k| sigma_max == 0.0 || dec.s.get(k).is_none_or(|&s| s <= cut))
        .map(|k| dec.v.column(k).into_owned())
        .collect();
    if null.is_empty() {
        Ok(DMatrix::zeros(cols, 0))
    } else {
        Ok(DMatrix::from_columns(&null))
    }
}

/// The linear map `g -> beta` that returns, among all solutions of
/// `H beta = g`, the one minimizing `||Q beta||`:
///
/// `(I - (Q (I - H^+ H))^+ Q) H^+`.
///
/// The null-space projector `I - H^+ H` is formed as `Z Z^T` from an
/// orthonormal null-space basis `Z`, so the inner pseudoinverse becomes
/// `Z (Q Z)^+`.
pub fn weighted_min_norm_operator(
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    tol: RankTolerance,
) -> Result<DMatrix<f64>> {
    ensure_finite(h, "constraint matrix")?;
    ensure_finite(q, "weight matrix")?;
    if q.ncols() != h.ncols() {
        return Err(Error::InvalidInput(format!(
            "weight has {} columns, constraint matrix has {}",
            q.ncols(),
            h.ncols()
        )));
    }
    let h_pinv = pseudoinverse(h, tol)?;
    let z = null_space_basis(h, tol)?;
    if z.ncols() == 0 {
        return Ok(h_pinv);
    }
    let qz = q * &z;
    let qz_pinv = pseudoinverse(&qz, RankTolerance::auto())?;
    let correction = &z * qz_pinv * q;
    let n = h.ncols();
    Ok((DMatrix::identity(n, n) - correction) * h_pinv)
}

/// Minimizes `||Q beta||` subject to `H beta = g`.
///
/// Fails with [`Error::Infeasible`] when the residual exceeds
/// `feasibility * (1 + ||g||)`.
pub fn weighted_min_norm_solve(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    q: &DMatrix<f64>,
    tol: RankTolerance,
    feasibility: f64,
) -> Result<DVector<f64>> {
    if g.len() != h.nrows() {
        return Err(Error::InvalidInput(format!(
            "right-hand side has length {}, expected {}",
            g.len(),
            h.nrows()
        )));
    }
    if !g.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidInput("right-hand side is not finite".into()));
    }
    let op = weighted_min_norm_operator(h, q, tol)?;
    let beta = op * g;
    let residual = (h * &beta - g).norm();
    if residual > feasibility * (1.0 + g.norm()) {
        return Err(Error::Infeasible { residual });
    }
    Ok(beta)
}

/// Solves `min 1/2 z^T P z + c^T z  s.t.  E z = f` through the dense KKT system
/// `[P E^T; E 0] [z; lambda] = [-c; f]` with an LU factorization.
pub fn solve_equality_qp(
    p: &DMatrix<f64>,
    c: &DVector<f64>,
    e: &DMatrix<f64>,
    f: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = p.nrows();
    let k = e.nrows();
    if p.ncols() != n || c.len() != n || e.ncols() != n || f.len() != k {
        return Err(Error::InvalidInput("KKT block dimensions disagree".into()));
    }
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(p);
    kkt.view_mut((n, 0), (k, n)).copy_from(e);
    kkt.view_mut((0, n), (n, k)).copy_from(&e.transpose());
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-c));
    rhs.rows_mut(n, k).copy_from(f);

    bump_factorizations();
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NumericalFailure("singular KKT system".into()))?;
    if !sol.iter().all(|x| x.is_finite()) {
        return Err(Error::NumericalFailure("KKT solution is not finite".into()));
    }
    Ok(sol.rows(0, n).into_owned())
}

/// Stacks `k` copies of `v` (the Kronecker product `1_k ⊗ v`).
pub fn repeat_block(v: &DVector<f64>, k: usize) -> DVector<f64> {
    let m = v.len();
    DVector::from_fn(m * k, |i, _| v[i % m])
}

/// `1_k ⊗ I_m`.
pub fn stacked_identity(k: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k * m, m, |i, j| if i % m == j { 1.0 } else { 0.0 })
}

/// Vertically concatenates matrices with equal column counts.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack: column mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Vertically concatenates vectors.
pub fn vconcat(parts: &[&DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.len()).copy_from(*p);
        r += p.len();
    }
    out
}
