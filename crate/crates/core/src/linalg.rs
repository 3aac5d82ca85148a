//! Dense least-squares plumbing shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis of a column space, built by twice-iterated modified
/// Gram-Schmidt. Columns whose residual norm falls below `RANK_TOL` times
/// their original norm are reported as collinear.
#[derive(Debug, Clone)]
pub struct Basis {
    pub q: DMatrix<f64>,
    pub collinear: Vec<usize>,
}

impl Basis {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(m.ncols());
        let mut collinear = Vec::new();
        for j in 0..m.ncols() {
            let orig = m.column(j).into_owned();
            let norm0 = orig.norm();
            let mut v = orig;
            for _ in 0..2 {
                for q in &cols {
                    let d = q.dot(&v);
                    v.axpy(-d, q, 1.0);
                }
            }
            let norm = v.norm();
            if norm0 == 0.0 || norm <= RANK_TOL * norm0 {
                collinear.push(j);
            } else {
                cols.push(v / norm);
            }
        }
        let q = if cols.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        Basis { q, collinear }
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    /// `P a`: projection onto the spanned space.
    pub fn project(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        if self.rank() == 0 {
            return DMatrix::zeros(a.nrows(), a.ncols());
        }
        &self.q * (self.q.transpose() * a)
    }

    /// `M a = a - P a`.
    pub fn residualize(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        a - self.project(a)
    }

    pub fn residualize_vec(&self, a: &DVector<f64>) -> DVector<f64> {
        if self.rank() == 0 {
            return a.clone();
        }
        a - &self.q * (self.q.transpose() * a)
    }
}

/// Names of columns that are linear combinations of earlier columns.
pub fn collinear_names(m: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    Basis::new(m)
        .collinear
        .into_iter()
        .map(|j| names[j].clone())
        .collect()
}

/// Solve a symmetric positive-definite system, falling back to LU.
pub fn solve_sym(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular system".into()))
}

pub fn inverse_sym(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let inv = solve_sym(a, &DMatrix::identity(n, n))?;
    Ok(symmetrize(&inv))
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Ordinary least squares, returning coefficients and residuals.
pub fn ols(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let b = solve_sym(&xtx, &DMatrix::from_column_slice(xty.len(), 1, xty.as_slice()))?;
    let b = b.column(0).into_owned();
    let resid = y - x * &b;
    Ok((b, resid))
}

/// Sum over clusters of outer products of within-cluster score sums.
/// `scores` is n x k; `cluster` gives a dense cluster index per row.
pub fn cluster_meat(scores: &DMatrix<f64>, cluster: &[usize], n_clusters: usize) -> DMatrix<f64> {
    let k = scores.ncols();
    let mut sums = DMatrix::<f64>::zeros(n_clusters, k);
    for (i, &c) in cluster.iter().enumerate() {
        for j in 0..k {
            sums[(c, j)] += scores[(i, j)];
        }
    }
    sums.transpose() * sums
}

/// Map arbitrary keys to dense 0-based indices in first-seen order.
pub fn dense_index<K: Ord + Clone>(keys: &[K]) -> (Vec<usize>, usize) {
    let mut map = std::collections::BTreeMap::new();
    let mut out = Vec::with_capacity(keys.len());
    for k in keys {
        let next = map.len();
        let idx = *map.entry(k.clone()).or_insert(next);
        out.push(idx);
    }
    (out, map.len())
}

/// Clamp negative eigenvalues of a symmetric matrix to zero. Returns the
/// repaired matrix and whether any clamping happened.
pub fn psd_repair(v: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let sym = symmetrize(v);
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return (sym, false);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (symmetrize(&rebuilt), true)
}

pub fn column(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}

/// Build an n x k matrix from per-row closures over column vectors.
pub fn from_columns(cols: &[Vec<f64>]) -> DMatrix<f64> {
    let n = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_flags_duplicate_column() {
        let m = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 2.0, 1.0, 3.0, 3.0, 1.0, 5.0, 5.0, 1.0, 7.0, 7.0]);
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(collinear_names(&m, &names), vec!["c".to_string()]);
    }

    #[test]
    fn residualize_is_orthogonal() {
        let w = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
        let a = DMatrix::from_row_slice(5, 1, &[1.0, 4.0, 2.0, 8.0, 5.0]);
        let b = Basis::new(&w);
        let r = b.residualize(&a);
        let cross = w.transpose() * r;
        assert!(cross.amax() < 1e-12);
    }

    #[test]
    fn psd_repair_clamps() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (r, fixed) = psd_repair(&v);
        assert!(fixed);
        let eig = r.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12));
    }
}
