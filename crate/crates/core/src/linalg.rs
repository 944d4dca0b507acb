//! Dense linear-algebra helpers on top of nalgebra: sorted SVD, orthonormal
//! null spaces and complements, sorted symmetric spectra.

use nalgebra::{DMatrix, DVector};

/// Singular values (descending) with the matching left/right singular
/// vectors as columns. `u` is `rows × p`, `v` is `cols × p`, `p = min(rows, cols)`.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn sorted_svd(a: &DMatrix<f64>) -> SortedSvd {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = DMatrix::from_columns(&order.iter().map(|&i| u.column(i).into_owned()).collect::<Vec<_>>());
    let v = DMatrix::from_columns(&order.iter().map(|&i| vt.row(i).transpose()).collect::<Vec<_>>());
    SortedSvd { u, sigma, v }
}

fn columns_or_empty(rows: usize, cols: Vec<DVector<f64>>) -> DMatrix<f64> {
    if cols.is_empty() {
        DMatrix::zeros(rows, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis (as columns) of `{v : a v = 0}`, treating singular
/// values `<= threshold` as zero.
pub fn null_space(a: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // pad with zero rows so the SVD yields a full right basis
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = sorted_svd(&padded);
    let basis = (0..cols)
        .filter(|&i| svd.sigma[i] <= threshold)
        .map(|i| svd.v.column(i).into_owned())
        .collect();
    columns_or_empty(cols, basis)
}

/// Orthonormal basis of the column span of `a` at the given threshold.
pub fn column_space(a: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    let rows = a.nrows();
    if a.ncols() == 0 {
        return DMatrix::zeros(rows, 0);
    }
    let svd = sorted_svd(a);
    let basis = svd
        .sigma
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > threshold)
        .map(|(i, _)| svd.u.column(i).into_owned())
        .collect();
    columns_or_empty(rows, basis)
}

/// Orthonormal basis of the orthogonal complement of the span of the
/// columns of `a` (which need not be orthonormal).
pub fn orthogonal_complement(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let dim = a.nrows();
    if a.ncols() == 0 {
        return DMatrix::identity(dim, dim);
    }
    let smax = sorted_svd(a).sigma.first().copied().unwrap_or(0.0);
    null_space(&a.transpose(), rel_tol * smax.max(f64::MIN_POSITIVE))
}

/// Eigenvalues (ascending) and matching eigenvectors of a symmetric matrix.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    symmetric_eigen(a).0
}

pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sigma = a.singular_values();
    let max = sigma.max();
    let min = sigma.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Largest principal-angle sine between the column spans of two matrices
/// with orthonormal columns; `1.0` when the dimensions differ.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() != b.ncols() {
        return 1.0;
    }
    if a.ncols() == 0 {
        return 0.0;
    }
    // ‖(I - P_b) a‖₂
    let residual = a - b * (b.transpose() * a);
    residual.singular_values().max()
}

/// Whether span(a) ⊆ span(b) for orthonormal `b`, at absolute tolerance.
pub fn is_contained(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    if a.ncols() == 0 {
        return true;
    }
    let residual = a - b * (b.transpose() * a);
    residual.iter().all(|v| v.abs() <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_wide_matrix() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let k = null_space(&a, 1e-12);
        assert_eq!(k.ncols(), 2);
        assert!((&a * &k).norm() < 1e-12);
        assert!((k.transpose() * &k - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn null_space_of_tall_matrix() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 0.0, 0.0]);
        let k = null_space(&a, 1e-12);
        assert_eq!(k.ncols(), 1);
        assert!((&a * &k).norm() < 1e-12);
    }

    #[test]
    fn complement_and_distance() {
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let c = orthogonal_complement(&a, 1e-12);
        assert_eq!(c.ncols(), 2);
        assert!((a.transpose() * &c).norm() < 1e-12);
        let b = DMatrix::from_column_slice(3, 1, &[-1.0, 0.0, 0.0]);
        assert!(subspace_distance(&a, &b) < 1e-12);
        let e2 = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        assert!((subspace_distance(&a, &e2) - 1.0).abs() < 1e-12);
        assert!(is_contained(&a, &DMatrix::identity(3, 3), 1e-12));
        assert!(!is_contained(&a, &e2, 1e-8));
    }

    #[test]
    fn eigen_is_sorted() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -1.0]);
        let (vals, vecs) = symmetric_eigen(&a);
        assert_eq!(vals, vec![-1.0, 3.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert!(condition_number(&a) == 3.0);
    }
}
