//! Small dense helpers on top of `nalgebra` shared by the extractor and the
//! back-end.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Cholesky factorization of a symmetric positive-definite matrix, retrying
/// with a ridge of `rel_ridge * trace / n` on failure.
pub fn cholesky_with_ridge(a: &DMatrix<f64>, rel_ridge: f64) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let n = a.nrows().max(1);
    let mut ridge = (rel_ridge * a.trace().abs() / n as f64).max(f64::MIN_POSITIVE);
    for _ in 0..12 {
        let mut b = a.clone();
        for i in 0..a.nrows() {
            b[(i, i)] += ridge;
        }
        if let Some(c) = Cholesky::new(b) {
            warn!("matrix not positive definite; added ridge {ridge:.3e}");
            return Ok(c);
        }
        ridge *= 100.0;
    }
    Err(Error::Numerical(
        "matrix is not positive definite even after ridge regularization".into(),
    ))
}

/// `log |A|` from a Cholesky factor.
pub fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub fn sorted_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mut sym = a.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Largest principal angle (radians) between the column spaces of `a` and `b`.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let m = qa.transpose() * qb;
    let sv = m.singular_values();
    let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    smallest.clamp(-1.0, 1.0).acos()
}
