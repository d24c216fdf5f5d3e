//! Small dense-matrix helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

/// Spectral radius of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// (M + Mᵀ)/2, removing antisymmetric round-off drift.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Clip negative eigenvalues of a symmetric matrix to zero.
///
/// Returns the repaired matrix and the most negative eigenvalue found, so the
/// caller can count repairs that exceeded its drift tolerance.
pub fn clip_to_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let eig = symmetrize(m).symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        return (symmetrize(m), min);
    }
    let clipped = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0)),
    );
    let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (symmetrize(&repaired), min)
}

/// Symmetric square root factor S of a PSD matrix, with M = S·Sᵀ.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let sqrt = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

/// Largest absolute entry of A − B.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Moore–Penrose pseudo-inverse with a relative singular-value cutoff.
pub fn pinv(m: &DMatrix<f64>, rel_eps: f64) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    m.clone()
        .svd(true, true)
        .pseudo_inverse(rel_eps * m.amax().max(f64::MIN_POSITIVE))
        .expect("svd requested with both factors")
}

/// Solve X·G = R for X with G symmetric PSD.
///
/// Tries a Cholesky factorization first; on failure falls back to the
/// pseudo-inverse (minimum-norm solution) and reports it via the flag.
pub fn solve_right_psd(r: &DMatrix<f64>, g: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if let Some(chol) = g.clone().cholesky() {
        // X·G = R  ⇔  G·Xᵀ = Rᵀ
        let xt = chol.solve(&r.transpose());
        (xt.transpose(), false)
    } else {
        (r * pinv(g, 1e-12), true)
    }
}

/// Orthonormal basis of the unobservable subspace of the pair (A, C).
///
/// Stacks C, CA, …, CA^{N−1} with N = dim(A) and returns the right singular
/// vectors whose singular values fall below `rel_tol` times the largest one.
/// The returned matrix has one column per kernel direction (possibly none).
pub fn unobservable_basis(a: &DMatrix<f64>, c: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut stack = DMatrix::zeros(c.nrows() * n, n);
    let mut block = c.clone();
    for i in 0..n {
        stack.view_mut((i * c.nrows(), 0), (c.nrows(), n)).copy_from(&block);
        block = &block * a;
    }
    let svd = stack.svd(false, true);
    let v_t = svd.v_t.expect("svd requested with v_t");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = rel_tol * smax.max(f64::MIN_POSITIVE);
    let kernel: Vec<usize> = (0..n)
        .filter(|&i| svd.singular_values.get(i).copied().unwrap_or(0.0) <= tol)
        .collect();
    let mut basis = DMatrix::zeros(n, kernel.len());
    for (col, &i) in kernel.iter().enumerate() {
        basis.set_column(col, &v_t.row(i).transpose());
    }
    basis
}
