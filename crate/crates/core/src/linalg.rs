//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Flip column signs so the largest-magnitude entry of each column is
/// positive (ties resolved toward the lowest row index).
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for (idx, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = idx;
            }
        }
        if best_abs > 0.0 && col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Top-`r` left singular vectors, ordered by decreasing singular value,
/// with the column sign convention of [`fix_column_signs`].
pub fn leading_left_singular_vectors(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    // Eigen-decomposition of the Gram matrix is far cheaper when the
    // matrix is very wide, and exact enough for a warm start.
    let (vals, vecs): (Vec<f64>, DMatrix<f64>) = if cols > 4 * rows {
        let gram = m * m.transpose();
        let eig = nalgebra::SymmetricEigen::new(gram);
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    } else {
        let svd = m.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        (svd.singular_values.iter().copied().collect(), u)
    };
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let mut out = DMatrix::zeros(rows, r);
    for (j, &src) in order.iter().take(r).enumerate() {
        out.set_column(j, &vecs.column(src));
    }
    // SVD of a short-wide matrix only returns min(rows, cols) vectors.
    if order.len() < r {
        complete_orthonormal(&mut out, order.len());
    }
    fix_column_signs(&mut out);
    out
}

/// Fill columns `filled..` of `m` with unit vectors orthogonal to the
/// preceding ones (Gram-Schmidt against the canonical basis).
fn complete_orthonormal(m: &mut DMatrix<f64>, filled: usize) {
    let rows = m.nrows();
    let mut next = filled;
    for e in 0..rows {
        if next >= m.ncols() {
            break;
        }
        let mut v = DVector::zeros(rows);
        v[e] = 1.0;
        for j in 0..next {
            let proj = m.column(j).dot(&v);
            v.axpy(-proj, &m.column(j).into_owned(), 1.0);
        }
        let norm = v.norm();
        if norm > 1e-8 {
            m.set_column(next, &(v / norm));
            next += 1;
        }
    }
}

/// Thin QR: `m = q * r` with `q` having orthonormal columns and `r`
/// square upper triangular with a nonnegative diagonal.
pub fn thin_qr(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for j in 0..r.nrows() {
        if r[(j, j)] < 0.0 {
            r.row_mut(j).neg_mut();
            q.column_mut(j).neg_mut();
        }
    }
    (q, r)
}

/// Solve `(h + damping) x = g` for a symmetric positive semidefinite `h`.
///
/// The damping is relative to the mean diagonal of `h`, so the solution is
/// invariant to a common rescaling of `h` and `g`. It is increased until
/// the Cholesky factorization succeeds.
pub fn solve_psd(h: &DMatrix<f64>, g: &DMatrix<f64>, rel_damping: f64) -> Option<DMatrix<f64>> {
    let n = h.nrows();
    if n == 0 {
        return Some(DMatrix::zeros(0, g.ncols()));
    }
    let mean_diag = h.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    if !mean_diag.is_finite() {
        return None;
    }
    if mean_diag == 0.0 {
        return Some(DMatrix::zeros(n, g.ncols()));
    }
    let mut damp = rel_damping.max(0.0);
    for _ in 0..12 {
        let mut a = h.clone();
        for i in 0..n {
            a[(i, i)] += damp * mean_diag;
        }
        if let Some(chol) = a.cholesky() {
            let x = chol.solve(g);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        damp = if damp == 0.0 { 1e-12 } else { damp * 100.0 };
    }
    None
}

/// Ridge-stabilised least squares `argmin ||a x - b||^2`.
pub fn least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_ridge: f64) -> Option<DMatrix<f64>> {
    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    solve_psd(&ata, &atb, rel_ridge)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Pearson correlation; zero when either input is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let da = a[i] - ma;
        let db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Multiple correlation of `y` with the column span of `x` (plus an
/// intercept): the square root of the regression R².
pub fn multiple_correlation(y: &[f64], x: &DMatrix<f64>) -> f64 {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let yc = DMatrix::from_iterator(n, 1, y.iter().map(|v| v - mean));
    let mut xc = x.clone();
    for mut col in xc.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let sst = yc.norm_squared();
    if sst == 0.0 || xc.ncols() == 0 {
        return 0.0;
    }
    let Some(coef) = least_squares(&xc, &yc, 1e-12) else {
        return 0.0;
    };
    let fitted = &xc * coef;
    let sse = (&yc - fitted).norm_squared();
    (1.0 - sse / sst).clamp(0.0, 1.0).sqrt()
}
