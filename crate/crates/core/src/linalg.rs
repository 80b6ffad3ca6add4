//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if m.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Returns `F` with `FᵀF = Q` for a symmetric PSD `Q`, dropping directions whose
/// eigenvalue is below `rel_tol·max|λ|`.
pub fn psd_factor(q: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = q.nrows();
    let eig = symmetrize(q).symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let keep: Vec<usize> = (0..n)
        .filter(|&k| eig.eigenvalues[k] > rel_tol * top && eig.eigenvalues[k] > 0.0)
        .collect();
    let mut f = DMatrix::zeros(keep.len(), n);
    for (r, &k) in keep.iter().enumerate() {
        let s = eig.eigenvalues[k].sqrt();
        for c in 0..n {
            f[(r, c)] = s * eig.eigenvectors[(c, k)];
        }
    }
    f
}

/// Clips eigenvalues in `(-floor, 0)` to zero. Returns `None` if some eigenvalue is
/// below `-floor`.
pub fn clip_to_psd(m: &DMatrix<f64>, floor: f64) -> Option<DMatrix<f64>> {
    let sym = symmetrize(m);
    if sym.nrows() == 0 {
        return Some(sym);
    }
    let eig = sym.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -floor {
        return None;
    }
    if min >= 0.0 {
        return Some(sym);
    }
    let clipped = eig.eigenvalues.map(|x| x.max(0.0));
    let v = &eig.eigenvectors;
    Some(symmetrize(&(v * DMatrix::from_diagonal(&clipped) * v.transpose())))
}

/// Dense `LDLᵀ` factorization without pivoting for quasi-definite matrices
/// `[[H + δI, Aᵀ], [A, -δI]]`, with static regularization applied by the caller.
pub(crate) struct Ldl {
    n: usize,
    // unit lower triangle, row-major
    l: Vec<f64>,
    d: Vec<f64>,
}

impl Ldl {
    /// Factorizes `k + diag(reg)`. Fails if a pivot vanishes or changes the expected sign.
    pub(crate) fn factor(k: &DMatrix<f64>, reg: &[f64], n_positive: usize) -> Option<Self> {
        let n = k.nrows();
        let mut l = vec![0.0; n * n];
        let mut d = vec![0.0; n];
        for j in 0..n {
            let mut dj = k[(j, j)] + reg[j];
            {
                let lj = &l[j * n..j * n + j];
                for (p, &ljp) in lj.iter().enumerate() {
                    dj -= ljp * ljp * d[p];
                }
            }
            let expect_positive = j < n_positive;
            if !dj.is_finite() || dj == 0.0 || (expect_positive && dj < 0.0) || (!expect_positive && dj > 0.0) {
                return None;
            }
            d[j] = dj;
            // column j of L below the diagonal
            let wj: Vec<f64> = (0..j).map(|p| l[j * n + p] * d[p]).collect();
            for i in j + 1..n {
                let mut s = k[(i, j)];
                let li = &l[i * n..i * n + j];
                for (p, &lip) in li.iter().enumerate() {
                    s -= lip * wj[p];
                }
                l[i * n + j] = s / dj;
            }
        }
        Some(Self { n, l, d })
    }

    pub(crate) fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for p in 0..i {
                s -= self.l[i * n + p] * b[p];
            }
            b[i] = s;
        }
        for i in 0..n {
            b[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for p in i + 1..n {
                s -= self.l[p * n + i] * b[p];
            }
            b[i] = s;
        }
    }

    /// Solves `k x = b` using this (regularized) factorization plus a few rounds of
    /// iterative refinement against the unregularized `k`.
    pub(crate) fn solve_refined(&self, k: &DMatrix<f64>, b: &DVector<f64>, rounds: usize) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        for _ in 0..rounds {
            let r = b - k * &x;
            if r.amax() <= 1e-15 * (1.0 + b.amax()) {
                break;
            }
            let mut dx = r;
            self.solve_in_place(dx.as_mut_slice());
            x += dx;
        }
        x
    }
}

/// Solves `k X = B` for a general square `k` by LU with partial pivoting on a
/// regularized copy, refined against `k`. Returns the solution and the relative
/// residual `‖kX − B‖∞ / (1 + ‖B‖∞)`.
pub fn solve_regularized(
    k: &DMatrix<f64>,
    reg: &[f64],
    b: &DMatrix<f64>,
    rounds: usize,
) -> Option<(DMatrix<f64>, f64)> {
    let mut kr = k.clone();
    for (i, &r) in reg.iter().enumerate() {
        kr[(i, i)] += r;
    }
    let lu = kr.lu();
    let mut x = lu.solve(b)?;
    for _ in 0..rounds {
        let r = b - k * &x;
        if r.amax() <= 1e-14 * (1.0 + b.amax()) {
            break;
        }
        x += lu.solve(&r)?;
    }
    let res = (b - k * &x).amax() / (1.0 + b.amax());
    if x.iter().all(|v| v.is_finite()) {
        Some((x, res))
    } else {
        None
    }
}
