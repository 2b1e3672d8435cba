//! Small dense linear-algebra helpers shared by the quadrature, basis, and
//! projection machinery: 1D Gauss rules, weighted Gram-Schmidt, SVD-based
//! subspace extraction, and fully pivoted dense solves with residual checks.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Errors from the dense helpers.
#[derive(Debug, Error)]
pub enum LaError {
    /// Gram-Schmidt lost rank at the given column (near-dependent inputs).
    #[error("orthonormalization lost rank at column {col} (norm ratio {ratio:.3e})")]
    RankLoss { col: usize, ratio: f64 },
    /// A dense system was numerically singular (residual after the solve).
    #[error("singular dense system (relative residual {resid:.3e})")]
    SingularSystem { resid: f64 },
}

/// Recurrence coefficients of the monic polynomials orthogonal w.r.t.
/// `(1-x)^alpha` on `[-1, 1]` (Jacobi with the second exponent zero):
/// diagonal `a_n`, squared off-diagonal `b_n^2` (with `b_0` unused).
fn jacobi_recurrence(alpha: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = vec![0.0; n];
    let mut b2 = vec![0.0; n];
    for (k, ak) in a.iter_mut().enumerate() {
        let kf = k as f64;
        *ak = if k == 0 {
            -alpha / (alpha + 2.0)
        } else {
            -alpha * alpha / ((2.0 * kf + alpha) * (2.0 * kf + alpha + 2.0))
        };
    }
    for (k, bk) in b2.iter_mut().enumerate().skip(1) {
        let kf = k as f64;
        let s = 2.0 * kf + alpha;
        *bk = 4.0 * kf * kf * (kf + alpha) * (kf + alpha) / (s * s * (s + 1.0) * (s - 1.0));
    }
    (a, b2)
}

/// Evaluates the orthonormal polynomial chain `p_0..p_n` and the derivative
/// of `p_n` at `x`, for the measure described by `(a, b)` with total mass
/// `mu0` (`b[k] = b_k`, the off-diagonal entries, `b[0]` unused).
fn orthonormal_chain(a: &[f64], b: &[f64], mu0: f64, n: usize, x: f64) -> (Vec<f64>, f64) {
    let mut p = vec![0.0; n + 1];
    let mut dp = vec![0.0; n + 1];
    p[0] = 1.0 / mu0.sqrt();
    dp[0] = 0.0;
    if n >= 1 {
        p[1] = (x - a[0]) * p[0] / b[1];
        dp[1] = p[0] / b[1];
    }
    for k in 1..n {
        p[k + 1] = ((x - a[k]) * p[k] - b[k] * p[k - 1]) / b[k + 1];
        dp[k + 1] = (p[k] + (x - a[k]) * dp[k] - b[k] * dp[k - 1]) / b[k + 1];
    }
    let dpn = dp[n];
    (p, dpn)
}

/// `n`-point Gauss rule for `int_0^1 f(t) (1-t)^alpha dt` with integer
/// `alpha >= 0`; exact for polynomial `f` of degree `<= 2n-1`.
///
/// Nodes come from the symmetrized Jacobi matrix (Golub-Welsch), are
/// polished with two Newton steps on the orthonormal recurrence, and the
/// weights use the Christoffel sum, which is insensitive to eigenvector
/// accuracy.
pub fn gauss_jacobi_01(n: usize, alpha: u32) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one quadrature point");
    let alpha = alpha as f64;
    let mu0 = 2f64.powf(alpha + 1.0) / (alpha + 1.0);
    // The chain evaluation of p_n needs coefficients up to b[n].
    let (a, b2) = jacobi_recurrence(alpha, n + 1);
    let b: Vec<f64> = b2.iter().map(|v| v.sqrt()).collect();

    // Golub-Welsch: eigenvalues of the symmetric tridiagonal matrix.
    let mut jm = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        jm[(k, k)] = a[k];
        if k + 1 < n {
            jm[(k, k + 1)] = b[k + 1];
            jm[(k + 1, k)] = b[k + 1];
        }
    }
    let eig = jm.symmetric_eigen();
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|x, y| x.partial_cmp(y).unwrap());

    // Newton polish on p_n, then Christoffel weights from the chain.
    let mut weights = vec![0.0; n];
    for (i, node) in nodes.iter_mut().enumerate() {
        for _ in 0..2 {
            let (p, dpn) = orthonormal_chain(&a, &b, mu0, n, *node);
            if dpn != 0.0 {
                *node -= p[n] / dpn;
            }
        }
        let (p, _) = orthonormal_chain(&a, &b, mu0, n, *node);
        let sum: f64 = p[..n].iter().map(|v| v * v).sum();
        weights[i] = 1.0 / sum;
    }

    // Map [-1,1] with weight (1-x)^alpha to [0,1] with weight (1-t)^alpha.
    let scale = 2f64.powf(alpha + 1.0);
    let t: Vec<f64> = nodes.iter().map(|x| 0.5 * (1.0 + x)).collect();
    let w: Vec<f64> = weights.iter().map(|w| w / scale).collect();
    (t, w)
}

/// `n`-point Gauss-Legendre rule on `[0,1]`; exact to degree `2n-1`.
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    gauss_jacobi_01(n, 0)
}

/// Orthonormalizes the columns of `vals` (rows = sample points) in the
/// discrete inner product `<f,g> = sum_q weights[q] f[q] g[q]` by modified
/// Gram-Schmidt with one reorthogonalization pass.
///
/// Returns the coefficient matrix `c` (columns of the result expressed in
/// the original columns: `new = old * c`); `vals` is overwritten with the
/// orthonormal evaluations.
pub fn mgs_orthonormalize(
    vals: &mut DMatrix<f64>,
    weights: &[f64],
) -> Result<DMatrix<f64>, LaError> {
    let npts = vals.nrows();
    let d = vals.ncols();
    assert_eq!(npts, weights.len());
    let mut c = DMatrix::<f64>::identity(d, d);
    let dot = |x: &DMatrix<f64>, i: usize, j: usize| -> f64 {
        (0..npts).map(|q| weights[q] * x[(q, i)] * x[(q, j)]).sum()
    };
    for j in 0..d {
        let norm0 = dot(vals, j, j).sqrt();
        // Two passes of projection removal (classical reorthogonalization).
        for _pass in 0..2 {
            for i in 0..j {
                let r = dot(vals, i, j);
                for q in 0..npts {
                    let vi = vals[(q, i)];
                    vals[(q, j)] -= r * vi;
                }
                for t in 0..d {
                    let ci = c[(t, i)];
                    c[(t, j)] -= r * ci;
                }
            }
        }
        let norm = dot(vals, j, j).sqrt();
        if !(norm > 1e-10 * norm0.max(f64::MIN_POSITIVE)) {
            return Err(LaError::RankLoss { col: j, ratio: norm / norm0 });
        }
        for q in 0..npts {
            vals[(q, j)] /= norm;
        }
        for t in 0..d {
            c[(t, j)] /= norm;
        }
    }
    Ok(c)
}

/// Orthonormal basis (columns) of the column space of `m`, keeping singular
/// directions with `sigma > rel * sigma_max`.
pub fn svd_range(m: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.as_ref().expect("svd requested u");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > rel * smax)
        .collect();
    let mut out = DMatrix::zeros(m.nrows(), keep.len());
    for (t, &i) in keep.iter().enumerate() {
        out.set_column(t, &u.column(i));
    }
    out
}

/// Orthonormal basis (columns) of the right nullspace of `m`: directions
/// with `sigma <= rel * sigma_max` (or beyond the numerical rank).
pub fn svd_nullspace(m: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    if rows == 0 {
        return DMatrix::identity(cols, cols);
    }
    // Pad with zero rows so the thin SVD carries a full set of right
    // singular vectors.
    let work = if rows < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.view_mut((0, 0), (rows, cols)).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let svd = work.clone().svd(false, true);
    let vt = svd.v_t.as_ref().expect("svd requested v_t");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax == 0.0 || svd.singular_values[i] <= rel * smax)
        .collect();
    let mut out = DMatrix::zeros(cols, keep.len());
    for (t, &i) in keep.iter().enumerate() {
        out.set_column(t, &vt.row(i).transpose());
    }
    out
}

/// Solves the square dense system `a x = b` (multiple right-hand sides) by
/// LU with full pivoting and verifies the relative residual.
pub fn solve_full_piv(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, LaError> {
    assert_eq!(a.nrows(), a.ncols(), "square system expected");
    assert_eq!(a.nrows(), b.nrows());
    if a.nrows() == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    let lu = a.clone().full_piv_lu();
    let x = lu
        .solve(b)
        .ok_or(LaError::SingularSystem { resid: f64::INFINITY })?;
    let resid = (a * &x - b).norm();
    let scale = a.norm() * x.norm() + b.norm();
    let rel = resid / scale.max(f64::MIN_POSITIVE);
    if !rel.is_finite() || rel > 1e-8 {
        return Err(LaError::SingularSystem { resid: rel });
    }
    Ok(x)
}

/// Vector convenience wrapper over [`solve_full_piv`].
pub fn solve_full_piv_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, LaError> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = solve_full_piv(a, &bm)?;
    Ok(DVector::from_column_slice(x.as_slice()))
}
