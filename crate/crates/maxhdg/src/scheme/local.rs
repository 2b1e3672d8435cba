//! Element-local assembly and static condensation.
//!
//! Per element `K` the volume unknowns are stacked `x = [w | u | p]` and the
//! trace unknowns `lambda = [uhat_0, phat_0 | ... | uhat_3, phat_3]` (local
//! face `i` opposite vertex `i`, `N(F)` coefficients before `M(F)`). The
//! local equations are `A x + B lambda = F`; the flux rows contribute
//! `C x + D lambda` to the skeleton equations, condensing to
//! `S = D - C A^{-1} B` with load `-C A^{-1} F`.

use super::SchemeError;
use crate::polyspace::ElementSpaces;
use crate::projections::{data_quad, StabilizationSpec};
use crate::quadrature::data_degree;
use crate::tol;
use nalgebra::{DMatrix, DVector, Dyn, Vector3};

type FullPivLu = nalgebra::FullPivLU<f64, Dyn, Dyn>;

/// Factorized local operator of one element.
#[derive(Debug)]
pub struct LocalOperator {
    /// Volume block sizes: `dim W`, `dim V`, `dim Q`.
    pub nw: usize,
    pub nv: usize,
    pub nq: usize,
    /// Trace layout: local face `i` occupies `face_off[i]..face_off[i+1]`
    /// of `lambda`, N coefficients first, then M.
    pub face_off: [usize; 5],
    /// N-space dimension per local face (the first chunk of each block).
    pub n_dims: [usize; 4],
    /// Resolved stabilization values.
    pub tau: StabilizationSpec,
    /// Volume-volume block (rows/cols `[w|u|p]`).
    pub a: DMatrix<f64>,
    /// Volume-trace coupling.
    pub b: DMatrix<f64>,
    /// Flux-volume coupling (rows = trace test functions).
    pub c: DMatrix<f64>,
    /// Flux-trace block (block-diagonal over faces).
    pub d: DMatrix<f64>,
    /// Condensed Schur block `D - C A^{-1} B`.
    pub s: DMatrix<f64>,
    /// Volume load (`f` moments in the `u` rows).
    pub load: DVector<f64>,
    /// Condensed load `-C A^{-1} load`.
    pub condensed_load: DVector<f64>,
    /// `A^{-1} B`, kept for recovery.
    pub(super) a_inv_b: DMatrix<f64>,
    /// `A^{-1} load`, kept for recovery.
    pub(super) a_inv_load: DVector<f64>,
}

impl LocalOperator {
    /// Trace vector length (`sum_F dim N(F) + dim M(F)`).
    pub fn nlambda(&self) -> usize {
        self.face_off[4]
    }

    /// Recovers the volume coefficients for given element traces.
    pub fn recover_interior(&self, lambda: &DVector<f64>) -> DVector<f64> {
        &self.a_inv_load - &self.a_inv_b * lambda
    }

    /// Relative residual of the volume equations `A x + B lambda = F`.
    pub fn interior_residual(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
        let r = &self.a * x + &self.b * lambda - &self.load;
        r.norm() / (1.0 + self.load.norm())
    }
}

/// Assembles and condenses the local operator on one element.
///
/// Matrix entries are polynomial inner products integrated with rules exact
/// for degree `2(k+2)`; the `f` moments use the shared data rule so
/// non-polynomial loads are resolved well beyond the basis degrees.
pub fn assemble_local(
    element: usize,
    es: &ElementSpaces,
    tau: &StabilizationSpec,
    f: &dyn Fn(&Vector3<f64>) -> Vector3<f64>,
) -> Result<LocalOperator, SchemeError> {
    let (nw, nv, nq) = (es.w.dim, es.v.dim, es.q.dim);
    let nx = nw + nv + nq;
    let mut face_off = [0usize; 5];
    let mut n_dims = [0usize; 4];
    for i in 0..4 {
        n_dims[i] = es.faces[i].n_space.dim;
        face_off[i + 1] = face_off[i] + n_dims[i] + es.faces[i].m_space.dim;
    }
    let nl = face_off[4];

    let mut a: DMatrix<f64> = DMatrix::zeros(nx, nx);
    let mut b: DMatrix<f64> = DMatrix::zeros(nx, nl);
    let mut c: DMatrix<f64> = DMatrix::zeros(nl, nx);
    let mut d: DMatrix<f64> = DMatrix::zeros(nl, nl);
    let mut load: DVector<f64> = DVector::zeros(nx);

    // Volume terms.
    let vq = es.tet.quad(2 * (es.k + 2));
    for (x, wgt) in vq.points.iter().zip(&vq.weights) {
        let wvals = es.w.vec_values(x);
        let wcurls = es.w.curls(x);
        let vvals = es.v.vec_values(x);
        let vdivs = es.v.divs(x);
        let qvals = es.q.scalar_values(x);
        for i in 0..nw {
            for j in 0..nw {
                a[(i, j)] += wgt * wvals[i].dot(&wvals[j]);
            }
            for j in 0..nv {
                a[(i, nw + j)] -= wgt * vvals[j].dot(&wcurls[i]);
            }
        }
        for i in 0..nv {
            for j in 0..nw {
                a[(nw + i, j)] += wgt * wcurls[j].dot(&vvals[i]);
            }
            for j in 0..nq {
                a[(nw + i, nw + nv + j)] -= wgt * qvals[j] * vdivs[i];
            }
        }
        for i in 0..nq {
            for j in 0..nv {
                a[(nw + nv + i, nw + j)] += wgt * vdivs[j] * qvals[i];
            }
        }
    }

    // Load: f moments against V, data-rule quadrature.
    let dq = data_quad(&es.tet, data_degree(es.v.k));
    for (x, wgt) in dq.points.iter().zip(&dq.weights) {
        let vvals = es.v.vec_values(x);
        let fx = f(x);
        for i in 0..nv {
            load[nw + i] += wgt * vvals[i].dot(&fx);
        }
    }

    // Face terms. Per face we need the moment matrices
    //   g_vn[a, m] = <phi^V_a, phi^N_m>          x_wn[a, m] = <n x phi^W_a, phi^N_m>
    //   h_qm[a, m] = <phi^Q_a, phi^M_m>          y_vm[a, m] = <phi^V_a . n, phi^M_m>
    //   fqq[a, b]  = <phi^Q_a, phi^Q_b>          n_mass, m_mass (trace Grams)
    // and P_N applied to u_h is realized as n_mass^{-1} g_vn^T.
    for (loc, face) in es.faces.iter().enumerate() {
        let nn = face.n_space.dim;
        let nm = face.m_space.dim;
        let off = face_off[loc];
        let n = face.outward_normal();
        let (tt, tn) = (tau.tau_t[loc], tau.tau_n[loc]);
        let fq = face.dom.quad(2 * (es.k + 2));

        let mut g_vn: DMatrix<f64> = DMatrix::zeros(nv, nn);
        let mut x_wn: DMatrix<f64> = DMatrix::zeros(nw, nn);
        let mut h_qm: DMatrix<f64> = DMatrix::zeros(nq, nm);
        let mut y_vm: DMatrix<f64> = DMatrix::zeros(nv, nm);
        let mut fqq: DMatrix<f64> = DMatrix::zeros(nq, nq);
        let mut n_mass: DMatrix<f64> = DMatrix::zeros(nn, nn);
        let mut m_mass: DMatrix<f64> = DMatrix::zeros(nm, nm);
        for (x, wgt) in fq.points.iter().zip(&fq.weights) {
            let vvals = es.v.vec_values(x);
            let wvals = es.w.vec_values(x);
            let qvals = es.q.scalar_values(x);
            let nvals = face.n_space.vec_values(x);
            let mvals = face.m_space.scalar_values(x);
            for (m, nm_val) in nvals.iter().enumerate() {
                for (a2, v) in vvals.iter().enumerate() {
                    g_vn[(a2, m)] += wgt * v.dot(nm_val);
                }
                for (a2, w) in wvals.iter().enumerate() {
                    x_wn[(a2, m)] += wgt * n.cross(w).dot(nm_val);
                }
                for (m2, nm2) in nvals.iter().enumerate() {
                    n_mass[(m, m2)] += wgt * nm_val.dot(nm2);
                }
            }
            for m in 0..nm {
                for a2 in 0..nq {
                    h_qm[(a2, m)] += wgt * qvals[a2] * mvals[m];
                }
                for (a2, v) in vvals.iter().enumerate() {
                    y_vm[(a2, m)] += wgt * v.dot(&n) * mvals[m];
                }
                for m2 in 0..nm {
                    m_mass[(m, m2)] += wgt * mvals[m] * mvals[m2];
                }
            }
            for a2 in 0..nq {
                for b2 in 0..nq {
                    fqq[(a2, b2)] += wgt * qvals[a2] * qvals[b2];
                }
            }
        }

        // P_N(u_h) coefficients are n_mass^{-1} g_vn^T u; the trace bases
        // are orthonormal so n_mass is the identity up to roundoff, but the
        // explicit solve keeps every block the exact discrete operator.
        let n_mass_lu = n_mass.clone().full_piv_lu();
        let proj_u = n_mass_lu
            .solve(&g_vn.transpose())
            .expect("face trace gram is nonsingular");

        // (3a) rows (w tests): -<uhat, r x n> = +<n x r, uhat>.
        b.view_mut((0, off), (nw, nn)).add_assign_scaled(&x_wn, 1.0);
        // (3b) rows (v tests).
        a.view_mut((nw, nw), (nv, nv)).add_assign_scaled(&(&g_vn * &proj_u), tt);
        b.view_mut((nw, off), (nv, nn)).add_assign_scaled(&g_vn, -tt);
        b.view_mut((nw, off + nn), (nv, nm)).add_assign_scaled(&y_vm, 1.0);
        // (3c) rows (q tests).
        a.view_mut((nw + nv, nw + nv), (nq, nq)).add_assign_scaled(&fqq, tn);
        b.view_mut((nw + nv, off + nn), (nq, nm)).add_assign_scaled(&h_qm, -tn);
        // Flux rows, eta tests: -<n x w + tau_t (u - uhat), eta>.
        c.view_mut((off, 0), (nn, nw)).add_assign_scaled(&x_wn.transpose(), -1.0);
        c.view_mut((off, nw), (nn, nv)).add_assign_scaled(&g_vn.transpose(), -tt);
        d.view_mut((off, off), (nn, nn)).add_assign_scaled(&n_mass, tt);
        // Flux rows, mu tests: -<u.n + tau_n (p - phat), mu>.
        c.view_mut((off + nn, nw), (nm, nv)).add_assign_scaled(&y_vm.transpose(), -1.0);
        c.view_mut((off + nn, nw + nv), (nm, nq)).add_assign_scaled(&h_qm.transpose(), -tn);
        d.view_mut((off + nn, off + nn), (nm, nm)).add_assign_scaled(&m_mass, tn);
    }

    let a_lu: FullPivLu = a.clone().full_piv_lu();
    let pivot_ratio = pivot_ratio(&a_lu);
    if !a_lu.is_invertible() || pivot_ratio < tol::PIVOT_BREAKDOWN {
        return Err(SchemeError::SingularLocal { element, pivot_ratio });
    }
    let a_inv_b = a_lu.solve(&b).expect("checked invertible");
    let a_inv_load_m = a_lu
        .solve(&DMatrix::from_column_slice(nx, 1, load.as_slice()))
        .expect("checked invertible");
    let a_inv_load = DVector::from_column_slice(a_inv_load_m.as_slice());
    let s = &d - &c * &a_inv_b;
    let condensed_load = -(&c * &a_inv_load);

    Ok(LocalOperator {
        nw,
        nv,
        nq,
        face_off,
        n_dims,
        tau: tau.clone(),
        a,
        b,
        c,
        d,
        s,
        load,
        condensed_load,
        a_inv_b,
        a_inv_load,
    })
}

/// Smallest-to-largest magnitude ratio of the LU diagonal.
fn pivot_ratio(lu: &FullPivLu) -> f64 {
    let u = lu.u();
    let n = u.nrows().min(u.ncols());
    if n == 0 {
        return 1.0;
    }
    let mut min = f64::INFINITY;
    let mut max = 0.0_f64;
    for i in 0..n {
        let v = u[(i, i)].abs();
        min = min.min(v);
        max = max.max(v);
    }
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Helper extending `MatrixViewMut` with `+= alpha * M`.
trait AddAssignScaled {
    fn add_assign_scaled(&mut self, m: &DMatrix<f64>, alpha: f64);
}

impl AddAssignScaled for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign_scaled(&mut self, m: &DMatrix<f64>, alpha: f64) {
        debug_assert_eq!(self.shape(), m.shape());
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                self[(i, j)] += alpha * m[(i, j)];
            }
        }
    }
}
