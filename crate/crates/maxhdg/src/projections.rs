//! Elementwise projection operators.
//!
//! Provides the plain L² projection, the curl-based projection used by the
//! gradient-enriched trace variants, the stabilized flux-pair projection,
//! the stabilized flux-only (BDM-type) projection, the face projections
//! `P_N`/`P_M` onto the trace spaces, the two boundary remainders, and
//! residual checks for the projection assumption and the weak-commutativity
//! identities.
//!
//! Quadrature convention: integrals of pure polynomials use exact collapsed
//! rules; every integral touching sampled analytic data goes through the
//! shared data rule ([`crate::quadrature::data_degree`]), so that identical
//! integrals evaluate to identical numbers and residual identities cancel
//! algebraically rather than up to quadrature error.

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::la;
use crate::polyspace::{
    curl_range_subspace, d_tet, nedelec_subspace, orth_complement, orthonormal_basis,
    pk_plus_grad_subspace, BasisDomain, ElementSpaces, PolyBasis, SubspaceBasis, Variant,
};
use crate::quadrature::{data_degree, data_tet_quad, data_tri_quad, PhysQuad};
use crate::tol;

/// Errors produced while constructing projections.
#[derive(Debug, Error)]
pub enum ProjectionError {
    /// The per-face stabilization values change sign, or vanish identically
    /// where a nonzero value is required.
    #[error("stabilization sign condition violated: {0}")]
    SignCondition(String),
    /// The defining linear system could not be solved reliably.
    #[error("projection system singular: {0}")]
    Singular(#[from] la::LaError),
    /// Post-solve verification of the defining equations failed.
    #[error("defining-equation residual {residual:.3e} exceeds {limit:.1e}")]
    ResidualCheck { residual: f64, limit: f64 },
}

/// Per-face stabilization constants of one element. Entry `i` belongs to
/// the face opposite local vertex `i`.
///
/// Scheme use requires `tau_t > 0` and `tau_n >= 0` on every face. The
/// flux-pair projection additionally requires its signed per-face values to
/// be single-signed and not identically zero; the flux-only projection
/// allows an identically zero set.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizationSpec {
    pub tau_t: [f64; 4],
    pub tau_n: [f64; 4],
}

impl StabilizationSpec {
    pub fn uniform(tau_t: f64, tau_n: f64) -> StabilizationSpec {
        StabilizationSpec { tau_t: [tau_t; 4], tau_n: [tau_n; 4] }
    }

    /// Scheme-side admissibility: `tau_t > 0` everywhere, `tau_n >= 0`.
    pub fn validate_scheme(&self) -> Result<(), ProjectionError> {
        if self.tau_t.iter().any(|&t| t <= 0.0) {
            return Err(ProjectionError::SignCondition(format!(
                "tangential stabilization must be positive on every face, got {:?}",
                self.tau_t
            )));
        }
        if self.tau_n.iter().any(|&t| t < 0.0) {
            return Err(ProjectionError::SignCondition(format!(
                "normal stabilization must be nonnegative, got {:?}",
                self.tau_n
            )));
        }
        Ok(())
    }

    /// Sign condition of the flux-pair projection: all values of one sign
    /// and at least one nonzero.
    pub fn hdg_sign_ok(tau: &[f64; 4]) -> bool {
        Self::single_signed(tau) && tau.iter().any(|&t| t != 0.0)
    }

    /// Sign condition of the flux-only projection: all values of one sign
    /// (identically zero allowed).
    pub fn bdmh_sign_ok(tau: &[f64; 4]) -> bool {
        Self::single_signed(tau)
    }

    fn single_signed(tau: &[f64; 4]) -> bool {
        let has_pos = tau.iter().any(|&t| t > 0.0);
        let has_neg = tau.iter().any(|&t| t < 0.0);
        !(has_pos && has_neg)
    }
}

/// A vector polynomial field: coefficients in an orthonormal basis.
#[derive(Debug, Clone)]
pub struct VecField {
    pub basis: PolyBasis,
    pub coeffs: DVector<f64>,
}

impl VecField {
    pub fn eval(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let vals = self.basis.vec_values(x);
        let mut v = Vector3::zeros();
        for (i, b) in vals.iter().enumerate() {
            v += b * self.coeffs[i];
        }
        v
    }

    pub fn curl(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let vals = self.basis.curls(x);
        let mut v = Vector3::zeros();
        for (i, b) in vals.iter().enumerate() {
            v += b * self.coeffs[i];
        }
        v
    }

    pub fn div(&self, x: &Vector3<f64>) -> f64 {
        let vals = self.basis.divs(x);
        (0..self.basis.dim).map(|i| vals[i] * self.coeffs[i]).sum()
    }

    /// L² norm over the basis domain (orthonormal basis).
    pub fn norm(&self) -> f64 {
        self.coeffs.norm()
    }
}

/// A scalar polynomial field: coefficients in an orthonormal basis.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub basis: PolyBasis,
    pub coeffs: DVector<f64>,
}

impl ScalarField {
    pub fn eval(&self, x: &Vector3<f64>) -> f64 {
        let vals = self.basis.scalar_values(x);
        (0..self.basis.dim).map(|i| vals[i] * self.coeffs[i]).sum()
    }

    pub fn grad(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let grads = self.basis.scalar_grads(x);
        let mut v = Vector3::zeros();
        for (i, g) in grads.iter().enumerate() {
            v += g * self.coeffs[i];
        }
        v
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.norm()
    }
}

/// The elementwise projected triple `(Π w, Π u, Π p)` in the element's
/// `W(K) x V(K) x Q(K)`.
#[derive(Debug, Clone)]
pub struct ProjectedTriple {
    pub w: VecField,
    pub u: VecField,
    pub p: ScalarField,
}

/// Closed-form fields sampled at quadrature points. The derivative
/// closures are needed only by the identity checks, which evaluate
/// `curl w` and `div u` as data.
pub struct ExactFields<'a> {
    pub w: &'a dyn Fn(&Vector3<f64>) -> Vector3<f64>,
    pub u: &'a dyn Fn(&Vector3<f64>) -> Vector3<f64>,
    pub p: &'a dyn Fn(&Vector3<f64>) -> f64,
    pub curl_w: &'a dyn Fn(&Vector3<f64>) -> Vector3<f64>,
    pub div_u: &'a dyn Fn(&Vector3<f64>) -> f64,
}

/// Face-space coefficients of the two boundary remainders, one entry per
/// element face. Both face bases are orthonormal, so face L² norms are
/// coefficient norms.
#[derive(Debug, Clone)]
pub struct BoundaryRemainder {
    /// Curl-curl remainder `n x Πw - P_N(n x w) ± τ_t (P_N Πu - P_N u)`,
    /// coefficients in `N(F)`.
    pub delta_t: Vec<DVector<f64>>,
    /// Grad-div remainder `Πu·n - P_M(u·n) ± τ_n (Πp - P_M p)`,
    /// coefficients in `M(F)`.
    pub delta_n: Vec<DVector<f64>>,
    /// The sign used for the stabilization terms (+1 or -1).
    pub sign: f64,
}

impl BoundaryRemainder {
    /// `L²(∂K)` norm of the curl-curl remainder.
    pub fn delta_t_norm(&self) -> f64 {
        self.delta_t.iter().map(|c| c.norm_squared()).sum::<f64>().sqrt()
    }

    /// `L²(∂K)` norm of the grad-div remainder.
    pub fn delta_n_norm(&self) -> f64 {
        self.delta_n.iter().map(|c| c.norm_squared()).sum::<f64>().sqrt()
    }
}

/// Data rule on a basis domain (graded near the axis).
pub fn data_quad(dom: &BasisDomain, degree: usize) -> PhysQuad {
    match dom {
        BasisDomain::Tet { verts } => data_tet_quad(verts, degree),
        BasisDomain::Face { verts, .. } => data_tri_quad(verts, degree),
    }
}

/// Solves the Gram system of `space` under `quad` for the moment vector
/// `b`, so the returned coefficients satisfy the projection equations
/// exactly at the linear-algebra level even when `quad` is a graded rule
/// (which is not exactly polynomial-reproducing).
fn gram_solve(gram: DMatrix<f64>, b: DVector<f64>, what: &str) -> DVector<f64> {
    la::solve_full_piv_vec(&gram, &b)
        .unwrap_or_else(|e| panic!("{what}: Gram system unsolvable: {e}"))
}

/// L² projection of a vector field onto a full polynomial space.
pub fn l2_project_vec(space: &PolyBasis, f: &dyn Fn(&Vector3<f64>) -> Vector3<f64>) -> VecField {
    let quad = data_quad(&space.domain, data_degree(space.k));
    let n = space.dim;
    let mut gram: DMatrix<f64> = DMatrix::zeros(n, n);
    let mut b: DVector<f64> = DVector::zeros(n);
    for (x, w) in quad.points.iter().zip(&quad.weights) {
        let vals = space.vec_values(x);
        let fx = f(x);
        for i in 0..n {
            b[i] += w * vals[i].dot(&fx);
            for j in 0..n {
                gram[(i, j)] += w * vals[i].dot(&vals[j]);
            }
        }
    }
    VecField { basis: space.clone(), coeffs: gram_solve(gram, b, "l2_project_vec") }
}

/// L² projection of a scalar field onto a full polynomial space.
pub fn l2_project_scalar(space: &PolyBasis, f: &dyn Fn(&Vector3<f64>) -> f64) -> ScalarField {
    let quad = data_quad(&space.domain, data_degree(space.k));
    let n = space.dim;
    let mut gram: DMatrix<f64> = DMatrix::zeros(n, n);
    let mut b: DVector<f64> = DVector::zeros(n);
    for (x, w) in quad.points.iter().zip(&quad.weights) {
        let vals = space.scalar_values(x);
        let fx = f(x);
        for i in 0..n {
            b[i] += w * vals[i] * fx;
            for j in 0..n {
                gram[(i, j)] += w * vals[i] * vals[j];
            }
        }
    }
    ScalarField { basis: space.clone(), coeffs: gram_solve(gram, b, "l2_project_scalar") }
}

/// Face projection `P_N` onto the tangential trace space `N(F)`.
pub fn face_project_pn(
    space: &SubspaceBasis,
    f: &dyn Fn(&Vector3<f64>) -> Vector3<f64>,
) -> DVector<f64> {
    let quad = data_quad(&space.ambient.domain, data_degree(space.ambient.k));
    let n = space.dim;
    let mut gram: DMatrix<f64> = DMatrix::zeros(n, n);
    let mut b: DVector<f64> = DVector::zeros(n);
    for (x, w) in quad.points.iter().zip(&quad.weights) {
        let vals = space.vec_values(x);
        let fx = f(x);
        for i in 0..n {
            b[i] += w * vals[i].dot(&fx);
            for j in 0..n {
                gram[(i, j)] += w * vals[i].dot(&vals[j]);
            }
        }
    }
    gram_solve(gram, b, "face_project_pn")
}

/// Face projection `P_M` onto the scalar trace space `M(F)`.
pub fn face_project_pm(space: &PolyBasis, f: &dyn Fn(&Vector3<f64>) -> f64) -> DVector<f64> {
    debug_assert!(space.comps == 1);
    let quad = data_quad(&space.domain, data_degree(space.k));
    let n = space.dim;
    let mut gram: DMatrix<f64> = DMatrix::zeros(n, n);
    let mut b: DVector<f64> = DVector::zeros(n);
    for (x, w) in quad.points.iter().zip(&quad.weights) {
        let vals = space.scalar_values(x);
        let fx = f(x);
        for i in 0..n {
            b[i] += w * vals[i] * fx;
            for j in 0..n {
                gram[(i, j)] += w * vals[i] * vals[j];
            }
        }
    }
    gram_solve(gram, b, "face_project_pm")
}

/// L² error of a represented field against a closed form, on the field's
/// own domain, with two extra degrees over the data rule.
pub fn l2_error_vec(field: &VecField, f: &dyn Fn(&Vector3<f64>) -> Vector3<f64>) -> f64 {
    let quad = data_quad(&field.basis.domain, data_degree(field.basis.k) + 2);
    quad.integrate(|x| (field.eval(x) - f(x)).norm_squared()).max(0.0).sqrt()
}

/// Scalar analogue of [`l2_error_vec`].
pub fn l2_error_scalar(field: &ScalarField, f: &dyn Fn(&Vector3<f64>) -> f64) -> f64 {
    let quad = data_quad(&field.basis.domain, data_degree(field.basis.k) + 2);
    quad.integrate(|x| (field.eval(x) - f(x)).powi(2)).max(0.0).sqrt()
}

fn residual_check(
    a: &DMatrix<f64>,
    x: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<(), ProjectionError> {
    let r = (a * x - b).norm() / (1.0 + b.norm());
    if r > tol::DEFINING_RESIDUAL {
        Err(ProjectionError::ResidualCheck { residual: r, limit: tol::DEFINING_RESIDUAL })
    } else {
        Ok(())
    }
}

/// The curl-based projection of `w` into `W(K) = P_k(K)^3`.
///
/// Its defining square system of size `3 d_k` imposes vanishing moments
/// against `curl P_k^3 ⊕ (curl P_{k+1}^3)^{⊥_k}` and matches the moments
/// against curls of `(P_k^3 ⊕ ∇H_{k+2})^{⊥_{k+1}}` (with `H_m` the
/// homogeneous polynomials of degree `m`) to the face defect
/// `<n x w - P_N(n x w), v>_{∂K}`, where `P_N` uses the element's trace
/// space — the gradient-enriched (reduced) one for the plus variants.
///
/// `nxw(f, x)` supplies the tangential trace data `n x w` on local face
/// `f` at the point `x`; for analytic `w` it is derived from the closure.
pub fn curlplus_project(
    es: &ElementSpaces,
    w: &dyn Fn(&Vector3<f64>) -> Vector3<f64>,
    nxw: &dyn Fn(usize, &Vector3<f64>) -> Vector3<f64>,
) -> Result<VecField, ProjectionError> {
    let k = es.k;
    let target = &es.w;
    debug_assert_eq!(target.k, k);
    let n_unknown = target.dim;

    // Test blocks. At k = 0 both volume-moment blocks are empty.
    let block_a = if k >= 1 { Some(curl_range_subspace(&es.tet, k)) } else { None };
    let block_b = orth_complement(&curl_range_subspace(&es.tet, k + 1), &orthonormal_basis(&es.tet, k, 3));
    let block_c = orth_complement(&pk_plus_grad_subspace(&es.tet, k), &orthonormal_basis(&es.tet, k + 1, 3));
    let na = block_a.as_ref().map_or(0, |s| s.dim);
    let nb = block_b.dim;
    let nc = block_c.dim;
    assert_eq!(na + nb + nc, n_unknown, "curl projection system is not square");

    let exact_quad = es.tet.quad(2 * (k + 2) + 2);
    let dataq = data_quad(&es.tet, data_degree(k + 1));

    let mut a: DMatrix<f64> = DMatrix::zeros(n_unknown, n_unknown);
    let mut b: DVector<f64> = DVector::zeros(n_unknown);

    // Volume moment rows (exact on the matrix, data rule on the source).
    for (x, wq) in exact_quad.points.iter().zip(&exact_quad.weights) {
        let tv = target.vec_values(x);
        let mut row = 0usize;
        if let Some(ba) = &block_a {
            for r in ba.vec_values(x) {
                for (j, t) in tv.iter().enumerate() {
                    a[(row, j)] += wq * r.dot(t);
                }
                row += 1;
            }
        }
        for r in block_b.vec_values(x) {
            for (j, t) in tv.iter().enumerate() {
                a[(row, j)] += wq * r.dot(t);
            }
            row += 1;
        }
        for r in block_c.curls(x) {
            for (j, t) in tv.iter().enumerate() {
                a[(row, j)] += wq * r.dot(t);
            }
            row += 1;
        }
    }
    for (x, wq) in dataq.points.iter().zip(&dataq.weights) {
        let wx = w(x);
        let mut row = 0usize;
        if let Some(ba) = &block_a {
            for r in ba.vec_values(x) {
                b[row] += wq * r.dot(&wx);
                row += 1;
            }
        }
        for r in block_b.vec_values(x) {
            b[row] += wq * r.dot(&wx);
            row += 1;
        }
        for r in block_c.curls(x) {
            b[row] += wq * r.dot(&wx);
            row += 1;
        }
    }

    // Face defect on the curl-test rows: <n x w - P_N(n x w), v>_{∂K}.
    for (f, face) in es.faces.iter().enumerate() {
        let pn = face_project_pn(&face.n_space, &|x: &Vector3<f64>| nxw(f, x));
        let fq = data_quad(&face.dom, data_degree(k + 1));
        for (x, wq) in fq.points.iter().zip(&fq.weights) {
            let nvals = face.n_space.vec_values(x);
            let mut defect = nxw(f, x);
            for (i, nv) in nvals.iter().enumerate() {
                defect -= nv * pn[i];
            }
            for (i, v) in block_c.vec_values(x).iter().enumerate() {
                b[na + nb + i] += wq * defect.dot(v);
            }
        }
    }

    let coeffs = la::solve_full_piv_vec(&a, &b)?;
    residual_check(&a, &coeffs, &b)?;
    Ok(VecField { basis: target.clone(), coeffs })
}

/// Element geometry for the simplex projections: the tet domain plus its
/// four face domains, each carrying the outward normal.
struct SimplexGeom {
    tet: BasisDomain,
    faces: [BasisDomain; 4],
}

impl SimplexGeom {
    fn new(verts: &[Vector3<f64>; 4]) -> SimplexGeom {
        SimplexGeom {
            tet: BasisDomain::from_tet(*verts),
            faces: std::array::from_fn(|loc| BasisDomain::tet_face(verts, loc)),
        }
    }
}

/// The stabilized flux-pair projection `(Π u, Π p)` into
/// `P_κ(K)^3 x P_κ(K)` on a simplex.
///
/// Volume moments of each component against degree `κ-1` vanish; on each
/// face, moments of `(Πu - u)·n + τ (Πp - p)` against `P_κ(F)` vanish.
/// `tau` is per local face (face `i` opposite vertex `i`), single-signed
/// and not identically zero.
pub fn hdg_project(
    verts: &[Vector3<f64>; 4],
    u: &dyn Fn(&Vector3<f64>) -> Vector3<f64>,
    p: &dyn Fn(&Vector3<f64>) -> f64,
    kappa: usize,
    tau: &[f64; 4],
) -> Result<(VecField, ScalarField), ProjectionError> {
    if !StabilizationSpec::hdg_sign_ok(tau) {
        return Err(ProjectionError::SignCondition(format!(
            "flux-pair projection needs single-signed, not identically zero tau, got {tau:?}"
        )));
    }
    let geom = SimplexGeom::new(verts);
    let u_basis = orthonormal_basis(&geom.tet, kappa, 3);
    let p_basis = orthonormal_basis(&geom.tet, kappa, 1);
    let nu = u_basis.dim;
    let np = p_basis.dim;
    let n_unknown = nu + np;
    assert_eq!(n_unknown, 4 * d_tet(kappa));

    let mut a: DMatrix<f64> = DMatrix::zeros(n_unknown, n_unknown);
    let mut b: DVector<f64> = DVector::zeros(n_unknown);
    let mut row0 = 0usize;

    // Volume rows: 3 d_{κ-1} for u and d_{κ-1} for p (empty at κ = 0).
    if kappa >= 1 {
        let ru = orthonormal_basis(&geom.tet, kappa - 1, 3);
        let rp = orthonormal_basis(&geom.tet, kappa - 1, 1);
        let exact_quad = geom.tet.quad(2 * kappa + 2);
        for (x, wq) in exact_quad.points.iter().zip(&exact_quad.weights) {
            let uv = u_basis.vec_values(x);
            let pv = p_basis.scalar_values(x);
            for (i, r) in ru.vec_values(x).iter().enumerate() {
                for (j, t) in uv.iter().enumerate() {
                    a[(row0 + i, j)] += wq * r.dot(t);
                }
            }
            let rpv = rp.scalar_values(x);
            for i in 0..rp.dim {
                for j in 0..np {
                    a[(row0 + ru.dim + i, nu + j)] += wq * rpv[i] * pv[j];
                }
            }
        }
        let dataq = data_quad(&geom.tet, data_degree(kappa));
        for (x, wq) in dataq.points.iter().zip(&dataq.weights) {
            let ux = u(x);
            let px = p(x);
            for (i, r) in ru.vec_values(x).iter().enumerate() {
                b[row0 + i] += wq * r.dot(&ux);
            }
            let rpv = rp.scalar_values(x);
            for i in 0..rp.dim {
                b[row0 + ru.dim + i] += wq * rpv[i] * px;
            }
        }
        row0 += ru.dim + rp.dim;
    }

    // Face rows: <Πu·n + τ Πp, μ> = <u·n + τ p, μ> for μ in P_κ(F).
    for (loc, fdom) in geom.faces.iter().enumerate() {
        let mu = orthonormal_basis(fdom, kappa, 1);
        let n_out = fdom.normal();
        let t = tau[loc];
        let exact_fq = fdom.quad(2 * kappa + 2);
        for (x, wq) in exact_fq.points.iter().zip(&exact_fq.weights) {
            let muv = mu.scalar_values(x);
            let uv = u_basis.vec_values(x);
            let pv = p_basis.scalar_values(x);
            for i in 0..mu.dim {
                for (j, uvj) in uv.iter().enumerate() {
                    a[(row0 + i, j)] += wq * muv[i] * uvj.dot(&n_out);
                }
                for j in 0..np {
                    a[(row0 + i, nu + j)] += wq * muv[i] * t * pv[j];
                }
            }
        }
        let data_fq = data_quad(fdom, data_degree(kappa));
        for (x, wq) in data_fq.points.iter().zip(&data_fq.weights) {
            let muv = mu.scalar_values(x);
            let rhs = u(x).dot(&n_out) + t * p(x);
            for i in 0..mu.dim {
                b[row0 + i] += wq * muv[i] * rhs;
            }
        }
        row0 += mu.dim;
    }
    assert_eq!(row0, n_unknown);

    let sol = la::solve_full_piv_vec(&a, &b)?;
    residual_check(&a, &sol, &b)?;
    let cu = DVector::from_iterator(nu, (0..nu).map(|i| sol[i]));
    let cp = DVector::from_iterator(np, (0..np).map(|i| sol[nu + i]));
    Ok((
        VecField { basis: u_basis, coeffs: cu },
        ScalarField { basis: p_basis, coeffs: cp },
    ))
}

/// The stabilized flux-only projection `Π u` into `P_κ(K)^3` on a simplex
/// (a BDM projection with a pressure-coupled face term).
///
/// Volume moments against the Nédélec space of degree `κ-2` vanish; on
/// each face, moments of `(Πu - u)·n + τ (Π_{κ-1} p - p)` against
/// `P_κ(F)` vanish, where `Π_{κ-1}` is the volume L² projection. With
/// `tau = 0` this is the classical BDM projection. Requires `κ >= 1` and
/// single-signed `tau` (zero allowed).
pub fn bdmh_project(
    verts: &[Vector3<f64>; 4],
    u: &dyn Fn(&Vector3<f64>) -> Vector3<f64>,
    p: &dyn Fn(&Vector3<f64>) -> f64,
    kappa: usize,
    tau: &[f64; 4],
) -> Result<VecField, ProjectionError> {
    assert!(kappa >= 1, "flux-only projection needs degree >= 1");
    if !StabilizationSpec::bdmh_sign_ok(tau) {
        return Err(ProjectionError::SignCondition(format!(
            "flux-only projection needs single-signed tau, got {tau:?}"
        )));
    }
    let geom = SimplexGeom::new(verts);
    let u_basis = orthonormal_basis(&geom.tet, kappa, 3);
    let nu = u_basis.dim;

    // p enters only as data: its degree κ-1 volume L² projection.
    let p_low = l2_project_scalar(&orthonormal_basis(&geom.tet, kappa - 1, 1), p);

    let mut a: DMatrix<f64> = DMatrix::zeros(nu, nu);
    let mut b: DVector<f64> = DVector::zeros(nu);
    let mut row0 = 0usize;

    if kappa >= 2 {
        let ned = nedelec_subspace(&geom.tet, kappa - 2);
        let exact_quad = geom.tet.quad(2 * kappa + 2);
        for (x, wq) in exact_quad.points.iter().zip(&exact_quad.weights) {
            let uv = u_basis.vec_values(x);
            for (i, r) in ned.vec_values(x).iter().enumerate() {
                for (j, t) in uv.iter().enumerate() {
                    a[(row0 + i, j)] += wq * r.dot(t);
                }
            }
        }
        let dataq = data_quad(&geom.tet, data_degree(kappa));
        for (x, wq) in dataq.points.iter().zip(&dataq.weights) {
            let ux = u(x);
            for (i, r) in ned.vec_values(x).iter().enumerate() {
                b[row0 + i] += wq * r.dot(&ux);
            }
        }
        row0 += ned.dim;
    }

    for (loc, fdom) in geom.faces.iter().enumerate() {
        let mu = orthonormal_basis(fdom, kappa, 1);
        let n_out = fdom.normal();
        let t = tau[loc];
        let exact_fq = fdom.quad(2 * kappa + 2);
        for (x, wq) in exact_fq.points.iter().zip(&exact_fq.weights) {
            let muv = mu.scalar_values(x);
            let uv = u_basis.vec_values(x);
            for i in 0..mu.dim {
                for (j, uvj) in uv.iter().enumerate() {
                    a[(row0 + i, j)] += wq * muv[i] * uvj.dot(&n_out);
                }
            }
            // The polynomial part of the data: τ <Π_{κ-1} p, μ> moves to
            // the right-hand side with the exact rule.
            for i in 0..mu.dim {
                b[row0 + i] -= wq * muv[i] * t * p_low.eval(x);
            }
        }
        let data_fq = data_quad(fdom, data_degree(kappa));
        for (x, wq) in data_fq.points.iter().zip(&data_fq.weights) {
            let muv = mu.scalar_values(x);
            let rhs = u(x).dot(&n_out) + t * p(x);
            for i in 0..mu.dim {
                b[row0 + i] += wq * muv[i] * rhs;
            }
        }
        row0 += mu.dim;
    }
    assert_eq!(row0, nu);
    assert_eq!(nu, 3 * d_tet(kappa));

    let coeffs = la::solve_full_piv_vec(&a, &b)?;
    residual_check(&a, &coeffs, &b)?;
    Ok(VecField { basis: u_basis, coeffs })
}

/// The variant's designated projection triple on a simplex element, with
/// the normal stabilization taken from `stab` and multiplied by `sign`
/// (+1 for the primal projection, -1 for its dual counterpart).
pub fn designated_triple(
    es: &ElementSpaces,
    exact: &ExactFields,
    stab: &StabilizationSpec,
    sign: f64,
) -> Result<ProjectedTriple, ProjectionError> {
    assert!(sign == 1.0 || sign == -1.0);
    let verts = match &es.tet {
        BasisDomain::Tet { verts } => *verts,
        BasisDomain::Face { .. } => unreachable!("element domain is a tet"),
    };
    let tau: [f64; 4] = std::array::from_fn(|i| sign * stab.tau_n[i]);

    let w = match es.variant {
        Variant::Std | Variant::B | Variant::H => l2_project_vec(&es.w, exact.w),
        Variant::BPlus | Variant::HPlus => {
            let nxw = |f: usize, x: &Vector3<f64>| es.faces[f].outward_normal().cross(&(exact.w)(x));
            curlplus_project(es, exact.w, &nxw)?
        }
    };
    let (u, p) = match es.variant {
        Variant::Std => (l2_project_vec(&es.v, exact.u), l2_project_scalar(&es.q, exact.p)),
        Variant::B | Variant::BPlus => (
            bdmh_project(&verts, exact.u, exact.p, es.k + 1, &tau)?,
            l2_project_scalar(&es.q, exact.p),
        ),
        Variant::H | Variant::HPlus => hdg_project(&verts, exact.u, exact.p, es.k + 1, &tau)?,
    };
    Ok(ProjectedTriple { w, u, p })
}

/// The two boundary remainders of a projected triple, as face-space
/// coefficients. `sign` (+1/-1) selects `±τ` in both definitions.
pub fn boundary_remainders(
    es: &ElementSpaces,
    triple: &ProjectedTriple,
    exact: &ExactFields,
    stab: &StabilizationSpec,
    sign: f64,
) -> BoundaryRemainder {
    assert!(sign == 1.0 || sign == -1.0);
    let mut delta_t = Vec::with_capacity(es.faces.len());
    let mut delta_n = Vec::with_capacity(es.faces.len());
    for (f, face) in es.faces.iter().enumerate() {
        let n_out = face.outward_normal();
        let c_nxpw = face_project_pn(&face.n_space, &|x: &Vector3<f64>| n_out.cross(&triple.w.eval(x)));
        let c_pn_nxw = face_project_pn(&face.n_space, &|x: &Vector3<f64>| n_out.cross(&(exact.w)(x)));
        let c_pn_pu = face_project_pn(&face.n_space, &|x: &Vector3<f64>| triple.u.eval(x));
        let c_pn_u = face_project_pn(&face.n_space, exact.u);
        delta_t.push(&c_nxpw - &c_pn_nxw + (&c_pn_pu - &c_pn_u) * (sign * stab.tau_t[f]));

        let c_pun = face_project_pm(&face.m_space, &|x: &Vector3<f64>| triple.u.eval(x).dot(&n_out));
        let c_pm_un = face_project_pm(&face.m_space, &|x: &Vector3<f64>| (exact.u)(x).dot(&n_out));
        let c_pp = face_project_pm(&face.m_space, &|x: &Vector3<f64>| triple.p.eval(x));
        let c_pm_p = face_project_pm(&face.m_space, exact.p);
        delta_n.push(&c_pun - &c_pm_un + (&c_pp - &c_pm_p) * (sign * stab.tau_n[f]));
    }
    BoundaryRemainder { delta_t, delta_n, sign }
}

/// Max moment residuals of the three projection-assumption conditions:
///
/// 1. `(Πw - w, curl v)_K - <n x w - P_N(n x w), v>_{∂K}` over `v` in the
///    `V(K)` basis;
/// 2. `(Πu - u, t)_K / |t|` over `t` in curls of the `W(K)` basis and
///    gradients of the `Q(K)` basis;
/// 3. `(Πp - p, div v)_K / |div v|` over `v` in the `V(K)` basis.
pub fn assumption_residual(
    es: &ElementSpaces,
    triple: &ProjectedTriple,
    exact: &ExactFields,
) -> [f64; 3] {
    let kmax = es.v.k.max(es.w.k).max(es.q.k);
    let exact_quad = es.tet.quad(2 * (kmax + 1) + 2);
    let dataq = data_quad(&es.tet, data_degree(kmax));
    let nv = es.v.dim;
    let nw = es.w.dim;
    let nq = es.q.dim;

    // Volume moments. Polynomial parts with the exact rule, data parts
    // with the data rule.
    let mut m1 = vec![0.0_f64; nv];
    let mut m2 = vec![0.0_f64; nw + nq];
    let mut t2_norm2 = vec![0.0_f64; nw + nq];
    let mut m3 = vec![0.0_f64; nv];
    let mut t3_norm2 = vec![0.0_f64; nv];
    for (x, wq) in exact_quad.points.iter().zip(&exact_quad.weights) {
        let pw = triple.w.eval(x);
        let pu = triple.u.eval(x);
        let pp = triple.p.eval(x);
        let vcurls = es.v.curls(x);
        let vdivs = es.v.divs(x);
        for i in 0..nv {
            m1[i] += wq * pw.dot(&vcurls[i]);
            m3[i] += wq * pp * vdivs[i];
            t3_norm2[i] += wq * vdivs[i] * vdivs[i];
        }
        let wcurls = es.w.curls(x);
        let qgrads = es.q.scalar_grads(x);
        for i in 0..nw {
            m2[i] += wq * pu.dot(&wcurls[i]);
            t2_norm2[i] += wq * wcurls[i].norm_squared();
        }
        for i in 0..nq {
            m2[nw + i] += wq * pu.dot(&qgrads[i]);
            t2_norm2[nw + i] += wq * qgrads[i].norm_squared();
        }
    }
    for (x, wq) in dataq.points.iter().zip(&dataq.weights) {
        let wx = (exact.w)(x);
        let ux = (exact.u)(x);
        let px = (exact.p)(x);
        let vcurls = es.v.curls(x);
        let vdivs = es.v.divs(x);
        for i in 0..nv {
            m1[i] -= wq * wx.dot(&vcurls[i]);
            m3[i] -= wq * px * vdivs[i];
        }
        let wcurls = es.w.curls(x);
        let qgrads = es.q.scalar_grads(x);
        for i in 0..nw {
            m2[i] -= wq * ux.dot(&wcurls[i]);
        }
        for i in 0..nq {
            m2[nw + i] -= wq * ux.dot(&qgrads[i]);
        }
    }

    // Boundary term of the first condition.
    for face in &es.faces {
        let n_out = face.outward_normal();
        let nxw = |x: &Vector3<f64>| n_out.cross(&(exact.w)(x));
        let pn = face_project_pn(&face.n_space, &nxw);
        let fq = data_quad(&face.dom, data_degree(kmax));
        for (x, wq) in fq.points.iter().zip(&fq.weights) {
            let nvals = face.n_space.vec_values(x);
            let mut defect = nxw(x);
            for (i, nv_) in nvals.iter().enumerate() {
                defect -= nv_ * pn[i];
            }
            for (i, v) in es.v.vec_values(x).iter().enumerate() {
                m1[i] -= wq * defect.dot(v);
            }
        }
    }

    let r1 = m1.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()));
    let r2 = m2
        .iter()
        .zip(&t2_norm2)
        .map(|(&m, &n2)| if n2.sqrt() > 1e-12 { m.abs() / n2.sqrt() } else { 0.0 })
        .fold(0.0_f64, f64::max);
    let r3 = m3
        .iter()
        .zip(&t3_norm2)
        .map(|(&m, &n2)| if n2.sqrt() > 1e-12 { m.abs() / n2.sqrt() } else { 0.0 })
        .fold(0.0_f64, f64::max);
    [r1, r2, r3]
}

/// Residuals `|LHS - RHS|` of the two weak-commutativity identities,
/// maximized over the `V(K)` and `Q(K)` bases:
///
/// 1. `(curl(Πw - w), v)_K ± <τ_t (P_N Πu - P_N u), v>_{∂K}
///     = <δ_t, v>_{∂K}`;
/// 2. `(div(Πu - u), q)_K ± <τ_n (Πp - P_M p), q>_{∂K} = <δ_n, q>_{∂K}`.
///
/// The sign is taken from the remainder.
pub fn weak_commutativity_residual(
    es: &ElementSpaces,
    triple: &ProjectedTriple,
    exact: &ExactFields,
    rem: &BoundaryRemainder,
    stab: &StabilizationSpec,
) -> [f64; 2] {
    let sign = rem.sign;
    let kmax = es.v.k.max(es.w.k).max(es.q.k);
    let exact_quad = es.tet.quad(2 * (kmax + 1) + 2);
    let dataq = data_quad(&es.tet, data_degree(kmax));
    let nv = es.v.dim;
    let nq = es.q.dim;

    let mut lhs1 = vec![0.0_f64; nv];
    let mut rhs1 = vec![0.0_f64; nv];
    let mut lhs2 = vec![0.0_f64; nq];
    let mut rhs2 = vec![0.0_f64; nq];

    for (x, wq) in exact_quad.points.iter().zip(&exact_quad.weights) {
        let cw = triple.w.curl(x);
        let du = triple.u.div(x);
        let vv = es.v.vec_values(x);
        for i in 0..nv {
            lhs1[i] += wq * cw.dot(&vv[i]);
        }
        let qv = es.q.scalar_values(x);
        for i in 0..nq {
            lhs2[i] += wq * du * qv[i];
        }
    }
    for (x, wq) in dataq.points.iter().zip(&dataq.weights) {
        let cw = (exact.curl_w)(x);
        let du = (exact.div_u)(x);
        let vv = es.v.vec_values(x);
        for i in 0..nv {
            lhs1[i] -= wq * cw.dot(&vv[i]);
        }
        let qv = es.q.scalar_values(x);
        for i in 0..nq {
            lhs2[i] -= wq * du * qv[i];
        }
    }

    for (f, face) in es.faces.iter().enumerate() {
        // Face polynomials throughout: exact face rule. The trace of Πp is
        // represented through its M(F) coefficients — lossless because
        // traces of Q(K) lie in M(F) — so the stabilization terms shared
        // between the two sides cancel in coefficient space.
        let fq = face.dom.quad(2 * (kmax + 2) + 2);
        let c_pn_pu = face_project_pn(&face.n_space, &|x: &Vector3<f64>| triple.u.eval(x));
        let c_pn_u = face_project_pn(&face.n_space, exact.u);
        let c_pp = face_project_pm(&face.m_space, &|x: &Vector3<f64>| triple.p.eval(x));
        let c_pm_p = face_project_pm(&face.m_space, exact.p);
        for (x, wq) in fq.points.iter().zip(&fq.weights) {
            let nvals = face.n_space.vec_values(x);
            let mut stab_t = Vector3::zeros();
            let mut dt = Vector3::zeros();
            for (i, nv_) in nvals.iter().enumerate() {
                stab_t += nv_ * (c_pn_pu[i] - c_pn_u[i]);
                dt += nv_ * rem.delta_t[f][i];
            }
            let vv = es.v.vec_values(x);
            for i in 0..nv {
                lhs1[i] += wq * sign * stab.tau_t[f] * stab_t.dot(&vv[i]);
                rhs1[i] += wq * dt.dot(&vv[i]);
            }
            let mvals = face.m_space.scalar_values(x);
            let mut stab_n = 0.0;
            let mut dn = 0.0;
            for i in 0..face.m_space.dim {
                stab_n += mvals[i] * (c_pp[i] - c_pm_p[i]);
                dn += mvals[i] * rem.delta_n[f][i];
            }
            let qv = es.q.scalar_values(x);
            for i in 0..nq {
                lhs2[i] += wq * sign * stab.tau_n[f] * stab_n * qv[i];
                rhs2[i] += wq * dn * qv[i];
            }
        }
    }

    let r1 = lhs1
        .iter()
        .zip(&rhs1)
        .map(|(&l, &r)| (l - r).abs())
        .fold(0.0_f64, f64::max);
    let r2 = lhs2
        .iter()
        .zip(&rhs2)
        .map(|(&l, &r)| (l - r).abs())
        .fold(0.0_f64, f64::max);
    [r1, r2]
}

/// Dimensions of the curl-based projection's three test blocks, in the
/// order (curl range, higher curl complement, enriched complement). Their
/// sum is the system size `3 d_k`.
pub fn curlplus_block_dims(domain: &BasisDomain, k: usize) -> (usize, usize, usize) {
    let na = if k >= 1 { curl_range_subspace(domain, k).dim } else { 0 };
    let nb = orth_complement(&curl_range_subspace(domain, k + 1), &orthonormal_basis(domain, k, 3)).dim;
    let nc = orth_complement(&pk_plus_grad_subspace(domain, k), &orthonormal_basis(domain, k + 1, 3)).dim;
    (na, nb, nc)
}
