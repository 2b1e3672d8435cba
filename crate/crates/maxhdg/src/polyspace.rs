//! Polynomial spaces and constrained subspaces on tetrahedra and faces.
//!
//! Everything is represented in terms of L²-orthonormal bases built from
//! scaled centroid monomials by modified Gram-Schmidt (one
//! reorthogonalization pass) against the element/face quadrature inner
//! product. Constrained subspaces (curl ranges, orthogonal complements,
//! Nédélec spaces, enriched trace spaces) are coefficient matrices over an
//! ambient orthonormal basis, extracted from moment matrices by SVD with a
//! relative rank threshold.
//!
//! The five scheme variants share the local field spaces `W(K)`, `V(K)`,
//! `Q(K)` (full vector/scalar polynomial spaces of variant-dependent
//! degree) and per-face trace spaces `N(F)` (tangential vectors) and `M(F)`
//! (scalars). Their compatibility conditions — curls and divergences of `V`
//! landing in `W` and `Q`, `curl W + grad Q` landing in `V`, tangential
//! traces of `W` in `N`, and scalar/normal traces in `M` — are checked
//! numerically by [`check_inclusions`].

use crate::la::{self, LaError};
use crate::mesh::{canonical_face_frame, Mesh};
use crate::quadrature::{make_quadrature, map_to_tet, map_to_tri, PhysQuad, RefDomain};
use crate::tol;
use nalgebra::{DMatrix, DVector, Vector3};

/// Highest scheme degree supported.
pub const K_MAX: usize = 3;

/// `dim P_k` on a tetrahedron.
pub fn d_tet(k: usize) -> usize {
    (k + 1) * (k + 2) * (k + 3) / 6
}

/// `dim P_k` on a triangle.
pub fn d_face(k: usize) -> usize {
    (k + 1) * (k + 2) / 2
}

/// Scheme variant. `Std` is the equal-order baseline; the other four share
/// `W = P_k^3`, `V = P_{k+1}^3`, `M = P_{k+1}` and differ in `Q` and `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Equal-order: all spaces of degree `k`.
    Std,
    /// `Q = P_k`, `N = P_{k+1}^t`; normal stabilization may vanish.
    B,
    /// `Q = P_{k+1}`, `N = P_{k+1}^t`; requires normal stabilization.
    H,
    /// `Q = P_k`, reduced traces `N = P_k^t + grad_F(homog. P_{k+2})`.
    BPlus,
    /// `Q = P_{k+1}`, reduced traces; requires normal stabilization.
    HPlus,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Std, Variant::B, Variant::H, Variant::BPlus, Variant::HPlus];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Std => "std",
            Variant::B => "B",
            Variant::H => "H",
            Variant::BPlus => "Bplus",
            Variant::HPlus => "Hplus",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "std" | "STD" => Some(Variant::Std),
            "B" | "b" => Some(Variant::B),
            "H" | "h" => Some(Variant::H),
            "Bplus" | "bplus" | "B+" | "b+" => Some(Variant::BPlus),
            "Hplus" | "hplus" | "H+" | "h+" => Some(Variant::HPlus),
            _ => None,
        }
    }

    /// Reduced (enriched-gradient) trace space?
    pub fn reduced_traces(self) -> bool {
        matches!(self, Variant::BPlus | Variant::HPlus)
    }

    /// Must the normal stabilization be nonzero on each element?
    pub fn requires_tau_n(self) -> bool {
        matches!(self, Variant::Std | Variant::H | Variant::HPlus)
    }

    pub fn w_degree(self, k: usize) -> usize {
        k
    }

    pub fn v_degree(self, k: usize) -> usize {
        match self {
            Variant::Std => k,
            _ => k + 1,
        }
    }

    pub fn q_degree(self, k: usize) -> usize {
        match self {
            Variant::Std | Variant::B | Variant::BPlus => k,
            Variant::H | Variant::HPlus => k + 1,
        }
    }

    pub fn m_degree(self, k: usize) -> usize {
        match self {
            Variant::Std => k,
            _ => k + 1,
        }
    }

    /// Dimension of `N(F)`.
    pub fn n_dim(self, k: usize) -> usize {
        match self {
            Variant::Std => (k + 1) * (k + 2),
            Variant::B | Variant::H => (k + 2) * (k + 3),
            Variant::BPlus | Variant::HPlus => (k + 1) * (k + 2) + (k + 3),
        }
    }
}

/// Geometric support of a basis: a tetrahedron or a planar triangular face
/// with an orthonormal frame.
#[derive(Debug, Clone)]
pub enum BasisDomain {
    Tet {
        verts: [Vector3<f64>; 4],
    },
    Face {
        verts: [Vector3<f64>; 3],
        normal: Vector3<f64>,
        t1: Vector3<f64>,
        t2: Vector3<f64>,
    },
}

impl BasisDomain {
    pub fn tet(mesh: &Mesh, e: usize) -> BasisDomain {
        BasisDomain::Tet { verts: mesh.tet_vertices(e) }
    }

    /// Face of a mesh in its canonical (global) frame.
    pub fn face(mesh: &Mesh, f: usize) -> BasisDomain {
        let face = &mesh.faces[f];
        BasisDomain::Face {
            verts: mesh.face_vertices(f),
            normal: face.normal,
            t1: face.t1,
            t2: face.t2,
        }
    }

    pub fn from_tet(verts: [Vector3<f64>; 4]) -> BasisDomain {
        BasisDomain::Tet { verts }
    }

    /// Local face `loc` (opposite vertex `loc`) of a standalone tet, with
    /// outward normal and the canonical frame.
    pub fn tet_face(verts: &[Vector3<f64>; 4], loc: usize) -> BasisDomain {
        let pts: Vec<Vector3<f64>> = (0..4).filter(|&i| i != loc).map(|i| verts[i]).collect();
        let pts = [pts[0], pts[1], pts[2]];
        let mut normal = (pts[1] - pts[0]).cross(&(pts[2] - pts[0])).normalize();
        let centroid = (pts[0] + pts[1] + pts[2]) / 3.0;
        if normal.dot(&(centroid - verts[loc])) < 0.0 {
            normal = -normal;
        }
        let (t1, t2) = canonical_face_frame(pts, &normal);
        BasisDomain::Face { verts: pts, normal, t1, t2 }
    }

    pub fn is_tet(&self) -> bool {
        matches!(self, BasisDomain::Tet { .. })
    }

    pub fn centroid(&self) -> Vector3<f64> {
        match self {
            BasisDomain::Tet { verts } => (verts[0] + verts[1] + verts[2] + verts[3]) / 4.0,
            BasisDomain::Face { verts, .. } => (verts[0] + verts[1] + verts[2]) / 3.0,
        }
    }

    pub fn diameter(&self) -> f64 {
        let pts: &[Vector3<f64>] = match self {
            BasisDomain::Tet { verts } => verts,
            BasisDomain::Face { verts, .. } => verts,
        };
        let mut h: f64 = 0.0;
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                h = h.max((pts[i] - pts[j]).norm());
            }
        }
        h
    }

    pub fn measure(&self) -> f64 {
        match self {
            BasisDomain::Tet { verts } => crate::quadrature::tet_signed_volume(verts).abs(),
            BasisDomain::Face { verts, .. } => crate::quadrature::tri_area(verts),
        }
    }

    /// Stored unit normal (faces only).
    pub fn normal(&self) -> Vector3<f64> {
        match self {
            BasisDomain::Face { normal, .. } => *normal,
            BasisDomain::Tet { .. } => panic!("normal() on a tet domain"),
        }
    }

    /// Tangent frame (faces only).
    pub fn frame(&self) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            BasisDomain::Face { t1, t2, .. } => (*t1, *t2),
            BasisDomain::Tet { .. } => panic!("frame() on a tet domain"),
        }
    }

    /// Quadrature of the given polynomial exactness on this domain.
    pub fn quad(&self, degree: usize) -> PhysQuad {
        match self {
            BasisDomain::Tet { verts } => map_to_tet(&make_quadrature(RefDomain::Tet, degree), verts),
            BasisDomain::Face { verts, .. } => {
                map_to_tri(&make_quadrature(RefDomain::Tri, degree), verts)
            }
        }
    }
}

fn graded_exponents(k: usize, two_vars: bool) -> Vec<[u32; 3]> {
    let mut exps = Vec::new();
    for deg in 0..=k as u32 {
        for a in (0..=deg).rev() {
            if two_vars {
                exps.push([a, deg - a, 0]);
            } else {
                for b in (0..=deg - a).rev() {
                    exps.push([a, b, deg - a - b]);
                }
            }
        }
    }
    exps
}

fn homogeneous_exponents(k: usize, two_vars: bool) -> Vec<[u32; 3]> {
    graded_exponents(k, two_vars)
        .into_iter()
        .filter(|e| e[0] + e[1] + e[2] == k as u32)
        .collect()
}

/// L²-orthonormal polynomial basis on a tet or face.
///
/// Scalar basis functions are linear combinations (columns of `coeff`) of
/// monomials in centroid-centered, diameter-scaled coordinates. A basis
/// with `comps > 1` consists of `comps` copies of the scalar basis times
/// the component directions (global axes on tets, the tangent frame on
/// faces), indexed component-major: basis `j = c * scalar_dim + i`.
#[derive(Debug, Clone)]
pub struct PolyBasis {
    pub domain: BasisDomain,
    pub k: usize,
    /// 1 = scalar, 3 = vector on a tet, 2 = tangential vector on a face.
    pub comps: usize,
    /// Total basis size, `comps * scalar_dim`.
    pub dim: usize,
    exps: Vec<[u32; 3]>,
    /// monomial-to-orthonormal coefficients, `exps.len() x scalar_dim`.
    coeff: DMatrix<f64>,
    origin: Vector3<f64>,
    scale: f64,
}

/// Orthonormal basis of the full polynomial space of degree `k` with
/// `comps` components (1 or 3 on tets; 1 or 2 tangential on faces).
///
/// # Panics
/// If Gram-Schmidt loses rank (broken geometry) or `k > K_MAX + 2`.
pub fn orthonormal_basis(domain: &BasisDomain, k: usize, comps: usize) -> PolyBasis {
    assert!(k <= K_MAX + 2, "degree {k} beyond supported range");
    match domain {
        BasisDomain::Tet { .. } => assert!(comps == 1 || comps == 3),
        BasisDomain::Face { .. } => assert!(comps == 1 || comps == 2),
    }
    let exps = graded_exponents(k, !domain.is_tet());
    let origin = domain.centroid();
    let scale = domain.diameter();
    let quad = domain.quad(2 * k + 2);
    let nmono = exps.len();
    let mut vals: DMatrix<f64> = DMatrix::zeros(quad.points.len(), nmono);
    for (q, x) in quad.points.iter().enumerate() {
        let m = mono_values_at(&exps, origin, scale, domain, x);
        for j in 0..nmono {
            vals[(q, j)] = m[j];
        }
    }
    let coeff = la::mgs_orthonormalize(&mut vals, &quad.weights)
        .unwrap_or_else(|e| panic!("orthonormalization failed on degree-{k} basis: {e}"));
    PolyBasis {
        domain: domain.clone(),
        k,
        comps,
        dim: comps * nmono,
        exps,
        coeff,
        origin,
        scale,
    }
}

fn mono_values_at(
    exps: &[[u32; 3]],
    origin: Vector3<f64>,
    scale: f64,
    domain: &BasisDomain,
    x: &Vector3<f64>,
) -> DVector<f64> {
    let xi = local_coords(domain, origin, scale, x);
    DVector::from_iterator(
        exps.len(),
        exps.iter().map(|e| xi[0].powi(e[0] as i32) * xi[1].powi(e[1] as i32) * xi[2].powi(e[2] as i32)),
    )
}

fn local_coords(domain: &BasisDomain, origin: Vector3<f64>, scale: f64, x: &Vector3<f64>) -> [f64; 3] {
    let d = x - origin;
    match domain {
        BasisDomain::Tet { .. } => [d.x / scale, d.y / scale, d.z / scale],
        BasisDomain::Face { t1, t2, .. } => [d.dot(t1) / scale, d.dot(t2) / scale, 0.0],
    }
}

impl PolyBasis {
    pub fn scalar_dim(&self) -> usize {
        self.coeff.ncols()
    }

    /// Directions multiplying the scalar blocks (length `comps`).
    pub fn comp_dirs(&self) -> Vec<Vector3<f64>> {
        match (&self.domain, self.comps) {
            (_, 1) => vec![],
            (BasisDomain::Tet { .. }, 3) => {
                vec![Vector3::x(), Vector3::y(), Vector3::z()]
            }
            (BasisDomain::Face { t1, t2, .. }, 2) => vec![*t1, *t2],
            _ => unreachable!(),
        }
    }

    fn mono_values(&self, x: &Vector3<f64>) -> DVector<f64> {
        mono_values_at(&self.exps, self.origin, self.scale, &self.domain, x)
    }

    /// Local partial derivatives `d/dxi_c` of all monomials.
    fn mono_partials(&self, x: &Vector3<f64>) -> [DVector<f64>; 3] {
        let xi = local_coords(&self.domain, self.origin, self.scale, x);
        let n = self.exps.len();
        let mut out = [DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)];
        for (j, e) in self.exps.iter().enumerate() {
            for c in 0..3 {
                if e[c] == 0 {
                    continue;
                }
                let mut v = e[c] as f64;
                for a in 0..3 {
                    let p = if a == c { e[a] - 1 } else { e[a] };
                    v *= xi[a].powi(p as i32);
                }
                out[c][j] = v;
            }
        }
        out
    }

    /// Values of the scalar basis functions at `x`.
    pub fn scalar_values(&self, x: &Vector3<f64>) -> DVector<f64> {
        self.coeff.tr_mul(&self.mono_values(x))
    }

    /// Global-coordinate gradients of the scalar basis functions at `x`.
    pub fn scalar_grads(&self, x: &Vector3<f64>) -> Vec<Vector3<f64>> {
        let p = self.mono_partials(x);
        let d = [
            self.coeff.tr_mul(&p[0]) / self.scale,
            self.coeff.tr_mul(&p[1]) / self.scale,
            self.coeff.tr_mul(&p[2]) / self.scale,
        ];
        let n = self.scalar_dim();
        (0..n)
            .map(|i| match &self.domain {
                BasisDomain::Tet { .. } => Vector3::new(d[0][i], d[1][i], d[2][i]),
                BasisDomain::Face { t1, t2, .. } => t1 * d[0][i] + t2 * d[1][i],
            })
            .collect()
    }

    /// Values of the vector basis fields at `x` (`comps` 2 or 3).
    pub fn vec_values(&self, x: &Vector3<f64>) -> Vec<Vector3<f64>> {
        let s = self.scalar_values(x);
        let dirs = self.comp_dirs();
        let mut out = Vec::with_capacity(self.dim);
        for dir in &dirs {
            for i in 0..s.len() {
                out.push(dir * s[i]);
            }
        }
        out
    }

    /// Curls of the vector basis fields at `x` (tets, `comps == 3`).
    pub fn curls(&self, x: &Vector3<f64>) -> Vec<Vector3<f64>> {
        assert!(self.comps == 3 && self.domain.is_tet());
        let grads = self.scalar_grads(x);
        let mut out = Vec::with_capacity(self.dim);
        for dir in [Vector3::x(), Vector3::y(), Vector3::z()] {
            for g in &grads {
                // curl(phi e_c) = grad(phi) x e_c
                out.push(g.cross(&dir));
            }
        }
        out
    }

    /// Divergences of the vector basis fields at `x` (tets, `comps == 3`).
    pub fn divs(&self, x: &Vector3<f64>) -> Vec<f64> {
        assert!(self.comps == 3 && self.domain.is_tet());
        let grads = self.scalar_grads(x);
        let mut out = Vec::with_capacity(self.dim);
        for c in 0..3 {
            for g in &grads {
                out.push(g[c]);
            }
        }
        out
    }

    /// Moments `int f . phi_j` of a vector field against the basis.
    pub fn vec_moments(&self, quad: &PhysQuad, mut f: impl FnMut(&Vector3<f64>) -> Vector3<f64>) -> DVector<f64> {
        let mut m: DVector<f64> = DVector::zeros(self.dim);
        for (x, w) in quad.points.iter().zip(&quad.weights) {
            let fv = f(x);
            let vals = self.vec_values(x);
            for (j, v) in vals.iter().enumerate() {
                m[j] += w * v.dot(&fv);
            }
        }
        m
    }

    /// Moments `int f phi_j` of a scalar field against the basis.
    pub fn scalar_moments(&self, quad: &PhysQuad, mut f: impl FnMut(&Vector3<f64>) -> f64) -> DVector<f64> {
        let mut m: DVector<f64> = DVector::zeros(self.scalar_dim());
        for (x, w) in quad.points.iter().zip(&quad.weights) {
            let fv = f(x);
            let vals = self.scalar_values(x);
            for j in 0..vals.len() {
                m[j] += w * vals[j] * fv;
            }
        }
        m
    }
}

/// Subspace of an ambient orthonormal [`PolyBasis`]: columns of `coeff`
/// are the subspace basis vectors in ambient coordinates, orthonormal.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    pub ambient: PolyBasis,
    /// `ambient.dim x dim`, orthonormal columns.
    pub coeff: DMatrix<f64>,
    pub dim: usize,
}

impl SubspaceBasis {
    /// The whole ambient space as a subspace.
    pub fn identity(ambient: PolyBasis) -> SubspaceBasis {
        let d = ambient.dim;
        SubspaceBasis { ambient, coeff: DMatrix::identity(d, d), dim: d }
    }

    fn from_coords(ambient: PolyBasis, coeff: DMatrix<f64>) -> SubspaceBasis {
        let dim = coeff.ncols();
        SubspaceBasis { ambient, coeff, dim }
    }

    pub fn vec_values(&self, x: &Vector3<f64>) -> Vec<Vector3<f64>> {
        let amb = self.ambient.vec_values(x);
        (0..self.dim)
            .map(|j| {
                let mut v = Vector3::zeros();
                for (i, a) in amb.iter().enumerate() {
                    v += a * self.coeff[(i, j)];
                }
                v
            })
            .collect()
    }

    pub fn scalar_values(&self, x: &Vector3<f64>) -> DVector<f64> {
        let amb = self.ambient.scalar_values(x);
        self.coeff.tr_mul(&amb)
    }

    /// Curls of the subspace columns (tet domains only).
    pub fn curls(&self, x: &Vector3<f64>) -> Vec<Vector3<f64>> {
        let amb = self.ambient.curls(x);
        (0..self.dim)
            .map(|j| {
                let mut v = Vector3::zeros();
                for (i, a) in amb.iter().enumerate() {
                    v += a * self.coeff[(i, j)];
                }
                v
            })
            .collect()
    }

    /// Moments of a vector field against the subspace columns.
    pub fn vec_moments(&self, quad: &PhysQuad, f: impl FnMut(&Vector3<f64>) -> Vector3<f64>) -> DVector<f64> {
        self.coeff.tr_mul(&self.ambient.vec_moments(quad, f))
    }
}

/// Orthonormalizes coordinate columns (plain Euclidean inner product).
fn orthonormalize_coords(mut cols: DMatrix<f64>) -> Result<DMatrix<f64>, LaError> {
    let ones = vec![1.0; cols.nrows()];
    let c = la::mgs_orthonormalize(&mut cols, &ones)?;
    let _ = c;
    Ok(cols)
}

/// Basis of polynomials of *exact* degree `k` (homogeneous about `origin`,
/// default the centroid), inside the degree-`k` ambient space.
pub fn homogeneous_subspace(
    domain: &BasisDomain,
    k: usize,
    origin: Option<Vector3<f64>>,
    comps: usize,
) -> SubspaceBasis {
    assert!(k >= 1);
    let ambient = orthonormal_basis(domain, k, comps);
    let coords = homogeneous_coords(&ambient, k, origin.unwrap_or_else(|| domain.centroid()));
    let coords = orthonormalize_coords(coords).expect("homogeneous subspace rank loss");
    SubspaceBasis::from_coords(ambient, coords)
}

/// Coordinates (in `ambient`) of the monomials of exact degree `k` about
/// `origin`, replicated per component. Columns are not orthonormalized.
fn homogeneous_coords(ambient: &PolyBasis, k: usize, origin: Vector3<f64>) -> DMatrix<f64> {
    let two_vars = !ambient.domain.is_tet();
    let hexps = homogeneous_exponents(k, two_vars);
    let quad = ambient.domain.quad(ambient.k + k + 2);
    let scale = ambient.domain.diameter();
    let frame = if two_vars { Some(ambient.domain.frame()) } else { None };
    let nsc = ambient.scalar_dim();
    let mut scalar: DMatrix<f64> = DMatrix::zeros(nsc, hexps.len());
    for (x, w) in quad.points.iter().zip(&quad.weights) {
        let d = x - origin;
        let xi = match frame {
            Some((t1, t2)) => [d.dot(&t1) / scale, d.dot(&t2) / scale, 0.0],
            None => [d.x / scale, d.y / scale, d.z / scale],
        };
        let vals = ambient.scalar_values(x);
        for (j, e) in hexps.iter().enumerate() {
            let m = xi[0].powi(e[0] as i32) * xi[1].powi(e[1] as i32) * xi[2].powi(e[2] as i32);
            for i in 0..nsc {
                scalar[(i, j)] += w * vals[i] * m;
            }
        }
    }
    // Replicate per component block-diagonally.
    let comps = ambient.comps.max(1);
    if comps == 1 {
        scalar
    } else {
        let mut full: DMatrix<f64> = DMatrix::zeros(ambient.dim, comps * hexps.len());
        for c in 0..comps {
            full.view_mut((c * nsc, c * hexps.len()), (nsc, hexps.len()))
                .copy_from(&scalar);
        }
        full
    }
}

/// Range of the curl over `P_k(K)^3`, as a subspace of `P_{k-1}(K)^3`.
/// Dimension `3 d_k - (d_{k+1} - 1)`.
pub fn curl_range_subspace(domain: &BasisDomain, k: usize) -> SubspaceBasis {
    assert!(k >= 1 && domain.is_tet());
    let ambient = orthonormal_basis(domain, k - 1, 3);
    let source = orthonormal_basis(domain, k, 3);
    let quad = domain.quad(2 * k + 2);
    let mut coords: DMatrix<f64> = DMatrix::zeros(ambient.dim, source.dim);
    for (x, w) in quad.points.iter().zip(&quad.weights) {
        let avals = ambient.vec_values(x);
        let curls = source.curls(x);
        for (j, cj) in curls.iter().enumerate() {
            for (i, ai) in avals.iter().enumerate() {
                coords[(i, j)] += w * ai.dot(cj);
            }
        }
    }
    let basis = la::svd_range(&coords, tol::SVD_RANK_REL);
    let expect = 3 * d_tet(k) - (d_tet(k + 1) - 1);
    assert_eq!(basis.ncols(), expect, "curl range dimension mismatch at k={k}");
    SubspaceBasis::from_coords(ambient, basis)
}

/// Orthogonal complement of `sub` inside `ambient` (which may be a larger
/// space than `sub.ambient`).
///
/// # Panics
/// If `sub` is not contained in the span of `ambient` (projection residual
/// above 1e-8).
pub fn orth_complement(sub: &SubspaceBasis, ambient: &PolyBasis) -> SubspaceBasis {
    assert_eq!(sub.ambient.comps, ambient.comps, "component count mismatch");
    let rep = represent_in(sub, ambient);
    let null = la::svd_nullspace(&rep.transpose(), tol::SVD_RANK_REL);
    assert_eq!(
        null.ncols(),
        ambient.dim - sub.dim,
        "orthogonal complement dimension mismatch"
    );
    SubspaceBasis::from_coords(ambient.clone(), null)
}

/// Coordinates of `sub`'s columns in a (possibly different) ambient basis,
/// with a containment check.
fn represent_in(sub: &SubspaceBasis, ambient: &PolyBasis) -> DMatrix<f64> {
    let deg = sub.ambient.k.max(ambient.k);
    let quad = ambient.domain.quad(2 * deg + 2);
    let mut rep: DMatrix<f64> = DMatrix::zeros(ambient.dim, sub.dim);
    if ambient.comps == 1 {
        for (x, w) in quad.points.iter().zip(&quad.weights) {
            let avals = ambient.scalar_values(x);
            let svals = sub.scalar_values(x);
            for j in 0..sub.dim {
                for i in 0..ambient.dim {
                    rep[(i, j)] += w * avals[i] * svals[j];
                }
            }
        }
    } else {
        for (x, w) in quad.points.iter().zip(&quad.weights) {
            let avals = ambient.vec_values(x);
            let svals = sub.vec_values(x);
            for (j, s) in svals.iter().enumerate() {
                for (i, a) in avals.iter().enumerate() {
                    rep[(i, j)] += w * a.dot(s);
                }
            }
        }
    }
    // Containment check: evaluate the residual function pointwise (no
    // norm-squared cancellation) and integrate.
    let mut resid2 = vec![0.0_f64; sub.dim];
    for (x, w) in quad.points.iter().zip(&quad.weights) {
        if ambient.comps == 1 {
            let avals = ambient.scalar_values(x);
            let svals = sub.scalar_values(x);
            for j in 0..sub.dim {
                let mut r = svals[j];
                for i in 0..ambient.dim {
                    r -= rep[(i, j)] * avals[i];
                }
                resid2[j] += w * r * r;
            }
        } else {
            let avals = ambient.vec_values(x);
            let svals = sub.vec_values(x);
            for (j, s) in svals.iter().enumerate() {
                let mut r = *s;
                for (i, a) in avals.iter().enumerate() {
                    r -= a * rep[(i, j)];
                }
                resid2[j] += w * r.norm_squared();
            }
        }
    }
    for (j, r2) in resid2.iter().enumerate() {
        let resid = r2.sqrt();
        assert!(
            resid < 1e-8,
            "subspace column {j} not contained in ambient (residual {resid:.3e})"
        );
    }
    rep
}

/// Coordinates (in the orthonormal degree-`m+1` vector basis `ambient`) of
/// the homogeneous degree-`m+1` fields `u` with `u . (x - centroid) = 0`:
/// the nullspace of the moment matrix of `u . (x - centroid)` against
/// homogeneous test monomials of degree `m+2`.
fn nedelec_constrained_coords(domain: &BasisDomain, ambient: &PolyBasis, m: usize) -> DMatrix<f64> {
    let hom = homogeneous_coords(ambient, m + 1, domain.centroid());
    let tests = homogeneous_exponents(m + 2, false);
    let origin = domain.centroid();
    let scale = domain.diameter();
    let quad = domain.quad(2 * (m + 2) + 2);
    let mut mom: DMatrix<f64> = DMatrix::zeros(tests.len(), hom.ncols());
    for (x, w) in quad.points.iter().zip(&quad.weights) {
        let r = x - origin;
        let avals = ambient.vec_values(x);
        let xi = [r.x / scale, r.y / scale, r.z / scale];
        let radial: Vec<f64> = (0..hom.ncols())
            .map(|j| avals.iter().enumerate().map(|(i, a)| hom[(i, j)] * a.dot(&r)).sum())
            .collect();
        for (t, e) in tests.iter().enumerate() {
            let tv = xi[0].powi(e[0] as i32) * xi[1].powi(e[1] as i32) * xi[2].powi(e[2] as i32);
            for (j, rad) in radial.iter().enumerate() {
                mom[(t, j)] += w * tv * rad;
            }
        }
    }
    let null = la::svd_nullspace(&mom, tol::SVD_RANK_REL);
    &hom * &null
}

/// Nédélec space `N_m(K) = P_m(K)^3 + {u homogeneous of degree m+1 :
/// u . (x - centroid) = 0}`. Dimension `(m+1)(m+3)(m+4)/2`.
pub fn nedelec_subspace(domain: &BasisDomain, m: usize) -> SubspaceBasis {
    assert!(domain.is_tet());
    let ambient = orthonormal_basis(domain, m + 1, 3);
    let nsc = ambient.scalar_dim();
    let low = d_tet(m);
    // P_m^3 part: monomial triangular structure puts the degree-<=m scalar
    // basis functions first in each component block.
    let mut part1: DMatrix<f64> = DMatrix::zeros(ambient.dim, 3 * low);
    for c in 0..3 {
        for i in 0..low {
            part1[(c * nsc + i, c * low + i)] = 1.0;
        }
    }
    let part2 = nedelec_constrained_coords(domain, &ambient, m);
    let mut combined: DMatrix<f64> = DMatrix::zeros(ambient.dim, part1.ncols() + part2.ncols());
    combined.view_mut((0, 0), (ambient.dim, part1.ncols())).copy_from(&part1);
    combined
        .view_mut((0, part1.ncols()), (ambient.dim, part2.ncols()))
        .copy_from(&part2);
    let coords = orthonormalize_coords(combined).expect("Nedelec space rank loss");
    let expect = (m + 1) * (m + 3) * (m + 4) / 2;
    assert_eq!(coords.ncols(), expect, "Nedelec dimension mismatch at m={m}");
    SubspaceBasis::from_coords(ambient, coords)
}

/// The constrained homogeneous summand of the Nédélec space alone: fields
/// of exact degree `m+1` satisfying `u . (x - centroid) = 0` pointwise.
pub fn nedelec_constrained_part(domain: &BasisDomain, m: usize) -> SubspaceBasis {
    assert!(domain.is_tet());
    let ambient = orthonormal_basis(domain, m + 1, 3);
    let raw = nedelec_constrained_coords(domain, &ambient, m);
    let coords = orthonormalize_coords(raw).expect("Nedelec constrained part rank loss");
    let expect = (m + 1) * (m + 3) * (m + 4) / 2 - 3 * d_tet(m);
    assert_eq!(coords.ncols(), expect, "constrained part dimension mismatch at m={m}");
    SubspaceBasis::from_coords(ambient, coords)
}

/// Subspace `P_k(K)^3 + grad(homogeneous P_{k+2})` of `P_{k+1}(K)^3`.
/// Its orthogonal complement carries the face-coupled equations of the
/// curl-based projection. Dimension `3 d_k + (d_{k+2} - d_{k+1})`.
pub fn pk_plus_grad_subspace(domain: &BasisDomain, k: usize) -> SubspaceBasis {
    assert!(domain.is_tet());
    let ambient = orthonormal_basis(domain, k + 1, 3);
    let nsc = ambient.scalar_dim();
    let low = d_tet(k);
    let mut part1: DMatrix<f64> = DMatrix::zeros(ambient.dim, 3 * low);
    for c in 0..3 {
        for i in 0..low {
            part1[(c * nsc + i, c * low + i)] = 1.0;
        }
    }
    let origin = domain.centroid();
    let scale = domain.diameter();
    let hexps = homogeneous_exponents(k + 2, false);
    let quad = domain.quad(2 * (k + 2) + 2);
    let mut part2: DMatrix<f64> = DMatrix::zeros(ambient.dim, hexps.len());
    for (x, w) in quad.points.iter().zip(&quad.weights) {
        let d = x - origin;
        let xi = [d.x / scale, d.y / scale, d.z / scale];
        let avals = ambient.vec_values(x);
        for (j, e) in hexps.iter().enumerate() {
            let mut grad = Vector3::zeros();
            for c in 0..3 {
                if e[c] == 0 {
                    continue;
                }
                let mut g = e[c] as f64;
                for a in 0..3 {
                    let p = if a == c { e[a] - 1 } else { e[a] };
                    g *= xi[a].powi(p as i32);
                }
                grad[c] = g / scale;
            }
            for (i, av) in avals.iter().enumerate() {
                part2[(i, j)] += w * av.dot(&grad);
            }
        }
    }
    let mut combined: DMatrix<f64> = DMatrix::zeros(ambient.dim, part1.ncols() + part2.ncols());
    combined.view_mut((0, 0), (ambient.dim, part1.ncols())).copy_from(&part1);
    combined
        .view_mut((0, part1.ncols()), (ambient.dim, part2.ncols()))
        .copy_from(&part2);
    let coords = orthonormalize_coords(combined).expect("enriched volume space rank loss");
    assert_eq!(coords.ncols(), 3 * d_tet(k) + (d_tet(k + 2) - d_tet(k + 1)));
    SubspaceBasis::from_coords(ambient, coords)
}

/// Trace spaces on one face: the tangential space `N(F)` and scalar space
/// `M(F)` of the given variant and degree.
pub fn face_trace_space(domain: &BasisDomain, variant: Variant, k: usize) -> (SubspaceBasis, PolyBasis) {
    assert!(!domain.is_tet());
    let m_space = orthonormal_basis(domain, variant.m_degree(k), 1);
    let n_space = match variant {
        Variant::Std => SubspaceBasis::identity(orthonormal_basis(domain, k, 2)),
        Variant::B | Variant::H => SubspaceBasis::identity(orthonormal_basis(domain, k + 1, 2)),
        Variant::BPlus | Variant::HPlus => reduced_trace_space(domain, k, None),
    };
    assert_eq!(n_space.dim, variant.n_dim(k));
    (n_space, m_space)
}

/// Reduced tangential trace space `P_k^t + grad_F(homogeneous P_{k+2})`
/// inside `P_{k+1}^t`, with homogeneity origin `origin` (default face
/// centroid). The space itself is origin-independent.
pub fn reduced_trace_space(
    domain: &BasisDomain,
    k: usize,
    origin: Option<Vector3<f64>>,
) -> SubspaceBasis {
    let ambient = orthonormal_basis(domain, k + 1, 2);
    let nsc = ambient.scalar_dim();
    let low = d_face(k);
    let mut part1: DMatrix<f64> = DMatrix::zeros(ambient.dim, 2 * low);
    for c in 0..2 {
        for i in 0..low {
            part1[(c * nsc + i, c * low + i)] = 1.0;
        }
    }
    // Surface gradients of homogeneous degree-(k+2) scalars: tangential
    // fields of homogeneous degree k+1.
    let origin = origin.unwrap_or_else(|| domain.centroid());
    let (t1, t2) = domain.frame();
    let scale = domain.diameter();
    let hexps = homogeneous_exponents(k + 2, true);
    let quad = domain.quad(2 * (k + 2) + 2);
    let mut part2: DMatrix<f64> = DMatrix::zeros(ambient.dim, hexps.len());
    for (x, w) in quad.points.iter().zip(&quad.weights) {
        let d = x - origin;
        let xi = [d.dot(&t1) / scale, d.dot(&t2) / scale];
        let avals = ambient.vec_values(x);
        for (j, e) in hexps.iter().enumerate() {
            let (a, b) = (e[0], e[1]);
            let gx = if a == 0 {
                0.0
            } else {
                a as f64 * xi[0].powi(a as i32 - 1) * xi[1].powi(b as i32)
            };
            let gy = if b == 0 {
                0.0
            } else {
                b as f64 * xi[0].powi(a as i32) * xi[1].powi(b as i32 - 1)
            };
            let grad = (t1 * gx + t2 * gy) / scale;
            for (i, av) in avals.iter().enumerate() {
                part2[(i, j)] += w * av.dot(&grad);
            }
        }
    }
    let mut combined: DMatrix<f64> = DMatrix::zeros(ambient.dim, part1.ncols() + part2.ncols());
    combined.view_mut((0, 0), (ambient.dim, part1.ncols())).copy_from(&part1);
    combined
        .view_mut((0, part1.ncols()), (ambient.dim, part2.ncols()))
        .copy_from(&part2);
    let coords = orthonormalize_coords(combined).expect("reduced trace space rank loss");
    assert_eq!(coords.ncols(), (k + 1) * (k + 2) + (k + 3));
    SubspaceBasis::from_coords(ambient, coords)
}

/// One face of an element together with its variant trace spaces.
#[derive(Debug, Clone)]
pub struct ElementFace {
    pub dom: BasisDomain,
    pub n_space: SubspaceBasis,
    pub m_space: PolyBasis,
    /// +1 if the stored face normal is outward for this element.
    pub outward_sign: f64,
    /// Skeleton face index when built on a mesh.
    pub mesh_face: Option<usize>,
    /// Is this face on the domain boundary (meshes only)?
    pub boundary: bool,
}

impl ElementFace {
    /// Outward unit normal for the owning element.
    pub fn outward_normal(&self) -> Vector3<f64> {
        self.dom.normal() * self.outward_sign
    }
}

/// All local spaces of one element for a given variant and degree: volume
/// spaces `W`, `V`, `Q` and the four face trace spaces.
#[derive(Debug, Clone)]
pub struct ElementSpaces {
    pub variant: Variant,
    pub k: usize,
    pub tet: BasisDomain,
    pub w: PolyBasis,
    pub v: PolyBasis,
    pub q: PolyBasis,
    pub faces: Vec<ElementFace>,
}

impl ElementSpaces {
    /// Spaces on mesh element `e`; face spaces are built in the canonical
    /// (global) face frames so both adjacent elements share them exactly.
    pub fn on_mesh(mesh: &Mesh, e: usize, variant: Variant, k: usize) -> ElementSpaces {
        let tet = BasisDomain::tet(mesh, e);
        let faces = mesh.tet_faces[e]
            .iter()
            .map(|fr| {
                let dom = BasisDomain::face(mesh, fr.face);
                let (n_space, m_space) = face_trace_space(&dom, variant, k);
                ElementFace {
                    dom,
                    n_space,
                    m_space,
                    outward_sign: fr.sign,
                    mesh_face: Some(fr.face),
                    boundary: mesh.faces[fr.face].is_boundary(),
                }
            })
            .collect();
        Self::build(variant, k, tet, faces)
    }

    /// Spaces on a standalone tet; all face normals outward.
    pub fn standalone(verts: [Vector3<f64>; 4], variant: Variant, k: usize) -> ElementSpaces {
        let tet = BasisDomain::from_tet(verts);
        let faces = (0..4)
            .map(|loc| {
                let dom = BasisDomain::tet_face(&verts, loc);
                let (n_space, m_space) = face_trace_space(&dom, variant, k);
                ElementFace {
                    dom,
                    n_space,
                    m_space,
                    outward_sign: 1.0,
                    mesh_face: None,
                    boundary: false,
                }
            })
            .collect();
        Self::build(variant, k, tet, faces)
    }

    fn build(variant: Variant, k: usize, tet: BasisDomain, faces: Vec<ElementFace>) -> ElementSpaces {
        let w = orthonormal_basis(&tet, variant.w_degree(k), 3);
        let v = orthonormal_basis(&tet, variant.v_degree(k), 3);
        let q = orthonormal_basis(&tet, variant.q_degree(k), 1);
        ElementSpaces { variant, k, tet, w, v, q, faces }
    }

    pub fn h(&self) -> f64 {
        self.tet.diameter()
    }
}

/// Residuals of the five space compatibility conditions (max over basis
/// columns of the post-projection L² defect).
#[derive(Debug, Clone)]
pub struct InclusionReport {
    /// `curl V` inside `W`.
    pub curl_v_in_w: f64,
    /// `div V` inside `Q`.
    pub div_v_in_q: f64,
    /// `curl W + grad Q` inside `V`.
    pub curl_w_grad_q_in_v: f64,
    /// Tangential traces `n x W` inside `N` on each face.
    pub trace_w_in_n: f64,
    /// Scalar traces of `Q` and normal traces `V . n` inside `M`.
    pub trace_q_v_in_m: f64,
}

impl InclusionReport {
    pub fn max(&self) -> f64 {
        self.curl_v_in_w
            .max(self.div_v_in_q)
            .max(self.curl_w_grad_q_in_v)
            .max(self.trace_w_in_n)
            .max(self.trace_q_v_in_m)
    }
}

/// L² residual of projecting each source field onto the span of the
/// targets (orthonormal under `quad`). Two passes: first the projection
/// coordinates, then the residual function itself, pointwise — avoiding
/// the `norm^2` cancellation that would floor the result near 1e-8.
fn projection_residual_vec(
    quad: &PhysQuad,
    sources: &dyn Fn(&Vector3<f64>) -> Vec<Vector3<f64>>,
    targets: &dyn Fn(&Vector3<f64>) -> Vec<Vector3<f64>>,
    nsrc: usize,
    ntgt: usize,
) -> f64 {
    let mut coords: DMatrix<f64> = DMatrix::zeros(ntgt, nsrc);
    for (x, w) in quad.points.iter().zip(&quad.weights) {
        let s = sources(x);
        let t = targets(x);
        for (j, sv) in s.iter().enumerate() {
            for (i, tv) in t.iter().enumerate() {
                coords[(i, j)] += w * tv.dot(sv);
            }
        }
    }
    let mut resid2 = vec![0.0_f64; nsrc];
    for (x, w) in quad.points.iter().zip(&quad.weights) {
        let s = sources(x);
        let t = targets(x);
        for (j, sv) in s.iter().enumerate() {
            let mut r = *sv;
            for (i, tv) in t.iter().enumerate() {
                r -= tv * coords[(i, j)];
            }
            resid2[j] += w * r.norm_squared();
        }
    }
    resid2.iter().fold(0.0_f64, |a, &b| a.max(b.sqrt()))
}

/// Scalar analogue of [`projection_residual_vec`].
fn projection_residual_scalar(
    quad: &PhysQuad,
    sources: &dyn Fn(&Vector3<f64>) -> Vec<f64>,
    targets: &dyn Fn(&Vector3<f64>) -> DVector<f64>,
    nsrc: usize,
    ntgt: usize,
) -> f64 {
    let mut coords: DMatrix<f64> = DMatrix::zeros(ntgt, nsrc);
    for (x, w) in quad.points.iter().zip(&quad.weights) {
        let s = sources(x);
        let t = targets(x);
        for (j, sv) in s.iter().enumerate() {
            for i in 0..ntgt {
                coords[(i, j)] += w * t[i] * sv;
            }
        }
    }
    let mut resid2 = vec![0.0_f64; nsrc];
    for (x, w) in quad.points.iter().zip(&quad.weights) {
        let s = sources(x);
        let t = targets(x);
        for (j, sv) in s.iter().enumerate() {
            let mut r = *sv;
            for i in 0..ntgt {
                r -= t[i] * coords[(i, j)];
            }
            resid2[j] += w * r * r;
        }
    }
    resid2.iter().fold(0.0_f64, |a, &b| a.max(b.sqrt()))
}

/// Numerically verifies the variant's space compatibility conditions on a
/// single tet. All residuals should be below [`tol::SUBSPACE_RESIDUAL`].
pub fn check_inclusions(variant: Variant, k: usize, verts: [Vector3<f64>; 4]) -> InclusionReport {
    let es = ElementSpaces::standalone(verts, variant, k);
    let deg = 2 * (es.v.k + 1) + 2;
    let quad = es.tet.quad(deg);

    let curl_v_in_w = projection_residual_vec(
        &quad,
        &|x| es.v.curls(x),
        &|x| es.w.vec_values(x),
        es.v.dim,
        es.w.dim,
    );

    let div_v_in_q = projection_residual_scalar(
        &quad,
        &|x| es.v.divs(x),
        &|x| es.q.scalar_values(x),
        es.v.dim,
        es.q.dim,
    );

    let curl_w_grad_q_in_v = projection_residual_vec(
        &quad,
        &|x| {
            let mut s = es.w.curls(x);
            s.extend(es.q.scalar_grads(x));
            s
        },
        &|x| es.v.vec_values(x),
        es.w.dim + es.q.dim,
        es.v.dim,
    );

    let mut trace_w_in_n = 0.0_f64;
    let mut trace_q_v_in_m = 0.0_f64;
    for face in &es.faces {
        let fquad = face.dom.quad(2 * (es.v.k + 1) + 2);
        let n_out = face.outward_normal();
        trace_w_in_n = trace_w_in_n.max(projection_residual_vec(
            &fquad,
            &|x| es.w.vec_values(x).iter().map(|wv| n_out.cross(wv)).collect(),
            &|x| face.n_space.vec_values(x),
            es.w.dim,
            face.n_space.dim,
        ));
        trace_q_v_in_m = trace_q_v_in_m.max(projection_residual_scalar(
            &fquad,
            &|x| {
                let mut s: Vec<f64> = es.q.scalar_values(x).iter().copied().collect();
                s.extend(es.v.vec_values(x).iter().map(|v| v.dot(&n_out)));
                s
            },
            &|x| face.m_space.scalar_values(x),
            es.q.dim + es.v.dim,
            face.m_space.dim,
        ));
    }

    InclusionReport {
        curl_v_in_w,
        div_v_in_q,
        curl_w_grad_q_in_v,
        trace_w_in_n,
        trace_q_v_in_m,
    }
}
