//! Quadrature on reference and physical simplices.
//!
//! Smooth integrands use collapsed (Duffy-type) tensor Gauss rules on the
//! reference tetrahedron `{x,y,z >= 0, x+y+z <= 1}` and reference triangle
//! `{x,y >= 0, x+y <= 1}`. The collapse direction absorbs the Jacobian
//! factors `(1-b)` and `(1-c)^2` into Gauss-Jacobi weights, so an `n`-point
//! rule per axis is exact for total degree `2n-1`.
//!
//! Cells touching the L-shape's re-entrant axis `{x = y = 0}` additionally
//! get *graded* rules: a `q -> q^3` substitution collapses the points onto
//! the singular vertex/edge so that the distance to the axis factors as
//! `rho = q^3 * (smooth positive)`. Integrands with `rho^(-1/3)` or
//! `rho^(-2/3)` weights then become smooth in the rule coordinates and the
//! Gauss points converge spectrally; the rules never place a point exactly
//! on the axis.

use crate::la::{gauss_jacobi_01, gauss_legendre_01};
use nalgebra::Vector3;
use std::sync::OnceLock;

/// Largest supported exactness degree (after the global bump).
pub const MAX_DEGREE: usize = 60;

/// Reference domain of a rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefDomain {
    /// `{x,y,z >= 0, x+y+z <= 1}`, volume 1/6.
    Tet,
    /// `{x,y >= 0, x+y <= 1}`, area 1/2 (third coordinate unused).
    Tri,
}

impl RefDomain {
    /// Measure of the reference domain.
    pub fn measure(self) -> f64 {
        match self {
            RefDomain::Tet => 1.0 / 6.0,
            RefDomain::Tri => 0.5,
        }
    }
}

/// Quadrature rule in reference coordinates.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub domain: RefDomain,
    /// Reference coordinates (triangles use the first two entries).
    pub points: Vec<[f64; 3]>,
    /// Reference weights; they sum to the reference measure.
    pub weights: Vec<f64>,
    /// Certified polynomial exactness degree.
    pub degree: usize,
}

/// Global quadrature degree bump from the `MAXHDG_QUAD_BUMP` environment
/// variable (clamped to `0..=20`), cached for the process lifetime. Used
/// for integration-sensitivity studies.
pub fn quad_bump() -> usize {
    static BUMP: OnceLock<usize> = OnceLock::new();
    *BUMP.get_or_init(|| {
        std::env::var("MAXHDG_QUAD_BUMP")
            .ok()
            .and_then(|s| s.trim().parse::<i64>().ok())
            .map(|v| v.clamp(0, 20) as usize)
            .unwrap_or(0)
    })
}

/// Builds a rule of exactness at least `degree` (plus the global bump) on
/// the requested reference domain. Weights are strictly positive.
///
/// # Panics
/// If the bumped degree exceeds [`MAX_DEGREE`].
pub fn make_quadrature(domain: RefDomain, degree: usize) -> QuadratureRule {
    let degree = degree + quad_bump();
    assert!(
        degree <= MAX_DEGREE,
        "unsupported quadrature degree {degree} (max {MAX_DEGREE})"
    );
    let n = degree / 2 + 1; // 2n-1 >= degree
    let (ga, wa) = gauss_legendre_01(n);
    let (gb, wb) = gauss_jacobi_01(n, 1);
    match domain {
        RefDomain::Tri => {
            let mut points = Vec::with_capacity(n * n);
            let mut weights = Vec::with_capacity(n * n);
            for (b, wbv) in gb.iter().zip(&wb) {
                for (a, wav) in ga.iter().zip(&wa) {
                    // x = a (1-b), y = b; Jacobian (1-b) absorbed in wb.
                    points.push([a * (1.0 - b), *b, 0.0]);
                    weights.push(wav * wbv);
                }
            }
            QuadratureRule { domain, points, weights, degree }
        }
        RefDomain::Tet => {
            let (gc, wc) = gauss_jacobi_01(n, 2);
            let mut points = Vec::with_capacity(n * n * n);
            let mut weights = Vec::with_capacity(n * n * n);
            for (c, wcv) in gc.iter().zip(&wc) {
                for (b, wbv) in gb.iter().zip(&wb) {
                    for (a, wav) in ga.iter().zip(&wa) {
                        // x = a(1-b)(1-c), y = b(1-c), z = c; Jacobian
                        // (1-b)(1-c)^2 absorbed in wb, wc.
                        points.push([a * (1.0 - b) * (1.0 - c), b * (1.0 - c), *c]);
                        weights.push(wav * wbv * wcv);
                    }
                }
            }
            QuadratureRule { domain, points, weights, degree }
        }
    }
}

/// Quadrature mapped to a physical cell or face: 3D points and weights that
/// sum to the cell volume / face area.
#[derive(Debug, Clone)]
pub struct PhysQuad {
    pub points: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

impl PhysQuad {
    /// Total weight (= measure of the integration domain).
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `sum_q w_q f(x_q)`.
    pub fn integrate(&self, mut f: impl FnMut(&Vector3<f64>) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }
}

/// Signed volume of the tetrahedron `v0 v1 v2 v3` (positive for a
/// right-handed vertex ordering).
pub fn tet_signed_volume(v: &[Vector3<f64>; 4]) -> f64 {
    (v[1] - v[0]).cross(&(v[2] - v[0])).dot(&(v[3] - v[0])) / 6.0
}

/// Area of the triangle `p0 p1 p2`.
pub fn tri_area(p: &[Vector3<f64>; 3]) -> f64 {
    0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm()
}

/// Maps a reference-tet rule onto the physical tetrahedron `v`.
pub fn map_to_tet(rule: &QuadratureRule, v: &[Vector3<f64>; 4]) -> PhysQuad {
    assert_eq!(rule.domain, RefDomain::Tet);
    let vol = tet_signed_volume(v).abs();
    let scale = 6.0 * vol;
    let points = rule
        .points
        .iter()
        .map(|p| v[0] + (v[1] - v[0]) * p[0] + (v[2] - v[0]) * p[1] + (v[3] - v[0]) * p[2])
        .collect();
    let weights = rule.weights.iter().map(|w| w * scale).collect();
    PhysQuad { points, weights }
}

/// Maps a reference-triangle rule onto the physical triangle `p` (3D).
pub fn map_to_tri(rule: &QuadratureRule, p: &[Vector3<f64>; 3]) -> PhysQuad {
    assert_eq!(rule.domain, RefDomain::Tri);
    let area = tri_area(p);
    let scale = 2.0 * area;
    let points = rule
        .points
        .iter()
        .map(|q| p[0] + (p[1] - p[0]) * q[0] + (p[2] - p[0]) * q[1])
        .collect();
    let weights = rule.weights.iter().map(|w| w * scale).collect();
    PhysQuad { points, weights }
}

/// Distance of `x` to the axis `{x = y = 0}`.
pub fn axis_distance(x: &Vector3<f64>) -> f64 {
    (x.x * x.x + x.y * x.y).sqrt()
}

fn graded_gauss(n_graded: usize) -> (Vec<f64>, Vec<f64>) {
    gauss_legendre_01(n_graded)
}

fn assert_off_axis(min_rho: f64, scale: f64, what: &str) {
    assert!(
        min_rho > 1e-9 * scale.max(1e-30),
        "graded {what} rule: cell geometry touches the axis away from the \
         designated singular vertices (min rho {min_rho:.3e})"
    );
}

/// Graded rule on a tetrahedron whose vertices `on_axis = [i0, i1]` lie on
/// the axis `{x = y = 0}` (the singular edge). `n_smooth` points per smooth
/// direction, `n_graded` along the grading.
pub fn singular_tet_edge(
    v: &[Vector3<f64>; 4],
    on_axis: [usize; 2],
    n_smooth: usize,
    n_graded: usize,
) -> PhysQuad {
    let others: Vec<usize> = (0..4).filter(|i| !on_axis.contains(i)).collect();
    let (i0, i1, i2, i3) = (on_axis[0], on_axis[1], others[0], others[1]);
    let vol = tet_signed_volume(v).abs();
    let (gt, wt) = gauss_legendre_01(n_smooth);
    let (gq, wq) = graded_gauss(n_graded);
    let (gs, ws) = gauss_legendre_01(n_smooth);
    let mut points = Vec::with_capacity(n_smooth * n_smooth * n_graded);
    let mut weights = Vec::with_capacity(points.capacity());
    let mut min_rho_factor = f64::INFINITY;
    for (q, wqv) in gq.iter().zip(&wq) {
        let s = q * q * q;
        for (sig, wsv) in gs.iter().zip(&ws) {
            // Off-axis barycentric mass s splits between the two off-axis
            // vertices; the xy-offset is s * (sig*v2 + (1-sig)*v3)_xy, so
            // rho = q^3 * |sig*v2_xy + (1-sig)*v3_xy| exactly.
            let dir = v[i2].xy() * *sig + v[i3].xy() * (1.0 - sig);
            min_rho_factor = min_rho_factor.min(dir.norm());
            for (t, wtv) in gt.iter().zip(&wt) {
                let l2 = s * sig;
                let l3 = s * (1.0 - sig);
                let l1 = (1.0 - s) * t;
                let l0 = 1.0 - l1 - l2 - l3;
                points.push(v[i0] * l0 + v[i1] * l1 + v[i2] * l2 + v[i3] * l3);
                let jac = 3.0 * q.powi(5) * (1.0 - s);
                weights.push(6.0 * vol * wtv * wqv * wsv * jac);
            }
        }
    }
    assert_off_axis(min_rho_factor, (v[i2] - v[i0]).norm(), "tet-edge");
    PhysQuad { points, weights }
}

/// Graded rule on a tetrahedron with the single vertex `on_axis` on the
/// axis `{x = y = 0}`.
pub fn singular_tet_vertex(
    v: &[Vector3<f64>; 4],
    on_axis: usize,
    n_smooth: usize,
    n_graded: usize,
) -> PhysQuad {
    let others: Vec<usize> = (0..4).filter(|&i| i != on_axis).collect();
    let (i0, j1, j2, j3) = (on_axis, others[0], others[1], others[2]);
    let vol = tet_signed_volume(v).abs();
    let tri = make_quadrature(RefDomain::Tri, (2 * n_smooth).saturating_sub(1));
    let (gq, wq) = graded_gauss(n_graded);
    let mut points = Vec::with_capacity(tri.points.len() * n_graded);
    let mut weights = Vec::with_capacity(points.capacity());
    let mut min_rho_factor = f64::INFINITY;
    for (q, wqv) in gq.iter().zip(&wq) {
        let r = q * q * q;
        for (p, wab) in tri.points.iter().zip(&tri.weights) {
            let (a, b) = (p[0], p[1]);
            // Radial collapse toward the axis vertex: barycentrics scale
            // with r = q^3, so rho = q^3 * |a*vxy1 + b*vxy2 + (1-a-b)*vxy3|.
            let dir = v[j1].xy() * a + v[j2].xy() * b + v[j3].xy() * (1.0 - a - b);
            min_rho_factor = min_rho_factor.min(dir.norm());
            let l1 = r * a;
            let l2 = r * b;
            let l3 = r * (1.0 - a - b);
            let l0 = 1.0 - l1 - l2 - l3;
            points.push(v[i0] * l0 + v[j1] * l1 + v[j2] * l2 + v[j3] * l3);
            let jac = 3.0 * q.powi(8);
            weights.push(6.0 * vol * wab * wqv * jac);
        }
    }
    assert_off_axis(min_rho_factor, (v[j1] - v[i0]).norm(), "tet-vertex");
    PhysQuad { points, weights }
}

/// Graded rule on a triangle (3D) whose vertices `on_axis = [i0, i1]` lie
/// on the axis.
pub fn singular_tri_edge(
    p: &[Vector3<f64>; 3],
    on_axis: [usize; 2],
    n_smooth: usize,
    n_graded: usize,
) -> PhysQuad {
    let other = (0..3).find(|i| !on_axis.contains(i)).unwrap();
    let (i0, i1, i2) = (on_axis[0], on_axis[1], other);
    let area = tri_area(p);
    let (gt, wt) = gauss_legendre_01(n_smooth);
    let (gq, wq) = graded_gauss(n_graded);
    let mut points = Vec::with_capacity(n_smooth * n_graded);
    let mut weights = Vec::with_capacity(points.capacity());
    let off = p[i2].xy().norm();
    assert_off_axis(off, (p[i2] - p[i0]).norm(), "tri-edge");
    for (q, wqv) in gq.iter().zip(&wq) {
        let s = q * q * q; // barycentric weight of the off-axis vertex
        for (t, wtv) in gt.iter().zip(&wt) {
            let l2 = s;
            let l1 = (1.0 - s) * t;
            let l0 = 1.0 - l1 - l2;
            points.push(p[i0] * l0 + p[i1] * l1 + p[i2] * l2);
            let jac = 3.0 * q * q * (1.0 - s);
            weights.push(2.0 * area * wtv * wqv * jac);
        }
    }
    PhysQuad { points, weights }
}

/// Graded rule on a triangle (3D) with the single vertex `on_axis` on the
/// axis.
pub fn singular_tri_vertex(
    p: &[Vector3<f64>; 3],
    on_axis: usize,
    n_smooth: usize,
    n_graded: usize,
) -> PhysQuad {
    let others: Vec<usize> = (0..3).filter(|&i| i != on_axis).collect();
    let (i0, j1, j2) = (on_axis, others[0], others[1]);
    let area = tri_area(p);
    let (gs, ws) = gauss_legendre_01(n_smooth);
    let (gq, wq) = graded_gauss(n_graded);
    let mut points = Vec::with_capacity(n_smooth * n_graded);
    let mut weights = Vec::with_capacity(points.capacity());
    let mut min_rho_factor = f64::INFINITY;
    for (q, wqv) in gq.iter().zip(&wq) {
        let r = q * q * q;
        for (s, wsv) in gs.iter().zip(&ws) {
            let dir = p[j1].xy() * *s + p[j2].xy() * (1.0 - s);
            min_rho_factor = min_rho_factor.min(dir.norm());
            let l1 = r * s;
            let l2 = r * (1.0 - s);
            let l0 = 1.0 - l1 - l2;
            points.push(p[i0] * l0 + p[j1] * l1 + p[j2] * l2);
            let jac = 3.0 * q.powi(5);
            weights.push(2.0 * area * wsv * wqv * jac);
        }
    }
    assert_off_axis(min_rho_factor, (p[j1] - p[i0]).norm(), "tri-vertex");
    PhysQuad { points, weights }
}

/// Shared degree for every integral that touches non-polynomial data
/// (right-hand sides, projection data moments, identity evaluation).
/// Routing them all through one policy guarantees that identical integrals
/// are computed by identical rules, so residual identities cancel
/// algebraically instead of up to quadrature error. The floor keeps the
/// policy constant over the supported degree range; it is sized so that
/// even near-singular data (elements adjacent to, but not touching, the
/// graded axis) integrates more than an order of magnitude below the
/// tightest identity tolerance.
pub fn data_degree(k: usize) -> usize {
    (2 * k + 6).max(23)
}

/// Data-integration rule on a physical tet: the regular collapsed rule of
/// the given exactness, upgraded to a graded rule when the tet touches the
/// axis `{x = y = 0}` (so that `rho^(-1/3)`-type data integrates to near
/// machine accuracy).
pub fn data_tet_quad(verts: &[Vector3<f64>; 4], degree: usize) -> PhysQuad {
    use crate::mesh::{axis_touch, AxisTouch};
    let n = (degree + quad_bump()) / 2 + 1;
    match axis_touch(verts) {
        AxisTouch::None => map_to_tet(&make_quadrature(RefDomain::Tet, degree), verts),
        AxisTouch::Vertex(i) => singular_tet_vertex(verts, i, n, n + 12),
        AxisTouch::Edge(e) => singular_tet_edge(verts, e, n, n + 12),
    }
}

/// Data-integration rule on a physical triangle, graded when it touches
/// the axis. See [`data_tet_quad`].
pub fn data_tri_quad(verts: &[Vector3<f64>; 3], degree: usize) -> PhysQuad {
    use crate::mesh::{axis_touch, AxisTouch};
    let n = (degree + quad_bump()) / 2 + 1;
    match axis_touch(verts) {
        AxisTouch::None => map_to_tri(&make_quadrature(RefDomain::Tri, degree), verts),
        AxisTouch::Vertex(i) => singular_tri_vertex(verts, i, n, n + 12),
        AxisTouch::Edge(e) => singular_tri_edge(verts, e, n, n + 12),
    }
}

/// Exact integral of the monomial `x^a y^b z^c` over the reference
/// tetrahedron: `a! b! c! / (a+b+c+3)!`.
pub fn ref_tet_monomial(a: u32, b: u32, c: u32) -> f64 {
    factorial_ratio(&[a, b, c], a + b + c + 3)
}

/// Exact integral of `x^a y^b` over the reference triangle:
/// `a! b! / (a+b+2)!`.
pub fn ref_tri_monomial(a: u32, b: u32) -> f64 {
    factorial_ratio(&[a, b], a + b + 2)
}

fn factorial_ratio(numer: &[u32], denom: u32) -> f64 {
    // prod(n_i!) / denom!  computed stably in log space-free f64 (degrees
    // stay far below factorial overflow).
    let mut value = 1.0_f64;
    for &n in numer {
        for k in 2..=n {
            value *= k as f64;
        }
    }
    for k in 2..=denom {
        value /= k as f64;
    }
    value
}
