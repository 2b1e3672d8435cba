//! Polynomial space dimensions, orthonormality, and the variant space
//! compatibility conditions.

mod common;

use common::{random_tet, rng};
use maxhdg::polyspace::*;
use maxhdg::tol;
use nalgebra::{DMatrix, Vector3};
use rand::Rng;

fn unit_tet() -> BasisDomain {
    BasisDomain::from_tet([
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
        Vector3::new(0.0, 0.0, 1.0),
    ])
}

fn kuhn_face() -> BasisDomain {
    BasisDomain::tet_face(
        &[
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(1.0, 1.0, 1.0),
        ],
        3,
    )
}

#[test]
fn basis_dimensions() {
    let t = unit_tet();
    assert_eq!(orthonormal_basis(&t, 2, 1).dim, 10);
    assert_eq!(orthonormal_basis(&t, 1, 3).dim, 12);
    let f = kuhn_face();
    assert_eq!(orthonormal_basis(&f, 2, 1).dim, 6);
    assert_eq!(orthonormal_basis(&f, 1, 2).dim, 6);
    assert_eq!(d_tet(3), 20);
    assert_eq!(d_face(3), 10);
}

/// Gram matrix under an independently built quadrature is the identity.
#[test]
fn basis_orthonormality() {
    let mut r = rng(11);
    for _ in 0..4 {
        let verts = random_tet(&mut r);
        let dom = BasisDomain::from_tet(verts);
        for k in [0usize, 1, 3] {
            let basis = orthonormal_basis(&dom, k, 1);
            let quad = dom.quad(2 * k + 4);
            let n = basis.dim;
            let mut gram: DMatrix<f64> = DMatrix::zeros(n, n);
            for (x, w) in quad.points.iter().zip(&quad.weights) {
                let v = basis.scalar_values(x);
                gram += &v * v.transpose() * *w;
            }
            let defect = (&gram - DMatrix::identity(n, n)).abs().max();
            assert!(defect < tol::GRAM_DEFECT, "Gram defect {defect:.3e} at k={k}");
        }
    }
}

/// Projection of an in-space function reproduces it pointwise.
#[test]
fn basis_reproduces_polynomials() {
    let mut r = rng(12);
    let verts = random_tet(&mut r);
    let dom = BasisDomain::from_tet(verts);
    let basis = orthonormal_basis(&dom, 2, 1);
    let f = |x: &Vector3<f64>| x.x * x.x - x.y * x.z;
    let quad = dom.quad(2 * 2 + 2);
    let coeffs = basis.scalar_moments(&quad, f);
    for _ in 0..20 {
        let bary = {
            let mut b = [r.gen::<f64>(), r.gen::<f64>(), r.gen::<f64>(), r.gen::<f64>()];
            let s: f64 = b.iter().sum();
            b.iter_mut().for_each(|x| *x /= s);
            b
        };
        let x = verts[0] * bary[0] + verts[1] * bary[1] + verts[2] * bary[2] + verts[3] * bary[3];
        let got = basis.scalar_values(&x).dot(&coeffs);
        assert!((got - f(&x)).abs() < 1e-11, "reproduction error {:.2e}", (got - f(&x)).abs());
    }
}

#[test]
fn homogeneous_dimensions_and_scaling() {
    let t = unit_tet();
    let f = kuhn_face();
    assert_eq!(homogeneous_subspace(&f, 3, None, 1).dim, 4);
    assert_eq!(homogeneous_subspace(&t, 3, None, 1).dim, 10);

    let mut r = rng(13);
    let dom = BasisDomain::from_tet(random_tet(&mut r));
    let origin = dom.centroid();
    for k in [1usize, 2, 3] {
        let sub = homogeneous_subspace(&dom, k, Some(origin), 1);
        assert_eq!(sub.dim, (k + 1) * (k + 2) / 2);
        for _ in 0..5 {
            let d = Vector3::new(r.gen::<f64>() - 0.5, r.gen::<f64>() - 0.5, r.gen::<f64>() - 0.5) * 0.2;
            let x1 = origin + d;
            let x2 = origin + d * 2.0;
            let v1 = sub.scalar_values(&x1);
            let v2 = sub.scalar_values(&x2);
            for j in 0..sub.dim {
                let want = 2.0f64.powi(k as i32) * v1[j];
                assert!(
                    (v2[j] - want).abs() < 1e-10,
                    "homogeneity violated at k={k}: {} vs {}",
                    v2[j],
                    want
                );
            }
        }
    }
}

#[test]
fn curl_range_dimensions_and_divfree() {
    let mut r = rng(14);
    let dom = BasisDomain::from_tet(random_tet(&mut r));
    for (k, want) in [(1usize, 3usize), (2, 11), (3, 26)] {
        let sub = curl_range_subspace(&dom, k);
        assert_eq!(sub.dim, want, "curl range dim at k={k}");
        assert_eq!(sub.dim, 3 * d_tet(k) - (d_tet(k + 1) - 1));
        // Columns are curls, hence divergence-free.
        let quad = dom.quad(2 * k);
        for x in &quad.points {
            let divs = sub.ambient.divs(x);
            for j in 0..sub.dim {
                let dj: f64 = (0..sub.ambient.dim).map(|i| sub.coeff[(i, j)] * divs[i]).sum();
                assert!(dj.abs() < 1e-10, "nonzero divergence {dj:.2e}");
            }
        }
    }
}

#[test]
fn orth_complement_dimensions() {
    let mut r = rng(15);
    let dom = BasisDomain::from_tet(random_tet(&mut r));

    // Complement of the curl range of P_2^3 inside P_1^3: 12 - 11 = 1.
    let range = curl_range_subspace(&dom, 2);
    let ambient = orthonormal_basis(&dom, 1, 3);
    let comp = orth_complement(&range, &ambient);
    assert_eq!(comp.dim, 1);
    assert_eq!(comp.dim, 3 * d_tet(1) + d_tet(3) - 3 * d_tet(2) - 1);

    // Complement of P_1^3 + grad(homog P_3) inside P_2^3: 30 - 22 = 8.
    let enriched = pk_plus_grad_subspace(&dom, 1);
    let ambient2 = orthonormal_basis(&dom, 2, 3);
    let comp2 = orth_complement(&enriched, &ambient2);
    assert_eq!(comp2.dim, 8);
    assert_eq!(comp2.dim, 3 * d_tet(2) - 3 * d_tet(1) - (d_tet(3) - d_tet(2)));

    // Orthogonality of complement columns to the subspace columns.
    let quad = dom.quad(2 * 2 + 2);
    for j in 0..comp2.dim {
        for i in 0..enriched.dim {
            let mut ip = 0.0;
            for (x, w) in quad.points.iter().zip(&quad.weights) {
                let a = comp2.vec_values(x)[j];
                let b = enriched.vec_values(x)[i];
                ip += w * a.dot(&b);
            }
            assert!(ip.abs() < tol::GRAM_DEFECT, "complement not orthogonal: {ip:.2e}");
        }
    }

    // Complement of the full ambient is empty.
    let full = SubspaceBasis::identity(orthonormal_basis(&dom, 1, 3));
    let empty = orth_complement(&full, &orthonormal_basis(&dom, 1, 3));
    assert_eq!(empty.dim, 0);
}

/// Sum of the three block dimensions in the curl-projection system equals
/// the full space dimension `3 d_k`.
#[test]
fn projection_system_dimension_identity() {
    let mut r = rng(16);
    let dom = BasisDomain::from_tet(random_tet(&mut r));
    for k in [1usize, 2, 3] {
        let curl_k = curl_range_subspace(&dom, k).dim;
        let perp1 = {
            let range = curl_range_subspace(&dom, k + 1);
            orth_complement(&range, &orthonormal_basis(&dom, k, 3)).dim
        };
        let perp2 = {
            let enriched = pk_plus_grad_subspace(&dom, k);
            orth_complement(&enriched, &orthonormal_basis(&dom, k + 1, 3)).dim
        };
        assert_eq!(curl_k + perp1 + perp2, 3 * d_tet(k), "identity fails at k={k}");
    }
}

#[test]
fn nedelec_dimensions_and_constraint() {
    let mut r = rng(17);
    let dom = BasisDomain::from_tet(random_tet(&mut r));
    for (m, want) in [(0usize, 6usize), (1, 20), (2, 45)] {
        let ned = nedelec_subspace(&dom, m);
        assert_eq!(ned.dim, want, "Nedelec dim at m={m}");
    }
    // Every column of the constrained homogeneous summand satisfies
    // u(x) . (x - c) = 0 pointwise.
    for m in 0..=2usize {
        let part = nedelec_constrained_part(&dom, m);
        let want = (m + 1) * (m + 3) * (m + 4) / 2 - 3 * d_tet(m);
        assert_eq!(part.dim, want, "constrained dim at m={m}");
        let quad = dom.quad(2 * (m + 2) + 2);
        let c = dom.centroid();
        for x in &quad.points {
            for v in part.vec_values(x) {
                let radial = v.dot(&(x - c));
                assert!(radial.abs() < 1e-10, "Nedelec constraint violated: {radial:.2e}");
            }
        }
    }
}

#[test]
fn face_trace_dimensions() {
    let f = kuhn_face();
    let (n, m) = face_trace_space(&f, Variant::BPlus, 1);
    assert_eq!(n.dim, 10);
    assert_eq!(m.dim, d_face(2));
    let (n, _) = face_trace_space(&f, Variant::H, 1);
    assert_eq!(n.dim, 12);
    let (n, m) = face_trace_space(&f, Variant::Std, 0);
    assert_eq!(n.dim, 2);
    assert_eq!(m.dim, 1);
    for k in 0..=3usize {
        for variant in Variant::ALL {
            let (n, _) = face_trace_space(&f, variant, k);
            assert_eq!(n.dim, variant.n_dim(k));
        }
    }
}

/// The reduced trace space is origin-independent: bases built with the
/// homogeneity origin at the centroid and at a random in-plane point span
/// the same space.
#[test]
fn reduced_trace_origin_invariance() {
    let f = kuhn_face();
    let mut r = rng(18);
    let (t1, t2) = f.frame();
    let shift = f.centroid() + t1 * (r.gen::<f64>() - 0.5) + t2 * (r.gen::<f64>() - 0.5);
    for k in [1usize, 2] {
        let a = reduced_trace_space(&f, k, None);
        let b = reduced_trace_space(&f, k, Some(shift));
        assert_eq!(a.dim, b.dim);
        // Mutual containment via ambient coordinates (same ambient space).
        let pa = &a.coeff * a.coeff.transpose();
        let pb = &b.coeff * b.coeff.transpose();
        let in_b = (&pb * &a.coeff - &a.coeff).abs().max();
        let in_a = (&pa * &b.coeff - &b.coeff).abs().max();
        assert!(in_b < tol::SUBSPACE_RESIDUAL, "a not in b: {in_b:.2e}");
        assert!(in_a < tol::SUBSPACE_RESIDUAL, "b not in a: {in_a:.2e}");
    }
}

/// Space compatibility conditions hold for every variant and admissible
/// degree on random tets.
#[test]
fn inclusion_conditions_all_variants() {
    let mut r = rng(19);
    let tets: Vec<_> = (0..10).map(|_| random_tet(&mut r)).collect();
    for variant in Variant::ALL {
        let kmin = if variant.reduced_traces() { 1 } else { 0 };
        for k in kmin..=K_MAX {
            for (i, verts) in tets.iter().enumerate() {
                let report = check_inclusions(variant, k, *verts);
                assert!(
                    report.max() < tol::SUBSPACE_RESIDUAL,
                    "{} k={k} tet {i}: residuals {:?}",
                    variant.name(),
                    report
                );
            }
        }
    }
}

/// The reduced trace spaces with k=0 (used on the corner-singularity
/// domain) still satisfy the compatibility conditions.
#[test]
fn inclusion_conditions_reduced_k0() {
    let mut r = rng(20);
    for _ in 0..3 {
        let verts = random_tet(&mut r);
        for variant in [Variant::BPlus, Variant::HPlus] {
            let report = check_inclusions(variant, 0, verts);
            assert!(report.max() < tol::SUBSPACE_RESIDUAL, "{:?}", report);
        }
    }
}

#[test]
fn element_spaces_on_mesh_and_standalone() {
    let mesh = maxhdg::mesh::build_cube_mesh(1);
    let es = ElementSpaces::on_mesh(&mesh, 0, Variant::HPlus, 1);
    assert_eq!(es.w.dim, 3 * d_tet(1));
    assert_eq!(es.v.dim, 3 * d_tet(2));
    assert_eq!(es.q.dim, d_tet(2));
    assert_eq!(es.faces.len(), 4);
    for face in &es.faces {
        assert_eq!(face.n_space.dim, 10);
        assert_eq!(face.m_space.dim, d_face(2));
        assert!(face.mesh_face.is_some());
        // Outward normal is a unit vector.
        assert!((face.outward_normal().norm() - 1.0).abs() < 1e-14);
    }
    let es2 = ElementSpaces::standalone(mesh.tet_vertices(0), Variant::HPlus, 1);
    assert_eq!(es2.v.dim, es.v.dim);
}
