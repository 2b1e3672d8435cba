//! Mesh construction invariants: counts, volumes, orientation, frames.

use maxhdg::mesh::*;
use maxhdg::tol;
use nalgebra::Vector3;
use proptest::prelude::*;

#[test]
fn cube_n1_counts() {
    let m = build_cube_mesh(1);
    assert_eq!(m.tets.len(), 6);
    assert_eq!(m.vertices.len(), 8);
    assert_eq!(m.faces.len(), 18);
    assert_eq!(m.num_boundary_faces(), 12);
    assert_eq!(m.interior_faces().len(), 6);
}

#[test]
fn cube_counts_formulas() {
    // 6n^3 tets x 4 slots; 12n^2 boundary triangles; interior shared by 2.
    for n in 1..=3usize {
        let m = build_cube_mesh(n);
        assert_eq!(m.tets.len(), 6 * n * n * n);
        assert_eq!(m.vertices.len(), (n + 1) * (n + 1) * (n + 1));
        assert_eq!(m.num_boundary_faces(), 12 * n * n);
        assert_eq!(m.interior_faces().len(), 12 * n * n * n - 6 * n * n);
    }
}

#[test]
fn cube_volume() {
    for n in [1usize, 2, 3] {
        let m = build_cube_mesh(n);
        let total: f64 = (0..m.tets.len()).map(|e| m.tet_volume(e)).sum();
        assert!((total - 1.0).abs() < tol::MESH_VOLUME_REL);
    }
}

#[test]
fn lshape_counts_and_volume() {
    for n in [1usize, 2] {
        let m = build_lshape_mesh(n);
        assert_eq!(m.tets.len(), 18 * n * n * n);
        let total: f64 = (0..m.tets.len()).map(|e| m.tet_volume(e)).sum();
        assert!((total / 3.0 - 1.0).abs() < tol::MESH_VOLUME_REL);
    }
}

#[test]
fn lshape_axis_vertices_exact() {
    let m = build_lshape_mesh(2);
    let mut count = 0;
    for v in &m.vertices {
        if v.x.abs() <= tol::AXIS_TOL && v.y.abs() <= tol::AXIS_TOL {
            // Construction places re-entrant-edge vertices exactly.
            assert_eq!(v.x, 0.0);
            assert_eq!(v.y, 0.0);
            count += 1;
        }
    }
    assert_eq!(count, 3); // z = 0, 1/2, 1
}

#[test]
fn mesh_h_values() {
    for n in [1usize, 2, 4] {
        let m = build_cube_mesh(n);
        let h = m.h_max();
        assert!((h - 3.0f64.sqrt() / n as f64).abs() < 1e-15 * 3.0f64.sqrt());
    }
}

#[test]
fn refinement_halves_h_exactly() {
    let h1 = build_cube_mesh(1).h_max();
    let h2 = build_cube_mesh(2).h_max();
    let h4 = build_cube_mesh(4).h_max();
    assert_eq!(h2, h1 / 2.0);
    assert_eq!(h4, h2 / 2.0);
    let l1 = build_lshape_mesh(1).h_max();
    let l2 = build_lshape_mesh(2).h_max();
    assert_eq!(l2, l1 / 2.0);
}

#[test]
fn shape_metrics_examples() {
    // Kuhn tet: diameter is the cube diagonal.
    let verts = vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(1.0, 1.0, 0.0),
        Vector3::new(1.0, 1.0, 1.0),
    ];
    let m = Mesh::from_tets(DomainKind::Custom, 0, verts, vec![[0, 1, 2, 3]]);
    let sm = m.shape_metrics(0);
    assert!((sm.h - 3.0f64.sqrt()).abs() < 1e-15);
    assert!(sm.h > sm.inradius && sm.inradius > 0.0);
    assert!(sm.face_area_ratio >= 1.0);
    assert!(sm.chunkiness > 0.0);

    // Regular tetrahedron with unit edges (alternating cube corners
    // scaled by 1/(2 sqrt 2)): h = 1.
    let s = 1.0 / (2.0 * 2.0f64.sqrt());
    let verts = vec![
        Vector3::new(s, s, s),
        Vector3::new(s, -s, -s),
        Vector3::new(-s, s, -s),
        Vector3::new(-s, -s, s),
    ];
    let m = Mesh::from_tets(DomainKind::Custom, 0, verts, vec![[0, 1, 3, 2]]);
    let sm = m.shape_metrics(0);
    assert!((sm.h - 1.0).abs() < 1e-12, "regular tet h = {}", sm.h);
    assert!((sm.face_area_ratio - 1.0).abs() < 1e-12);
}

/// Outward normals recomputed from raw geometry agree with the stored
/// (face, sign) convention; the two sides of an interior face are
/// antiparallel.
#[test]
fn outward_normals_consistent() {
    for mesh in [build_cube_mesh(2), build_lshape_mesh(1)] {
        for e in 0..mesh.tets.len() {
            let verts = mesh.tet_vertices(e);
            for loc in 0..4 {
                let pts: Vec<Vector3<f64>> =
                    (0..4).filter(|&i| i != loc).map(|i| verts[i]).collect();
                let mut n = (pts[1] - pts[0]).cross(&(pts[2] - pts[0])).normalize();
                let fc = (pts[0] + pts[1] + pts[2]) / 3.0;
                if n.dot(&(fc - verts[loc])) < 0.0 {
                    n = -n;
                }
                let stored = mesh.outward_normal(e, loc);
                assert!(
                    (n.dot(&stored) - 1.0).abs() < tol::NORMAL_ANTIPARALLEL,
                    "normal mismatch elem {e} face {loc}"
                );
            }
        }
        for &f in &mesh.interior_faces() {
            let face = &mesh.faces[f];
            let lo = face.elem_lo;
            let hi = face.elem_hi.unwrap();
            let find = |e: usize| {
                mesh.tet_faces[e]
                    .iter()
                    .position(|fr| fr.face == f)
                    .expect("face not found in element")
            };
            let n_lo = mesh.outward_normal(lo, find(lo));
            let n_hi = mesh.outward_normal(hi, find(hi));
            assert!((n_lo.dot(&n_hi) + 1.0).abs() < tol::NORMAL_ANTIPARALLEL);
        }
    }
}

#[test]
fn face_frames_right_handed_and_deterministic() {
    let mesh = build_cube_mesh(2);
    for f in &mesh.faces {
        assert!((f.t1.norm() - 1.0).abs() < 1e-14);
        assert!((f.t2.norm() - 1.0).abs() < 1e-14);
        assert!(f.t1.dot(&f.t2).abs() < 1e-14);
        assert!((f.t1.cross(&f.t2).dot(&f.normal) - 1.0).abs() < 1e-12);
    }
    // Frame is invariant under vertex-order permutation.
    let pts = [
        Vector3::new(0.3, 0.1, 0.2),
        Vector3::new(1.1, 0.2, 0.4),
        Vector3::new(0.2, 0.9, 0.8),
    ];
    let n = (pts[1] - pts[0]).cross(&(pts[2] - pts[0])).normalize();
    let (t1a, t2a) = canonical_face_frame(pts, &n);
    let (t1b, t2b) = canonical_face_frame([pts[2], pts[0], pts[1]], &n);
    assert_eq!(t1a, t1b);
    assert_eq!(t2a, t2b);
}

#[test]
fn axis_touch_classification() {
    let a = Vector3::new(0.0, 0.0, 0.0);
    let b = Vector3::new(0.0, 0.0, 1.0);
    let c = Vector3::new(1.0, 0.0, 0.5);
    let d = Vector3::new(0.5, 0.5, 0.5);
    assert_eq!(axis_touch(&[d, c]), AxisTouch::None);
    assert_eq!(axis_touch(&[c, a, d]), AxisTouch::Vertex(1));
    assert_eq!(axis_touch(&[a, c, b, d]), AxisTouch::Edge([0, 2]));
}

#[test]
fn geometry_hash_distinguishes() {
    let a = build_cube_mesh(1).geometry_hash();
    let b = build_cube_mesh(1).geometry_hash();
    let c = build_cube_mesh(2).geometry_hash();
    let l = build_lshape_mesh(1).geometry_hash();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_ne!(a, l);
}

#[test]
fn vtk_export_wellformed() {
    let mesh = build_cube_mesh(1);
    let mut out = Vec::new();
    mesh.write_vtk(&mut out).unwrap();
    let s = String::from_utf8(out).unwrap();
    assert!(s.starts_with("# vtk DataFile Version 3.0"));
    assert!(s.contains("POINTS 8 double"));
    assert!(s.contains("CELLS 6 30"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn prop_positive_volumes_and_counts(n in 1usize..=3, lshape in any::<bool>()) {
        let mesh = if lshape { build_lshape_mesh(n) } else { build_cube_mesh(n) };
        let factor = if lshape { 18 } else { 6 };
        prop_assert_eq!(mesh.tets.len(), factor * n * n * n);
        for e in 0..mesh.tets.len() {
            prop_assert!(mesh.tet_volume(e) > 0.0);
        }
        // Every face has one or two owners and consistent signs.
        for e in 0..mesh.tets.len() {
            for fr in &mesh.tet_faces[e] {
                let f = &mesh.faces[fr.face];
                prop_assert!(f.elem_lo == e || f.elem_hi == Some(e));
            }
        }
    }
}
