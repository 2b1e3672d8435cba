//! Scheme checks: local operator structure, a discrete integration-by-parts
//! oracle, skeleton bookkeeping, uniqueness of the homogeneous problem,
//! exact reproduction of polynomial solutions, an independently assembled
//! uncondensed cross-check, the kernel-trace admissibility probe,
//! stabilization-rule semantics, and export round-trips.

mod common;

use maxhdg::mesh::{build_cube_mesh, build_lshape_mesh, DomainKind, Mesh};
use maxhdg::polyspace::{d_face, face_trace_space, ElementSpaces, Variant};
use maxhdg::projections::{
    face_project_pn, l2_error_scalar, l2_error_vec, ScalarField, StabilizationSpec, VecField,
};
use maxhdg::scheme::{
    assemble_global, assemble_local, kernel_trace_condition, read_checkpoint, solve_direct,
    solve_hdg, solve_iterative, write_checkpoint, write_solution_vtk, FaceTauOverride,
    SchemeError, SolveOptions, SolverKind, TauBase, TauRule, VariantConfig,
};
use nalgebra::{DMatrix, DVector, Vector3};

// ---------------------------------------------------------------------
// Shared fixtures.
// ---------------------------------------------------------------------

fn zero_vec(_: &Vector3<f64>) -> Vector3<f64> {
    Vector3::zeros()
}

/// Divergence-free linear field: an exact solution every variant with rich
/// enough trace spaces must reproduce to machine precision.
fn u_lin(x: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(
        2.0 + x.y + 2.0 * x.z,
        -1.0 + 3.0 * x.x - x.z,
        0.5 + 2.0 * x.x + x.y,
    )
}

/// Curl of [`u_lin`] (constant); the matching pressure is identically zero
/// and the matching volume load is `curl w = 0`.
fn w_lin(_: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(2.0, 0.0, 2.0)
}

/// Domain-outward unit normal of the boundary plane through `x`,
/// identified as the nearest boundary-face plane. Face quadrature points
/// lie on their own plane up to roundoff, while graded data rules can place
/// points as close as ~1e-10 to a *different* plane, so classification is
/// by minimum distance with an explicit separation check rather than by a
/// fixed tolerance.
fn boundary_normal(mesh: &Mesh, x: &Vector3<f64>) -> Vector3<f64> {
    let mut best_d = f64::INFINITY;
    let mut best_face = 0usize;
    for (i, face) in mesh.faces.iter().enumerate() {
        if !face.is_boundary() {
            continue;
        }
        let d = (x - face.centroid).dot(&face.normal).abs();
        if d < best_d {
            best_d = d;
            best_face = i;
        }
    }
    let bf = &mesh.faces[best_face];
    assert!(best_d < 1e-9, "point {x:?} is not on the boundary");
    let mut second = f64::INFINITY;
    for face in &mesh.faces {
        if !face.is_boundary() {
            continue;
        }
        let same_plane = (face.normal - bf.normal).norm() < 1e-9
            && (face.centroid - bf.centroid).dot(&bf.normal).abs() < 1e-9;
        if !same_plane {
            second = second.min((x - face.centroid).dot(&face.normal).abs());
        }
    }
    assert!(
        second > 10.0 * best_d.max(1e-15),
        "ambiguous boundary plane at {x:?} (best {best_d:.3e}, next {second:.3e})"
    );
    bf.normal
}

/// Tangential boundary datum `g = n x u` for the prescribed exact field.
fn boundary_g<'a>(
    mesh: &'a Mesh,
    u: fn(&Vector3<f64>) -> Vector3<f64>,
) -> impl Fn(&Vector3<f64>) -> Vector3<f64> + Sync + 'a {
    move |x| boundary_normal(mesh, x).cross(&u(x))
}

fn uniform_tau(tau_t: f64, tau_n: f64) -> StabilizationSpec {
    StabilizationSpec::uniform(tau_t, tau_n)
}

/// Worst per-element L2 error of a solved state against exact fields.
fn max_field_error(
    state: &maxhdg::scheme::SolvedState,
    u: fn(&Vector3<f64>) -> Vector3<f64>,
    w: fn(&Vector3<f64>) -> Vector3<f64>,
    p: fn(&Vector3<f64>) -> f64,
) -> f64 {
    let mut worst = 0.0_f64;
    for (es, sol) in state.spaces.iter().zip(&state.elems) {
        let eu = l2_error_vec(&VecField { basis: es.v.clone(), coeffs: sol.u.clone() }, &u);
        let ew = l2_error_vec(&VecField { basis: es.w.clone(), coeffs: sol.w.clone() }, &w);
        let ep = l2_error_scalar(&ScalarField { basis: es.q.clone(), coeffs: sol.p.clone() }, &p);
        worst = worst.max(eu).max(ew).max(ep);
    }
    worst
}

// ---------------------------------------------------------------------
// Local operator structure.
// ---------------------------------------------------------------------

/// Equal-order degree-0 elements carry 3 + 3 + 1 = 7 volume unknowns and
/// 4 x (2 + 1) = 12 trace unknowns.
#[test]
fn std_k0_local_operator_dimensions() {
    let mut rng = common::rng(101);
    let es = ElementSpaces::standalone(common::random_tet(&mut rng), Variant::Std, 0);
    let lop = assemble_local(0, &es, &uniform_tau(1.0, 1.0), &|_| Vector3::zeros()).unwrap();
    assert_eq!((lop.nw, lop.nv, lop.nq), (3, 3, 1));
    assert_eq!(lop.a.nrows(), 7);
    assert_eq!(lop.a.ncols(), 7);
    assert_eq!(lop.nlambda(), 12);
    assert_eq!(lop.face_off, [0, 3, 6, 9, 12]);
    assert_eq!(lop.b.shape(), (7, 12));
    assert_eq!(lop.c.shape(), (12, 7));
    assert_eq!(lop.d.shape(), (12, 12));
    assert_eq!(lop.s.shape(), (12, 12));
}

/// A vanishing volume load produces an exactly zero local right-hand side,
/// before and after condensation.
#[test]
fn local_load_vanishes_for_zero_forcing() {
    let mut rng = common::rng(102);
    for &(variant, k) in &[(Variant::Std, 1), (Variant::H, 1), (Variant::BPlus, 2)] {
        let es = ElementSpaces::standalone(common::random_tet(&mut rng), variant, k);
        let lop = assemble_local(0, &es, &uniform_tau(2.0, 0.5), &|_| Vector3::zeros()).unwrap();
        assert_eq!(lop.load.norm(), 0.0);
        assert_eq!(lop.condensed_load.norm(), 0.0);
    }
}

/// Discrete integration by parts: `(curl w, v)_K` must equal
/// `(w, curl v)_K + <n x w, v>_dK` when both sides are assembled
/// independently with the scheme's own quadrature rules. This pins the
/// orientation and sign conventions used by the face coupling blocks.
#[test]
fn discrete_integration_by_parts() {
    let mut rng = common::rng(103);
    for &(variant, k) in &[(Variant::Std, 0), (Variant::Std, 2), (Variant::H, 1), (Variant::HPlus, 1)]
    {
        for _ in 0..3 {
            let es = ElementSpaces::standalone(common::random_tet(&mut rng), variant, k);
            let (nw, nv) = (es.w.dim, es.v.dim);
            let mut lhs: DMatrix<f64> = DMatrix::zeros(nv, nw);
            let mut rhs: DMatrix<f64> = DMatrix::zeros(nv, nw);
            let vq = es.tet.quad(2 * (k + 2));
            for (x, wgt) in vq.points.iter().zip(&vq.weights) {
                let wvals = es.w.vec_values(x);
                let wcurls = es.w.curls(x);
                let vvals = es.v.vec_values(x);
                let vcurls = es.v.curls(x);
                for i in 0..nv {
                    for j in 0..nw {
                        lhs[(i, j)] += wgt * wcurls[j].dot(&vvals[i]);
                        rhs[(i, j)] += wgt * wvals[j].dot(&vcurls[i]);
                    }
                }
            }
            for face in &es.faces {
                let n = face.outward_normal();
                let fq = face.dom.quad(2 * (k + 2));
                for (x, wgt) in fq.points.iter().zip(&fq.weights) {
                    let wvals = es.w.vec_values(x);
                    let vvals = es.v.vec_values(x);
                    for i in 0..nv {
                        for j in 0..nw {
                            rhs[(i, j)] += wgt * n.cross(&wvals[j]).dot(&vvals[i]);
                        }
                    }
                }
            }
            let diff = (&lhs - &rhs).abs().max();
            assert!(diff < 1e-10, "{} k={k}: IBP defect {diff:.3e}", variant.name());
        }
    }
}

// ---------------------------------------------------------------------
// Skeleton bookkeeping.
// ---------------------------------------------------------------------

/// Independent combinatorial face count: collect sorted vertex triples from
/// the tets and count duplicates.
fn count_faces(mesh: &Mesh) -> (usize, usize) {
    use std::collections::HashMap;
    let mut seen: HashMap<[usize; 3], usize> = HashMap::new();
    for t in &mesh.tets {
        for omit in 0..4 {
            let mut tri: Vec<usize> = (0..4).filter(|&i| i != omit).map(|i| t[i]).collect();
            tri.sort_unstable();
            *seen.entry([tri[0], tri[1], tri[2]]).or_insert(0) += 1;
        }
    }
    let total = seen.len();
    let interior = seen.values().filter(|&&c| c == 2).count();
    assert!(seen.values().all(|&c| c <= 2), "face shared by > 2 tets");
    (total, interior)
}

/// The unit-cube mesh at n = 1 has 6 interior faces; with degree-0
/// equal-order traces (2 + 1 unknowns per face) the skeleton carries 18
/// unknowns. Larger meshes and other variants must match the block-size
/// formula and an independent combinatorial face count.
#[test]
fn skeleton_dof_counts() {
    let meshes = [build_cube_mesh(1), build_cube_mesh(2), build_lshape_mesh(1)];
    for mesh in &meshes {
        let (total, interior) = count_faces(mesh);
        assert_eq!(mesh.faces.len(), total);
        assert_eq!(mesh.interior_faces().len(), interior);
        for &(variant, k) in &[(Variant::Std, 0), (Variant::B, 1), (Variant::HPlus, 1)] {
            let cfg = VariantConfig::new(variant, k, TauRule::default());
            let asm = assemble_global(mesh, &cfg, &zero_vec, &zero_vec, 1).unwrap();
            let block = variant.n_dim(k) + d_face(variant.m_degree(k));
            assert_eq!(asm.skeleton.ndofs, interior * block);
            assert_eq!(asm.skeleton.ifaces.len(), interior);
        }
    }
    let cube1 = &meshes[0];
    assert_eq!(cube1.tets.len(), 6);
    assert_eq!(cube1.interior_faces().len(), 6);
    let cfg = VariantConfig::new(Variant::Std, 0, TauRule::default());
    let asm = assemble_global(cube1, &cfg, &zero_vec, &zero_vec, 1).unwrap();
    assert_eq!(asm.skeleton.ndofs, 18);
}

/// A one-element mesh has no interior faces: the skeleton is empty and the
/// solution comes straight from the local solve with folded boundary data.
/// The linear exact solution is reproduced to machine precision.
#[test]
fn single_element_empty_skeleton() {
    let verts = vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
        Vector3::new(0.0, 0.0, 1.0),
    ];
    let mesh = Mesh::from_tets(DomainKind::Custom, 1, verts, vec![[0, 1, 2, 3]]);
    assert_eq!(mesh.interior_faces().len(), 0);
    let cfg = VariantConfig::new(Variant::HPlus, 1, TauRule::default());
    let g = boundary_g(&mesh, u_lin);
    let state = solve_hdg(&mesh, &cfg, &zero_vec, &g, &SolveOptions::default()).unwrap();
    assert_eq!(state.stats.skeleton_dofs, 0);
    let err = max_field_error(&state, u_lin, w_lin, |_| 0.0);
    assert!(err < 1e-9, "single-element reproduction error {err:.3e}");
}

// ---------------------------------------------------------------------
// Homogeneous problem and polynomial reproduction.
// ---------------------------------------------------------------------

/// With `f = 0` and `g = 0` the folded right-hand side is exactly zero and
/// every variant's discrete solution vanishes: the condensed systems are
/// uniquely solvable across the admissible stabilization rules.
#[test]
fn homogeneous_problem_has_zero_solution() {
    let mesh = build_cube_mesh(1);
    let cases: &[(Variant, usize, &str)] = &[
        (Variant::Std, 0, "table2-default"),
        (Variant::Std, 1, "test-C"),
        (Variant::B, 0, "table2-default"),
        (Variant::B, 1, "test-E"),
        (Variant::H, 0, "table2-default"),
        (Variant::H, 1, "test-B"),
        (Variant::BPlus, 1, "table2-default"),
        (Variant::HPlus, 1, "test-B"),
        (Variant::HPlus, 2, "table2-default"),
    ];
    for &(variant, k, rule) in cases {
        let cfg = VariantConfig::new(variant, k, TauRule::parse(rule).unwrap());
        let asm = assemble_global(&mesh, &cfg, &zero_vec, &zero_vec, 1).unwrap();
        for rhs in &asm.skeleton.rhs {
            assert!(rhs.norm() < 1e-15, "{} k={k} {rule}: nonzero rhs", variant.name());
        }
        let state = solve_hdg(&mesh, &cfg, &zero_vec, &zero_vec, &SolveOptions::default())
            .unwrap_or_else(|e| panic!("{} k={k} {rule}: {e}", variant.name()));
        let mut worst = 0.0_f64;
        for sol in &state.elems {
            worst = worst.max(sol.w.norm()).max(sol.u.norm()).max(sol.p.norm());
        }
        for fs in &state.faces {
            worst = worst.max(fs.uhat.norm()).max(fs.phat.norm());
        }
        assert!(
            worst < 1e-10,
            "{} k={k} {rule}: homogeneous solution norm {worst:.3e}",
            variant.name()
        );
    }
}

/// A global divergence-free linear field with constant curl and zero
/// pressure lies in every discrete space once the trace space contains
/// linear tangential fields; the scheme must then reproduce it exactly.
#[test]
fn polynomial_reproduction_all_variants() {
    let mesh = build_cube_mesh(1);
    let g = boundary_g(&mesh, u_lin);
    let cases: &[(Variant, usize)] = &[
        (Variant::Std, 1),
        (Variant::Std, 2),
        (Variant::B, 0),
        (Variant::B, 1),
        (Variant::H, 0),
        (Variant::H, 1),
        (Variant::BPlus, 1),
        (Variant::HPlus, 1),
    ];
    for &(variant, k) in cases {
        let cfg = VariantConfig::new(variant, k, TauRule::default());
        let state = solve_hdg(&mesh, &cfg, &zero_vec, &g, &SolveOptions::default()).unwrap();
        let err = max_field_error(&state, u_lin, w_lin, |_| 0.0);
        assert!(err < 1e-9, "{} k={k}: reproduction error {err:.3e}", variant.name());
    }
}

/// For an exactly reproduced solution the interior traces equal the face
/// projection of the tangential component of `u`, and the pressure traces
/// vanish.
#[test]
fn reproduced_traces_match_face_projection() {
    let mesh = build_cube_mesh(1);
    let g = boundary_g(&mesh, u_lin);
    let cfg = VariantConfig::new(Variant::HPlus, 1, TauRule::default());
    let state = solve_hdg(&mesh, &cfg, &zero_vec, &g, &SolveOptions::default()).unwrap();
    for (e, es) in state.spaces.iter().enumerate() {
        for (loc, face) in es.faces.iter().enumerate() {
            let fidx = mesh.tet_faces[e][loc].face;
            let n = face.outward_normal();
            let exact = face_project_pn(&face.n_space, &|x: &Vector3<f64>| {
                let u = u_lin(x);
                u - n * u.dot(&n)
            });
            let diff = (&state.faces[fidx].uhat - &exact).norm();
            assert!(diff < 1e-9, "face {fidx}: trace defect {diff:.3e}");
            assert!(state.faces[fidx].phat.norm() < 1e-9);
        }
    }
}

/// The variant with BDM-type structure stays solvable and exact with the
/// normal stabilization switched off entirely.
#[test]
fn b_variant_solvable_with_zero_tau_n() {
    for n in [1usize, 2] {
        let mesh = build_cube_mesh(n);
        let g = boundary_g(&mesh, u_lin);
        let cfg = VariantConfig::new(Variant::B, 1, TauRule::base(TauBase::TestE));
        let state = solve_hdg(&mesh, &cfg, &zero_vec, &g, &SolveOptions::default()).unwrap();
        assert!(state.stats.rel_residual < 1e-10);
        let err = max_field_error(&state, u_lin, w_lin, |_| 0.0);
        assert!(err < 1e-9, "n={n}: error {err:.3e} with tau_n = 0");
    }
}

// ---------------------------------------------------------------------
// Uncondensed cross-check.
// ---------------------------------------------------------------------

fn add_block(m: &mut DMatrix<f64>, r0: usize, c0: usize, blk: &DMatrix<f64>) {
    for j in 0..blk.ncols() {
        for i in 0..blk.nrows() {
            m[(r0 + i, c0 + j)] += blk[(i, j)];
        }
    }
}

/// Assembles and solves the full (uncondensed) system over all volume and
/// interior-trace unknowns with a dense factorization, independently of the
/// condensation path, and returns per-element volume coefficients plus
/// per-interior-face trace coefficients.
#[allow(clippy::type_complexity)]
fn monolithic_solve(
    mesh: &Mesh,
    cfg: &VariantConfig,
    f: &(dyn Fn(&Vector3<f64>) -> Vector3<f64> + Sync),
    g: &(dyn Fn(&Vector3<f64>) -> Vector3<f64> + Sync),
) -> (Vec<DVector<f64>>, Vec<Option<DVector<f64>>>) {
    let ne = mesh.tets.len();
    let nf = mesh.faces.len();
    let mut node: Vec<Option<usize>> = vec![None; nf];
    let mut n_interior = 0;
    for (i, face) in mesh.faces.iter().enumerate() {
        if !face.is_boundary() {
            node[i] = Some(n_interior);
            n_interior += 1;
        }
    }
    let block = cfg.variant.n_dim(cfg.k) + d_face(cfg.variant.m_degree(cfg.k));

    let mut lops = Vec::with_capacity(ne);
    let mut bvals: Vec<Option<DVector<f64>>> = vec![None; nf];
    let mut vol_off = vec![0usize];
    for e in 0..ne {
        let es = ElementSpaces::on_mesh(mesh, e, cfg.variant, cfg.k);
        let tau = cfg.tau.resolve(mesh, e);
        let lop = assemble_local(e, &es, &tau, &|x| f(x)).unwrap();
        for face in &es.faces {
            if face.boundary {
                let n = face.outward_normal();
                let uhat = face_project_pn(&face.n_space, &|x: &Vector3<f64>| g(x).cross(&n));
                let mut lam = DVector::zeros(block);
                lam.rows_mut(0, uhat.len()).copy_from(&uhat);
                bvals[face.mesh_face.unwrap()] = Some(lam);
            }
        }
        vol_off.push(vol_off[e] + lop.a.nrows());
        lops.push(lop);
    }
    let nvol = *vol_off.last().unwrap();
    let ntot = nvol + n_interior * block;
    let tr0 = |t: usize| nvol + t * block;

    let mut m: DMatrix<f64> = DMatrix::zeros(ntot, ntot);
    let mut rhs: DVector<f64> = DVector::zeros(ntot);
    for e in 0..ne {
        let lop = &lops[e];
        let vo = vol_off[e];
        let nx = lop.a.nrows();
        add_block(&mut m, vo, vo, &lop.a);
        for i in 0..nx {
            rhs[vo + i] += lop.load[i];
        }
        for (loc, fr) in mesh.tet_faces[e].iter().enumerate() {
            let off = lop.face_off[loc];
            let w = lop.face_off[loc + 1] - off;
            let bcols = lop.b.columns(off, w).into_owned();
            match node[fr.face] {
                Some(t) => add_block(&mut m, vo, tr0(t), &bcols),
                None => {
                    let fold = &bcols * bvals[fr.face].as_ref().unwrap();
                    for i in 0..nx {
                        rhs[vo + i] -= fold[i];
                    }
                }
            }
            // Flux equations live only on interior faces.
            let Some(t) = node[fr.face] else { continue };
            let crows = lop.c.rows(off, w).into_owned();
            add_block(&mut m, tr0(t), vo, &crows);
            for (loc2, fr2) in mesh.tet_faces[e].iter().enumerate() {
                let off2 = lop.face_off[loc2];
                let w2 = lop.face_off[loc2 + 1] - off2;
                let dblk = lop.d.view((off, off2), (w, w2)).into_owned();
                match node[fr2.face] {
                    Some(t2) => add_block(&mut m, tr0(t), tr0(t2), &dblk),
                    None => {
                        let fold = &dblk * bvals[fr2.face].as_ref().unwrap();
                        for i in 0..w {
                            rhs[tr0(t) + i] -= fold[i];
                        }
                    }
                }
            }
        }
    }

    let lu = m.full_piv_lu();
    assert!(lu.is_invertible(), "monolithic system singular");
    let x = lu.solve(&rhs).expect("monolithic solve");
    let vols = (0..ne)
        .map(|e| x.rows(vol_off[e], vol_off[e + 1] - vol_off[e]).clone_owned())
        .collect();
    let traces = (0..nf)
        .map(|fi| node[fi].map(|t| x.rows(tr0(t), block).clone_owned()))
        .collect();
    (vols, traces)
}

/// Condensed and uncondensed assemblies of the same discrete system must
/// agree coefficient-for-coefficient. The monolithic path numbers unknowns
/// itself and solves with a dense factorization, so it shares nothing with
/// the condensation and skeleton-solver code beyond the local blocks.
#[test]
fn condensed_matches_monolithic() {
    let mesh = build_cube_mesh(1);
    let f = |x: &Vector3<f64>| Vector3::new(x.y * x.z + 0.3, x.x * x.x - x.z, x.x - 2.0 * x.y);
    let g = |x: &Vector3<f64>| Vector3::new(x.z, x.x, -x.y);
    let cases: &[(Variant, usize, &str)] = &[
        (Variant::Std, 1, "table2-default"),
        (Variant::B, 1, "test-E"),
        (Variant::HPlus, 1, "table2-default"),
    ];
    for &(variant, k, rule) in cases {
        let cfg = VariantConfig::new(variant, k, TauRule::parse(rule).unwrap());
        let state = solve_hdg(&mesh, &cfg, &f, &g, &SolveOptions::default()).unwrap();
        let (vols, traces) = monolithic_solve(&mesh, &cfg, &f, &g);
        let mut worst = 0.0_f64;
        for (e, sol) in state.elems.iter().enumerate() {
            let mono = &vols[e];
            let (nw, nv) = (sol.w.len(), sol.u.len());
            worst = worst.max((&sol.w - mono.rows(0, nw)).amax());
            worst = worst.max((&sol.u - mono.rows(nw, nv)).amax());
            worst = worst.max((&sol.p - mono.rows(nw + nv, sol.p.len())).amax());
        }
        for (fi, tr) in traces.iter().enumerate() {
            let Some(tr) = tr else { continue };
            let fs = &state.faces[fi];
            worst = worst.max((&fs.uhat - tr.rows(0, fs.uhat.len())).amax());
            worst = worst.max((&fs.phat - tr.rows(fs.uhat.len(), fs.phat.len())).amax());
        }
        assert!(
            worst < 1e-9,
            "{} k={k} {rule}: condensed vs monolithic max defect {worst:.3e}",
            variant.name()
        );
    }
}

/// The recovered volume coefficients satisfy the element-local equations
/// for the solved traces.
#[test]
fn recovered_interior_satisfies_local_equations() {
    let mesh = build_cube_mesh(1);
    let g = boundary_g(&mesh, u_lin);
    let f = |x: &Vector3<f64>| Vector3::new(x.y, -x.z, x.x * x.y);
    let cfg = VariantConfig::new(Variant::H, 1, TauRule::default());
    let state = solve_hdg(&mesh, &cfg, &f, &g, &SolveOptions::default()).unwrap();
    for e in 0..mesh.tets.len() {
        let es = ElementSpaces::on_mesh(&mesh, e, cfg.variant, cfg.k);
        let tau = cfg.tau.resolve(&mesh, e);
        let lop = assemble_local(e, &es, &tau, &|x| f(x)).unwrap();
        let mut lambda = DVector::zeros(lop.nlambda());
        for (loc, fr) in mesh.tet_faces[e].iter().enumerate() {
            let fs = &state.faces[fr.face];
            let off = lop.face_off[loc];
            lambda.rows_mut(off, fs.uhat.len()).copy_from(&fs.uhat);
            lambda
                .rows_mut(off + fs.uhat.len(), fs.phat.len())
                .copy_from(&fs.phat);
        }
        let sol = &state.elems[e];
        let mut x = DVector::zeros(lop.a.nrows());
        x.rows_mut(0, sol.w.len()).copy_from(&sol.w);
        x.rows_mut(sol.w.len(), sol.u.len()).copy_from(&sol.u);
        x.rows_mut(sol.w.len() + sol.u.len(), sol.p.len()).copy_from(&sol.p);
        let res = lop.interior_residual(&x, &lambda);
        assert!(res < 1e-10, "element {e}: local residual {res:.3e}");
    }
}

/// The preconditioned Krylov path must agree with the direct factorization.
#[test]
fn iterative_solver_matches_direct() {
    let mesh = build_cube_mesh(1);
    let g = boundary_g(&mesh, u_lin);
    let f = |x: &Vector3<f64>| Vector3::new(x.y, -x.z, x.x * x.y);
    let cfg = VariantConfig::new(Variant::H, 1, TauRule::default());
    let direct = solve_hdg(&mesh, &cfg, &f, &g, &SolveOptions::default()).unwrap();
    let iter_opts = SolveOptions { solver: SolverKind::Iterative, threads: 1 };
    let iterative = solve_hdg(&mesh, &cfg, &f, &g, &iter_opts).unwrap();
    assert!(direct.stats.rel_residual < 1e-10);
    assert!(iterative.stats.rel_residual < 1e-10);
    assert!(iterative.stats.iterations >= 1);
    let mut worst = 0.0_f64;
    for (a, b) in direct.elems.iter().zip(&iterative.elems) {
        worst = worst.max((&a.w - &b.w).amax());
        worst = worst.max((&a.u - &b.u).amax());
        worst = worst.max((&a.p - &b.p).amax());
    }
    for (a, b) in direct.faces.iter().zip(&iterative.faces) {
        worst = worst.max((&a.uhat - &b.uhat).amax());
        worst = worst.max((&a.phat - &b.phat).amax());
    }
    assert!(worst < 1e-6, "direct vs iterative max defect {worst:.3e}");
}

/// Multi-threaded local assembly accumulates in element order, so the
/// resulting solution is bitwise identical to the single-threaded one.
#[test]
fn threaded_assembly_is_deterministic() {
    let mesh = build_cube_mesh(2);
    let g = boundary_g(&mesh, u_lin);
    let f = |x: &Vector3<f64>| Vector3::new(x.y, -x.z, x.x * x.y);
    let cfg = VariantConfig::new(Variant::B, 1, TauRule::default());
    let one = solve_hdg(&mesh, &cfg, &f, &g, &SolveOptions::default()).unwrap();
    let four = solve_hdg(&mesh, &cfg, &f, &g, &SolveOptions { solver: SolverKind::Direct, threads: 4 })
        .unwrap();
    for (a, b) in one.elems.iter().zip(&four.elems) {
        assert_eq!(a.w, b.w);
        assert_eq!(a.u, b.u);
        assert_eq!(a.p, b.p);
    }
    for (a, b) in one.faces.iter().zip(&four.faces) {
        assert_eq!(a.uhat, b.uhat);
        assert_eq!(a.phat, b.phat);
    }
}

// ---------------------------------------------------------------------
// Kernel-trace condition.
// ---------------------------------------------------------------------

/// Every shipped trace-space pairing satisfies the kernel-trace condition:
/// tangential traces of curl-free discrete fields lie in the face trace
/// space. The curl-free subspace of a degree-d full polynomial space is the
/// gradient space of degree d+1, which fixes the expected kernel dimension.
#[test]
fn kernel_trace_condition_holds_for_shipped_variants() {
    let mut rng = common::rng(104);
    let tet = common::random_tet(&mut rng);
    for variant in Variant::ALL {
        for k in 0..=2usize {
            let es = ElementSpaces::standalone(tet, variant, k);
            let report = kernel_trace_condition(&es);
            assert!(
                report.holds,
                "{} k={k}: kernel-trace residual {:.3e}",
                variant.name(),
                report.residual
            );
            let vdeg = variant.v_degree(k);
            let expected = if vdeg == 0 {
                3
            } else {
                // dim grad P_{d+1} = dim P_{d+1} - 1.
                (vdeg + 2) * (vdeg + 3) * (vdeg + 4) / 6 - 1
            };
            assert_eq!(report.kernel_dim, expected, "{} k={k}", variant.name());
        }
    }
}

/// An undersized trace space violates the condition: degree-0 tangential
/// traces cannot represent the traces of curl-free quadratic fields.
#[test]
fn kernel_trace_condition_fails_for_undersized_traces() {
    let mut rng = common::rng(105);
    let mut es = ElementSpaces::standalone(common::random_tet(&mut rng), Variant::H, 1);
    for face in &mut es.faces {
        let (n_space, _) = face_trace_space(&face.dom, Variant::Std, 0);
        face.n_space = n_space;
    }
    let report = kernel_trace_condition(&es);
    assert!(!report.holds);
    assert!(report.residual > 1e-3, "residual {:.3e}", report.residual);
}

// ---------------------------------------------------------------------
// Stabilization rules and configuration validation.
// ---------------------------------------------------------------------

/// Parse / display round-trips of the stabilization mini-grammar.
#[test]
fn tau_rule_parse_and_display() {
    let cases: &[(&str, &str)] = &[
        ("table2-default", "table2-default"),
        ("test-A", "test-A"),
        ("test-b", "test-B"),
        ("test-E", "test-E"),
        ("exp:a=-1,b=1", "exp:a=-1,b=1"),
        ("exp:b=0.5,a=2", "exp:a=2,b=0.5"),
        ("face:3=2.5/h^2", "table2-default+face:3=2.5/h^2"),
        ("test-A+face:0=100000", "test-A+face:0=100000"),
    ];
    for &(input, canonical) in cases {
        let rule = TauRule::parse(input).unwrap();
        assert_eq!(rule.to_string(), canonical, "input {input}");
        let reparsed = TauRule::parse(&rule.to_string()).unwrap();
        assert_eq!(reparsed, rule, "display round-trip for {input}");
    }
}

#[test]
fn tau_rule_parse_errors() {
    for (input, needle) in [
        ("", "empty"),
        ("test-A+test-B", "more than one base"),
        ("bogus", "unknown tau rule"),
        ("test-F", "unknown test rule"),
        ("face:x=1", "invalid face index"),
        ("exp:a=1", "missing b"),
        ("exp:a=1,c=2", "unknown exponent key"),
        ("face:1", "not <idx>=<value>"),
    ] {
        let err = TauRule::parse(input).unwrap_err();
        assert!(err.contains(needle), "input {input:?}: error {err:?}");
    }
}

/// Base rules resolve to the documented per-face values; the one-face rule
/// targets the element's lowest global face index; explicit per-face
/// overrides beat the base and apply to both adjacent elements.
#[test]
fn tau_rule_resolution_semantics() {
    let mesh = build_cube_mesh(1);
    let e = 0usize;
    let h = mesh.tet_diameter(e);

    let a = TauRule::base(TauBase::TestA).resolve(&mesh, e);
    assert_eq!(a.tau_t, [1.0 / h; 4]);
    assert_eq!(a.tau_n, [h; 4]);
    let default = TauRule::default().resolve(&mesh, e);
    assert_eq!(default, a, "default rule matches the baseline values");

    let b = TauRule::base(TauBase::TestB).resolve(&mesh, e);
    let lowest = (0..4).min_by_key(|&i| mesh.tet_faces[e][i].face).unwrap();
    for i in 0..4 {
        let expect = if i == lowest { 1e5 / (h * h) } else { 0.0 };
        assert_eq!(b.tau_n[i], expect, "one-face rule, local face {i}");
    }

    let c = TauRule::base(TauBase::TestC).resolve(&mesh, e);
    assert_eq!(c.tau_n, [1e5 / (h * h); 4]);
    let e_rule = TauRule::base(TauBase::TestE).resolve(&mesh, e);
    assert_eq!(e_rule.tau_n, [0.0; 4]);

    let exps = TauRule::base(TauBase::Exponents { alpha: -1.0, beta: 1.0 }).resolve(&mesh, e);
    assert_eq!(exps.tau_t, [h; 4]);
    assert_eq!(exps.tau_n, [1.0 / h; 4]);

    // Pick an interior face and override it: both adjacent elements see the
    // override on the matching local face, and only there.
    let fidx = mesh.interior_faces()[0];
    let face = &mesh.faces[fidx];
    let rule = TauRule {
        base: TauBase::TestA,
        overrides: vec![FaceTauOverride { face: fidx, coef: 7.0, h_pow: 2 }],
    };
    for elem in [face.elem_lo, face.elem_hi.unwrap()] {
        let he = mesh.tet_diameter(elem);
        let spec = rule.resolve(&mesh, elem);
        for (loc, fr) in mesh.tet_faces[elem].iter().enumerate() {
            let expect = if fr.face == fidx { 7.0 / (he * he) } else { he };
            assert_eq!(spec.tau_n[loc], expect, "element {elem}, local face {loc}");
        }
    }
}

/// Static admissibility rejections, each with an actionable message.
#[test]
fn variant_config_rejections() {
    let reject = |variant, k, rule: &str, domain, needle: &str| {
        let cfg = VariantConfig::new(variant, k, TauRule::parse(rule).unwrap());
        match cfg.validate(domain) {
            Err(SchemeError::Config(msg)) => {
                assert!(msg.contains(needle), "message {msg:?} lacks {needle:?}")
            }
            other => panic!("expected config error, got {other:?}"),
        }
    };
    reject(Variant::BPlus, 0, "table2-default", DomainKind::Cube, "requires k >= 1");
    reject(Variant::HPlus, 0, "table2-default", DomainKind::Cube, "requires k >= 1");
    reject(Variant::Std, 1, "test-E", DomainKind::Cube, "tau_n != 0");
    reject(Variant::H, 1, "test-E", DomainKind::Cube, "tau_n != 0");
    reject(Variant::HPlus, 1, "test-E", DomainKind::Cube, "tau_n != 0");
    reject(Variant::Std, 4, "table2-default", DomainKind::Cube, "exceeds the supported maximum");
    reject(Variant::B, 1, "face:0=-1", DomainKind::Cube, "tau_n < 0");

    // Degree-0 reduced-trace runs are admitted on the singular benchmark.
    let cfg = VariantConfig::new(Variant::HPlus, 0, TauRule::default());
    assert!(cfg.validate(DomainKind::LShape).is_ok());
    assert!(cfg.validate(DomainKind::Cube).is_err());

    // Overriding every face of one element to zero starves a variant that
    // needs normal stabilization; the mesh-level check catches it.
    let mesh = build_cube_mesh(1);
    let overrides = mesh.tet_faces[0]
        .iter()
        .map(|fr| FaceTauOverride { face: fr.face, coef: 0.0, h_pow: 0 })
        .collect();
    let cfg = VariantConfig::new(
        Variant::H,
        1,
        TauRule { base: TauBase::TestA, overrides },
    );
    match cfg.validate_on_mesh(&mesh) {
        Err(SchemeError::Config(msg)) => {
            assert!(msg.contains("requires tau_n != 0 on some face"), "{msg:?}")
        }
        other => panic!("expected config error, got {other:?}"),
    }
    // The B variant tolerates the same overrides.
    let overrides = mesh.tet_faces[0]
        .iter()
        .map(|fr| FaceTauOverride { face: fr.face, coef: 0.0, h_pow: 0 })
        .collect();
    let cfg = VariantConfig::new(Variant::B, 1, TauRule { base: TauBase::TestA, overrides });
    assert!(cfg.validate_on_mesh(&mesh).is_ok());
}

// ---------------------------------------------------------------------
// Export round-trips.
// ---------------------------------------------------------------------

fn small_solved_state(mesh: &Mesh) -> maxhdg::scheme::SolvedState {
    let g = boundary_g(mesh, u_lin);
    let f = |x: &Vector3<f64>| Vector3::new(x.y, -x.z, x.x * x.y);
    let cfg = VariantConfig::new(Variant::B, 1, TauRule::default());
    solve_hdg(mesh, &cfg, &f, &g, &SolveOptions::default()).unwrap()
}

/// Checkpoints restore every coefficient bitwise.
#[test]
fn checkpoint_roundtrip() {
    let mesh = build_cube_mesh(1);
    let state = small_solved_state(&mesh);
    let mut buf: Vec<u8> = Vec::new();
    write_checkpoint(&mesh, &state, &mut buf).unwrap();
    let data = read_checkpoint(&mesh, &mut buf.as_slice()).unwrap();
    assert_eq!(data.variant, Variant::B);
    assert_eq!(data.k, 1);
    assert_eq!(data.mesh_hash, mesh.geometry_hash());
    assert_eq!(data.elems.len(), state.elems.len());
    for (sol, (w, u, p)) in state.elems.iter().zip(&data.elems) {
        assert_eq!(&sol.w, w);
        assert_eq!(&sol.u, u);
        assert_eq!(&sol.p, p);
    }
    for (a, b) in state.faces.iter().zip(&data.faces) {
        assert_eq!(a.uhat, b.uhat);
        assert_eq!(a.phat, b.phat);
    }
}

/// Checkpoints refuse mismatched meshes, foreign files, and truncation.
#[test]
fn checkpoint_rejects_bad_input() {
    let mesh = build_cube_mesh(1);
    let state = small_solved_state(&mesh);
    let mut buf: Vec<u8> = Vec::new();
    write_checkpoint(&mesh, &state, &mut buf).unwrap();

    let other = build_cube_mesh(2);
    let err = read_checkpoint(&other, &mut buf.as_slice()).unwrap_err();
    assert!(err.to_string().contains("does not match"), "{err}");

    let mut corrupt = buf.clone();
    corrupt[0] = b'X';
    let err = read_checkpoint(&mesh, &mut corrupt.as_slice()).unwrap_err();
    assert!(err.to_string().contains("bad magic"), "{err}");

    let truncated = &buf[..buf.len() / 2];
    let err = read_checkpoint(&mesh, &mut &truncated[..]).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{err}");
}

/// The VTK writer emits a parseable legacy header with one duplicated
/// point block per tet and all three solution fields.
#[test]
fn vtk_export_smoke() {
    let mesh = build_cube_mesh(1);
    let state = small_solved_state(&mesh);
    let mut buf: Vec<u8> = Vec::new();
    write_solution_vtk(&mesh, &state, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("# vtk DataFile Version 3.0"));
    assert!(text.contains("DATASET UNSTRUCTURED_GRID"));
    assert!(text.contains(&format!("POINTS {} double", 4 * mesh.tets.len())));
    assert!(text.contains("VECTORS u double"));
    assert!(text.contains("VECTORS w double"));
    assert!(text.contains("SCALARS p double 1"));
    let cell_lines = text.lines().filter(|l| *l == "10").count();
    assert_eq!(cell_lines, mesh.tets.len());
}

/// Both skeleton solvers run against an assembled system directly.
#[test]
fn skeleton_solvers_agree_on_assembled_system() {
    let mesh = build_cube_mesh(1);
    let g = boundary_g(&mesh, u_lin);
    let cfg = VariantConfig::new(Variant::Std, 1, TauRule::default());
    let asm = assemble_global(&mesh, &cfg, &zero_vec, &g, 1).unwrap();
    let (xd, stats_d) = solve_direct(&asm.skeleton).unwrap();
    let (xi, stats_i) = solve_iterative(&asm.skeleton).unwrap();
    assert_eq!(stats_d.skeleton_dofs, asm.skeleton.ndofs);
    assert_eq!(stats_i.skeleton_dofs, asm.skeleton.ndofs);
    let mut worst = 0.0_f64;
    for (a, b) in xd.iter().zip(&xi) {
        worst = worst.max((a - b).amax());
    }
    assert!(worst < 1e-8, "solver disagreement {worst:.3e}");
}
