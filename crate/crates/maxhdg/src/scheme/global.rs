//! Global skeleton assembly, the solve driver, and interior recovery.
//!
//! Interior skeleton faces carry the trace unknowns; boundary faces carry
//! known values (`uhat = P_N(g x n)`, `phat = 0`) that are folded into the
//! right-hand side. Each element's condensed Schur block couples the
//! element's faces pairwise, giving a block-sparse system with one dense
//! block per (face, face-of-shared-element) pair.

use super::local::{assemble_local, LocalOperator};
use super::solver::{solve_direct, solve_iterative, SolverKind};
use super::{SchemeError, VariantConfig};
use crate::mesh::Mesh;
use crate::polyspace::{d_face, ElementSpaces};
use crate::projections::{face_project_pn, StabilizationSpec};
use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Block-sparse skeleton system over the interior-face trace unknowns.
#[derive(Debug)]
pub struct SkeletonSystem {
    /// Interior mesh-face indices, node `i` of the system <-> `ifaces[i]`.
    pub ifaces: Vec<usize>,
    /// Inverse map: mesh face -> node index (None on the boundary).
    pub node_of_face: Vec<Option<usize>>,
    /// Block size per node (`dim N(F) + dim M(F)`).
    pub bsize: Vec<usize>,
    /// Total unknown count.
    pub ndofs: usize,
    /// Block rows: `mat[i][j]` is the dense `bsize[i] x bsize[j]` coupling.
    pub mat: Vec<BTreeMap<usize, DMatrix<f64>>>,
    /// Right-hand side, one segment per node.
    pub rhs: Vec<DVector<f64>>,
    /// Face centroids (ordering heuristic for the direct solver).
    pub centroids: Vec<Vector3<f64>>,
}

/// Per-element data retained for recovery after the heavyweight local
/// blocks are dropped.
#[derive(Debug)]
pub struct RecoveryData {
    a_inv_b: DMatrix<f64>,
    a_inv_load: DVector<f64>,
    face_off: [usize; 5],
    n_dims: [usize; 4],
}

/// Output of [`assemble_global`]: the skeleton system plus everything
/// recovery needs.
#[derive(Debug)]
pub struct Assembled {
    pub spaces: Vec<ElementSpaces>,
    pub taus: Vec<StabilizationSpec>,
    pub recovery: Vec<RecoveryData>,
    pub skeleton: SkeletonSystem,
    /// Folded boundary traces per mesh face (`Some` exactly on the
    /// boundary).
    pub boundary: Vec<Option<FaceSolution>>,
}

/// Volume coefficients of one element.
#[derive(Debug, Clone)]
pub struct ElementSolution {
    pub w: DVector<f64>,
    pub u: DVector<f64>,
    pub p: DVector<f64>,
}

/// Trace coefficients of one skeleton face.
#[derive(Debug, Clone)]
pub struct FaceSolution {
    pub uhat: DVector<f64>,
    pub phat: DVector<f64>,
}

/// Solver diagnostics of one run.
#[derive(Debug, Clone)]
pub struct SolveStats {
    pub skeleton_dofs: usize,
    /// Backward-error style relative residual of the skeleton solve.
    pub rel_residual: f64,
    /// Fill blocks created by the factorization (direct solver), or 0.
    pub fill_blocks: usize,
    /// Refinement steps (direct) or Krylov iterations (iterative).
    pub iterations: usize,
}

/// A complete discrete solution with the spaces needed to evaluate it.
#[derive(Debug)]
pub struct SolvedState {
    pub config: VariantConfig,
    pub spaces: Vec<ElementSpaces>,
    pub taus: Vec<StabilizationSpec>,
    pub elems: Vec<ElementSolution>,
    /// Trace coefficients for every mesh face (interior: solved; boundary:
    /// folded data).
    pub faces: Vec<FaceSolution>,
    pub stats: SolveStats,
}

/// Global solve options.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub solver: SolverKind,
    /// Thread budget for element-local assembly (the accumulation and the
    /// global solve stay single-threaded and deterministic).
    pub threads: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { solver: SolverKind::Direct, threads: 1 }
    }
}

struct ElemOut {
    es: ElementSpaces,
    tau: StabilizationSpec,
    s: DMatrix<f64>,
    condensed_load: DVector<f64>,
    recovery: RecoveryData,
    boundary: Vec<(usize, FaceSolution)>,
}

fn build_element(
    mesh: &Mesh,
    cfg: &VariantConfig,
    e: usize,
    f: &(dyn Fn(&Vector3<f64>) -> Vector3<f64> + Sync),
    g: &(dyn Fn(&Vector3<f64>) -> Vector3<f64> + Sync),
) -> Result<ElemOut, SchemeError> {
    let es = ElementSpaces::on_mesh(mesh, e, cfg.variant, cfg.k);
    let tau = cfg.tau.resolve(mesh, e);
    let lop = assemble_local(e, &es, &tau, &|x| f(x))?;
    let mut boundary = Vec::new();
    for face in &es.faces {
        if face.boundary {
            let n = face.outward_normal();
            let uhat = face_project_pn(&face.n_space, &|x: &Vector3<f64>| g(x).cross(&n));
            let phat = DVector::zeros(face.m_space.dim);
            boundary.push((face.mesh_face.expect("mesh faces"), FaceSolution { uhat, phat }));
        }
    }
    let LocalOperator { face_off, n_dims, s, condensed_load, a_inv_b, a_inv_load, .. } = lop;
    Ok(ElemOut {
        es,
        tau,
        s,
        condensed_load,
        recovery: RecoveryData { a_inv_b, a_inv_load, face_off, n_dims },
        boundary,
    })
}

/// Assembles the condensed skeleton system for `cfg` on `mesh` with volume
/// load `f` and tangential boundary datum `g` (the scheme imposes
/// `uhat = P_N(g x n)` and `phat = 0` on the boundary).
pub fn assemble_global(
    mesh: &Mesh,
    cfg: &VariantConfig,
    f: &(dyn Fn(&Vector3<f64>) -> Vector3<f64> + Sync),
    g: &(dyn Fn(&Vector3<f64>) -> Vector3<f64> + Sync),
    threads: usize,
) -> Result<Assembled, SchemeError> {
    cfg.validate_on_mesh(mesh)?;
    let ne = mesh.tets.len();
    let nf = mesh.faces.len();
    let ifaces = mesh.interior_faces();
    let mut node_of_face: Vec<Option<usize>> = vec![None; nf];
    for (i, &fidx) in ifaces.iter().enumerate() {
        node_of_face[fidx] = Some(i);
    }

    let outs: Result<Vec<ElemOut>, SchemeError> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| SchemeError::SolverBreakdown(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..ne)
                .into_par_iter()
                .map(|e| build_element(mesh, cfg, e, f, g))
                .collect()
        })
    } else {
        (0..ne).map(|e| build_element(mesh, cfg, e, f, g)).collect()
    };
    let outs = outs?;

    let mut boundary: Vec<Option<FaceSolution>> = vec![None; nf];
    for out in &outs {
        for (fidx, fs) in &out.boundary {
            boundary[*fidx] = Some(fs.clone());
        }
    }

    let nn = ifaces.len();
    let bsize: Vec<usize> = ifaces
        .iter()
        .map(|_| cfg.variant.n_dim(cfg.k) + d_face(cfg.variant.m_degree(cfg.k)))
        .collect();
    let ndofs: usize = bsize.iter().sum();
    let mut mat: Vec<BTreeMap<usize, DMatrix<f64>>> = vec![BTreeMap::new(); nn];
    let mut rhs: Vec<DVector<f64>> = bsize.iter().map(|&s| DVector::zeros(s)).collect();

    let mut spaces = Vec::with_capacity(ne);
    let mut taus = Vec::with_capacity(ne);
    let mut recovery = Vec::with_capacity(ne);
    for (e, out) in outs.into_iter().enumerate() {
        let off = &out.recovery.face_off;
        for (la, fa) in mesh.tet_faces[e].iter().enumerate() {
            let Some(ra) = node_of_face[fa.face] else { continue };
            let rows = off[la + 1] - off[la];
            rhs[ra] += out.condensed_load.rows(off[la], rows);
            for (lb, fb) in mesh.tet_faces[e].iter().enumerate() {
                let cols = off[lb + 1] - off[lb];
                let block = out.s.view((off[la], off[lb]), (rows, cols));
                match node_of_face[fb.face] {
                    Some(cb) => {
                        let entry = mat[ra]
                            .entry(cb)
                            .or_insert_with(|| DMatrix::zeros(rows, cols));
                        *entry += block;
                    }
                    None => {
                        let fs = boundary[fb.face].as_ref().expect("boundary values");
                        let mut lam = DVector::zeros(cols);
                        lam.rows_mut(0, fs.uhat.len()).copy_from(&fs.uhat);
                        lam.rows_mut(fs.uhat.len(), fs.phat.len()).copy_from(&fs.phat);
                        rhs[ra] -= block * lam;
                    }
                }
            }
        }
        spaces.push(out.es);
        taus.push(out.tau);
        recovery.push(out.recovery);
    }

    let centroids: Vec<Vector3<f64>> = ifaces.iter().map(|&fi| mesh.faces[fi].centroid).collect();
    Ok(Assembled {
        spaces,
        taus,
        recovery,
        skeleton: SkeletonSystem { ifaces, node_of_face, bsize, ndofs, mat, rhs, centroids },
        boundary,
    })
}

/// Recovers the interior fields from the solved skeleton traces
/// (`x_nodes`: one coefficient segment per interior node).
pub fn recover(
    mesh: &Mesh,
    assembled: Assembled,
    x_nodes: &[DVector<f64>],
    stats: SolveStats,
    cfg: &VariantConfig,
) -> SolvedState {
    let Assembled { spaces, taus, recovery, skeleton, mut boundary } = assembled;
    let n_dim = cfg.variant.n_dim(cfg.k);
    let nf = mesh.faces.len();
    let mut faces: Vec<FaceSolution> = Vec::with_capacity(nf);
    for fidx in 0..nf {
        match skeleton.node_of_face[fidx] {
            Some(node) => {
                let x = &x_nodes[node];
                faces.push(FaceSolution {
                    uhat: x.rows(0, n_dim).clone_owned(),
                    phat: x.rows(n_dim, x.len() - n_dim).clone_owned(),
                });
            }
            None => faces.push(boundary[fidx].take().expect("boundary face values")),
        }
    }

    let mut elems = Vec::with_capacity(mesh.tets.len());
    for (e, rec) in recovery.iter().enumerate() {
        let mut lambda = DVector::zeros(rec.face_off[4]);
        for loc in 0..4 {
            let fs = &faces[mesh.tet_faces[e][loc].face];
            let off = rec.face_off[loc];
            debug_assert_eq!(rec.n_dims[loc], fs.uhat.len());
            lambda.rows_mut(off, fs.uhat.len()).copy_from(&fs.uhat);
            lambda.rows_mut(off + fs.uhat.len(), fs.phat.len()).copy_from(&fs.phat);
        }
        let x = &rec.a_inv_load - &rec.a_inv_b * lambda;
        let (nw, nv) = (spaces[e].w.dim, spaces[e].v.dim);
        let nq = spaces[e].q.dim;
        elems.push(ElementSolution {
            w: x.rows(0, nw).clone_owned(),
            u: x.rows(nw, nv).clone_owned(),
            p: x.rows(nw + nv, nq).clone_owned(),
        });
    }

    SolvedState { config: cfg.clone(), spaces, taus, elems, faces, stats }
}

/// Assembles, solves, and recovers a complete discrete solution.
pub fn solve_hdg(
    mesh: &Mesh,
    cfg: &VariantConfig,
    f: &(dyn Fn(&Vector3<f64>) -> Vector3<f64> + Sync),
    g: &(dyn Fn(&Vector3<f64>) -> Vector3<f64> + Sync),
    opts: &SolveOptions,
) -> Result<SolvedState, SchemeError> {
    let assembled = assemble_global(mesh, cfg, f, g, opts.threads)?;
    let (x_nodes, stats) = match opts.solver {
        SolverKind::Direct => solve_direct(&assembled.skeleton)?,
        SolverKind::Iterative => solve_iterative(&assembled.skeleton)?,
    };
    Ok(recover(mesh, assembled, &x_nodes, stats, cfg))
}
