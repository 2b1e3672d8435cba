//! Tetrahedral meshes of the unit cube and the L-shape prism.
//!
//! Meshes are built by the Kuhn 6-tet subdivision of a structured grid of
//! subcubes. Faces are enumerated once (skeleton), oriented by a global
//! convention (unit normal points out of the lower-indexed adjacent
//! element), and carry a deterministic tangent frame so that both adjacent
//! elements and the skeleton agree on face-local bases bit-for-bit.
//! A mesh is immutable after construction and safe to share across
//! assembly workers.

use crate::tol;
use nalgebra::Vector3;
use std::collections::HashMap;
use std::io::{self, Write};

/// Which domain a mesh discretizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    /// Unit cube `[0,1]^3`.
    Cube,
    /// L-shape prism `([-1,1]^2 \ [-1,0]^2) x [0,1]`.
    LShape,
    /// Hand-assembled element list (tests, probes).
    Custom,
}

impl DomainKind {
    /// Analytic volume, if the domain has one.
    pub fn volume(self) -> Option<f64> {
        match self {
            DomainKind::Cube => Some(1.0),
            DomainKind::LShape => Some(3.0),
            DomainKind::Custom => None,
        }
    }

    /// Stable lowercase label used in reports and on the command line.
    pub fn label(self) -> &'static str {
        match self {
            DomainKind::Cube => "cube",
            DomainKind::LShape => "lshape",
            DomainKind::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<DomainKind> {
        match s {
            "cube" => Some(DomainKind::Cube),
            "lshape" | "l-shape" => Some(DomainKind::LShape),
            _ => None,
        }
    }
}

/// Oriented triangular face of the skeleton.
#[derive(Debug, Clone)]
pub struct Face {
    /// Global vertex indices, ascending.
    pub verts: [usize; 3],
    /// Lower-indexed adjacent element.
    pub elem_lo: usize,
    /// Higher-indexed adjacent element (`None` on the boundary).
    pub elem_hi: Option<usize>,
    /// Unit normal pointing out of `elem_lo`.
    pub normal: Vector3<f64>,
    /// First tangent vector; `(t1, t2, normal)` is right-handed orthonormal.
    pub t1: Vector3<f64>,
    /// Second tangent vector, `t2 = normal x t1`.
    pub t2: Vector3<f64>,
    pub area: f64,
    pub centroid: Vector3<f64>,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.elem_hi.is_none()
    }
}

/// One of a tet's four faces: skeleton index plus orientation sign
/// (+1 if the stored face normal is outward for this tet).
#[derive(Debug, Clone, Copy)]
pub struct FaceRef {
    pub face: usize,
    pub sign: f64,
}

/// Immutable tetrahedral mesh with oriented skeleton.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub domain: DomainKind,
    /// Subdivision count used by the structured builders (0 for custom).
    pub n: usize,
    pub vertices: Vec<Vector3<f64>>,
    pub tets: Vec<[usize; 4]>,
    pub faces: Vec<Face>,
    /// For each tet: its four faces, entry `i` opposite local vertex `i`.
    pub tet_faces: Vec<[FaceRef; 4]>,
}

/// Shape quality numbers of one element.
#[derive(Debug, Clone)]
pub struct ShapeMetrics {
    /// Element diameter (max pairwise vertex distance).
    pub h: f64,
    pub inradius: f64,
    /// `h / inradius`.
    pub chunkiness: f64,
    pub face_areas: [f64; 4],
    /// `max face area / min face area`.
    pub face_area_ratio: f64,
}

/// True if `p` lies on the re-entrant axis `{x = y = 0}` (within
/// [`tol::AXIS_TOL`]).
pub fn on_axis(p: &Vector3<f64>) -> bool {
    p.x.abs() <= tol::AXIS_TOL && p.y.abs() <= tol::AXIS_TOL
}

/// How a simplex touches the axis `{x = y = 0}`: local indices of its
/// on-axis vertices (at most 2 for a non-degenerate cell in our meshes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AxisTouch {
    None,
    Vertex(usize),
    Edge([usize; 2]),
}

/// Classifies how the points `pts` (a tet's or face's vertices) touch the
/// axis.
pub fn axis_touch(pts: &[Vector3<f64>]) -> AxisTouch {
    let hits: Vec<usize> = (0..pts.len()).filter(|&i| on_axis(&pts[i])).collect();
    match hits.len() {
        0 => AxisTouch::None,
        1 => AxisTouch::Vertex(hits[0]),
        2 => AxisTouch::Edge([hits[0], hits[1]]),
        k => panic!("cell with {k} vertices on the singular axis"),
    }
}

fn tet_signed_volume(v: &[Vector3<f64>; 4]) -> f64 {
    (v[1] - v[0]).cross(&(v[2] - v[0])).dot(&(v[3] - v[0])) / 6.0
}

/// Deterministic face frame from the sorted vertex coordinates: orthonormal
/// tangents built by Gram-Schmidt on the two shortest edge vectors, then
/// `t2` flipped if needed so that `(t1, t2, normal)` is right-handed.
/// Both elements adjacent to a face obtain bit-identical frames because the
/// construction depends only on the vertex coordinates and the stored
/// normal.
pub fn canonical_face_frame(
    pts: [Vector3<f64>; 3],
    normal: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let mut sorted = pts;
    sorted.sort_by(|a, b| {
        a.x.total_cmp(&b.x)
            .then(a.y.total_cmp(&b.y))
            .then(a.z.total_cmp(&b.z))
    });
    let edges = [sorted[1] - sorted[0], sorted[2] - sorted[0], sorted[2] - sorted[1]];
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| edges[i].norm().total_cmp(&edges[j].norm()).then(i.cmp(&j)));
    let t1 = edges[order[0]].normalize();
    let second = edges[order[1]];
    let mut t2 = (second - t1 * second.dot(&t1)).normalize();
    if t1.cross(&t2).dot(normal) < 0.0 {
        t2 = -t2;
    }
    debug_assert!((t1.cross(&t2).dot(normal) - 1.0).abs() < 1e-10);
    (t1, t2)
}

impl Mesh {
    /// Assembles a mesh from raw vertices and tets: enumerates faces,
    /// orients normals, and builds frames. Tets must have positive signed
    /// volume and form a conforming triangulation (each face shared by at
    /// most two tets).
    pub fn from_tets(domain: DomainKind, n: usize, vertices: Vec<Vector3<f64>>, tets: Vec<[usize; 4]>) -> Mesh {
        for (e, t) in tets.iter().enumerate() {
            let v = [vertices[t[0]], vertices[t[1]], vertices[t[2]], vertices[t[3]]];
            let vol = tet_signed_volume(&v);
            assert!(vol > 0.0, "tet {e} has non-positive signed volume {vol}");
        }
        // Enumerate faces in first-encounter order over (tet, local face).
        let mut key_to_face: HashMap<[usize; 3], usize> = HashMap::new();
        let mut face_elems: Vec<(usize, Option<usize>)> = Vec::new();
        let mut face_keys: Vec<[usize; 3]> = Vec::new();
        let mut tet_faces_idx: Vec<[usize; 4]> = Vec::with_capacity(tets.len());
        for (e, t) in tets.iter().enumerate() {
            let mut refs = [0usize; 4];
            for (loc, fref) in refs.iter_mut().enumerate() {
                let mut key: Vec<usize> = (0..4).filter(|&i| i != loc).map(|i| t[i]).collect();
                key.sort_unstable();
                let key = [key[0], key[1], key[2]];
                let idx = *key_to_face.entry(key).or_insert_with(|| {
                    face_elems.push((e, None));
                    face_keys.push(key);
                    face_keys.len() - 1
                });
                if face_elems[idx].0 != e {
                    assert!(
                        face_elems[idx].1.is_none(),
                        "face {key:?} shared by more than two tets"
                    );
                    face_elems[idx].1 = Some(e);
                }
                *fref = idx;
            }
            tet_faces_idx.push(refs);
        }

        let mut faces = Vec::with_capacity(face_keys.len());
        for (idx, key) in face_keys.iter().enumerate() {
            let (lo, hi) = face_elems[idx];
            let pts = [vertices[key[0]], vertices[key[1]], vertices[key[2]]];
            let centroid = (pts[0] + pts[1] + pts[2]) / 3.0;
            let raw = (pts[1] - pts[0]).cross(&(pts[2] - pts[0]));
            let area = 0.5 * raw.norm();
            assert!(area > 0.0, "degenerate face {key:?}");
            let mut normal = raw.normalize();
            // Point the normal out of the lower-indexed element.
            let t = tets[lo];
            let tet_centroid =
                (vertices[t[0]] + vertices[t[1]] + vertices[t[2]] + vertices[t[3]]) / 4.0;
            if normal.dot(&(centroid - tet_centroid)) < 0.0 {
                normal = -normal;
            }
            let (t1, t2) = canonical_face_frame(pts, &normal);
            faces.push(Face {
                verts: *key,
                elem_lo: lo,
                elem_hi: hi,
                normal,
                t1,
                t2,
                area,
                centroid,
            });
        }

        let tet_faces = tets
            .iter()
            .enumerate()
            .map(|(e, _)| {
                let refs = tet_faces_idx[e];
                let mut out = [FaceRef { face: 0, sign: 0.0 }; 4];
                for (loc, &fidx) in refs.iter().enumerate() {
                    let sign = if faces[fidx].elem_lo == e { 1.0 } else { -1.0 };
                    out[loc] = FaceRef { face: fidx, sign };
                }
                out
            })
            .collect();

        let mesh = Mesh { domain, n, vertices, tets, faces, tet_faces };
        mesh.check_conformity();
        mesh
    }

    fn check_conformity(&self) {
        if let Some(vol) = self.domain.volume() {
            let total: f64 = (0..self.tets.len()).map(|e| self.tet_volume(e)).sum();
            assert!(
                ((total - vol) / vol).abs() <= tol::MESH_VOLUME_REL,
                "mesh volume {total} differs from domain volume {vol}"
            );
        }
        // Outward normals recomputed from the higher-indexed element must be
        // antiparallel to the stored ones.
        for f in &self.faces {
            if let Some(hi) = f.elem_hi {
                let t = self.tets[hi];
                let c = (self.vertices[t[0]] + self.vertices[t[1]] + self.vertices[t[2]]
                    + self.vertices[t[3]])
                    / 4.0;
                let out = f.centroid - c;
                assert!(
                    f.normal.dot(&out.normalize()) < 0.0,
                    "interior face normal not antiparallel between elements"
                );
            }
        }
    }

    pub fn tet_vertices(&self, e: usize) -> [Vector3<f64>; 4] {
        let t = self.tets[e];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]], self.vertices[t[3]]]
    }

    pub fn face_vertices(&self, f: usize) -> [Vector3<f64>; 3] {
        let k = self.faces[f].verts;
        [self.vertices[k[0]], self.vertices[k[1]], self.vertices[k[2]]]
    }

    pub fn tet_volume(&self, e: usize) -> f64 {
        tet_signed_volume(&self.tet_vertices(e))
    }

    pub fn tet_centroid(&self, e: usize) -> Vector3<f64> {
        let v = self.tet_vertices(e);
        (v[0] + v[1] + v[2] + v[3]) / 4.0
    }

    /// Element diameter.
    pub fn tet_diameter(&self, e: usize) -> f64 {
        let v = self.tet_vertices(e);
        let mut h: f64 = 0.0;
        for i in 0..4 {
            for j in (i + 1)..4 {
                h = h.max((v[i] - v[j]).norm());
            }
        }
        h
    }

    /// Mesh size `h = max_K h_K`.
    pub fn h_max(&self) -> f64 {
        (0..self.tets.len()).map(|e| self.tet_diameter(e)).fold(0.0, f64::max)
    }

    /// Outward unit normal of local face `loc` of element `e`.
    pub fn outward_normal(&self, e: usize, loc: usize) -> Vector3<f64> {
        let fr = self.tet_faces[e][loc];
        self.faces[fr.face].normal * fr.sign
    }

    /// Indices of interior (two-element) faces, ascending.
    pub fn interior_faces(&self) -> Vec<usize> {
        (0..self.faces.len()).filter(|&f| !self.faces[f].is_boundary()).collect()
    }

    pub fn num_boundary_faces(&self) -> usize {
        self.faces.iter().filter(|f| f.is_boundary()).count()
    }

    /// Shape quality of element `e`.
    pub fn shape_metrics(&self, e: usize) -> ShapeMetrics {
        let v = self.tet_vertices(e);
        let h = self.tet_diameter(e);
        let mut face_areas = [0.0; 4];
        for loc in 0..4 {
            let pts: Vec<Vector3<f64>> = (0..4).filter(|&i| i != loc).map(|i| v[i]).collect();
            face_areas[loc] = 0.5 * (pts[1] - pts[0]).cross(&(pts[2] - pts[0])).norm();
        }
        let total_area: f64 = face_areas.iter().sum();
        let inradius = 3.0 * self.tet_volume(e) / total_area;
        let amax = face_areas.iter().fold(f64::MIN, |a, &b| a.max(b));
        let amin = face_areas.iter().fold(f64::MAX, |a, &b| a.min(b));
        ShapeMetrics {
            h,
            inradius,
            chunkiness: h / inradius,
            face_areas,
            face_area_ratio: amax / amin,
        }
    }

    /// FNV-1a hash of the mesh geometry and connectivity (checkpoint
    /// compatibility stamp).
    pub fn geometry_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(&(self.vertices.len() as u64).to_le_bytes());
        eat(&(self.tets.len() as u64).to_le_bytes());
        for v in &self.vertices {
            eat(&v.x.to_bits().to_le_bytes());
            eat(&v.y.to_bits().to_le_bytes());
            eat(&v.z.to_bits().to_le_bytes());
        }
        for t in &self.tets {
            for &i in t {
                eat(&(i as u64).to_le_bytes());
            }
        }
        h
    }

    /// Writes the mesh as legacy VTK ASCII (`UNSTRUCTURED_GRID`) for visual
    /// inspection.
    pub fn write_vtk(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "maxhdg mesh")?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {} double", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(w, "{:.17e} {:.17e} {:.17e}", v.x, v.y, v.z)?;
        }
        writeln!(w, "CELLS {} {}", self.tets.len(), 5 * self.tets.len())?;
        for t in &self.tets {
            writeln!(w, "4 {} {} {} {}", t[0], t[1], t[2], t[3])?;
        }
        writeln!(w, "CELL_TYPES {}", self.tets.len())?;
        for _ in &self.tets {
            writeln!(w, "10")?;
        }
        Ok(())
    }
}

/// The six permutations of `(0,1,2)` defining the Kuhn subdivision; each
/// subcube tet walks its main diagonal in the permuted axis order.
const KUHN_PERMS: [[usize; 3]; 6] =
    [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Structured-grid builder shared by the cube and L-shape meshes. Lattice
/// coordinates are integers scaled by `1/n`; `cubes` lists the low corners
/// of the unit cubes to subdivide, in units of whole cubes.
fn build_kuhn(domain: DomainKind, n: usize, cubes: &[[i64; 3]]) -> Mesh {
    assert!(n >= 1);
    let nn = n as i64;
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut vid = |key: [i64; 3], vertices: &mut Vec<Vector3<f64>>| -> usize {
        *index.entry(key).or_insert_with(|| {
            vertices.push(Vector3::new(
                key[0] as f64 / n as f64,
                key[1] as f64 / n as f64,
                key[2] as f64 / n as f64,
            ));
            vertices.len() - 1
        })
    };
    let mut tets: Vec<[usize; 4]> = Vec::new();
    for cube in cubes {
        let base = [cube[0] * nn, cube[1] * nn, cube[2] * nn];
        for i in 0..nn {
            for j in 0..nn {
                for k in 0..nn {
                    let low = [base[0] + i, base[1] + j, base[2] + k];
                    for perm in KUHN_PERMS {
                        let mut corners = [low; 4];
                        for s in 0..3 {
                            corners[s + 1] = corners[s];
                            corners[s + 1][perm[s]] += 1;
                        }
                        let mut t = [0usize; 4];
                        for (slot, c) in corners.iter().enumerate() {
                            t[slot] = vid(*c, &mut vertices);
                        }
                        // Odd permutations walk the diagonal with negative
                        // orientation; swap the last two vertices to keep
                        // every tet positively oriented.
                        let v = [vertices[t[0]], vertices[t[1]], vertices[t[2]], vertices[t[3]]];
                        if tet_signed_volume(&v) < 0.0 {
                            t.swap(2, 3);
                        }
                        tets.push(t);
                    }
                }
            }
        }
    }
    Mesh::from_tets(domain, n, vertices, tets)
}

/// Uniform Kuhn mesh of the unit cube with `n` subdivisions per axis:
/// `(n+1)^3` vertices, `6 n^3` tets, `h = sqrt(3)/n`.
pub fn build_cube_mesh(n: usize) -> Mesh {
    build_kuhn(DomainKind::Cube, n, &[[0, 0, 0]])
}

/// Kuhn mesh of the L-shape prism `([-1,1]^2 \ [-1,0]^2) x [0,1]`: three
/// unit cubes, `18 n^3` tets, re-entrant edge along `{x = y = 0}`.
pub fn build_lshape_mesh(n: usize) -> Mesh {
    build_kuhn(DomainKind::LShape, n, &[[0, 0, 0], [-1, 0, 0], [0, -1, 0]])
}
