//! Solution export: legacy VTK ASCII (per-cell fields sampled at vertices)
//! and a binary coefficient checkpoint.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! bytes 0..4   magic "MXHD"
//! byte  4      format version (1)
//! byte  5      variant code (index into Variant::ALL)
//! byte  6      degree k
//! byte  7      reserved (0)
//! bytes 8..16  u64 mesh geometry hash
//! bytes 16..20 u32 element count
//! bytes 20..24 u32 face count
//! per element: u32 nw, u32 nv, u32 nq, then nw+nv+nq f64 coefficients
//!              (w, u, p blocks in element order)
//! per face:    u32 nn, u32 nm, then nn+nm f64 coefficients (uhat, phat)
//! ```

use super::global::{FaceSolution, SolvedState};
use super::SchemeError;
use crate::mesh::Mesh;
use crate::polyspace::Variant;
use nalgebra::DVector;
use std::io::{self, Read, Write};

const MAGIC: &[u8; 4] = b"MXHD";
const VERSION: u8 = 1;

/// Writes the solved fields as a legacy VTK ASCII unstructured grid. Each
/// tet gets its own four points (fields are discontinuous across faces), so
/// point data faithfully samples the per-cell polynomials at the vertices.
pub fn write_solution_vtk(
    mesh: &Mesh,
    state: &SolvedState,
    out: &mut impl Write,
) -> io::Result<()> {
    let ne = mesh.tets.len();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(
        out,
        "maxhdg solution variant={} k={} n={}",
        state.config.variant.name(),
        state.config.k,
        mesh.n
    )?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", 4 * ne)?;
    for e in 0..ne {
        for v in mesh.tet_vertices(e) {
            writeln!(out, "{:.17e} {:.17e} {:.17e}", v.x, v.y, v.z)?;
        }
    }
    writeln!(out, "CELLS {} {}", ne, 5 * ne)?;
    for e in 0..ne {
        writeln!(out, "4 {} {} {} {}", 4 * e, 4 * e + 1, 4 * e + 2, 4 * e + 3)?;
    }
    writeln!(out, "CELL_TYPES {ne}")?;
    for _ in 0..ne {
        writeln!(out, "10")?;
    }
    writeln!(out, "POINT_DATA {}", 4 * ne)?;
    writeln!(out, "VECTORS u double")?;
    for e in 0..ne {
        let es = &state.spaces[e];
        for v in mesh.tet_vertices(e) {
            let vals = es.v.vec_values(&v);
            let mut u = nalgebra::Vector3::zeros();
            for (j, val) in vals.iter().enumerate() {
                u += val * state.elems[e].u[j];
            }
            writeln!(out, "{:.17e} {:.17e} {:.17e}", u.x, u.y, u.z)?;
        }
    }
    writeln!(out, "VECTORS w double")?;
    for e in 0..ne {
        let es = &state.spaces[e];
        for v in mesh.tet_vertices(e) {
            let vals = es.w.vec_values(&v);
            let mut w = nalgebra::Vector3::zeros();
            for (j, val) in vals.iter().enumerate() {
                w += val * state.elems[e].w[j];
            }
            writeln!(out, "{:.17e} {:.17e} {:.17e}", w.x, w.y, w.z)?;
        }
    }
    writeln!(out, "SCALARS p double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for e in 0..ne {
        let es = &state.spaces[e];
        for v in mesh.tet_vertices(e) {
            let vals = es.q.scalar_values(&v);
            let mut p = 0.0;
            for (j, val) in vals.iter().enumerate() {
                p += val * state.elems[e].p[j];
            }
            writeln!(out, "{p:.17e}")?;
        }
    }
    Ok(())
}

fn write_u32(out: &mut impl Write, v: u32) -> io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

fn write_vec(out: &mut impl Write, v: &DVector<f64>) -> io::Result<()> {
    for x in v.iter() {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Writes the binary coefficient checkpoint for `state` on `mesh`.
pub fn write_checkpoint(
    mesh: &Mesh,
    state: &SolvedState,
    out: &mut impl Write,
) -> io::Result<()> {
    let code = Variant::ALL
        .iter()
        .position(|v| *v == state.config.variant)
        .expect("variant in table") as u8;
    out.write_all(MAGIC)?;
    out.write_all(&[VERSION, code, state.config.k as u8, 0])?;
    out.write_all(&mesh.geometry_hash().to_le_bytes())?;
    write_u32(out, state.elems.len() as u32)?;
    write_u32(out, state.faces.len() as u32)?;
    for elem in &state.elems {
        write_u32(out, elem.w.len() as u32)?;
        write_u32(out, elem.u.len() as u32)?;
        write_u32(out, elem.p.len() as u32)?;
        write_vec(out, &elem.w)?;
        write_vec(out, &elem.u)?;
        write_vec(out, &elem.p)?;
    }
    for face in &state.faces {
        write_u32(out, face.uhat.len() as u32)?;
        write_u32(out, face.phat.len() as u32)?;
        write_vec(out, &face.uhat)?;
        write_vec(out, &face.phat)?;
    }
    Ok(())
}

/// Raw coefficient blocks read back from a checkpoint.
#[derive(Debug)]
pub struct CheckpointData {
    pub variant: Variant,
    pub k: usize,
    pub mesh_hash: u64,
    /// Per element: (w, u, p) coefficient vectors.
    pub elems: Vec<(DVector<f64>, DVector<f64>, DVector<f64>)>,
    pub faces: Vec<FaceSolution>,
}

fn read_exact_buf<const N: usize>(r: &mut impl Read) -> Result<[u8; N], SchemeError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| SchemeError::Config(format!("checkpoint truncated: {e}")))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32, SchemeError> {
    Ok(u32::from_le_bytes(read_exact_buf::<4>(r)?))
}

fn read_vec(r: &mut impl Read, len: usize) -> Result<DVector<f64>, SchemeError> {
    let mut v = DVector::zeros(len);
    for i in 0..len {
        v[i] = f64::from_le_bytes(read_exact_buf::<8>(r)?);
    }
    Ok(v)
}

/// Reads a checkpoint and validates it against `mesh` (magic, version, and
/// geometry hash must match).
pub fn read_checkpoint(mesh: &Mesh, r: &mut impl Read) -> Result<CheckpointData, SchemeError> {
    let magic = read_exact_buf::<4>(r)?;
    if &magic != MAGIC {
        return Err(SchemeError::Config("not a maxhdg checkpoint (bad magic)".into()));
    }
    let head = read_exact_buf::<4>(r)?;
    if head[0] != VERSION {
        return Err(SchemeError::Config(format!(
            "unsupported checkpoint version {}",
            head[0]
        )));
    }
    let variant = *Variant::ALL
        .get(head[1] as usize)
        .ok_or_else(|| SchemeError::Config(format!("unknown variant code {}", head[1])))?;
    let k = head[2] as usize;
    let mesh_hash = u64::from_le_bytes(read_exact_buf::<8>(r)?);
    if mesh_hash != mesh.geometry_hash() {
        return Err(SchemeError::Config(format!(
            "checkpoint mesh hash {mesh_hash:#018x} does not match this mesh ({:#018x})",
            mesh.geometry_hash()
        )));
    }
    let ne = read_u32(r)? as usize;
    let nf = read_u32(r)? as usize;
    if ne != mesh.tets.len() || nf != mesh.faces.len() {
        return Err(SchemeError::Config(format!(
            "checkpoint entity counts ({ne} elements, {nf} faces) do not match the mesh"
        )));
    }
    let mut elems = Vec::with_capacity(ne);
    for _ in 0..ne {
        let nw = read_u32(r)? as usize;
        let nv = read_u32(r)? as usize;
        let nq = read_u32(r)? as usize;
        let w = read_vec(r, nw)?;
        let u = read_vec(r, nv)?;
        let p = read_vec(r, nq)?;
        elems.push((w, u, p));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let nn = read_u32(r)? as usize;
        let nm = read_u32(r)? as usize;
        let uhat = read_vec(r, nn)?;
        let phat = read_vec(r, nm)?;
        faces.push(FaceSolution { uhat, phat });
    }
    Ok(CheckpointData { variant, k, mesh_hash, elems, faces })
}
