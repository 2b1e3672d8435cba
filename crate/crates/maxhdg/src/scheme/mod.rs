//! HDG scheme: stabilization rules, element-local assembly with static
//! condensation, the global skeleton solve, interior-field recovery, and
//! solution export.
//!
//! The scheme finds `(w_h, u_h, p_h, uhat_h, phat_h)` in
//! `W_h x V_h x Q_h x N_h x M_h` such that, for all discrete test fields
//! `(r, v, q, eta, mu)`,
//!
//! ```text
//! (w_h, r)       - (u_h, curl r)                - <uhat_h, r x n>          = 0
//! (curl w_h, v)  + <tau_t P_N(u_h - uhat_h), v> - (p_h, div v)
//!                                               + <phat_h, v.n>            = (f, v)
//! (div u_h, q)   + <tau_n (p_h - phat_h), q>                               = 0
//! -<n x w_h + tau_t (u_h - uhat_h), eta>        = 0        (interior faces)
//! -<u_h.n + tau_n (p_h - phat_h), mu>           = 0        (interior faces)
//! uhat_h = P_N(g x n),  phat_h = 0              (boundary faces)
//! ```
//!
//! Volume unknowns `(w_h, u_h, p_h)` are eliminated element-by-element
//! (static condensation), leaving a block-sparse system over the interior
//! skeleton traces `(uhat_h, phat_h)`; the interior fields are recovered by
//! back-substitution through the factorized local operators.

mod export;
mod global;
mod local;
mod solver;

pub use export::{read_checkpoint, write_checkpoint, write_solution_vtk, CheckpointData};
pub use global::{
    assemble_global, recover, solve_hdg, Assembled, ElementSolution, FaceSolution, SkeletonSystem,
    SolveOptions, SolveStats, SolvedState,
};
pub use local::{assemble_local, LocalOperator};
pub use solver::{solve_direct, solve_iterative, SolverKind};

use crate::la;
use crate::mesh::{DomainKind, Mesh};
use crate::polyspace::{orthonormal_basis, ElementSpaces, Variant, K_MAX};
use crate::projections::StabilizationSpec;
use crate::tol;
use nalgebra::{DMatrix, Vector3};
use thiserror::Error;

/// Errors raised by scheme configuration, assembly, and the solvers.
#[derive(Debug, Error)]
pub enum SchemeError {
    /// Inadmissible configuration (variant/degree/stabilization combination).
    #[error("invalid configuration: {0}")]
    Config(String),
    /// The element-local block `A` failed to factorize.
    #[error("singular local operator on element {element} (pivot ratio {pivot_ratio:.3e})")]
    SingularLocal { element: usize, pivot_ratio: f64 },
    /// The skeleton factorization or iteration broke down.
    #[error("solver breakdown: {0}")]
    SolverBreakdown(String),
    /// The solve finished but the algebraic residual is above tolerance.
    #[error("solver residual {achieved:.3e} exceeds required {required:.3e}")]
    ResidualTooLarge { achieved: f64, required: f64 },
}

/// Base stabilization rule applied to every element before per-face
/// overrides. All bases set `tau_t = 1/h_K` except the exponent rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauBase {
    /// `tau_t = 1/h_K`, `tau_n = h_K` on every face (the default for all
    /// variants).
    Table2Default,
    /// `tau_t = 1/h_K`, `tau_n = h_K`.
    TestA,
    /// `tau_t = 1/h_K`; `tau_n = 1e5/h_K^2` on the single face of each
    /// element with the lowest global face index, `0` on its other faces.
    TestB,
    /// `tau_t = 1/h_K`, `tau_n = 1e5/h_K^2` on all faces.
    TestC,
    /// `tau_t = 1/h_K`, `tau_n = h_K`; same values as [`TauBase::TestA`],
    /// named separately for study bookkeeping.
    TestD,
    /// `tau_t = 1/h_K`, `tau_n = 0` (admissible only for the variants that
    /// tolerate a vanishing normal stabilization).
    TestE,
    /// `tau_n = h_K^alpha`, `tau_t = h_K^beta`.
    Exponents { alpha: f64, beta: f64 },
}

/// Per-face stabilization override: on global face `face`, both adjacent
/// elements use `tau_n = coef / h_K^h_pow`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceTauOverride {
    pub face: usize,
    pub coef: f64,
    pub h_pow: i32,
}

/// A complete stabilization rule: a base plus per-face overrides.
/// Resolution order: per-face override beats the base rule.
#[derive(Debug, Clone, PartialEq)]
pub struct TauRule {
    pub base: TauBase,
    pub overrides: Vec<FaceTauOverride>,
}

impl Default for TauRule {
    fn default() -> Self {
        TauRule { base: TauBase::Table2Default, overrides: Vec::new() }
    }
}

impl TauRule {
    pub fn base(base: TauBase) -> TauRule {
        TauRule { base, overrides: Vec::new() }
    }

    /// Parses the rule mini-grammar: `+`-separated parts, each either a base
    /// (`table2-default`, `test-A` .. `test-E`, `exp:a=<float>,b=<float>`)
    /// or a per-face override `face:<idx>=<coef>[/h^<pow>]`. At most one
    /// base; omitting it means `table2-default`.
    pub fn parse(s: &str) -> Result<TauRule, String> {
        let mut base: Option<TauBase> = None;
        let mut overrides = Vec::new();
        for part in s.split('+') {
            let part = part.trim();
            if part.is_empty() {
                return Err("empty tau-rule component".into());
            }
            if let Some(rest) = part.strip_prefix("face:") {
                overrides.push(Self::parse_face_override(rest)?);
                continue;
            }
            let parsed = Self::parse_base(part)?;
            if base.replace(parsed).is_some() {
                return Err(format!("tau rule '{s}' has more than one base rule"));
            }
        }
        Ok(TauRule { base: base.unwrap_or(TauBase::Table2Default), overrides })
    }

    fn parse_base(part: &str) -> Result<TauBase, String> {
        if part.eq_ignore_ascii_case("table2-default") {
            return Ok(TauBase::Table2Default);
        }
        if let Some(letter) = part.strip_prefix("test-").or_else(|| part.strip_prefix("Test-")) {
            return match letter.to_ascii_uppercase().as_str() {
                "A" => Ok(TauBase::TestA),
                "B" => Ok(TauBase::TestB),
                "C" => Ok(TauBase::TestC),
                "D" => Ok(TauBase::TestD),
                "E" => Ok(TauBase::TestE),
                other => Err(format!("unknown test rule 'test-{other}' (expected A..E)")),
            };
        }
        if let Some(rest) = part.strip_prefix("exp:") {
            let mut alpha = None;
            let mut beta = None;
            for kv in rest.split(',') {
                let (key, val) = kv
                    .split_once('=')
                    .ok_or_else(|| format!("exponent component '{kv}' is not key=value"))?;
                let parsed: f64 = val
                    .trim()
                    .parse()
                    .map_err(|_| format!("invalid exponent value '{val}'"))?;
                match key.trim() {
                    "a" => alpha = Some(parsed),
                    "b" => beta = Some(parsed),
                    other => return Err(format!("unknown exponent key '{other}' (expected a, b)")),
                }
            }
            return Ok(TauBase::Exponents {
                alpha: alpha.ok_or("exp rule missing a=<alpha>")?,
                beta: beta.ok_or("exp rule missing b=<beta>")?,
            });
        }
        Err(format!(
            "unknown tau rule '{part}' (expected table2-default, test-A..E, exp:a=..,b=.., or face:..)"
        ))
    }

    fn parse_face_override(rest: &str) -> Result<FaceTauOverride, String> {
        let (idx, val) = rest
            .split_once('=')
            .ok_or_else(|| format!("face override '{rest}' is not <idx>=<value>"))?;
        let face: usize =
            idx.trim().parse().map_err(|_| format!("invalid face index '{idx}'"))?;
        let (coef_str, h_pow) = match val.split_once("/h^") {
            Some((c, p)) => {
                let pow: i32 =
                    p.trim().parse().map_err(|_| format!("invalid h power '{p}'"))?;
                (c, pow)
            }
            None => (val, 0),
        };
        let coef: f64 = coef_str
            .trim()
            .parse()
            .map_err(|_| format!("invalid face override value '{coef_str}'"))?;
        Ok(FaceTauOverride { face, coef, h_pow })
    }

    /// Resolves the rule on mesh element `e` into per-face `(tau_t, tau_n)`
    /// values, local face `i` opposite vertex `i`.
    pub fn resolve(&self, mesh: &Mesh, e: usize) -> StabilizationSpec {
        let h = mesh.tet_diameter(e);
        let (tau_t, mut tau_n) = match self.base {
            TauBase::Table2Default | TauBase::TestA | TauBase::TestD => (1.0 / h, [h; 4]),
            TauBase::TestB => {
                let mut tn = [0.0; 4];
                let lowest = (0..4)
                    .min_by_key(|&i| mesh.tet_faces[e][i].face)
                    .expect("tet has four faces");
                tn[lowest] = 1e5 / (h * h);
                (1.0 / h, tn)
            }
            TauBase::TestC => (1.0 / h, [1e5 / (h * h); 4]),
            TauBase::TestE => (1.0 / h, [0.0; 4]),
            TauBase::Exponents { alpha, beta } => (h.powf(beta), [h.powf(alpha); 4]),
        };
        for ov in &self.overrides {
            for (loc, fr) in mesh.tet_faces[e].iter().enumerate() {
                if fr.face == ov.face {
                    tau_n[loc] = ov.coef / h.powi(ov.h_pow);
                }
            }
        }
        StabilizationSpec { tau_t: [tau_t; 4], tau_n }
    }
}

impl std::fmt::Display for TauRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.base {
            TauBase::Table2Default => write!(f, "table2-default")?,
            TauBase::TestA => write!(f, "test-A")?,
            TauBase::TestB => write!(f, "test-B")?,
            TauBase::TestC => write!(f, "test-C")?,
            TauBase::TestD => write!(f, "test-D")?,
            TauBase::TestE => write!(f, "test-E")?,
            TauBase::Exponents { alpha, beta } => write!(f, "exp:a={alpha},b={beta}")?,
        }
        for ov in &self.overrides {
            write!(f, "+face:{}={}", ov.face, ov.coef)?;
            if ov.h_pow != 0 {
                write!(f, "/h^{}", ov.h_pow)?;
            }
        }
        Ok(())
    }
}

/// A fully specified scheme instance: variant, degree, stabilization rule.
#[derive(Debug, Clone)]
pub struct VariantConfig {
    pub variant: Variant,
    pub k: usize,
    pub tau: TauRule,
}

impl VariantConfig {
    pub fn new(variant: Variant, k: usize, tau: TauRule) -> VariantConfig {
        VariantConfig { variant, k, tau }
    }

    /// Static admissibility rules, checked before any allocation. Each
    /// rejection is a single actionable line.
    pub fn validate(&self, domain: DomainKind) -> Result<(), SchemeError> {
        if self.k > K_MAX {
            return Err(SchemeError::Config(format!(
                "degree k = {} exceeds the supported maximum k = {K_MAX}",
                self.k
            )));
        }
        if self.variant.reduced_traces() && self.k == 0 && domain != DomainKind::LShape {
            return Err(SchemeError::Config(format!(
                "variant {} requires k >= 1 (k = 0 is admitted only on the lshape benchmark)",
                self.variant.name()
            )));
        }
        if self.variant.requires_tau_n() && self.tau.base == TauBase::TestE {
            return Err(SchemeError::Config(format!(
                "variant {} requires tau_n != 0 on every element; rule test-E sets tau_n = 0",
                self.variant.name()
            )));
        }
        for ov in &self.tau.overrides {
            if ov.coef < 0.0 {
                return Err(SchemeError::Config(format!(
                    "face override on face {} sets tau_n < 0 (tau_n must be nonnegative)",
                    ov.face
                )));
            }
        }
        if let TauBase::Exponents { alpha, beta } = self.tau.base {
            if !alpha.is_finite() || !beta.is_finite() {
                return Err(SchemeError::Config(
                    "tau exponents must be finite".to_string(),
                ));
            }
        }
        Ok(())
    }

    /// Resolves the stabilization on every element of `mesh` and checks the
    /// per-element conditions: `tau_t > 0` on all faces, `tau_n >= 0`, and
    /// (for the variants that need it) `tau_n` not identically zero on the
    /// element boundary.
    pub fn validate_on_mesh(&self, mesh: &Mesh) -> Result<(), SchemeError> {
        self.validate(mesh.domain)?;
        for e in 0..mesh.tets.len() {
            let tau = self.tau.resolve(mesh, e);
            for i in 0..4 {
                if !(tau.tau_t[i] > 0.0) {
                    return Err(SchemeError::Config(format!(
                        "element {e}: tau_t = {} on local face {i} (must be positive)",
                        tau.tau_t[i]
                    )));
                }
                if tau.tau_n[i] < 0.0 {
                    return Err(SchemeError::Config(format!(
                        "element {e}: tau_n = {} on local face {i} (must be nonnegative)",
                        tau.tau_n[i]
                    )));
                }
            }
            if self.variant.requires_tau_n() && tau.tau_n.iter().all(|&t| t == 0.0) {
                return Err(SchemeError::Config(format!(
                    "element {e}: variant {} requires tau_n != 0 on some face of every element",
                    self.variant.name()
                )));
            }
        }
        Ok(())
    }
}

/// Result of checking the kernel-trace condition on one element: the
/// tangential traces of curl-free fields in `V(K)` must lie in `N(dK)`.
#[derive(Debug, Clone)]
pub struct KernelTraceReport {
    /// Condition satisfied (`residual` below [`tol::SUBSPACE_RESIDUAL`]).
    pub holds: bool,
    /// Max over curl-free basis fields and faces of the L2 distance between
    /// the tangential trace and its representation in `N(F)` (fields are
    /// L2-normalized on the element).
    pub residual: f64,
    /// Dimension of the curl-free subspace of `V(K)`.
    pub kernel_dim: usize,
}

/// Checks the kernel-trace condition for the spaces in `es`: computes an
/// orthonormal basis of `{v in V(K) : curl v = 0}` via the nullspace of the
/// curl moment matrix, then measures how far each tangential trace
/// `n x v x n` is from its L2 projection onto `N(F)` on every face.
pub fn kernel_trace_condition(es: &ElementSpaces) -> KernelTraceReport {
    let vdeg = es.variant.v_degree(es.k);
    let kernel = if vdeg == 0 {
        // Constant fields are all curl-free.
        DMatrix::identity(es.v.dim, es.v.dim)
    } else {
        let amb = orthonormal_basis(&es.tet, vdeg - 1, 3);
        let quad = es.tet.quad(2 * vdeg);
        let mut cm: DMatrix<f64> = DMatrix::zeros(amb.dim, es.v.dim);
        for (x, w) in quad.points.iter().zip(&quad.weights) {
            let curls = es.v.curls(x);
            let avals = amb.vec_values(x);
            for (a, av) in avals.iter().enumerate() {
                for (j, cj) in curls.iter().enumerate() {
                    cm[(a, j)] += w * av.dot(cj);
                }
            }
        }
        la::svd_nullspace(&cm, tol::SVD_RANK_REL)
    };
    let mut residual = 0.0_f64;
    for col in 0..kernel.ncols() {
        let coeffs = kernel.column(col);
        for face in &es.faces {
            let n = face.outward_normal();
            let quad = face.dom.quad(2 * (vdeg + 1));
            let nsp = &face.n_space;
            // Moments of the tangential trace against the (orthonormal)
            // N(F) basis, then the pointwise representation defect.
            let mut gram: DMatrix<f64> = DMatrix::zeros(nsp.dim, nsp.dim);
            let mut mom: DMatrix<f64> = DMatrix::zeros(nsp.dim, 1);
            for (x, w) in quad.points.iter().zip(&quad.weights) {
                let vvals = es.v.vec_values(x);
                let mut trace = Vector3::zeros();
                for (j, vj) in vvals.iter().enumerate() {
                    trace += vj * coeffs[j];
                }
                trace -= n * trace.dot(&n);
                let nvals = nsp.vec_values(x);
                for i in 0..nsp.dim {
                    mom[(i, 0)] += w * nvals[i].dot(&trace);
                    for j in 0..nsp.dim {
                        gram[(i, j)] += w * nvals[i].dot(&nvals[j]);
                    }
                }
            }
            let rep = la::solve_full_piv(&gram, &mom).expect("face trace gram solve");
            let defect2 = quad
                .points
                .iter()
                .zip(&quad.weights)
                .map(|(x, w)| {
                    let vvals = es.v.vec_values(x);
                    let mut trace = Vector3::zeros();
                    for (j, vj) in vvals.iter().enumerate() {
                        trace += vj * coeffs[j];
                    }
                    trace -= n * trace.dot(&n);
                    let nvals = nsp.vec_values(x);
                    for i in 0..nsp.dim {
                        trace -= nvals[i] * rep[(i, 0)];
                    }
                    w * trace.norm_squared()
                })
                .sum::<f64>()
                .max(0.0);
            residual = residual.max(defect2.sqrt());
        }
    }
    KernelTraceReport {
        holds: residual < tol::SUBSPACE_RESIDUAL,
        residual,
        kernel_dim: kernel.ncols(),
    }
}
