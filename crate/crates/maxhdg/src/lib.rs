//! Hybridizable discontinuous Galerkin (HDG) solver for the static mixed
//! Maxwell system
//!
//! ```text
//!     w - curl u = 0,   curl w + grad p = f,   div u = 0   in Omega,
//!     n x u = g,        p = 0                              on the boundary,
//! ```
//!
//! discretized on tetrahedral meshes of the unit cube and of an L-shaped
//! prism. The crate provides:
//!
//! - [`mesh`]: Kuhn-subdivision tetrahedral meshes, oriented faces, shape
//!   metrics;
//! - [`quadrature`]: Gauss rules on tetrahedra/triangles, plus graded rules
//!   for integrands singular along the L-shape's re-entrant edge;
//! - [`polyspace`]: orthonormal polynomial bases and the constrained
//!   subspaces (curl ranges, orthogonal complements, Nedelec spaces, face
//!   trace spaces) that define the scheme variants;
//! - [`projections`]: the elementwise L2, curl+, HDG, and BDM-H projections,
//!   face projections, boundary remainders, and residual checks for the
//!   moment assumption and the weak-commutativity identities;
//! - [`scheme`]: local assembly, static condensation, the skeleton solve,
//!   and recovery of the interior fields, for five scheme variants
//!   (equal-order standard HDG plus four mixed-order variants);
//! - [`verify`]: manufactured solutions (smooth and corner-singular), error
//!   norms, the energy-identity diagnostic, and convergence studies with CSV
//!   output.
//!
//! All tolerances used by library-level assertions live in [`tol`].

pub mod la;
pub mod mesh;
pub mod polyspace;
pub mod projections;
pub mod quadrature;
pub mod scheme;
pub mod tol;
pub mod verify;
