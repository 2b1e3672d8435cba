//! Centralized numeric tolerances.
//!
//! Every library-level assertion and diagnostic threshold is defined here so
//! the budget is auditable in one place. The values are sized for double
//! precision with polynomial degrees up to 5 and quadrature exactness up to
//! ~degree 24; they are not meant to be tuned per call site.

/// Orthonormal bases: allowed Gram-matrix defect `max |G - I|` under the
/// element/face quadrature inner product.
pub const GRAM_DEFECT: f64 = 1e-10;

/// Relative singular-value threshold used when extracting subspace ranks,
/// ranges, and nullspaces.
pub const SVD_RANK_REL: f64 = 1e-10;

/// Containment residual for a vector that is claimed to lie in a subspace
/// (after projecting onto the subspace and measuring the remainder).
pub const SUBSPACE_RESIDUAL: f64 = 1e-9;

/// Defining-equation residuals of the four projections (L2, curl+, HDG,
/// BDM-H), relative to the data scale.
pub const DEFINING_RESIDUAL: f64 = 1e-9;

/// Weak-commutativity and related elementwise identity residuals.
pub const IDENTITY_RESIDUAL: f64 = 1e-9;

/// Relative residual of the global energy identity,
/// `|lhs - rhs| / (|lhs| + |rhs| + EPS_ENERGY)`.
pub const ENERGY_REL_RESIDUAL: f64 = 1e-7;

/// Absolute floor added to the energy-identity denominator so that
/// configurations where both sides vanish (exact solution inside the
/// discrete space) do not divide by zero.
pub const EPS_ENERGY: f64 = 1e-12;

/// Post-solve relative algebraic residual contract of the skeleton solver.
pub const SOLVER_REL_RESIDUAL: f64 = 1e-10;

/// Relative pivot threshold below which the block factorization reports
/// breakdown instead of dividing.
pub const PIVOT_BREAKDOWN: f64 = 1e-13;

/// Mesh volume bookkeeping: relative defect of the tetrahedra volume sum
/// against the exact domain volume.
pub const MESH_VOLUME_REL: f64 = 1e-12;

/// Interior faces: allowed deviation of the two adjacent outward normals
/// from being exactly antiparallel.
pub const NORMAL_ANTIPARALLEL: f64 = 1e-14;

/// Quadrature: allowed defect of the weight sum against the reference
/// measure.
pub const QUAD_WEIGHT_SUM: f64 = 1e-14;

/// Quadrature: relative error allowed when integrating monomials up to the
/// declared exactness degree.
pub const QUAD_MONOMIAL_REL: f64 = 1e-12;

/// Tolerance on observed convergence orders in projection scaling studies.
pub const RATE_TOL: f64 = 0.2;

/// Errors below this are treated as saturated (roundoff-dominated) and
/// excluded from rate computation.
pub const RATE_SATURATION: f64 = 1e-13;

/// Coordinates with |x| and |y| both below this count as lying on the
/// re-entrant axis {x = y = 0} when classifying singular cells.
pub const AXIS_TOL: f64 = 1e-12;
