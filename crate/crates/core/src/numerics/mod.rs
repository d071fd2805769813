//! Quadrature, the discrete `L²_q(X)` inner product and small-matrix linear
//! algebra shared by every other module.

mod linalg;
mod nelder_mead;
mod quadrature;

pub use linalg::{
    check_symmetric, cholesky_sample, pinv_symmetric, solve_spd, standard_normal_vector,
    sym_sqrt_pair, symmetrize, CovarianceFactor, JitterPolicy, SpdSolution, RANK_TOL,
};
pub use nelder_mead::{
    latin_hypercube, multistart_nelder_mead, nelder_mead, Minimum, MultistartReport,
    NelderMeadOptions,
};
pub use quadrature::{
    gauss_legendre_1d, gauss_legendre_rule, inner_product, BoxDomain, GridFunction,
    QuadratureRule,
};
pub(crate) use quadrature::inner_product_unchecked;

/// Default Gauss–Legendre points per axis.
pub const DEFAULT_QUADRATURE_POINTS: usize = 32;
