//! Special functions, quadrature and bounded optimization.

pub mod optimize;
pub mod quadrature;
pub mod special;

pub use optimize::{maximize_bounded, Maximum, OptimizerSettings};
pub use quadrature::integrate;
pub use special::{
    chi2_survival, erfc, ks_test, ln_chi2_survival, ln_normal_cdf, normal_cdf, normal_isf,
    normal_pdf, normal_quantile, normal_sf,
};
