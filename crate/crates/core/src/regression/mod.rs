//! Weighted regression machinery and the three outcome-model families.

mod models;
mod spline;
mod wls;

pub use models::{
    break_point_candidates, changepoint_profile, fit_changepoint_erc, fit_family, fit_gam_erc,
    fit_gam_erc_with_df, fit_linear_erc, predict_erc, ExposureTerms, FittedModel, ModelFamily,
    RegressionData, ResponseScale, GAM_DF,
};
pub use spline::{spline_basis, SplineBasis};
pub use wls::{wls_fit, DesignMatrix, WlsFit};
