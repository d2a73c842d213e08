//! Differentiable registration operators and deformation analysis.

mod diffusion;
mod fields;
mod jacobian;
mod lncc;
mod loss;
mod warp;

pub use diffusion::{diffusion_reg, diffusion_reg_value};
pub use fields::{DisplacementField, Image2D, LabelMap};
pub use jacobian::{jacobian_stats, JacobianStats};
pub use lncc::{lncc, lncc_value, local_correlation_map, DEFAULT_WINDOW, VARIANCE_FLOOR};
pub use loss::{total_loss, total_loss_value};
pub use warp::{warp, warp_image, warp_labels};
