//! Parameters, layers and the composite blocks.

mod audit;
pub mod blocks;
pub mod check;
mod layers;
mod store;

pub use audit::ParamAudit;
pub use blocks::{BlockKind, BlockSpec, Bottleneck, ConvBlock, PreactResidual, SeBlock};
pub use check::{absorbed_bias_gradient, grad_check_forward, grad_check_layer, CheckOptions};
pub use layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Ctx, Dense, Layer, Mode};
pub use store::{Param, ParamBuilder, ParamKind, ParamStore};

/// Parameter audit of one layer or block.
pub fn param_count(layer: &dyn Layer, store: &ParamStore) -> ParamAudit {
    ParamAudit::of(store, &layer.param_ids())
}

#[cfg(test)]
mod tests;
