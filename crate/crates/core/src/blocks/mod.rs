//! Composite network blocks built from the tensor kernels.

mod attention;
mod dc_block;

pub use attention::{
    cross_attn, dn_ca, dn_ca_traced, pal_ca, AttentionWeights, DnCaTrace, OffsetNet, DEFAULT_HEADS,
    DEFAULT_NEIGHBORHOOD, DENOMINATOR_FLOOR, GAMMA_MAX, GAMMA_MIN,
};
pub use dc_block::{dc_block, dc_stack, DcBlockWeights, Projection};
