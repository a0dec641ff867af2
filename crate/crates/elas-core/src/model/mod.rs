//! Low-rank factored layers, squared-ReLU FFN with 2:4 activation
//! sparsity, and a tiny causal transformer with hand-written backward.

mod attention;
mod ffn;
mod lowrank;
mod norm;
mod transformer;

pub use attention::{AttnGrads, AttnSaved, Attention};
pub use ffn::{
    ffn_backward, ffn_forward, relu2_backward, relu2_forward, FfnGrads, FfnSaved, SparseFfn,
    SteTrace,
};
pub use lowrank::{LowRankLinear, LrGrads};
pub use norm::{NormGrads, NormSaved, RmsNorm};
pub use transformer::{
    Block, BlockSaved, ModelConfig, ModelGrads, ModelOutput, ModelSaved, TinyTransformer,
};
