//! Minimal differentiable kernel: hashed token features, a small dense
//! network with manual backpropagation, the contrastive / clustering /
//! symmetric-cross-entropy losses with analytic gradients, and the
//! pretraining and fine-tuning steps built from them.

mod features;
mod loss;
mod net;
mod pca;
mod train;

pub use features::{extract_features, DEFAULT_FEATURE_DIM};
pub use loss::{
    cosine_loss, grad_check, inter_loss, intra_loss, sce_loss, softmax,
    symmetric_contrastive_loss, SymmetricContrastive,
};
pub use net::{Linear, Mlp2, ModelDims, ModelGrads, ModelParams};
pub use pca::{project2, top2_principal_components, Projection2D};
pub use train::{
    classifier_step, encode_batch, evaluate, finetune_step, pretrain_step, FinetuneOptions,
    KindMetrics, LossBreakdown, LossWeights, SceConfig,
};
