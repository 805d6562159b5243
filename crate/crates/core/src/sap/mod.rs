//! Style attribute predictor: conv + self-attention visual encoder, element
//! decoder with self- and cross-attention, nine classification heads and a
//! masked multi-task focal objective. Decodes non-autoregressively (one
//! pass) or autoregressively (one pass per element).

mod classifier;
mod heads;
pub(crate) mod layers;
mod model;
mod train;

pub use classifier::ClassifierModel;
pub use heads::{loss_terms, sap_loss, style_from_classes, targets_for, Head, LossTerms, Targets, HEAD_COUNT};
pub use model::{
    attr_ids, box_weights, canonical_order, image_tensor, upsample_map, AttentionExport, Encoded, Mode, SapConfig,
    SapForward, SapModel, DOWNSCALE,
};
pub use train::{evaluate_loss, train, SapSample, StepLog, TrainLog};
