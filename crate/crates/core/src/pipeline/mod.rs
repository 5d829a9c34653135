//! Dataset construction and the two-stage training protocol.
//!
//! Class generation follows one fixed chain: adjust the whole image (H1
//! only), tile into 64×64 patches, and — in the JPEG-aware stage — compress
//! each patch on the fly with a freshly drawn quality factor. Splits
//! partition source images, never patches, so no test-image content can
//! leak into training.

mod dataset;
mod train;

pub use dataset::{
    build_dataset, DatasetConfig, DatasetIndex, IndexEntry, Label, SplitTag,
};
pub use train::{
    augment_compress, finetune_aware, materialize_patches, patch_accuracy, train_unaware,
    PatchSet, Stage, TrainLog, TrainedModel, TrainingConfig,
};
