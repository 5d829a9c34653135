//! The patch classification network.
//!
//! A fixed stack of nine convolutional layers (five, max-pool, three,
//! max-pool, one 1×1), one hidden dense layer with dropout, and a softmax
//! head over the two hypotheses. Convolutions are unpadded with stride 1;
//! max-pooling is 2×2 stride 2 with trailing odd rows/columns discarded.
//! For a 64×64×3 patch the feature maps run
//! 62→60→58→56→54 →pool→ 27 →25→23→21 →pool→ 10 →(1×1)→ 10, then
//! flatten → 250 → 2.
//!
//! All layer arithmetic is generic over `f32`/`f64`; training and inference
//! run in `f32`, while the `f64` instantiation exists for finite-difference
//! gradient checking.

mod adam;
pub mod layers;
mod net;
mod store;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use net::{
    cross_entropy_from_logits, patch_classifier_spec, Cache, LayerKind, Mode, Net, NetSpec,
    ParamBlock, CLASS_ADJUSTED, CLASS_PRISTINE,
};
pub use store::{load_model, save_model, Model, ModelMeta};
pub use tensor::{Scalar, Tensor4};

use crate::eval::ScoreVector;
use crate::img::PatchGrid;

/// Batch size used when scoring patch grids; scores are independent of the
/// partitioning, this only bounds scratch memory.
const SCORE_BATCH: usize = 32;

/// Soft score (probability of the adjusted hypothesis) for every patch in
/// grid order, with dropout disabled.
pub fn infer_patch_scores(net: &Net<f32>, grid: &PatchGrid) -> ScoreVector {
    let mut scores = Vec::with_capacity(grid.patches.len());
    for chunk in grid.patches.chunks(SCORE_BATCH) {
        let batch = Tensor4::from_patches(chunk);
        let (probs, _) = net.forward(&batch, Mode::Eval);
        scores.extend(
            probs
                .chunks_exact(2)
                .map(|row| row[CLASS_ADJUSTED] as f64),
        );
    }
    ScoreVector {
        scores,
        rows: grid.rows as usize,
        cols: grid.cols as usize,
    }
}
