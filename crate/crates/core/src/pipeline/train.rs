//! The two-stage training loop: unaware (no compression) and JPEG-aware
//! (fine-tuning with on-the-fly per-patch compression of both classes).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use super::dataset::{DatasetIndex, Label, SplitTag};
use crate::cnn::{
    adam_step, cross_entropy_from_logits, patch_classifier_spec, AdamHyper, AdamState, Mode,
    Model, ModelMeta, Net, Tensor4, CLASS_ADJUSTED,
};
use crate::img::{load_image, tile_patches, ImageRgb, PATCH_SIZE};
use crate::jpeg::jpeg_roundtrip;
use crate::rng::{derive_seed, stream, StreamId};
use crate::{Error, Result};

/// Training stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// No compression; the pre-training step.
    Unaware,
    /// Every patch of every batch is JPEG round-tripped with a fresh QF.
    Aware,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Unaware => "unaware",
            Stage::Aware => "aware",
        }
    }
}

/// Knobs of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub stage: Stage,
    pub batch_size: usize,
    pub epochs: usize,
    /// Inclusive QF range for the aware stage, drawn uniformly per patch.
    pub qf_lo: u8,
    pub qf_hi: u8,
    pub seed: u64,
    pub width_mult: f64,
    pub hyper: AdamHyper,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Unaware,
            batch_size: 32,
            epochs: 3,
            qf_lo: 90,
            qf_hi: 100,
            seed: 0,
            width_mult: 1.0,
            hyper: AdamHyper::default(),
        }
    }
}

impl TrainingConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        if self.qf_lo < 1 || self.qf_hi > 100 || self.qf_lo > self.qf_hi {
            return Err(Error::InvalidParameter(format!(
                "qf range [{}, {}] must lie within [1, 100]",
                self.qf_lo, self.qf_hi
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-run diagnostics.
#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    /// Mean cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
    /// Held-out patch accuracy after each epoch.
    pub val_accuracy: Vec<f64>,
    /// Mean loss of the very first step (before any update had much effect).
    pub initial_loss: f64,
    pub steps: usize,
    /// Patches compressed by augmentation, split by class; both are nonzero
    /// in the aware stage.
    pub compressed_h0: usize,
    pub compressed_h1: usize,
}

/// A trained model plus its training log.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: Model,
    pub log: TrainLog,
}

const PATCH_BYTES: usize = (PATCH_SIZE * PATCH_SIZE * 3) as usize;

/// Materialized patches of one split: raw bytes plus class indices.
pub struct PatchSet {
    data: Vec<u8>,
    labels: Vec<u8>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn patch(&self, i: usize) -> &[u8] {
        &self.data[i * PATCH_BYTES..(i + 1) * PATCH_BYTES]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }
}

/// Load every patch of a split into memory, applying H1 operators per image
/// (adjust first, tile second).
pub fn materialize_patches(
    source_dir: impl AsRef<Path>,
    index: &DatasetIndex,
    split: SplitTag,
) -> Result<PatchSet> {
    let source_dir = source_dir.as_ref();
    let entries: Vec<usize> = (0..index.entries.len())
        .filter(|&i| index.entries[i].split == split)
        .collect();
    let mut data = vec![0u8; entries.len() * PATCH_BYTES];
    let mut labels = vec![0u8; entries.len()];

    for image in index.images_in_split(split) {
        let pristine = load_image(source_dir.join(&image))?;
        let needs_h1 = entries.iter().any(|&i| {
            let e = &index.entries[i];
            e.image == image && e.label == Label::Adjusted
        });
        let adjusted = if needs_h1 {
            let op = index
                .operator_for(&image)
                .ok_or_else(|| Error::Dataset(format!("image {image} has no operator draw")))?;
            Some(op.apply(&pristine)?)
        } else {
            None
        };
        let grid_p = tile_patches(&pristine)?;
        let grid_a = adjusted.as_ref().map(tile_patches).transpose()?;

        for (slot, &i) in entries.iter().enumerate() {
            let e = &index.entries[i];
            if e.image != image {
                continue;
            }
            let grid = match e.label {
                Label::Pristine => &grid_p,
                Label::Adjusted => grid_a.as_ref().expect("h1 grid built"),
            };
            let patch = grid.patch(e.row, e.col);
            data[slot * PATCH_BYTES..(slot + 1) * PATCH_BYTES].copy_from_slice(patch.data());
            labels[slot] = e.label.class_index() as u8;
        }
    }
    Ok(PatchSet { data, labels })
}

/// Per-patch JPEG augmentation: in the aware stage each patch independently
/// receives a fresh uniform QF draw from the configured range; the unaware
/// stage passes bytes through untouched.
pub fn augment_compress(
    patch: &[u8],
    stage: Stage,
    qf_lo: u8,
    qf_hi: u8,
    rng: &mut impl Rng,
) -> Result<(Vec<u8>, Option<u8>)> {
    match stage {
        Stage::Unaware => Ok((patch.to_vec(), None)),
        Stage::Aware => {
            let qf = rng.gen_range(qf_lo..=qf_hi);
            let img = ImageRgb::new(PATCH_SIZE, PATCH_SIZE, patch.to_vec())?;
            Ok((jpeg_roundtrip(&img, qf)?.into_raw(), Some(qf)))
        }
    }
}

fn batch_tensor(
    patches: &PatchSet,
    order: &[usize],
    stage: Stage,
    cfg: &TrainingConfig,
    epoch: usize,
    log: &mut TrainLog,
) -> Result<(Tensor4<f32>, Vec<usize>)> {
    let n = order.len();
    let mut data = Vec::with_capacity(n * PATCH_BYTES);
    let mut labels = Vec::with_capacity(n);
    for &idx in order {
        let raw = patches.patch(idx);
        let bytes = match stage {
            Stage::Unaware => raw.to_vec(),
            Stage::Aware => {
                let mut rng = stream(
                    cfg.seed,
                    StreamId::QualityFactor,
                    &[epoch as u64, idx as u64],
                );
                let (bytes, _) = augment_compress(raw, stage, cfg.qf_lo, cfg.qf_hi, &mut rng)?;
                if patches.label(idx) == CLASS_ADJUSTED {
                    log.compressed_h1 += 1;
                } else {
                    log.compressed_h0 += 1;
                }
                bytes
            }
        };
        data.extend(bytes.iter().map(|&b| b as f32 / 255.0));
        labels.push(patches.label(idx));
    }
    Ok((
        Tensor4::from_vec(n, PATCH_SIZE as usize, PATCH_SIZE as usize, 3, data),
        labels,
    ))
}

/// Patch-level accuracy of a network on a materialized set (dropout off,
/// no augmentation).
pub fn patch_accuracy(net: &Net<f32>, patches: &PatchSet) -> f64 {
    let mut correct = 0usize;
    let idxs: Vec<usize> = (0..patches.len()).collect();
    for chunk in idxs.chunks(64) {
        let mut data = Vec::with_capacity(chunk.len() * PATCH_BYTES);
        for &i in chunk {
            data.extend(patches.patch(i).iter().map(|&b| b as f32 / 255.0));
        }
        let batch = Tensor4::from_vec(
            chunk.len(),
            PATCH_SIZE as usize,
            PATCH_SIZE as usize,
            3,
            data,
        );
        let (probs, _) = net.forward(&batch, Mode::Eval);
        for (row, &i) in probs.chunks_exact(2).zip(chunk) {
            let predicted = usize::from(row[1] > row[0]);
            if predicted == patches.label(i) {
                correct += 1;
            }
        }
    }
    correct as f64 / patches.len().max(1) as f64
}

fn run_training(
    mut net: Net<f32>,
    train: &PatchSet,
    val: &PatchSet,
    cfg: &TrainingConfig,
) -> Result<(Net<f32>, TrainLog)> {
    let mut state = AdamState::new(&net, cfg.hyper);
    let mut log = TrainLog::default();
    let mut global_step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(cfg.seed, StreamId::EpochShuffle, &[epoch as u64]));

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (batch, labels) = batch_tensor(train, chunk, cfg.stage, cfg, epoch, &mut log)?;
            let dropout_seed = derive_seed(cfg.seed, StreamId::Dropout, &[epoch as u64, global_step as u64]);
            let (_, cache) = net.forward(&batch, Mode::Train { dropout_seed });
            let loss = cross_entropy_from_logits(&cache.logits, &labels);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: global_step,
                    loss,
                });
            }
            if global_step == 0 {
                log.initial_loss = loss;
            }
            let grads = net.backward(&cache, &labels);
            adam_step(&mut net, &grads, &mut state)?;
            loss_sum += loss;
            batches += 1;
            global_step += 1;
        }
        log.epoch_loss.push(loss_sum / batches.max(1) as f64);
        log.val_accuracy.push(patch_accuracy(&net, val));
    }
    log.steps = global_step;
    Ok((net, log))
}

fn dataset_hash(index: &DatasetIndex) -> String {
    let mut hasher = Sha256::new();
    hasher.update(index.to_manifest().as_bytes());
    hex_prefix(&hasher.finalize(), 16)
}

fn params_hash(net: &Net<f32>) -> String {
    let mut hasher = Sha256::new();
    for p in &net.params {
        for &x in p.w.iter().chain(p.b.iter()) {
            hasher.update(x.to_le_bytes());
        }
    }
    hex_prefix(&hasher.finalize(), 16)
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s = String::with_capacity(chars);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
        if s.len() >= chars {
            break;
        }
    }
    s.truncate(chars);
    s
}

fn provenance_line(stage: Stage, cfg: &TrainingConfig, index: &DatasetIndex, parent: Option<&Net<f32>>) -> String {
    let parent = parent
        .map(|p| format!(" parent=sha256:{}", params_hash(p)))
        .unwrap_or_default();
    format!(
        "stage={} seed={} epochs={} batch={} qf={}..{} width_mult={} dataset=sha256:{}{}",
        stage.as_str(),
        cfg.seed,
        cfg.epochs,
        cfg.batch_size,
        cfg.qf_lo,
        cfg.qf_hi,
        cfg.width_mult,
        dataset_hash(index),
        parent
    )
}

/// Stage one: train from random init on uncompressed patches.
pub fn train_unaware(
    source_dir: impl AsRef<Path>,
    index: &DatasetIndex,
    cfg: &TrainingConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let cfg = TrainingConfig {
        stage: Stage::Unaware,
        ..cfg.clone()
    };
    let source_dir = source_dir.as_ref();
    let train = materialize_patches(source_dir, index, SplitTag::Train)?;
    let val = materialize_patches(source_dir, index, SplitTag::Val)?;
    if train.is_empty() {
        return Err(Error::Dataset("train split is empty".into()));
    }
    let net = Net::<f32>::init(patch_classifier_spec(cfg.width_mult), cfg.seed)?;
    let provenance = provenance_line(Stage::Unaware, &cfg, index, None);
    let (net, log) = run_training(net, &train, &val, &cfg)?;
    Ok(TrainedModel {
        model: Model {
            net,
            meta: ModelMeta {
                width_mult: cfg.width_mult,
                hyper: cfg.hyper,
                provenance,
            },
        },
        log,
    })
}

/// Stage two: fine-tune an unaware model with on-the-fly JPEG compression of
/// both classes. Optimizer moments start fresh.
pub fn finetune_aware(
    source_dir: impl AsRef<Path>,
    parent: &Model,
    index: &DatasetIndex,
    cfg: &TrainingConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let cfg = TrainingConfig {
        stage: Stage::Aware,
        width_mult: parent.meta.width_mult,
        ..cfg.clone()
    };
    let source_dir = source_dir.as_ref();
    let train = materialize_patches(source_dir, index, SplitTag::Train)?;
    let val = materialize_patches(source_dir, index, SplitTag::Val)?;
    let provenance = format!(
        "{} parent_provenance=[{}]",
        provenance_line(Stage::Aware, &cfg, index, Some(&parent.net)),
        parent.meta.provenance
    );
    let (net, log) = run_training(parent.net.clone(), &train, &val, &cfg)?;
    Ok(TrainedModel {
        model: Model {
            net,
            meta: ModelMeta {
                width_mult: cfg.width_mult,
                hyper: cfg.hyper,
                provenance,
            },
        },
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{build_dataset, DatasetConfig};
    use crate::synth::generate_corpus;

    struct Fixture {
        _dir: tempfile::TempDir,
        source: std::path::PathBuf,
        index: DatasetIndex,
    }

    fn fixture(budget: usize) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        generate_corpus(dir.path(), 10, 192, 192, 4242).unwrap();
        let config = DatasetConfig {
            seed: 3,
            budget_per_class: budget,
            eval_budget_per_class: 12,
            val_fraction: 0.2,
            test_fraction: 0.2,
        };
        let index = build_dataset(dir.path(), &config).unwrap();
        Fixture {
            source: dir.path().to_path_buf(),
            _dir: dir,
            index,
        }
    }

    fn tiny_config(seed: u64) -> TrainingConfig {
        TrainingConfig {
            batch_size: 8,
            epochs: 1,
            width_mult: 0.125,
            seed,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn unaware_training_is_deterministic_and_descends() {
        let fx = fixture(40);
        let a = train_unaware(&fx.source, &fx.index, &tiny_config(7)).unwrap();
        let b = train_unaware(&fx.source, &fx.index, &tiny_config(7)).unwrap();
        assert_eq!(a.model.net, b.model.net);
        assert_eq!(a.log.epoch_loss, b.log.epoch_loss);
        assert!(a.log.compressed_h0 == 0 && a.log.compressed_h1 == 0);

        let c = train_unaware(&fx.source, &fx.index, &tiny_config(8)).unwrap();
        assert_ne!(a.model.net, c.model.net, "seed must matter");
    }

    #[test]
    fn aware_stage_compresses_both_classes() {
        let fx = fixture(24);
        let unaware = train_unaware(&fx.source, &fx.index, &tiny_config(1)).unwrap();
        let aware = finetune_aware(&fx.source, &unaware.model, &fx.index, &tiny_config(1)).unwrap();
        assert!(aware.log.compressed_h0 > 0, "h0 patches were not compressed");
        assert!(aware.log.compressed_h1 > 0, "h1 patches were not compressed");
        assert!(aware.model.meta.provenance.contains("stage=aware"));
        assert!(aware.model.meta.provenance.contains("parent=sha256:"));
    }

    #[test]
    fn aware_finetune_is_deterministic() {
        let fx = fixture(24);
        let unaware = train_unaware(&fx.source, &fx.index, &tiny_config(2)).unwrap();
        let a = finetune_aware(&fx.source, &unaware.model, &fx.index, &tiny_config(2)).unwrap();
        let b = finetune_aware(&fx.source, &unaware.model, &fx.index, &tiny_config(2)).unwrap();
        assert_eq!(a.model.net, b.model.net);
    }

    #[test]
    fn qf_draws_are_uniform_over_the_range() {
        let mut counts = [0usize; 11];
        let total = 100_000usize;
        for i in 0..total {
            let mut rng = stream(9, StreamId::QualityFactor, &[0, i as u64]);
            let qf = rng.gen_range(90u8..=100);
            counts[(qf - 90) as usize] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let f = c as f64 / total as f64;
            assert!(
                (f - 1.0 / 11.0).abs() < 0.01,
                "qf {} frequency {f}",
                90 + i
            );
        }
    }

    #[test]
    fn aware_patch_equals_crop_of_whole_image_compression() {
        // The on-the-fly augmentation only works because block-aligned
        // compression commutes with cropping.
        let img = crate::synth::generate_image(55, 192, 128);
        let grid = tile_patches(&img).unwrap();
        let whole = jpeg_roundtrip(&img, 93).unwrap();
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                let patch_rt = jpeg_roundtrip(grid.patch(r, c), 93).unwrap();
                let crop = whole.crop(c * 64, r * 64, 64, 64).unwrap();
                assert_eq!(patch_rt, crop, "patch ({r},{c})");
            }
        }
    }

    #[test]
    fn materialized_patches_follow_operator_then_tile_order() {
        let fx = fixture(24);
        let patches = materialize_patches(&fx.source, &fx.index, SplitTag::Train).unwrap();
        // Find one H1 entry and recompute its patch independently.
        let pos = (0..fx.index.entries.len())
            .filter(|&i| fx.index.entries[i].split == SplitTag::Train)
            .position(|i| fx.index.entries[i].label == Label::Adjusted)
            .unwrap();
        let train_entries: Vec<&IndexEntry> = fx
            .index
            .entries
            .iter()
            .filter(|e| e.split == SplitTag::Train)
            .collect();
        let entry = train_entries[pos];
        let img = load_image(fx.source.join(&entry.image)).unwrap();
        let adjusted = entry.op.as_ref().unwrap().apply(&img).unwrap();
        let grid = tile_patches(&adjusted).unwrap();
        assert_eq!(
            patches.patch(pos),
            grid.patch(entry.row, entry.col).data(),
            "H1 patch must come from adjust-then-tile"
        );
    }

    use crate::pipeline::dataset::IndexEntry;

    #[test]
    fn invalid_configs_are_rejected() {
        let fx = fixture(24);
        let bad = TrainingConfig {
            qf_lo: 0,
            ..tiny_config(1)
        };
        assert!(train_unaware(&fx.source, &fx.index, &bad).is_err());
        let bad = TrainingConfig {
            batch_size: 0,
            ..tiny_config(1)
        };
        assert!(train_unaware(&fx.source, &fx.index, &bad).is_err());
    }
}
