//! Dataset index: which patches of which images form each class and split.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::img::PATCH_SIZE;
use crate::rng::{stream, StreamId};
use crate::tonal::{sample_training_adjustment, OperatorSpec};
use crate::{Error, Result};

/// Hypothesis label of a patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Label {
    /// H0: patch of a pristine image.
    Pristine,
    /// H1: patch of a contrast-adjusted image.
    Adjusted,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Pristine => "h0",
            Label::Adjusted => "h1",
        }
    }

    /// Softmax class index.
    pub fn class_index(self) -> usize {
        match self {
            Label::Pristine => crate::cnn::CLASS_PRISTINE,
            Label::Adjusted => crate::cnn::CLASS_ADJUSTED,
        }
    }
}

/// Which partition a source image (and all its patches) belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

/// One patch-level dataset entry.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    /// Source image id: its file name within the source directory.
    pub image: String,
    pub row: u32,
    pub col: u32,
    pub label: Label,
    /// Exactly one operator for H1 entries, none for H0.
    pub op: Option<OperatorSpec>,
    pub split: SplitTag,
}

/// Configuration of dataset construction.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    /// Training patches per class after balancing.
    pub budget_per_class: usize,
    /// Val/test patches per class after balancing.
    pub eval_budget_per_class: usize,
    /// Fraction of non-test images held out for monitoring.
    pub val_fraction: f64,
    /// Fraction of images reserved for the test split.
    pub test_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            budget_per_class: 20_000,
            eval_budget_per_class: 2_000,
            val_fraction: 0.1,
            test_fraction: 0.3,
        }
    }
}

/// The persisted dataset description: entries plus the header needed to
/// reproduce it.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub config: DatasetConfig,
    pub image_count: usize,
    pub entries: Vec<IndexEntry>,
}

impl DatasetIndex {
    /// Unique image ids of a split, sorted.
    pub fn images_in_split(&self, split: SplitTag) -> Vec<String> {
        let mut out: Vec<String> = self
            .entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.image.clone())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// The operator assigned to an image's H1 entries, if any.
    pub fn operator_for(&self, image: &str) -> Option<&OperatorSpec> {
        self.entries
            .iter()
            .find(|e| e.image == image && e.op.is_some())
            .and_then(|e| e.op.as_ref())
    }

    /// Line-oriented manifest form (also the hashing base for provenance).
    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        out.push_str("tonedetect-index v1\n");
        let c = &self.config;
        let _ = writeln!(out, "seed {}", c.seed);
        let _ = writeln!(out, "budget {}", c.budget_per_class);
        let _ = writeln!(out, "eval_budget {}", c.eval_budget_per_class);
        let _ = writeln!(out, "val_fraction {}", c.val_fraction);
        let _ = writeln!(out, "test_fraction {}", c.test_fraction);
        let _ = writeln!(out, "images {}", self.image_count);
        for e in &self.entries {
            let op = e.op.as_ref().map(|o| o.to_token()).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "entry {} {} {} {} {} {}",
                e.image,
                e.row,
                e.col,
                e.label.as_str(),
                op,
                e.split.as_str()
            );
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_manifest()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_manifest(&text)
    }

    pub fn parse_manifest(text: &str) -> Result<Self> {
        let bad = |line: usize, reason: String| Error::Parse {
            kind: "dataset index",
            line,
            reason,
        };
        let mut lines = text.lines().enumerate();
        let (_, magic) = lines
            .next()
            .ok_or_else(|| bad(1, "empty manifest".into()))?;
        if magic != "tonedetect-index v1" {
            return Err(bad(1, format!("unsupported header {magic:?}")));
        }
        let mut config = DatasetConfig::default();
        let mut image_count = 0usize;
        let mut entries = Vec::new();
        for (ln, line) in lines {
            let mut it = line.split(' ');
            match it.next() {
                Some("seed") => config.seed = parse(it.next(), ln, "seed")?,
                Some("budget") => config.budget_per_class = parse(it.next(), ln, "budget")?,
                Some("eval_budget") => {
                    config.eval_budget_per_class = parse(it.next(), ln, "eval_budget")?
                }
                Some("val_fraction") => config.val_fraction = parse(it.next(), ln, "val_fraction")?,
                Some("test_fraction") => {
                    config.test_fraction = parse(it.next(), ln, "test_fraction")?
                }
                Some("images") => image_count = parse(it.next(), ln, "images")?,
                Some("entry") => {
                    let image: String = parse(it.next(), ln, "image id")?;
                    let row = parse(it.next(), ln, "row")?;
                    let col = parse(it.next(), ln, "col")?;
                    let label = match it.next() {
                        Some("h0") => Label::Pristine,
                        Some("h1") => Label::Adjusted,
                        other => return Err(bad(ln + 1, format!("bad label {other:?}"))),
                    };
                    let op = match it.next() {
                        Some("-") => None,
                        Some(tok) => Some(OperatorSpec::parse_token(tok).map_err(|e| {
                            bad(ln + 1, format!("bad operator token: {e}"))
                        })?),
                        None => return Err(bad(ln + 1, "missing operator".into())),
                    };
                    let split = match it.next() {
                        Some("train") => SplitTag::Train,
                        Some("val") => SplitTag::Val,
                        Some("test") => SplitTag::Test,
                        other => return Err(bad(ln + 1, format!("bad split {other:?}"))),
                    };
                    if (label == Label::Adjusted) != op.is_some() {
                        return Err(bad(ln + 1, "h1 entries carry exactly one operator".into()));
                    }
                    entries.push(IndexEntry {
                        image,
                        row,
                        col,
                        label,
                        op,
                        split,
                    });
                }
                Some("") | None => {}
                other => return Err(bad(ln + 1, format!("unknown line {other:?}"))),
            }
        }
        Ok(Self {
            config,
            image_count,
            entries,
        })
    }
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok()).ok_or(Error::Parse {
        kind: "dataset index",
        line: line + 1,
        reason: format!("bad or missing {what}"),
    })
}

/// List the lossless rasters of a source directory, sorted by name.
pub(crate) fn list_source_images(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let lower = name.to_ascii_lowercase();
        if lower.ends_with(".png") || lower.ends_with(".ppm") {
            names.push(name);
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::Dataset(format!(
            "source dir {} contains no .png or .ppm images",
            dir.display()
        )));
    }
    Ok(names)
}

/// Build a leakage-safe dataset index over a directory of lossless images.
///
/// Images are split into train/val/test by image id; each image receives one
/// training-adjustment draw for its H1 patches; per-class patch counts are
/// balanced to the configured budgets by uniform subsampling.
pub fn build_dataset(source_dir: impl AsRef<Path>, config: &DatasetConfig) -> Result<DatasetIndex> {
    let source_dir = source_dir.as_ref();
    let names = list_source_images(source_dir)?;
    let n = names.len();

    // Per-image patch grid dimensions (header-only reads).
    let mut grid_dims: BTreeMap<String, (u32, u32)> = BTreeMap::new();
    for name in &names {
        let path = source_dir.join(name);
        let (w, h) = image_dims(&path)?;
        if w < PATCH_SIZE || h < PATCH_SIZE {
            return Err(Error::Dataset(format!(
                "image {name} is {w}x{h}, smaller than one {PATCH_SIZE}x{PATCH_SIZE} patch"
            )));
        }
        grid_dims.insert(name.clone(), (h / PATCH_SIZE, w / PATCH_SIZE));
    }

    // Image-level split.
    let mut shuffled = names.clone();
    shuffled.shuffle(&mut stream(config.seed, StreamId::Split, &[]));
    let n_test = ((n as f64 * config.test_fraction).round() as usize).clamp(1, n - 2);
    let n_val = (((n - n_test) as f64 * config.val_fraction).round() as usize)
        .clamp(1, n - n_test - 1);
    let split_of = |name: &str| -> SplitTag {
        let pos = shuffled.iter().position(|s| s == name).expect("listed");
        if pos < n_test {
            SplitTag::Test
        } else if pos < n_test + n_val {
            SplitTag::Val
        } else {
            SplitTag::Train
        }
    };

    // One adjustment draw per image, position-independent of the split.
    let ops: BTreeMap<String, OperatorSpec> = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut rng = stream(config.seed, StreamId::OperatorDraw, &[i as u64]);
            (name.clone(), sample_training_adjustment(&mut rng))
        })
        .collect();

    let mut entries = Vec::new();
    for (split, split_idx) in [(SplitTag::Train, 0u64), (SplitTag::Val, 1), (SplitTag::Test, 2)] {
        let budget = match split {
            SplitTag::Train => config.budget_per_class,
            _ => config.eval_budget_per_class,
        };
        let mut candidates: Vec<(String, u32, u32)> = Vec::new();
        for name in &names {
            if split_of(name) != split {
                continue;
            }
            let (rows, cols) = grid_dims[name];
            for r in 0..rows {
                for c in 0..cols {
                    candidates.push((name.clone(), r, c));
                }
            }
        }
        if candidates.len() < budget {
            return Err(Error::Dataset(format!(
                "{} split has {} candidate patches per class, budget needs {}",
                split.as_str(),
                candidates.len(),
                budget
            )));
        }
        for (label, class_idx) in [(Label::Pristine, 0u64), (Label::Adjusted, 1)] {
            let mut picked = candidates.clone();
            picked.shuffle(&mut stream(
                config.seed,
                StreamId::PatchSubsample,
                &[split_idx, class_idx],
            ));
            picked.truncate(budget);
            for (image, row, col) in picked {
                let op = (label == Label::Adjusted).then(|| ops[&image].clone());
                entries.push(IndexEntry {
                    image,
                    row,
                    col,
                    label,
                    op,
                    split,
                });
            }
        }
    }

    // Canonical order for reproducible manifests.
    entries.sort_by(|a, b| {
        (a.split, a.label, &a.image, a.row, a.col).cmp(&(b.split, b.label, &b.image, b.row, b.col))
    });

    Ok(DatasetIndex {
        config: config.clone(),
        image_count: n,
        entries,
    })
}

fn image_dims(path: &Path) -> Result<(u32, u32)> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
        // The PPM decoder is ours; just read the whole (small) header.
        let img = crate::img::load_image(path)?;
        return Ok((img.width(), img.height()));
    }
    image::image_dimensions(path)
        .map_err(|e| Error::ingest(path, format!("cannot read dimensions: {e}")))
}
