//! Model serialization: a text manifest (format version, layer list,
//! hyperparameters, training provenance) followed by raw little-endian f32
//! blobs in fixed layer order. Saving is canonical, so save → load → save
//! reproduces the file byte for byte. The layout is documented in
//! `docs/FORMATS.md`.

use std::fs;
use std::path::Path;

use super::adam::{AdamHyper, AdamState};
use super::net::{LayerKind, Net, NetSpec, ParamBlock};
use crate::{Error, Result};

const MAGIC: &str = "tonedetect-model v1";

/// A trained (or initialized) network plus its manifest metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub net: Net<f32>,
    pub meta: ModelMeta,
}

/// Metadata carried in the model manifest. `provenance` is a single free
/// line recorded at training time (seed, stage, dataset hash, parent);
/// it must not contain newlines.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelMeta {
    pub width_mult: f64,
    pub hyper: AdamHyper,
    pub provenance: String,
}

fn manifest_lines(model: &Model, optimizer: Option<&AdamState<f32>>) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("width_mult {}\n", model.meta.width_mult));
    let (h, w, c) = model.net.spec.input;
    out.push_str(&format!("input {h} {w} {c}\n"));
    for (i, layer) in model.net.spec.layers.iter().enumerate() {
        let name = model.net.spec.layer_name(i);
        match *layer {
            LayerKind::Conv { kh, kw, cin, cout } => {
                out.push_str(&format!("layer conv {name} {kh} {kw} {cin} {cout}\n"))
            }
            LayerKind::Dense { cin, cout } => {
                out.push_str(&format!("layer dense {name} {cin} {cout}\n"))
            }
            LayerKind::MaxPool2 => out.push_str("layer maxpool\n"),
            LayerKind::Relu => out.push_str("layer relu\n"),
            LayerKind::Flatten => out.push_str("layer flatten\n"),
            LayerKind::Dropout { p } => out.push_str(&format!("layer dropout {p}\n")),
        }
    }
    let hp = model.meta.hyper;
    out.push_str(&format!(
        "hyper lr {} beta1 {} beta2 {} eps {}\n",
        hp.lr, hp.beta1, hp.beta2, hp.eps
    ));
    out.push_str(&format!("provenance {}\n", model.meta.provenance));
    match optimizer {
        Some(state) => out.push_str(&format!("optimizer 1 step {}\n", state.step)),
        None => out.push_str("optimizer 0\n"),
    }
    out
}

fn blocks_f32_count(params: &[ParamBlock<f32>]) -> usize {
    params.iter().map(|p| p.w.len() + p.b.len()).sum()
}

fn push_blocks(bytes: &mut Vec<u8>, params: &[ParamBlock<f32>]) {
    for p in params {
        for &x in p.w.iter().chain(p.b.iter()) {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
}

/// Write the model (and optionally its optimizer state) to `path`.
pub fn save_model(
    model: &Model,
    optimizer: Option<&AdamState<f32>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if model.meta.provenance.contains('\n') {
        return Err(Error::InvalidParameter(
            "model provenance must be a single line".into(),
        ));
    }
    let mut count = blocks_f32_count(&model.net.params);
    if let Some(state) = optimizer {
        count += blocks_f32_count(&state.m) + blocks_f32_count(&state.v);
    }
    let mut bytes = manifest_lines(model, optimizer).into_bytes();
    bytes.extend_from_slice(format!("blob {count}\n").as_bytes());
    push_blocks(&mut bytes, &model.net.params);
    if let Some(state) = optimizer {
        push_blocks(&mut bytes, &state.m);
        push_blocks(&mut bytes, &state.v);
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a model file written by [`save_model`].
pub fn load_model(path: impl AsRef<Path>) -> Result<(Model, Option<AdamState<f32>>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_model(&bytes)
}

fn parse_model(bytes: &[u8]) -> Result<(Model, Option<AdamState<f32>>)> {
    let mut pos = 0usize;
    let mut next_line = || -> Result<String> {
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(Error::ModelFormat("unexpected end of manifest".into()));
        }
        let line = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::ModelFormat("manifest is not utf-8".into()))?
            .to_string();
        pos += 1;
        Ok(line)
    };

    let magic = next_line()?;
    if magic != MAGIC {
        return Err(Error::ModelFormat(format!(
            "unsupported version line {magic:?} (expected {MAGIC:?})"
        )));
    }

    let mut width_mult = 1.0f64;
    let mut input = None;
    let mut layers = Vec::new();
    let mut hyper = AdamHyper::default();
    let mut provenance = String::new();
    let mut optimizer_step: Option<Option<u64>> = None;
    let blob_count: usize;

    loop {
        let line = next_line()?;
        let mut it = line.split(' ');
        match it.next() {
            Some("width_mult") => {
                width_mult = parse_num(it.next(), "width_mult")?;
            }
            Some("input") => {
                let h = parse_num::<usize>(it.next(), "input h")?;
                let w = parse_num::<usize>(it.next(), "input w")?;
                let c = parse_num::<usize>(it.next(), "input c")?;
                input = Some((h, w, c));
            }
            Some("layer") => layers.push(parse_layer(&line, &mut it)?),
            Some("hyper") => {
                let mut get = |tag: &str| -> Result<f64> {
                    if it.next() != Some(tag) {
                        return Err(Error::ModelFormat(format!("hyper line missing {tag}")));
                    }
                    parse_num(it.next(), tag)
                };
                hyper = AdamHyper {
                    lr: get("lr")?,
                    beta1: get("beta1")?,
                    beta2: get("beta2")?,
                    eps: get("eps")?,
                };
            }
            Some("provenance") => {
                provenance = line["provenance".len()..].trim_start().to_string();
            }
            Some("optimizer") => match it.next() {
                Some("0") => optimizer_step = Some(None),
                Some("1") => {
                    if it.next() != Some("step") {
                        return Err(Error::ModelFormat("optimizer line missing step".into()));
                    }
                    optimizer_step = Some(Some(parse_num(it.next(), "optimizer step")?));
                }
                other => {
                    return Err(Error::ModelFormat(format!(
                        "optimizer flag must be 0 or 1, got {other:?}"
                    )))
                }
            },
            Some("blob") => {
                blob_count = parse_num(it.next(), "blob count")?;
                break;
            }
            other => {
                return Err(Error::ModelFormat(format!(
                    "unknown manifest line {other:?}"
                )))
            }
        }
    }

    let input = input.ok_or_else(|| Error::ModelFormat("manifest missing input line".into()))?;
    let optimizer_step =
        optimizer_step.ok_or_else(|| Error::ModelFormat("manifest missing optimizer line".into()))?;
    let spec = NetSpec { input, layers };

    // Cross-check the declared shapes: a manifest edited out of consistency
    // fails here with the offending layer's name.
    spec.shapes().map_err(|e| match e {
        Error::Shape {
            layer,
            expected,
            actual,
        } => Error::ModelShape {
            layer,
            detail: format!("expected {expected}, got {actual}"),
        },
        other => other,
    })?;

    let param_total = spec.param_count();
    let expected_count = if optimizer_step.is_some() {
        param_total * 3
    } else {
        param_total
    };
    if blob_count != expected_count {
        return Err(Error::ModelShape {
            layer: "blob".into(),
            detail: format!(
                "declared {blob_count} f32 values, layer shapes require {expected_count}"
            ),
        });
    }

    let blob = &bytes[pos..];
    if blob.len() < expected_count * 4 {
        return Err(Error::ModelTruncated {
            expected: expected_count * 4,
            actual: blob.len(),
        });
    }

    let mut offset = 0usize;
    let mut read_blocks = |spec: &NetSpec| -> Vec<ParamBlock<f32>> {
        let mut blocks = Vec::new();
        for &li in &spec.param_layers() {
            let (w_len, b_len) = match spec.layers[li] {
                LayerKind::Conv { kh, kw, cin, cout } => (kh * kw * cin * cout, cout),
                LayerKind::Dense { cin, cout } => (cin * cout, cout),
                _ => unreachable!(),
            };
            let mut take = |len: usize| -> Vec<f32> {
                let out = blob[offset..offset + len * 4]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                offset += len * 4;
                out
            };
            blocks.push(ParamBlock {
                w: take(w_len),
                b: take(b_len),
            });
        }
        blocks
    };

    let params = read_blocks(&spec);
    let net = Net { spec, params };
    let model = Model {
        meta: ModelMeta {
            width_mult,
            hyper,
            provenance,
        },
        net,
    };
    let optimizer = optimizer_step.map(|step| AdamState {
        hyper,
        step,
        m: read_blocks(&model.net.spec),
        v: read_blocks(&model.net.spec),
    });
    Ok((model, optimizer))
}

fn parse_layer(line: &str, it: &mut std::str::Split<'_, char>) -> Result<LayerKind> {
    match it.next() {
        Some("conv") => {
            let _name = it.next();
            Ok(LayerKind::Conv {
                kh: parse_num(it.next(), "conv kh")?,
                kw: parse_num(it.next(), "conv kw")?,
                cin: parse_num(it.next(), "conv cin")?,
                cout: parse_num(it.next(), "conv cout")?,
            })
        }
        Some("dense") => {
            let _name = it.next();
            Ok(LayerKind::Dense {
                cin: parse_num(it.next(), "dense cin")?,
                cout: parse_num(it.next(), "dense cout")?,
            })
        }
        Some("maxpool") => Ok(LayerKind::MaxPool2),
        Some("relu") => Ok(LayerKind::Relu),
        Some("flatten") => Ok(LayerKind::Flatten),
        Some("dropout") => Ok(LayerKind::Dropout {
            p: parse_num(it.next(), "dropout p")?,
        }),
        _ => Err(Error::ModelFormat(format!("unknown layer line {line:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::ModelFormat(format!("bad or missing {what}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::net::patch_classifier_spec;
    use crate::cnn::{adam_step, Mode, Tensor4};

    fn small_model(seed: u64) -> Model {
        let spec = patch_classifier_spec(0.125);
        Model {
            net: Net::<f32>::init(spec, seed).unwrap(),
            meta: ModelMeta {
                width_mult: 0.125,
                hyper: AdamHyper::default(),
                provenance: "stage=test seed=1 dataset=sha256:0".into(),
            },
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let model = small_model(3);
        let p1 = dir.path().join("a.tdm");
        let p2 = dir.path().join("b.tdm");
        save_model(&model, None, &p1).unwrap();
        let (loaded, opt) = load_model(&p1).unwrap();
        assert!(opt.is_none());
        assert_eq!(loaded, model);
        save_model(&loaded, None, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn optimizer_state_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = small_model(4);
        let mut state = AdamState::new(&model.net, model.meta.hyper);
        let mut grads = model.net.zeroed_blocks();
        for g in grads.iter_mut() {
            g.w.iter_mut().enumerate().for_each(|(i, x)| *x = (i % 7) as f32 * 0.01);
        }
        for _ in 0..3 {
            adam_step(&mut model.net, &grads, &mut state).unwrap();
        }
        let p = dir.path().join("opt.tdm");
        save_model(&model, Some(&state), &p).unwrap();
        let (loaded, loaded_state) = load_model(&p).unwrap();
        let loaded_state = loaded_state.unwrap();
        assert_eq!(loaded, model);
        assert_eq!(loaded_state.step, 3);
        assert_eq!(loaded_state.m, state.m);
        assert_eq!(loaded_state.v, state.v);
    }

    #[test]
    fn loss_is_invariant_under_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let model = small_model(5);
        let data: Vec<f32> = (0..2 * 64 * 64 * 3).map(|i| (i % 255) as f32 / 255.0).collect();
        let batch = Tensor4::from_vec(2, 64, 64, 3, data);
        let (probs_a, _) = model.net.forward(&batch, Mode::Eval);
        let p = dir.path().join("m.tdm");
        save_model(&model, None, &p).unwrap();
        let (loaded, _) = load_model(&p).unwrap();
        let (probs_b, _) = loaded.net.forward(&batch, Mode::Eval);
        assert_eq!(probs_a, probs_b);
    }

    #[test]
    fn version_mismatch_is_a_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.tdm");
        save_model(&small_model(1), None, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[MAGIC.len() - 1] = b'9';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_model(&p), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn edited_shape_is_reported_with_layer_name() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.tdm");
        save_model(&small_model(1), None, &p).unwrap();
        let text = std::fs::read(&p).unwrap();
        // Corrupt dense1's input width in the manifest.
        let s = String::from_utf8_lossy(&text).replace("dense dense1 1600", "dense dense1 1601");
        std::fs::write(&p, s).unwrap();
        match load_model(&p) {
            Err(Error::ModelShape { layer, .. }) => assert_eq!(layer, "dense1"),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn truncated_blob_is_a_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tdm");
        save_model(&small_model(1), None, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(load_model(&p), Err(Error::ModelTruncated { .. })));
    }
}
