//! Implementations of the subcommands.

use tonedetect_core::cnn::{infer_patch_scores, load_model, save_model};
use tonedetect_core::eval::{qf_sweep_report, DetectionReport, SweepReport};
use tonedetect_core::img::{load_image, save_image, tile_patches, ImageRgb};
use tonedetect_core::jpeg::{jpeg_roundtrip_with, ChromaMode};
use tonedetect_core::pipeline::{
    build_dataset, finetune_aware, train_unaware, DatasetConfig, DatasetIndex, SplitTag,
    TrainingConfig,
};
use tonedetect_core::synth::generate_corpus;
use tonedetect_core::tonal::OperatorSpec;

use crate::config::ConfigFile;
use crate::manifest::Manifest;
use crate::{
    CliError, DatasetArgs, DetectArgs, EvalArgs, JpegsimArgs, OpApplyArgs, SynthArgs, TrainArgs,
    EXIT_CONFIG,
};

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let paths = generate_corpus(&args.out_dir, args.count, args.width, args.height, args.seed)?;
    let mut manifest = Manifest::new("synth");
    manifest
        .seed(args.seed)
        .cfg("count", args.count)
        .cfg("width", args.width)
        .cfg("height", args.height);
    for p in &paths {
        manifest.output("image", p);
    }
    manifest.write_next_to(&args.out_dir.join("corpus"))?;
    println!("wrote {} images to {}", paths.len(), args.out_dir.display());
    Ok(())
}

pub fn dataset(args: DatasetArgs) -> Result<(), CliError> {
    let allowed = ["seed", "budget", "eval-budget", "val-fraction", "test-fraction"];
    let cfg = match &args.config {
        Some(path) => ConfigFile::load(path, &allowed)?,
        None => ConfigFile::empty(),
    };
    let defaults = DatasetConfig::default();
    let dcfg = DatasetConfig {
        seed: cfg.resolve(args.seed, "seed", defaults.seed)?,
        budget_per_class: cfg.resolve(args.budget, "budget", defaults.budget_per_class)?,
        eval_budget_per_class: cfg.resolve(
            args.eval_budget,
            "eval-budget",
            defaults.eval_budget_per_class,
        )?,
        val_fraction: cfg.resolve(args.val_fraction, "val-fraction", defaults.val_fraction)?,
        test_fraction: cfg.resolve(args.test_fraction, "test-fraction", defaults.test_fraction)?,
    };
    let index = build_dataset(&args.source, &dcfg)?;
    index.write(&args.out)?;

    Manifest::new("dataset")
        .seed(dcfg.seed)
        .cfg("source", args.source.display())
        .cfg("budget", dcfg.budget_per_class)
        .cfg("eval-budget", dcfg.eval_budget_per_class)
        .cfg("val-fraction", dcfg.val_fraction)
        .cfg("test-fraction", dcfg.test_fraction)
        .output("index", &args.out)
        .write_next_to(&args.out)?;
    println!(
        "wrote {} ({} entries over {} images)",
        args.out.display(),
        index.entries.len(),
        index.image_count
    );
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let allowed = ["seed", "epochs", "batch", "qf-lo", "qf-hi", "width-mult"];
    let cfg = match &args.config {
        Some(path) => ConfigFile::load(path, &allowed)?,
        None => ConfigFile::empty(),
    };
    let defaults = TrainingConfig::default();
    let tcfg = TrainingConfig {
        stage: defaults.stage,
        batch_size: cfg.resolve(args.batch, "batch", defaults.batch_size)?,
        epochs: cfg.resolve(args.epochs, "epochs", defaults.epochs)?,
        qf_lo: cfg.resolve(args.qf_lo, "qf-lo", defaults.qf_lo)?,
        qf_hi: cfg.resolve(args.qf_hi, "qf-hi", defaults.qf_hi)?,
        seed: cfg.resolve(args.seed, "seed", defaults.seed)?,
        width_mult: cfg.resolve(args.width_mult, "width-mult", defaults.width_mult)?,
        hyper: defaults.hyper,
    };
    let index = DatasetIndex::read(&args.index)?;

    let trained = match args.stage.as_str() {
        "unaware" => train_unaware(&args.source, &index, &tcfg)?,
        "aware" => {
            let init = args.init.as_ref().ok_or_else(|| {
                CliError::config("the aware stage needs --init <unaware model>")
            })?;
            let (parent, _) = load_model(init)?;
            finetune_aware(&args.source, &parent, &index, &tcfg)?
        }
        other => {
            return Err(CliError {
                code: EXIT_CONFIG,
                message: format!("unknown stage {other:?} (use unaware or aware)"),
            })
        }
    };

    save_model(&trained.model, None, &args.out)?;

    for (i, (loss, acc)) in trained
        .log
        .epoch_loss
        .iter()
        .zip(&trained.log.val_accuracy)
        .enumerate()
    {
        println!("epoch {}: loss {loss:.4} val_acc {acc:.4}", i + 1);
    }

    let mut manifest = Manifest::new("train");
    manifest
        .seed(tcfg.seed)
        .cfg("stage", &args.stage)
        .cfg("epochs", tcfg.epochs)
        .cfg("batch", tcfg.batch_size)
        .cfg("qf-lo", tcfg.qf_lo)
        .cfg("qf-hi", tcfg.qf_hi)
        .cfg("width-mult", tcfg.width_mult)
        .input("index", &args.index)
        .output("model", &args.out);
    if let Some(init) = &args.init {
        manifest.input("init", init);
    }
    manifest.write_next_to(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn detect(args: DetectArgs) -> Result<(), CliError> {
    let (model, _) = load_model(&args.model)?;
    let image = load_image(&args.image)?;
    let grid = tile_patches(&image)?;
    let scores = infer_patch_scores(&model.net, &grid);

    let threshold = match (args.threshold, &args.calibration) {
        (Some(t), None) => t,
        (None, Some(cal_path)) => {
            let qf_arg = args.qf.as_deref().expect("clap enforces --qf");
            let wanted: Option<u8> = if qf_arg == "none" {
                None
            } else {
                Some(qf_arg.parse().map_err(|_| {
                    CliError::config(format!("--qf must be `none` or an integer, got {qf_arg:?}"))
                })?)
            };
            let csv = std::fs::read_to_string(cal_path).map_err(|e| CliError {
                code: crate::EXIT_MISSING_INPUT,
                message: format!("cannot read calibration {}: {e}", cal_path.display()),
            })?;
            let table = SweepReport::parse_calibration(&csv)?;
            table
                .iter()
                .find(|(qf, _)| *qf == wanted)
                .map(|(_, t)| *t)
                .ok_or_else(|| {
                    CliError::config(format!("calibration has no column for qf {qf_arg}"))
                })?
        }
        (None, None) => {
            return Err(CliError::config(
                "supply --threshold or --calibration with --qf",
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };

    let report = DetectionReport::new(scores, threshold, model.meta.provenance.clone())?;
    let text = report.to_text();
    print!("{text}");
    if let Some(out) = &args.out {
        std::fs::write(out, &text).map_err(|e| CliError {
            code: crate::EXIT_PROCESSING,
            message: format!("cannot write report {}: {e}", out.display()),
        })?;
        Manifest::new("detect")
            .cfg("threshold", threshold)
            .input("model", &args.model)
            .input("image", &args.image)
            .output("report", out)
            .write_next_to(out)?;
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let allowed = ["qf-sweep"];
    let cfg = match &args.config {
        Some(path) => ConfigFile::load(path, &allowed)?,
        None => ConfigFile::empty(),
    };
    let sweep_spec: String = cfg.resolve(
        args.qf_sweep.clone(),
        "qf-sweep",
        "none,100,98,95,90,85,80,75".to_string(),
    )?;
    let qfs = parse_qf_list(&sweep_spec)?;

    let operators: Vec<OperatorSpec> = if args.ops.is_empty() {
        vec![
            OperatorSpec::Clahe { clip_limit: 0.005, grid: 8 },
            OperatorSpec::Gamma { gamma: 1.5 },
            OperatorSpec::Gamma { gamma: 0.7 },
            OperatorSpec::HistStretch { sat_low: 5.0, sat_high: 5.0 },
        ]
    } else {
        args.ops
            .iter()
            .map(|tok| OperatorSpec::parse_token(tok))
            .collect::<Result<_, _>>()?
    };

    let (model, _) = load_model(&args.model)?;
    let index = DatasetIndex::read(&args.index)?;
    let test_names = index.images_in_split(SplitTag::Test);
    if test_names.is_empty() {
        return Err(CliError {
            code: crate::EXIT_PROCESSING,
            message: "index has no test split".into(),
        });
    }
    let test_images: Vec<ImageRgb> = test_names
        .iter()
        .map(|name| load_image(args.source.join(name)))
        .collect::<Result<_, _>>()?;

    let provenance = vec![
        format!("model {}", model.meta.provenance),
        format!("index {}", args.index.display()),
        format!("test_images {}", test_names.len()),
    ];
    let report = qf_sweep_report(&model.net, &test_images, &operators, &qfs, provenance)?;
    std::fs::write(&args.out, report.to_csv()).map_err(|e| CliError {
        code: crate::EXIT_PROCESSING,
        message: format!("cannot write report {}: {e}", args.out.display()),
    })?;

    Manifest::new("eval")
        .cfg("qf-sweep", &sweep_spec)
        .cfg(
            "operators",
            operators
                .iter()
                .map(|o| o.to_token())
                .collect::<Vec<_>>()
                .join(" "),
        )
        .input("model", &args.model)
        .input("index", &args.index)
        .output("report", &args.out)
        .write_next_to(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn op_apply(args: OpApplyArgs) -> Result<(), CliError> {
    let mut pairs = Vec::new();
    for raw in &args.params {
        let (k, v) = raw.split_once('=').ok_or_else(|| {
            CliError::config(format!("--param {raw:?} is not key=value"))
        })?;
        let v: f64 = v
            .parse()
            .map_err(|_| CliError::config(format!("--param {raw:?} value is not numeric")))?;
        pairs.push((k.to_string(), v));
    }
    let op = OperatorSpec::from_kind_params(&args.kind, &pairs)?;
    let image = load_image(&args.input)?;
    let out = op.apply(&image)?;
    save_image(&out, &args.output)?;
    Manifest::new("op")
        .cfg("operator", op.to_token())
        .input("image", &args.input)
        .output("image", &args.output)
        .write_next_to(&args.output)?;
    println!("wrote {}", args.output.display());
    Ok(())
}

pub fn jpegsim(args: JpegsimArgs) -> Result<(), CliError> {
    let mode = match args.chroma.as_str() {
        "444" => ChromaMode::Yuv444,
        "420" => ChromaMode::Yuv420,
        other => {
            return Err(CliError::config(format!(
                "--chroma must be 444 or 420, got {other:?}"
            )))
        }
    };
    let image = load_image(&args.input)?;
    let out = jpeg_roundtrip_with(&image, args.qf, mode)?;
    save_image(&out, &args.output)?;
    Manifest::new("jpegsim")
        .cfg("qf", args.qf)
        .cfg("chroma", &args.chroma)
        .input("image", &args.input)
        .output("image", &args.output)
        .write_next_to(&args.output)?;
    println!("wrote {}", args.output.display());
    Ok(())
}

fn parse_qf_list(spec: &str) -> Result<Vec<Option<u8>>, CliError> {
    spec.split(',')
        .map(|tok| {
            let tok = tok.trim();
            if tok == "none" {
                Ok(None)
            } else {
                tok.parse::<u8>().map(Some).map_err(|_| {
                    CliError::config(format!(
                        "qf sweep entry {tok:?} must be `none` or an integer"
                    ))
                })
            }
        })
        .collect()
}
