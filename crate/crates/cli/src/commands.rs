use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use polypseg::data::{
    compute_dataset_stats, gen_synthetic, image_to_rgb8, load_dataset, load_image, load_mask, preprocess,
    save_dataset, save_mask, write_rgb8, DatasetStats, ImageSample,
};
use polypseg::metrics::{dice, evaluate_paired, gt_boxes, PairedReport};
use polypseg::model::{DecoderStyle, Model, Stage};
use polypseg::postprocess::{postprocess, threshold, BBox, PostProcessConfig};
use polypseg::tensor::Tensor;
use polypseg::train::{fit_with, load_checkpoint, predict_any_size, save_checkpoint, TrainingHistory};
use polypseg::Error;

use crate::config::RunConfig;
use crate::overlay;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// `path` with `suffix` appended to its file name.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn synth(out: &Path, count: usize, size: (usize, usize), seed: u64) -> Result<()> {
    let samples = gen_synthetic(count, size, seed)?;
    save_dataset(out, &samples)?;
    println!("wrote {count} samples ({}x{}) to {}", size.0, size.1, out.display());
    Ok(())
}

/// Loads a dataset for training, dropping frames with empty masks and
/// optionally cropping and resizing every frame.
fn load_training_set(dir: &Path, size: Option<(usize, usize)>) -> Result<Vec<ImageSample>> {
    let loaded = load_dataset(dir, true)?;
    if loaded.dropped_empty > 0 {
        eprintln!("{}: skipped {} frames with empty masks", dir.display(), loaded.dropped_empty);
    }
    if loaded.samples.is_empty() {
        bail!(Error::Data(format!("{}: no frames with foreground", dir.display())));
    }
    match size {
        None => Ok(loaded.samples),
        Some(s) => Ok(loaded
            .samples
            .iter()
            .map(|x| preprocess(x, s))
            .collect::<polypseg::Result<_>>()?),
    }
}

struct Trained {
    model: Model,
    stats: DatasetStats,
    history: TrainingHistory,
}

/// Fits a fresh model and keeps the parameters of the best epoch.
fn train_model(rc: &RunConfig, train: &[ImageSample], val: Option<&[ImageSample]>, verbose: bool) -> Result<Trained> {
    rc.model.validate()?;
    let stats = compute_dataset_stats(train.iter().map(|s| &s.image))?;
    let mut model = Model::new(rc.model.clone(), rc.fit.seed)?;
    let history = fit_with(&mut model, train, val, &stats, &rc.fit_config(), |r| {
        if verbose {
            println!("{r}");
        }
    })?;
    if let Some(best) = &history.best {
        model.load_params(&best.params)?;
    }
    Ok(Trained { model, stats, history })
}

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub val: Option<&'a Path>,
    pub out: &'a Path,
    pub history: Option<&'a Path>,
}

pub fn train(rc: &RunConfig, args: TrainArgs) -> Result<()> {
    let train = load_training_set(args.data, rc.input_size)?;
    let val = args.val.map(|v| load_training_set(v, rc.input_size)).transpose()?;
    let t = train_model(rc, &train, val.as_deref(), true)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_checkpoint(args.out, &t.model, &t.stats, None)?;
    let hist_path = args
        .history
        .map(Path::to_path_buf)
        .unwrap_or_else(|| with_suffix(args.out, ".history.txt"));
    write_text(&hist_path, &t.history.to_text())?;
    match &t.history.best {
        Some(b) => println!("best epoch {} dice {:.6}; wrote {}", b.epoch, b.dice, args.out.display()),
        None => println!("no epochs run; wrote initial parameters to {}", args.out.display()),
    }
    Ok(())
}

fn boxes_text(boxes: &[BBox]) -> String {
    boxes
        .iter()
        .map(|b| format!("{} {} {} {}\n", b.x0, b.y0, b.x1, b.y1))
        .collect()
}

pub struct InferArgs<'a> {
    pub ckpt: &'a Path,
    pub image: &'a Path,
    pub out: &'a Path,
    pub gt: Option<&'a Path>,
    pub no_postprocess: bool,
}

pub fn infer(post: &PostProcessConfig, args: InferArgs) -> Result<()> {
    let (model, stats, _) = load_checkpoint(args.ckpt)?;
    let image = load_image(args.image)?;
    let prob = predict_any_size(&model, &stats, &image)?;
    let cfg = if args.no_postprocess {
        PostProcessConfig {
            threshold: post.threshold,
            ..PostProcessConfig::disabled()
        }
    } else {
        post.clone()
    };
    let pp = postprocess(&prob, &cfg)?;
    let s = image.shape();
    let gt = match args.gt {
        Some(p) => {
            let m = load_mask(p)?;
            if m.dims() != (s.h, s.w) {
                bail!(Error::Data(format!(
                    "{}: mask {}x{} but image {}x{}",
                    p.display(),
                    m.height(),
                    m.width(),
                    s.h,
                    s.w
                )));
            }
            Some(m)
        }
        None => None,
    };

    create_dir(args.out)?;
    let stem = args
        .image
        .file_stem()
        .and_then(|s| s.to_str())
        .context("image path has no file name")?;
    save_mask(&args.out.join(format!("{stem}_mask.png")), &pp.mask)?;
    write_text(&args.out.join(format!("{stem}_boxes.txt")), &boxes_text(&pp.boxes))?;
    let gtb = gt.as_ref().map(gt_boxes).unwrap_or_default();
    let canvas = overlay::render(s.h, s.w, &image_to_rgb8(&image), &pp.mask, &pp.boxes, &gtb);
    write_rgb8(&args.out.join(format!("{stem}_overlay.png")), canvas.h, canvas.w, &canvas.rgb)?;

    println!("boxes={}", pp.boxes.len());
    if let Some(g) = &gt {
        println!("dice={:.6}", dice(&threshold(&prob, cfg.threshold)?, g)?);
    }
    Ok(())
}

fn predict_dataset(model: &Model, stats: &DatasetStats, samples: &[ImageSample]) -> Result<Vec<(Tensor, polypseg::postprocess::BinaryMask)>> {
    samples
        .iter()
        .map(|s| Ok((predict_any_size(model, stats, &s.image)?, s.mask.clone())))
        .collect()
}

fn write_report(prefix: &Path, report: &PairedReport) -> Result<()> {
    if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_text(&with_suffix(prefix, ".txt"), &report.to_string())?;
    write_text(&with_suffix(prefix, ".json"), &(report.to_json() + "\n"))
}

pub fn eval(post: &PostProcessConfig, ckpt: &Path, data: &Path, out: &Path) -> Result<()> {
    let (model, stats, _) = load_checkpoint(ckpt)?;
    let samples = load_dataset(data, false)?.samples;
    let report = evaluate_paired(&predict_dataset(&model, &stats, &samples)?, post)?;
    write_report(out, &report)?;
    print!("{report}");
    Ok(())
}

pub const VARIANTS: [&str; 4] = ["dilated", "unet_decoder", "no_dilation", "all_taps"];
pub const DEFAULT_VARIANTS: [&str; 3] = ["dilated", "unet_decoder", "no_dilation"];

/// Applies one ablation to a base configuration.
pub fn variant(base: &RunConfig, name: &str) -> Result<RunConfig> {
    let mut rc = base.clone();
    match name {
        "dilated" => {}
        "unet_decoder" => rc.model.decoder_style = DecoderStyle::UnetSymmetric,
        "no_dilation" => rc.model = rc.model.with_original_backbone(),
        "all_taps" => {
            if !rc.model.encoder_taps.contains(&Stage::R1) {
                rc.model.encoder_taps.insert(0, Stage::R1);
                let d = rc.model.decoder_dims[0];
                rc.model.decoder_dims.insert(0, d);
            }
        }
        other => bail!(Error::InvalidArgument(format!(
            "unknown ablation variant {other:?} (expected one of {})",
            VARIANTS.join(", ")
        ))),
    }
    Ok(rc)
}

pub struct AblateArgs<'a> {
    pub data: &'a Path,
    pub val: Option<&'a Path>,
    pub out: &'a Path,
    pub variants: &'a [String],
}

pub fn ablate(base: &RunConfig, args: AblateArgs) -> Result<()> {
    let configs = args
        .variants
        .iter()
        .map(|v| Ok((v.as_str(), variant(base, v)?)))
        .collect::<Result<Vec<_>>>()?;
    let train = load_training_set(args.data, base.input_size)?;
    let val = args.val.map(|v| load_dataset(v, false)).transpose()?.map(|d| d.samples);
    let eval_set = val.as_deref().unwrap_or(&train);
    create_dir(args.out)?;

    let mut summary = String::from(
        "variant dice with_precision with_recall with_f1 without_precision without_recall without_f1\n",
    );
    for (name, rc) in configs {
        println!("[{name}]");
        let t = train_model(&rc, &train, None, false)?;
        let report = evaluate_paired(&predict_dataset(&t.model, &t.stats, eval_set)?, &rc.post)?;
        write_report(&args.out.join(name), &report)?;
        write_text(&args.out.join(format!("{name}.history.txt")), &t.history.to_text())?;
        let (w, wo) = (&report.with_postprocess, &report.without_postprocess);
        let row = format!(
            "{name} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4}",
            w.dice, w.precision, w.recall, w.f1, wo.precision, wo.recall, wo.f1
        );
        println!("{row}");
        let _ = writeln!(summary, "{row}");
    }
    write_text(&args.out.join("summary.txt"), &summary)
}
