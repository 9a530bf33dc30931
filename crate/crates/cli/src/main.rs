//! `polypseg`: synthesize data, train, infer, evaluate and run ablations.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;
mod config;
mod overlay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polypseg::postprocess::PostProcessConfig;
use polypseg::ErrorClass;

use config::{parse_size, RunConfig};

#[derive(Parser)]
#[command(name = "polypseg", version, about = "Polyp segmentation with a dilated-convolution encoder/decoder")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct PostArgs {
    /// Probability threshold.
    #[arg(long)]
    threshold: Option<f32>,
    /// Opening element size (1 disables).
    #[arg(long)]
    open_k: Option<usize>,
    /// Closing element size (1 disables).
    #[arg(long)]
    close_k: Option<usize>,
    /// Minimum component area at 384x384, scaled to the image.
    #[arg(long)]
    min_area: Option<usize>,
    /// Keep nearby boxes separate.
    #[arg(long)]
    no_merge: bool,
}

impl PostArgs {
    fn apply(&self, cfg: &mut PostProcessConfig) {
        if let Some(t) = self.threshold {
            cfg.threshold = t;
        }
        if let Some(k) = self.open_k {
            cfg.open_k = k;
        }
        if let Some(k) = self.close_k {
            cfg.close_k = k;
        }
        if let Some(a) = self.min_area {
            cfg.min_area = a;
        }
        if self.no_merge {
            cfg.merge = false;
        }
    }

    fn config(&self) -> PostProcessConfig {
        let mut cfg = PostProcessConfig::default();
        self.apply(&mut cfg);
        cfg
    }
}

#[derive(Args)]
struct TrainOpts {
    /// key=value run configuration (model, training and post-processing keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Cosine period in epochs (defaults to the epoch count).
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Online augmentation.
    #[arg(long)]
    augment: bool,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Crop black borders and resize every frame to HxW.
    #[arg(long, value_parser = parse_size)]
    size: Option<(usize, usize)>,
}

impl TrainOpts {
    fn run_config(&self) -> anyhow::Result<RunConfig> {
        let mut rc = RunConfig::load(self.config.as_deref(), &self.sets)?;
        if let Some(v) = self.epochs {
            rc.fit.epochs = v;
        }
        if let Some(v) = self.seed {
            rc.fit.seed = v;
        }
        if let Some(v) = self.batch_size {
            rc.fit.batch_size = v;
        }
        if let Some(v) = self.lr {
            rc.fit.adam.lr0 = v;
        }
        if let Some(v) = self.t_max {
            rc.t_max = Some(v);
        }
        if let Some(v) = self.weight_decay {
            rc.fit.adam.weight_decay = v;
        }
        if self.augment {
            rc.set("augment", "on")?;
        }
        if let Some(v) = self.max_steps {
            rc.fit.max_steps = Some(v);
        }
        if let Some(v) = self.size {
            rc.input_size = Some(v);
        }
        Ok(rc)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Writes a synthetic dataset (images/ and masks/ PNGs).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value = "64x64", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Trains a model and writes the best-epoch checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Validation dataset; defaults to the training set.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch history file; defaults to <out>.history.txt.
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Segments one image: writes <stem>_mask.png, <stem>_boxes.txt and <stem>_overlay.png.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth mask: drawn as red boxes and scored with Dice.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Threshold only; no smoothing, small-object removal or merging.
        #[arg(long)]
        no_postprocess: bool,
        #[command(flatten)]
        post: PostArgs,
    },
    /// Scores a dataset with and without post-processing; writes <out>.txt and <out>.json.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        post: PostArgs,
    },
    /// Trains and evaluates each architecture variant on the same data.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Evaluation dataset; defaults to the training set.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of: dilated, unet_decoder, no_dilation, all_taps.
        #[arg(long, value_delimiter = ',', default_values_t = commands::DEFAULT_VARIANTS.map(String::from))]
        variants: Vec<String>,
        #[command(flatten)]
        opts: TrainOpts,
        #[command(flatten)]
        post: PostArgs,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Synth { out, count, size, seed } => commands::synth(&out, count, size, seed),
        Cmd::Train { data, val, out, history, opts } => commands::train(
            &opts.run_config()?,
            commands::TrainArgs {
                data: &data,
                val: val.as_deref(),
                out: &out,
                history: history.as_deref(),
            },
        ),
        Cmd::Infer { ckpt, image, out, gt, no_postprocess, post } => commands::infer(
            &post.config(),
            commands::InferArgs {
                ckpt: &ckpt,
                image: &image,
                out: &out,
                gt: gt.as_deref(),
                no_postprocess,
            },
        ),
        Cmd::Eval { ckpt, data, out, post } => commands::eval(&post.config(), &ckpt, &data, &out),
        Cmd::Ablate { data, val, out, variants, opts, post } => {
            let mut rc = opts.run_config()?;
            post.apply(&mut rc.post);
            commands::ablate(
                &rc,
                commands::AblateArgs {
                    data: &data,
                    val: val.as_deref(),
                    out: &out,
                    variants: &variants,
                },
            )
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let class = err
        .chain()
        .find_map(|e| e.downcast_ref::<polypseg::Error>())
        .map(|e| e.class());
    match class {
        Some(ErrorClass::Usage) => 1,
        Some(ErrorClass::Numeric) => 3,
        Some(ErrorClass::Data) | None => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
