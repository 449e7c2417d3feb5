use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use matseg::exec::Rayon;
use matseg::io::{self, ModelMetadata};
use matseg::pipeline::{run_ablation, run_pipeline, write_outputs, NetworkShape, PipelineConfig, PipelineInputs};
use matseg::scene::SceneFile;
use matseg_core::brdf::BrdfDictionary;
use matseg_core::calibration::calibrate_stack;
use matseg_core::classifier::{predict_tile, train, Dataset, Network, NetworkConfig, TrainConfig};
use matseg_core::encoder::{EncodingMode, ModeKind, TileEncoder, DEFAULT_MSMA_K};
use matseg_core::fusion::{segment_vote, softmax_fuse, PredictionStack};
use matseg_core::imagery::{LabelMask, UNLABELED};
use matseg_core::metrics::evaluate;
use matseg_core::synth::{default_dictionary, render, to_dn};
use serde::{Deserialize, Serialize};

/// Multi-view material segmentation of registered multispectral stacks.
#[derive(Parser)]
#[command(name = "matseg", version)]
struct Cli {
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw DN stack to TOA reflectance; prints the report.
    Calibrate {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a synthetic scene: reflectance and DN stacks, truth and segments.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        /// Defaults to the built-in five-material dictionary.
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode every pixel of a reflectance stack.
    Encode {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, default_value_t = DEFAULT_MSMA_K)]
        k: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Image used by mssa.
        #[arg(long, default_value_t = 0)]
        image: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a pixel classifier on the labeled pixels of a feature grid.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Class probabilities for every pixel of a feature grid.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Softmax fusion of predictions into a label mask.
    Fuse {
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Building segment voting.
    Vote {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pixel accuracy, mean F1 and mean IoU against a truth mask.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Calibrate, encode, train, predict, fuse, vote and evaluate.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Also write every instance prediction.
        #[arg(long)]
        keep_predictions: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Single, fused and voted metrics for every encoding.
    Ablation {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    stack: PathBuf,
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    segments: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_MSMA_K)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// JSON with any of `train_fraction`, `network`, `train`.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Mssa,
    Msma,
    Rr,
}

impl From<Mode> for ModeKind {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Mssa => ModeKind::Mssa,
            Mode::Msma => ModeKind::Msma,
            Mode::Rr => ModeKind::Rr,
        }
    }
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunOverrides {
    train_fraction: Option<f64>,
    network: Option<NetworkShape>,
    train: Option<TrainConfig>,
}

/// `train --config` file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    #[serde(default)]
    network: NetworkShape,
    train: TrainConfig,
    /// Seed of the initial weights.
    init_seed: u64,
}

#[derive(Serialize)]
struct ErrorReport {
    error: ErrorBody,
}

#[derive(Serialize)]
struct ErrorBody {
    message: String,
    causes: Vec<String>,
}

fn require_seed(seed: Option<u64>, what: &str) -> anyhow::Result<u64> {
    seed.ok_or_else(|| anyhow!("{what} is random: pass --seed"))
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn report_to<T: Serialize>(value: &T, path: Option<&Path>) -> anyhow::Result<()> {
    match path {
        Some(p) => Ok(io::write_json(p, value)?),
        None => print_json(value),
    }
}

fn load_dict(path: Option<&Path>) -> anyhow::Result<Option<BrdfDictionary>> {
    path.map(|p| io::load_dictionary(p).with_context(|| "loading dictionary"))
        .transpose()
}

fn run_inputs(run: &RunArgs) -> anyhow::Result<(PipelineInputs, PipelineConfig)> {
    let seed = require_seed(run.seed, "the pipeline")?;
    let inputs = PipelineInputs {
        stack: io::load_stack(&run.stack).context("loading stack")?,
        dictionary: load_dict(run.dict.as_deref())?,
        truth: io::load_mask(&run.truth).context("loading truth")?,
        segments: run
            .segments
            .as_deref()
            .map(|p| io::load_segments(p).context("loading segments"))
            .transpose()?,
    };
    let overrides: RunOverrides = match &run.config {
        Some(p) => io::read_json(p)?,
        None => RunOverrides::default(),
    };
    let mut cfg = PipelineConfig::new(ModeKind::Rr, seed);
    cfg.k = run.k;
    cfg.trials = run.trials;
    if let Some(f) = overrides.train_fraction {
        cfg.train_fraction = f;
    }
    if let Some(n) = overrides.network {
        cfg.network = n;
    }
    cfg.train = overrides.train;
    Ok((inputs, cfg))
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let exec = Rayon::new(cli.threads)?;
    info!("using {} threads", exec.threads());
    match cli.command {
        Command::Calibrate { stack, out } => {
            let stack = io::load_stack(&stack).context("loading stack")?;
            let (refl, report) = calibrate_stack(&stack)?;
            io::save_stack(&refl, &out)?;
            print_json(&report)?;
        }
        Command::Synth { spec, dict, out } => {
            let dict = match dict {
                Some(p) => io::load_dictionary(&p).context("loading dictionary")?,
                None => default_dictionary()?,
            };
            let scene: SceneFile = io::read_json(&spec)?;
            let spec = scene.into_spec(&dict)?;
            let bundle = render(&spec, &dict, &exec)?;
            io::save_stack(&bundle.stack, &out.join("reflectance"))?;
            io::save_stack(&to_dn(&bundle.stack)?, &out.join("dn"))?;
            io::save_mask(&bundle.truth, &out.join("truth.json"))?;
            io::save_segments(&bundle.segments, &out.join("segments.json"))?;
            io::save_dictionary(&dict, &out.join("dict.json"))?;
            info!("rendered {} views of {}x{}", spec.views.len(), spec.width, spec.height);
        }
        Command::Encode {
            stack,
            dict,
            mode,
            k,
            seed,
            image,
            out,
        } => {
            let stack = io::load_stack(&stack).context("loading stack")?;
            let dict = load_dict(dict.as_deref())?;
            let mode = match mode {
                Mode::Mssa => EncodingMode::Mssa { image },
                Mode::Msma => EncodingMode::Msma {
                    k,
                    seed: require_seed(seed, "msma sampling")?,
                },
                Mode::Rr => EncodingMode::Rr,
            };
            let grid = TileEncoder::new(&stack, dict.as_ref(), mode)?.encode(&exec);
            io::save_features(&grid, &out)?;
        }
        Command::Train {
            features,
            mask,
            config,
            out,
        } => {
            let grid = io::load_features(&features)?;
            let mask = io::load_mask(&mask)?;
            mask.check_dims(grid.width, grid.height)?;
            let file: TrainFile = io::read_json(&config)?;
            let mut data = Dataset::new(grid.feature_len);
            for (p, &label) in mask.labels.iter().enumerate() {
                if label != UNLABELED {
                    let x: Vec<f64> = grid.feature(p).iter().map(|&v| f64::from(v)).collect();
                    data.push(&x, usize::from(label))?;
                }
            }
            let net_cfg: NetworkConfig = file.network.config(grid.feature_len, mask.classes());
            let mut model = Network::new(net_cfg, file.init_seed)?;
            model.set_palette(mask.palette.clone())?;
            let (model, history) = train(model, &data, &file.train)?;
            info!("final loss {:?}", history.epoch_loss.last());
            let meta = ModelMetadata {
                feature_mode: Some(grid.mode),
                train: Some(file.train),
                history: Some(history),
            };
            io::save_model(&model, &meta, &out)?;
        }
        Command::Predict { model, features, out } => {
            let (model, meta) = io::load_model(&model)?;
            let grid = io::load_features(&features)?;
            if let Some(m) = meta.feature_mode {
                if m != grid.mode {
                    bail!("model was trained on {m:?} features, got {:?}", grid.mode);
                }
            }
            io::save_prediction(&predict_tile(&model, &grid, &exec)?, &out)?;
        }
        Command::Fuse { pred, out } => {
            let sources = pred
                .iter()
                .map(|p| Ok((p.display().to_string(), io::load_prediction(p)?)))
                .collect::<anyhow::Result<Vec<_>>>()?;
            io::save_mask(&softmax_fuse(&PredictionStack::new(sources)?)?, &out)?;
        }
        Command::Vote { mask, segments, out } => {
            let mask = io::load_mask(&mask)?;
            let seg = io::load_segments(&segments)?;
            io::save_mask(&segment_vote(&mask, &seg)?, &out)?;
        }
        Command::Eval { pred, truth, report } => {
            let pred: LabelMask = io::load_mask(&pred)?;
            let truth = io::load_mask(&truth)?;
            report_to(&evaluate(&pred, &truth)?, report.as_deref())?;
        }
        Command::Pipeline {
            run,
            mode,
            keep_predictions,
            out,
        } => {
            let (inputs, mut cfg) = run_inputs(&run)?;
            cfg.mode = mode.into();
            let output = run_pipeline(&inputs, &cfg, &exec)?;
            write_outputs(&output, &cfg, &out, keep_predictions)?;
            print_json(&output.report)?;
        }
        Command::Ablation { run, report } => {
            let (inputs, cfg) = run_inputs(&run)?;
            report_to(&run_ablation(&inputs, &cfg, &exec)?, report.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let report = ErrorReport {
                error: ErrorBody {
                    message: e.to_string().trim().to_string(),
                    causes: Vec::new(),
                },
            };
            println!("{}", serde_json::to_string(&report).expect("serializable"));
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport {
                error: ErrorBody {
                    message: e.to_string(),
                    causes: e.chain().skip(1).map(|c| c.to_string()).collect(),
                },
            };
            println!("{}", serde_json::to_string(&report).expect("serializable"));
            ExitCode::FAILURE
        }
    }
}
