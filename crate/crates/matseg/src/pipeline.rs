//! End-to-end runs: calibrate, encode, train, predict per instance, fuse, vote
//! and evaluate.
//!
//! An *instance* is one prediction of the whole tile: one per image for MSSA,
//! one per resampling trial for MSMA and a single one for RR. The classifier is
//! trained on a random subset of labeled pixels pooled over all instances and
//! every metric is computed on the remaining labeled pixels.
//!
//! All randomness derives from [`PipelineConfig::seed`] through
//! [`derive_seed`], so a run is a pure function of its inputs and config.

use std::path::Path;

use log::info;
use matseg_core::brdf::BrdfDictionary;
use matseg_core::calibration::{calibrate_stack, CalibrationReport};
use matseg_core::classifier::{predict_tile, train, Dataset, Network, NetworkConfig, ProbabilityGrid, TrainConfig, TrainHistory};
use matseg_core::encoder::{EncodingMode, ModeKind, TileEncoder};
use matseg_core::exec::Executor;
use matseg_core::fusion::{segment_vote, softmax_fuse, PredictionStack};
use matseg_core::imagery::{ImageStack, LabelMask, PixelKind, SegmentMask, UNLABELED};
use matseg_core::metrics::{evaluate, MetricsReport};
use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::StageExt;
use crate::io::{save_mask, save_model, save_prediction, write_json, ModelMetadata};
use crate::{Error, Result};

/// First output of ChaCha8 stream `tag` under `master`.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(tag);
    rng.next_u64()
}

const TAG_TRAIN: u64 = 1;
const TAG_INIT: u64 = 2;
const TAG_SPLIT: u64 = 3;
const TAG_TRIAL: u64 = 1000;

/// Network layout without the input and output sizes, which come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub hidden_widths: Vec<usize>,
    pub conv_blocks: usize,
    pub conv_channels: usize,
    pub kernel_size: usize,
}

impl Default for NetworkShape {
    fn default() -> Self {
        let c = NetworkConfig::desk_default(1, 2);
        NetworkShape {
            hidden_widths: c.hidden_widths,
            conv_blocks: c.conv_blocks,
            conv_channels: c.conv_channels,
            kernel_size: c.kernel_size,
        }
    }
}

impl NetworkShape {
    pub fn config(&self, input_len: usize, classes: usize) -> NetworkConfig {
        NetworkConfig {
            input_len,
            hidden_widths: self.hidden_widths.clone(),
            conv_blocks: self.conv_blocks,
            conv_channels: self.conv_channels,
            kernel_size: self.kernel_size,
            classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: ModeKind,
    /// Images per MSMA sample.
    #[serde(default = "default_k")]
    pub k: usize,
    /// MSMA resamplings.
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    /// Share of labeled pixels used for training.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub network: NetworkShape,
    /// Training schedule; its `rng_seed` is replaced by one derived from `seed`.
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

fn default_k() -> usize {
    matseg_core::encoder::DEFAULT_MSMA_K
}

fn default_trials() -> usize {
    10
}

fn default_train_fraction() -> f64 {
    0.2
}

impl PipelineConfig {
    pub fn new(mode: ModeKind, seed: u64) -> Self {
        PipelineConfig {
            mode,
            k: default_k(),
            trials: default_trials(),
            seed,
            train_fraction: default_train_fraction(),
            network: NetworkShape::default(),
            train: None,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let seed = derive_seed(self.seed, TAG_TRAIN);
        match &self.train {
            Some(t) => TrainConfig {
                rng_seed: seed,
                ..t.clone()
            },
            None => TrainConfig::desk(seed),
        }
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.trials as u64).map(|t| derive_seed(self.seed, TAG_TRIAL + t)).collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if self.mode == ModeKind::Msma && (self.k == 0 || self.trials == 0) {
            return Err(Error::Config("msma needs k >= 1 and trials >= 1".into()));
        }
        Ok(())
    }
}

pub struct PipelineInputs {
    /// Raw DN, radiance or reflectance; anything but reflectance is calibrated.
    pub stack: ImageStack,
    /// Required for RR.
    pub dictionary: Option<BrdfDictionary>,
    pub truth: LabelMask,
    pub segments: Option<SegmentMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub pix_acc: f64,
    pub mean_f1: f64,
    pub mean_iou: f64,
}

impl From<&MetricsReport> for MetricSummary {
    fn from(r: &MetricsReport) -> Self {
        MetricSummary {
            pix_acc: r.pix_acc,
            mean_f1: r.mean_f1,
            mean_iou: r.mean_iou,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub mode: ModeKind,
    pub seed: u64,
    pub instances: usize,
    pub train_pixels: usize,
    pub eval_pixels: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationReport>,
    pub history: TrainHistory,
    /// Per-instance metrics before fusion.
    pub single: Vec<MetricSummary>,
    pub single_mean: MetricSummary,
    pub fused: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voted: Option<MetricsReport>,
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub report: PipelineReport,
    pub model: Network,
    pub predictions: Vec<ProbabilityGrid>,
    pub fused: LabelMask,
    /// Voted mask when segments were given, else the fused mask.
    pub final_mask: LabelMask,
}

fn encodings(cfg: &PipelineConfig, stack: &ImageStack) -> Vec<EncodingMode> {
    match cfg.mode {
        ModeKind::Mssa => (0..stack.len()).map(|image| EncodingMode::Mssa { image }).collect(),
        ModeKind::Msma => cfg
            .trial_seeds()
            .into_iter()
            .map(|seed| EncodingMode::Msma { k: cfg.k, seed })
            .collect(),
        ModeKind::Rr => vec![EncodingMode::Rr],
    }
}

/// Splits labeled pixels into a training subset and an evaluation mask that
/// hides the training pixels.
fn split(truth: &LabelMask, fraction: f64, seed: u64) -> Result<(Vec<usize>, LabelMask)> {
    let labeled: Vec<usize> = (0..truth.labels.len()).filter(|&p| truth.labels[p] != UNLABELED).collect();
    if labeled.len() < 2 {
        return Err(Error::Config("truth needs at least two labeled pixels".into()));
    }
    let n_train = ((labeled.len() as f64 * fraction).round() as usize).clamp(1, labeled.len() - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train: Vec<usize> = sample(&mut rng, labeled.len(), n_train).into_iter().map(|i| labeled[i]).collect();
    train.sort_unstable();
    let mut eval = truth.clone();
    for &p in &train {
        eval.labels[p] = UNLABELED;
    }
    Ok((train, eval))
}

pub fn run_pipeline<E: Executor>(inputs: &PipelineInputs, cfg: &PipelineConfig, exec: &E) -> Result<PipelineOutput> {
    cfg.validate()?;
    let (stack, calibration) = if inputs.stack.pixel_kind() == PixelKind::Reflectance {
        (inputs.stack.clone(), None)
    } else {
        let (s, r) = calibrate_stack(&inputs.stack).stage("calibrate")?;
        (s, Some(r))
    };
    inputs
        .truth
        .check_dims(stack.width(), stack.height())
        .stage("load truth")?;
    if cfg.mode == ModeKind::Msma && cfg.k > stack.len() {
        return Err(Error::Config(format!("k = {} exceeds the {} images in the stack", cfg.k, stack.len())));
    }
    let classes = inputs.truth.classes();
    let (train_pixels, eval_truth) = split(&inputs.truth, cfg.train_fraction, derive_seed(cfg.seed, TAG_SPLIT))?;

    let modes = encodings(cfg, &stack);
    info!("{:?}: encoding {} instances", cfg.mode, modes.len());
    let mut grids = Vec::with_capacity(modes.len());
    for mode in &modes {
        let enc = TileEncoder::new(&stack, inputs.dictionary.as_ref(), *mode).stage("encode")?;
        grids.push(enc.encode(exec));
    }

    let feature_len = grids[0].feature_len;
    let mut data = Dataset::new(feature_len);
    for g in &grids {
        for &p in &train_pixels {
            let x: Vec<f64> = g.feature(p).iter().map(|&v| f64::from(v)).collect();
            data.push(&x, usize::from(inputs.truth.labels[p])).stage("train")?;
        }
    }
    let train_cfg = cfg.train_config();
    let mut model = Network::new(cfg.network.config(feature_len, classes), derive_seed(cfg.seed, TAG_INIT)).stage("train")?;
    model.set_palette(inputs.truth.palette.clone()).stage("train")?;
    info!("training on {} samples of length {}", data.len(), feature_len);
    let (mut model, history) = train(model, &data, &train_cfg).stage("train")?;
    // predict with exactly what the model file will hold
    model.round_to_f32();

    let mut predictions = Vec::with_capacity(grids.len());
    let mut single = Vec::with_capacity(grids.len());
    for g in &grids {
        let pred = predict_tile(&model, g, exec).stage("predict")?;
        let mask = LabelMask::new(pred.width, pred.height, pred.argmax_labels(), pred.palette.clone()).stage("predict")?;
        single.push(MetricSummary::from(&evaluate(&mask, &eval_truth).stage("evaluate")?));
        predictions.push(pred);
    }
    let n = single.len() as f64;
    let single_mean = MetricSummary {
        pix_acc: single.iter().map(|s| s.pix_acc).sum::<f64>() / n,
        mean_f1: single.iter().map(|s| s.mean_f1).sum::<f64>() / n,
        mean_iou: single.iter().map(|s| s.mean_iou).sum::<f64>() / n,
    };

    let sources = predictions
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("instance-{i}"), p.clone()))
        .collect();
    let fused = softmax_fuse(&PredictionStack::new(sources).stage("fuse")?).stage("fuse")?;
    let fused_report = evaluate(&fused, &eval_truth).stage("evaluate")?;
    let (final_mask, voted) = match &inputs.segments {
        Some(seg) => {
            let v = segment_vote(&fused, seg).stage("vote")?;
            let r = evaluate(&v, &eval_truth).stage("evaluate")?;
            (v, Some(r))
        }
        None => (fused.clone(), None),
    };
    info!(
        "{:?}: single {:.4}, fused {:.4}, voted {:?}",
        cfg.mode,
        single_mean.pix_acc,
        fused_report.pix_acc,
        voted.as_ref().map(|v| v.pix_acc)
    );
    let report = PipelineReport {
        mode: cfg.mode,
        seed: cfg.seed,
        instances: predictions.len(),
        train_pixels: train_pixels.len(),
        eval_pixels: fused_report.labeled_pixels,
        calibration,
        history,
        single,
        single_mean,
        fused: fused_report,
        voted,
    };
    Ok(PipelineOutput {
        report,
        model,
        predictions,
        fused,
        final_mask,
    })
}

/// Writes `mask.json`, `fused.json`, `model.json`, `report.json` and, when
/// asked, one `predictions/instance_{i}.json` per instance.
pub fn write_outputs(out: &PipelineOutput, cfg: &PipelineConfig, dir: &Path, predictions: bool) -> Result<()> {
    save_mask(&out.final_mask, &dir.join("mask.json"))?;
    save_mask(&out.fused, &dir.join("fused.json"))?;
    let meta = ModelMetadata {
        feature_mode: Some(cfg.mode),
        train: Some(cfg.train_config()),
        history: Some(out.report.history.clone()),
    };
    save_model(&out.model, &meta, &dir.join("model.json"))?;
    write_json(&dir.join("report.json"), &out.report)?;
    if predictions {
        for (i, p) in out.predictions.iter().enumerate() {
            save_prediction(p, &dir.join("predictions").join(format!("instance_{i:03}.json")))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: ModeKind,
    pub instances: usize,
    pub single: MetricSummary,
    pub fused: MetricSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voted: Option<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

/// Runs every encoding on the same inputs with the same seed. RR is skipped
/// when no dictionary is given.
pub fn run_ablation<E: Executor>(inputs: &PipelineInputs, base: &PipelineConfig, exec: &E) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for mode in [ModeKind::Mssa, ModeKind::Msma, ModeKind::Rr] {
        if mode == ModeKind::Rr && inputs.dictionary.is_none() {
            continue;
        }
        let cfg = PipelineConfig {
            mode,
            ..base.clone()
        };
        let out = run_pipeline(inputs, &cfg, exec)?;
        rows.push(AblationRow {
            mode,
            instances: out.report.instances,
            single: out.report.single_mean.clone(),
            fused: MetricSummary::from(&out.report.fused),
            voted: out.report.voted.as_ref().map(MetricSummary::from),
        });
    }
    Ok(AblationReport { seed: base.seed, rows })
}
