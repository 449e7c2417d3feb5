//! Softmax fusion of instance predictions and building-segment voting.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::classifier::{predict_tile, Network, ProbabilityGrid};
use crate::encoder::{EncodingMode, TileEncoder};
use crate::exec::Executor;
use crate::imagery::{ImageStack, LabelMask, SegmentMask, UNLABELED};
use crate::{Error, Result};

/// Instance predictions of one tile, each tagged with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionStack {
    pub sources: Vec<(String, ProbabilityGrid)>,
}

impl PredictionStack {
    pub fn new(sources: Vec<(String, ProbabilityGrid)>) -> Result<Self> {
        let (_, first) = sources
            .first()
            .ok_or_else(|| Error::Dimensions("prediction stack is empty".into()))?;
        for (id, g) in &sources {
            g.validate()?;
            if g.width != first.width || g.height != first.height || g.classes() != first.classes() {
                return Err(Error::Dimensions(format!(
                    "prediction {} is {}x{}x{}, expected {}x{}x{}",
                    id,
                    g.width,
                    g.height,
                    g.classes(),
                    first.width,
                    first.height,
                    first.classes()
                )));
            }
        }
        Ok(PredictionStack { sources })
    }
}

/// Per pixel, sums the class distributions of every source and takes the
/// argmax, lowest class index winning ties.
///
/// Each class sum is accumulated over the sources' values in ascending order,
/// so the result does not depend on source order.
pub fn softmax_fuse(stack: &PredictionStack) -> Result<LabelMask> {
    let first = &stack.sources[0].1;
    let (c, n) = (first.classes(), first.width * first.height);
    let mut labels = Vec::with_capacity(n);
    let mut column: Vec<f32> = Vec::with_capacity(stack.sources.len());
    let mut sums = alloc::vec![0.0f64; c];
    for p in 0..n {
        for (class, sum) in sums.iter_mut().enumerate() {
            column.clear();
            column.extend(stack.sources.iter().map(|(_, g)| g.data[p * c + class]));
            column.sort_by(f32::total_cmp);
            *sum = column.iter().map(|&v| f64::from(v)).sum();
        }
        let mut best = 0;
        for (class, &s) in sums.iter().enumerate() {
            if s > sums[best] {
                best = class;
            }
        }
        labels.push(best as u8);
    }
    LabelMask::new(first.width, first.height, labels, first.palette.clone())
}

/// Assigns every non-background segment its most common class.
///
/// Unlabeled pixels do not vote but are overwritten once their segment has a
/// winner. Background (id 0) pixels and segments with no labeled pixel are left
/// as they are. Ties go to the lowest class index.
pub fn segment_vote(mask: &LabelMask, segments: &SegmentMask) -> Result<LabelMask> {
    mask.check_dims(segments.width, segments.height)?;
    let c = mask.classes();
    let mut counts: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for (&id, &label) in segments.segment_ids.iter().zip(&mask.labels) {
        if id == 0 || label == UNLABELED {
            continue;
        }
        counts.entry(id).or_insert_with(|| alloc::vec![0; c])[label as usize] += 1;
    }
    let winners: BTreeMap<u32, u8> = counts
        .into_iter()
        .map(|(id, votes)| {
            let mut best = 0;
            for (class, &v) in votes.iter().enumerate() {
                if v > votes[best] {
                    best = class;
                }
            }
            (id, best as u8)
        })
        .collect();
    let labels = segments
        .segment_ids
        .iter()
        .zip(&mask.labels)
        .map(|(id, &label)| winners.get(id).copied().unwrap_or(label))
        .collect();
    Ok(LabelMask {
        width: mask.width,
        height: mask.height,
        labels,
        palette: mask.palette.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResampledPrediction {
    /// One probability grid per seed, in seed order.
    pub trials: Vec<ProbabilityGrid>,
    pub fused: LabelMask,
}

/// Draws one MSMA encoding per seed, predicts each and fuses the results.
pub fn resample_fuse_msma<E: Executor>(
    model: &Network,
    stack: &ImageStack,
    k: usize,
    seeds: &[u64],
    exec: &E,
) -> Result<ResampledPrediction> {
    if seeds.is_empty() {
        return Err(Error::Encoder("resampling needs at least one seed".into()));
    }
    let mut trials = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let grid = TileEncoder::new(stack, None, EncodingMode::Msma { k, seed })?.encode(exec);
        trials.push(predict_tile(model, &grid, exec)?);
    }
    let sources = seeds
        .iter()
        .zip(&trials)
        .map(|(s, g)| (format!("msma-seed-{}", s), g.clone()))
        .collect();
    let fused = softmax_fuse(&PredictionStack::new(sources)?)?;
    Ok(ResampledPrediction { trials, fused })
}
