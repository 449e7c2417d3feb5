//! Per-pixel feature encodings.
//!
//! * MSSA: one image's band vector, each value repeated four times.
//! * MSMA: `k` images drawn without replacement, ordered by off-nadir angle,
//!   band vectors concatenated.
//! * RR: the reflectance residual, a `d x Λ` matrix comparing the pixel's
//!   multi-view samples with every dictionary BRDF at the same angles:
//!   `r[k][λ] = mean_j (m_kλ(a_j) - f_λ(a_j))² / m_kλ(a_j)`.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::brdf::{AngleSample, BrdfDictionary};
use crate::exec::Executor;
use crate::imagery::{ImageStack, PixelKind};
use crate::{Error, Result};

/// Floor applied to dictionary samples used as residual denominators.
pub const RESIDUAL_EPSILON: f64 = 1e-6;
/// MSSA upsampling factor.
pub const MSSA_REPEAT: usize = 4;
/// Default number of images combined by MSMA.
pub const DEFAULT_MSMA_K: usize = 15;

/// Observations of one pixel across `N` images.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSampleSet {
    bands: usize,
    /// `N x Λ`, row per image.
    reflectances: Vec<f64>,
    angles: Vec<AngleSample>,
}

impl PixelSampleSet {
    pub fn new(bands: usize, reflectances: Vec<f64>, angles: Vec<AngleSample>) -> Result<Self> {
        if angles.is_empty() || bands == 0 {
            return Err(Error::Encoder("a pixel needs at least one image and one band".into()));
        }
        if reflectances.len() != angles.len() * bands {
            return Err(Error::LengthMismatch {
                expected: angles.len() * bands,
                found: reflectances.len(),
            });
        }
        Ok(PixelSampleSet {
            bands,
            reflectances,
            angles,
        })
    }

    /// Gathers pixel `pixel` from every image of a stack under the flat-surface
    /// angle model.
    pub fn from_stack(stack: &ImageStack, pixel: usize) -> Result<Self> {
        let bands = stack.band_count();
        let mut reflectances = Vec::with_capacity(stack.len() * bands);
        for img in &stack.images {
            reflectances.extend(img.planes.iter().map(|p| f64::from(p[pixel])));
        }
        let angles = stack
            .images
            .iter()
            .map(|i| AngleSample::from_geometry(&i.geometry))
            .collect();
        PixelSampleSet::new(bands, reflectances, angles)
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn row(&self, image: usize) -> &[f64] {
        &self.reflectances[image * self.bands..(image + 1) * self.bands]
    }

    pub fn angles(&self) -> &[AngleSample] {
        &self.angles
    }
}

/// `d x Λ` residual matrix, entry-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectanceResidual {
    pub dictionary_size: usize,
    pub bands: usize,
    pub values: Vec<f64>,
}

impl ReflectanceResidual {
    pub fn get(&self, entry: usize, band: usize) -> f64 {
        self.values[entry * self.bands + band]
    }

    /// `Σ_λ r[k][λ]` for every entry.
    pub fn entry_totals(&self) -> Vec<f64> {
        self.values.chunks(self.bands).map(|row| row.iter().sum()).collect()
    }

    /// Entry with the smallest total residual; ties go to the lower index.
    pub fn best_entry(&self) -> usize {
        let totals = self.entry_totals();
        let mut best = 0;
        for (k, &t) in totals.iter().enumerate() {
            if t < totals[best] {
                best = k;
            }
        }
        best
    }
}

/// Core of the residual. `dict_samples` is `N x d x Λ` and `observed` is `N x Λ`.
fn residual_from_samples(dict_samples: &[f64], observed: &[f64], n: usize, d: usize, bands: usize) -> Vec<f64> {
    let mut out = alloc::vec![0.0; d * bands];
    for j in 0..n {
        let f = &observed[j * bands..(j + 1) * bands];
        let m = &dict_samples[j * d * bands..(j + 1) * d * bands];
        for k in 0..d {
            for l in 0..bands {
                let mk = m[k * bands + l];
                let diff = mk - f[l];
                out[k * bands + l] += diff * diff / mk.max(RESIDUAL_EPSILON);
            }
        }
    }
    let inv = 1.0 / n as f64;
    for v in &mut out {
        *v *= inv;
    }
    out
}

pub fn compute_residual(pixel: &PixelSampleSet, dict: &BrdfDictionary) -> Result<ReflectanceResidual> {
    dict.check_bands(pixel.bands)?;
    let (n, d, bands) = (pixel.len(), dict.dictionary_size(), pixel.bands);
    let mut samples = Vec::with_capacity(n * d * bands);
    for a in &pixel.angles {
        for k in 0..d {
            for l in 0..bands {
                samples.push(dict.sample(k, a, l)?);
            }
        }
    }
    Ok(ReflectanceResidual {
        dictionary_size: d,
        bands,
        values: residual_from_samples(&samples, &pixel.reflectances, n, d, bands),
    })
}

/// Nearest-neighbour 4x upsampling of a band vector.
pub fn encode_mssa(row: &[f64]) -> Vec<f64> {
    row.iter()
        .flat_map(|&v| core::iter::repeat_n(v, MSSA_REPEAT))
        .collect()
}

/// Images chosen for one MSMA draw, in ascending view-zenith order.
///
/// `k` of the `view_zeniths.len()` images are drawn uniformly without
/// replacement from a ChaCha8 stream seeded with `seed`. Equal zeniths keep
/// image order.
pub fn msma_selection(view_zeniths: &[f64], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = view_zeniths.len();
    if k == 0 || k > n {
        return Err(Error::Encoder(format!("MSMA needs 1 <= k <= N, got k={} N={}", k, n)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, n, k).into_vec();
    chosen.sort_by(|&a, &b| view_zeniths[a].total_cmp(&view_zeniths[b]).then(a.cmp(&b)));
    Ok(chosen)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsmaFeature {
    pub values: Vec<f64>,
    /// Contributing images, ascending view zenith.
    pub sources: Vec<usize>,
}

pub fn encode_msma(pixel: &PixelSampleSet, k: usize, seed: u64) -> Result<MsmaFeature> {
    let zeniths: Vec<f64> = pixel.angles.iter().map(|a| a.view_zenith).collect();
    let sources = msma_selection(&zeniths, k, seed)?;
    let values = sources.iter().flat_map(|&j| pixel.row(j).iter().copied()).collect();
    Ok(MsmaFeature { values, sources })
}

/// Which encoding a feature grid holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Mssa,
    Msma,
    Rr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingMode {
    /// Single image `image`.
    Mssa { image: usize },
    Msma { k: usize, seed: u64 },
    Rr,
}

impl EncodingMode {
    pub fn kind(&self) -> ModeKind {
        match self {
            EncodingMode::Mssa { .. } => ModeKind::Mssa,
            EncodingMode::Msma { .. } => ModeKind::Msma,
            EncodingMode::Rr => ModeKind::Rr,
        }
    }
}

/// Per-pixel features, pixel-major: `data[p * feature_len + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub width: usize,
    pub height: usize,
    pub feature_len: usize,
    pub mode: ModeKind,
    pub data: Vec<f32>,
}

impl FeatureGrid {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn feature(&self, pixel: usize) -> &[f32] {
        &self.data[pixel * self.feature_len..(pixel + 1) * self.feature_len]
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.pixel_count() * self.feature_len {
            return Err(Error::LengthMismatch {
                expected: self.pixel_count() * self.feature_len,
                found: self.data.len(),
            });
        }
        Ok(())
    }
}

/// Encoding state shared by every pixel of a tile.
///
/// Under the flat-surface model all pixels of an image share its angles, so the
/// dictionary is sampled once per (image, entry, band).
pub struct TileEncoder<'a> {
    stack: &'a ImageStack,
    mode: EncodingMode,
    feature_len: usize,
    msma_sources: Vec<usize>,
    dict_samples: Vec<f64>,
    dictionary_size: usize,
}

impl<'a> TileEncoder<'a> {
    pub fn new(stack: &'a ImageStack, dict: Option<&BrdfDictionary>, mode: EncodingMode) -> Result<Self> {
        if stack.pixel_kind() != PixelKind::Reflectance {
            return Err(Error::PixelKind {
                expected: PixelKind::Reflectance.as_str(),
                found: stack.pixel_kind().as_str(),
            });
        }
        let bands = stack.band_count();
        let mut enc = TileEncoder {
            stack,
            mode,
            feature_len: 0,
            msma_sources: Vec::new(),
            dict_samples: Vec::new(),
            dictionary_size: 0,
        };
        match mode {
            EncodingMode::Mssa { image } => {
                if image >= stack.len() {
                    return Err(Error::Encoder(format!("image {} not in a stack of {}", image, stack.len())));
                }
                enc.feature_len = MSSA_REPEAT * bands;
            }
            EncodingMode::Msma { k, seed } => {
                let zeniths: Vec<f64> = stack.images.iter().map(|i| i.geometry.view_zenith).collect();
                enc.msma_sources = msma_selection(&zeniths, k, seed)?;
                enc.feature_len = k * bands;
            }
            EncodingMode::Rr => {
                let dict = dict.ok_or_else(|| Error::Encoder("RR encoding needs a dictionary".into()))?;
                dict.check_bands(bands)?;
                let d = dict.dictionary_size();
                for img in &stack.images {
                    let a = AngleSample::from_geometry(&img.geometry);
                    for k in 0..d {
                        for l in 0..bands {
                            enc.dict_samples.push(dict.sample(k, &a, l)?);
                        }
                    }
                }
                enc.dictionary_size = d;
                enc.feature_len = d * bands;
            }
        }
        Ok(enc)
    }

    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    /// Images contributing to an MSMA encoding (empty for other modes).
    pub fn msma_sources(&self) -> &[usize] {
        &self.msma_sources
    }

    pub fn encode_pixel(&self, pixel: usize) -> Vec<f32> {
        let stack = self.stack;
        let bands = stack.band_count();
        match self.mode {
            EncodingMode::Mssa { image } => {
                let row: Vec<f64> = stack.images[image].planes.iter().map(|p| f64::from(p[pixel])).collect();
                encode_mssa(&row).into_iter().map(|v| v as f32).collect()
            }
            EncodingMode::Msma { .. } => self
                .msma_sources
                .iter()
                .flat_map(|&j| stack.images[j].planes.iter().map(move |p| p[pixel]))
                .collect(),
            EncodingMode::Rr => {
                let observed: Vec<f64> = stack
                    .images
                    .iter()
                    .flat_map(|img| img.planes.iter().map(move |p| f64::from(p[pixel])))
                    .collect();
                residual_from_samples(&self.dict_samples, &observed, stack.len(), self.dictionary_size, bands)
                    .into_iter()
                    .map(|v| v as f32)
                    .collect()
            }
        }
    }

    pub fn encode<E: Executor>(&self, exec: &E) -> FeatureGrid {
        let n = self.stack.width() * self.stack.height();
        let per_pixel = exec.map(n, |p| self.encode_pixel(p));
        let mut data = Vec::with_capacity(n * self.feature_len);
        for f in per_pixel {
            data.extend_from_slice(&f);
        }
        FeatureGrid {
            width: self.stack.width(),
            height: self.stack.height(),
            feature_len: self.feature_len,
            mode: self.mode.kind(),
            data,
        }
    }
}

/// Encodes every pixel of a reflectance stack.
pub fn encode_tile<E: Executor>(
    stack: &ImageStack,
    dict: Option<&BrdfDictionary>,
    mode: EncodingMode,
    exec: &E,
) -> Result<FeatureGrid> {
    Ok(TileEncoder::new(stack, dict, mode)?.encode(exec))
}
