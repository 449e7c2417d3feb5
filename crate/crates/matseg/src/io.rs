//! On-disk formats.
//!
//! Every grid is a JSON header plus a sidecar of raw little-endian values named
//! by the header's `data_file` field, relative to the header. Writers put the
//! sidecar next to the header with the header's stem and an extension naming
//! the element type (`.u8`, `.u32`, `.f32`).
//!
//! | file | header | sidecar |
//! |------|--------|---------|
//! | stack directory | `stack.json` | one `.f32` plane per image and band |
//! | label mask | `{width, height, palette}` | `u8`, 255 = unlabeled |
//! | segment mask | `{width, height}` | `u32` |
//! | feature grid | `{width, height, feature_len, mode}` | `f32`, pixel-major |
//! | prediction | `{width, height, palette}` | `f32`, classes per pixel |
//! | dictionary | `{entries, band_map}` | `f32` table per tabulated entry |
//!
//! Models are a single JSON file with base64 tensors.

use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use matseg_core::brdf::{BandMap, BrdfAxes, BrdfDictionary, BrdfEntry, BrdfModel, TabulatedBrdf};
use matseg_core::classifier::{Network, NetworkConfig, ProbabilityGrid, TrainConfig, TrainHistory};
use matseg_core::encoder::{FeatureGrid, ModeKind};
use matseg_core::imagery::{BandSpec, ImageStack, LabelMask, MultispectralImage, PixelKind, SegmentMask, ViewGeometry};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const STACK_MANIFEST: &str = "stack.json";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    create_parent(path)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn read_exact_len(path: &Path, elem: usize, count: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != elem * count {
        return Err(Error::format(
            path,
            format!("expected {} bytes ({} values), found {}", elem * count, count, bytes.len()),
        ));
    }
    Ok(bytes)
}

pub fn read_f32s(path: &Path, count: usize) -> Result<Vec<f32>> {
    Ok(read_exact_len(path, 4, count)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_f32s(path: &Path, values: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    create_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_u32s(path: &Path, count: usize) -> Result<Vec<u32>> {
    Ok(read_exact_len(path, 4, count)?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Sidecar path stored in a header (relative) and its resolved location.
fn sidecar_for(header: &Path, ext: &str) -> (String, PathBuf) {
    let stem = header.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into());
    let name = format!("{stem}.{ext}");
    (name.clone(), resolve(header, &name))
}

fn resolve(header: &Path, relative: &str) -> PathBuf {
    header.parent().unwrap_or(Path::new("")).join(relative)
}

#[derive(Debug, Serialize, Deserialize)]
struct StackManifest {
    region_id: String,
    width: usize,
    height: usize,
    pixel_kind: PixelKind,
    bands: Vec<BandSpec>,
    images: Vec<ImageManifest>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageManifest {
    id: String,
    geometry: ViewGeometry,
    band_files: Vec<String>,
}

/// Loads and validates a stack directory. Errors name the offending image.
pub fn load_stack(dir: &Path) -> Result<ImageStack> {
    let manifest_path = dir.join(STACK_MANIFEST);
    let m: StackManifest = read_json(&manifest_path)?;
    let n = m.width * m.height;
    let mut images = Vec::with_capacity(m.images.len());
    for (index, img) in m.images.into_iter().enumerate() {
        let at = |e: Error| Error::Image {
            index,
            source: Box::new(e),
        };
        if img.band_files.len() != m.bands.len() {
            return Err(at(Error::format(
                &manifest_path,
                format!("{} band files for {} bands", img.band_files.len(), m.bands.len()),
            )));
        }
        let planes = img
            .band_files
            .iter()
            .map(|f| read_f32s(&dir.join(f), n))
            .collect::<Result<Vec<_>>>()
            .map_err(at)?;
        images.push(MultispectralImage {
            id: img.id,
            width: m.width,
            height: m.height,
            pixel_kind: m.pixel_kind,
            bands: m.bands.clone(),
            planes,
            geometry: img.geometry,
        });
    }
    Ok(ImageStack::new(m.region_id, images)?)
}

/// Writes `stack.json` and one `img{i}_b{b}.f32` file per image and band.
pub fn save_stack(stack: &ImageStack, dir: &Path) -> Result<()> {
    stack.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut images = Vec::with_capacity(stack.len());
    for (i, img) in stack.images.iter().enumerate() {
        let mut band_files = Vec::with_capacity(img.band_count());
        for (b, plane) in img.planes.iter().enumerate() {
            let name = format!("img{i:03}_b{b:02}.f32");
            write_f32s(&dir.join(&name), plane)?;
            band_files.push(name);
        }
        images.push(ImageManifest {
            id: img.id.clone(),
            geometry: img.geometry.clone(),
            band_files,
        });
    }
    let manifest = StackManifest {
        region_id: stack.region_id.clone(),
        width: stack.width(),
        height: stack.height(),
        pixel_kind: stack.pixel_kind(),
        bands: stack.bands().to_vec(),
        images,
    };
    write_json(&dir.join(STACK_MANIFEST), &manifest)
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskHeader {
    width: usize,
    height: usize,
    palette: Vec<String>,
    data_file: String,
}

pub fn load_mask(path: &Path) -> Result<LabelMask> {
    let h: MaskHeader = read_json(path)?;
    let labels = read_exact_len(&resolve(path, &h.data_file), 1, h.width * h.height)?;
    LabelMask::new(h.width, h.height, labels, h.palette).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_mask(mask: &LabelMask, path: &Path) -> Result<()> {
    mask.validate()?;
    let (data_file, data) = sidecar_for(path, "u8");
    write_bytes(&data, &mask.labels)?;
    write_json(
        path,
        &MaskHeader {
            width: mask.width,
            height: mask.height,
            palette: mask.palette.clone(),
            data_file,
        },
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentHeader {
    width: usize,
    height: usize,
    data_file: String,
}

pub fn load_segments(path: &Path) -> Result<SegmentMask> {
    let h: SegmentHeader = read_json(path)?;
    let ids = read_u32s(&resolve(path, &h.data_file), h.width * h.height)?;
    SegmentMask::new(h.width, h.height, ids).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_segments(seg: &SegmentMask, path: &Path) -> Result<()> {
    let (data_file, data) = sidecar_for(path, "u32");
    let bytes: Vec<u8> = seg.segment_ids.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_bytes(&data, &bytes)?;
    write_json(
        path,
        &SegmentHeader {
            width: seg.width,
            height: seg.height,
            data_file,
        },
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureHeader {
    width: usize,
    height: usize,
    feature_len: usize,
    mode: ModeKind,
    data_file: String,
}

pub fn load_features(path: &Path) -> Result<FeatureGrid> {
    let h: FeatureHeader = read_json(path)?;
    let data = read_f32s(&resolve(path, &h.data_file), h.width * h.height * h.feature_len)?;
    Ok(FeatureGrid {
        width: h.width,
        height: h.height,
        feature_len: h.feature_len,
        mode: h.mode,
        data,
    })
}

pub fn save_features(grid: &FeatureGrid, path: &Path) -> Result<()> {
    grid.validate()?;
    let (data_file, data) = sidecar_for(path, "f32");
    write_f32s(&data, &grid.data)?;
    write_json(
        path,
        &FeatureHeader {
            width: grid.width,
            height: grid.height,
            feature_len: grid.feature_len,
            mode: grid.mode,
            data_file,
        },
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionHeader {
    width: usize,
    height: usize,
    classes: usize,
    palette: Vec<String>,
    data_file: String,
}

pub fn load_prediction(path: &Path) -> Result<ProbabilityGrid> {
    let h: PredictionHeader = read_json(path)?;
    if h.palette.len() != h.classes {
        return Err(Error::format(path, format!("{} palette names for {} classes", h.palette.len(), h.classes)));
    }
    let data = read_f32s(&resolve(path, &h.data_file), h.width * h.height * h.classes)?;
    Ok(ProbabilityGrid {
        width: h.width,
        height: h.height,
        palette: h.palette,
        data,
    })
}

pub fn save_prediction(grid: &ProbabilityGrid, path: &Path) -> Result<()> {
    grid.validate()?;
    let (data_file, data) = sidecar_for(path, "f32");
    write_f32s(&data, &grid.data)?;
    write_json(
        path,
        &PredictionHeader {
            width: grid.width,
            height: grid.height,
            classes: grid.classes(),
            palette: grid.palette.clone(),
            data_file,
        },
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct DictionaryFile {
    entries: Vec<EntryFile>,
    band_map: BandMap,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum EntryFile {
    Lambertian {
        name: String,
        wavelengths: Vec<f64>,
        params: LambertianParams,
    },
    Glossy {
        name: String,
        wavelengths: Vec<f64>,
        params: GlossyParams,
    },
    Tabulated {
        name: String,
        wavelengths: Vec<f64>,
        axes: BrdfAxes,
        table_file: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct LambertianParams {
    albedo: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GlossyParams {
    diffuse: Vec<f64>,
    specular: f64,
    exponent: f64,
}

pub fn load_dictionary(path: &Path) -> Result<BrdfDictionary> {
    let file: DictionaryFile = read_json(path)?;
    let mut entries = Vec::with_capacity(file.entries.len());
    for e in file.entries {
        entries.push(match e {
            EntryFile::Lambertian {
                name,
                wavelengths,
                params,
            } => BrdfEntry::lambertian(name, wavelengths, params.albedo),
            EntryFile::Glossy {
                name,
                wavelengths,
                params,
            } => BrdfEntry::glossy(name, wavelengths, params.diffuse, params.specular, params.exponent),
            EntryFile::Tabulated {
                name,
                wavelengths,
                axes,
                table_file,
            } => {
                let len = TabulatedBrdf::expected_len(&axes, wavelengths.len());
                let values = read_f32s(&resolve(path, &table_file), len)?;
                BrdfEntry {
                    name,
                    wavelengths,
                    model: BrdfModel::Tabulated(TabulatedBrdf { axes, values }),
                }
            }
        });
    }
    BrdfDictionary::new(entries, file.band_map).map_err(|e| Error::format(path, e.to_string()))
}

/// Tabulated entries go to `{stem}_{index}.f32` next to `path`.
pub fn save_dictionary(dict: &BrdfDictionary, path: &Path) -> Result<()> {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dict".into());
    let mut entries = Vec::with_capacity(dict.entries.len());
    for (i, e) in dict.entries.iter().enumerate() {
        let (name, wavelengths) = (e.name.clone(), e.wavelengths.clone());
        entries.push(match &e.model {
            BrdfModel::Lambertian { albedo } => EntryFile::Lambertian {
                name,
                wavelengths,
                params: LambertianParams { albedo: albedo.clone() },
            },
            BrdfModel::Glossy {
                diffuse,
                specular,
                exponent,
            } => EntryFile::Glossy {
                name,
                wavelengths,
                params: GlossyParams {
                    diffuse: diffuse.clone(),
                    specular: *specular,
                    exponent: *exponent,
                },
            },
            BrdfModel::Tabulated(t) => {
                let table_file = format!("{stem}_{i}.f32");
                write_f32s(&resolve(path, &table_file), &t.values)?;
                EntryFile::Tabulated {
                    name,
                    wavelengths,
                    axes: t.axes.clone(),
                    table_file,
                }
            }
        });
    }
    write_json(
        path,
        &DictionaryFile {
            entries,
            band_map: dict.band_map.clone(),
        },
    )
}

/// Free-form provenance stored with a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_mode: Option<ModeKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<TrainHistory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorFile {
    name: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    config: NetworkConfig,
    palette: Vec<String>,
    input_shift: String,
    input_scale: String,
    tensors: Vec<TensorFile>,
    #[serde(default)]
    metadata: ModelMetadata,
}

fn encode_f32(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f32(path: &Path, what: &str, text: &str, count: usize) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::format(path, format!("{what}: bad base64: {e}")))?;
    if bytes.len() != count * 4 {
        return Err(Error::format(
            path,
            format!("{what}: expected {} values, found {} bytes", count, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

/// Parameters are stored as `f32`; see [`Network::round_to_f32`].
pub fn save_model(model: &Network, metadata: &ModelMetadata, path: &Path) -> Result<()> {
    let (shift, scale) = model.normalization();
    let file = ModelFile {
        config: model.config().clone(),
        palette: model.palette().to_vec(),
        input_shift: encode_f32(shift),
        input_scale: encode_f32(scale),
        tensors: model
            .tensors()
            .iter()
            .map(|t| TensorFile {
                name: t.name.clone(),
                shape: t.shape.clone(),
                data: encode_f32(&model.params()[t.range.clone()]),
            })
            .collect(),
        metadata: metadata.clone(),
    };
    write_json(path, &file)
}

pub fn load_model(path: &Path) -> Result<(Network, ModelMetadata)> {
    let file: ModelFile = read_json(path)?;
    let mut net = Network::zeros(file.config).map_err(|e| Error::format(path, e.to_string()))?;
    let expected: Vec<_> = net.tensors().iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
    if file.tensors.len() != expected.len() {
        return Err(Error::format(
            path,
            format!("{} tensors, config needs {}", file.tensors.len(), expected.len()),
        ));
    }
    for (name, shape) in expected {
        let t = file
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::format(path, format!("missing tensor {name}")))?;
        if t.shape != shape {
            return Err(Error::format(path, format!("tensor {name} has shape {:?}, expected {:?}", t.shape, shape)));
        }
        let values = decode_f32(path, &name, &t.data, shape.iter().product())?;
        net.tensor_mut(&name).expect("tensor listed by the network").copy_from_slice(&values);
    }
    let n = net.config().input_len;
    let shift = decode_f32(path, "input_shift", &file.input_shift, n)?;
    let scale = decode_f32(path, "input_scale", &file.input_scale, n)?;
    net.set_normalization(shift, scale)?;
    net.set_palette(file.palette).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((net, file.metadata))
}
