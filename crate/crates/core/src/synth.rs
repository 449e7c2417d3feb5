//! Seeded synthetic multi-view scenes with exact ground truth.
//!
//! Every pixel of image `j` in band `b` is
//! `clamp(m(θ_j, b) · g_j + σ_b · z, 0, 2)`, where `m` is the pixel's dictionary
//! BRDF sampled at the image's global angles, `g_j = 1 + jitter · z_j` is a
//! per-image gain and the `z` are standard normal draws.
//!
//! Randomness is ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(rng_seed)`. Stream 0 produces the image gains in image order.
//! Pixel `p` uses stream `p + 1` and draws one normal per (image, band), image
//! major. A pixel's values therefore do not depend on how pixels are scheduled.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::brdf::{AngleSample, BrdfDictionary, BrdfEntry};
use crate::calibration::{invert_to_dn, REFLECTANCE_RANGE};
use crate::exec::Executor;
use crate::imagery::{
    BandSpec, ImageStack, LabelMask, MultispectralImage, PixelKind, SegmentMask, ViewGeometry, MAX_CLASSES,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// One standard deviation per band; empty means noise-free.
    #[serde(default)]
    pub gaussian_sigma: Vec<f64>,
    /// Standard deviation of the per-image multiplicative gain around 1.
    #[serde(default)]
    pub gain_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default = "default_region")]
    pub region_id: String,
    pub width: usize,
    pub height: usize,
    /// Row-major dictionary entry index per pixel.
    pub material_map: Vec<u8>,
    pub views: Vec<ViewGeometry>,
    pub bands: Vec<BandSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub rng_seed: u64,
}

fn default_region() -> String {
    "synthetic".to_string()
}

impl SceneSpec {
    pub fn validate(&self, dict: &BrdfDictionary) -> Result<()> {
        let n = self.width * self.height;
        if n == 0 {
            return Err(Error::Scene("empty scene".into()));
        }
        if self.material_map.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: self.material_map.len(),
            });
        }
        if self.views.is_empty() {
            return Err(Error::Scene("scene needs at least one view".into()));
        }
        for g in &self.views {
            g.validate()?;
        }
        for b in &self.bands {
            b.validate()?;
        }
        dict.check_bands(self.bands.len())?;
        let d = dict.dictionary_size();
        if let Some((p, m)) = self.material_map.iter().enumerate().find(|(_, &m)| usize::from(m) >= d) {
            return Err(Error::Scene(format!(
                "material {} at pixel {} is outside a dictionary of {}",
                m, p, d
            )));
        }
        let sigma = &self.noise.gaussian_sigma;
        if !sigma.is_empty() && sigma.len() != self.bands.len() {
            return Err(Error::Scene(format!(
                "{} noise sigmas for {} bands",
                sigma.len(),
                self.bands.len()
            )));
        }
        if sigma.iter().chain([&self.noise.gain_jitter]).any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Scene("noise parameters must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn sigma(&self, band: usize) -> f64 {
        self.noise.gaussian_sigma.get(band).copied().unwrap_or(0.0)
    }
}

/// A rendered reflectance stack with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub stack: ImageStack,
    pub truth: LabelMask,
    pub segments: SegmentMask,
}

/// Renders the reflectance stack, the truth mask and the segment mask.
pub fn render<E: Executor>(spec: &SceneSpec, dict: &BrdfDictionary, exec: &E) -> Result<SceneBundle> {
    spec.validate(dict)?;
    let (n_img, n_band) = (spec.views.len(), spec.bands.len());
    let angles: Vec<AngleSample> = spec.views.iter().map(AngleSample::from_geometry).collect();
    // clean[entry][image][band]
    let mut clean = Vec::with_capacity(dict.dictionary_size());
    for e in 0..dict.dictionary_size() {
        let mut per_image = Vec::with_capacity(n_img);
        for a in &angles {
            per_image.push((0..n_band).map(|b| dict.sample(e, a, b)).collect::<Result<Vec<_>>>()?);
        }
        clean.push(per_image);
    }
    let mut gain_rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let gains: Vec<f64> = (0..n_img)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut gain_rng);
            1.0 + spec.noise.gain_jitter * z
        })
        .collect();

    let pixels = exec.map(spec.width * spec.height, |p| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        rng.set_stream(p as u64 + 1);
        let m = &clean[usize::from(spec.material_map[p])];
        let mut out = Vec::with_capacity(n_img * n_band);
        for (j, g) in gains.iter().enumerate() {
            for b in 0..n_band {
                let z: f64 = StandardNormal.sample(&mut rng);
                let v = m[j][b] * g + spec.sigma(b) * z;
                out.push(v.clamp(REFLECTANCE_RANGE.0, REFLECTANCE_RANGE.1) as f32);
            }
        }
        out
    });

    let images = spec
        .views
        .iter()
        .enumerate()
        .map(|(j, g)| MultispectralImage {
            id: format!("view-{:02}", j),
            width: spec.width,
            height: spec.height,
            pixel_kind: PixelKind::Reflectance,
            bands: spec.bands.clone(),
            planes: (0..n_band)
                .map(|b| pixels.iter().map(|px| px[j * n_band + b]).collect())
                .collect(),
            geometry: g.clone(),
        })
        .collect();
    let stack = ImageStack::new(spec.region_id.clone(), images)?;
    let truth = LabelMask::new(spec.width, spec.height, spec.material_map.clone(), dict.names())?;
    let segments = connected_components(spec.width, spec.height, &spec.material_map)?;
    Ok(SceneBundle { stack, truth, segments })
}

/// Raw DN stack that calibrates back to `stack`.
pub fn to_dn(stack: &ImageStack) -> Result<ImageStack> {
    if stack.pixel_kind() != PixelKind::Reflectance {
        return Err(Error::PixelKind {
            expected: PixelKind::Reflectance.as_str(),
            found: stack.pixel_kind().as_str(),
        });
    }
    let mut images = Vec::with_capacity(stack.len());
    for (i, img) in stack.images.iter().enumerate() {
        let mut planes = Vec::with_capacity(img.band_count());
        for (band, plane) in img.bands.iter().zip(&img.planes) {
            let dn = plane
                .iter()
                .map(|&r| invert_to_dn(band, &img.geometry, f64::from(r)).map(|v| v as f32))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::at_image(i, e))?;
            planes.push(dn);
        }
        images.push(MultispectralImage {
            pixel_kind: PixelKind::RawDn,
            planes,
            ..img.clone()
        });
    }
    ImageStack::new(stack.region_id.clone(), images)
}

/// Renders the scene and converts it to raw DN using the spec's band constants.
pub fn render_dn<E: Executor>(spec: &SceneSpec, dict: &BrdfDictionary, exec: &E) -> Result<(SceneBundle, ImageStack)> {
    let bundle = render(spec, dict, exec)?;
    let dn = to_dn(&bundle.stack)?;
    Ok((bundle, dn))
}

/// 4-connected components of equal labels, numbered from 1 in raster order of
/// their first pixel.
pub fn connected_components(width: usize, height: usize, labels: &[u8]) -> Result<SegmentMask> {
    let mut ids = alloc::vec![0u32; width * height];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if ids[start] != 0 {
            continue;
        }
        next += 1;
        ids[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (x, y) = (p % width, p / width);
            let mut visit = |q: usize| {
                if ids[q] == 0 && labels[q] == labels[p] {
                    ids[q] = next;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < width {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - width);
            }
            if y + 1 < height {
                visit(p + width);
            }
        }
    }
    SegmentMask::new(width, height, ids)
}

/// Material map of `block`×`block` tiles, each an independent uniform draw.
pub fn block_material_map(width: usize, height: usize, block: usize, materials: usize, seed: u64) -> Result<Vec<u8>> {
    if block == 0 || materials == 0 || materials > MAX_CLASSES {
        return Err(Error::Scene(format!(
            "block size {} and material count {} must be positive (at most {})",
            block, materials, MAX_CLASSES
        )));
    }
    let (bw, bh) = (width.div_ceil(block), height.div_ceil(block));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tiles: Vec<u8> = (0..bw * bh).map(|_| rng.random_range(0..materials) as u8).collect();
    Ok((0..width * height)
        .map(|p| tiles[(p / width / block) * bw + (p % width) / block])
        .collect())
}

/// Center wavelengths (nm) of the eight WorldView-3 VNIR bands.
pub const WV3_WAVELENGTHS: [f64; 8] = [427.0, 478.0, 546.0, 608.0, 659.0, 724.0, 833.0, 949.0];

/// WorldView-3 style VNIR band table.
pub fn default_bands() -> Vec<BandSpec> {
    const NAMES: [&str; 8] = ["coastal", "blue", "green", "yellow", "red", "red_edge", "nir1", "nir2"];
    const ESUN: [f64; 8] = [1757.89, 2004.61, 1830.18, 1712.07, 1535.33, 1348.08, 1055.94, 858.77];
    const GAIN: [f64; 8] = [0.905, 0.940, 0.938, 0.962, 0.964, 1.000, 0.961, 0.978];
    const OFFSET: [f64; 8] = [-8.604, -5.809, -4.996, -3.649, -3.021, -4.521, -5.522, -2.992];
    const ABSCAL: [f64; 8] = [0.01260, 0.00971, 0.00905, 0.00513, 0.01080, 0.00453, 0.01970, 0.01000];
    const BANDWIDTH: [f64; 8] = [0.0405, 0.0540, 0.0618, 0.0381, 0.0585, 0.0387, 0.1004, 0.0889];
    (0..8)
        .map(|i| BandSpec {
            index: i,
            name: NAMES[i].to_string(),
            center_wavelength: WV3_WAVELENGTHS[i],
            solar_irradiance: ESUN[i],
            gain: GAIN[i],
            offset: OFFSET[i],
            abscal_factor: ABSCAL[i],
            effective_bandwidth: BANDWIDTH[i],
        })
        .collect()
}

/// Five roof materials. `metal_sheet` shares the spectral shape of `concrete`
/// at slightly lower diffuse albedo, plus a sharp specular lobe, so the two
/// are hard to tell apart from a single view away from the highlight.
pub fn default_entries() -> Vec<BrdfEntry> {
    let w = WV3_WAVELENGTHS.to_vec();
    let concrete = [0.30, 0.32, 0.34, 0.35, 0.36, 0.37, 0.38, 0.38];
    let metal: Vec<f64> = concrete.iter().map(|a| a * 0.9).collect();
    alloc::vec![
        BrdfEntry::lambertian("asphalt", w.clone(), alloc::vec![0.06, 0.07, 0.08, 0.09, 0.10, 0.11, 0.12, 0.13]),
        BrdfEntry::lambertian("concrete", w.clone(), concrete.to_vec()),
        BrdfEntry::glossy("metal_sheet", w.clone(), metal, 0.25, 20.0),
        BrdfEntry::lambertian("vegetation", w.clone(), alloc::vec![0.04, 0.05, 0.10, 0.08, 0.06, 0.30, 0.50, 0.52]),
        BrdfEntry::glossy("clay_tile", w, alloc::vec![0.10, 0.12, 0.16, 0.24, 0.32, 0.36, 0.38, 0.40], 0.08, 8.0),
    ]
}

pub fn default_dictionary() -> Result<BrdfDictionary> {
    BrdfDictionary::for_bands(default_entries(), &WV3_WAVELENGTHS)
}

/// `n` views spread evenly in azimuth, zeniths cycling through 10°, 22° and 34°,
/// under a sun at 30° zenith, 150° azimuth. The specular direction is
/// 30° zenith, 330° azimuth.
pub fn orbit_views(n: usize) -> Vec<ViewGeometry> {
    const ZENITHS: [f64; 3] = [10.0, 22.0, 34.0];
    (0..n)
        .map(|j| ViewGeometry {
            view_zenith: ZENITHS[j % 3],
            view_azimuth: (360.0 * j as f64 / n as f64) % 360.0,
            sun_zenith: 30.0,
            sun_azimuth: 150.0,
            earth_sun_distance: 1.0,
            acquisition_time: format!("2016-{:02}-15T10:30:00Z", j % 12 + 1),
        })
        .collect()
}
