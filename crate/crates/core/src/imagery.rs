//! In-memory data model for registered multispectral stacks and masks.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Mask value for pixels without a material label.
pub const UNLABELED: u8 = 255;
/// Largest class count a single-byte mask can carry next to [`UNLABELED`].
pub const MAX_CLASSES: usize = 254;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelKind {
    RawDn,
    Radiance,
    Reflectance,
}

impl PixelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PixelKind::RawDn => "raw_dn",
            PixelKind::Radiance => "radiance",
            PixelKind::Reflectance => "reflectance",
        }
    }
}

/// Spectral band description and its absolute calibration constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub index: usize,
    pub name: String,
    /// Nanometers.
    pub center_wavelength: f64,
    /// Band-averaged solar exoatmospheric irradiance, W·m⁻²·µm⁻¹.
    pub solar_irradiance: f64,
    pub gain: f64,
    pub offset: f64,
    pub abscal_factor: f64,
    /// Micrometers.
    pub effective_bandwidth: f64,
}

impl BandSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.effective_bandwidth > 0.0) {
            return Err(Error::Stack(format!(
                "band {}: effective_bandwidth must be positive",
                self.name
            )));
        }
        if !(self.solar_irradiance > 0.0) {
            return Err(Error::Stack(format!(
                "band {}: solar_irradiance must be positive",
                self.name
            )));
        }
        Ok(())
    }
}

/// Acquisition geometry of one image. Angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewGeometry {
    pub view_zenith: f64,
    pub view_azimuth: f64,
    pub sun_zenith: f64,
    pub sun_azimuth: f64,
    /// Astronomical units.
    pub earth_sun_distance: f64,
    #[serde(default)]
    pub acquisition_time: String,
}

impl ViewGeometry {
    pub fn validate(&self) -> Result<()> {
        let zenith_ok = |z: f64| (0.0..90.0).contains(&z);
        let azimuth_ok = |a: f64| (0.0..360.0).contains(&a);
        if !zenith_ok(self.view_zenith) || !azimuth_ok(self.view_azimuth) {
            return Err(Error::Stack(format!(
                "view angles ({}, {}) out of range",
                self.view_zenith, self.view_azimuth
            )));
        }
        if !azimuth_ok(self.sun_azimuth) {
            return Err(Error::Stack(format!(
                "sun azimuth {} out of range",
                self.sun_azimuth
            )));
        }
        if !zenith_ok(self.sun_zenith) || !(libm::cos(self.sun_zenith.to_radians()) > 0.0) {
            return Err(Error::Stack(format!(
                "sun below horizon (zenith {})",
                self.sun_zenith
            )));
        }
        if !(0.98..=1.02).contains(&self.earth_sun_distance) {
            return Err(Error::Stack(format!(
                "earth_sun_distance {} outside [0.98, 1.02]",
                self.earth_sun_distance
            )));
        }
        Ok(())
    }
}

/// One image: Λ planar grids of `width * height` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MultispectralImage {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub pixel_kind: PixelKind,
    pub bands: Vec<BandSpec>,
    pub planes: Vec<Vec<f32>>,
    pub geometry: ViewGeometry,
}

impl MultispectralImage {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn value(&self, band: usize, pixel: usize) -> f32 {
        self.planes[band][pixel]
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::Stack("image has no bands".into()));
        }
        for (i, band) in self.bands.iter().enumerate() {
            if band.index != i {
                return Err(Error::Stack(format!(
                    "band indices must be contiguous from 0; position {} has index {}",
                    i, band.index
                )));
            }
            band.validate()?;
        }
        if self.planes.len() != self.bands.len() {
            return Err(Error::Stack(format!(
                "{} planes for {} bands",
                self.planes.len(),
                self.bands.len()
            )));
        }
        let n = self.pixel_count();
        for (b, plane) in self.planes.iter().enumerate() {
            if plane.len() != n {
                return Err(Error::Stack(format!(
                    "band {} has {} values, expected {}x{}",
                    b,
                    plane.len(),
                    self.width,
                    self.height
                )));
            }
        }
        self.geometry.validate()?;
        let bad = match self.pixel_kind {
            PixelKind::Reflectance => self
                .planes
                .iter()
                .flatten()
                .find(|v| !(0.0..=2.0).contains(*v)),
            PixelKind::RawDn => self.planes.iter().flatten().find(|v| !(**v >= 0.0)),
            PixelKind::Radiance => self.planes.iter().flatten().find(|v| !v.is_finite()),
        };
        if let Some(v) = bad {
            return Err(Error::Stack(format!(
                "value {} invalid for pixel kind {}",
                v,
                self.pixel_kind.as_str()
            )));
        }
        Ok(())
    }
}

/// N pixel-registered images of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    pub region_id: String,
    pub images: Vec<MultispectralImage>,
}

impl ImageStack {
    /// Builds a stack, checking every image and the registration contract.
    /// Errors name the offending image index.
    pub fn new(region_id: impl Into<String>, images: Vec<MultispectralImage>) -> Result<Self> {
        let stack = ImageStack {
            region_id: region_id.into(),
            images,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .images
            .first()
            .ok_or_else(|| Error::Stack("stack has no images".into()))?;
        for (i, img) in self.images.iter().enumerate() {
            img.validate().map_err(|e| Error::at_image(i, e))?;
            if img.width != first.width || img.height != first.height {
                return Err(Error::Image {
                    index: i,
                    reason: format!(
                        "registration: {}x{} differs from {}x{}",
                        img.width, img.height, first.width, first.height
                    ),
                });
            }
            let same_bands = img.bands.len() == first.bands.len()
                && img
                    .bands
                    .iter()
                    .zip(&first.bands)
                    .all(|(a, b)| a.name == b.name);
            if !same_bands {
                return Err(Error::Image {
                    index: i,
                    reason: "registration: band list differs from image 0".into(),
                });
            }
            if img.pixel_kind != first.pixel_kind {
                return Err(Error::Image {
                    index: i,
                    reason: "pixel kind differs from image 0".into(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn width(&self) -> usize {
        self.images[0].width
    }

    pub fn height(&self) -> usize {
        self.images[0].height
    }

    pub fn band_count(&self) -> usize {
        self.images[0].bands.len()
    }

    pub fn bands(&self) -> &[BandSpec] {
        &self.images[0].bands
    }

    pub fn pixel_kind(&self) -> PixelKind {
        self.images[0].pixel_kind
    }

    pub fn band_wavelengths(&self) -> Vec<f64> {
        self.bands().iter().map(|b| b.center_wavelength).collect()
    }
}

/// Per-pixel material labels in `[0, C)` or [`UNLABELED`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
    pub palette: Vec<String>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>, palette: Vec<String>) -> Result<Self> {
        let mask = LabelMask {
            width,
            height,
            labels,
            palette,
        };
        mask.validate()?;
        Ok(mask)
    }

    pub fn unlabeled(width: usize, height: usize, palette: Vec<String>) -> Self {
        LabelMask {
            width,
            height,
            labels: alloc::vec![UNLABELED; width * height],
            palette,
        }
    }

    pub fn classes(&self) -> usize {
        self.palette.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.palette.len() > MAX_CLASSES {
            return Err(Error::Mask(format!(
                "{} classes exceed the limit of {}",
                self.palette.len(),
                MAX_CLASSES
            )));
        }
        if self.labels.len() != self.width * self.height {
            return Err(Error::Mask(format!(
                "{} labels for a {}x{} mask",
                self.labels.len(),
                self.width,
                self.height
            )));
        }
        let c = self.palette.len();
        if let Some((p, v)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &v)| v != UNLABELED && v as usize >= c)
        {
            return Err(Error::Mask(format!(
                "pixel {} has class {} but the palette has {} classes",
                p, v, c
            )));
        }
        Ok(())
    }

    pub fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::Dimensions(format!(
                "mask is {}x{}, expected {}x{}",
                self.width, self.height, width, height
            )));
        }
        Ok(())
    }
}

/// Building segment identifiers; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMask {
    pub width: usize,
    pub height: usize,
    pub segment_ids: Vec<u32>,
}

impl SegmentMask {
    pub fn new(width: usize, height: usize, segment_ids: Vec<u32>) -> Result<Self> {
        if segment_ids.len() != width * height {
            return Err(Error::Mask(format!(
                "{} segment ids for a {}x{} mask",
                segment_ids.len(),
                width,
                height
            )));
        }
        Ok(SegmentMask {
            width,
            height,
            segment_ids,
        })
    }
}
