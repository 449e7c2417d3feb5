//! Conversion of raw digital numbers to top-of-atmosphere radiance and
//! reflectance.
//!
//! Radiance per band is `GAIN * DN * (abscal_factor / effective_bandwidth) + OFFSET`.
//! Reflectance is `L * d^2 * pi / (E * cos(sun_zenith))` with `d` the Earth-Sun
//! distance in AU and `E` the band solar irradiance. All arithmetic is done in
//! `f64`; results are stored as `f32`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::imagery::{BandSpec, ImageStack, MultispectralImage, PixelKind, ViewGeometry};
use crate::{Error, Result};

/// Lower and upper bound applied to reflectance.
pub const REFLECTANCE_RANGE: (f64, f64) = (0.0, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRange {
    pub min: f64,
    pub max: f64,
}

impl BandRange {
    fn empty() -> Self {
        BandRange {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    fn include(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    fn merge(&mut self, other: &BandRange) {
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// Range of the output reflectance per band, after clamping.
    pub bands: Vec<BandRange>,
    pub clamped_pixels: u64,
    pub total_pixels: u64,
}

fn check_kind(image: &MultispectralImage, expected: PixelKind) -> Result<()> {
    if image.pixel_kind != expected {
        return Err(Error::PixelKind {
            expected: expected.as_str(),
            found: image.pixel_kind.as_str(),
        });
    }
    Ok(())
}

fn radiance_scale(band: &BandSpec) -> Result<f64> {
    let ok = band.gain.is_finite()
        && band.offset.is_finite()
        && band.abscal_factor.is_finite()
        && band.effective_bandwidth.is_finite()
        && band.effective_bandwidth > 0.0;
    if !ok {
        return Err(Error::Calibration(format!(
            "band {}: missing or invalid calibration constants",
            band.name
        )));
    }
    Ok(band.gain * band.abscal_factor / band.effective_bandwidth)
}

/// Radiance of a single digital number.
pub fn radiance(band: &BandSpec, dn: f64) -> Result<f64> {
    Ok(radiance_scale(band)? * dn + band.offset)
}

/// `pi * d^2 / (E * cos(sun_zenith))`, the factor that turns radiance into
/// reflectance for one band.
fn reflectance_factor(band: &BandSpec, geometry: &ViewGeometry) -> Result<f64> {
    let cos_sun = libm::cos(geometry.sun_zenith.to_radians());
    if !(cos_sun > 0.0) {
        return Err(Error::Calibration(format!(
            "cos(sun_zenith) = {} is not positive",
            cos_sun
        )));
    }
    if !(band.solar_irradiance > 0.0) {
        return Err(Error::Calibration(format!(
            "band {}: solar irradiance {} is not positive",
            band.name, band.solar_irradiance
        )));
    }
    let d = geometry.earth_sun_distance;
    Ok(d * d * PI / (band.solar_irradiance * cos_sun))
}

/// Unclamped reflectance of a single radiance value.
pub fn reflectance(band: &BandSpec, geometry: &ViewGeometry, radiance: f64) -> Result<f64> {
    Ok(radiance * reflectance_factor(band, geometry)?)
}

pub fn dn_to_radiance(image: &MultispectralImage) -> Result<MultispectralImage> {
    check_kind(image, PixelKind::RawDn)?;
    let mut planes = Vec::with_capacity(image.planes.len());
    for (band, plane) in image.bands.iter().zip(&image.planes) {
        let scale = radiance_scale(band)?;
        planes.push(
            plane
                .iter()
                .map(|&dn| (scale * f64::from(dn) + band.offset) as f32)
                .collect(),
        );
    }
    Ok(MultispectralImage {
        pixel_kind: PixelKind::Radiance,
        planes,
        ..image.clone()
    })
}

pub fn radiance_to_reflectance(
    image: &MultispectralImage,
) -> Result<(MultispectralImage, CalibrationReport)> {
    check_kind(image, PixelKind::Radiance)?;
    let (lo, hi) = REFLECTANCE_RANGE;
    let mut planes = Vec::with_capacity(image.planes.len());
    let mut ranges = Vec::with_capacity(image.planes.len());
    let mut clamped = alloc::vec![false; image.pixel_count()];
    for (band, plane) in image.bands.iter().zip(&image.planes) {
        let factor = reflectance_factor(band, &image.geometry)?;
        let mut range = BandRange::empty();
        let out = plane
            .iter()
            .zip(clamped.iter_mut())
            .map(|(&l, was_clamped)| {
                let r = f64::from(l) * factor;
                let c = r.clamp(lo, hi);
                if c != r {
                    *was_clamped = true;
                }
                range.include(c);
                c as f32
            })
            .collect();
        planes.push(out);
        ranges.push(range);
    }
    let report = CalibrationReport {
        bands: ranges,
        clamped_pixels: clamped.iter().filter(|&&c| c).count() as u64,
        total_pixels: image.pixel_count() as u64,
    };
    Ok((
        MultispectralImage {
            pixel_kind: PixelKind::Reflectance,
            planes,
            ..image.clone()
        },
        report,
    ))
}

/// Applies both conversions to every image. Errors carry the image index.
pub fn calibrate_stack(stack: &ImageStack) -> Result<(ImageStack, CalibrationReport)> {
    let mut images = Vec::with_capacity(stack.len());
    let mut report = CalibrationReport {
        bands: alloc::vec![BandRange::empty(); stack.band_count()],
        clamped_pixels: 0,
        total_pixels: 0,
    };
    for (i, image) in stack.images.iter().enumerate() {
        let (refl, r) = dn_to_radiance(image)
            .and_then(|l| radiance_to_reflectance(&l))
            .map_err(|e| Error::at_image(i, e))?;
        for (acc, b) in report.bands.iter_mut().zip(&r.bands) {
            acc.merge(b);
        }
        report.clamped_pixels += r.clamped_pixels;
        report.total_pixels += r.total_pixels;
        images.push(refl);
    }
    Ok((
        ImageStack {
            region_id: stack.region_id.clone(),
            images,
        },
        report,
    ))
}

/// Digital number that calibrates to `reflectance` under the given band and
/// geometry. Fails when the constants are not invertible or the result would
/// be a negative DN.
pub fn invert_to_dn(band: &BandSpec, geometry: &ViewGeometry, reflectance: f64) -> Result<f64> {
    let scale = radiance_scale(band)?;
    if !(scale > 0.0) {
        return Err(Error::Calibration(format!(
            "band {}: gain * abscal_factor must be positive to invert",
            band.name
        )));
    }
    let radiance = reflectance / reflectance_factor(band, geometry)?;
    let dn = (radiance - band.offset) / scale;
    if !(dn >= 0.0) {
        return Err(Error::Calibration(format!(
            "band {}: reflectance {} needs negative DN {}",
            band.name, reflectance, dn
        )));
    }
    Ok(dn)
}
