//! Material BRDFs and the dictionary used by the reflectance residual.
//!
//! A dictionary entry is either analytic (Lambertian or a Phong-style glossy
//! lobe) or tabulated on a regular 4D angle grid with a spectral axis.
//! Tabulated entries are sampled with multilinear interpolation; azimuth axes
//! wrap around 360° and zenith queries outside the grid clamp to the boundary.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::imagery::ViewGeometry;
use crate::{Error, Result};

fn normalize_azimuth(deg: f64) -> f64 {
    let mut a = libm::fmod(deg, 360.0);
    if a < 0.0 {
        a += 360.0;
    }
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// Local view and illumination directions of one observation, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSample {
    pub view_zenith: f64,
    pub view_azimuth: f64,
    pub illum_zenith: f64,
    pub illum_azimuth: f64,
}

impl AngleSample {
    /// Azimuths are wrapped into `[0, 360)`.
    pub fn new(view_zenith: f64, view_azimuth: f64, illum_zenith: f64, illum_azimuth: f64) -> Self {
        AngleSample {
            view_zenith,
            view_azimuth: normalize_azimuth(view_azimuth),
            illum_zenith,
            illum_azimuth: normalize_azimuth(illum_azimuth),
        }
    }

    /// Flat-surface model: local angles equal the image's global angles.
    pub fn from_geometry(g: &ViewGeometry) -> Self {
        AngleSample::new(g.view_zenith, g.view_azimuth, g.sun_zenith, g.sun_azimuth)
    }
}

fn direction(zenith_deg: f64, azimuth_deg: f64) -> [f64; 3] {
    let (t, p) = (zenith_deg.to_radians(), azimuth_deg.to_radians());
    let s = libm::sin(t);
    [s * libm::cos(p), s * libm::sin(p), libm::cos(t)]
}

/// Sample positions of a tabulated BRDF, in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrdfAxes {
    pub view_zenith: Vec<f64>,
    pub view_azimuth: Vec<f64>,
    pub illum_zenith: Vec<f64>,
    pub illum_azimuth: Vec<f64>,
}

impl BrdfAxes {
    fn dims(&self) -> [usize; 4] {
        [
            self.view_zenith.len(),
            self.view_azimuth.len(),
            self.illum_zenith.len(),
            self.illum_azimuth.len(),
        ]
    }

    fn validate(&self) -> Result<()> {
        let named = [
            ("view_zenith", &self.view_zenith, false),
            ("view_azimuth", &self.view_azimuth, true),
            ("illum_zenith", &self.illum_zenith, false),
            ("illum_azimuth", &self.illum_azimuth, true),
        ];
        for (name, axis, periodic) in named {
            if axis.is_empty() {
                return Err(Error::Brdf(format!("axis {} is empty", name)));
            }
            if axis.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Brdf(format!("axis {} is not strictly increasing", name)));
            }
            let (lo, hi) = if periodic { (0.0, 360.0) } else { (0.0, 90.0) };
            if axis.iter().any(|&a| !(a >= lo && a < hi || (!periodic && a == hi))) {
                return Err(Error::Brdf(format!("axis {} has values outside [{}, {})", name, lo, hi)));
            }
        }
        Ok(())
    }
}

/// Bracketing nodes and blend weight toward `hi`.
#[derive(Debug, Clone, Copy)]
struct Bracket {
    lo: usize,
    hi: usize,
    t: f64,
}

fn bracket_clamped(axis: &[f64], q: f64) -> Bracket {
    let last = axis.len() - 1;
    if q <= axis[0] {
        return Bracket { lo: 0, hi: 0, t: 0.0 };
    }
    if q >= axis[last] {
        return Bracket { lo: last, hi: last, t: 0.0 };
    }
    // axis[i] <= q < axis[i + 1]
    let i = axis.partition_point(|&a| a <= q) - 1;
    Bracket {
        lo: i,
        hi: i + 1,
        t: (q - axis[i]) / (axis[i + 1] - axis[i]),
    }
}

fn bracket_periodic(axis: &[f64], q: f64) -> Bracket {
    let last = axis.len() - 1;
    if last == 0 {
        return Bracket { lo: 0, hi: 0, t: 0.0 };
    }
    let q = normalize_azimuth(q);
    if q < axis[0] || q >= axis[last] {
        let span = axis[0] + 360.0 - axis[last];
        let offset = if q >= axis[last] { q - axis[last] } else { q + 360.0 - axis[last] };
        return Bracket { lo: last, hi: 0, t: offset / span };
    }
    let i = axis.partition_point(|&a| a <= q) - 1;
    Bracket {
        lo: i,
        hi: i + 1,
        t: (q - axis[i]) / (axis[i + 1] - axis[i]),
    }
}

/// Dense reflectance table over `(θv, φv, θi, φi, λ)`, θv slowest and λ fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedBrdf {
    pub axes: BrdfAxes,
    pub values: Vec<f32>,
}

impl TabulatedBrdf {
    pub fn expected_len(axes: &BrdfAxes, wavelengths: usize) -> usize {
        axes.dims().iter().product::<usize>() * wavelengths
    }

    fn index(&self, node: [usize; 4], wavelength: usize, wavelengths: usize) -> usize {
        let d = self.axes.dims();
        (((node[0] * d[1] + node[1]) * d[2] + node[2]) * d[3] + node[3]) * wavelengths + wavelength
    }

    fn sample(&self, angles: &AngleSample, wavelength: usize, wavelengths: usize) -> f64 {
        let brackets = [
            bracket_clamped(&self.axes.view_zenith, angles.view_zenith),
            bracket_periodic(&self.axes.view_azimuth, angles.view_azimuth),
            bracket_clamped(&self.axes.illum_zenith, angles.illum_zenith),
            bracket_periodic(&self.axes.illum_azimuth, angles.illum_azimuth),
        ];
        let mut acc = 0.0;
        for corner in 0..16usize {
            let mut weight = 1.0;
            let mut node = [0usize; 4];
            for (axis, b) in brackets.iter().enumerate() {
                if corner >> axis & 1 == 1 {
                    weight *= b.t;
                    node[axis] = b.hi;
                } else {
                    weight *= 1.0 - b.t;
                    node[axis] = b.lo;
                }
            }
            if weight != 0.0 {
                acc += weight * f64::from(self.values[self.index(node, wavelength, wavelengths)]);
            }
        }
        acc.max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BrdfModel {
    /// `f = albedo / pi`.
    Lambertian { albedo: Vec<f64> },
    /// Lambertian base plus a normalized Phong lobe around the mirror direction:
    /// `f = diffuse / pi + specular * (n + 2) / (2 pi) * max(0, cos α)^n`.
    Glossy {
        diffuse: Vec<f64>,
        specular: f64,
        exponent: f64,
    },
    Tabulated(TabulatedBrdf),
}

/// One dictionary material with its own spectral sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct BrdfEntry {
    pub name: String,
    /// Nanometers.
    pub wavelengths: Vec<f64>,
    pub model: BrdfModel,
}

impl BrdfEntry {
    pub fn lambertian(name: impl Into<String>, wavelengths: Vec<f64>, albedo: Vec<f64>) -> Self {
        BrdfEntry {
            name: name.into(),
            wavelengths,
            model: BrdfModel::Lambertian { albedo },
        }
    }

    pub fn glossy(
        name: impl Into<String>,
        wavelengths: Vec<f64>,
        diffuse: Vec<f64>,
        specular: f64,
        exponent: f64,
    ) -> Self {
        BrdfEntry {
            name: name.into(),
            wavelengths,
            model: BrdfModel::Glossy {
                diffuse,
                specular,
                exponent,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Brdf(format!("{}: {}", self.name, msg)));
        let n = self.wavelengths.len();
        if n == 0 {
            return err("no wavelengths".into());
        }
        let albedo_ok = |v: &[f64]| v.len() == n && v.iter().all(|a| (0.0..=1.0).contains(a));
        match &self.model {
            BrdfModel::Lambertian { albedo } => {
                if !albedo_ok(albedo) {
                    return err(format!("albedo needs {} values in [0, 1]", n));
                }
            }
            BrdfModel::Glossy {
                diffuse,
                specular,
                exponent,
            } => {
                if !albedo_ok(diffuse) {
                    return err(format!("diffuse albedo needs {} values in [0, 1]", n));
                }
                if !(*specular >= 0.0) || !specular.is_finite() {
                    return err("specular strength must be >= 0".into());
                }
                if !(*exponent >= 1.0) || !exponent.is_finite() {
                    return err("exponent must be >= 1".into());
                }
            }
            BrdfModel::Tabulated(table) => {
                table.axes.validate().or_else(|e| err(alloc::string::ToString::to_string(&e)))?;
                let expected = TabulatedBrdf::expected_len(&table.axes, n);
                if table.values.len() != expected {
                    return err(format!("table has {} values, expected {}", table.values.len(), expected));
                }
                if table.values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return err("table contains negative or non-finite values".into());
                }
            }
        }
        Ok(())
    }

    /// Reflectance factor at the given angles and spectral sample index.
    pub fn sample(&self, angles: &AngleSample, wavelength: usize) -> f64 {
        match &self.model {
            BrdfModel::Lambertian { albedo } => albedo[wavelength] / PI,
            BrdfModel::Glossy {
                diffuse,
                specular,
                exponent,
            } => {
                let l = direction(angles.illum_zenith, angles.illum_azimuth);
                let v = direction(angles.view_zenith, angles.view_azimuth);
                // mirror of the illumination direction about the surface normal
                let cos_alpha = -l[0] * v[0] - l[1] * v[1] + l[2] * v[2];
                let lobe = if cos_alpha > 0.0 {
                    specular * (exponent + 2.0) / (2.0 * PI) * libm::pow(cos_alpha, *exponent)
                } else {
                    0.0
                };
                diffuse[wavelength] / PI + lobe
            }
            BrdfModel::Tabulated(table) => table.sample(angles, wavelength, self.wavelengths.len()),
        }
    }
}

/// `rows[entry][band]` gives the spectral sample index of `entry` used for
/// image band `band`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandMap {
    pub rows: Vec<Vec<usize>>,
}

/// Forces `entry` to use spectral sample `index` for image band `band`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandOverride {
    pub entry: usize,
    pub band: usize,
    pub index: usize,
}

impl BandMap {
    /// Nearest wavelength per (entry, band); ties go to the lower index.
    pub fn nearest_wavelength(entries: &[BrdfEntry], band_wavelengths: &[f64], overrides: &[BandOverride]) -> Result<BandMap> {
        let mut rows: Vec<Vec<usize>> = entries
            .iter()
            .map(|e| {
                band_wavelengths
                    .iter()
                    .map(|&w| {
                        let mut best = 0;
                        for (i, &x) in e.wavelengths.iter().enumerate() {
                            if (x - w).abs() < (e.wavelengths[best] - w).abs() {
                                best = i;
                            }
                        }
                        best
                    })
                    .collect()
            })
            .collect();
        for o in overrides {
            let row = rows
                .get_mut(o.entry)
                .ok_or_else(|| Error::Brdf(format!("override names missing entry {}", o.entry)))?;
            let slot = row
                .get_mut(o.band)
                .ok_or_else(|| Error::Brdf(format!("override names missing band {}", o.band)))?;
            *slot = o.index;
        }
        Ok(BandMap { rows })
    }
}

/// Ordered set of reference materials.
#[derive(Debug, Clone, PartialEq)]
pub struct BrdfDictionary {
    pub entries: Vec<BrdfEntry>,
    pub band_map: BandMap,
}

impl BrdfDictionary {
    pub fn new(entries: Vec<BrdfEntry>, band_map: BandMap) -> Result<Self> {
        let dict = BrdfDictionary { entries, band_map };
        dict.validate()?;
        Ok(dict)
    }

    /// Builds the band map by nearest wavelength.
    pub fn for_bands(entries: Vec<BrdfEntry>, band_wavelengths: &[f64]) -> Result<Self> {
        let map = BandMap::nearest_wavelength(&entries, band_wavelengths, &[])?;
        BrdfDictionary::new(entries, map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Brdf("dictionary is empty".into()));
        }
        if self.band_map.rows.len() != self.entries.len() {
            return Err(Error::Brdf(format!(
                "band map has {} rows for {} entries",
                self.band_map.rows.len(),
                self.entries.len()
            )));
        }
        let bands = self.band_map.rows[0].len();
        for (k, (entry, row)) in self.entries.iter().zip(&self.band_map.rows).enumerate() {
            entry.validate()?;
            if row.len() != bands {
                return Err(Error::Brdf(format!("band map row {} has {} bands, expected {}", k, row.len(), bands)));
            }
            if let Some(band) = row.iter().position(|&w| w >= entry.wavelengths.len()) {
                return Err(Error::UnmappedBand { entry: k, band });
            }
        }
        Ok(())
    }

    pub fn dictionary_size(&self) -> usize {
        self.entries.len()
    }

    /// Number of image bands the band map covers.
    pub fn band_count(&self) -> usize {
        self.band_map.rows[0].len()
    }

    /// The map must be total over exactly `bands` image bands.
    pub fn check_bands(&self, bands: usize) -> Result<()> {
        if self.band_count() != bands {
            return Err(Error::UnmappedBand {
                entry: 0,
                band: self.band_count().min(bands),
            });
        }
        Ok(())
    }

    pub fn sample(&self, entry: usize, angles: &AngleSample, band: usize) -> Result<f64> {
        let wavelength = *self
            .band_map
            .rows
            .get(entry)
            .and_then(|r| r.get(band))
            .ok_or(Error::UnmappedBand { entry, band })?;
        Ok(self.entries[entry].sample(angles, wavelength))
    }

    pub fn sample_set(&self, entry: usize, angles: &[AngleSample], band: usize) -> Result<Vec<f64>> {
        angles.iter().map(|a| self.sample(entry, a, band)).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }
}
