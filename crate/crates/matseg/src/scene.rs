//! Scene description files for `synth`.
//!
//! A scene file is a [`SceneSpec`] in JSON where a few fields may be given
//! in shorthand:
//!
//! ```json
//! {
//!   "width": 64, "height": 64,
//!   "material_map": {"block": 8, "seed": 3},
//!   "views": {"orbit": 15},
//!   "noise": {"gaussian_sigma": [0.02, 0.02, 0.02, 0.02, 0.02, 0.02, 0.02, 0.02]},
//!   "rng_seed": 7
//! }
//! ```
//!
//! `bands` defaults to the WorldView-3 VNIR table.

use matseg_core::brdf::BrdfDictionary;
use matseg_core::imagery::{BandSpec, ViewGeometry};
use matseg_core::synth::{block_material_map, default_bands, orbit_views, NoiseSpec, SceneSpec};
use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaterialMapSource {
    Explicit(Vec<u8>),
    Blocks { block: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ViewSource {
    Explicit(Vec<ViewGeometry>),
    Orbit { orbit: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    #[serde(default)]
    pub region_id: Option<String>,
    pub width: usize,
    pub height: usize,
    pub material_map: MaterialMapSource,
    pub views: ViewSource,
    #[serde(default)]
    pub bands: Option<Vec<BandSpec>>,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub rng_seed: u64,
}

impl SceneFile {
    /// Expands shorthand fields; block maps draw from the dictionary's entries.
    pub fn into_spec(self, dict: &BrdfDictionary) -> Result<SceneSpec> {
        let material_map = match self.material_map {
            MaterialMapSource::Explicit(m) => m,
            MaterialMapSource::Blocks { block, seed } => {
                block_material_map(self.width, self.height, block, dict.dictionary_size(), seed)?
            }
        };
        let views = match self.views {
            ViewSource::Explicit(v) => v,
            ViewSource::Orbit { orbit } => orbit_views(orbit),
        };
        Ok(SceneSpec {
            region_id: self.region_id.unwrap_or_else(|| "synthetic".into()),
            width: self.width,
            height: self.height,
            material_map,
            views,
            bands: self.bands.unwrap_or_else(default_bands),
            noise: self.noise,
            rng_seed: self.rng_seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use matseg_core::synth::default_dictionary;

    #[test]
    fn shorthand_expands() {
        let f: SceneFile = serde_json::from_str(
            r#"{"width": 16, "height": 8, "material_map": {"block": 4, "seed": 1},
                "views": {"orbit": 6}, "rng_seed": 2}"#,
        )
        .unwrap();
        let spec = f.into_spec(&default_dictionary().unwrap()).unwrap();
        assert_eq!(spec.material_map.len(), 128);
        assert_eq!(spec.views.len(), 6);
        assert_eq!(spec.bands.len(), 8);
        assert!(spec.noise.gaussian_sigma.is_empty());
    }

    #[test]
    fn explicit_map_is_kept() {
        let f: SceneFile = serde_json::from_str(
            r#"{"width": 2, "height": 1, "material_map": [3, 1], "views": {"orbit": 1}, "rng_seed": 0}"#,
        )
        .unwrap();
        let spec = f.into_spec(&default_dictionary().unwrap()).unwrap();
        assert_eq!(spec.material_map, vec![3, 1]);
    }
}
