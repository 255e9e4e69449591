//! Procedural generation of attribute-parameterized person-scene images.
//!
//! The generator stands in for a game-engine data source at desk scale: every
//! image is a pure function of (attribute config, identity, seed), so the
//! whole testbed is bit-reproducible. A [`TargetDistribution`] plays the role
//! of an unlabeled real-world domain: configs drawn from hidden per-dimension
//! distributions, rendered, then pushed through a fixed photometric shift.

mod catalog;
mod ppm;
mod render;
mod target;

pub use catalog::{
    build_catalog, CatalogRecord, SyntheticCatalog, REFERENCE_IDENTITIES,
    REFERENCE_IMAGES_PER_IDENTITY, REFERENCE_TOTAL_IMAGES,
};
pub use ppm::{read_ppm, write_ppm};
pub use render::SceneRenderer;
pub use target::{sample_target_domain, StyleShift, TargetDistribution};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// How a dimension's integer values relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttrKind {
    #[serde(rename = "categorical")]
    Categorical,
    /// Values are evenly spaced angles on a circle (bin b at b·360°/cardinality).
    #[serde(rename = "circular")]
    Circular,
    #[serde(rename = "binary-flag")]
    BinaryFlag,
}

/// One attribute dimension: a name, how many values it takes, and its kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub cardinality: usize,
    pub kind: AttrKind,
}

impl Dimension {
    pub fn new(name: &str, cardinality: usize, kind: AttrKind) -> Self {
        Dimension {
            name: name.to_string(),
            cardinality,
            kind,
        }
    }
}

/// Ordered list of attribute dimensions defining the config space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeSchema {
    dimensions: Vec<Dimension>,
}

/// Names of the 13 identity-level binary attributes in the default schema.
pub const ID_FLAG_NAMES: [&str; 13] = [
    "female",
    "long_hair",
    "hat",
    "glasses",
    "backpack",
    "shoulder_bag",
    "handbag",
    "short_sleeves",
    "long_lower",
    "dress",
    "jacket",
    "shorts",
    "boots",
];

impl AttributeSchema {
    /// Builds a schema, rejecting cardinalities below 2, duplicate names, and
    /// binary flags whose cardinality is not exactly 2.
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self> {
        if dimensions.is_empty() {
            return Err(Error::Schema("schema has no dimensions".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for d in &dimensions {
            if d.cardinality < 2 {
                return Err(Error::Schema(format!(
                    "dimension `{}` has cardinality {}, minimum is 2",
                    d.name, d.cardinality
                )));
            }
            if d.kind == AttrKind::BinaryFlag && d.cardinality != 2 {
                return Err(Error::Schema(format!(
                    "binary flag `{}` must have cardinality 2, got {}",
                    d.name, d.cardinality
                )));
            }
            if !seen.insert(d.name.clone()) {
                return Err(Error::Schema(format!("duplicate dimension name `{}`", d.name)));
            }
        }
        Ok(AttributeSchema { dimensions })
    }

    /// The default person-scene schema: viewpoint (36 circular bins at 10°),
    /// weather (7), illumination (7), background (9), plus 13 identity-level
    /// binary flags.
    pub fn default_person() -> Self {
        let mut dims = vec![
            Dimension::new("viewpoint", 36, AttrKind::Circular),
            Dimension::new("weather", 7, AttrKind::Categorical),
            Dimension::new("illumination", 7, AttrKind::Categorical),
            Dimension::new("background", 9, AttrKind::Categorical),
        ];
        for name in ID_FLAG_NAMES {
            dims.push(Dimension::new(name, 2, AttrKind::BinaryFlag));
        }
        AttributeSchema { dimensions: dims }
    }

    pub fn dimensions(&self) -> &[Dimension] {
        &self.dimensions
    }

    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.dimensions.iter().position(|d| d.name == name)
    }

    /// Number of distinct configs, saturating at `u128::MAX`.
    pub fn config_space_size(&self) -> u128 {
        self.dimensions
            .iter()
            .fold(1u128, |acc, d| acc.saturating_mul(d.cardinality as u128))
    }

    pub fn validate_config(&self, config: &AttributeConfig) -> Result<()> {
        if config.values.len() != self.dimensions.len() {
            return Err(Error::Schema(format!(
                "config has {} values, schema has {} dimensions",
                config.values.len(),
                self.dimensions.len()
            )));
        }
        for (v, d) in config.values.iter().zip(&self.dimensions) {
            if *v as usize >= d.cardinality {
                return Err(Error::Schema(format!(
                    "value {} out of range for dimension `{}` (cardinality {})",
                    v, d.name, d.cardinality
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.dimensions).expect("schema serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dims: Vec<Dimension> =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("schema json: {e}")))?;
        AttributeSchema::new(dims)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// One assignment over the schema dimensions: a value index per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeConfig {
    values: Vec<u32>,
}

impl AttributeConfig {
    pub fn new(values: Vec<u32>) -> Self {
        AttributeConfig { values }
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn value(&self, dim: usize) -> u32 {
        self.values[dim]
    }

    /// Fraction of dimensions on which two configs agree.
    pub fn similarity(&self, other: &AttributeConfig) -> f64 {
        if self.values.is_empty() || self.values.len() != other.values.len() {
            return 0.0;
        }
        let matching = self
            .values
            .iter()
            .zip(&other.values)
            .filter(|(a, b)| a == b)
            .count();
        matching as f64 / self.values.len() as f64
    }
}

/// Which side of the domain gap an image belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainTag {
    Synthetic,
    Target,
}

/// Where an image came from. Target-domain configs are recorded as testbed
/// ground truth only; the curation pipeline never reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub config: Option<AttributeConfig>,
    pub identity: u32,
    pub domain: DomainTag,
}

/// An 8-bit RGB image with provenance, row-major `[r g b, r g b, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
    pub provenance: Provenance,
}

impl SceneImage {
    pub fn new(width: u32, height: u32, rgb: Vec<u8>, provenance: Provenance) -> Result<Self> {
        if rgb.len() != (width as usize) * (height as usize) * 3 {
            return Err(Error::Shape(format!(
                "rgb buffer has {} bytes, expected {}",
                rgb.len(),
                width * height * 3
            )));
        }
        Ok(SceneImage {
            width,
            height,
            rgb,
            provenance,
        })
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Mean of the Rec. 601 luma over all pixels, in [0, 255].
    pub fn mean_luminance(&self) -> f64 {
        let mut sum = 0.0f64;
        for px in self.rgb.chunks_exact(3) {
            sum += 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
        }
        sum / (self.width as f64 * self.height as f64)
    }
}

/// Writes a config as named JSON fields, one integer per dimension name.
pub fn config_to_fields(
    config: &AttributeConfig,
    schema: &AttributeSchema,
) -> serde_json::Map<String, serde_json::Value> {
    let mut obj = serde_json::Map::new();
    for (d, v) in schema.dimensions().iter().zip(config.values()) {
        obj.insert(d.name.clone(), serde_json::Value::from(*v));
    }
    obj
}

/// Reads a config from named JSON fields; every dimension must be present.
pub fn config_from_fields(
    obj: &serde_json::Map<String, serde_json::Value>,
    schema: &AttributeSchema,
) -> Result<AttributeConfig> {
    let mut values = Vec::with_capacity(schema.len());
    for d in schema.dimensions() {
        let v = obj
            .get(&d.name)
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse(format!("missing dimension `{}`", d.name)))?;
        values.push(v as u32);
    }
    let config = AttributeConfig::new(values);
    schema.validate_config(&config)?;
    Ok(config)
}

/// Splitmix64 step, used to derive independent seeds from a base seed.
pub(crate) fn mix_seed(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a salt.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    mix_seed(base ^ mix_seed(salt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_matches_expected_dimensions() {
        let s = AttributeSchema::default_person();
        assert_eq!(s.len(), 17);
        let d = s.dimensions();
        assert_eq!((d[0].name.as_str(), d[0].cardinality, d[0].kind), ("viewpoint", 36, AttrKind::Circular));
        assert_eq!((d[1].name.as_str(), d[1].cardinality), ("weather", 7));
        assert_eq!((d[2].name.as_str(), d[2].cardinality), ("illumination", 7));
        assert_eq!((d[3].name.as_str(), d[3].cardinality), ("background", 9));
        for (i, name) in ID_FLAG_NAMES.iter().enumerate() {
            assert_eq!(d[4 + i].name, *name);
            assert_eq!(d[4 + i].cardinality, 2);
            assert_eq!(d[4 + i].kind, AttrKind::BinaryFlag);
        }
    }

    #[test]
    fn schema_rejects_small_cardinality() {
        let err = AttributeSchema::new(vec![Dimension::new("x", 1, AttrKind::Categorical)]);
        assert!(err.is_err());
    }

    #[test]
    fn schema_rejects_duplicate_names() {
        let err = AttributeSchema::new(vec![
            Dimension::new("x", 3, AttrKind::Categorical),
            Dimension::new("x", 4, AttrKind::Categorical),
        ]);
        assert!(err.is_err());
    }

    #[test]
    fn config_validation_bounds() {
        let s = AttributeSchema::default_person();
        let mut values = vec![0u32; 17];
        values[0] = 35;
        assert!(s.validate_config(&AttributeConfig::new(values.clone())).is_ok());
        values[0] = 36;
        assert!(s.validate_config(&AttributeConfig::new(values)).is_err());
    }

    #[test]
    fn schema_json_round_trip() {
        let s = AttributeSchema::default_person();
        let back = AttributeSchema::from_json(&s.to_json()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn similarity_counts_matching_dimensions() {
        let a = AttributeConfig::new(vec![1, 2, 3, 4]);
        let b = AttributeConfig::new(vec![1, 2, 0, 0]);
        assert_eq!(a.similarity(&b), 0.5);
        assert_eq!(a.similarity(&a), 1.0);
    }

    #[test]
    fn config_space_size_default_schema() {
        let s = AttributeSchema::default_person();
        // 36 * 7 * 7 * 9 * 2^13
        assert_eq!(s.config_space_size(), 36u128 * 7 * 7 * 9 * (1 << 13));
    }
}
