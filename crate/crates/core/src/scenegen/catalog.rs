//! Catalog construction and line-delimited JSON persistence.

use super::{ppm, AttributeConfig, AttributeSchema, DomainTag, Provenance, SceneImage, SceneRenderer};
use crate::error::{Error, Result};
use rayon::prelude::*;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Reference scale of the full production catalog this testbed stands in
/// for: 1,150 identities with 1,764 (49 x 36) images each.
pub const REFERENCE_IDENTITIES: u64 = 1_150;
pub const REFERENCE_IMAGES_PER_IDENTITY: u64 = 1_764;
pub const REFERENCE_TOTAL_IMAGES: u64 = REFERENCE_IDENTITIES * REFERENCE_IMAGES_PER_IDENTITY;

/// One persisted image with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogRecord {
    /// Path relative to the catalog root.
    pub path: PathBuf,
    pub identity: u32,
    pub config: AttributeConfig,
}

/// The labeled synthetic pool: records plus the root they resolve against.
#[derive(Debug, Clone)]
pub struct SyntheticCatalog {
    root: PathBuf,
    records: Vec<CatalogRecord>,
}

impl SyntheticCatalog {
    pub fn new(root: PathBuf, records: Vec<CatalogRecord>) -> Self {
        SyntheticCatalog { root, records }
    }

    pub fn records(&self) -> &[CatalogRecord] {
        &self.records
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct configs in first-appearance order.
    pub fn distinct_configs(&self) -> Vec<AttributeConfig> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.config.clone()) {
                out.push(r.config.clone());
            }
        }
        out
    }

    pub fn load_image(&self, record: &CatalogRecord) -> Result<SceneImage> {
        ppm::read_ppm(
            &self.root.join(&record.path),
            Provenance {
                config: Some(record.config.clone()),
                identity: record.identity,
                domain: DomainTag::Synthetic,
            },
        )
    }

    /// Writes one JSON object per line: `path`, `identity`, and one integer
    /// field per schema dimension name.
    pub fn save_jsonl(&self, path: &Path, schema: &AttributeSchema) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            let line = record_to_json(r, schema);
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_jsonl(path: &Path, schema: &AttributeSchema) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut records = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record = record_from_json(&line, schema).map_err(|e| {
                Error::Parse(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            schema.validate_config(&record.config)?;
            records.push(record);
        }
        Ok(SyntheticCatalog { root, records })
    }
}

pub(crate) fn record_to_json(r: &CatalogRecord, schema: &AttributeSchema) -> String {
    let mut obj = serde_json::Map::new();
    obj.insert(
        "path".into(),
        serde_json::Value::String(r.path.to_string_lossy().into_owned()),
    );
    obj.insert("identity".into(), serde_json::Value::from(r.identity));
    for (d, v) in schema.dimensions().iter().zip(r.config.values()) {
        obj.insert(d.name.clone(), serde_json::Value::from(*v));
    }
    serde_json::Value::Object(obj).to_string()
}

pub(crate) fn record_from_json(line: &str, schema: &AttributeSchema) -> Result<CatalogRecord> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| Error::Parse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Parse("record is not a JSON object".into()))?;
    let path = obj
        .get("path")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Parse("missing `path`".into()))?;
    let identity = obj
        .get("identity")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Parse("missing `identity`".into()))? as u32;
    let mut values = Vec::with_capacity(schema.len());
    for d in schema.dimensions() {
        let v = obj
            .get(&d.name)
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse(format!("missing dimension `{}`", d.name)))?;
        values.push(v as u32);
    }
    Ok(CatalogRecord {
        path: PathBuf::from(path),
        identity,
        config: AttributeConfig::new(values),
    })
}

/// Renders `images_per_config` images for every config and persists them
/// under `image_dir` (relative paths go into the records). Identities are
/// assigned round-robin from a pool of `images_per_config` identities, so
/// each config is covered by the same identity set.
pub fn build_catalog(
    renderer: &SceneRenderer,
    configs: &[AttributeConfig],
    images_per_config: usize,
    seed: u64,
    root: &Path,
    image_subdir: &str,
) -> Result<SyntheticCatalog> {
    if images_per_config == 0 {
        return Err(Error::InvalidArgument("images_per_config must be >= 1".into()));
    }
    for c in configs {
        renderer.schema().validate_config(c)?;
    }
    let image_dir = root.join(image_subdir);
    std::fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;

    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|i| (0..images_per_config).map(move |j| (i, j)))
        .collect();
    let records: Vec<CatalogRecord> = jobs
        .par_iter()
        .map(|&(i, j)| -> Result<CatalogRecord> {
            let identity = j as u32;
            let img = renderer.render(&configs[i], identity, seed)?;
            let rel = PathBuf::from(image_subdir).join(format!("cfg{i:05}_id{j:04}.ppm"));
            ppm::write_ppm(&root.join(&rel), &img)?;
            Ok(CatalogRecord {
                path: rel,
                identity,
                config: configs[i].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SyntheticCatalog {
        root: root.to_path_buf(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_scale_arithmetic() {
        assert_eq!(REFERENCE_TOTAL_IMAGES, 2_028_600);
    }

    #[test]
    fn catalog_counts_and_round_robin() {
        let schema = AttributeSchema::default_person();
        let renderer = SceneRenderer::new(schema.clone(), 16, 16).unwrap();
        let configs: Vec<AttributeConfig> = (0..10u32)
            .map(|i| {
                let mut v = vec![0u32; schema.len()];
                v[0] = i;
                AttributeConfig::new(v)
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let cat = build_catalog(&renderer, &configs, 5, 7, dir.path(), "images").unwrap();
        assert_eq!(cat.len(), 50);
        for (idx, r) in cat.records().iter().enumerate() {
            assert_eq!(r.identity, (idx % 5) as u32);
        }
        assert_eq!(cat.distinct_configs().len(), 10);
    }

    #[test]
    fn catalog_is_reproducible() {
        let schema = AttributeSchema::default_person();
        let renderer = SceneRenderer::new(schema.clone(), 16, 16).unwrap();
        let configs = vec![AttributeConfig::new(vec![0; schema.len()])];
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let c1 = build_catalog(&renderer, &configs, 3, 9, d1.path(), "img").unwrap();
        let c2 = build_catalog(&renderer, &configs, 3, 9, d2.path(), "img").unwrap();
        assert_eq!(c1.records(), c2.records());
        for (a, b) in c1.records().iter().zip(c2.records()) {
            let ia = c1.load_image(a).unwrap();
            let ib = c2.load_image(b).unwrap();
            assert_eq!(ia.rgb, ib.rgb);
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let schema = AttributeSchema::default_person();
        let renderer = SceneRenderer::new(schema.clone(), 16, 16).unwrap();
        let configs = vec![AttributeConfig::new(vec![0; schema.len()])];
        let dir = tempfile::tempdir().unwrap();
        let cat = build_catalog(&renderer, &configs, 2, 1, dir.path(), "img").unwrap();
        let jsonl = dir.path().join("catalog.jsonl");
        cat.save_jsonl(&jsonl, &schema).unwrap();
        let back = SyntheticCatalog::load_jsonl(&jsonl, &schema).unwrap();
        assert_eq!(back.records(), cat.records());
        // first line carries every dimension name
        let text = std::fs::read_to_string(&jsonl).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(first.get("viewpoint").is_some());
        assert!(first.get("boots").is_some());
        assert!(first.get("path").is_some());
        assert!(first.get("identity").is_some());
    }

    #[test]
    fn load_rejects_invalid_config_values() {
        let schema = AttributeSchema::default_person();
        let dir = tempfile::tempdir().unwrap();
        let jsonl = dir.path().join("catalog.jsonl");
        let mut rec = String::from("{\"path\":\"x.ppm\",\"identity\":0");
        for d in schema.dimensions() {
            let v = if d.name == "weather" { 99 } else { 0 };
            rec.push_str(&format!(",\"{}\":{}", d.name, v));
        }
        rec.push('}');
        std::fs::write(&jsonl, rec).unwrap();
        assert!(SyntheticCatalog::load_jsonl(&jsonl, &schema).is_err());
    }
}
