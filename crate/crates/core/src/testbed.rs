//! The built-in benchmark: a seeded synthetic catalog plus a hidden-
//! distribution target domain, persisted in the documented file formats.
//!
//! Target ground truth (the config behind each target image) is written to a
//! separate truth file for test assertions only; the curation pipeline reads
//! just the image listing.

use crate::error::{Error, Result};
use crate::scenegen::{
    build_catalog, config_to_fields, derive_seed, read_ppm, sample_target_domain, write_ppm,
    AttributeConfig, AttributeSchema, DomainTag, Provenance, SceneImage, SceneRenderer, StyleShift,
    SyntheticCatalog, TargetDistribution,
};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

const CONFIG_SALT: u64 = 0xCF6;
const TARGET_SALT: u64 = 0x7A26;

/// Size and shape of a generated testbed.
#[derive(Debug, Clone)]
pub struct TestbedSpec {
    pub schema: AttributeSchema,
    pub width: u32,
    pub height: u32,
    pub catalog_configs: usize,
    pub images_per_config: usize,
    pub target_images: usize,
    /// Concentration of the hidden per-dimension target distributions.
    pub peak_mass: f64,
    pub style_shift: StyleShift,
    pub seed: u64,
}

impl Default for TestbedSpec {
    fn default() -> Self {
        TestbedSpec {
            schema: AttributeSchema::default_person(),
            width: 64,
            height: 128,
            catalog_configs: 200,
            images_per_config: 50,
            target_images: 1000,
            peak_mass: 0.65,
            style_shift: StyleShift {
                gamma: 1.25,
                channel_bias: [10.0, -6.0, 4.0],
            },
            seed: 42,
        }
    }
}

/// A generated testbed with everything loaded.
pub struct Testbed {
    pub schema: AttributeSchema,
    pub renderer: SceneRenderer,
    pub catalog: SyntheticCatalog,
    pub target: Vec<SceneImage>,
    pub distribution: TargetDistribution,
}

/// Samples `count` distinct configs uniformly from the schema's space.
pub fn sample_distinct_configs(
    schema: &AttributeSchema,
    count: usize,
    seed: u64,
) -> Result<Vec<AttributeConfig>> {
    if (count as u128) > schema.config_space_size() {
        return Err(Error::InvalidArgument(format!(
            "{count} distinct configs requested from a space of {}",
            schema.config_space_size()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, CONFIG_SALT));
    let mut seen = std::collections::HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let values: Vec<u32> = schema
            .dimensions()
            .iter()
            .map(|d| (rng.next_u64() % d.cardinality as u64) as u32)
            .collect();
        let cfg = AttributeConfig::new(values);
        if seen.insert(cfg.clone()) {
            out.push(cfg);
        }
    }
    Ok(out)
}

/// Generates and persists a testbed under `root`:
/// `schema.json`, `catalog.jsonl` + `images/`, `target.jsonl` + `target/`,
/// and `target_truth.jsonl` (ground truth, never read by the pipeline).
pub fn generate(spec: &TestbedSpec, root: &Path) -> Result<Testbed> {
    if !(0.0..=1.0).contains(&spec.peak_mass) {
        return Err(Error::InvalidArgument(format!(
            "peak mass {} outside [0, 1]",
            spec.peak_mass
        )));
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let renderer = SceneRenderer::new(spec.schema.clone(), spec.width, spec.height)?;

    spec.schema.save(&root.join("schema.json"))?;

    let configs = sample_distinct_configs(&spec.schema, spec.catalog_configs, spec.seed)?;
    let catalog = build_catalog(
        &renderer,
        &configs,
        spec.images_per_config,
        spec.seed,
        root,
        "images",
    )?;
    catalog.save_jsonl(&root.join("catalog.jsonl"), &spec.schema)?;

    let distribution = TargetDistribution::seeded_peaked(
        &spec.schema,
        spec.seed,
        spec.peak_mass,
        spec.style_shift.clone(),
    )?;
    let target = sample_target_domain(
        &renderer,
        &distribution,
        spec.target_images,
        derive_seed(spec.seed, TARGET_SALT),
    )?;

    let target_dir = root.join("target");
    std::fs::create_dir_all(&target_dir).map_err(|e| Error::io(&target_dir, e))?;
    let listing = std::fs::File::create(root.join("target.jsonl"))
        .map_err(|e| Error::io(root.join("target.jsonl"), e))?;
    let truth = std::fs::File::create(root.join("target_truth.jsonl"))
        .map_err(|e| Error::io(root.join("target_truth.jsonl"), e))?;
    let mut listing = BufWriter::new(listing);
    let mut truth = BufWriter::new(truth);
    for (i, img) in target.iter().enumerate() {
        let rel = format!("target/t{i:05}.ppm");
        write_ppm(&root.join(&rel), img)?;
        let line = serde_json::json!({"path": rel, "identity": img.provenance.identity});
        writeln!(listing, "{line}").map_err(|e| Error::io(root, e))?;
        let mut fields = config_to_fields(
            img.provenance.config.as_ref().expect("target renders carry configs"),
            &spec.schema,
        );
        fields.insert("path".into(), serde_json::Value::String(rel));
        fields.insert(
            "identity".into(),
            serde_json::Value::from(img.provenance.identity),
        );
        writeln!(truth, "{}", serde_json::Value::Object(fields)).map_err(|e| Error::io(root, e))?;
    }
    listing.flush().map_err(|e| Error::io(root, e))?;
    truth.flush().map_err(|e| Error::io(root, e))?;

    Ok(Testbed {
        schema: spec.schema.clone(),
        renderer,
        catalog,
        target,
        distribution,
    })
}

/// Loads a persisted target listing. The pipeline-facing provenance carries
/// no config (ground truth stays in the separate truth file).
pub fn load_target(listing_path: &Path) -> Result<Vec<SceneImage>> {
    let root = listing_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let file = std::fs::File::open(listing_path).map_err(|e| Error::io(listing_path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(listing_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", listing_path.display(), lineno + 1)))?;
        let path = v
            .get("path")
            .and_then(|x| x.as_str())
            .ok_or_else(|| Error::Parse("target record missing `path`".into()))?;
        let identity = v.get("identity").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
        out.push(read_ppm(
            &root.join(path),
            Provenance {
                config: None,
                identity,
                domain: DomainTag::Target,
            },
        )?);
    }
    if out.is_empty() {
        return Err(Error::Parse(format!(
            "{}: no target images listed",
            listing_path.display()
        )));
    }
    Ok(out)
}
