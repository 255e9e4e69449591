//! Orchestration of the two-stage curation pipeline: attribute optimization
//! (distances -> surrogate -> swarm search), budgeted subset selection,
//! deterministic style transfer, and the per-regulation gap report.
//!
//! Everything downstream of the inputs is a pure function of the run seed;
//! parallel sections fold per-item subtotals in a fixed order so results are
//! independent of the thread count.

use crate::distances::{content_distance, style_from_grams, total_distance, DistanceParams, DistanceReport};
use crate::error::{Error, Result};
use crate::features::{gram, Extractor, FeaturePyramid, GramMatrix};
use crate::metrics::{evaluate_regulations, DomainGapReport};
use crate::optimizer::{relaxed_bounds, search_attributes, SearchedConfig, SwarmParams};
use crate::scenegen::{
    config_from_fields, config_to_fields, derive_seed, read_ppm, write_ppm, AttributeConfig,
    AttributeSchema, DomainTag, Provenance, SceneImage, SceneRenderer, SyntheticCatalog,
};
use crate::surrogate::{BoostedEnsemble, SurrogateParams};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::{BufRead, BufWriter, Write as IoWrite};
use std::path::{Path, PathBuf};

/// Reference scale of a production selection (boxes kept out of the full
/// catalog); a documentation constant, not a testbed size.
pub const REFERENCE_SELECTED_IMAGES: u64 = 124_200;

const REF_SALT: u64 = 0x5EF5;
const PSO_SALT: u64 = 0x9050;
const EXTRA_SALT: u64 = 0xE87A;
const RANDOM_SALT: u64 = 0x7A9D;

/// Swarm coefficients without bounds/seed; those are derived per run.
#[derive(Debug, Clone, PartialEq)]
pub struct PsoSettings {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
}

impl Default for PsoSettings {
    fn default() -> Self {
        PsoSettings {
            particles: 30,
            iterations: 200,
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
        }
    }
}

impl PsoSettings {
    pub fn materialize(&self, schema: &AttributeSchema, seed: u64) -> SwarmParams {
        SwarmParams {
            particles: self.particles,
            iterations: self.iterations,
            inertia: self.inertia,
            cognitive: self.cognitive,
            social: self.social,
            bounds: relaxed_bounds(schema),
            seed,
        }
    }
}

/// Everything a full run needs beyond the catalog and target inputs.
#[derive(Debug, Clone)]
pub struct AostParams {
    pub distance: DistanceParams,
    pub surrogate: SurrogateParams,
    pub pso: PsoSettings,
    /// Total images to select.
    pub budget: usize,
    pub images_per_config: usize,
    /// Optimization rounds n; each round reseeds the swarm search and the
    /// plan is kept only if its mean predicted distance improves.
    pub rounds: usize,
    /// Size of the fixed seeded target reference subset for distances.
    pub ref_subset_size: usize,
    /// Diversity penalty weight; `None` selects 0.1x the observed target
    /// range of the surrogate's training signal.
    pub diversity_weight: Option<f64>,
    pub seed: u64,
}

impl Default for AostParams {
    fn default() -> Self {
        AostParams {
            distance: DistanceParams::default(),
            surrogate: SurrogateParams::default(),
            pso: PsoSettings::default(),
            budget: 1000,
            images_per_config: 50,
            rounds: 1,
            ref_subset_size: 32,
            diversity_weight: None,
            seed: 42,
        }
    }
}

impl AostParams {
    pub fn validate(&self) -> Result<()> {
        self.distance.validate()?;
        self.surrogate.validate()?;
        if self.images_per_config == 0 {
            return Err(Error::InvalidArgument("images_per_config must be >= 1".into()));
        }
        if self.budget < self.images_per_config {
            return Err(Error::InvalidArgument(format!(
                "budget {} below images_per_config {}",
                self.budget, self.images_per_config
            )));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("rounds must be >= 1".into()));
        }
        if self.ref_subset_size == 0 {
            return Err(Error::InvalidArgument("reference subset size must be >= 1".into()));
        }
        if let Some(w) = self.diversity_weight {
            if w < 0.0 || !w.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "diversity weight {w} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }

    /// Number of configs to search for: `ceil(budget / images_per_config)`.
    pub fn config_count(&self) -> usize {
        self.budget.div_ceil(self.images_per_config)
    }
}

/// Seeded sample of `count` distinct indices out of `total` (partial
/// Fisher-Yates, draw order preserved).
pub fn choose_reference_indices(total: usize, count: usize, seed: u64) -> Vec<usize> {
    let count = count.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, REF_SALT));
    let mut pool: Vec<usize> = (0..total).collect();
    for i in 0..count {
        let j = i + (rng.next_u64() % (total - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}

/// Per-distinct-config distance reports plus the reference indices used.
#[derive(Debug, Clone)]
pub struct ConfigDistanceTable {
    pub entries: Vec<(AttributeConfig, DistanceReport)>,
    pub ref_indices: Vec<usize>,
}

impl ConfigDistanceTable {
    /// Observed range (min, max) of the total distances.
    pub fn target_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (_, r) in &self.entries {
            lo = lo.min(r.d_total);
            hi = hi.max(r.d_total);
        }
        (lo, hi)
    }

    /// CSV rows: one column per dimension name, then the three distances.
    pub fn to_csv(&self, schema: &AttributeSchema) -> String {
        let mut s = String::new();
        for d in schema.dimensions() {
            s.push_str(&d.name);
            s.push(',');
        }
        s.push_str("d_style,d_content,d_total\n");
        for (c, r) in &self.entries {
            for v in c.values() {
                s.push_str(&format!("{v},"));
            }
            s.push_str(&format!("{},{},{}\n", r.d_style, r.d_content, r.d_total));
        }
        s
    }

    pub fn from_csv(text: &str, schema: &AttributeSchema) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty distance table".into()))?;
        let mut expected: Vec<String> = schema.dimensions().iter().map(|d| d.name.clone()).collect();
        expected.extend(["d_style".into(), "d_content".into(), "d_total".into()]);
        if header.split(',').map(str::trim).ne(expected.iter().map(String::as_str)) {
            return Err(Error::Parse(format!("unexpected distance table header `{header}`")));
        }
        let mut entries = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != schema.len() + 3 {
                return Err(Error::Parse(format!("bad distance row `{line}`")));
            }
            let values = parts[..schema.len()]
                .iter()
                .map(|p| p.trim().parse::<u32>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let nums = parts[schema.len()..]
                .iter()
                .map(|p| p.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let config = AttributeConfig::new(values);
            schema.validate_config(&config)?;
            entries.push((
                config,
                DistanceReport {
                    d_style: nums[0],
                    d_content: nums[1],
                    d_total: nums[2],
                },
            ));
        }
        Ok(ConfigDistanceTable {
            entries,
            ref_indices: Vec::new(),
        })
    }
}

/// Extracts features for the catalog and the seeded target reference subset
/// and computes the pairwise-mean distance report per distinct config
/// (synthetic-major pair order, per-image subtotals folded in record order).
pub fn compute_config_distances(
    catalog: &SyntheticCatalog,
    target: &[SceneImage],
    extractor: &Extractor,
    params: &DistanceParams,
    ref_subset_size: usize,
    seed: u64,
) -> Result<ConfigDistanceTable> {
    params.validate()?;
    if catalog.is_empty() {
        return Err(Error::InvalidArgument("catalog is empty".into()));
    }
    if target.len() < ref_subset_size {
        return Err(Error::InvalidArgument(format!(
            "{} target images but reference subset needs {ref_subset_size}",
            target.len()
        )));
    }
    let ref_indices = choose_reference_indices(target.len(), ref_subset_size, seed);
    let refs: Vec<FeaturePyramid> = ref_indices
        .par_iter()
        .map(|&i| extractor.extract(&target[i]))
        .collect::<Result<Vec<_>>>()?;
    let content_layer = params.content_layer;
    if content_layer >= refs[0].layers() {
        return Err(Error::Shape(format!(
            "content layer {content_layer} out of range for {} layers",
            refs[0].layers()
        )));
    }
    let ref_grams: Vec<Vec<GramMatrix>> = refs
        .iter()
        .map(|r| r.maps().iter().map(gram).collect())
        .collect();
    let weights = refs[0].weights().to_vec();
    let positions: Vec<usize> = refs[0].maps().iter().map(|m| m.positions).collect();

    // group records by distinct config, first-appearance order
    let mut order: Vec<AttributeConfig> = Vec::new();
    let mut groups: std::collections::HashMap<AttributeConfig, Vec<usize>> =
        std::collections::HashMap::new();
    for (i, r) in catalog.records().iter().enumerate() {
        groups
            .entry(r.config.clone())
            .or_insert_with(|| {
                order.push(r.config.clone());
                Vec::new()
            })
            .push(i);
    }

    let mut entries = Vec::with_capacity(order.len());
    for config in order {
        let record_ids = &groups[&config];
        let subtotals: Vec<(f64, f64)> = record_ids
            .par_iter()
            .map(|&i| -> Result<(f64, f64)> {
                let img = catalog.load_image(&catalog.records()[i])?;
                let pyr = extractor.extract(&img)?;
                let grams: Vec<GramMatrix> = pyr.maps().iter().map(gram).collect();
                let content = pyr.map(content_layer);
                let mut style_sub = 0.0f64;
                let mut content_sub = 0.0f64;
                for (rg, r) in ref_grams.iter().zip(&refs) {
                    style_sub += style_from_grams(&grams, rg, &weights, positions.clone())?;
                    content_sub += content_distance(content, r.map(content_layer))?;
                }
                Ok((style_sub, content_sub))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut style_sum = 0.0f64;
        let mut content_sum = 0.0f64;
        for (s, c) in subtotals {
            style_sum += s;
            content_sum += c;
        }
        let pairs = (record_ids.len() * refs.len()) as f64;
        let d_style = style_sum / pairs;
        let d_content = content_sum / pairs;
        entries.push((
            config,
            DistanceReport {
                d_style,
                d_content,
                d_total: total_distance(d_style, d_content, params),
            },
        ));
    }

    Ok(ConfigDistanceTable {
        entries,
        ref_indices,
    })
}

/// The optimized attribute set with per-config predictions and the budget.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPlan {
    pub configs: Vec<AttributeConfig>,
    pub predicted: Vec<f64>,
    pub images_per_config: usize,
    pub budget: usize,
}

impl SelectionPlan {
    /// Index of the best-predicted config (lowest value, then lowest index).
    pub fn best_index(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.predicted.iter().enumerate() {
            if *v < self.predicted[best] {
                best = i;
            }
        }
        best
    }

    /// Per-config image quotas: `images_per_config` each, with the ceil
    /// remainder (budget - k * images_per_config <= 0) absorbed by the
    /// best-predicted config.
    pub fn quotas(&self) -> Vec<usize> {
        let k = self.configs.len();
        let mut quotas = vec![self.images_per_config; k];
        let remainder = self.budget as i64 - (k * self.images_per_config) as i64;
        let best = self.best_index();
        quotas[best] = (self.images_per_config as i64 + remainder) as usize;
        quotas
    }

    pub fn mean_predicted(&self) -> f64 {
        self.predicted.iter().sum::<f64>() / self.predicted.len() as f64
    }

    pub fn to_json(&self, schema: &AttributeSchema) -> String {
        let configs: Vec<serde_json::Value> = self
            .configs
            .iter()
            .map(|c| serde_json::Value::Object(config_to_fields(c, schema)))
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({
            "budget": self.budget,
            "images_per_config": self.images_per_config,
            "configs": configs,
            "predicted": self.predicted,
        }))
        .expect("plan serializes")
    }

    pub fn from_json(text: &str, schema: &AttributeSchema) -> Result<Self> {
        let v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("plan json: {e}")))?;
        let budget = v
            .get("budget")
            .and_then(|x| x.as_u64())
            .ok_or_else(|| Error::Parse("plan missing `budget`".into()))? as usize;
        let images_per_config = v
            .get("images_per_config")
            .and_then(|x| x.as_u64())
            .ok_or_else(|| Error::Parse("plan missing `images_per_config`".into()))?
            as usize;
        let configs = v
            .get("configs")
            .and_then(|x| x.as_array())
            .ok_or_else(|| Error::Parse("plan missing `configs`".into()))?
            .iter()
            .map(|c| {
                c.as_object()
                    .ok_or_else(|| Error::Parse("plan config is not an object".into()))
                    .and_then(|obj| config_from_fields(obj, schema))
            })
            .collect::<Result<Vec<_>>>()?;
        let predicted: Vec<f64> = v
            .get("predicted")
            .and_then(|x| x.as_array())
            .ok_or_else(|| Error::Parse("plan missing `predicted`".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| Error::Parse("bad predicted value".into())))
            .collect::<Result<Vec<_>>>()?;
        if configs.is_empty() || configs.len() != predicted.len() {
            return Err(Error::Parse("plan configs/predicted lengths disagree".into()));
        }
        if predicted.iter().any(|p| !p.is_finite()) {
            return Err(Error::Parse("plan has a non-finite prediction".into()));
        }
        Ok(SelectionPlan {
            configs,
            predicted,
            images_per_config,
            budget,
        })
    }

    pub fn save(&self, path: &Path, schema: &AttributeSchema) -> Result<()> {
        std::fs::write(path, self.to_json(schema)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, schema: &AttributeSchema) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, schema)
    }
}

/// Output of stage one, including the intermediates the CLI persists.
#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub table: ConfigDistanceTable,
    pub model: BoostedEnsemble,
    pub train_mse: Vec<f64>,
    pub search: Vec<SearchedConfig>,
    pub plan: SelectionPlan,
}

/// Builds a plan from searched configs.
fn plan_from_search(search: &[SearchedConfig], params: &AostParams) -> SelectionPlan {
    SelectionPlan {
        configs: search.iter().map(|s| s.config.clone()).collect(),
        predicted: search.iter().map(|s| s.predicted).collect(),
        images_per_config: params.images_per_config,
        budget: params.budget,
    }
}

/// Resolves the diversity weight: explicit, or 0.1x the observed range.
fn resolve_diversity_weight(params: &AostParams, table: &ConfigDistanceTable) -> f64 {
    params.diversity_weight.unwrap_or_else(|| {
        let (lo, hi) = table.target_range();
        0.1 * (hi - lo)
    })
}

/// Runs the surrogate search for one round seed over a fitted model.
fn search_round(
    model: &BoostedEnsemble,
    schema: &AttributeSchema,
    params: &AostParams,
    weight: f64,
    round: usize,
) -> Result<Vec<SearchedConfig>> {
    let seed = derive_seed(params.seed, PSO_SALT + round as u64);
    let swarm = params.pso.materialize(schema, seed);
    search_attributes(model, schema, &swarm, params.config_count(), weight)
}

/// Stage one: distances per distinct config, surrogate fit, swarm search,
/// selection plan. Fully deterministic given the seed.
pub fn stage1_attribute_optimization(
    catalog: &SyntheticCatalog,
    target: &[SceneImage],
    schema: &AttributeSchema,
    extractor: &Extractor,
    params: &AostParams,
) -> Result<Stage1Output> {
    params.validate()?;
    if catalog.distinct_configs().len() < 2 {
        return Err(Error::InvalidArgument(
            "catalog holds a single distinct config; the surrogate would be degenerate \
             -- enumerate the config space directly instead"
                .into(),
        ));
    }
    let table = compute_config_distances(
        catalog,
        target,
        extractor,
        &params.distance,
        params.ref_subset_size,
        params.seed,
    )?;
    let samples: Vec<(AttributeConfig, f64)> = table
        .entries
        .iter()
        .map(|(c, r)| (c.clone(), r.d_total))
        .collect();
    let fit = crate::surrogate::fit(&samples, schema, &params.surrogate)?;
    let weight = resolve_diversity_weight(params, &table);
    let search = search_round(&fit.model, schema, params, weight, 0)?;
    let plan = plan_from_search(&search, params);
    Ok(Stage1Output {
        table,
        model: fit.model,
        train_mse: fit.train_mse,
        search,
        plan,
    })
}

/// Where a selected subset sits in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsetStage {
    Raw,
    Transferred,
}

impl SubsetStage {
    fn as_str(&self) -> &'static str {
        match self {
            SubsetStage::Raw => "raw",
            SubsetStage::Transferred => "transferred",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetEntry {
    pub path: PathBuf,
    pub identity: u32,
    pub config: AttributeConfig,
}

/// A budgeted image selection; every entry's config comes from the plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedSubset {
    pub entries: Vec<SubsetEntry>,
    pub stage: SubsetStage,
}

impl SelectedSubset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_images(&self) -> Result<Vec<SceneImage>> {
        self.entries
            .par_iter()
            .map(|e| {
                read_ppm(
                    &e.path,
                    Provenance {
                        config: Some(e.config.clone()),
                        identity: e.identity,
                        domain: DomainTag::Synthetic,
                    },
                )
            })
            .collect()
    }

    /// Line-delimited JSON: `path`, `identity`, `stage`, plus one integer
    /// field per dimension name.
    pub fn save_jsonl(&self, path: &Path, schema: &AttributeSchema) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.entries {
            let mut obj = config_to_fields(&e.config, schema);
            obj.insert(
                "path".into(),
                serde_json::Value::String(e.path.to_string_lossy().into_owned()),
            );
            obj.insert("identity".into(), serde_json::Value::from(e.identity));
            obj.insert(
                "stage".into(),
                serde_json::Value::String(self.stage.as_str().into()),
            );
            writeln!(w, "{}", serde_json::Value::Object(obj)).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_jsonl(path: &Path, schema: &AttributeSchema) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        let mut stage = SubsetStage::Raw;
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            let obj = v
                .as_object()
                .ok_or_else(|| Error::Parse("subset record is not an object".into()))?;
            let p = obj
                .get("path")
                .and_then(|x| x.as_str())
                .ok_or_else(|| Error::Parse("subset record missing `path`".into()))?;
            let identity = obj
                .get("identity")
                .and_then(|x| x.as_u64())
                .ok_or_else(|| Error::Parse("subset record missing `identity`".into()))?
                as u32;
            stage = match obj.get("stage").and_then(|x| x.as_str()) {
                Some("transferred") => SubsetStage::Transferred,
                _ => SubsetStage::Raw,
            };
            entries.push(SubsetEntry {
                path: PathBuf::from(p),
                identity,
                config: config_from_fields(obj, schema)?,
            });
        }
        Ok(SelectedSubset { entries, stage })
    }
}

/// Deterministic budgeted selection: per planned config, existing catalog
/// images ordered by (identity, record index) first; shortfalls are rendered
/// into `extras_dir`.
pub fn select_subset(
    catalog: &SyntheticCatalog,
    plan: &SelectionPlan,
    renderer: &SceneRenderer,
    extras_dir: &Path,
    seed: u64,
) -> Result<SelectedSubset> {
    if plan.configs.is_empty() {
        return Err(Error::InvalidArgument("plan has no configs".into()));
    }
    for c in &plan.configs {
        renderer.schema().validate_config(c)?;
    }
    let quotas = plan.quotas();

    let mut by_config: std::collections::HashMap<&AttributeConfig, Vec<(u32, usize)>> =
        std::collections::HashMap::new();
    for (i, r) in catalog.records().iter().enumerate() {
        by_config.entry(&r.config).or_default().push((r.identity, i));
    }
    for v in by_config.values_mut() {
        v.sort_unstable();
    }

    let render_seed = derive_seed(seed, EXTRA_SALT);
    let mut entries = Vec::with_capacity(plan.budget);
    let mut extras_created = false;
    for (ci, (config, &quota)) in plan.configs.iter().zip(&quotas).enumerate() {
        let existing = by_config.get(config).map(Vec::as_slice).unwrap_or(&[]);
        let take = existing.len().min(quota);
        for &(identity, idx) in &existing[..take] {
            entries.push(SubsetEntry {
                path: catalog.root().join(&catalog.records()[idx].path),
                identity,
                config: config.clone(),
            });
        }
        if take < quota {
            if !extras_created {
                std::fs::create_dir_all(extras_dir).map_err(|e| Error::io(extras_dir, e))?;
                extras_created = true;
            }
            let next_identity = existing.iter().map(|(id, _)| *id + 1).max().unwrap_or(0);
            for j in 0..(quota - take) {
                let identity = next_identity + j as u32;
                let img = renderer.render(config, identity, render_seed)?;
                let path = extras_dir.join(format!("sel{ci:05}_id{identity:04}.ppm"));
                write_ppm(&path, &img)?;
                entries.push(SubsetEntry {
                    path,
                    identity,
                    config: config.clone(),
                });
            }
        }
    }

    if entries.len() != plan.budget {
        return Err(Error::InvalidArgument(format!(
            "selection produced {} images for budget {}",
            entries.len(),
            plan.budget
        )));
    }
    Ok(SelectedSubset {
        entries,
        stage: SubsetStage::Raw,
    })
}

/// A transferred subset plus any channels that hit the zero-variance rule.
#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub subset: SelectedSubset,
    pub zero_variance_channels: Vec<usize>,
}

/// Per-channel moment matching against the target set: one global affine
/// remap `x' = (x - mu_s) * sigma_t / sigma_s + mu_t` (population moments),
/// clamped to [0, 255]. A zero-variance source channel is shifted to the
/// target mean with the scale skipped. Transferred images are written beside
/// the originals with a `.t.ppm` suffix.
pub fn stage2_style_transfer(
    subset: &SelectedSubset,
    target: &[SceneImage],
) -> Result<TransferOutcome> {
    if subset.stage != SubsetStage::Raw {
        return Err(Error::InvalidArgument("subset is already transferred".into()));
    }
    if subset.is_empty() {
        return Err(Error::InvalidArgument("subset is empty".into()));
    }
    if target.is_empty() {
        return Err(Error::InvalidArgument("target image list is empty".into()));
    }

    let images = subset.load_images()?;
    let (mu_s, sigma_s) = channel_moments(&images);
    let (mu_t, sigma_t) = channel_moments(target);

    let mut zero_variance_channels = Vec::new();
    let mut scale = [0.0f64; 3];
    for c in 0..3 {
        if sigma_s[c] == 0.0 {
            zero_variance_channels.push(c);
        } else {
            scale[c] = sigma_t[c] / sigma_s[c];
        }
    }

    let entries: Vec<SubsetEntry> = subset
        .entries
        .par_iter()
        .zip(images.par_iter())
        .map(|(entry, img)| -> Result<SubsetEntry> {
            let mut out = img.clone();
            for (i, v) in out.rgb.iter_mut().enumerate() {
                let c = i % 3;
                let x = *v as f64;
                let y = if sigma_s[c] == 0.0 {
                    x - mu_s[c] + mu_t[c]
                } else {
                    (x - mu_s[c]) * scale[c] + mu_t[c]
                };
                *v = y.round().clamp(0.0, 255.0) as u8;
            }
            let path = transferred_path(&entry.path);
            write_ppm(&path, &out)?;
            Ok(SubsetEntry {
                path,
                identity: entry.identity,
                config: entry.config.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TransferOutcome {
        subset: SelectedSubset {
            entries,
            stage: SubsetStage::Transferred,
        },
        zero_variance_channels,
    })
}

fn transferred_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.t.ppm"))
}

/// Population per-channel mean and standard deviation over a set of images,
/// folded per image in list order.
fn channel_moments(images: &[SceneImage]) -> ([f64; 3], [f64; 3]) {
    let per_image: Vec<([f64; 3], [f64; 3], usize)> = images
        .par_iter()
        .map(|img| {
            let mut sum = [0.0f64; 3];
            let mut sumsq = [0.0f64; 3];
            for px in img.rgb.chunks_exact(3) {
                for c in 0..3 {
                    let v = px[c] as f64;
                    sum[c] += v;
                    sumsq[c] += v * v;
                }
            }
            (sum, sumsq, img.rgb.len() / 3)
        })
        .collect();
    let mut sum = [0.0f64; 3];
    let mut sumsq = [0.0f64; 3];
    let mut count = 0usize;
    for (s, q, n) in per_image {
        for c in 0..3 {
            sum[c] += s[c];
            sumsq[c] += q[c];
        }
        count += n;
    }
    let n = count as f64;
    let mut mu = [0.0f64; 3];
    let mut sigma = [0.0f64; 3];
    for c in 0..3 {
        mu[c] = sum[c] / n;
        let var = (sumsq[c] / n - mu[c] * mu[c]).max(0.0);
        sigma[c] = var.sqrt();
    }
    (mu, sigma)
}

/// Seeded uniform sample of `budget` distinct catalog records.
pub fn random_subset(catalog: &SyntheticCatalog, budget: usize, seed: u64) -> Result<SelectedSubset> {
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be >= 1".into()));
    }
    if budget > catalog.len() {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} exceeds the {} catalog records",
            catalog.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, RANDOM_SALT));
    let mut pool: Vec<usize> = (0..catalog.len()).collect();
    for i in 0..budget {
        let j = i + (rng.next_u64() % (pool.len() - i) as u64) as usize;
        pool.swap(i, j);
    }
    let mut picks = pool[..budget].to_vec();
    picks.sort_unstable();
    let entries = picks
        .into_iter()
        .map(|i| {
            let r = &catalog.records()[i];
            SubsetEntry {
                path: catalog.root().join(&r.path),
                identity: r.identity,
                config: r.config.clone(),
            }
        })
        .collect();
    Ok(SelectedSubset {
        entries,
        stage: SubsetStage::Raw,
    })
}

/// Everything a full run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub stage1: Stage1Output,
    /// Mean predicted distance of each round's candidate plan.
    pub round_candidates: Vec<f64>,
    pub random: SelectedSubset,
    pub selected: SelectedSubset,
    pub transferred: SelectedSubset,
    pub zero_variance_channels: Vec<usize>,
    pub report: DomainGapReport,
}

/// Runs the full pipeline: stage one (with `rounds` reseeded searches,
/// keeping a new plan only when its mean predicted distance improves),
/// subset selection, style transfer, and the three-regulation evaluation
/// (random baseline / optimized / optimized + transferred).
pub fn run_aost(
    catalog: &SyntheticCatalog,
    target: &[SceneImage],
    renderer: &SceneRenderer,
    extractor: &Extractor,
    params: &AostParams,
    extras_dir: &Path,
) -> Result<RunArtifacts> {
    let mut stage1 = stage1_attribute_optimization(catalog, target, renderer.schema(), extractor, params)?;
    let weight = resolve_diversity_weight(params, &stage1.table);
    let mut round_candidates = vec![stage1.plan.mean_predicted()];
    for round in 1..params.rounds {
        let search = search_round(&stage1.model, renderer.schema(), params, weight, round)?;
        let candidate = plan_from_search(&search, params);
        let mean = candidate.mean_predicted();
        round_candidates.push(mean);
        if mean < stage1.plan.mean_predicted() {
            stage1.plan = candidate;
            stage1.search = search;
        }
    }

    let selected = select_subset(catalog, &stage1.plan, renderer, extras_dir, params.seed)?;
    let transfer = stage2_style_transfer(&selected, target)?;
    let random = random_subset(catalog, params.budget, params.seed)?;

    let sets = vec![
        ("random".to_string(), random.load_images()?),
        ("AO".to_string(), selected.load_images()?),
        ("AO+ST".to_string(), transfer.subset.load_images()?),
    ];
    let report = evaluate_regulations(
        &sets,
        target,
        extractor,
        &params.distance,
        &stage1.table.ref_indices,
    )?;

    Ok(RunArtifacts {
        stage1,
        round_candidates,
        random,
        selected,
        transferred: transfer.subset,
        zero_variance_channels: transfer.zero_variance_channels,
        report,
    })
}
