//! Particle swarm optimization over the relaxed attribute space, decoding to
//! discrete configs, and a diversity-penalized multi-config search.
//!
//! Discrete attributes are relaxed to one real coordinate each (floor
//! decoding); circular dimensions get a (sin, cos) pair so the search space
//! has no seam at the wrap-around. The swarm is the standard inertia +
//! cognitive + social update with positions clamped to bounds and the global
//! best updated synchronously once per iteration.

use crate::error::{Error, Result};
use crate::scenegen::{derive_seed, AttrKind, AttributeConfig, AttributeSchema};
use crate::surrogate::{encode, BoostedEnsemble};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Swarm size, iteration budget, update coefficients, box bounds, and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmParams {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
}

impl SwarmParams {
    /// Constriction-style defaults over the given bounds.
    pub fn new(bounds: Vec<(f64, f64)>, seed: u64) -> Self {
        SwarmParams {
            particles: 30,
            iterations: 200,
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
            bounds,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.iterations == 0 {
            return Err(Error::InvalidArgument("particle and iteration counts must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.inertia) {
            return Err(Error::InvalidArgument(format!(
                "inertia {} outside [0, 1]",
                self.inertia
            )));
        }
        if self.cognitive < 0.0 || self.social < 0.0 {
            return Err(Error::InvalidArgument("cognitive and social weights must be >= 0".into()));
        }
        if self.bounds.is_empty() {
            return Err(Error::InvalidArgument("bounds are empty".into()));
        }
        for (i, (lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "degenerate bounds [{lo}, {hi}] in dimension {i}"
                )));
            }
        }
        Ok(())
    }
}

/// Best position found, its value, and the per-iteration best-value history
/// (entry 0 is the post-initialization best; the history never increases).
#[derive(Debug, Clone)]
pub struct SwarmResult {
    pub best_position: Vec<f64>,
    pub best_value: f64,
    pub history: Vec<f64>,
}

impl SwarmResult {
    /// CSV with header `iteration,best_value`.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("iteration,best_value\n");
        for (i, v) in self.history.iter().enumerate() {
            s.push_str(&format!("{i},{v}\n"));
        }
        s
    }
}

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Minimizes `objective` over the bounded box. Non-finite objective values
/// are treated as +inf: recorded, never chosen. Deterministic given the seed.
pub fn optimize(mut objective: impl FnMut(&[f64]) -> f64, params: &SwarmParams) -> Result<SwarmResult> {
    params.validate()?;
    let dim = params.bounds.len();
    let n = params.particles;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut eval = |x: &[f64], objective: &mut dyn FnMut(&[f64]) -> f64| -> f64 {
        let v = objective(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut positions: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            params
                .bounds
                .iter()
                .map(|(lo, hi)| lo + (hi - lo) * unit_f64(&mut rng))
                .collect()
        })
        .collect();
    let mut velocities = vec![vec![0.0f64; dim]; n];
    let mut best_positions = positions.clone();
    let mut best_values: Vec<f64> = positions
        .iter()
        .map(|x| eval(x, &mut objective))
        .collect();

    let argmin = |values: &[f64]| -> usize {
        let mut best = 0usize;
        for (i, v) in values.iter().enumerate() {
            if *v < values[best] {
                best = i;
            }
        }
        best
    };

    let mut g = argmin(&best_values);
    let mut g_position = best_positions[g].clone();
    let mut g_value = best_values[g];
    let mut history = Vec::with_capacity(params.iterations + 1);
    history.push(g_value);

    for _ in 0..params.iterations {
        for p in 0..n {
            for d in 0..dim {
                let r1 = unit_f64(&mut rng);
                let r2 = unit_f64(&mut rng);
                velocities[p][d] = params.inertia * velocities[p][d]
                    + params.cognitive * r1 * (best_positions[p][d] - positions[p][d])
                    + params.social * r2 * (g_position[d] - positions[p][d]);
                let (lo, hi) = params.bounds[d];
                positions[p][d] = (positions[p][d] + velocities[p][d]).clamp(lo, hi);
            }
            let v = eval(&positions[p], &mut objective);
            if v < best_values[p] {
                best_values[p] = v;
                best_positions[p] = positions[p].clone();
            }
        }
        // synchronous global-best update: lowest value, then lowest index
        g = argmin(&best_values);
        if best_values[g] < g_value {
            g_value = best_values[g];
            g_position = best_positions[g].clone();
        }
        history.push(g_value);
    }

    Ok(SwarmResult {
        best_position: g_position,
        best_value: g_value,
        history,
    })
}

/// Length of the relaxed position vector for a schema.
pub fn relaxed_len(schema: &AttributeSchema) -> usize {
    schema
        .dimensions()
        .iter()
        .map(|d| if d.kind == AttrKind::Circular { 2 } else { 1 })
        .sum()
}

/// Box bounds for the relaxed space: `[0, cardinality - eps]` per discrete
/// coordinate and `[-1, 1]` per sin/cos coordinate.
pub fn relaxed_bounds(schema: &AttributeSchema) -> Vec<(f64, f64)> {
    let mut bounds = Vec::with_capacity(relaxed_len(schema));
    for d in schema.dimensions() {
        match d.kind {
            AttrKind::Circular => {
                bounds.push((-1.0, 1.0));
                bounds.push((-1.0, 1.0));
            }
            _ => bounds.push((0.0, d.cardinality as f64 - 1e-9)),
        }
    }
    bounds
}

/// Embeds a config into the relaxed space so that [`decode`] round-trips.
pub fn relax(config: &AttributeConfig, schema: &AttributeSchema) -> Result<Vec<f64>> {
    schema.validate_config(config)?;
    let mut out = Vec::with_capacity(relaxed_len(schema));
    for (i, d) in schema.dimensions().iter().enumerate() {
        let v = config.value(i);
        match d.kind {
            AttrKind::Circular => {
                let rad = ((v as f64) * 360.0 / d.cardinality as f64).to_radians();
                out.push(rad.sin());
                out.push(rad.cos());
            }
            _ => out.push(v as f64),
        }
    }
    Ok(out)
}

/// Nearest angular bin with exact midpoints rounding toward the lower bin.
pub(crate) fn circular_bin(angle_degrees: f64, cardinality: usize) -> u32 {
    let step = 360.0 / cardinality as f64;
    let x = angle_degrees / step;
    let bin = (x - 0.5).ceil() as i64;
    (bin.rem_euclid(cardinality as i64)) as u32
}

/// Decodes a relaxed position: floor with clamp for discrete coordinates,
/// atan2 to the nearest bin for circular pairs.
pub fn decode(position: &[f64], schema: &AttributeSchema) -> Result<AttributeConfig> {
    if position.len() != relaxed_len(schema) {
        return Err(Error::Shape(format!(
            "position has {} coordinates, relaxed layout needs {}",
            position.len(),
            relaxed_len(schema)
        )));
    }
    let mut values = Vec::with_capacity(schema.len());
    let mut at = 0usize;
    for d in schema.dimensions() {
        match d.kind {
            AttrKind::Circular => {
                let (s, c) = (position[at], position[at + 1]);
                at += 2;
                let mut angle = s.atan2(c).to_degrees();
                if angle < 0.0 {
                    angle += 360.0;
                }
                values.push(circular_bin(angle, d.cardinality));
            }
            _ => {
                let x = position[at];
                at += 1;
                let idx = if x.is_nan() { 0.0 } else { x.floor() };
                values.push((idx as i64).clamp(0, d.cardinality as i64 - 1) as u32);
            }
        }
    }
    Ok(AttributeConfig::new(values))
}

/// One config chosen by the multi-config search.
#[derive(Debug, Clone)]
pub struct SearchedConfig {
    pub config: AttributeConfig,
    /// Surrogate prediction for the config (penalty excluded).
    pub predicted: f64,
    /// Set when the run kept colliding with earlier picks and the duplicate
    /// was accepted after the retry budget.
    pub duplicate: bool,
    /// Set when two distinct decoded configs tied at the run's best value.
    pub non_unique_optimum: bool,
    /// Best-value history of the accepted run.
    pub history: Vec<f64>,
}

/// Runs `k` sequential swarm searches over the surrogate. Run `i` minimizes
/// `predict(decode(x)) + weight * sum(similarity(decode(x), chosen))`; each
/// run's decoded best is appended. A duplicate best is retried with a
/// reseeded generator up to 5 times, then accepted and flagged.
pub fn search_attributes(
    model: &BoostedEnsemble,
    schema: &AttributeSchema,
    params: &SwarmParams,
    k: usize,
    diversity_weight: f64,
) -> Result<Vec<SearchedConfig>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if (k as u128) > schema.config_space_size() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} distinct configs",
            schema.config_space_size()
        )));
    }
    let expected_bounds = relaxed_bounds(schema);
    if params.bounds != expected_bounds {
        return Err(Error::Shape("swarm bounds do not match the schema's relaxed layout".into()));
    }

    let mut chosen: Vec<SearchedConfig> = Vec::with_capacity(k);
    for run in 0..k {
        let mut accepted: Option<SearchedConfig> = None;
        for attempt in 0..=5u64 {
            let seed = derive_seed(params.seed, (run as u64) << 8 | attempt);
            let run_params = SwarmParams {
                seed,
                ..params.clone()
            };

            // track whether two distinct decoded configs tie at the best
            let mut best_seen = f64::INFINITY;
            let mut best_cfg: Option<AttributeConfig> = None;
            let mut tied_distinct = false;

            let chosen_configs: Vec<AttributeConfig> =
                chosen.iter().map(|s| s.config.clone()).collect();
            let objective = |x: &[f64]| -> f64 {
                let cfg = decode(x, schema).expect("bounds guarantee decodable positions");
                let encoded = encode(&cfg, schema).expect("decoded configs are valid");
                let mut v = model.predict_encoded(&encoded);
                if diversity_weight != 0.0 {
                    for c in &chosen_configs {
                        v += diversity_weight * cfg.similarity(c);
                    }
                }
                if v < best_seen {
                    best_seen = v;
                    best_cfg = Some(cfg);
                    tied_distinct = false;
                } else if v == best_seen {
                    if let Some(b) = &best_cfg {
                        if *b != cfg {
                            tied_distinct = true;
                        }
                    }
                }
                v
            };

            let result = optimize(objective, &run_params)?;
            let config = decode(&result.best_position, schema)?;
            let predicted = model.predict_encoded(&encode(&config, schema)?);
            let duplicate = chosen.iter().any(|s| s.config == config);
            let candidate = SearchedConfig {
                config,
                predicted,
                duplicate,
                non_unique_optimum: tied_distinct,
                history: result.history,
            };
            if !duplicate || attempt == 5 {
                accepted = Some(candidate);
                break;
            }
        }
        chosen.push(accepted.expect("retry loop always yields a candidate"));
    }
    Ok(chosen)
}
