//! Gradient-boosted regression trees mapping encoded attribute configs to a
//! predicted total distance, with gain-based feature importance.
//!
//! Squared-error objective with unit hessians, so the second-order split
//! machinery reduces to its exact closed form: per-sample g = prediction -
//! target, h = 1, leaf value -G/(H + lambda), split gain
//! `0.5 * (G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l)) - gamma`. Splits are
//! exact greedy over sorted thresholds; ties break to the lowest feature
//! index, then the lowest threshold, so fitting is fully deterministic and
//! invariant to sample order.

mod tree;

pub use tree::{Node, RegressionTree};

use crate::error::{Error, Result};
use crate::scenegen::{AttrKind, AttributeConfig, AttributeSchema};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Boosting hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        SurrogateParams {
            rounds: 100,
            learning_rate: 0.3,
            max_depth: 4,
            lambda: 1.0,
            gamma: 0.0,
        }
    }
}

impl SurrogateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if self.lambda < 0.0 || self.gamma < 0.0 {
            return Err(Error::InvalidArgument("lambda and gamma must be >= 0".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidArgument("max depth must be >= 1".into()));
        }
        Ok(())
    }
}

/// One contiguous slice of encoded features belonging to a schema dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub dimension: usize,
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Encoded feature layout: one-hot blocks for categoricals (schema order),
/// then a (sin, cos) pair per circular dimension, then one 0/1 value per
/// binary flag. The default person schema encodes to 7+7+9+2+13 = 38.
pub fn feature_blocks(schema: &AttributeSchema) -> Vec<FeatureBlock> {
    let mut blocks = Vec::with_capacity(schema.len());
    let mut start = 0usize;
    let mut push = |dimension: usize, name: &str, len: usize, start: &mut usize| {
        blocks.push(FeatureBlock {
            dimension,
            name: name.to_string(),
            start: *start,
            len,
        });
        *start += len;
    };
    for (i, d) in schema.dimensions().iter().enumerate() {
        if d.kind == AttrKind::Categorical {
            push(i, &d.name, d.cardinality, &mut start);
        }
    }
    for (i, d) in schema.dimensions().iter().enumerate() {
        if d.kind == AttrKind::Circular {
            push(i, &d.name, 2, &mut start);
        }
    }
    for (i, d) in schema.dimensions().iter().enumerate() {
        if d.kind == AttrKind::BinaryFlag {
            push(i, &d.name, 1, &mut start);
        }
    }
    blocks
}

pub fn encoded_len(schema: &AttributeSchema) -> usize {
    schema
        .dimensions()
        .iter()
        .map(|d| match d.kind {
            AttrKind::Categorical => d.cardinality,
            AttrKind::Circular => 2,
            AttrKind::BinaryFlag => 1,
        })
        .sum()
}

/// Encodes a config into the layout above. Circular bins map to the angle
/// `bin * 360 / cardinality` degrees.
pub fn encode(config: &AttributeConfig, schema: &AttributeSchema) -> Result<Vec<f64>> {
    schema.validate_config(config)?;
    let mut out = vec![0.0f64; encoded_len(schema)];
    for block in feature_blocks(schema) {
        let d = &schema.dimensions()[block.dimension];
        let v = config.value(block.dimension);
        match d.kind {
            AttrKind::Categorical => out[block.start + v as usize] = 1.0,
            AttrKind::Circular => {
                let angle = (v as f64) * 360.0 / d.cardinality as f64;
                let rad = angle.to_radians();
                out[block.start] = rad.sin();
                out[block.start + 1] = rad.cos();
            }
            AttrKind::BinaryFlag => out[block.start] = v as f64,
        }
    }
    Ok(out)
}

/// The fitted ensemble. Prediction is
/// `base_score + learning_rate * sum(tree outputs)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub params: SurrogateParams,
    pub base_score: f64,
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
}

/// What [`fit`] returns: the model and the per-round training MSE.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: BoostedEnsemble,
    /// Training MSE after each round; non-increasing.
    pub train_mse: Vec<f64>,
}

/// Fits an ensemble to (config, target) pairs.
pub fn fit(
    samples: &[(AttributeConfig, f64)],
    schema: &AttributeSchema,
    params: &SurrogateParams,
) -> Result<FitOutcome> {
    let xs = samples
        .iter()
        .map(|(c, _)| encode(c, schema))
        .collect::<Result<Vec<_>>>()?;
    let ys: Vec<f64> = samples.iter().map(|(_, y)| *y).collect();
    fit_encoded(xs, ys, params)
}

/// Fits on raw feature vectors; the config-level [`fit`] is a thin wrapper.
pub fn fit_encoded(mut xs: Vec<Vec<f64>>, mut ys: Vec<f64>, params: &SurrogateParams) -> Result<FitOutcome> {
    params.validate()?;
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples, got {}",
            xs.len()
        )));
    }
    if xs.iter().any(|x| x.len() != xs[0].len()) {
        return Err(Error::Shape("inconsistent feature vector lengths".into()));
    }
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidArgument("non-finite target value".into()));
    }

    // canonical sample order (lexicographic features, then target) makes
    // every downstream accumulation independent of the caller's ordering
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        lex_cmp(&xs[a], &xs[b]).then_with(|| ys[a].total_cmp(&ys[b]))
    });
    {
        let xs_old = std::mem::take(&mut xs);
        let ys_old = std::mem::take(&mut ys);
        let mut xs_new = Vec::with_capacity(n);
        let mut ys_new = Vec::with_capacity(n);
        for &i in &order {
            xs_new.push(xs_old[i].clone());
            ys_new.push(ys_old[i]);
        }
        xs = xs_new;
        ys = ys_new;
    }

    let n_features = xs[0].len();
    let base_score = ys.iter().sum::<f64>() / n as f64;
    let mut preds = vec![base_score; n];
    let mut grads = vec![0.0f64; n];

    // per-feature sorted sample indices, computed once
    let sorted: Vec<Vec<usize>> = (0..n_features)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut trees = Vec::with_capacity(params.rounds);
    let mut train_mse = Vec::with_capacity(params.rounds);
    for _ in 0..params.rounds {
        for i in 0..n {
            grads[i] = preds[i] - ys[i];
        }
        let tree = tree::grow(&xs, &grads, &sorted, params);
        for i in 0..n {
            preds[i] += params.learning_rate * tree.output(&xs[i]);
        }
        trees.push(tree);
        let mse = preds
            .iter()
            .zip(&ys)
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / n as f64;
        train_mse.push(mse);
    }

    Ok(FitOutcome {
        model: BoostedEnsemble {
            params: params.clone(),
            base_score,
            n_features,
            trees,
        },
        train_mse,
    })
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let c = x.total_cmp(y);
        if c != std::cmp::Ordering::Equal {
            return c;
        }
    }
    std::cmp::Ordering::Equal
}

/// Per-feature and per-dimension split gains with normalized shares.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainReport {
    pub per_feature: Vec<f64>,
    pub dimensions: Vec<DimensionGain>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionGain {
    pub name: String,
    pub gain: f64,
    pub share: f64,
}

impl GainReport {
    /// CSV with header `dimension,gain,share`, one row per schema dimension.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dimension,gain,share\n");
        for d in &self.dimensions {
            s.push_str(&format!("{},{},{}\n", d.name, d.gain, d.share));
        }
        s
    }

    /// Dimension with the largest gain (lowest index wins ties).
    pub fn top_dimension(&self) -> Option<&DimensionGain> {
        self.dimensions
            .iter()
            .reduce(|best, d| if d.gain > best.gain { d } else { best })
    }
}

impl BoostedEnsemble {
    pub fn predict_encoded(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.output(x)).sum();
        self.base_score + self.params.learning_rate * sum
    }

    pub fn predict(&self, config: &AttributeConfig, schema: &AttributeSchema) -> Result<f64> {
        let x = encode(config, schema)?;
        if x.len() != self.n_features {
            return Err(Error::Shape(format!(
                "schema encodes to {} features, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(self.predict_encoded(&x))
    }

    /// Sums recorded split gains per feature, groups them by encoding block,
    /// and normalizes to shares. Shares sum to 1 whenever any split exists.
    pub fn feature_importance(&self, schema: &AttributeSchema) -> Result<GainReport> {
        let blocks = feature_blocks(schema);
        if encoded_len(schema) != self.n_features {
            return Err(Error::Shape(format!(
                "schema encodes to {} features, model expects {}",
                encoded_len(schema),
                self.n_features
            )));
        }
        let mut per_feature = vec![0.0f64; self.n_features];
        for t in &self.trees {
            t.accumulate_gains(&mut per_feature);
        }
        let total: f64 = per_feature.iter().sum();
        let mut by_dim = vec![0.0f64; schema.len()];
        for b in &blocks {
            by_dim[b.dimension] = per_feature[b.start..b.start + b.len].iter().sum();
        }
        let dimensions = schema
            .dimensions()
            .iter()
            .enumerate()
            .map(|(i, d)| DimensionGain {
                name: d.name.clone(),
                gain: by_dim[i],
                share: if total > 0.0 { by_dim[i] / total } else { 0.0 },
            })
            .collect();
        Ok(GainReport {
            per_feature,
            dimensions,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("model json: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::Dimension;

    fn grid_schema() -> AttributeSchema {
        AttributeSchema::new(vec![
            Dimension::new("weather", 7, AttrKind::Categorical),
            Dimension::new("illumination", 7, AttrKind::Categorical),
            Dimension::new("background", 9, AttrKind::Categorical),
        ])
        .unwrap()
    }

    fn grid_configs() -> Vec<AttributeConfig> {
        let mut out = Vec::new();
        for w in 0..7u32 {
            for i in 0..7u32 {
                for b in 0..9u32 {
                    out.push(AttributeConfig::new(vec![w, i, b]));
                }
            }
        }
        out
    }

    #[test]
    fn encode_layout_default_schema() {
        let schema = AttributeSchema::default_person();
        assert_eq!(encoded_len(&schema), 38);
        let mut values = vec![0u32; schema.len()];
        values[schema.index_of("weather").unwrap()] = 2;
        values[schema.index_of("viewpoint").unwrap()] = 9; // 90 degrees
        values[schema.index_of("hat").unwrap()] = 1;
        let x = encode(&AttributeConfig::new(values), &schema).unwrap();
        // weather one-hot block first
        assert_eq!(&x[0..7], &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        // sin/cos pair after the three one-hot blocks
        let vp = 7 + 7 + 9;
        assert!((x[vp] - 1.0).abs() < 1e-12, "sin(90) = {}", x[vp]);
        assert!(x[vp + 1].abs() < 1e-12, "cos(90) = {}", x[vp + 1]);
        // flags trail; `hat` is the third flag
        assert_eq!(x[vp + 2 + 2], 1.0);
        assert_eq!(x.len(), 38);
    }

    #[test]
    fn encode_invariants() {
        let schema = AttributeSchema::default_person();
        let blocks = feature_blocks(&schema);
        for trial in 0..20u64 {
            let values: Vec<u32> = schema
                .dimensions()
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    (crate::scenegen::derive_seed(trial, i as u64) % d.cardinality as u64) as u32
                })
                .collect();
            let x = encode(&AttributeConfig::new(values), &schema).unwrap();
            for b in &blocks {
                let d = &schema.dimensions()[b.dimension];
                match d.kind {
                    AttrKind::Categorical => {
                        let s: f64 = x[b.start..b.start + b.len].iter().sum();
                        assert_eq!(s, 1.0);
                    }
                    AttrKind::Circular => {
                        let (s, c) = (x[b.start], x[b.start + 1]);
                        assert!((s * s + c * c - 1.0).abs() <= 1e-9);
                    }
                    AttrKind::BinaryFlag => {
                        assert!(x[b.start] == 0.0 || x[b.start] == 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_target_is_carried_by_base_score() {
        let schema = grid_schema();
        let samples: Vec<(AttributeConfig, f64)> = grid_configs()
            .into_iter()
            .take(50)
            .map(|c| (c, 3.25))
            .collect();
        let params = SurrogateParams {
            rounds: 1,
            learning_rate: 1.0,
            ..SurrogateParams::default()
        };
        let out = fit(&samples, &schema, &params).unwrap();
        assert_eq!(out.model.base_score, 3.25);
        assert_eq!(out.model.trees.len(), 1);
        for (c, _) in &samples {
            assert_eq!(out.model.predict(c, &schema).unwrap(), 3.25);
        }
        // the lone tree must be an unsplit root
        assert!(matches!(out.model.trees[0].root, Node::Leaf { .. }));
    }

    #[test]
    fn single_axis_split_reaches_tiny_mse() {
        let schema = grid_schema();
        let samples: Vec<(AttributeConfig, f64)> = grid_configs()
            .into_iter()
            .map(|c| {
                let y = if c.value(0) == 0 { 1.0 } else { 0.0 };
                (c, y)
            })
            .collect();
        assert_eq!(samples.len(), 441);
        let params = SurrogateParams {
            rounds: 50,
            learning_rate: 0.3,
            max_depth: 3,
            ..SurrogateParams::default()
        };
        let out = fit(&samples, &schema, &params).unwrap();
        let final_mse = *out.train_mse.last().unwrap();
        assert!(final_mse < 1e-4, "final training MSE {final_mse}");
    }

    #[test]
    fn training_mse_is_non_increasing() {
        let schema = grid_schema();
        // a rougher target: interaction of two attributes plus a ramp
        let samples: Vec<(AttributeConfig, f64)> = grid_configs()
            .into_iter()
            .map(|c| {
                let y = (c.value(0) as f64 * 1.7 - c.value(2) as f64).sin()
                    + if c.value(1) >= 4 { 2.0 } else { 0.0 };
                (c, y)
            })
            .collect();
        let out = fit(&samples, &schema, &SurrogateParams::default()).unwrap();
        for w in out.train_mse.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "MSE rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn fit_is_invariant_to_sample_order() {
        let schema = grid_schema();
        let mut samples: Vec<(AttributeConfig, f64)> = grid_configs()
            .into_iter()
            .map(|c| {
                let y = c.value(2) as f64 * 0.5 + c.value(0) as f64;
                (c, y)
            })
            .collect();
        let params = SurrogateParams {
            rounds: 10,
            ..SurrogateParams::default()
        };
        let a = fit(&samples, &schema, &params).unwrap();
        samples.reverse();
        // an extra deterministic shuffle
        samples.sort_by_key(|(c, _)| (c.value(1), std::cmp::Reverse(c.value(0))));
        let b = fit(&samples, &schema, &params).unwrap();
        assert_eq!(serde_json::to_string(&a.model).unwrap(), serde_json::to_string(&b.model).unwrap());
    }

    #[test]
    fn predictions_match_slow_rewalk() {
        let schema = grid_schema();
        let samples: Vec<(AttributeConfig, f64)> = grid_configs()
            .into_iter()
            .map(|c| (c.clone(), (c.value(0) * 3 + c.value(1)) as f64 % 5.0))
            .collect();
        let out = fit(&samples, &schema, &SurrogateParams { rounds: 20, ..SurrogateParams::default() }).unwrap();
        let model = &out.model;

        fn walk(node: &Node, x: &[f64]) -> f64 {
            match node {
                Node::Leaf { value } => *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if x[*feature] < *threshold {
                        walk(left, x)
                    } else {
                        walk(right, x)
                    }
                }
            }
        }

        for (i, (c, _)) in samples.iter().enumerate().step_by(4).take(100) {
            let x = encode(c, &schema).unwrap();
            let slow = model.base_score
                + model.params.learning_rate
                    * model.trees.iter().map(|t| walk(&t.root, &x)).sum::<f64>();
            assert_eq!(model.predict_encoded(&x), slow, "sample {i}");
        }
    }

    #[test]
    fn empty_ensemble_predicts_base_score() {
        let schema = grid_schema();
        let samples: Vec<(AttributeConfig, f64)> = grid_configs()
            .into_iter()
            .take(10)
            .enumerate()
            .map(|(i, c)| (c, i as f64))
            .collect();
        let out = fit(
            &samples,
            &schema,
            &SurrogateParams {
                rounds: 0,
                ..SurrogateParams::default()
            },
        )
        .unwrap();
        assert!(out.model.trees.is_empty());
        assert_eq!(out.model.predict(&samples[3].0, &schema).unwrap(), out.model.base_score);
        assert_eq!(out.model.base_score, 4.5);
    }

    #[test]
    fn single_feature_model_gets_full_share() {
        let schema = grid_schema();
        let samples: Vec<(AttributeConfig, f64)> = grid_configs()
            .into_iter()
            .map(|c| (c.clone(), if c.value(2) >= 5 { 1.0 } else { 0.0 }))
            .collect();
        let out = fit(
            &samples,
            &schema,
            &SurrogateParams {
                rounds: 30,
                max_depth: 2,
                ..SurrogateParams::default()
            },
        )
        .unwrap();
        let report = out.model.feature_importance(&schema).unwrap();
        let bg = &report.dimensions[2];
        assert_eq!(bg.name, "background");
        assert!(bg.share > 0.999, "background share {}", bg.share);
        let total: f64 = report.dimensions.iter().map(|d| d.share).sum();
        assert!((total - 1.0).abs() <= 1e-9);
        assert!(report.per_feature.iter().all(|g| *g >= 0.0));
    }

    #[test]
    fn importance_without_splits_has_zero_shares() {
        let schema = grid_schema();
        let samples: Vec<(AttributeConfig, f64)> =
            grid_configs().into_iter().take(5).map(|c| (c, 1.0)).collect();
        let out = fit(&samples, &schema, &SurrogateParams { rounds: 3, ..SurrogateParams::default() }).unwrap();
        let report = out.model.feature_importance(&schema).unwrap();
        assert!(report.dimensions.iter().all(|d| d.gain == 0.0 && d.share == 0.0));
    }

    #[test]
    fn fit_rejects_degenerate_inputs() {
        let schema = grid_schema();
        let one = vec![(AttributeConfig::new(vec![0, 0, 0]), 1.0)];
        assert!(fit(&one, &schema, &SurrogateParams::default()).is_err());
        let bad = vec![
            (AttributeConfig::new(vec![0, 0, 0]), 1.0),
            (AttributeConfig::new(vec![1, 0, 0]), f64::NAN),
        ];
        assert!(fit(&bad, &schema, &SurrogateParams::default()).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let schema = grid_schema();
        let samples: Vec<(AttributeConfig, f64)> = grid_configs()
            .into_iter()
            .take(60)
            .map(|c| (c.clone(), c.value(0) as f64))
            .collect();
        let out = fit(&samples, &schema, &SurrogateParams { rounds: 5, ..SurrogateParams::default() }).unwrap();
        let text = out.model.to_json();
        let back = BoostedEnsemble::from_json(&text).unwrap();
        for (c, _) in samples.iter().take(10) {
            assert_eq!(
                out.model.predict(c, &schema).unwrap(),
                back.predict(c, &schema).unwrap()
            );
        }
    }
}
