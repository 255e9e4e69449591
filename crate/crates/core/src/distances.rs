//! Style, content, and total distances between feature pyramids, and their
//! aggregation into a per-configuration training signal.
//!
//! All sums accumulate in f64 in a fixed order regardless of feature storage
//! width, so results are bit-reproducible and stay tight against brute-force
//! oracles.

use crate::error::{Error, Result};
use crate::features::{gram, FeatureMap, FeaturePyramid, GramMatrix};

/// Weights of the total-distance combination and the content layer choice.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DistanceParams {
    /// Style weight (alpha).
    pub alpha: f64,
    /// Content weight (beta).
    pub beta: f64,
    /// Layer used for the content distance; second-deepest by default.
    pub content_layer: usize,
}

impl Default for DistanceParams {
    fn default() -> Self {
        DistanceParams {
            alpha: 0.9,
            beta: 1.0,
            content_layer: 3,
        }
    }
}

impl DistanceParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha {} and beta {} must be non-negative",
                self.alpha, self.beta
            )));
        }
        if self.alpha + self.beta <= 0.0 {
            return Err(Error::InvalidArgument("alpha + beta must be positive".into()));
        }
        Ok(())
    }
}

/// Style, content, and their weighted combination for one comparison.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DistanceReport {
    pub d_style: f64,
    pub d_content: f64,
    pub d_total: f64,
}

/// Half the summed squared difference between two same-shape feature maps.
pub fn content_distance(f: &FeatureMap, p: &FeatureMap) -> Result<f64> {
    if !f.same_shape(p) {
        return Err(Error::Shape(format!(
            "content maps disagree: layer {}/{} {}x{} vs {}x{}",
            f.layer, p.layer, f.filters, f.positions, p.filters, p.positions
        )));
    }
    let mut acc = 0.0f64;
    for (a, b) in f.values().iter().zip(p.values()) {
        let d = *a as f64 - *b as f64;
        acc += d * d;
    }
    Ok(0.5 * acc)
}

/// Weighted Gram discrepancy: `sum_l w_l / (4 N_l^2 M_l^2) sum_ij (G - A)^2`.
pub fn style_distance(f: &FeaturePyramid, a: &FeaturePyramid) -> Result<f64> {
    check_pyramids(f, a)?;
    let gf: Vec<GramMatrix> = f.maps().iter().map(gram).collect();
    let ga: Vec<GramMatrix> = a.maps().iter().map(gram).collect();
    style_from_grams(&gf, &ga, f.weights(), positions_of(f))
}

fn positions_of(p: &FeaturePyramid) -> Vec<usize> {
    p.maps().iter().map(|m| m.positions).collect()
}

fn check_pyramids(f: &FeaturePyramid, a: &FeaturePyramid) -> Result<()> {
    if f.layers() != a.layers() {
        return Err(Error::Shape(format!(
            "pyramids have {} vs {} layers",
            f.layers(),
            a.layers()
        )));
    }
    for (mf, ma) in f.maps().iter().zip(a.maps()) {
        if !mf.same_shape(ma) {
            return Err(Error::Shape(format!(
                "layer {}: {}x{} vs {}x{}",
                mf.layer, mf.filters, mf.positions, ma.filters, ma.positions
            )));
        }
    }
    if f.weights() != a.weights() {
        return Err(Error::Shape("pyramids carry different layer weights".into()));
    }
    Ok(())
}

/// Style distance from precomputed Gram pyramids. `positions[l]` is M_l of
/// the underlying maps (the Gram alone does not carry it).
pub fn style_from_grams(
    gf: &[GramMatrix],
    ga: &[GramMatrix],
    weights: &[f64],
    positions: Vec<usize>,
) -> Result<f64> {
    if gf.len() != ga.len() || gf.len() != weights.len() || gf.len() != positions.len() {
        return Err(Error::Shape("gram pyramid layer counts disagree".into()));
    }
    let mut total = 0.0f64;
    for l in 0..gf.len() {
        let (g, a) = (&gf[l], &ga[l]);
        if g.size != a.size {
            return Err(Error::Shape(format!(
                "layer {l}: gram sizes {} vs {}",
                g.size, a.size
            )));
        }
        let mut acc = 0.0f64;
        for (x, y) in g.values().iter().zip(a.values()) {
            let d = x - y;
            acc += d * d;
        }
        let n = g.size as f64;
        let m = positions[l] as f64;
        total += weights[l] * acc / (4.0 * n * n * m * m);
    }
    Ok(total)
}

/// `alpha * d_style + beta * d_content`.
pub fn total_distance(d_style: f64, d_content: f64, params: &DistanceParams) -> f64 {
    params.alpha * d_style + params.beta * d_content
}

/// Streaming accumulator for the mean pairwise distance between a stream of
/// synthetic pyramids and a fixed reference set. Iteration is synthetic-major
/// so chunked evaluation matches [`config_distance`] bit for bit.
pub struct PairAccumulator<'a> {
    refs_grams: Vec<Vec<GramMatrix>>,
    refs_content: Vec<&'a FeatureMap>,
    weights: Vec<f64>,
    positions: Vec<usize>,
    params: &'a DistanceParams,
    style_sum: f64,
    content_sum: f64,
    pairs: usize,
}

impl<'a> PairAccumulator<'a> {
    pub fn new(references: &'a [FeaturePyramid], params: &'a DistanceParams) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::InvalidArgument("reference pyramid list is empty".into()));
        }
        let first = &references[0];
        if params.content_layer >= first.layers() {
            return Err(Error::Shape(format!(
                "content layer {} out of range for {} layers",
                params.content_layer,
                first.layers()
            )));
        }
        for r in references.iter().skip(1) {
            check_pyramids(first, r)?;
        }
        Ok(PairAccumulator {
            refs_grams: references
                .iter()
                .map(|r| r.maps().iter().map(gram).collect())
                .collect(),
            refs_content: references.iter().map(|r| r.map(params.content_layer)).collect(),
            weights: first.weights().to_vec(),
            positions: positions_of(first),
            params,
            style_sum: 0.0,
            content_sum: 0.0,
            pairs: 0,
        })
    }

    /// Folds one synthetic pyramid (all pairs against the references).
    /// Pair sums are subtotaled per synthetic image, so pushing images in
    /// order is bit-identical to folding independently computed per-image
    /// subtotals in the same order.
    pub fn push(&mut self, synthetic: &FeaturePyramid) -> Result<()> {
        let grams: Vec<GramMatrix> = synthetic.maps().iter().map(gram).collect();
        let content = synthetic.map(self.params.content_layer);
        let mut style_sub = 0.0f64;
        let mut content_sub = 0.0f64;
        for (rg, rc) in self.refs_grams.iter().zip(&self.refs_content) {
            style_sub += style_from_grams(&grams, rg, &self.weights, self.positions.clone())?;
            content_sub += content_distance(content, rc)?;
        }
        self.style_sum += style_sub;
        self.content_sum += content_sub;
        self.pairs += self.refs_grams.len();
        Ok(())
    }

    pub fn finish(self) -> Result<DistanceReport> {
        if self.pairs == 0 {
            return Err(Error::InvalidArgument("no synthetic pyramids accumulated".into()));
        }
        let d_style = self.style_sum / self.pairs as f64;
        let d_content = self.content_sum / self.pairs as f64;
        Ok(DistanceReport {
            d_style,
            d_content,
            d_total: total_distance(d_style, d_content, self.params),
        })
    }
}

/// Mean style and content distance over all (synthetic, reference) pairs,
/// synthetic-major, then the weighted total.
pub fn config_distance(
    config_images: &[FeaturePyramid],
    target_refs: &[FeaturePyramid],
    params: &DistanceParams,
) -> Result<DistanceReport> {
    if config_images.is_empty() {
        return Err(Error::InvalidArgument("config pyramid list is empty".into()));
    }
    let mut acc = PairAccumulator::new(target_refs, params)?;
    for syn in config_images {
        check_pyramids(&target_refs[0], syn)?;
        acc.push(syn)?;
    }
    acc.finish()
}
