//! Multi-layer feature extraction with a seeded fixed filter bank, and Gram
//! matrices of the responses.
//!
//! The extractor is a stand-in for a pretrained convolutional backbone: each
//! layer is a half-wave-rectified 3x3 convolution (same padding, no bias)
//! over the 2x-average-pooled previous layer. Filters are a pure function of
//! the spec seed, which makes every downstream statistic machine-verifiable.
//! The extractor is pluggable behind [`FeaturePyramid`]; a pretrained
//! backbone producing the same shapes can be substituted later.

mod cache;

pub use cache::{read_feature_cache, write_feature_cache};

use crate::error::{Error, Result};
use crate::scenegen::{derive_seed, SceneImage};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fixed default filter seed; independent of run seeds so the extractor acts
/// as a frozen backbone across runs.
pub const DEFAULT_FILTER_SEED: u64 = 0x4647_5052;

/// Shape and seeding of the filter-bank extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorSpec {
    pub filters_per_layer: Vec<usize>,
    pub kernel_size: usize,
    pub filter_seed: u64,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        ExtractorSpec {
            filters_per_layer: vec![8, 12, 16, 24, 32],
            kernel_size: 3,
            filter_seed: DEFAULT_FILTER_SEED,
        }
    }
}

impl ExtractorSpec {
    pub fn layers(&self) -> usize {
        self.filters_per_layer.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters_per_layer.is_empty() {
            return Err(Error::InvalidArgument("extractor needs at least one layer".into()));
        }
        if self.filters_per_layer.iter().any(|n| *n == 0) {
            return Err(Error::InvalidArgument("filter counts must be >= 1".into()));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel size {} must be odd and >= 1",
                self.kernel_size
            )));
        }
        Ok(())
    }

    /// Uniform layer weights summing to 1 (0.2 each at the default depth).
    pub fn uniform_layer_weights(&self) -> Vec<f64> {
        vec![1.0 / self.layers() as f64; self.layers()]
    }

    /// Total descriptor length after per-filter pooling (92 under defaults).
    pub fn descriptor_len(&self) -> usize {
        self.filters_per_layer.iter().sum()
    }
}

/// Rectified responses of one layer: `filters` rows of `positions` values,
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub layer: usize,
    pub filters: usize,
    pub positions: usize,
    values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(layer: usize, filters: usize, positions: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != filters * positions {
            return Err(Error::Shape(format!(
                "feature map has {} values, expected {}x{}",
                values.len(),
                filters,
                positions
            )));
        }
        Ok(FeatureMap {
            layer,
            filters,
            positions,
            values,
        })
    }

    #[inline]
    pub fn value(&self, filter: usize, position: usize) -> f32 {
        self.values[filter * self.positions + position]
    }

    pub fn row(&self, filter: usize) -> &[f32] {
        &self.values[filter * self.positions..(filter + 1) * self.positions]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.layer == other.layer && self.filters == other.filters && self.positions == other.positions
    }
}

/// One feature map per layer plus the layer weights used by the style
/// distance. Weights must be non-negative and sum to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    maps: Vec<FeatureMap>,
    weights: Vec<f64>,
}

impl FeaturePyramid {
    pub fn new(maps: Vec<FeatureMap>, weights: Vec<f64>) -> Result<Self> {
        if maps.is_empty() || maps.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} maps with {} weights",
                maps.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidArgument("layer weights must be non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "layer weights sum to {sum}, expected 1"
            )));
        }
        Ok(FeaturePyramid { maps, weights })
    }

    pub fn maps(&self) -> &[FeatureMap] {
        &self.maps
    }

    pub fn map(&self, layer: usize) -> &FeatureMap {
        &self.maps[layer]
    }

    pub fn layers(&self) -> usize {
        self.maps.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Symmetric PSD matrix of inner products between filter rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub layer: usize,
    pub size: usize,
    values: Vec<f64>,
}

impl GramMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn trace(&self) -> f64 {
        (0..self.size).map(|i| self.get(i, i)).sum()
    }
}

/// `G[i][j] = sum_k F[i][k] * F[j][k]`, accumulated in f64 in ascending k.
pub fn gram(map: &FeatureMap) -> GramMatrix {
    let n = map.filters;
    let mut values = vec![0.0f64; n * n];
    for i in 0..n {
        let ri = map.row(i);
        for j in i..n {
            let rj = map.row(j);
            let mut acc = 0.0f64;
            for k in 0..map.positions {
                acc += ri[k] as f64 * rj[k] as f64;
            }
            values[i * n + j] = acc;
            values[j * n + i] = acc;
        }
    }
    GramMatrix {
        layer: map.layer,
        size: n,
        values,
    }
}

/// The materialized filter bank for an [`ExtractorSpec`].
pub struct Extractor {
    spec: ExtractorSpec,
    /// Per layer: `[filter][in_channel * k * k]` weights.
    banks: Vec<Vec<Vec<f32>>>,
}

impl Extractor {
    pub fn new(spec: ExtractorSpec) -> Result<Self> {
        spec.validate()?;
        let k2 = spec.kernel_size * spec.kernel_size;
        let mut banks = Vec::with_capacity(spec.layers());
        let mut in_channels = 3usize;
        for (layer, &n) in spec.filters_per_layer.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.filter_seed, layer as u64));
            let fan_in = in_channels * k2;
            // He-style uniform bound: variance 2/fan_in keeps rectified
            // response energy roughly constant across layers
            let a = (6.0 / fan_in as f64).sqrt();
            let bank: Vec<Vec<f32>> = (0..n)
                .map(|_| {
                    (0..fan_in)
                        .map(|_| {
                            let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                            ((2.0 * u - 1.0) * a) as f32
                        })
                        .collect()
                })
                .collect();
            banks.push(bank);
            in_channels = n;
        }
        Ok(Extractor { spec, banks })
    }

    pub fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    /// Filter weights of one layer (rows of `in_channels * k * k` values).
    pub fn bank(&self, layer: usize) -> &[Vec<f32>] {
        &self.banks[layer]
    }

    /// Extracts the full pyramid. Requires image dimensions divisible by
    /// 2^layers.
    pub fn extract(&self, image: &SceneImage) -> Result<FeaturePyramid> {
        let layers = self.spec.layers();
        let div = 1u32 << layers;
        if image.width % div != 0 || image.height % div != 0 {
            return Err(Error::Shape(format!(
                "image {}x{} not divisible by 2^{layers}",
                image.width, image.height
            )));
        }

        let mut w = image.width as usize;
        let mut h = image.height as usize;
        // planar normalized input
        let mut planes: Vec<Vec<f32>> = vec![vec![0.0; w * h]; 3];
        for (i, px) in image.rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                planes[c][i] = px[c] as f32 / 255.0;
            }
        }

        let mut maps = Vec::with_capacity(layers);
        for layer in 0..layers {
            if layer > 0 {
                planes = planes.iter().map(|p| avg_pool2(p, w, h)).collect();
                w /= 2;
                h /= 2;
            }
            let out = conv_relu(&planes, w, h, &self.banks[layer], self.spec.kernel_size);
            let n = self.spec.filters_per_layer[layer];
            maps.push(FeatureMap::new(layer, n, w * h, flatten(&out))?);
            planes = out;
        }
        FeaturePyramid::new(maps, self.spec.uniform_layer_weights())
    }
}

fn flatten(planes: &[Vec<f32>]) -> Vec<f32> {
    let mut v = Vec::with_capacity(planes.len() * planes[0].len());
    for p in planes {
        v.extend_from_slice(p);
    }
    v
}

/// 2x2 average pooling; dimensions must be even.
fn avg_pool2(plane: &[f32], w: usize, h: usize) -> Vec<f32> {
    let (ow, oh) = (w / 2, h / 2);
    let mut out = vec![0.0f32; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out[y * ow + x] = 0.25 * (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]);
        }
    }
    out
}

/// Same-padded rectified convolution with a fixed accumulation order
/// (channel, then kernel row, then kernel column) for bit reproducibility.
fn conv_relu(input: &[Vec<f32>], w: usize, h: usize, bank: &[Vec<f32>], k: usize) -> Vec<Vec<f32>> {
    let half = (k / 2) as isize;
    let (wi, hi) = (w as isize, h as isize);
    bank.iter()
        .map(|weights| {
            let mut out = vec![0.0f32; w * h];
            for y in 0..hi {
                for x in 0..wi {
                    let mut acc = 0.0f32;
                    let mut wi_idx = 0usize;
                    for plane in input {
                        for ky in -half..=half {
                            let yy = y + ky;
                            if yy < 0 || yy >= hi {
                                wi_idx += k;
                                continue;
                            }
                            let row = yy as usize * w;
                            for kx in -half..=half {
                                let xx = x + kx;
                                if xx >= 0 && xx < wi {
                                    acc += weights[wi_idx] * plane[row + xx as usize];
                                }
                                wi_idx += 1;
                            }
                        }
                    }
                    out[(y * wi + x) as usize] = acc.max(0.0);
                }
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{AttributeConfig, AttributeSchema, DomainTag, Provenance, SceneRenderer};

    fn blank(width: u32, height: u32, value: u8) -> SceneImage {
        SceneImage::new(
            width,
            height,
            vec![value; (width * height * 3) as usize],
            Provenance {
                config: None,
                identity: 0,
                domain: DomainTag::Synthetic,
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_image_gives_zero_pyramid() {
        let ex = Extractor::new(ExtractorSpec::default()).unwrap();
        let pyr = ex.extract(&blank(64, 128, 0)).unwrap();
        for map in pyr.maps() {
            assert!(map.values().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn default_shapes() {
        let ex = Extractor::new(ExtractorSpec::default()).unwrap();
        let pyr = ex.extract(&blank(64, 128, 77)).unwrap();
        assert_eq!(pyr.layers(), 5);
        assert_eq!(pyr.map(0).positions, 64 * 128);
        assert_eq!(pyr.map(0).filters, 8);
        assert_eq!(pyr.map(4).positions, 4 * 8);
        assert_eq!(pyr.map(4).filters, 32);
        assert_eq!(pyr.weights(), &[0.2; 5]);
    }

    #[test]
    fn rejects_indivisible_dimensions() {
        let ex = Extractor::new(ExtractorSpec::default()).unwrap();
        assert!(ex.extract(&blank(63, 128, 0)).is_err());
        assert!(ex.extract(&blank(64, 80, 0)).is_err());
    }

    #[test]
    fn extraction_is_deterministic() {
        let schema = AttributeSchema::default_person();
        let r = SceneRenderer::with_default_size(schema.clone()).unwrap();
        let img = r
            .render(&AttributeConfig::new(vec![0; schema.len()]), 3, 5)
            .unwrap();
        let ex = Extractor::new(ExtractorSpec::default()).unwrap();
        let a = ex.extract(&img).unwrap();
        let b = ex.extract(&img).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn filters_depend_only_on_seed() {
        let a = Extractor::new(ExtractorSpec::default()).unwrap();
        let b = Extractor::new(ExtractorSpec::default()).unwrap();
        for l in 0..a.spec().layers() {
            assert_eq!(a.bank(l), b.bank(l));
        }
        let c = Extractor::new(ExtractorSpec {
            filter_seed: 999,
            ..ExtractorSpec::default()
        })
        .unwrap();
        assert_ne!(a.bank(0), c.bank(0));
    }

    #[test]
    fn doubling_pixels_doubles_layer0_exactly() {
        // multiplication by 2 is exact in floating point, and rectification
        // commutes with non-negative scaling
        let ex = Extractor::new(ExtractorSpec::default()).unwrap();
        let mut img = blank(64, 128, 0);
        for (i, v) in img.rgb.iter_mut().enumerate() {
            *v = ((i * 31) % 128) as u8; // keep below 128 so doubling stays in range
        }
        let mut img2 = img.clone();
        for v in img2.rgb.iter_mut() {
            *v *= 2;
        }
        let p1 = ex.extract(&img).unwrap();
        let p2 = ex.extract(&img2).unwrap();
        for (a, b) in p1.map(0).values().iter().zip(p2.map(0).values()) {
            assert_eq!(*b, 2.0 * *a);
        }
    }

    #[test]
    fn single_pixel_perturbation_is_lipschitz_at_layer0() {
        let ex = Extractor::new(ExtractorSpec::default()).unwrap();
        let img = blank(64, 128, 100);
        let mut perturbed = img.clone();
        perturbed.rgb[(40 * 64 + 20) * 3] += 1; // +1/255 in channel 0
        let p0 = ex.extract(&img).unwrap();
        let p1 = ex.extract(&perturbed).unwrap();
        let bound: f64 = ex.bank(0)[0].iter().map(|w| w.abs() as f64).sum::<f64>() / 255.0;
        let max_bound = (0..8)
            .map(|f| ex.bank(0)[f].iter().map(|w| w.abs() as f64).sum::<f64>() / 255.0)
            .fold(bound, f64::max);
        for (a, b) in p0.map(0).values().iter().zip(p1.map(0).values()) {
            let delta = (*a as f64 - *b as f64).abs();
            assert!(delta <= max_bound * (1.0 + 1e-6), "delta {delta} > bound {max_bound}");
        }
    }

    #[test]
    fn gram_hand_examples() {
        let m = FeatureMap::new(0, 1, 4, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(gram(&m).get(0, 0), 4.0);

        let m = FeatureMap::new(0, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let g = gram(&m);
        assert_eq!(
            (g.get(0, 0), g.get(0, 1), g.get(1, 0), g.get(1, 1)),
            (1.0, 0.0, 0.0, 1.0)
        );
    }

    #[test]
    fn gram_matches_triple_loop_oracle() {
        let mut state = 0x1234_5678_u64;
        let mut next = || {
            state = crate::scenegen::derive_seed(state, 1);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let (n, m) = (8, 16);
        let values: Vec<f32> = (0..n * m).map(|_| (next() * 4.0 - 2.0) as f32).collect();
        let map = FeatureMap::new(2, n, m, values.clone()).unwrap();
        let g = gram(&map);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0f64;
                for k in 0..m {
                    acc += values[i * m + k] as f64 * values[j * m + k] as f64;
                }
                assert_eq!(g.get(i, j), acc);
            }
        }
    }
}
