//! The hidden "real" domain: configs drawn from per-dimension distributions,
//! rendered, then pushed through a fixed photometric shift.

use super::{derive_seed, AttributeConfig, AttributeSchema, DomainTag, SceneImage, SceneRenderer};
use crate::error::{Error, Result};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Global photometric transform modeling the synthetic-to-real gap:
/// per-channel gamma, then per-channel bias, clamped to [0, 255].
#[derive(Debug, Clone, PartialEq)]
pub struct StyleShift {
    pub gamma: f64,
    pub channel_bias: [f64; 3],
}

impl StyleShift {
    pub fn identity() -> Self {
        StyleShift {
            gamma: 1.0,
            channel_bias: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.5..=2.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma {} outside [0.5, 2.0]",
                self.gamma
            )));
        }
        for b in self.channel_bias {
            if !(-32.0..=32.0).contains(&b) {
                return Err(Error::InvalidArgument(format!(
                    "channel bias {b} outside [-32, 32]"
                )));
            }
        }
        Ok(())
    }

    /// Applies the shift in place.
    pub fn apply(&self, image: &mut SceneImage) {
        for (i, v) in image.rgb.iter_mut().enumerate() {
            let x = *v as f64;
            let t = if self.gamma == 1.0 {
                x
            } else {
                255.0 * (x / 255.0).powf(self.gamma)
            };
            *v = (t + self.channel_bias[i % 3]).round().clamp(0.0, 255.0) as u8;
        }
    }
}

/// Per-dimension categorical distributions plus the photometric shift.
/// Models the unlabeled target domain; the pipeline only ever sees its
/// rendered output.
#[derive(Debug, Clone)]
pub struct TargetDistribution {
    probs: Vec<Vec<f64>>,
    pub style_shift: StyleShift,
}

impl TargetDistribution {
    pub fn new(schema: &AttributeSchema, probs: Vec<Vec<f64>>, style_shift: StyleShift) -> Result<Self> {
        if probs.len() != schema.len() {
            return Err(Error::InvalidArgument(format!(
                "{} probability vectors for {} dimensions",
                probs.len(),
                schema.len()
            )));
        }
        for (p, d) in probs.iter().zip(schema.dimensions()) {
            if p.len() != d.cardinality {
                return Err(Error::InvalidArgument(format!(
                    "dimension `{}`: {} probabilities for cardinality {}",
                    d.name,
                    p.len(),
                    d.cardinality
                )));
            }
            if p.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "dimension `{}` has a negative or non-finite probability",
                    d.name
                )));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "dimension `{}` probabilities sum to {sum}, expected 1",
                    d.name
                )));
            }
        }
        style_shift.validate()?;
        Ok(TargetDistribution { probs, style_shift })
    }

    /// Uniform over every dimension, identity shift.
    pub fn uniform(schema: &AttributeSchema) -> Self {
        let probs = schema
            .dimensions()
            .iter()
            .map(|d| vec![1.0 / d.cardinality as f64; d.cardinality])
            .collect();
        TargetDistribution {
            probs,
            style_shift: StyleShift::identity(),
        }
    }

    /// Point mass on one config, identity shift.
    pub fn degenerate(schema: &AttributeSchema, config: &AttributeConfig) -> Result<Self> {
        schema.validate_config(config)?;
        let probs = schema
            .dimensions()
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let mut p = vec![0.0; d.cardinality];
                p[config.value(i) as usize] = 1.0;
                p
            })
            .collect();
        Ok(TargetDistribution {
            probs,
            style_shift: StyleShift::identity(),
        })
    }

    /// A seeded, concentrated distribution: each dimension puts `peak_mass`
    /// on one seeded modal value (a second adjacent mode for the circular
    /// dimension) and spreads the rest uniformly. Default testbed target.
    pub fn seeded_peaked(
        schema: &AttributeSchema,
        seed: u64,
        peak_mass: f64,
        style_shift: StyleShift,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&peak_mass) {
            return Err(Error::InvalidArgument(format!(
                "peak mass {peak_mass} outside [0, 1]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7A26_E7));
        let probs = schema
            .dimensions()
            .iter()
            .map(|d| {
                let card = d.cardinality;
                let modal = (rng.next_u64() % card as u64) as usize;
                let rest = (1.0 - peak_mass) / card as f64;
                let mut p = vec![rest; card];
                p[modal] += peak_mass * if d.kind == super::AttrKind::Circular { 0.6 } else { 1.0 };
                if d.kind == super::AttrKind::Circular {
                    p[(modal + 1) % card] += peak_mass * 0.4;
                }
                p
            })
            .collect();
        TargetDistribution::new(schema, probs, style_shift)
    }

    pub fn probabilities(&self) -> &[Vec<f64>] {
        &self.probs
    }

    fn draw_config(&self, rng: &mut ChaCha8Rng) -> AttributeConfig {
        let values = self
            .probs
            .iter()
            .map(|p| {
                let u = unit_f64(rng);
                let mut acc = 0.0;
                for (i, w) in p.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        return i as u32;
                    }
                }
                (p.len() - 1) as u32
            })
            .collect();
        AttributeConfig::new(values)
    }
}

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Draws `n` configs i.i.d. from `dist`, renders them, and applies the style
/// shift. Ground-truth configs stay in the provenance for testbed assertions
/// but are never read by the curation pipeline.
pub fn sample_target_domain(
    renderer: &SceneRenderer,
    dist: &TargetDistribution,
    n: usize,
    seed: u64,
) -> Result<Vec<SceneImage>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7A26_00));
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let config = dist.draw_config(&mut rng);
        let identity = (rng.next_u64() % 10_000) as u32;
        let mut img = renderer.render(&config, identity, derive_seed(seed, i as u64))?;
        dist.style_shift.apply(&mut img);
        img.provenance.domain = DomainTag::Target;
        out.push(img);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_renderer() -> SceneRenderer {
        SceneRenderer::new(AttributeSchema::default_person(), 32, 64).unwrap()
    }

    #[test]
    fn degenerate_distribution_renders_one_config() {
        let r = small_renderer();
        let schema = r.schema().clone();
        let cfg = AttributeConfig::new(vec![0; schema.len()]);
        let dist = TargetDistribution::degenerate(&schema, &cfg).unwrap();
        let imgs = sample_target_domain(&r, &dist, 5, 3).unwrap();
        assert_eq!(imgs.len(), 5);
        for img in &imgs {
            assert_eq!(img.provenance.config.as_ref(), Some(&cfg));
            assert_eq!(img.provenance.domain, DomainTag::Target);
        }
    }

    #[test]
    fn identity_shift_is_pixel_identical_to_plain_render() {
        let r = small_renderer();
        let schema = r.schema().clone();
        let cfg = AttributeConfig::new(vec![0; schema.len()]);
        let dist = TargetDistribution::degenerate(&schema, &cfg).unwrap();
        let imgs = sample_target_domain(&r, &dist, 3, 11).unwrap();
        for (i, img) in imgs.iter().enumerate() {
            let plain = r
                .render(&cfg, img.provenance.identity, derive_seed(11, i as u64))
                .unwrap();
            assert_eq!(img.rgb, plain.rgb);
        }
    }

    #[test]
    fn weather_marginals_follow_distribution() {
        // uniform over weather only; all other dimensions pinned
        let schema = AttributeSchema::default_person();
        let r = SceneRenderer::new(schema.clone(), 16, 16).unwrap();
        let wx = schema.index_of("weather").unwrap();
        let mut probs: Vec<Vec<f64>> = schema
            .dimensions()
            .iter()
            .map(|d| {
                let mut p = vec![0.0; d.cardinality];
                p[0] = 1.0;
                p
            })
            .collect();
        probs[wx] = vec![1.0 / 7.0; 7];
        let dist = TargetDistribution::new(&schema, probs, StyleShift::identity()).unwrap();
        let n = 7000usize;
        let imgs = sample_target_domain(&r, &dist, n, 123).unwrap();
        let mut counts = [0usize; 7];
        for img in &imgs {
            counts[img.provenance.config.as_ref().unwrap().value(wx) as usize] += 1;
        }
        // binomial 3-sigma band around n/7
        let p = 1.0 / 7.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (i, c) in counts.iter().enumerate() {
            assert!(
                (*c as f64 - 1000.0).abs() <= 3.0 * sigma,
                "weather {i}: count {c} outside 1000 +/- {:.1}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn style_shift_validation() {
        assert!(StyleShift { gamma: 0.4, channel_bias: [0.0; 3] }.validate().is_err());
        assert!(StyleShift { gamma: 1.0, channel_bias: [33.0, 0.0, 0.0] }.validate().is_err());
        assert!(StyleShift { gamma: 1.3, channel_bias: [-10.0, 5.0, 0.0] }.validate().is_ok());
    }

    #[test]
    fn distribution_must_sum_to_one() {
        let schema = AttributeSchema::default_person();
        let mut probs: Vec<Vec<f64>> = TargetDistribution::uniform(&schema).probs;
        probs[0][0] += 0.01;
        assert!(TargetDistribution::new(&schema, probs, StyleShift::identity()).is_err());
    }

    #[test]
    fn seeded_peaked_is_valid_and_deterministic() {
        let schema = AttributeSchema::default_person();
        let a = TargetDistribution::seeded_peaked(&schema, 5, 0.6, StyleShift::identity()).unwrap();
        let b = TargetDistribution::seeded_peaked(&schema, 5, 0.6, StyleShift::identity()).unwrap();
        assert_eq!(a.probs, b.probs);
    }
}
