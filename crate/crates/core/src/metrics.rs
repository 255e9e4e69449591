//! Fréchet-distance evaluation of the domain gap per regulation term.
//!
//! Images embed as pooled filter-bank descriptors (per-layer, per-filter
//! means), a Gaussian is fit to each side, and the gap is the 2-Wasserstein
//! distance between the Gaussians. The report labels this a feature-Fréchet
//! distance; it keeps the Fréchet math exact without claiming parity with
//! any pretrained embedding.

use crate::distances::{content_distance, style_from_grams, total_distance, DistanceParams};
use crate::error::{Error, Result};
use crate::features::{gram, Extractor, FeaturePyramid, GramMatrix};
use crate::scenegen::SceneImage;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Per-layer, per-filter mean over positions, concatenated ascending by
/// layer then filter. Length is the sum of filter counts (92 by default).
pub fn pool_descriptor(pyramid: &FeaturePyramid) -> Vec<f64> {
    let mut out = Vec::with_capacity(pyramid.maps().iter().map(|m| m.filters).sum());
    for map in pyramid.maps() {
        for f in 0..map.filters {
            let mut acc = 0.0f64;
            for v in map.row(f) {
                acc += *v as f64;
            }
            out.push(acc / map.positions as f64);
        }
    }
    out
}

/// Sample mean and unbiased covariance of a descriptor set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    /// Symmetrized covariance, divisor n - 1.
    pub cov: DMatrix<f64>,
    pub count: usize,
}

pub fn fit_gaussian(descriptors: &[Vec<f64>]) -> Result<GaussianFit> {
    let n = descriptors.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 descriptors, got {n}"
        )));
    }
    let d = descriptors[0].len();
    if descriptors.iter().any(|x| x.len() != d) {
        return Err(Error::Shape("descriptor lengths disagree".into()));
    }

    let mut mean = vec![0.0f64; d];
    for x in descriptors {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    let mut cov = DMatrix::<f64>::zeros(d, d);
    for x in descriptors {
        for i in 0..d {
            let di = x[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += di * (x[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    // symmetrize: a no-op for this construction, but guaranteed by contract
    let cov = (&cov + cov.transpose()) * 0.5;

    Ok(GaussianFit {
        mean: DVector::from_vec(mean),
        cov,
        count: n,
    })
}

/// Symmetric PSD square root by eigendecomposition. Eigenvalues below
/// `1e-10 * max_eigenvalue` clamp to zero.
fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let thresh = 1e-10 * max;
    let sqrt = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| if l < thresh { 0.0 } else { l.sqrt() }),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussian fits:
/// `||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`, with the matrix
/// square root taken through `S_a^{1/2} S_b S_a^{1/2}` and the result
/// clamped at zero.
pub fn fid(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::Shape(format!(
            "gaussian dimensions {} vs {}",
            a.mean.len(),
            b.mean.len()
        )));
    }
    if a.cov.iter().any(|v| !v.is_finite()) || b.cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite covariance entry".into()));
    }
    // identical fits are exactly zero by definition
    if a.mean == b.mean && a.cov == b.cov {
        return Ok(0.0);
    }

    let mut mean_term = 0.0f64;
    for (x, y) in a.mean.iter().zip(b.mean.iter()) {
        let d = x - y;
        mean_term += d * d;
    }

    let sqrt_a = sym_sqrt(&a.cov);
    let product = &sqrt_a * &b.cov * &sqrt_a;
    let product = (&product + product.transpose()) * 0.5;
    let eig = product.symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let thresh = 1e-10 * max;
    let tr_sqrt: f64 = eig
        .eigenvalues
        .iter()
        .map(|&l| if l < thresh { 0.0 } else { l.sqrt() })
        .sum();

    let pre = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    Ok(pre.max(0.0))
}

/// One evaluated regulation term.
#[derive(Debug, Clone, PartialEq)]
pub struct RegulationRow {
    pub regulation: String,
    pub d_style: f64,
    pub d_content: f64,
    pub d_total: f64,
    pub fid: f64,
}

/// The per-regulation gap table (random / AO / AO+ST in pipeline use).
#[derive(Debug, Clone, PartialEq)]
pub struct DomainGapReport {
    pub rows: Vec<RegulationRow>,
}

impl DomainGapReport {
    /// CSV with header `regulation,d_style,d_content,d_total,fid`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("regulation,d_style,d_content,d_total,fid\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.regulation, r.d_style, r.d_content, r.d_total, r.fid
            ));
        }
        s
    }

    pub fn row(&self, regulation: &str) -> Option<&RegulationRow> {
        self.rows.iter().find(|r| r.regulation == regulation)
    }
}

/// Evaluates labeled image sets against the target domain: the pairwise mean
/// style/content/total distance against the reference pyramids, and the
/// Fréchet distance between descriptor Gaussians (subset vs full target).
pub fn evaluate_regulations(
    subsets: &[(String, Vec<SceneImage>)],
    target: &[SceneImage],
    extractor: &Extractor,
    params: &DistanceParams,
    ref_indices: &[usize],
) -> Result<DomainGapReport> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("target image list is empty".into()));
    }
    if ref_indices.is_empty() {
        return Err(Error::InvalidArgument("reference index list is empty".into()));
    }
    if let Some(&bad) = ref_indices.iter().find(|&&i| i >= target.len()) {
        return Err(Error::InvalidArgument(format!(
            "reference index {bad} out of range for {} target images",
            target.len()
        )));
    }
    params.validate()?;

    // full-target descriptor Gaussian
    let target_descriptors: Vec<Vec<f64>> = target
        .par_iter()
        .map(|img| extractor.extract(img).map(|p| pool_descriptor(&p)))
        .collect::<Result<Vec<_>>>()?;
    let target_fit = fit_gaussian(&target_descriptors)?;

    // reference pyramids for the distance side
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

    let mut rows = Vec::with_capacity(subsets.len());
    for (label, images) in subsets {
        if images.is_empty() {
            return Err(Error::InvalidArgument(format!("subset `{label}` is empty")));
        }
        // per-image work in parallel, folded in image order so results do
        // not depend on the thread count
        let per_image: Vec<(Vec<f64>, f64, f64)> = images
            .par_iter()
            .map(|img| -> Result<(Vec<f64>, f64, f64)> {
                let pyr = extractor.extract(img)?;
                let descriptor = pool_descriptor(&pyr);
                let grams: Vec<GramMatrix> = pyr.maps().iter().map(gram).collect();
                let content = pyr.map(content_layer);
                let mut style_sum = 0.0f64;
                let mut content_sum = 0.0f64;
                for (rg, r) in ref_grams.iter().zip(&refs) {
                    style_sum += style_from_grams(&grams, rg, &weights, positions.clone())?;
                    content_sum += content_distance(content, r.map(content_layer))?;
                }
                Ok((descriptor, style_sum, content_sum))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut style_sum = 0.0f64;
        let mut content_sum = 0.0f64;
        let mut descriptors = Vec::with_capacity(per_image.len());
        for (d, s, c) in per_image {
            style_sum += s;
            content_sum += c;
            descriptors.push(d);
        }
        let pairs = (images.len() * ref_indices.len()) as f64;
        let d_style = style_sum / pairs;
        let d_content = content_sum / pairs;
        let subset_fit = fit_gaussian(&descriptors)?;
        rows.push(RegulationRow {
            regulation: label.clone(),
            d_style,
            d_content,
            d_total: total_distance(d_style, d_content, params),
            fid: fid(&subset_fit, &target_fit)?,
        });
    }

    Ok(DomainGapReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{ExtractorSpec, FeatureMap};
    use crate::scenegen::derive_seed;

    fn gaussian_1d(mu: f64, var: f64) -> GaussianFit {
        GaussianFit {
            mean: DVector::from_vec(vec![mu]),
            cov: DMatrix::from_vec(1, 1, vec![var]),
            count: 2,
        }
    }

    #[test]
    fn descriptor_length_and_zero_input() {
        let spec = ExtractorSpec::default();
        assert_eq!(spec.descriptor_len(), 92);
        let maps = spec
            .filters_per_layer
            .iter()
            .enumerate()
            .map(|(l, &n)| FeatureMap::new(l, n, 4, vec![0.0; n * 4]).unwrap())
            .collect();
        let pyr = FeaturePyramid::new(maps, spec.uniform_layer_weights()).unwrap();
        let d = pool_descriptor(&pyr);
        assert_eq!(d.len(), 92);
        assert!(d.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn descriptor_scales_linearly() {
        let maps = vec![FeatureMap::new(0, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()];
        let pyr = FeaturePyramid::new(maps, vec![1.0]).unwrap();
        let maps2 = vec![FeatureMap::new(0, 2, 3, vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0]).unwrap()];
        let pyr2 = FeaturePyramid::new(maps2, vec![1.0]).unwrap();
        let (a, b) = (pool_descriptor(&pyr), pool_descriptor(&pyr2));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*y, 2.0 * x);
        }
    }

    #[test]
    fn gaussian_fit_hand_examples() {
        // identical descriptors: zero covariance
        let fit = fit_gaussian(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(fit.cov.iter().all(|v| *v == 0.0));

        // two 1-D samples {0, 2}: mean 1, unbiased variance 2
        let fit = fit_gaussian(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(fit.mean[0], 1.0);
        assert_eq!(fit.cov[(0, 0)], 2.0);

        assert!(fit_gaussian(&[vec![1.0]]).is_err());
    }

    #[test]
    fn gaussian_fit_recovers_seeded_mean() {
        // 500 draws from a known 3-D gaussian; each coordinate within 3 sigma/sqrt(n)
        let n = 500;
        let mut state = 99u64;
        let mut unit = move || {
            state = derive_seed(state, 1);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut normal = move || {
            // Box-Muller
            let u1 = unit().max(1e-12);
            let u2 = unit();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        let mu = [5.0, -3.0, 0.5];
        let sigma = [2.0, 0.5, 1.0];
        let samples: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|d| mu[d] + sigma[d] * normal()).collect())
            .collect();
        let fit = fit_gaussian(&samples).unwrap();
        for d in 0..3 {
            let band = 3.0 * sigma[d] / (n as f64).sqrt();
            assert!(
                (fit.mean[d] - mu[d]).abs() <= band,
                "coord {d}: {} vs {} (band {band})",
                fit.mean[d],
                mu[d]
            );
        }
    }

    #[test]
    fn fid_closed_form_1d() {
        let a = gaussian_1d(0.0, 1.0);
        let b = gaussian_1d(1.0, 1.0);
        let got = fid(&a, &b).unwrap();
        assert!((got - 1.0).abs() <= 1e-8, "fid {got}");
        assert_eq!(fid(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn fid_diagonal_matches_scalar_sum_oracle() {
        let d = 5;
        let va = [1.0, 2.0, 0.5, 3.0, 1.5];
        let vb = [2.0, 1.0, 0.5, 0.25, 4.0];
        let ma = [0.0, 1.0, -2.0, 0.5, 3.0];
        let mb = [1.0, 1.0, 2.0, 0.5, -1.0];
        let a = GaussianFit {
            mean: DVector::from_row_slice(&ma),
            cov: DMatrix::from_diagonal(&DVector::from_row_slice(&va)),
            count: 10,
        };
        let b = GaussianFit {
            mean: DVector::from_row_slice(&mb),
            cov: DMatrix::from_diagonal(&DVector::from_row_slice(&vb)),
            count: 10,
        };
        let got = fid(&a, &b).unwrap();
        let mut oracle = 0.0;
        for i in 0..d {
            let dm = ma[i] - mb[i];
            let ds = va[i].sqrt() - vb[i].sqrt();
            oracle += dm * dm + ds * ds;
        }
        assert!((got - oracle).abs() <= 1e-8, "{got} vs {oracle}");
    }

    #[test]
    fn fid_is_symmetric_and_translation_covariant() {
        let mut state = 7u64;
        let mut unit = move || {
            state = derive_seed(state, 1);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let sample = |unit: &mut dyn FnMut() -> f64, shift: f64| -> Vec<Vec<f64>> {
            (0..40)
                .map(|_| (0..4).map(|_| unit() * 3.0 + shift).collect())
                .collect()
        };
        let xs = sample(&mut unit, 0.0);
        let ys = sample(&mut unit, 1.0);
        let a = fit_gaussian(&xs).unwrap();
        let b = fit_gaussian(&ys).unwrap();
        let ab = fid(&a, &b).unwrap();
        let ba = fid(&b, &a).unwrap();
        assert!((ab - ba).abs() <= 1e-8 * ab.max(1.0));

        // shift both descriptor sets by the same vector
        let shift = [10.0, -5.0, 2.0, 0.5];
        let shifted = |v: &[Vec<f64>]| -> Vec<Vec<f64>> {
            v.iter()
                .map(|x| x.iter().zip(&shift).map(|(a, s)| a + s).collect())
                .collect()
        };
        let a2 = fit_gaussian(&shifted(&xs)).unwrap();
        let b2 = fit_gaussian(&shifted(&ys)).unwrap();
        let ab2 = fid(&a2, &b2).unwrap();
        assert!((ab - ab2).abs() <= 1e-8 * ab.max(1.0), "{ab} vs {ab2}");
    }

    #[test]
    fn fid_rejects_mismatched_dims() {
        let a = gaussian_1d(0.0, 1.0);
        let b = GaussianFit {
            mean: DVector::from_vec(vec![0.0, 0.0]),
            cov: DMatrix::identity(2, 2),
            count: 2,
        };
        assert!(fid(&a, &b).is_err());
    }

    #[test]
    fn report_csv_shape() {
        let report = DomainGapReport {
            rows: vec![RegulationRow {
                regulation: "random".into(),
                d_style: 1.5,
                d_content: 2.0,
                d_total: 3.35,
                fid: 0.25,
            }],
        };
        let csv = report.to_csv();
        assert!(csv.starts_with("regulation,d_style,d_content,d_total,fid\n"));
        assert!(csv.contains("random,1.5,2,3.35,0.25"));
    }
}
