use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numerics::{mean_and_covariance, psd_sqrt, Matrix, RngState};
use crate::{Error, Result};

/// Fréchet distance between Gaussians fitted to the rows of `a` and `b`:
/// `|μa − μb|² + Tr(Σa + Σb − 2(ΣaΣb)^½)`.
///
/// The matrix root is taken as `(Σa^½ Σb Σa^½)^½`, which is symmetric PSD
/// and has the same trace. Negative round-off is clamped to zero.
pub fn frechet_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "feature widths differ: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let (mu_a, cov_a) = mean_and_covariance(a)?;
    let (mu_b, cov_b) = mean_and_covariance(b)?;
    frechet_from_moments(&mu_a, &cov_a, &mu_b, &cov_b)
}

pub fn frechet_from_moments(mu_a: &[f64], cov_a: &Matrix, mu_b: &[f64], cov_b: &Matrix) -> Result<f64> {
    // Fixed argument order keeps the result bit-for-bit symmetric.
    if sqrt_side_first(cov_b, cov_a) {
        return frechet_from_moments(mu_b, cov_b, mu_a, cov_a);
    }
    let mean_term: f64 = mu_a.iter().zip(mu_b).map(|(x, y)| (x - y) * (x - y)).sum();
    let root_a = psd_sqrt(cov_a)?;
    let inner = root_a.matmul(cov_b)?.matmul(&root_a)?;
    // symmetric up to round-off from the products
    let inner = symmetrize(&inner);
    let cross = psd_sqrt(&inner)?.trace();
    let value = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

/// Whether `x` should be the side whose square root is taken: the larger
/// trace, ties broken by the raw bits.
fn sqrt_side_first(x: &Matrix, y: &Matrix) -> bool {
    let key = |m: &Matrix| m.trace();
    match key(x).total_cmp(&key(y)) {
        std::cmp::Ordering::Equal => {
            let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            bits(x) > bits(y)
        }
        o => o.is_gt(),
    }
}

fn symmetrize(m: &Matrix) -> Matrix {
    let n = m.rows();
    let mut out = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out
}

/// Embedding in which Fréchet distances are measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureExtractor {
    IdentityFlatten,
    /// Fixed Gaussian projection to `dim` features, entries `N(0, 1/dim)`.
    RandomProjection { dim: usize, seed: u64 },
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor::RandomProjection { dim: 32, seed: 0 }
    }
}

impl fmt::Display for FeatureExtractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureExtractor::IdentityFlatten => write!(f, "identity"),
            FeatureExtractor::RandomProjection { dim, seed } => write!(f, "projection:{dim}:{seed}"),
        }
    }
}

/// Parses `identity`, `projection:DIM` or `projection:DIM:SEED`.
impl FromStr for FeatureExtractor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("bad extractor spec {s:?}"));
        match parts.as_slice() {
            ["identity"] => Ok(Self::IdentityFlatten),
            ["projection", dim] => Ok(Self::RandomProjection {
                dim: dim.parse().map_err(|_| bad())?,
                seed: 0,
            }),
            ["projection", dim, seed] => Ok(Self::RandomProjection {
                dim: dim.parse().map_err(|_| bad())?,
                seed: seed.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for FeatureExtractor {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureExtractor> for String {
    fn from(e: FeatureExtractor) -> String {
        e.to_string()
    }
}

/// An extractor bound to an input width, with its projection materialized.
#[derive(Clone, Debug)]
pub struct PreparedExtractor {
    spec: FeatureExtractor,
    projection: Option<Matrix>,
}

impl PreparedExtractor {
    pub fn new(spec: FeatureExtractor, input_dim: usize) -> Result<Self> {
        let projection = match spec {
            FeatureExtractor::IdentityFlatten => None,
            FeatureExtractor::RandomProjection { dim, seed } => {
                if dim == 0 {
                    return Err(Error::Config("projection dim must be positive".into()));
                }
                let mut rng = RngState::new(seed);
                let scale = 1.0 / (dim as f64).sqrt();
                let data = (0..input_dim * dim).map(|_| rng.normal() * scale).collect();
                Some(Matrix::new(input_dim, dim, data)?)
            }
        };
        Ok(Self { spec, projection })
    }

    pub fn spec(&self) -> FeatureExtractor {
        self.spec
    }

    pub fn projection(&self) -> Option<&Matrix> {
        self.projection.as_ref()
    }

    pub fn apply(&self, images: &Matrix) -> Result<Matrix> {
        match &self.projection {
            None => Ok(images.clone()),
            Some(p) => images.matmul(p),
        }
    }
}

pub fn extract_features(images: &Matrix, extractor: FeatureExtractor) -> Result<Matrix> {
    PreparedExtractor::new(extractor, images.cols())?.apply(images)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_rows(rng: &mut RngState, n: usize, mean: f64, sd: f64) -> Matrix {
        Matrix::new(n, 1, (0..n).map(|_| mean + sd * rng.normal()).collect()).unwrap()
    }

    #[test]
    fn identical_inputs_give_zero() {
        let mut rng = RngState::new(1);
        let a = Matrix::new(50, 3, (0..150).map(|_| rng.normal()).collect()).unwrap();
        assert!(frechet_distance(&a, &a).unwrap() <= 1e-8);
    }

    #[test]
    fn one_dimensional_closed_form() {
        let mut rng = RngState::new(2);
        let a = gaussian_rows(&mut rng, 20_000, 0.0, 1.0);
        let b = gaussian_rows(&mut rng, 20_000, 3.0, 2.0);
        let fd = frechet_distance(&a, &b).unwrap();
        assert!((fd - 10.0).abs() <= 0.5, "{fd}");
        let swapped = frechet_distance(&b, &a).unwrap();
        assert!((fd - swapped).abs() <= 1e-10);
    }

    #[test]
    fn width_mismatch() {
        assert!(frechet_distance(&Matrix::zeros(3, 2), &Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn extractors() {
        let mut rng = RngState::new(3);
        let x = Matrix::new(5, 784, (0..5 * 784).map(|_| rng.uniform()).collect()).unwrap();
        assert_eq!(extract_features(&x, FeatureExtractor::IdentityFlatten).unwrap(), x);
        let spec = FeatureExtractor::RandomProjection { dim: 32, seed: 9 };
        let f = extract_features(&x, spec).unwrap();
        assert_eq!(f.shape(), (5, 32));
        assert_eq!(f, extract_features(&x, spec).unwrap());
        let a = PreparedExtractor::new(spec, 784).unwrap();
        let b = PreparedExtractor::new(spec, 784).unwrap();
        assert_eq!(a.projection(), b.projection());
    }

    #[test]
    fn extractor_specs_parse() {
        assert_eq!("identity".parse::<FeatureExtractor>().unwrap(), FeatureExtractor::IdentityFlatten);
        assert_eq!(
            "projection:16:4".parse::<FeatureExtractor>().unwrap(),
            FeatureExtractor::RandomProjection { dim: 16, seed: 4 }
        );
        let round = FeatureExtractor::RandomProjection { dim: 8, seed: 2 };
        assert_eq!(round.to_string().parse::<FeatureExtractor>().unwrap(), round);
        assert!("projection:x".parse::<FeatureExtractor>().is_err());
    }
}
