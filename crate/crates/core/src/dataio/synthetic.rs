use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledImage;
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

/// Images of a single Gaussian spot whose position is drawn from a per-class
/// 2-D Gaussian cluster.
///
/// Item `i` belongs to class `i % n_classes`. Its spot center `(row, col)` is
/// drawn from `N(means[c], covariances[c])`; pixel `(r, q)` is
/// `exp(-((r - row)^2 + (q - col)^2) / (2 spot_sigma^2))`, quantized to 8 bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBlobs {
    pub n_classes: usize,
    pub height: usize,
    pub width: usize,
    /// Cluster centers as `[row, col]` in pixel coordinates.
    pub means: Vec<[f64; 2]>,
    /// Row-major 2x2 covariance per class.
    pub covariances: Vec<[[f64; 2]; 2]>,
    pub spot_sigma: f64,
    pub rng_seed: u64,
    pub count: usize,
}

impl SyntheticBlobs {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SyntheticBlobs = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            offset: e.span().map(|s| s.start as u64).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("blob spec serializes")
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.height, self.width, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("synthetic blobs need >= 2 classes".into()));
        }
        if self.means.len() != self.n_classes || self.covariances.len() != self.n_classes {
            return Err(Error::Config(
                "one mean and one covariance per class required".into(),
            ));
        }
        if self.height == 0 || self.width == 0 || self.spot_sigma.is_nan() || self.spot_sigma <= 0.0
        {
            return Err(Error::Config(
                "image size and spot_sigma must be positive".into(),
            ));
        }
        for (c, cov) in self.covariances.iter().enumerate() {
            let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
            if cov[0][1] != cov[1][0] || cov[0][0] < 0.0 || det < 0.0 {
                return Err(Error::Config(format!(
                    "covariance {c} is not symmetric PSD"
                )));
            }
        }
        Ok(())
    }

    /// Renders a spot centered at `(row, col)`.
    pub fn render(&self, row: f64, col: f64) -> ImageTensor {
        let s2 = 2.0 * self.spot_sigma * self.spot_sigma;
        let mut px = Vec::with_capacity(self.height * self.width);
        for r in 0..self.height {
            for q in 0..self.width {
                let d2 = (r as f64 - row).powi(2) + (q as f64 - col).powi(2);
                px.push((-d2 / s2).exp() as f32);
            }
        }
        ImageTensor::from_unclamped(self.shape(), px).quantized()
    }

    pub fn generate(&self) -> Result<Vec<LabeledImage>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        let chol: Vec<[f64; 3]> = self
            .covariances
            .iter()
            .map(|c| {
                let l00 = c[0][0].sqrt();
                let l10 = if l00 > 0.0 { c[1][0] / l00 } else { 0.0 };
                let l11 = (c[1][1] - l10 * l10).max(0.0).sqrt();
                [l00, l10, l11]
            })
            .collect();
        Ok((0..self.count)
            .map(|i| {
                let label = i % self.n_classes;
                let z0: f64 = StandardNormal.sample(&mut rng);
                let z1: f64 = StandardNormal.sample(&mut rng);
                let [l00, l10, l11] = chol[label];
                let [mr, mc] = self.means[label];
                LabeledImage {
                    image: self.render(mr + l00 * z0, mc + l10 * z0 + l11 * z1),
                    label,
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticBlobs {
        SyntheticBlobs {
            n_classes: 2,
            height: 8,
            width: 8,
            means: vec![[2.0, 2.0], [5.0, 5.0]],
            covariances: vec![[[1.0, 0.2], [0.2, 1.0]]; 2],
            spot_sigma: 1.0,
            rng_seed: 3,
            count: 10,
        }
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = spec().generate().unwrap();
        assert_eq!(a, spec().generate().unwrap());
        assert_eq!(a.iter().filter(|li| li.label == 0).count(), 5);
        assert!(a.iter().all(|li| li.image.is_quantized()));
    }

    #[test]
    fn spot_peaks_at_center() {
        let img = spec().render(3.0, 4.0);
        assert_eq!(img.get(3, 4, 0), 1.0);
        assert!(img.get(0, 0, 0) < 0.01);
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let s = spec();
        let back: SyntheticBlobs = toml::from_str(&s.to_toml()).unwrap();
        assert_eq!(back, s);
        let mut bad = spec();
        bad.means.pop();
        assert!(bad.validate().is_err());
        let mut bad = spec();
        bad.covariances[0] = [[1.0, 0.5], [0.0, 1.0]];
        assert!(bad.validate().is_err());
    }
}
