use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{softmax, Oracle};
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

/// Built-in reference classifier: `softmax(W x + b)`.
///
/// File format: `{"n_classes", "input_shape": [H, W, C], "weights": [...], "bias": [...]}`
/// with `weights` flattened row-major (`n_classes` rows of `H*W*C`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct LinearSoftmaxModel {
    n_classes: usize,
    input_shape: Shape,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    n_classes: usize,
    input_shape: Shape,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl TryFrom<ModelFile> for LinearSoftmaxModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        LinearSoftmaxModel::new(f.input_shape, f.weights, f.bias)
    }
}

impl From<LinearSoftmaxModel> for ModelFile {
    fn from(m: LinearSoftmaxModel) -> Self {
        ModelFile {
            n_classes: m.n_classes,
            input_shape: m.input_shape,
            weights: m.weights,
            bias: m.bias,
        }
    }
}

impl LinearSoftmaxModel {
    pub fn new(input_shape: Shape, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let n_classes = bias.len();
        if n_classes < 2 {
            return Err(Error::Config(format!(
                "model needs >= 2 classes, got {n_classes}"
            )));
        }
        if input_shape.is_empty() {
            return Err(Error::Config(
                "model input shape has a zero dimension".into(),
            ));
        }
        if weights.len() != n_classes * input_shape.len() {
            return Err(Error::Config(format!(
                "weights hold {} values, expected {n_classes} x {}",
                weights.len(),
                input_shape.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Config("model parameters must be finite".into()));
        }
        Ok(LinearSoftmaxModel {
            n_classes,
            input_shape,
            weights,
            bias,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            offset: 0,
            message: e.to_string(),
        })?;
        if file.n_classes != file.bias.len() {
            return Err(Error::Config(format!(
                "{}: n_classes {} disagrees with bias length {}",
                path.display(),
                file.n_classes,
                file.bias.len()
            )));
        }
        file.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self).expect("model serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Sequential f64 accumulation, so results are bit-reproducible.
    pub fn logits(&self, image: &ImageTensor) -> Vec<f64> {
        let x = image.pixels();
        let d = x.len();
        self.weights
            .chunks_exact(d)
            .zip(&self.bias)
            .map(|(row, b)| {
                row.iter()
                    .zip(x)
                    .fold(*b, |acc, (w, &p)| acc + w * f64::from(p))
            })
            .collect()
    }
}

impl Oracle for LinearSoftmaxModel {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn input_shape(&self) -> Shape {
        self.input_shape
    }

    fn probabilities(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        if image.shape() != self.input_shape {
            return Err(Error::Input(format!(
                "image shape {} does not match model input shape {}",
                image.shape(),
                self.input_shape
            )));
        }
        softmax(&self.logits(image))
    }

    fn describe(&self) -> String {
        format!(
            "builtin-linear-softmax({} classes, {})",
            self.n_classes, self.input_shape
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::predict;

    #[test]
    fn zero_model_is_uniform_with_low_tie_break() {
        let shape = Shape::new(2, 2, 1);
        let m = LinearSoftmaxModel::new(shape, vec![0.0; 16], vec![0.0; 4]).unwrap();
        let p = predict(&m, &ImageTensor::zeros(shape)).unwrap();
        assert_eq!(p.prob_vector(), &[0.25; 4]);
        assert_eq!(p.predicted_class(), 0);
    }

    #[test]
    fn bias_only_logits() {
        let shape = Shape::new(1, 1, 1);
        let m = LinearSoftmaxModel::new(shape, vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        let p = predict(&m, &ImageTensor::zeros(shape)).unwrap();
        assert!((p.prob_vector()[0] - 0.7311).abs() < 1e-4);
        assert!((p.prob_vector()[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn shape_mismatch_is_input_error() {
        let m = LinearSoftmaxModel::new(Shape::new(1, 2, 1), vec![0.0; 4], vec![0.0; 2]).unwrap();
        let err = predict(&m, &ImageTensor::zeros(Shape::new(2, 1, 1))).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn rejects_inconsistent_parameters() {
        let s = Shape::new(1, 2, 1);
        assert!(LinearSoftmaxModel::new(s, vec![0.0; 3], vec![0.0; 2]).is_err());
        assert!(LinearSoftmaxModel::new(s, vec![0.0; 2], vec![0.0]).is_err());
        assert!(LinearSoftmaxModel::new(s, vec![f64::NAN, 0.0, 0.0, 0.0], vec![0.0; 2]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = LinearSoftmaxModel::new(
            Shape::new(1, 2, 1),
            vec![0.5, -1.0, 2.0, 0.25],
            vec![0.1, -0.1],
        )
        .unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"input_shape\":[1,2,1]"));
        let back: LinearSoftmaxModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
