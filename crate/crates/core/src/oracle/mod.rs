//! The classifier under test, seen strictly as a black box: an image goes in,
//! a probability vector comes out. Nothing else about the model is reachable
//! through [`Oracle`].

mod linear;
mod protocol;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use linear::LinearSoftmaxModel;
pub use protocol::{
    serve, Channel, CommandConnector, Connector, ProtocolOracle, Request, Response, TcpConnector,
    DEFAULT_TIMEOUT, PROTOCOL_VERSION,
};

use crate::coverage::OutputTuple;
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

pub trait Oracle: Send + Sync {
    fn n_classes(&self) -> usize;

    fn input_shape(&self) -> Shape;

    /// Probability vector for one image whose shape already matches `input_shape`.
    fn probabilities(&self, image: &ImageTensor) -> Result<Vec<f64>>;

    fn probabilities_batch(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
        images.iter().map(|img| self.probabilities(img)).collect()
    }

    /// Serial oracles get their calls serialized by the engine.
    fn is_serial(&self) -> bool {
        false
    }

    /// Short human-readable descriptor, recorded in suite manifests.
    fn describe(&self) -> String;
}

impl<T: Oracle + ?Sized> Oracle for Box<T> {
    fn n_classes(&self) -> usize {
        (**self).n_classes()
    }
    fn input_shape(&self) -> Shape {
        (**self).input_shape()
    }
    fn probabilities(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        (**self).probabilities(image)
    }
    fn probabilities_batch(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
        (**self).probabilities_batch(images)
    }
    fn is_serial(&self) -> bool {
        (**self).is_serial()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(flatten)]
    pub output: OutputTuple,
    /// Wall time of the oracle call. Never persisted so suites stay byte-reproducible.
    #[serde(skip)]
    pub latency_us: u64,
}

/// Timing is ignored: two predictions are equal when their outputs are.
impl PartialEq for Prediction {
    fn eq(&self, other: &Self) -> bool {
        self.output == other.output
    }
}

impl Prediction {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        Ok(Prediction {
            output: OutputTuple::from_probs(probs)?,
            latency_us: 0,
        })
    }

    pub fn prob_vector(&self) -> &[f64] {
        &self.output.prob_vector
    }

    pub fn predicted_class(&self) -> usize {
        self.output.predicted_class
    }

    pub fn confidence(&self) -> f64 {
        self.output.confidence
    }
}

fn check_shape(oracle: &(impl Oracle + ?Sized), image: &ImageTensor) -> Result<()> {
    if image.shape() != oracle.input_shape() {
        return Err(Error::Input(format!(
            "image shape {} does not match model input shape {}",
            image.shape(),
            oracle.input_shape()
        )));
    }
    Ok(())
}

fn to_prediction(n_classes: usize, probs: Vec<f64>, latency_us: u64) -> Result<Prediction> {
    if probs.len() != n_classes {
        return Err(Error::Protocol(format!(
            "oracle returned {} probabilities for {n_classes} classes",
            probs.len()
        )));
    }
    let mut p = Prediction::from_probs(probs)?;
    p.latency_us = latency_us;
    Ok(p)
}

pub fn predict(oracle: &(impl Oracle + ?Sized), image: &ImageTensor) -> Result<Prediction> {
    check_shape(oracle, image)?;
    let start = Instant::now();
    let probs = oracle.probabilities(image)?;
    to_prediction(
        oracle.n_classes(),
        probs,
        start.elapsed().as_micros() as u64,
    )
}

/// Same results as calling [`predict`] on each image in order.
pub fn predict_batch(
    oracle: &(impl Oracle + ?Sized),
    images: &[ImageTensor],
) -> Result<Vec<Prediction>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    for (i, img) in images.iter().enumerate() {
        check_shape(oracle, img).map_err(|e| Error::Input(format!("image {i}: {e}")))?;
    }
    let start = Instant::now();
    let all = oracle.probabilities_batch(images)?;
    if all.len() != images.len() {
        return Err(Error::Protocol(format!(
            "oracle answered {} of {} batch entries",
            all.len(),
            images.len()
        )));
    }
    let per_item = start.elapsed().as_micros() as u64 / images.len() as u64;
    all.into_iter()
        .enumerate()
        .map(|(i, probs)| {
            to_prediction(oracle.n_classes(), probs, per_item)
                .map_err(|e| Error::Data(format!("image {i}: {e}")))
        })
        .collect()
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Input("softmax of an empty vector".into()));
    }
    if let Some(bad) = logits.iter().find(|z| !z.is_finite()) {
        return Err(Error::Input(format!("non-finite logit {bad}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Opens an oracle from a descriptor:
/// `builtin:desk` (the shipped desk model), `builtin:<model.json>`,
/// `tcp:<host>:<port>`, or `cmd:<shell command>`.
pub fn open_oracle(descriptor: &str) -> Result<Box<dyn Oracle>> {
    if descriptor == "builtin:desk" {
        Ok(Box::new(crate::desk::shipped_model()))
    } else if let Some(path) = descriptor.strip_prefix("builtin:") {
        Ok(Box::new(LinearSoftmaxModel::load(path)?))
    } else if let Some(addr) = descriptor.strip_prefix("tcp:") {
        Ok(Box::new(ProtocolOracle::connect(
            TcpConnector::new(addr),
            DEFAULT_TIMEOUT,
        )?))
    } else if let Some(cmd) = descriptor.strip_prefix("cmd:") {
        Ok(Box::new(ProtocolOracle::connect(
            CommandConnector::new(cmd),
            DEFAULT_TIMEOUT,
        )?))
    } else {
        Err(Error::Config(format!(
            "unknown oracle descriptor {descriptor:?}; expected builtin:, tcp: or cmd:"
        )))
    }
}
