//! Black-box fuzz testing for probabilistic classifiers, guided by
//! co-domain coverage: the model's outputs are clustered by predicted class
//! and confidence bin, and a mutant is kept only if it lands in a cluster
//! that still has room.

pub mod coverage;
pub mod dataio;
pub mod desk;
pub mod error;
pub mod evaluation;
pub mod fuzzer;
pub mod mutation;
pub mod oracle;
pub mod tensor;

pub use coverage::{bin_index, infeasible_cells, CoverageMatrix, CoverageSnapshot, OutputTuple};
pub use error::{Error, Result};
pub use fuzzer::{run_fuzz, FuzzConfig, FuzzReport, TestInput, TestSuite};
pub use oracle::{predict, predict_batch, softmax, LinearSoftmaxModel, Oracle, Prediction};
pub use tensor::{ImageTensor, Shape};
