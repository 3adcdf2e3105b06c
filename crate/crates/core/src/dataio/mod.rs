//! Dataset ingestion, seed-set construction and suite persistence.

pub mod idx;
pub mod png;
mod suite;
mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use suite::{
    load_suite, save_suite, trace_csv, LoadedSuite, SuiteManifest, SuiteRecord, MANIFEST_VERSION,
};
pub use synthetic::SyntheticBlobs;

use crate::error::{Error, Result};
use crate::fuzzer::TestInput;
use crate::oracle::{predict_batch, Oracle};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: ImageTensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    IdxPair { images: PathBuf, labels: PathBuf },
    PngDirectory { dir: PathBuf },
    SyntheticBlobs(SyntheticBlobs),
}

impl DatasetSource {
    /// Interprets a command-line path:
    /// `desk` for the shipped blob dataset, a `.toml` blob spec, a directory with `labels.csv`, a directory holding
    /// one `*idx3*` / `*idx1*` pair, an IDX images file (labels found by
    /// substituting `images`/`idx3` with `labels`/`idx1`), or `images,labels`.
    pub fn from_arg(arg: &str) -> Result<Self> {
        if arg == "desk" {
            return Ok(DatasetSource::SyntheticBlobs(crate::desk::shipped_blobs()));
        }
        if let Some((images, labels)) = arg.split_once(',') {
            return Ok(DatasetSource::IdxPair {
                images: images.into(),
                labels: labels.into(),
            });
        }
        let path = Path::new(arg);
        if path.extension().is_some_and(|e| e == "toml") {
            return Ok(DatasetSource::SyntheticBlobs(SyntheticBlobs::load(path)?));
        }
        if path.is_dir() {
            if path.join("labels.csv").is_file() {
                return Ok(DatasetSource::PngDirectory { dir: path.into() });
            }
            let mut names: Vec<PathBuf> = fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            names.sort();
            let find = |tag: &str| {
                names
                    .iter()
                    .find(|p| {
                        p.file_name()
                            .is_some_and(|n| n.to_string_lossy().contains(tag))
                    })
                    .cloned()
            };
            return match (find("idx3"), find("idx1")) {
                (Some(images), Some(labels)) => Ok(DatasetSource::IdxPair { images, labels }),
                _ => Err(Error::Config(format!(
                    "{arg}: directory has neither labels.csv nor an idx3/idx1 pair"
                ))),
            };
        }
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let labels_name = name.replace("images", "labels").replace("idx3", "idx1");
        if labels_name == name {
            return Err(Error::Config(format!(
                "{arg}: cannot infer the labels file"
            )));
        }
        Ok(DatasetSource::IdxPair {
            images: path.into(),
            labels: path.with_file_name(labels_name),
        })
    }
}

/// Loads every `(image, label)` pair in file order, with pixels in `[0, 1]`.
pub fn load_dataset(source: &DatasetSource, n_classes: Option<usize>) -> Result<Vec<LabeledImage>> {
    let items = match source {
        DatasetSource::IdxPair { images, labels } => {
            let imgs = idx::read_images(images)?;
            let lbls = idx::read_labels(labels)?;
            if imgs.len() != lbls.len() {
                return Err(Error::Data(format!(
                    "label/image count mismatch: {} images in {}, {} labels in {}",
                    imgs.len(),
                    images.display(),
                    lbls.len(),
                    labels.display()
                )));
            }
            imgs.into_iter()
                .zip(lbls)
                .map(|(image, label)| LabeledImage { image, label })
                .collect()
        }
        DatasetSource::PngDirectory { dir } => png::read_png_directory(dir)?,
        DatasetSource::SyntheticBlobs(spec) => spec.generate()?,
    };
    if let Some(n) = n_classes {
        if let Some((i, li)) = items.iter().enumerate().find(|(_, li)| li.label >= n) {
            return Err(Error::Data(format!(
                "item {i} has label {} >= {n} classes",
                li.label
            )));
        }
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    pub seeds: Vec<TestInput>,
    /// Classes with no correctly classified image.
    pub skipped_classes: Vec<usize>,
    /// Classes with fewer than `per_class` correct images: `(class, available)`.
    pub short_classes: Vec<(usize, usize)>,
}

/// Picks `per_class` correctly classified images per class uniformly at
/// random. Seed ids are dataset indices; seeds come out class-major in
/// ascending index order.
pub fn build_seed_set(
    items: &[LabeledImage],
    oracle: &(impl Oracle + ?Sized),
    per_class: usize,
    rng: &mut impl Rng,
) -> Result<SeedSet> {
    let n_classes = oracle.n_classes();
    let mut correct: Vec<Vec<(usize, crate::oracle::Prediction)>> = vec![Vec::new(); n_classes];
    const CHUNK: usize = 256;
    for (c, chunk) in items.chunks(CHUNK).enumerate() {
        let images: Vec<ImageTensor> = chunk.iter().map(|li| li.image.clone()).collect();
        for (j, pred) in predict_batch(oracle, &images)?.into_iter().enumerate() {
            let i = c * CHUNK + j;
            if items[i].label < n_classes && pred.predicted_class() == items[i].label {
                correct[items[i].label].push((i, pred));
            }
        }
    }
    let mut set = SeedSet {
        seeds: Vec::new(),
        skipped_classes: Vec::new(),
        short_classes: Vec::new(),
    };
    for (class, mut pool) in correct.into_iter().enumerate() {
        if pool.is_empty() {
            warn!("class {class}: no correctly classified images, skipped");
            set.skipped_classes.push(class);
            continue;
        }
        if pool.len() < per_class {
            warn!(
                "class {class}: only {} correctly classified images",
                pool.len()
            );
            set.short_classes.push((class, pool.len()));
        }
        pool.shuffle(rng);
        pool.truncate(per_class);
        pool.sort_by_key(|(i, _)| *i);
        for (i, pred) in pool {
            let mut seed = TestInput::seed(i as u64, items[i].image.clone(), class);
            seed.prediction = Some(pred);
            set.seeds.push(seed);
        }
    }
    if set.seeds.is_empty() {
        return Err(Error::Config(
            "seed pool is empty: the oracle classifies no image correctly".into(),
        ));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::LinearSoftmaxModel;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Predicts the class whose indicator pixel is brightest.
    fn indicator_model(n: usize) -> LinearSoftmaxModel {
        let mut w = vec![0.0; n * n];
        for c in 0..n {
            w[c * n + c] = 20.0;
        }
        LinearSoftmaxModel::new(Shape::new(1, n, 1), w, vec![0.0; n]).unwrap()
    }

    fn items(n: usize, per: usize) -> Vec<LabeledImage> {
        (0..n * per)
            .map(|i| {
                let c = i % n;
                let mut px = vec![0.0; n];
                px[c] = 1.0;
                LabeledImage {
                    image: ImageTensor::new(Shape::new(1, n, 1), px).unwrap(),
                    label: c,
                }
            })
            .collect()
    }

    #[test]
    fn seed_counts_per_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = build_seed_set(&items(10, 120), &indicator_model(10), 100, &mut rng).unwrap();
        assert_eq!(set.seeds.len(), 1000);
        let set = build_seed_set(&items(100, 12), &indicator_model(100), 10, &mut rng).unwrap();
        assert_eq!(set.seeds.len(), 1000);
        assert!(set
            .seeds
            .iter()
            .all(|s| s.prediction.as_ref().unwrap().predicted_class() == s.ground_truth));
    }

    #[test]
    fn short_and_skipped_classes() {
        let mut data = items(3, 5);
        for li in data.iter_mut().filter(|li| li.label == 2) {
            li.label = 1; // always misclassified now
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = build_seed_set(&data, &indicator_model(3), 8, &mut rng).unwrap();
        assert_eq!(set.skipped_classes, vec![2]);
        assert_eq!(set.short_classes, vec![(0, 5), (1, 5)]);
        assert_eq!(set.seeds.len(), 10);
    }

    #[test]
    fn all_wrong_is_config_error() {
        let data: Vec<_> = items(3, 4)
            .into_iter()
            .map(|mut li| {
                li.label = (li.label + 1) % 3;
                li
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            build_seed_set(&data, &indicator_model(3), 2, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn idx_count_mismatch_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let imgs: Vec<_> = items(2, 2).into_iter().map(|li| li.image).collect();
        fs::write(
            dir.path().join("t-images-idx3-ubyte"),
            idx::encode_images(&imgs).unwrap(),
        )
        .unwrap();
        fs::write(
            dir.path().join("t-labels-idx1-ubyte"),
            idx::encode_labels(&[0, 1, 0]).unwrap(),
        )
        .unwrap();
        let src = DatasetSource::from_arg(dir.path().to_str().unwrap()).unwrap();
        assert!(matches!(load_dataset(&src, None), Err(Error::Data(_))));

        let file = dir.path().join("t-images-idx3-ubyte");
        let src = DatasetSource::from_arg(file.to_str().unwrap()).unwrap();
        assert_eq!(
            src,
            DatasetSource::IdxPair {
                images: file.clone(),
                labels: dir.path().join("t-labels-idx1-ubyte")
            }
        );
    }

    #[test]
    fn label_bound_is_checked() {
        let src = DatasetSource::SyntheticBlobs(SyntheticBlobs {
            n_classes: 3,
            height: 4,
            width: 4,
            means: vec![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]],
            covariances: vec![[[0.1, 0.0], [0.0, 0.1]]; 3],
            spot_sigma: 1.0,
            rng_seed: 0,
            count: 6,
        });
        assert!(load_dataset(&src, Some(3)).is_ok());
        assert!(matches!(load_dataset(&src, Some(2)), Err(Error::Data(_))));
    }
}
