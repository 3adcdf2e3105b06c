//! The shipped desk-scale benchmark: a three-class blob dataset and a
//! template-matching linear classifier for it.
//!
//! Class `c` places a Gaussian spot near a point on a circle around the image
//! center, at angle `90 + 120 c` degrees (counter-clockwise as displayed). The
//! classifier scores each class by correlating the input with a spot rendered
//! on the same circle, but its templates sit [`TEMPLATE_OFFSET_DEGREES`]
//! further round than the data. Every class therefore lies just inside one of
//! its decision boundaries: the model is accurate on the data yet fragile
//! under rotation, which is what the fuzzing and rotation experiments probe.

use crate::dataio::SyntheticBlobs;
use crate::evaluation::RotationSettings;
use crate::fuzzer::FuzzConfig;
use crate::oracle::LinearSoftmaxModel;

pub const DESK_CLASSES: usize = 3;
pub const DESK_SIDE: usize = 16;
/// Distance of the class means from the image center, in pixels.
pub const DESK_RADIUS: f64 = 4.5;
pub const TEMPLATE_OFFSET_DEGREES: f64 = 38.0;
const POSITION_VARIANCE: f64 = 0.8;
const SPOT_SIGMA: f64 = 1.6;
const TEMPLATE_SCALE: f64 = 0.8;
const DATASET_SEED: u64 = 2024;
const DATASET_COUNT: usize = 3000;

pub const BLOBS_TOML: &str = include_str!("../assets/desk_blobs.toml");
pub const MODEL_JSON: &str = include_str!("../assets/desk_model.json");
pub const FUZZ_TOML: &str = include_str!("../assets/desk_fuzz.toml");

/// `[row, col]` of the point at `degrees` on the class circle.
fn on_circle(degrees: f64) -> [f64; 2] {
    let center = (DESK_SIDE as f64 - 1.0) / 2.0;
    let theta = degrees.to_radians();
    [
        center - DESK_RADIUS * theta.sin(),
        center + DESK_RADIUS * theta.cos(),
    ]
}

fn class_angle(c: usize) -> f64 {
    90.0 + 120.0 * c as f64
}

/// Generator parameters for the desk dataset.
pub fn desk_blobs() -> SyntheticBlobs {
    SyntheticBlobs {
        n_classes: DESK_CLASSES,
        height: DESK_SIDE,
        width: DESK_SIDE,
        means: (0..DESK_CLASSES)
            .map(|c| on_circle(class_angle(c)))
            .collect(),
        covariances: vec![[[POSITION_VARIANCE, 0.0], [0.0, POSITION_VARIANCE]]; DESK_CLASSES],
        spot_sigma: SPOT_SIGMA,
        rng_seed: DATASET_SEED,
        count: DATASET_COUNT,
    }
}

/// Template classifier with zero bias.
pub fn desk_model() -> LinearSoftmaxModel {
    let blobs = desk_blobs();
    let mut weights = Vec::with_capacity(DESK_CLASSES * DESK_SIDE * DESK_SIDE);
    for c in 0..DESK_CLASSES {
        let [r, q] = on_circle(class_angle(c) + TEMPLATE_OFFSET_DEGREES);
        weights.extend(
            blobs
                .render(r, q)
                .pixels()
                .iter()
                .map(|&p| TEMPLATE_SCALE * f64::from(p)),
        );
    }
    LinearSoftmaxModel::new(blobs.shape(), weights, vec![0.0; DESK_CLASSES])
        .expect("desk model is well formed")
}

/// Fuzzing settings sized for the desk benchmark. The grid is coarse enough
/// to saturate within a 2,000-iteration budget, and horizontal flips are off
/// because mirroring swaps the two lower classes.
pub fn desk_fuzz_config() -> FuzzConfig {
    FuzzConfig {
        n_bins: 20,
        cap: 5,
        max_iterations: 2000,
        allow_hflip: false,
        seeds_per_class: 50,
        ..FuzzConfig::default()
    }
}

/// Grid settings for the rotation experiment on the desk dataset.
pub fn desk_rotation_settings(rng_seed: u64) -> RotationSettings {
    RotationSettings {
        n_bins: 20,
        cap: 20,
        rng_seed,
        exclude_infeasible: true,
    }
}

pub fn shipped_blobs() -> SyntheticBlobs {
    toml::from_str(BLOBS_TOML).expect("bundled blob spec parses")
}

pub fn shipped_model() -> LinearSoftmaxModel {
    serde_json::from_str(MODEL_JSON).expect("bundled model parses")
}

pub fn shipped_fuzz_config() -> FuzzConfig {
    FuzzConfig::from_toml(FUZZ_TOML).expect("bundled fuzz config parses")
}

pub fn model_json(model: &LinearSoftmaxModel) -> String {
    serde_json::to_string_pretty(model).expect("model serializes") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::predict;

    #[test]
    fn assets_match_generators() {
        assert_eq!(BLOBS_TOML, desk_blobs().to_toml());
        assert_eq!(MODEL_JSON, model_json(&desk_model()));
        assert_eq!(FUZZ_TOML, desk_fuzz_config().to_toml());
        assert_eq!(shipped_blobs(), desk_blobs());
        assert_eq!(shipped_model(), desk_model());
        assert_eq!(shipped_fuzz_config(), desk_fuzz_config());
    }

    #[test]
    fn model_is_accurate_but_not_perfect() {
        let model = shipped_model();
        let data = shipped_blobs().generate().unwrap();
        let correct = data
            .iter()
            .filter(|li| predict(&model, &li.image).unwrap().predicted_class() == li.label)
            .count();
        let acc = correct as f64 / data.len() as f64;
        assert!(acc > 0.9 && acc < 1.0, "accuracy {acc}");
    }
}
