//! Transfer to a different gel through a trainable input layer.
//!
//! The augmented model is an ordinary [`MlpModel`] whose first layer is the
//! `2m x 2m` calibration layer (identity weights, zero bias, ReLU) and whose
//! remaining layers are the frozen backbone. The calibration layer shifts the
//! angle inputs by [`ANGLE_OFFSET`] before the ReLU and back after it, so
//! angles in `(-pi, pi]` pass through unchanged and the augmented model starts
//! out computing exactly what the backbone computes.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{CalibrationConfig, SensorConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::nn::{train, Activation, Layer, MlpModel, TrainOptions, TrainReport};

/// Shift applied to angle inputs inside the calibration layer.
pub const ANGLE_OFFSET: f32 = std::f32::consts::PI;

pub const STIFFNESS_FACTOR: f64 = 1.3;
pub const CAMERA_SHIFT_MM: f64 = 1.0;

/// The "different gel": stiffer by [`STIFFNESS_FACTOR`], camera moved back by
/// [`CAMERA_SHIFT_MM`], markers drawn from `marker_seed`.
pub fn perturbed_sensor(base: &SensorConfig, marker_seed: u64) -> SensorConfig {
    SensorConfig {
        youngs_modulus_kpa: base.youngs_modulus_kpa * STIFFNESS_FACTOR,
        camera_distance_mm: base.camera_distance_mm + CAMERA_SHIFT_MM,
        rng_seed: marker_seed,
        ..base.clone()
    }
}

/// Prepends an identity-initialised ReLU layer and freezes the backbone.
pub fn augment(model: &MlpModel<f32>, m: usize) -> Result<MlpModel<f32>> {
    let width = 2 * m;
    if model.input_width() != width {
        return Err(Error::Shape {
            what: "backbone input width (2m)",
            expected: width,
            found: model.input_width(),
        });
    }
    let offset = Array1::from_shape_fn(width, |j| if j < m { 0.0 } else { ANGLE_OFFSET });
    let calib = Layer {
        weights: Array2::eye(width),
        bias: Array1::zeros(width),
        activation: Activation::Relu,
        frozen: false,
        dropout: false,
        offset: Some(offset),
    };
    let layers = std::iter::once(calib)
        .chain(model.layers.iter().cloned().map(|l| Layer { frozen: true, ..l }))
        .collect();
    MlpModel::from_layers(layers)
}

/// Backbone layers of an augmented model.
pub fn backbone(aug: &MlpModel<f32>) -> &[Layer<f32>] {
    &aug.layers[1..]
}

fn check_augmented(aug: &MlpModel<f32>) -> Result<()> {
    let ok = aug.layers.len() >= 2
        && !aug.layers[0].frozen
        && aug.layers[0].activation == Activation::Relu
        && aug.layers[0].inputs() == aug.layers[0].outputs()
        && backbone(aug).iter().all(|l| l.frozen);
    if ok {
        Ok(())
    } else {
        Err(Error::invariant(
            "not an augmented model (expected a square trainable ReLU layer over a frozen backbone)",
        ))
    }
}

/// Trains only the calibration layer.
pub fn calibrate(
    aug: &mut MlpModel<f32>,
    calib_train: &Dataset,
    calib_val: &Dataset,
    cfg: &CalibrationConfig,
    seed: u64,
) -> Result<TrainReport> {
    check_augmented(aug)?;
    if calib_train.is_empty() {
        return Err(Error::Empty("empty calibration set"));
    }
    if calib_val.is_empty() {
        return Err(Error::Empty("empty calibration validation set"));
    }
    aug.expect_shape(calib_train.m, calib_train.n)?;
    let opts = TrainOptions::from_calibration(cfg, seed);
    train(
        aug,
        (&calib_train.inputs(), &calib_train.targets()),
        (&calib_val.inputs(), &calib_val.targets()),
        &opts,
    )
}

/// Splits the first `size` entries of a pool into calibration train and
/// validation parts. The validation part holds `round(size * val_fraction)`
/// samples, at least one.
pub fn calibration_split(pool: &Dataset, size: usize, val_fraction: f64) -> Result<(Dataset, Dataset)> {
    if size < 2 {
        return Err(Error::invariant(format!(
            "calibration needs at least 2 samples (got {size})"
        )));
    }
    if size > pool.len() {
        return Err(Error::invariant(format!(
            "calibration size {size} exceeds the {} available samples",
            pool.len()
        )));
    }
    let n_val = ((size as f64 * val_fraction).round() as usize).clamp(1, size - 1);
    let idx: Vec<usize> = (0..size).collect();
    Ok((pool.subset(&idx[n_val..]), pool.subset(&idx[..n_val])))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub size: usize,
    pub report: EvalReport,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    /// Uncalibrated backbone on the shared test set.
    pub baseline: EvalReport,
    pub rows: Vec<SweepRow>,
    pub test_size: usize,
}

impl SweepResult {
    /// One header line plus one row per size.
    pub fn to_csv(&self) -> String {
        let mut out = format!("size,{},epochs\n", EvalReport::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.size, r.report.csv_row(), r.epochs_run));
        }
        out
    }
}

/// Calibrates fresh augmentations of `backbone_model` on growing portions of
/// a seeded shuffle of `data`. Every size is scored on the same test set, the
/// samples beyond the largest size.
pub fn efficiency_sweep(
    backbone_model: &MlpModel<f32>,
    data: &Dataset,
    sizes: &[usize],
    cfg: &CalibrationConfig,
    val_fraction: f64,
    side_mm: f64,
    seed: u64,
) -> Result<SweepResult> {
    let Some(&largest) = sizes.iter().max() else {
        return Err(Error::Empty("no sweep sizes given"));
    };
    if largest >= data.len() {
        return Err(Error::invariant(format!(
            "sweep size {largest} leaves no test data out of {} samples",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pool = data.subset(&order[..largest]);
    let test = data.subset(&order[largest..]);
    let (baseline, _) = evaluate(backbone_model, &test, side_mm)?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let (tr, va) = calibration_split(&pool, size, val_fraction)?;
        let mut aug = augment(backbone_model, data.m)?;
        let report = calibrate(&mut aug, &tr, &va, cfg, seed)?;
        let (eval, _) = evaluate(&aug, &test, side_mm)?;
        rows.push(SweepRow {
            size,
            report: eval,
            epochs_run: report.epochs_run,
        });
    }
    Ok(SweepResult {
        baseline,
        rows,
        test_size: test.len(),
    })
}
