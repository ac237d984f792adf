use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Mode, MlpModel, Nadam, Scalar};
use crate::config::{CalibrationConfig, PipelineConfig};
use crate::error::{Error, Result};

/// Minibatch training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: Option<usize>,
    pub max_epochs: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl TrainOptions {
    pub fn from_pipeline(p: &PipelineConfig) -> Self {
        Self {
            batch_size: p.batch_size,
            learning_rate: p.learning_rate,
            patience: Some(p.n_es),
            max_epochs: p.max_epochs,
            dropout_rate: p.dropout_rate,
            seed: p.seed,
        }
    }

    pub fn from_calibration(c: &CalibrationConfig, seed: u64) -> Self {
        Self {
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            patience: Some(c.n_es),
            max_epochs: c.max_epochs,
            dropout_rate: c.dropout_rate,
            seed,
        }
    }
}

/// One epoch of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sample-weighted mean of the minibatch losses (dropout active).
    pub train_loss: f64,
    /// Eval-mode aRMSE on the validation set.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub wall_time_s: f64,
}

/// Nadam minibatch training on the aRMSE loss with early stopping.
///
/// The training set is reshuffled every epoch; the last partial batch is
/// kept. On return the model holds the weights of the best validation epoch
/// and its log has one entry per epoch run.
pub fn train<T: Scalar>(
    model: &mut MlpModel<T>,
    train: (&Array2<T>, &Array2<T>),
    val: (&Array2<T>, &Array2<T>),
    opts: &TrainOptions,
) -> Result<TrainReport> {
    let (x, y) = train;
    let (vx, vy) = val;
    if x.nrows() == 0 {
        return Err(Error::Empty("empty training set"));
    }
    if vx.nrows() == 0 {
        return Err(Error::Empty("empty validation set"));
    }
    if x.nrows() != y.nrows() || vx.nrows() != vy.nrows() {
        return Err(Error::Shape {
            what: "target row count",
            expected: x.nrows(),
            found: y.nrows(),
        });
    }
    if opts.batch_size == 0 || opts.max_epochs == 0 {
        return Err(Error::invariant("batch size and max epochs must be positive"));
    }
    if !(0.0..1.0).contains(&opts.dropout_rate) {
        return Err(Error::invariant("dropout rate must lie in [0, 1)"));
    }

    let start = Instant::now();
    let nadam = Nadam::new(opts.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_layers = model.layers.clone();
    let mut stagnant = 0;
    let mut stopped_early = false;
    let mut epochs_run = 0;

    for epoch in 1..=opts.max_epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (batch, idx) in order.chunks(opts.batch_size).enumerate() {
            let bx = x.select(Axis(0), idx);
            let by = y.select(Axis(0), idx);
            let (loss, grads) = model.loss_and_gradients(
                bx.view(),
                by.view(),
                Mode::Train {
                    dropout_rate: opts.dropout_rate,
                    rng: &mut rng,
                },
            )?;
            let loss = loss.to_f64().unwrap();
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch,
                    detail: format!("loss is {loss}"),
                });
            }
            model.optimizer.apply(&nadam, &mut model.layers, &grads);
            if !model.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch,
                    detail: "non-finite parameter after update".into(),
                });
            }
            weighted += loss * idx.len() as f64;
        }
        let val_loss = model.loss(vx.view(), vy.view())?.to_f64().unwrap();
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                detail: format!("validation loss is {val_loss}"),
            });
        }
        model.log.push(super::EpochLog {
            epoch,
            train_loss: weighted / x.nrows() as f64,
            val_loss,
        });
        epochs_run = epoch;
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_layers.clone_from(&model.layers);
            stagnant = 0;
        } else {
            stagnant += 1;
            if opts.patience.is_some_and(|p| stagnant >= p) {
                stopped_early = true;
                break;
            }
        }
    }
    model.layers = best_layers;
    Ok(TrainReport {
        epochs_run,
        best_epoch,
        best_val_loss: best_val,
        stopped_early,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::Rng;

    fn toy_data(rows: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((rows, 4), || rng.gen_range(0.0..1.0));
        let y = Array2::from_shape_fn((rows, 3), |(r, c)| if c == r % 3 { x[[r, 0]] + 0.2 } else { 0.0 });
        (x, y)
    }

    fn opts(patience: Option<usize>, epochs: usize) -> TrainOptions {
        TrainOptions {
            batch_size: 4,
            learning_rate: 0.01,
            patience,
            max_epochs: epochs,
            dropout_rate: 0.1,
            seed: 9,
        }
    }

    #[test]
    fn reproducible_to_the_bit() {
        let (x, y) = toy_data(20, 1);
        let run = || {
            let mut m = MlpModel::<f32>::new(4, &[6, 5], 3, Activation::Logistic, 3).unwrap();
            let xf = x.mapv(|v| v as f32);
            let yf = y.mapv(|v| v as f32);
            train(&mut m, (&xf, &yf), (&xf, &yf), &opts(None, 30)).unwrap();
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn restores_best_validation_weights() {
        let (x, y) = toy_data(24, 2);
        let (vx, vy) = toy_data(8, 3);
        let mut m = MlpModel::<f64>::new(4, &[6], 3, Activation::Logistic, 4).unwrap();
        let r = train(&mut m, (&x, &y), (&vx, &vy), &opts(Some(5), 200)).unwrap();
        let min = m.log.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(r.best_val_loss, min);
        assert_eq!(m.loss(vx.view(), vy.view()).unwrap(), min);
        assert_eq!(m.log.len(), r.epochs_run);
    }

    #[test]
    fn patience_one_stops_after_first_non_improvement() {
        let (x, y) = toy_data(12, 5);
        let (vx, vy) = toy_data(6, 6);
        let mut m = MlpModel::<f64>::new(4, &[3], 3, Activation::Logistic, 7).unwrap();
        // A zero learning rate never improves on epoch 1.
        let o = TrainOptions {
            learning_rate: 0.0,
            ..opts(Some(1), 50)
        };
        let r = train(&mut m, (&x, &y), (&vx, &vy), &o).unwrap();
        assert_eq!(r.epochs_run, 2);
        assert!(r.stopped_early);
        assert_eq!(r.best_epoch, 1);
    }

    #[test]
    fn divergence_is_reported() {
        let (x, mut y) = toy_data(8, 8);
        y[[0, 0]] = f64::NAN;
        let mut m = MlpModel::<f64>::new(4, &[3], 3, Activation::Logistic, 7).unwrap();
        let err = train(&mut m, (&x, &y), (&x, &y), &opts(None, 3)).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 1, .. }), "{err}");
    }

    #[test]
    fn empty_sets_rejected() {
        let (x, y) = toy_data(8, 8);
        let e = Array2::<f64>::zeros((0, 4));
        let ey = Array2::<f64>::zeros((0, 3));
        let mut m = MlpModel::<f64>::new(4, &[3], 3, Activation::Logistic, 7).unwrap();
        assert!(train(&mut m, (&e, &ey), (&x, &y), &opts(None, 3)).is_err());
        assert!(train(&mut m, (&x, &y), (&e, &ey), &opts(None, 3)).is_err());
    }
}
