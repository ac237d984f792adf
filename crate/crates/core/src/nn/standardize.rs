use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{lit, MlpModel, Scalar, TrainOptions, TrainReport};
use crate::error::{Error, Result};

/// Columns whose spread is below this keep unit scale.
const MIN_STD: f64 = 1e-6;

/// Per-column input normalisation `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T: Scalar> {
    pub mean: Array1<T>,
    pub inv_std: Array1<T>,
}

impl<T: Scalar> Standardizer<T> {
    /// Column means and population standard deviations of `x`.
    pub fn fit(x: ArrayView2<T>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Empty("cannot standardise an empty matrix"));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let inv_std = x.std_axis(Axis(0), T::zero()).mapv(|s| {
            if s > lit(MIN_STD) {
                T::one() / s
            } else {
                T::one()
            }
        });
        Ok(Self { mean, inv_std })
    }

    pub fn apply(&self, x: ArrayView2<T>) -> Array2<T> {
        (&x - &self.mean) * &self.inv_std
    }

    /// Rewrites the first layer of `model` so that it takes raw inputs:
    /// `((x - mean) * s) W + b = x (diag(s) W) + (b - (mean * s) W)`.
    pub fn fold_into(&self, model: &mut MlpModel<T>) -> Result<()> {
        let first = &mut model.layers[0];
        if first.weights.nrows() != self.mean.len() {
            return Err(Error::Shape {
                what: "standardiser width",
                expected: first.weights.nrows(),
                found: self.mean.len(),
            });
        }
        if first.offset.is_some() {
            return Err(Error::invariant("cannot fold a standardiser into an offset layer"));
        }
        let shift = (&self.mean * &self.inv_std).dot(&first.weights);
        first.weights *= &self.inv_std.view().insert_axis(Axis(1));
        first.bias -= &shift;
        Ok(())
    }
}

/// Trains on standardised inputs, then folds the standardiser into the first
/// layer so the returned model takes raw inputs.
pub fn train_standardized<T: Scalar>(
    model: &mut MlpModel<T>,
    train: (&Array2<T>, &Array2<T>),
    val: (&Array2<T>, &Array2<T>),
    opts: &TrainOptions,
) -> Result<TrainReport> {
    let norm = Standardizer::fit(train.0.view())?;
    let x = norm.apply(train.0.view());
    let vx = norm.apply(val.0.view());
    let report = super::train(model, (&x, train.1), (&vx, val.1), opts)?;
    norm.fold_into(model)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((20, 6), |(_, j)| {
            if j == 5 {
                2.5
            } else {
                rng.gen_range(-1.0..1.0) * (j + 1) as f64 + 3.0 * j as f64
            }
        })
    }

    #[test]
    fn standardised_columns() {
        let x = data(1);
        let s = Standardizer::fit(x.view()).unwrap();
        let z = s.apply(x.view());
        for (j, col) in z.columns().into_iter().enumerate() {
            assert!(col.mean().unwrap().abs() < 1e-12);
            let sd = col.std(0.0);
            if j == 5 {
                assert_eq!(sd, 0.0);
                assert_eq!(s.inv_std[j], 1.0);
            } else {
                assert!((sd - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn folding_preserves_predictions() {
        let x = data(2);
        let s = Standardizer::fit(x.view()).unwrap();
        let mut model = MlpModel::<f64>::new(6, &[5, 4], 3, Activation::Logistic, 3).unwrap();
        let before = model.predict(s.apply(x.view()).view()).unwrap();
        s.fold_into(&mut model).unwrap();
        let after = model.predict(x.view()).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch_rejected() {
        let s = Standardizer::fit(data(1).view()).unwrap();
        let mut model = MlpModel::<f64>::new(7, &[4], 3, Activation::Logistic, 3).unwrap();
        assert!(s.fold_into(&mut model).is_err());
    }
}
