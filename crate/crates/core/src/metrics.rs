//! Test-set metrics. Batches are `samples x components`, true values first.
//!
//! The maximum component of a label is the argmax of absolute values with
//! ties going to the lowest index.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::labels::bin_center;
use crate::nn::{self, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub armse_n: f64,
    pub d_loc_mm: f64,
    pub rmse_mc_n: f64,
    pub srmse_n: f64,
    pub sample_count: usize,
    /// Samples left out of SRMSE because their true label is all zero.
    pub srmse_skipped: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "samples,armse_n,d_loc_mm,rmse_mc_n,srmse_n,srmse_skipped";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.sample_count, self.armse_n, self.d_loc_mm, self.rmse_mc_n, self.srmse_n, self.srmse_skipped
        )
    }

    pub fn to_text(&self) -> String {
        format!(
            "samples   {:>12}\naRMSE     {:>12.6} N\nd_loc     {:>12.6} mm\nRMSE_mc   {:>12.6} N\nSRMSE     {:>12.6} N\n",
            self.sample_count, self.armse_n, self.d_loc_mm, self.rmse_mc_n, self.srmse_n
        )
    }
}

pub fn argmax_abs(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

fn check(truth: &ArrayView2<f64>, pred: &ArrayView2<f64>) -> Result<()> {
    if truth.nrows() == 0 {
        return Err(Error::Empty("empty batch"));
    }
    if truth.nrows() != pred.nrows() {
        return Err(Error::Shape {
            what: "prediction row count",
            expected: truth.nrows(),
            found: pred.nrows(),
        });
    }
    if truth.ncols() != pred.ncols() {
        return Err(Error::Shape {
            what: "prediction width",
            expected: truth.ncols(),
            found: pred.ncols(),
        });
    }
    Ok(())
}

pub fn armse(truth: ArrayView2<f64>, pred: ArrayView2<f64>) -> Result<f64> {
    check(&truth, &pred)?;
    nn::armse(pred, truth)
}

/// Distance in mm between the bin centres of the true and predicted maximum
/// components, for one sample.
pub fn localisation_error(truth: ArrayView1<f64>, pred: ArrayView1<f64>, side_mm: f64) -> Result<f64> {
    let n = truth.len();
    let a = bin_center(argmax_abs(truth), n, side_mm)?;
    let b = bin_center(argmax_abs(pred), n, side_mm)?;
    Ok(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
}

/// Signed difference between the true and predicted maximum components.
pub fn max_component_error(truth: ArrayView1<f64>, pred: ArrayView1<f64>) -> f64 {
    truth[argmax_abs(truth)] - pred[argmax_abs(pred)]
}

pub fn d_loc(truth: ArrayView2<f64>, pred: ArrayView2<f64>, side_mm: f64) -> Result<f64> {
    check(&truth, &pred)?;
    let mut total = 0.0;
    for (t, p) in truth.rows().into_iter().zip(pred.rows()) {
        total += localisation_error(t, p, side_mm)?;
    }
    Ok(total / truth.nrows() as f64)
}

pub fn rmse_mc(truth: ArrayView2<f64>, pred: ArrayView2<f64>) -> Result<f64> {
    check(&truth, &pred)?;
    let sq: f64 = truth
        .rows()
        .into_iter()
        .zip(pred.rows())
        .map(|(t, p)| max_component_error(t, p).powi(2))
        .sum();
    Ok((sq / truth.nrows() as f64).sqrt())
}

/// RMSE pooled over the components that are nonzero in the true label.
/// Returns the value and the number of skipped all-zero samples.
pub fn srmse(truth: ArrayView2<f64>, pred: ArrayView2<f64>) -> Result<(f64, usize)> {
    check(&truth, &pred)?;
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut skipped = 0;
    for (t, p) in truth.rows().into_iter().zip(pred.rows()) {
        let before = count;
        for (&a, &b) in t.iter().zip(p) {
            if a != 0.0 {
                sq += (a - b) * (a - b);
                count += 1;
            }
        }
        if count == before {
            skipped += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("no nonzero components"));
    }
    Ok(((sq / count as f64).sqrt(), skipped))
}

pub fn report(truth: ArrayView2<f64>, pred: ArrayView2<f64>, side_mm: f64) -> Result<EvalReport> {
    let (srmse_n, srmse_skipped) = srmse(truth, pred)?;
    Ok(EvalReport {
        armse_n: armse(truth, pred)?,
        d_loc_mm: d_loc(truth, pred, side_mm)?,
        rmse_mc_n: rmse_mc(truth, pred)?,
        srmse_n,
        sample_count: truth.nrows(),
        srmse_skipped,
    })
}

/// Eval-mode predictions of `model` on `ds`, widened to f64.
pub fn predict(model: &MlpModel<f32>, ds: &Dataset) -> Result<Array2<f64>> {
    model.expect_shape(ds.m, ds.n)?;
    Ok(model.predict(ds.inputs().view())?.mapv(f64::from))
}

/// All metrics of `model` on `ds`. Also returns the predictions.
pub fn evaluate(model: &MlpModel<f32>, ds: &Dataset, side_mm: f64) -> Result<(EvalReport, Array2<f64>)> {
    if ds.is_empty() {
        return Err(Error::Empty("empty evaluation set"));
    }
    let pred = predict(model, ds)?;
    let truth = ds.targets().mapv(f64::from);
    Ok((report(truth.view(), pred.view(), side_mm)?, pred))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn onehot(n: usize, k: usize, v: f64) -> Vec<f64> {
        let mut out = vec![0.0; n];
        out[k] = v;
        out
    }

    fn batch(rows: &[Vec<f64>]) -> Array2<f64> {
        Array2::from_shape_vec((rows.len(), rows[0].len()), rows.concat()).unwrap()
    }

    #[test]
    fn adjacent_bins_are_one_pitch_apart() {
        let t = batch(&[onehot(81, 0, 1.0)]);
        let p = batch(&[onehot(81, 1, 1.0)]);
        let d = d_loc(t.view(), p.view(), 32.0).unwrap();
        assert!((d - 32.0 / 9.0).abs() < 1e-12);
        assert_eq!(d_loc(t.view(), t.view(), 32.0).unwrap(), 0.0);
    }

    #[test]
    fn max_component_example() {
        let t = batch(&[onehot(81, 3, 1.0)]);
        for k in [0, 3, 80] {
            let p = batch(&[onehot(81, k, 0.8)]);
            assert!((rmse_mc(t.view(), p.view()).unwrap() - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_predictions_keeps_d_loc() {
        let t = batch(&[onehot(9, 4, 1.0), onehot(9, 0, 0.5)]);
        let p = array![[0.1, 0.3, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, -0.4], [0.0; 9]];
        let base = d_loc(t.view(), p.view(), 9.0).unwrap();
        assert_eq!(d_loc(t.view(), (&p * 3.5).view(), 9.0).unwrap(), base);
    }

    #[test]
    fn ties_take_lowest_index() {
        assert_eq!(argmax_abs(array![0.5, -0.5, 0.5].view()), 0);
        assert_eq!(argmax_abs(array![0.0, 0.0].view()), 0);
    }

    #[test]
    fn srmse_ignores_true_zero_components() {
        let t = batch(&[onehot(4, 2, 1.0), vec![0.0; 4]]);
        let p = array![[0.0, 0.0, 0.9, 0.0], [5.0, 5.0, 5.0, 5.0]];
        let (v, skipped) = srmse(t.view(), p.view()).unwrap();
        assert!((v - 0.1).abs() < 1e-12);
        assert_eq!(skipped, 1);
        let p2 = array![[7.0, -3.0, 0.9, 2.0], [0.0; 4]];
        assert_eq!(srmse(t.view(), p2.view()).unwrap().0, v);
        let zeros = Array2::<f64>::zeros((2, 4));
        assert!(srmse(zeros.view(), zeros.view()).unwrap_err().to_string().contains("no nonzero"));
    }

    #[test]
    fn zero_model_gives_rms_of_true_maxima() {
        let t = batch(&[onehot(9, 1, 1.0), onehot(9, 5, 0.5), onehot(9, 8, 0.25)]);
        let p = Array2::zeros((3, 9));
        let expect = ((1.0 + 0.25 + 0.0625) / 3.0f64).sqrt();
        assert!((rmse_mc(t.view(), p.view()).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_all_zero() {
        let t = batch(&[onehot(9, 1, 1.0), onehot(9, 5, 0.5)]);
        let r = report(t.view(), t.view(), 9.0).unwrap();
        assert_eq!((r.armse_n, r.d_loc_mm, r.rmse_mc_n, r.srmse_n), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(r.sample_count, 2);
    }

    #[test]
    fn empty_and_mismatched_batches_rejected() {
        let e = Array2::<f64>::zeros((0, 9));
        assert!(d_loc(e.view(), e.view(), 9.0).is_err());
        assert!(rmse_mc(e.view(), e.view()).is_err());
        let a = Array2::<f64>::zeros((2, 9));
        let b = Array2::<f64>::zeros((3, 9));
        assert!(matches!(armse(a.view(), b.view()), Err(Error::Shape { .. })));
    }
}
