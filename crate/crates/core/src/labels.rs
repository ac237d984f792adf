//! Surface bins and sparse force labels.
//!
//! The square surface is split into a `sqrt(n) x sqrt(n)` grid, indexed
//! row-major with the row along `y`. A point on a shared cell boundary belongs
//! to the lower-index cell.

use crate::elastic::IndentationEvent;
use crate::error::{Error, Result};
use crate::features::grid_side;

/// Forces below this are treated as no contact.
pub const CONTACT_THRESHOLD_N: f64 = 0.01;

/// Per-bin normal force in newtons.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    pub values: Vec<f64>,
}

impl LabelVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
        }
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

fn cell(coord: f64, g: usize, side_mm: f64) -> usize {
    let scaled = (coord * g as f64 / side_mm).ceil();
    ((scaled as usize).saturating_sub(1)).min(g - 1)
}

pub fn bin_of(point_mm: [f64; 2], n: usize, side_mm: f64) -> Result<usize> {
    let g = grid_side(n, "bin count")?;
    let [x, y] = point_mm;
    if !(0.0..=side_mm).contains(&x) || !(0.0..=side_mm).contains(&y) {
        return Err(Error::invariant(format!(
            "point ({x}, {y}) mm is outside the {side_mm} mm surface"
        )));
    }
    Ok(cell(y, g, side_mm) * g + cell(x, g, side_mm))
}

pub fn bin_center(k: usize, n: usize, side_mm: f64) -> Result<[f64; 2]> {
    let g = grid_side(n, "bin count")?;
    if k >= n {
        return Err(Error::invariant(format!("bin {k} out of range for n = {n}")));
    }
    let pitch = side_mm / g as f64;
    Ok([((k % g) as f64 + 0.5) * pitch, ((k / g) as f64 + 0.5) * pitch])
}

/// One-hot force label; all zeros when the force is below the contact threshold.
pub fn make_label(event: &IndentationEvent, n: usize, side_mm: f64) -> Result<LabelVector> {
    let k = bin_of(event.contact_mm, n, side_mm)?;
    let mut label = LabelVector::zeros(n);
    if event.force_n >= CONTACT_THRESHOLD_N {
        label.values[k] = event.force_n;
    }
    Ok(label)
}
