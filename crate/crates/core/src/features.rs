//! Region-averaged flow features.
//!
//! The image is split into a `sqrt(m) x sqrt(m)` grid of regions. Each region
//! contributes the arithmetic mean of its flow magnitudes and the circular
//! mean of its flow angles. The vector is laid out as all `m` magnitudes
//! followed by all `m` angles; an empty region yields `(0, 0)`.

use crate::error::{Error, Result};
use crate::flow::{normalize_angle, FlowField};

/// `2m` values: `[d_0 .. d_{m-1}, a_0 .. a_{m-1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn zeros(m: usize) -> Self {
        Self {
            values: vec![0.0; 2 * m],
        }
    }

    pub fn regions(&self) -> usize {
        self.values.len() / 2
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.values[..self.regions()]
    }

    pub fn angles(&self) -> &[f64] {
        &self.values[self.regions()..]
    }
}

pub(crate) fn grid_side(count: usize, what: &'static str) -> Result<usize> {
    let g = (count as f64).sqrt().round() as usize;
    if count == 0 || g * g != count {
        return Err(Error::invariant(format!("{what} must be a positive perfect square, got {count}")));
    }
    Ok(g)
}

/// Row-major region index of pixel `(col, row)`.
///
/// When `size` is not a multiple of `sqrt(m)` the region borders are placed at
/// `floor(k * size / sqrt(m))`, so region widths differ by at most one pixel.
pub fn region_of(col: usize, row: usize, m: usize, size: usize) -> Result<usize> {
    let g = grid_side(m, "region count")?;
    if col >= size || row >= size {
        return Err(Error::invariant(format!(
            "pixel ({col}, {row}) outside a {size}x{size} image"
        )));
    }
    Ok(region_unchecked(col, row, g, size))
}

#[inline]
fn region_unchecked(col: usize, row: usize, g: usize, size: usize) -> usize {
    (row * g / size) * g + col * g / size
}

/// `atan2(sum sin, sum cos)` wrapped into `(-pi, pi]`; 0 for an empty set.
pub fn circular_mean(angles: &[f64]) -> f64 {
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    normalize_angle(s.atan2(c))
}

#[derive(Clone, Copy, Default)]
struct RegionSums {
    magnitude: f64,
    sin: f64,
    cos: f64,
    count: f64,
}

fn finish(sums: &[RegionSums]) -> FeatureVector {
    let m = sums.len();
    let mut out = FeatureVector::zeros(m);
    for (i, s) in sums.iter().enumerate() {
        if s.count > 0.0 {
            out.values[i] = s.magnitude / s.count;
            out.values[m + i] = normalize_angle(s.sin.atan2(s.cos));
        }
    }
    out
}

/// Averages `flow` over `m` regions.
pub fn extract_features(flow: &FlowField, m: usize) -> Result<FeatureVector> {
    let g = grid_side(m, "region count")?;
    if flow.width != flow.height {
        return Err(Error::Shape {
            what: "flow height",
            expected: flow.width,
            found: flow.height,
        });
    }
    if flow.width < g {
        return Err(Error::invariant(format!(
            "{}-pixel image cannot hold {g} regions per side",
            flow.width
        )));
    }
    let size = flow.width;
    let mut sums = vec![RegionSums::default(); m];
    for row in 0..size {
        for col in 0..size {
            let t = flow.get(col, row);
            let s = &mut sums[region_unchecked(col, row, g, size)];
            s.magnitude += t.magnitude;
            s.sin += t.angle.sin();
            s.cos += t.angle.cos();
            s.count += 1.0;
        }
    }
    Ok(finish(&sums))
}

/// Region pixel counts per source (e.g. per marker) for a fixed pixel-to-source
/// assignment, so features of piecewise-constant flows can be computed without
/// touching every pixel.
#[derive(Debug, Clone)]
pub struct SparseRegionMap {
    m: usize,
    sources: usize,
    /// Per region: `(source index, pixel count)`, sorted by source.
    entries: Vec<Vec<(u32, u32)>>,
}

impl SparseRegionMap {
    /// `assignment[row * size + col]` is the source index of that pixel.
    pub fn new(assignment: &[u32], size: usize, m: usize) -> Result<Self> {
        let g = grid_side(m, "region count")?;
        if assignment.len() != size * size {
            return Err(Error::Shape {
                what: "pixel assignment length",
                expected: size * size,
                found: assignment.len(),
            });
        }
        if size < g {
            return Err(Error::invariant("image smaller than region grid"));
        }
        let mut counts: Vec<std::collections::BTreeMap<u32, u32>> = vec![Default::default(); m];
        for row in 0..size {
            for col in 0..size {
                *counts[region_unchecked(col, row, g, size)]
                    .entry(assignment[row * size + col])
                    .or_default() += 1;
            }
        }
        let sources = assignment.iter().map(|&k| k as usize + 1).max().unwrap_or(0);
        Ok(Self {
            m,
            sources,
            entries: counts.into_iter().map(|c| c.into_iter().collect()).collect(),
        })
    }

    pub fn regions(&self) -> usize {
        self.m
    }

    /// Features for a flow that is constant over each source's pixels.
    pub fn features(&self, source_flows: &[(f64, f64)]) -> Result<FeatureVector> {
        if source_flows.len() < self.sources {
            return Err(Error::Shape {
                what: "source flow count",
                expected: self.sources,
                found: source_flows.len(),
            });
        }
        let tuples: Vec<(f64, f64, f64)> = source_flows
            .iter()
            .map(|&(u, v)| {
                let t = crate::flow::FlowTuple::from_components(u, v);
                (t.magnitude, t.angle.sin(), t.angle.cos())
            })
            .collect();
        let sums: Vec<RegionSums> = self
            .entries
            .iter()
            .map(|region| {
                let mut s = RegionSums::default();
                for &(k, c) in region {
                    let (mag, sin, cos) = tuples[k as usize];
                    let c = c as f64;
                    s.magnitude += c * mag;
                    s.sin += c * sin;
                    s.cos += c * cos;
                    s.count += c;
                }
                s
            })
            .collect();
        Ok(finish(&sums))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowTuple;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn field(size: usize, f: impl Fn(usize, usize) -> FlowTuple) -> FlowField {
        let mut tuples = Vec::new();
        for row in 0..size {
            for col in 0..size {
                tuples.push(f(col, row));
            }
        }
        FlowField {
            width: size,
            height: size,
            tuples,
        }
    }

    #[test]
    fn region_index_examples() {
        assert_eq!(region_of(0, 0, 1600, 440).unwrap(), 0);
        assert_eq!(region_of(439, 439, 1600, 440).unwrap(), 1599);
        // Centre pixel 220 lies in cell 220 / 11 = 20 of 40 on both axes.
        assert_eq!(region_of(220, 220, 1600, 440).unwrap(), 20 * 40 + 20);
        assert_eq!(region_of(219, 219, 1600, 440).unwrap(), 19 * 40 + 19);
        assert!(region_of(440, 0, 1600, 440).is_err());
        assert!(region_of(0, 0, 1500, 440).is_err());
    }

    #[test]
    fn uneven_division_covers_every_region() {
        let mut seen = vec![0usize; 9];
        for row in 0..10 {
            for col in 0..10 {
                seen[region_of(col, row, 9, 10).unwrap()] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c >= 9));
    }

    #[test]
    fn zero_flow_gives_zero_features() {
        let f = extract_features(&FlowField::zeros(20, 20), 4).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn arithmetic_and_circular_means() {
        // Single region of two pixels: magnitudes {1, 3}, equal angles.
        let flow = FlowField {
            width: 1,
            height: 1,
            tuples: vec![FlowTuple {
                magnitude: 1.0,
                angle: 0.7,
            }],
        };
        let f = extract_features(&flow, 1).unwrap();
        assert_eq!(f.values, vec![1.0, 0.7]);

        let flow = field(2, |c, _| FlowTuple {
            magnitude: if c == 0 { 1.0 } else { 3.0 },
            angle: 0.4,
        });
        let f = extract_features(&flow, 1).unwrap();
        assert_eq!(f.magnitudes(), &[2.0]);
        assert!((f.angles()[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn antipodal_pair_wraps_to_pi() {
        let a = circular_mean(&[3.0 * PI / 4.0, -3.0 * PI / 4.0]);
        assert_eq!(a, PI);
        let flow = FlowField {
            width: 2,
            height: 1,
            tuples: vec![
                FlowTuple {
                    magnitude: 1.0,
                    angle: 3.0 * PI / 4.0,
                },
                FlowTuple {
                    magnitude: 1.0,
                    angle: -3.0 * PI / 4.0,
                },
            ],
        };
        // Non-square flows are rejected; wrap a square one instead.
        assert!(extract_features(&flow, 1).is_err());
        let sq = field(2, |c, _| FlowTuple {
            magnitude: 1.0,
            angle: if c == 0 { 3.0 * PI / 4.0 } else { -3.0 * PI / 4.0 },
        });
        assert_eq!(extract_features(&sq, 1).unwrap().angles()[0], PI);
    }

    #[test]
    fn layout_is_magnitudes_then_angles() {
        let flow = field(4, |c, r| {
            let region = (r / 2) * 2 + c / 2;
            FlowTuple {
                magnitude: region as f64 + 1.0,
                angle: 0.1 * (region as f64 + 1.0),
            }
        });
        let f = extract_features(&flow, 4).unwrap();
        assert_eq!(f.magnitudes(), &[1.0, 2.0, 3.0, 4.0]);
        for (i, a) in f.angles().iter().enumerate() {
            assert!((a - 0.1 * (i as f64 + 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn sparse_map_matches_dense_extraction() {
        let size = 12;
        let assignment: Vec<u32> = (0..size * size).map(|p| ((p * 7 + p / 5) % 11) as u32).collect();
        let flows: Vec<(f64, f64)> = (0..11).map(|k| ((k as f64 - 5.0) * 0.3, (k as f64 * 1.3).sin())).collect();
        let map = SparseRegionMap::new(&assignment, size, 9).unwrap();
        let fast = map.features(&flows).unwrap();
        let dense = FlowField {
            width: size,
            height: size,
            tuples: assignment
                .iter()
                .map(|&k| FlowTuple::from_components(flows[k as usize].0, flows[k as usize].1))
                .collect(),
        };
        let slow = extract_features(&dense, 9).unwrap();
        for (a, b) in fast.values.iter().zip(&slow.values) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(map.features(&flows[..5]).is_err());
    }

    fn angular_gap(a: f64, b: f64) -> f64 {
        normalize_angle(a - b).abs()
    }

    proptest! {
        #[test]
        fn periodicity(angles in prop::collection::vec(-PI..PI, 1..20), mask in any::<u32>()) {
            let shifted: Vec<f64> = angles
                .iter()
                .enumerate()
                .map(|(i, a)| if mask >> (i % 32) & 1 == 1 { a + 2.0 * PI } else { *a })
                .collect();
            prop_assert!(angular_gap(circular_mean(&angles), circular_mean(&shifted)) < 1e-12);
        }

        #[test]
        fn rotation_equivariance(angles in prop::collection::vec(-PI..PI, 1..20), phi in -PI..PI) {
            let base = circular_mean(&angles);
            let rotated: Vec<f64> = angles.iter().map(|a| a + phi).collect();
            let (s, c) = angles.iter().fold((0.0f64, 0.0f64), |(s, c), a| (s + a.sin(), c + a.cos()));
            // The mean is undefined when the resultant vanishes.
            prop_assume!(s.hypot(c) > 1e-6);
            prop_assert!(angular_gap(circular_mean(&rotated), base + phi) < 1e-12);
        }

        #[test]
        fn permutation_invariance(seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let size = 8;
            let base = field(size, |c, r| FlowTuple::from_components((c as f64 * 0.37).sin(), (r as f64 * 0.51 + c as f64).cos()));
            // Shuffle pixels within each region.
            let g = 2;
            let mut tuples = base.tuples.clone();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for region in 0..4 {
                let idx: Vec<usize> = (0..size * size)
                    .filter(|&p| region_unchecked(p % size, p / size, g, size) == region)
                    .collect();
                let mut vals: Vec<FlowTuple> = idx.iter().map(|&p| tuples[p]).collect();
                vals.shuffle(&mut rng);
                for (p, v) in idx.iter().zip(vals) {
                    tuples[*p] = v;
                }
            }
            let shuffled = FlowField { tuples, ..base.clone() };
            let a = extract_features(&base, 4).unwrap();
            let b = extract_features(&shuffled, 4).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
