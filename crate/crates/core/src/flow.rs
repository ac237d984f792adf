//! Dense optical flow between a rest frame and a pressed frame.
//!
//! [`compute_flow`] is a coarse-to-fine inverse search: a Gaussian pyramid
//! (factor 2) is built for both frames; at each level, overlapping square
//! patches of the rest frame are aligned to the pressed frame with an
//! inverse-compositional, translation-only Gauss-Newton solve, starting from
//! the upsampled flow of the coarser level. Patch estimates are fused into a
//! dense field with weights inversely proportional to the per-pixel
//! photometric residual. There is no variational refinement stage.
//!
//! [`OracleFlow`] skips imaging altogether and reports the exact projected
//! marker displacement, which is used for fast dataset generation and as a
//! reference for the estimator.

use rayon::prelude::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{render_points, CameraModel, MarkerImage};
use crate::config::SensorConfig;
use crate::elastic::MarkerField;
use crate::error::{Error, Result};
use crate::geom::Pixel;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    if r <= -PI {
        r += TAU;
    }
    r
}

/// Flow at one pixel: magnitude in pixels and angle in `(-pi, pi]` measured
/// from the column axis toward the row axis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowTuple {
    pub magnitude: f64,
    pub angle: f64,
}

impl FlowTuple {
    pub fn from_components(du: f64, dv: f64) -> Self {
        Self {
            magnitude: du.hypot(dv),
            angle: normalize_angle(dv.atan2(du)),
        }
    }

    pub fn components(&self) -> (f64, f64) {
        (
            self.magnitude * self.angle.cos(),
            self.magnitude * self.angle.sin(),
        )
    }
}

/// Per-pixel flow over a `width x height` grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub tuples: Vec<FlowTuple>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            tuples: vec![FlowTuple::default(); width * height],
        }
    }

    pub fn from_components(width: usize, height: usize, du: &[f64], dv: &[f64]) -> Self {
        assert_eq!(du.len(), width * height);
        assert_eq!(dv.len(), width * height);
        Self {
            width,
            height,
            tuples: du
                .iter()
                .zip(dv)
                .map(|(&u, &v)| FlowTuple::from_components(u, v))
                .collect(),
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> FlowTuple {
        self.tuples[row * self.width + col]
    }

    /// Mean endpoint error against a constant flow `(du, dv)`.
    pub fn mean_endpoint_error(&self, du: f64, dv: f64) -> f64 {
        let total: f64 = self
            .tuples
            .iter()
            .map(|t| {
                let (u, v) = t.components();
                (u - du).hypot(v - dv)
            })
            .sum();
        total / self.tuples.len() as f64
    }
}

/// Tuning of the patch-based estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub levels: usize,
    pub patch_px: usize,
    pub stride_px: usize,
    pub max_iterations: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 4,
            patch_px: 8,
            stride_px: 4,
            max_iterations: 20,
        }
    }
}

impl FlowParams {
    pub fn from_pipeline(p: &crate::config::PipelineConfig) -> Self {
        Self {
            levels: p.flow_levels,
            patch_px: p.flow_patch_px,
            stride_px: p.flow_stride_px,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Plane {
    fn from_image(img: &MarkerImage) -> Self {
        Self {
            w: img.size,
            h: img.size,
            data: img.pixels.clone(),
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    #[inline]
    fn at_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.at(x, y)
    }

    /// Bilinear sample; `None` outside the pixel-centre hull.
    #[inline]
    fn sample(&self, x: f64, y: f64) -> Option<f32> {
        if x < 0.0 || y < 0.0 || x > (self.w - 1) as f64 || y > (self.h - 1) as f64 {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.w - 1);
        let y0 = (y.floor() as usize).min(self.h - 1);
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bot = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        Some(top * (1.0 - fy) + bot * fy)
    }

    /// 5-tap binomial blur followed by 2x decimation.
    fn downsample(&self) -> Plane {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let mut tmp = vec![0.0f32; self.w * self.h];
        for y in 0..self.h {
            for x in 0..self.w {
                let mut acc = 0.0;
                for (k, wk) in K.iter().enumerate() {
                    acc += wk * self.at_clamped(x as isize + k as isize - 2, y as isize);
                }
                tmp[y * self.w + x] = acc;
            }
        }
        let blurred = Plane {
            w: self.w,
            h: self.h,
            data: tmp,
        };
        let w = self.w.div_ceil(2);
        let h = self.h.div_ceil(2);
        let mut data = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wk) in K.iter().enumerate() {
                    acc += wk * blurred.at_clamped(2 * x as isize, 2 * y as isize + k as isize - 2);
                }
                data[y * w + x] = acc;
            }
        }
        Plane { w, h, data }
    }

    /// Central-difference gradients `(gx, gy)`.
    fn gradients(&self) -> (Vec<f32>, Vec<f32>) {
        let mut gx = vec![0.0f32; self.w * self.h];
        let mut gy = vec![0.0f32; self.w * self.h];
        for y in 0..self.h {
            for x in 0..self.w {
                let (xi, yi) = (x as isize, y as isize);
                gx[y * self.w + x] = 0.5 * (self.at_clamped(xi + 1, yi) - self.at_clamped(xi - 1, yi));
                gy[y * self.w + x] = 0.5 * (self.at_clamped(xi, yi + 1) - self.at_clamped(xi, yi - 1));
            }
        }
        (gx, gy)
    }

    fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }
}

fn patch_origins(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = extent - patch;
    let mut v: Vec<usize> = (0..=last).step_by(stride).collect();
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

struct PatchResult {
    u: f64,
    v: f64,
    /// Absolute residual per patch pixel; `None` where the warp left the frame.
    residuals: Vec<Option<f32>>,
    /// `false` when the template has too little gradient to align; such a
    /// patch just carries the inherited flow.
    textured: bool,
}

struct LevelContext<'a> {
    rest: &'a Plane,
    pressed: &'a Plane,
    gx: &'a [f32],
    gy: &'a [f32],
    patch: usize,
    max_iterations: usize,
    min_texture: f64,
}

impl LevelContext<'_> {
    /// Mean squared residual over in-frame pixels, with the in-frame count.
    fn ssd(&self, x0: usize, y0: usize, u: f64, v: f64) -> (f64, usize) {
        let mut acc = 0.0;
        let mut count = 0;
        for dy in 0..self.patch {
            for dx in 0..self.patch {
                let (x, y) = (x0 + dx, y0 + dy);
                if let Some(i) = self.pressed.sample(x as f64 + u, y as f64 + v) {
                    let e = (i - self.rest.at(x, y)) as f64;
                    acc += e * e;
                    count += 1;
                }
            }
        }
        if count == 0 {
            (f64::INFINITY, 0)
        } else {
            (acc / count as f64, count)
        }
    }

    fn align(&self, x0: usize, y0: usize, init: (f64, f64)) -> PatchResult {
        let mut energy = 0.0f64;
        for dy in 0..self.patch {
            let row = (y0 + dy) * self.rest.w + x0;
            for idx in row..row + self.patch {
                energy += (self.gx[idx] * self.gx[idx] + self.gy[idx] * self.gy[idx]) as f64;
            }
        }
        if energy < self.min_texture {
            return PatchResult {
                u: init.0,
                v: init.1,
                residuals: Vec::new(),
                textured: false,
            };
        }

        // Candidate starts: inherited flow and zero; ties go to the smaller displacement.
        let mut candidates = [init, (0.0, 0.0)];
        candidates.sort_by(|a, b| a.0.hypot(a.1).total_cmp(&b.0.hypot(b.1)));
        let mut start = candidates[0];
        let mut start_cost = self.ssd(x0, y0, start.0, start.1).0;
        let other_cost = self.ssd(x0, y0, candidates[1].0, candidates[1].1).0;
        if other_cost < start_cost {
            start = candidates[1];
            start_cost = other_cost;
        }

        let (mut u, mut v) = start;
        for _ in 0..self.max_iterations {
            let (mut h11, mut h12, mut h22, mut b1, mut b2) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..self.patch {
                for dx in 0..self.patch {
                    let (x, y) = (x0 + dx, y0 + dy);
                    let Some(i) = self.pressed.sample(x as f64 + u, y as f64 + v) else {
                        continue;
                    };
                    let idx = y * self.rest.w + x;
                    let (gx, gy) = (self.gx[idx] as f64, self.gy[idx] as f64);
                    let e = (i - self.rest.at(x, y)) as f64;
                    h11 += gx * gx;
                    h12 += gx * gy;
                    h22 += gy * gy;
                    b1 += gx * e;
                    b2 += gy * e;
                }
            }
            let det = h11 * h22 - h12 * h12;
            let trace = h11 + h22;
            if !(det > 1e-6 * trace * trace) || trace <= 1e-18 {
                break;
            }
            let du = (h22 * b1 - h12 * b2) / det;
            let dv = (h11 * b2 - h12 * b1) / det;
            u -= du;
            v -= dv;
            if du.hypot(dv) < 1e-3 {
                break;
            }
        }
        let (cost, count) = self.ssd(x0, y0, u, v);
        if count == 0 || !(cost <= start_cost) {
            u = start.0;
            v = start.1;
        }

        let mut residuals = Vec::with_capacity(self.patch * self.patch);
        for dy in 0..self.patch {
            for dx in 0..self.patch {
                let (x, y) = (x0 + dx, y0 + dy);
                residuals.push(
                    self.pressed
                        .sample(x as f64 + u, y as f64 + v)
                        .map(|i| (i - self.rest.at(x, y)).abs()),
                );
            }
        }
        PatchResult {
            u,
            v,
            residuals,
            textured: true,
        }
    }
}

/// Estimates the flow that carries `rest` onto `pressed`.
pub fn compute_flow(rest: &MarkerImage, pressed: &MarkerImage, params: &FlowParams) -> Result<FlowField> {
    if rest.size != pressed.size {
        return Err(Error::Shape {
            what: "pressed image side",
            expected: rest.size,
            found: pressed.size,
        });
    }
    if params.levels < 1 {
        return Err(Error::invariant("flow needs at least one pyramid level"));
    }
    if params.patch_px < 4 {
        return Err(Error::invariant("flow patch must be at least 4 px"));
    }
    if params.stride_px == 0 {
        return Err(Error::invariant("flow stride must be positive"));
    }
    if rest.size < params.patch_px {
        return Err(Error::invariant("image smaller than one flow patch"));
    }
    if !(rest.max_intensity() > 0.0) {
        return Err(Error::NoTrackablePattern);
    }

    let mut rest_pyr = vec![Plane::from_image(rest)];
    let mut pressed_pyr = vec![Plane::from_image(pressed)];
    while rest_pyr.len() < params.levels {
        let last = rest_pyr.last().unwrap();
        if last.w.div_ceil(2) < 2 * params.patch_px {
            break;
        }
        let next_rest = last.downsample();
        let next_pressed = pressed_pyr.last().unwrap().downsample();
        rest_pyr.push(next_rest);
        pressed_pyr.push(next_pressed);
    }

    let coarsest = rest_pyr.len() - 1;
    let mut flow_u = vec![0.0f64; rest_pyr[coarsest].w * rest_pyr[coarsest].h];
    let mut flow_v = flow_u.clone();
    let mut prev_w = rest_pyr[coarsest].w;
    let mut prev_h = rest_pyr[coarsest].h;

    for level in (0..=coarsest).rev() {
        let r = &rest_pyr[level];
        let p = &pressed_pyr[level];
        if level != coarsest {
            let (u, v) = upsample_flow(&flow_u, &flow_v, prev_w, prev_h, r.w, r.h);
            flow_u = u;
            flow_v = v;
        }
        let (gx, gy) = r.gradients();
        let ctx = LevelContext {
            rest: r,
            pressed: p,
            gx: &gx,
            gy: &gy,
            patch: params.patch_px,
            max_iterations: params.max_iterations,
            min_texture: 0.04 * (r.max() as f64).powi(2),
        };
        let xs = patch_origins(r.w, params.patch_px, params.stride_px);
        let ys = patch_origins(r.h, params.patch_px, params.stride_px);
        let origins: Vec<(usize, usize)> = ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
            .collect();
        let half = params.patch_px / 2;
        let results: Vec<PatchResult> = origins
            .par_iter()
            .map(|&(x0, y0)| {
                let c = (y0 + half) * r.w + x0 + half;
                ctx.align(x0, y0, (flow_u[c], flow_v[c]))
            })
            .collect();

        // Textured patches vote with weight 1 / residual; untextured ones only
        // fill pixels no textured patch reaches.
        let floor = (r.max() * 0.01).max(1e-12);
        let mut wsum = vec![0.0f64; r.w * r.h];
        let mut usum = vec![0.0f64; r.w * r.h];
        let mut vsum = vec![0.0f64; r.w * r.h];
        let mut fill = vec![(0u32, 0.0f64, 0.0f64); r.w * r.h];
        for (&(x0, y0), res) in origins.iter().zip(&results) {
            if !res.textured {
                for dy in 0..params.patch_px {
                    for dx in 0..params.patch_px {
                        let f = &mut fill[(y0 + dy) * r.w + x0 + dx];
                        f.0 += 1;
                        f.1 += res.u;
                        f.2 += res.v;
                    }
                }
                continue;
            }
            let known: Vec<f32> = res.residuals.iter().flatten().copied().collect();
            let fallback = if known.is_empty() {
                floor
            } else {
                known.iter().sum::<f32>() / known.len() as f32
            };
            for dy in 0..params.patch_px {
                for dx in 0..params.patch_px {
                    let e = res.residuals[dy * params.patch_px + dx].unwrap_or(fallback);
                    let w = 1.0 / (e.max(floor) as f64);
                    let idx = (y0 + dy) * r.w + x0 + dx;
                    wsum[idx] += w;
                    usum[idx] += w * res.u;
                    vsum[idx] += w * res.v;
                }
            }
        }
        for idx in 0..wsum.len() {
            if wsum[idx] > 0.0 {
                flow_u[idx] = usum[idx] / wsum[idx];
                flow_v[idx] = vsum[idx] / wsum[idx];
            } else if fill[idx].0 > 0 {
                flow_u[idx] = fill[idx].1 / fill[idx].0 as f64;
                flow_v[idx] = fill[idx].2 / fill[idx].0 as f64;
            }
        }
        prev_w = r.w;
        prev_h = r.h;
    }

    Ok(FlowField::from_components(rest.size, rest.size, &flow_u, &flow_v))
}

fn upsample_flow(u: &[f64], v: &[f64], w: usize, h: usize, nw: usize, nh: usize) -> (Vec<f64>, Vec<f64>) {
    let sample = |f: &[f64], x: f64, y: f64| -> f64 {
        let x = x.clamp(0.0, (w - 1) as f64);
        let y = y.clamp(0.0, (h - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = f[y0 * w + x0] * (1.0 - fx) + f[y0 * w + x1] * fx;
        let bot = f[y1 * w + x0] * (1.0 - fx) + f[y1 * w + x1] * fx;
        top * (1.0 - fy) + bot * fy
    };
    let mut nu = vec![0.0; nw * nh];
    let mut nv = vec![0.0; nw * nh];
    for y in 0..nh {
        for x in 0..nw {
            let (sx, sy) = (x as f64 / 2.0, y as f64 / 2.0);
            nu[y * nw + x] = 2.0 * sample(u, sx, sy);
            nv[y * nw + x] = 2.0 * sample(v, sx, sy);
        }
    }
    (nu, nv)
}

/// Exact projected marker motion, densified by nearest rest-frame marker.
///
/// Construction assigns every pixel to the closest visible marker in the rest
/// frame (ties to the lower marker index); that assignment is reused for every
/// pressed state of the same marker field.
#[derive(Debug, Clone)]
pub struct OracleFlow {
    cam: CameraModel,
    size: usize,
    rest_pixels: Vec<Pixel>,
    /// Marker index per pixel, row-major.
    assignment: Vec<u32>,
}

impl OracleFlow {
    pub fn new(rest: &MarkerField, cam: &CameraModel, size: usize) -> Result<Self> {
        let rest_pixels = rest
            .positions
            .iter()
            .map(|&p| cam.project_marker(p).map(|pr| pr.pixel))
            .collect::<Result<Vec<_>>>()?;
        let visible: Vec<u32> = (0..rest_pixels.len() as u32)
            .filter(|&i| {
                let px = rest_pixels[i as usize];
                let hi = size as f64 - 0.5;
                px.u >= -0.5 && px.u < hi && px.v >= -0.5 && px.v < hi
            })
            .collect();
        if visible.is_empty() {
            return Err(Error::Empty("no marker projects into the image"));
        }
        let assignment = nearest_assignment(&rest_pixels, &visible, size);
        Ok(Self {
            cam: cam.clone(),
            size,
            rest_pixels,
            assignment,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    /// Projected displacement `(du, dv)` of every marker.
    pub fn marker_flows(&self, pressed: &MarkerField) -> Result<Vec<(f64, f64)>> {
        if pressed.len() != self.rest_pixels.len() {
            return Err(Error::Shape {
                what: "pressed marker count",
                expected: self.rest_pixels.len(),
                found: pressed.len(),
            });
        }
        pressed
            .positions
            .iter()
            .zip(&self.rest_pixels)
            .map(|(&p, rest)| {
                let now = self.cam.project_marker(p)?.pixel;
                Ok((now.u - rest.u, now.v - rest.v))
            })
            .collect()
    }

    pub fn flow_field(&self, pressed: &MarkerField) -> Result<FlowField> {
        let flows = self.marker_flows(pressed)?;
        let tuples: Vec<FlowTuple> = flows
            .iter()
            .map(|&(u, v)| FlowTuple::from_components(u, v))
            .collect();
        Ok(FlowField {
            width: self.size,
            height: self.size,
            tuples: self.assignment.iter().map(|&k| tuples[k as usize]).collect(),
        })
    }
}

/// Convenience wrapper: build the oracle for `field_rest` and evaluate it once.
pub fn oracle_flow(
    field_rest: &MarkerField,
    field_pressed: &MarkerField,
    cam: &CameraModel,
    size: usize,
) -> Result<FlowField> {
    OracleFlow::new(field_rest, cam, size)?.flow_field(field_pressed)
}

/// One case of the translation benchmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationCase {
    pub du: f64,
    pub dv: f64,
    /// Mean endpoint error in px.
    pub epe: f64,
}

/// Renders the rest markers of `sensor`, shifts every splat by a seeded
/// translation of at most `max_shift_px` and scores the estimated flow
/// against it. Markers just outside the frame are rendered too, so texture
/// enters the frame as it moves.
pub fn translation_benchmark(
    sensor: &SensorConfig,
    params: &FlowParams,
    cases: usize,
    max_shift_px: f64,
    seed: u64,
) -> Result<Vec<TranslationCase>> {
    let field = MarkerField::generate(sensor);
    let cam = CameraModel::from_sensor(sensor);
    let d_max = sensor.marker_diameter_um.1;
    let points = field
        .positions
        .iter()
        .zip(&field.diameters_um)
        .map(|(&p, d)| Ok((cam.project_marker(p)?.pixel, ((d / d_max) * (d / d_max)) as f32)))
        .collect::<Result<Vec<_>>>()?;
    let size = sensor.image_size_px;
    let rest = render_points(&points, size, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|k| {
            let radius = max_shift_px * rng.gen::<f64>().sqrt();
            let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let (du, dv) = (radius * theta.cos(), radius * theta.sin());
            let moved: Vec<(Pixel, f32)> = points
                .iter()
                .map(|(p, b)| (Pixel::new(p.u + du, p.v + dv), *b))
                .collect();
            let pressed = render_points(&moved, size, k as u64 + 1);
            let flow = compute_flow(&rest, &pressed, params)?;
            Ok(TranslationCase {
                du,
                dv,
                epe: flow.mean_endpoint_error(du, dv),
            })
        })
        .collect()
}

fn nearest_assignment(points: &[Pixel], candidates: &[u32], size: usize) -> Vec<u32> {
    const CELL: usize = 8;
    let cells = size.div_ceil(CELL);
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); cells * cells];
    let cell_of = |c: f64| ((c.max(0.0) as usize) / CELL).min(cells - 1);
    for &k in candidates {
        let p = points[k as usize];
        buckets[cell_of(p.v) * cells + cell_of(p.u)].push(k);
    }

    let mut out = vec![0u32; size * size];
    for row in 0..size {
        for col in 0..size {
            let (cx, cy) = (col / CELL, row / CELL);
            let mut best: Option<(f64, u32)> = None;
            let mut ring = 0usize;
            loop {
                let lo_x = cx.saturating_sub(ring);
                let hi_x = (cx + ring).min(cells - 1);
                let lo_y = cy.saturating_sub(ring);
                let hi_y = (cy + ring).min(cells - 1);
                for by in lo_y..=hi_y {
                    for bx in lo_x..=hi_x {
                        if by.abs_diff(cy) != ring && bx.abs_diff(cx) != ring {
                            continue;
                        }
                        for &k in &buckets[by * cells + bx] {
                            let p = points[k as usize];
                            let d = (p.u - col as f64).powi(2) + (p.v - row as f64).powi(2);
                            let better = match best {
                                None => true,
                                Some((bd, bk)) => d < bd || (d == bd && k < bk),
                            };
                            if better {
                                best = Some((d, k));
                            }
                        }
                    }
                }
                if let Some((d, _)) = best {
                    let reach = (ring * CELL) as f64;
                    if d <= reach * reach {
                        break;
                    }
                }
                if ring > cells {
                    break;
                }
                ring += 1;
            }
            out[row * size + col] = best.map(|b| b.1).unwrap_or(0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;

    fn random_points(seed: u64, count: usize, size: usize) -> Vec<(Pixel, f32)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                (
                    Pixel::new(
                        rng.gen_range(-10.0..size as f64 + 10.0),
                        rng.gen_range(-10.0..size as f64 + 10.0),
                    ),
                    rng.gen_range(0.7..1.0),
                )
            })
            .collect()
    }

    fn shift(points: &[(Pixel, f32)], du: f64, dv: f64) -> Vec<(Pixel, f32)> {
        points
            .iter()
            .map(|(p, b)| (Pixel::new(p.u + du, p.v + dv), *b))
            .collect()
    }

    #[test]
    fn angle_normalisation() {
        use std::f64::consts::PI;
        assert_eq!(normalize_angle(-PI), PI);
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(FlowTuple::from_components(-1.0, -0.0).angle, PI);
        assert_eq!(FlowTuple::from_components(0.0, 0.0), FlowTuple::default());
    }

    #[test]
    fn identical_images_give_zero_flow() {
        let pts = random_points(1, 900, 96);
        let img = render_points(&pts, 96, 0);
        let flow = compute_flow(&img, &img, &FlowParams::default()).unwrap();
        assert!(flow.tuples.iter().all(|t| t.magnitude == 0.0));
    }

    #[test]
    fn recovers_small_translation() {
        let pts = random_points(2, 900, 96);
        let rest = render_points(&pts, 96, 0);
        let pressed = render_points(&shift(&pts, 3.0, 0.0), 96, 1);
        let flow = compute_flow(&rest, &pressed, &FlowParams::default()).unwrap();
        let epe = flow.mean_endpoint_error(3.0, 0.0);
        assert!(epe <= 0.25, "epe {epe}");
    }

    #[test]
    fn recovers_diagonal_subpixel_translation() {
        let pts = random_points(3, 900, 96);
        let rest = render_points(&pts, 96, 0);
        let pressed = render_points(&shift(&pts, -5.3, 4.6), 96, 1);
        let flow = compute_flow(&rest, &pressed, &FlowParams::default()).unwrap();
        let epe = flow.mean_endpoint_error(-5.3, 4.6);
        assert!(epe <= 0.25, "epe {epe}");
    }

    #[test]
    fn deterministic() {
        let pts = random_points(4, 900, 96);
        let rest = render_points(&pts, 96, 0);
        let pressed = render_points(&shift(&pts, 1.7, -2.2), 96, 1);
        let a = compute_flow(&rest, &pressed, &FlowParams::default()).unwrap();
        let b = compute_flow(&rest, &pressed, &FlowParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn blank_rest_frame_is_untrackable() {
        let blank = MarkerImage::zeros(64, 0);
        let other = render_points(&random_points(5, 100, 64), 64, 1);
        assert!(matches!(
            compute_flow(&blank, &other, &FlowParams::default()),
            Err(Error::NoTrackablePattern)
        ));
    }

    #[test]
    fn argument_validation() {
        let a = render_points(&random_points(6, 100, 64), 64, 0);
        let b = render_points(&random_points(6, 100, 48), 48, 0);
        assert!(matches!(
            compute_flow(&a, &b, &FlowParams::default()),
            Err(Error::Shape { .. })
        ));
        let bad_levels = FlowParams {
            levels: 0,
            ..FlowParams::default()
        };
        assert!(compute_flow(&a, &a, &bad_levels).is_err());
        let bad_patch = FlowParams {
            patch_px: 3,
            ..FlowParams::default()
        };
        assert!(compute_flow(&a, &a, &bad_patch).is_err());
    }

    fn small_sensor() -> SensorConfig {
        SensorConfig {
            marker_count: 1500,
            image_size_px: 96,
            focal_px: 96.0,
            ..SensorConfig::default()
        }
    }

    #[test]
    fn oracle_zero_displacement_is_zero_flow() {
        let cfg = small_sensor();
        let field = MarkerField::generate(&cfg);
        let cam = CameraModel::from_sensor(&cfg);
        let flow = oracle_flow(&field, &field, &cam, 96).unwrap();
        assert!(flow.tuples.iter().all(|t| t.magnitude == 0.0));
    }

    #[test]
    fn oracle_lateral_shift_scales_with_inverse_depth() {
        let cfg = small_sensor();
        let field = MarkerField::generate(&cfg);
        let cam = CameraModel::from_sensor(&cfg);
        let moved = MarkerField {
            positions: field
                .positions
                .iter()
                .map(|&p| p + Vec3::new(0.2, 0.0, 0.0))
                .collect(),
            ..field.clone()
        };
        let oracle = OracleFlow::new(&field, &cam, 96).unwrap();
        let flows = oracle.marker_flows(&moved).unwrap();
        for (i, &(du, dv)) in flows.iter().enumerate() {
            let z = cam.to_camera(field.positions[i]).z;
            assert!((du - cam.focal_px * 0.2 / z).abs() < 1e-9);
            assert!(dv.abs() < 1e-12);
        }
        let dense = oracle.flow_field(&moved).unwrap();
        for (pix, &k) in oracle.assignment().iter().enumerate() {
            let (du, _) = dense.tuples[pix].components();
            assert!((du - flows[k as usize].0).abs() < 1e-9);
        }
    }

    #[test]
    fn nearest_assignment_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let size = 40;
        let pts: Vec<Pixel> = (0..70)
            .map(|_| Pixel::new(rng.gen_range(-0.5..39.5), rng.gen_range(-0.5..39.5)))
            .collect();
        let cand: Vec<u32> = (0..70).collect();
        let fast = nearest_assignment(&pts, &cand, size);
        for row in 0..size {
            for col in 0..size {
                let mut best = (f64::INFINITY, 0u32);
                for (k, p) in pts.iter().enumerate() {
                    let d = (p.u - col as f64).powi(2) + (p.v - row as f64).powi(2);
                    if d < best.0 {
                        best = (d, k as u32);
                    }
                }
                assert_eq!(fast[row * size + col], best.1, "pixel ({col},{row})");
            }
        }
    }
}
