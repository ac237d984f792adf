//! Pinhole projection of gel markers and synthetic grayscale rendering.
//!
//! The camera sits below the gel looking up along the surface normal through
//! the centre of the sensing area. A marker at lateral offset `(X, Y)` from the
//! optical axis and distance `Z` from the lens lands at
//! `principal_point + focal_px * (X, Y) / Z`, so its radial image distance
//! scales as `1 / Z`.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::SensorConfig;
use crate::elastic::MarkerField;
use crate::error::{Error, Result};
use crate::geom::{Pixel, Vec3};

/// Standard deviation of a rendered marker splat, in pixels.
pub const SPLAT_SIGMA_PX: f64 = 1.2;
const SPLAT_RADIUS_PX: i64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub focal_px: f64,
    pub principal_point: Pixel,
    /// Optical centre to the bottom face of the marker gel.
    pub z_offset_mm: f64,
    pub gel_thickness_mm: f64,
    pub surface_side_mm: f64,
    pub image_size_px: usize,
}

/// Result of projecting one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Pixel,
    /// `false` when the pixel falls outside the image frame.
    pub inside: bool,
}

impl CameraModel {
    pub fn from_sensor(cfg: &SensorConfig) -> Self {
        let c = (cfg.image_size_px as f64 - 1.0) / 2.0;
        Self {
            focal_px: cfg.focal_px,
            principal_point: Pixel::new(c, c),
            z_offset_mm: cfg.gel_base_distance_mm(),
            gel_thickness_mm: cfg.gel_thickness_mm,
            surface_side_mm: cfg.surface_side_mm,
            image_size_px: cfg.image_size_px,
        }
    }

    /// Gel-local marker position to the camera frame (`z` = distance from the lens).
    pub fn to_camera(&self, marker: Vec3) -> Vec3 {
        let half = self.surface_side_mm / 2.0;
        Vec3::new(
            marker.x - half,
            marker.y - half,
            self.z_offset_mm + self.gel_thickness_mm - marker.z,
        )
    }

    /// Projects a camera-frame point.
    pub fn project(&self, p: Vec3) -> Result<Projection> {
        if !(p.z > 0.0) {
            return Err(Error::invariant("point must lie in front of the lens (z > 0)"));
        }
        let pixel = Pixel::new(
            self.principal_point.u + self.focal_px * p.x / p.z,
            self.principal_point.v + self.focal_px * p.y / p.z,
        );
        Ok(Projection {
            pixel,
            inside: self.contains(pixel),
        })
    }

    pub fn project_marker(&self, marker: Vec3) -> Result<Projection> {
        self.project(self.to_camera(marker))
    }

    pub fn contains(&self, px: Pixel) -> bool {
        let hi = self.image_size_px as f64 - 0.5;
        px.u >= -0.5 && px.u < hi && px.v >= -0.5 && px.v < hi
    }
}

/// Square grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerImage {
    pub size: usize,
    pub pixels: Vec<f32>,
    pub frame_id: u64,
}

impl MarkerImage {
    pub fn zeros(size: usize, frame_id: u64) -> Self {
        Self {
            size,
            pixels: vec![0.0; size * size],
            frame_id,
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.pixels[row * self.size + col]
    }

    pub fn max_intensity(&self) -> f32 {
        self.pixels.iter().copied().fold(0.0, f32::max)
    }

    /// Writes a binary 8-bit PGM, scaled so the brightest pixel maps to 255.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let peak = self.max_intensity();
        let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
        let mut buf = format!("P5\n{} {}\n255\n", self.size, self.size).into_bytes();
        buf.extend(
            self.pixels
                .iter()
                .map(|&p| (p * scale).round().clamp(0.0, 255.0) as u8),
        );
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }
}

/// A rendered frame plus the number of markers that fell outside it.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: MarkerImage,
    pub skipped: usize,
}

/// Splats each `(pixel, brightness)` as an isotropic Gaussian whose weights sum
/// to `brightness`, then clamps to `[0, 1]`.
pub fn render_points(points: &[(Pixel, f32)], size: usize, frame_id: u64) -> MarkerImage {
    let mut img = MarkerImage::zeros(size, frame_id);
    let inv_two_sigma2 = 1.0 / (2.0 * SPLAT_SIGMA_PX * SPLAT_SIGMA_PX);
    let span = (2 * SPLAT_RADIUS_PX + 1) as usize;
    let mut weights = vec![0.0f64; span * span];
    for &(px, brightness) in points {
        let cu = px.u.round() as i64;
        let cv = px.v.round() as i64;
        let mut total = 0.0;
        for (k, w) in weights.iter_mut().enumerate() {
            let du = (cu - SPLAT_RADIUS_PX + (k % span) as i64) as f64 - px.u;
            let dv = (cv - SPLAT_RADIUS_PX + (k / span) as i64) as f64 - px.v;
            *w = (-(du * du + dv * dv) * inv_two_sigma2).exp();
            total += *w;
        }
        let norm = brightness as f64 / total;
        for (k, w) in weights.iter().enumerate() {
            let col = cu - SPLAT_RADIUS_PX + (k % span) as i64;
            let row = cv - SPLAT_RADIUS_PX + (k / span) as i64;
            if col < 0 || row < 0 || col >= size as i64 || row >= size as i64 {
                continue;
            }
            img.pixels[row as usize * size + col as usize] += (w * norm) as f32;
        }
    }
    for p in &mut img.pixels {
        *p = p.clamp(0.0, 1.0);
    }
    img
}

/// Renders every marker whose projection lands in the frame.
///
/// Brightness scales with the marker cross-section relative to the largest
/// configured diameter. With `pixel_noise_std > 0`, Gaussian noise seeded by
/// `(rng_seed, frame_id)` is added before clamping.
pub fn render(field: &MarkerField, cam: &CameraModel, cfg: &SensorConfig, frame_id: u64) -> Result<Rendered> {
    let d_max = cfg.marker_diameter_um.1;
    let mut points = Vec::with_capacity(field.len());
    let mut skipped = 0;
    for (p, d) in field.positions.iter().zip(&field.diameters_um) {
        let proj = cam.project_marker(*p)?;
        if proj.inside {
            points.push((proj.pixel, ((d / d_max) * (d / d_max)) as f32));
        } else {
            skipped += 1;
        }
    }
    let mut image = render_points(&points, cam.image_size_px, frame_id);
    if cfg.pixel_noise_std > 0.0 {
        let seed = cfg.rng_seed ^ frame_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, cfg.pixel_noise_std)
            .map_err(|e| Error::invariant(format!("pixel noise: {e}")))?;
        for p in &mut image.pixels {
            *p = (*p as f64 + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(Rendered { image, skipped })
}
