//! Marker displacements in a linear-elastic half-space under concentrated
//! normal loads.
//!
//! The half-space occupies `z > 0` with `z` measured downward from the loaded
//! surface. For a normal point load `F` at the origin the classical solution is
//!
//! ```text
//! u_r = F / (4 pi G) * ( r z / rho^3 - (1 - 2 nu) r / (rho (rho + z)) )
//! u_z = F / (4 pi G) * ( z^2 / rho^3 + 2 (1 - nu) / rho )
//! ```
//!
//! with `rho = sqrt(r^2 + z^2)` and shear modulus `G = E / (2 (1 + nu))`.
//! Positive `u_z` points away from the surface, i.e. toward the camera.
//! Every displacement is `F` times a factor that depends only on geometry and
//! material, so `u = h(E) F` holds by construction.
//!
//! The material constants are simulation parameters, not measurements.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SensorConfig;
use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Linear-elastic gel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GelMaterial {
    pub youngs_modulus_kpa: f64,
    pub poisson_ratio: f64,
}

impl GelMaterial {
    pub fn new(youngs_modulus_kpa: f64, poisson_ratio: f64) -> Result<Self> {
        if !(youngs_modulus_kpa > 0.0 && youngs_modulus_kpa.is_finite()) {
            return Err(Error::invariant("youngs_modulus_kpa must be strictly positive"));
        }
        if !(poisson_ratio > 0.0 && poisson_ratio < 0.5) {
            return Err(Error::invariant("poisson_ratio must lie in (0, 0.5)"));
        }
        Ok(Self {
            youngs_modulus_kpa,
            poisson_ratio,
        })
    }

    pub fn from_sensor(cfg: &SensorConfig) -> Self {
        Self {
            youngs_modulus_kpa: cfg.youngs_modulus_kpa,
            poisson_ratio: cfg.poisson_ratio,
        }
    }

    /// Shear modulus in N/mm^2.
    pub fn shear_modulus(&self) -> f64 {
        // 1 kPa = 1e-3 N/mm^2
        self.youngs_modulus_kpa * 1e-3 / (2.0 * (1.0 + self.poisson_ratio))
    }

    /// The load-independent factor `1 / (4 pi G)` in mm^2/N.
    pub fn hardness_scale(&self) -> f64 {
        1.0 / (4.0 * std::f64::consts::PI * self.shear_modulus())
    }
}

/// One press of the indenter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndentationEvent {
    /// Contact point on the surface, `(x, y)` in mm.
    pub contact_mm: [f64; 2],
    pub depth_mm: f64,
    /// Force magnitude. Reported as negative (toward the camera) only at output time.
    pub force_n: f64,
    /// Tip radius; also the singularity cutoff of the point-load kernel.
    pub contact_radius_mm: f64,
}

impl IndentationEvent {
    pub fn new(contact_mm: [f64; 2], depth_mm: f64, force_n: f64, contact_radius_mm: f64) -> Result<Self> {
        if !(force_n >= 0.0 && force_n.is_finite()) {
            return Err(Error::invariant("force_n must be non-negative"));
        }
        if !(depth_mm >= 0.0 && depth_mm.is_finite()) {
            return Err(Error::invariant("depth_mm must be non-negative"));
        }
        if !(contact_radius_mm > 0.0) {
            return Err(Error::invariant("contact radius must be positive"));
        }
        Ok(Self {
            contact_mm,
            depth_mm,
            force_n,
            contact_radius_mm,
        })
    }

    /// Same event with the force scaled by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            force_n: self.force_n * alpha,
            ..*self
        }
    }
}

/// Depth-to-force map of the indenter: `F = c * depth^1.5`, with `c` fixed so
/// that `max_depth_mm` yields `max_force_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceLaw {
    pub max_force_n: f64,
    pub max_depth_mm: f64,
}

impl Default for ForceLaw {
    fn default() -> Self {
        Self {
            max_force_n: 1.0,
            max_depth_mm: 2.0,
        }
    }
}

impl ForceLaw {
    pub fn from_sensor(cfg: &SensorConfig) -> Self {
        Self {
            max_force_n: cfg.max_force_n,
            ..Self::default()
        }
    }
}

pub fn depth_to_force(depth_mm: f64, law: &ForceLaw) -> Result<f64> {
    if !(depth_mm >= 0.0) {
        return Err(Error::invariant("indentation depth must be non-negative"));
    }
    if depth_mm > law.max_depth_mm {
        return Err(Error::invariant(format!(
            "indentation depth {depth_mm} mm exceeds {} mm",
            law.max_depth_mm
        )));
    }
    Ok(law.max_force_n * (depth_mm / law.max_depth_mm).powf(1.5))
}

/// Displacement of a point at `(x, y)` on the surface plane and depth `z`
/// below the loaded surface.
///
/// Points closer to the contact point than the event's contact radius are
/// evaluated on the cutoff sphere along the same direction instead.
pub fn displacement_at(point: Vec3, load: &IndentationEvent, mat: &GelMaterial) -> Result<Vec3> {
    if !(point.z > 0.0) {
        return Err(Error::invariant("marker must lie strictly below the surface"));
    }
    if load.force_n == 0.0 {
        return Ok(Vec3::ZERO);
    }
    let dx = point.x - load.contact_mm[0];
    let dy = point.y - load.contact_mm[1];
    let r_true = dx.hypot(dy);
    let mut r = r_true;
    let mut z = point.z;
    let rho_true = r.hypot(z);
    if rho_true < load.contact_radius_mm {
        let s = load.contact_radius_mm / rho_true;
        r *= s;
        z *= s;
    }
    let rho = r.hypot(z);
    let nu = mat.poisson_ratio;
    let scale = load.force_n * mat.hardness_scale();
    let rho3 = rho * rho * rho;
    let u_r = scale * (r * z / rho3 - (1.0 - 2.0 * nu) * r / (rho * (rho + z)));
    let u_z = scale * (z * z / rho3 + 2.0 * (1.0 - nu) / rho);
    let (ux, uy) = if r_true > 0.0 {
        (u_r * dx / r_true, u_r * dy / r_true)
    } else {
        (0.0, 0.0)
    };
    Ok(Vec3::new(ux, uy, u_z))
}

/// Random marker pattern inside the transparent gel.
///
/// Positions use the gel-local frame: `x, y` in `[0, side]`, `z` the depth
/// below the top of the marker gel in `(0, gel_thickness)`. The loaded surface
/// lies `cover_mm` above that top face.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerField {
    pub positions: Vec<Vec3>,
    pub diameters_um: Vec<f64>,
    pub cover_mm: f64,
}

impl MarkerField {
    /// Draws `marker_count` markers from `rng_seed`. Same config, same field.
    pub fn generate(cfg: &SensorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let (d_lo, d_hi) = cfg.marker_diameter_um;
        let mut positions = Vec::with_capacity(cfg.marker_count);
        let mut diameters_um = Vec::with_capacity(cfg.marker_count);
        for _ in 0..cfg.marker_count {
            let x = rng.gen::<f64>() * cfg.surface_side_mm;
            let y = rng.gen::<f64>() * cfg.surface_side_mm;
            let mut t = 0.0;
            while t == 0.0 {
                t = rng.gen::<f64>();
            }
            positions.push(Vec3::new(x, y, t * cfg.gel_thickness_mm));
            diameters_um.push(d_lo + (d_hi - d_lo) * rng.gen::<f64>());
        }
        Self {
            positions,
            diameters_um,
            cover_mm: cfg.black_layer_mm,
        }
    }

    pub fn from_positions(positions: Vec<Vec3>, cover_mm: f64) -> Self {
        let diameters_um = vec![165.0; positions.len()];
        Self {
            positions,
            diameters_um,
            cover_mm,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Marker `i` in half-space coordinates (depth below the loaded surface).
    pub fn half_space_point(&self, i: usize) -> Vec3 {
        let p = self.positions[i];
        Vec3::new(p.x, p.y, p.z + self.cover_mm)
    }
}

/// Per-marker displacement summed over all events.
pub fn marker_displacements(
    field: &MarkerField,
    events: &[IndentationEvent],
    mat: &GelMaterial,
) -> Result<Vec<Vec3>> {
    (0..field.len())
        .map(|i| {
            let p = field.half_space_point(i);
            events.iter().try_fold(Vec3::ZERO, |acc, ev| {
                Ok(acc + displacement_at(p, ev, mat)?)
            })
        })
        .collect()
}

/// Field after applying the superposed displacement of every event.
pub fn displace_field(
    field: &MarkerField,
    events: &[IndentationEvent],
    mat: &GelMaterial,
) -> Result<MarkerField> {
    let disp = marker_displacements(field, events, mat)?;
    Ok(MarkerField {
        positions: field
            .positions
            .iter()
            .zip(&disp)
            .map(|(&p, &u)| p + u)
            .collect(),
        diameters_um: field.diameters_um.clone(),
        cover_mm: field.cover_mm,
    })
}
