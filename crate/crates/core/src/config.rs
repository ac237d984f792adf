//! Typed configuration for every pipeline stage.
//!
//! The on-disk format is flat `key = value` text. `#` starts a comment, blank
//! lines are ignored and every key is optional. Omitted keys take the defaults
//! below; [`Config::to_text`] writes every key back out, so a resolved config
//! can be stored next to a run and parsed again unchanged.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Environment variable that overrides [`SensorConfig::rng_seed`].
pub const SEED_ENV_VAR: &str = "TACTSIM_SEED";

/// Physical sensor geometry, gel material and imaging parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorConfig {
    pub surface_side_mm: f64,
    /// Thickness of the transparent, marker-carrying gel.
    pub gel_thickness_mm: f64,
    /// Opaque cover layer between the contact surface and the marker gel.
    pub black_layer_mm: f64,
    pub stiff_layer_mm: f64,
    pub marker_count: usize,
    /// Marker diameter range `(min, max)` in micrometres.
    pub marker_diameter_um: (f64, f64),
    /// Lens to the underside of the stiff base layer.
    pub camera_distance_mm: f64,
    pub focal_px: f64,
    pub image_size_px: usize,
    /// Seed of the random marker pattern.
    pub rng_seed: u64,
    pub youngs_modulus_kpa: f64,
    pub poisson_ratio: f64,
    /// Radius of the spherical indenter tip.
    pub indenter_radius_mm: f64,
    /// Force reached at the deepest indentation level.
    pub max_force_n: f64,
    /// Standard deviation of additive pixel noise in rendered images. 0 disables it.
    pub pixel_noise_std: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            surface_side_mm: 32.0,
            gel_thickness_mm: 4.5,
            black_layer_mm: 1.5,
            stiff_layer_mm: 17.0,
            marker_count: 8000,
            marker_diameter_um: (150.0, 180.0),
            camera_distance_mm: 15.0,
            focal_px: 440.0,
            image_size_px: 440,
            rng_seed: 1,
            youngs_modulus_kpa: 50.0,
            poisson_ratio: 0.49,
            indenter_radius_mm: 0.6,
            max_force_n: 1.0,
            pixel_noise_std: 0.0,
        }
    }
}

impl SensorConfig {
    /// Distance from the lens to the bottom of the marker gel.
    pub fn gel_base_distance_mm(&self) -> f64 {
        self.camera_distance_mm + self.stiff_layer_mm
    }

    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("surface_side_mm", self.surface_side_mm),
            ("gel_thickness_mm", self.gel_thickness_mm),
            ("black_layer_mm", self.black_layer_mm),
            ("stiff_layer_mm", self.stiff_layer_mm),
            ("camera_distance_mm", self.camera_distance_mm),
            ("focal_px", self.focal_px),
            ("youngs_modulus_kpa", self.youngs_modulus_kpa),
            ("indenter_radius_mm", self.indenter_radius_mm),
            ("max_force_n", self.max_force_n),
        ];
        for (name, v) in lengths {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invariant(format!("{name} must be strictly positive")));
            }
        }
        if self.marker_count < 1 {
            return Err(Error::invariant("marker_count must be at least 1"));
        }
        let (lo, hi) = self.marker_diameter_um;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::invariant(
                "marker_diameter_um must be a positive range min,max",
            ));
        }
        if self.image_size_px < 32 {
            return Err(Error::invariant("image_size_px must be at least 32"));
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return Err(Error::invariant("poisson_ratio must lie in (0, 0.5)"));
        }
        if !(self.pixel_noise_std >= 0.0 && self.pixel_noise_std.is_finite()) {
            return Err(Error::invariant("pixel_noise_std must be non-negative"));
        }
        Ok(())
    }
}

/// Feature/label resolution, dataset sweep and network training parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Number of image regions; a perfect square.
    pub m: usize,
    /// Number of surface bins; a perfect square.
    pub n: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Early-stopping patience in epochs.
    pub n_es: usize,
    pub dropout_rate: f64,
    pub hidden_sizes: Vec<usize>,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub max_epochs: usize,
    /// Seed for dataset splits, weight init, shuffling and dropout.
    pub seed: u64,
    pub grid_spacing_mm: f64,
    pub depth_levels_mm: Vec<f64>,
    /// Drop contact points whose tip circle crosses the surface boundary.
    pub skip_edge_contacts: bool,
    pub flow_levels: usize,
    pub flow_patch_px: usize,
    pub flow_stride_px: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            m: 1600,
            n: 81,
            batch_size: 200,
            learning_rate: 0.001,
            n_es: 50,
            dropout_rate: 0.15,
            hidden_sizes: vec![800, 400, 400],
            validation_fraction: 0.1,
            test_fraction: 0.2,
            max_epochs: 1000,
            seed: 7,
            grid_spacing_mm: 0.75,
            depth_levels_mm: (1..=8).map(|k| 0.25 * k as f64).collect(),
            skip_edge_contacts: false,
            flow_levels: 4,
            flow_patch_px: 8,
            flow_stride_px: 4,
        }
    }
}

pub(crate) fn is_perfect_square(v: usize) -> bool {
    let r = (v as f64).sqrt().round() as usize;
    r * r == v
}

pub(crate) fn fraction_ok(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || !is_perfect_square(self.m) {
            return Err(Error::invariant("m must be a perfect square"));
        }
        if self.n == 0 || !is_perfect_square(self.n) {
            return Err(Error::invariant("n must be a perfect square"));
        }
        if self.batch_size == 0 {
            return Err(Error::invariant("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invariant("learning_rate must be positive"));
        }
        if self.n_es == 0 {
            return Err(Error::invariant("n_es must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invariant("dropout_rate must lie in [0, 1)"));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::invariant("hidden_sizes must be positive widths"));
        }
        if !fraction_ok(self.test_fraction) {
            return Err(Error::invariant("test_fraction must lie in (0, 1)"));
        }
        if !fraction_ok(self.validation_fraction) {
            return Err(Error::invariant("validation_fraction must lie in (0, 1)"));
        }
        if self.test_fraction + self.validation_fraction >= 1.0 {
            return Err(Error::invariant(
                "test_fraction + validation_fraction must be below 1",
            ));
        }
        if self.max_epochs == 0 {
            return Err(Error::invariant("max_epochs must be positive"));
        }
        if !(self.grid_spacing_mm > 0.0 && self.grid_spacing_mm.is_finite()) {
            return Err(Error::invariant("grid_spacing_mm must be positive"));
        }
        if self.depth_levels_mm.is_empty()
            || self
                .depth_levels_mm
                .iter()
                .any(|d| !(0.25..=2.0).contains(d))
        {
            return Err(Error::invariant(
                "depth_levels_mm must be non-empty and within [0.25, 2.0]",
            ));
        }
        if self.flow_levels == 0 {
            return Err(Error::invariant("flow_levels must be at least 1"));
        }
        if self.flow_patch_px < 4 {
            return Err(Error::invariant("flow_patch_px must be at least 4"));
        }
        if self.flow_stride_px == 0 {
            return Err(Error::invariant("flow_stride_px must be positive"));
        }
        Ok(())
    }
}

/// Parameters for training the calibration layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_es: usize,
    pub dropout_rate: f64,
    pub calib_dataset_size: usize,
    pub max_epochs: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 0.0001,
            n_es: 200,
            dropout_rate: 0.05,
            calib_dataset_size: 800,
            max_epochs: 3000,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invariant("calib_batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invariant("calib_learning_rate must be positive"));
        }
        if self.n_es == 0 {
            return Err(Error::invariant("calib_n_es must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invariant("calib_dropout_rate must lie in [0, 1)"));
        }
        if self.calib_dataset_size == 0 {
            return Err(Error::invariant("calib_dataset_size must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invariant("calib_max_epochs must be positive"));
        }
        Ok(())
    }
}

/// The three resolved configuration sections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub sensor: SensorConfig,
    pub pipeline: PipelineConfig,
    pub calibration: CalibrationConfig,
}

/// Reads and validates a config file. Omitted keys keep their defaults.
pub fn load_config(path: impl AsRef<Path>) -> Result<Config> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Config::parse(&text)
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse::<T>().map_err(|_| Error::ConfigParse {
        line,
        message: format!("invalid value {raw:?} for {key}"),
    })
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|s| parse_value(line, key, s.trim()))
        .collect()
}

fn parse_bool(line: usize, key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::ConfigParse {
            line,
            message: format!("invalid boolean {raw:?} for {key}"),
        }),
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl Config {
    /// Parses config text and validates every section.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::ConfigParse {
                    line,
                    message: format!("expected `key = value`, found {content:?}"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            let canonical = match key {
                "dropout" => "dropout_rate",
                "calib_dropout" => "calib_dropout_rate",
                other => other,
            };
            if !seen.insert(canonical.to_string()) {
                return Err(Error::ConfigParse {
                    line,
                    message: format!("duplicate key {key}"),
                });
            }
            cfg.set(line, canonical, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let s = &mut self.sensor;
        let p = &mut self.pipeline;
        let c = &mut self.calibration;
        match key {
            "surface_side_mm" => s.surface_side_mm = parse_value(line, key, v)?,
            "gel_thickness_mm" => s.gel_thickness_mm = parse_value(line, key, v)?,
            "black_layer_mm" => s.black_layer_mm = parse_value(line, key, v)?,
            "stiff_layer_mm" => s.stiff_layer_mm = parse_value(line, key, v)?,
            "marker_count" => s.marker_count = parse_value(line, key, v)?,
            "marker_diameter_um" => {
                let range: Vec<f64> = parse_list(line, key, v)?;
                if range.len() != 2 {
                    return Err(Error::ConfigParse {
                        line,
                        message: "marker_diameter_um expects `min,max`".into(),
                    });
                }
                s.marker_diameter_um = (range[0], range[1]);
            }
            "camera_distance_mm" => s.camera_distance_mm = parse_value(line, key, v)?,
            "focal_px" => s.focal_px = parse_value(line, key, v)?,
            "image_size_px" => s.image_size_px = parse_value(line, key, v)?,
            "rng_seed" => s.rng_seed = parse_value(line, key, v)?,
            "youngs_modulus_kpa" => s.youngs_modulus_kpa = parse_value(line, key, v)?,
            "poisson_ratio" => s.poisson_ratio = parse_value(line, key, v)?,
            "indenter_radius_mm" => s.indenter_radius_mm = parse_value(line, key, v)?,
            "max_force_n" => s.max_force_n = parse_value(line, key, v)?,
            "pixel_noise_std" => s.pixel_noise_std = parse_value(line, key, v)?,

            "m" => p.m = parse_value(line, key, v)?,
            "n" => p.n = parse_value(line, key, v)?,
            "batch_size" => p.batch_size = parse_value(line, key, v)?,
            "learning_rate" => p.learning_rate = parse_value(line, key, v)?,
            "n_es" => p.n_es = parse_value(line, key, v)?,
            "dropout_rate" => p.dropout_rate = parse_value(line, key, v)?,
            "hidden_sizes" => p.hidden_sizes = parse_list(line, key, v)?,
            "validation_fraction" => p.validation_fraction = parse_value(line, key, v)?,
            "test_fraction" => p.test_fraction = parse_value(line, key, v)?,
            "max_epochs" => p.max_epochs = parse_value(line, key, v)?,
            "seed" => p.seed = parse_value(line, key, v)?,
            "grid_spacing_mm" => p.grid_spacing_mm = parse_value(line, key, v)?,
            "depth_levels_mm" => p.depth_levels_mm = parse_list(line, key, v)?,
            "skip_edge_contacts" => p.skip_edge_contacts = parse_bool(line, key, v)?,
            "flow_levels" => p.flow_levels = parse_value(line, key, v)?,
            "flow_patch_px" => p.flow_patch_px = parse_value(line, key, v)?,
            "flow_stride_px" => p.flow_stride_px = parse_value(line, key, v)?,

            "calib_batch_size" => c.batch_size = parse_value(line, key, v)?,
            "calib_learning_rate" => c.learning_rate = parse_value(line, key, v)?,
            "calib_n_es" => c.n_es = parse_value(line, key, v)?,
            "calib_dropout_rate" => c.dropout_rate = parse_value(line, key, v)?,
            "calib_dataset_size" => c.calib_dataset_size = parse_value(line, key, v)?,
            "calib_max_epochs" => c.max_epochs = parse_value(line, key, v)?,
            _ => {
                return Err(Error::ConfigParse {
                    line,
                    message: format!("unknown key {key}"),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        self.pipeline.validate()?;
        self.calibration.validate()
    }

    /// Applies the `TACTSIM_SEED` environment override, if set.
    pub fn with_env_overrides(mut self) -> Result<Self> {
        if let Ok(raw) = std::env::var(SEED_ENV_VAR) {
            self.sensor.rng_seed = raw.trim().parse().map_err(|_| {
                Error::invariant(format!("{SEED_ENV_VAR} must be an unsigned integer"))
            })?;
        }
        Ok(self)
    }

    /// Writes every key, resolved, in a fixed order.
    pub fn to_text(&self) -> String {
        let s = &self.sensor;
        let p = &self.pipeline;
        let c = &self.calibration;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("surface_side_mm", s.surface_side_mm.to_string());
        kv("gel_thickness_mm", s.gel_thickness_mm.to_string());
        kv("black_layer_mm", s.black_layer_mm.to_string());
        kv("stiff_layer_mm", s.stiff_layer_mm.to_string());
        kv("marker_count", s.marker_count.to_string());
        kv(
            "marker_diameter_um",
            format!("{},{}", s.marker_diameter_um.0, s.marker_diameter_um.1),
        );
        kv("camera_distance_mm", s.camera_distance_mm.to_string());
        kv("focal_px", s.focal_px.to_string());
        kv("image_size_px", s.image_size_px.to_string());
        kv("rng_seed", s.rng_seed.to_string());
        kv("youngs_modulus_kpa", s.youngs_modulus_kpa.to_string());
        kv("poisson_ratio", s.poisson_ratio.to_string());
        kv("indenter_radius_mm", s.indenter_radius_mm.to_string());
        kv("max_force_n", s.max_force_n.to_string());
        kv("pixel_noise_std", s.pixel_noise_std.to_string());

        kv("m", p.m.to_string());
        kv("n", p.n.to_string());
        kv("batch_size", p.batch_size.to_string());
        kv("learning_rate", p.learning_rate.to_string());
        kv("n_es", p.n_es.to_string());
        kv("dropout_rate", p.dropout_rate.to_string());
        kv("hidden_sizes", join(&p.hidden_sizes));
        kv("validation_fraction", p.validation_fraction.to_string());
        kv("test_fraction", p.test_fraction.to_string());
        kv("max_epochs", p.max_epochs.to_string());
        kv("seed", p.seed.to_string());
        kv("grid_spacing_mm", p.grid_spacing_mm.to_string());
        kv("depth_levels_mm", join(&p.depth_levels_mm));
        kv("skip_edge_contacts", p.skip_edge_contacts.to_string());
        kv("flow_levels", p.flow_levels.to_string());
        kv("flow_patch_px", p.flow_patch_px.to_string());
        kv("flow_stride_px", p.flow_stride_px.to_string());

        kv("calib_batch_size", c.batch_size.to_string());
        kv("calib_learning_rate", c.learning_rate.to_string());
        kv("calib_n_es", c.n_es.to_string());
        kv("calib_dropout_rate", c.dropout_rate.to_string());
        kv("calib_dataset_size", c.calib_dataset_size.to_string());
        kv("calib_max_epochs", c.max_epochs.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_table_defaults() {
        let cfg = Config::parse("").unwrap();
        assert_eq!(cfg.pipeline.m, 1600);
        assert_eq!(cfg.pipeline.n, 81);
        assert_eq!(cfg.pipeline.batch_size, 200);
        assert_eq!(cfg.pipeline.learning_rate, 0.001);
        assert_eq!(cfg.pipeline.n_es, 50);
        assert_eq!(cfg.pipeline.dropout_rate, 0.15);
        assert_eq!(cfg.pipeline.hidden_sizes, vec![800, 400, 400]);
        assert_eq!(cfg.pipeline.test_fraction, 0.2);
        assert_eq!(cfg.calibration.batch_size, 64);
        assert_eq!(cfg.calibration.learning_rate, 0.0001);
        assert_eq!(cfg.calibration.n_es, 200);
        assert_eq!(cfg.calibration.dropout_rate, 0.05);
        assert_eq!(cfg.calibration.calib_dataset_size, 800);
        assert_eq!(cfg.sensor.surface_side_mm, 32.0);
        assert_eq!(cfg.sensor.gel_thickness_mm, 4.5);
        assert_eq!(cfg.sensor.image_size_px, 440);
        assert_eq!(
            cfg.pipeline.depth_levels_mm,
            vec![0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0]
        );
    }

    #[test]
    fn draft_overrides_apply() {
        let cfg = Config::parse("# draft table\nm = 400\nn_es = 5\ndropout = 0.1\n").unwrap();
        assert_eq!(cfg.pipeline.m, 400);
        assert_eq!(cfg.pipeline.n_es, 5);
        assert_eq!(cfg.pipeline.dropout_rate, 0.1);
        assert_eq!(cfg.pipeline.n, 81);
    }

    #[test]
    fn non_square_m_is_rejected() {
        let err = Config::parse("m = 1601").unwrap_err();
        assert!(err.to_string().contains("m must be a perfect square"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match Config::parse("n = 81\n\nbatch_size = lots\n").unwrap_err() {
            Error::ConfigParse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match Config::parse("bogus = 1").unwrap_err() {
            Error::ConfigParse { line, message } => {
                assert_eq!(line, 1);
                assert!(message.contains("unknown key"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Config::parse("no equals sign").unwrap_err(),
            Error::ConfigParse { line: 1, .. }
        ));
        assert!(matches!(
            Config::parse("m = 400\nm = 100").unwrap_err(),
            Error::ConfigParse { line: 2, .. }
        ));
    }

    #[test]
    fn invariant_violations() {
        for (text, needle) in [
            ("test_fraction = 0", "test_fraction"),
            ("validation_fraction = 1.5", "validation_fraction"),
            ("test_fraction = 0.6\nvalidation_fraction = 0.5", "below 1"),
            ("image_size_px = 16", "image_size_px"),
            ("gel_thickness_mm = -1", "gel_thickness_mm"),
            ("poisson_ratio = 0.5", "poisson_ratio"),
            ("calib_dropout_rate = 1", "calib_dropout_rate"),
            ("n = 80", "n must be a perfect square"),
            ("marker_count = 0", "marker_count"),
        ] {
            let err = Config::parse(text).unwrap_err();
            assert!(matches!(err, Error::Invariant(_)), "{text}: {err:?}");
            assert!(err.to_string().contains(needle), "{text}: {err}");
        }
    }

    #[test]
    fn text_round_trip_default_and_custom() {
        let cfg = Config::default();
        assert_eq!(Config::parse(&cfg.to_text()).unwrap(), cfg);

        let custom = Config::parse(
            "m = 400\nlearning_rate = 0.0003\nhidden_sizes = 64,32\n\
             marker_diameter_um = 151.5,170\ndepth_levels_mm = 0.5,1.75\n\
             skip_edge_contacts = true\ncalib_learning_rate = 1e-5\nrng_seed = 99\n",
        )
        .unwrap();
        assert_eq!(Config::parse(&custom.to_text()).unwrap(), custom);
    }

    #[test]
    fn perfect_squares() {
        assert!(is_perfect_square(1600));
        assert!(is_perfect_square(81));
        assert!(!is_perfect_square(1601));
        assert!(!is_perfect_square(2));
    }
}
