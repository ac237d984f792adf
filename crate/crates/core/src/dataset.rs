//! Simulated indentation sweeps, the binary dataset format, and seeded splits.
//!
//! # File format
//!
//! All integers and floats are little-endian.
//!
//! | field        | type        |
//! |--------------|-------------|
//! | magic        | `b"TSIM"`   |
//! | version      | u32 (1)     |
//! | m, n         | u32, u32    |
//! | count        | u64         |
//! | config hash  | 8 bytes     |
//! | seed         | u64         |
//! | backend      | u8          |
//! | records      | `count` x (`2m` f32 features, `n` f32 label, x, y, depth, force as f64, gel id u64) |
//! | crc32        | u32 over every preceding byte |
//!
//! A JSON-lines sidecar (`<file>.jsonl`) repeats the metadata for inspection.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::camera::{render, CameraModel};
use crate::config::Config;
use crate::elastic::{depth_to_force, displace_field, ForceLaw, GelMaterial, IndentationEvent, MarkerField};
use crate::error::{Error, Result};
use crate::features::{extract_features, SparseRegionMap};
use crate::flow::{compute_flow, FlowParams, OracleFlow};
use crate::labels::{bin_of, make_label};

const MAGIC: &[u8; 4] = b"TSIM";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8 + 8 + 8 + 1;

/// Lowest and highest depth a sweep may command, in mm.
pub const DEPTH_RANGE_MM: (f64, f64) = (0.25, 2.0);

/// How the flow between rest and pressed frames is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Exact projected marker displacement.
    Oracle,
    /// Render both frames and run the optical-flow estimator.
    Rendered,
}

impl Backend {
    fn tag(self) -> u8 {
        match self {
            Backend::Oracle => 0,
            Backend::Rendered => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Backend::Oracle),
            1 => Some(Backend::Rendered),
            _ => None,
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Oracle => "oracle",
            Backend::Rendered => "rendered",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Backend::Oracle),
            "rendered" => Ok(Backend::Rendered),
            other => Err(Error::invariant(format!(
                "unknown backend {other:?} (expected oracle or rendered)"
            ))),
        }
    }
}

/// Ground truth for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleMeta {
    pub contact_mm: [f64; 2],
    pub depth_mm: f64,
    pub force_n: f64,
    /// Marker seed of the gel that produced the sample.
    pub gel_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[magnitudes.., angles..]`, angles in `(-pi, pi]`.
    pub features: Vec<f32>,
    pub label: Vec<f32>,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub config_hash: [u8; 8],
    pub seed: u64,
    pub backend: Backend,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub m: usize,
    pub n: usize,
    pub samples: Vec<Sample>,
    pub provenance: Provenance,
}

/// First 8 bytes of the SHA-256 of the canonical config text.
pub fn config_hash(cfg: &Config) -> [u8; 8] {
    let digest = Sha256::digest(cfg.to_text().as_bytes());
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    out
}

/// Contact positions times depth levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    /// Row-major (y outer, x inner).
    pub positions: Vec<[f64; 2]>,
    pub depths_mm: Vec<f64>,
}

impl Sweep {
    /// Square grid `k * spacing` for `k = 0..=floor(side / spacing)` on both axes.
    /// With `edge_clearance_mm`, positions closer than that to any border are dropped.
    pub fn grid(side_mm: f64, spacing_mm: f64, depths_mm: Vec<f64>, edge_clearance_mm: Option<f64>) -> Result<Self> {
        if !(spacing_mm > 0.0) {
            return Err(Error::invariant("grid spacing must be positive"));
        }
        let steps = (side_mm / spacing_mm + 1e-9).floor() as usize;
        let axis: Vec<f64> = (0..=steps)
            .map(|k| (k as f64 * spacing_mm).min(side_mm))
            .filter(|&c| match edge_clearance_mm {
                Some(r) => c >= r && c <= side_mm - r,
                None => true,
            })
            .collect();
        let positions = axis
            .iter()
            .flat_map(|&y| axis.iter().map(move |&x| [x, y]))
            .collect();
        let sweep = Self { positions, depths_mm };
        sweep.validate(side_mm)?;
        Ok(sweep)
    }

    /// Centres of a `cells x cells` partition of the surface.
    pub fn cell_centers(side_mm: f64, cells: usize, depths_mm: Vec<f64>) -> Result<Self> {
        if cells == 0 {
            return Err(Error::invariant("cell count must be positive"));
        }
        let pitch = side_mm / cells as f64;
        let axis: Vec<f64> = (0..cells).map(|k| (k as f64 + 0.5) * pitch).collect();
        let positions = axis
            .iter()
            .flat_map(|&y| axis.iter().map(move |&x| [x, y]))
            .collect();
        let sweep = Self { positions, depths_mm };
        sweep.validate(side_mm)?;
        Ok(sweep)
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        let clearance = cfg
            .pipeline
            .skip_edge_contacts
            .then_some(cfg.sensor.indenter_radius_mm);
        Self::grid(
            cfg.sensor.surface_side_mm,
            cfg.pipeline.grid_spacing_mm,
            cfg.pipeline.depth_levels_mm.clone(),
            clearance,
        )
    }

    fn validate(&self, side_mm: f64) -> Result<()> {
        if self.depths_mm.is_empty() {
            return Err(Error::Empty("sweep has no depth levels"));
        }
        let (lo, hi) = DEPTH_RANGE_MM;
        if let Some(d) = self.depths_mm.iter().find(|d| !(**d >= lo && **d <= hi)) {
            return Err(Error::invariant(format!("depth {d} mm outside [{lo}, {hi}]")));
        }
        if let Some(p) = self
            .positions
            .iter()
            .find(|p| !(0.0..=side_mm).contains(&p[0]) || !(0.0..=side_mm).contains(&p[1]))
        {
            return Err(Error::invariant(format!("contact {p:?} outside the surface")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len() * self.depths_mm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(position, depth)` pairs, position-major.
    pub fn points(&self) -> impl Iterator<Item = ([f64; 2], f64)> + '_ {
        self.positions
            .iter()
            .flat_map(move |&p| self.depths_mm.iter().map(move |&d| (p, d)))
    }
}

fn to_f32_angle(a: f64) -> f32 {
    let v = a as f32;
    if (v as f64) > std::f64::consts::PI {
        f32::from_bits(v.to_bits() - 1)
    } else if (v as f64) <= -std::f64::consts::PI {
        // -pi itself is excluded; step toward zero.
        f32::from_bits(v.to_bits() - 1)
    } else {
        v
    }
}

fn pack_features(values: &[f64]) -> Vec<f32> {
    let m = values.len() / 2;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| if i < m { v as f32 } else { to_f32_angle(v) })
        .collect()
}

/// Runs `sweep` on the sensor described by `cfg`.
///
/// Samples come out in sweep order regardless of thread scheduling, so the
/// same config always yields the same bytes.
pub fn generate(cfg: &Config, sweep: &Sweep, backend: Backend) -> Result<Dataset> {
    cfg.validate()?;
    sweep.validate(cfg.sensor.surface_side_mm)?;
    if sweep.is_empty() {
        return Err(Error::Empty("sweep has no contact positions"));
    }
    let s = &cfg.sensor;
    let (m, n) = (cfg.pipeline.m, cfg.pipeline.n);
    let field = MarkerField::generate(s);
    let cam = CameraModel::from_sensor(s);
    let mat = GelMaterial::from_sensor(s);
    let law = ForceLaw::from_sensor(s);
    let size = s.image_size_px;

    let events: Vec<IndentationEvent> = sweep
        .points()
        .map(|(p, d)| IndentationEvent::new(p, d, depth_to_force(d, &law)?, s.indenter_radius_mm))
        .collect::<Result<_>>()?;

    let features: Vec<Vec<f32>> = match backend {
        Backend::Oracle => {
            let oracle = OracleFlow::new(&field, &cam, size)?;
            let regions = SparseRegionMap::new(oracle.assignment(), size, m)?;
            events
                .par_iter()
                .map(|ev| {
                    let pressed = displace_field(&field, std::slice::from_ref(ev), &mat)?;
                    let fv = regions.features(&oracle.marker_flows(&pressed)?)?;
                    Ok(pack_features(&fv.values))
                })
                .collect::<Result<_>>()?
        }
        Backend::Rendered => {
            let rest = render(&field, &cam, s, 0)?.image;
            let params = FlowParams::from_pipeline(&cfg.pipeline);
            events
                .par_iter()
                .enumerate()
                .map(|(i, ev)| {
                    let pressed = displace_field(&field, std::slice::from_ref(ev), &mat)?;
                    let img = render(&pressed, &cam, s, i as u64 + 1)?.image;
                    let flow = compute_flow(&rest, &img, &params)?;
                    Ok(pack_features(&extract_features(&flow, m)?.values))
                })
                .collect::<Result<_>>()?
        }
    };

    let samples = events
        .iter()
        .zip(features)
        .map(|(ev, features)| {
            let label = make_label(ev, n, s.surface_side_mm)?;
            Ok(Sample {
                features,
                label: label.values.iter().map(|&v| v as f32).collect(),
                meta: SampleMeta {
                    contact_mm: ev.contact_mm,
                    depth_mm: ev.depth_mm,
                    force_n: ev.force_n,
                    gel_id: s.rng_seed,
                },
            })
        })
        .collect::<Result<_>>()?;

    Ok(Dataset {
        m,
        n,
        samples,
        provenance: Provenance {
            config_hash: config_hash(cfg),
            seed: s.rng_seed,
            backend,
        },
    })
}

/// Writes the rendered rest frame and the pressed frames of the first `limit`
/// sweep events as binary PGM files into `dir`. Frame ids match [`generate`]
/// with the rendered backend. Returns the number of files written.
pub fn dump_images(cfg: &Config, sweep: &Sweep, dir: &Path, limit: usize) -> Result<usize> {
    let s = &cfg.sensor;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let field = MarkerField::generate(s);
    let cam = CameraModel::from_sensor(s);
    let mat = GelMaterial::from_sensor(s);
    let law = ForceLaw::from_sensor(s);
    render(&field, &cam, s, 0)?.image.write_pgm(dir.join("rest.pgm"))?;
    let mut written = 1;
    for (i, (p, d)) in sweep.points().take(limit).enumerate() {
        let ev = IndentationEvent::new(p, d, depth_to_force(d, &law)?, s.indenter_radius_mm)?;
        let pressed = displace_field(&field, std::slice::from_ref(&ev), &mat)?;
        render(&pressed, &cam, s, i as u64 + 1)?
            .image
            .write_pgm(dir.join(format!("pressed_{i:05}.pgm")))?;
        written += 1;
    }
    Ok(written)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Copy holding only `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            m: self.m,
            n: self.n,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            provenance: self.provenance,
        }
    }

    /// Network inputs, one row per sample, as stored.
    pub fn inputs(&self) -> Array2<f32> {
        let w = 2 * self.m;
        let mut out = Array2::<f32>::zeros((self.len(), w));
        for (mut row, s) in out.rows_mut().into_iter().zip(&self.samples) {
            for (dst, &v) in row.iter_mut().zip(&s.features) {
                *dst = v;
            }
        }
        out
    }

    pub fn targets(&self) -> Array2<f32> {
        let mut out = Array2::<f32>::zeros((self.len(), self.n));
        for (mut row, s) in out.rows_mut().into_iter().zip(&self.samples) {
            for (dst, &v) in row.iter_mut().zip(&s.label) {
                *dst = v;
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.len() * record_len(self.m, self.n) + 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.m as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n as u32).to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&self.provenance.config_hash);
        buf.extend_from_slice(&self.provenance.seed.to_le_bytes());
        buf.push(self.provenance.backend.tag());
        for s in &self.samples {
            for v in s.features.iter().chain(&s.label) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in [s.meta.contact_mm[0], s.meta.contact_mm[1], s.meta.depth_mm, s.meta.force_n] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend_from_slice(&s.meta.gel_id.to_le_bytes());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Dataset> {
        let bad = |msg: String| Error::format(path, msg);
        if bytes.len() < HEADER_LEN + 4 {
            return Err(bad(format!("truncated: {} bytes is shorter than a header", bytes.len())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(bad("checksum mismatch (file truncated or corrupted)".into()));
        }
        if &body[..4] != MAGIC {
            return Err(bad("not a dataset file (bad magic)".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32();
        if version != VERSION {
            return Err(bad(format!("unsupported dataset version {version} (expected {VERSION})")));
        }
        let m = r.u32() as usize;
        let n = r.u32() as usize;
        let count = r.u64() as usize;
        let mut config_hash = [0u8; 8];
        config_hash.copy_from_slice(r.take(8));
        let seed = r.u64();
        let backend = Backend::from_tag(r.take(1)[0]).ok_or_else(|| bad("unknown backend tag".into()))?;
        let expected = HEADER_LEN + count * record_len(m, n);
        if body.len() != expected {
            return Err(bad(format!("body is {} bytes, header implies {expected}", body.len())));
        }
        let samples = (0..count)
            .map(|_| {
                let features = (0..2 * m).map(|_| r.f32()).collect();
                let label = (0..n).map(|_| r.f32()).collect();
                let meta = SampleMeta {
                    contact_mm: [r.f64(), r.f64()],
                    depth_mm: r.f64(),
                    force_n: r.f64(),
                    gel_id: r.u64(),
                };
                Sample { features, label, meta }
            })
            .collect();
        Ok(Dataset {
            m,
            n,
            samples,
            provenance: Provenance {
                config_hash,
                seed,
                backend,
            },
        })
    }
}

fn record_len(m: usize, n: usize) -> usize {
    4 * (2 * m + n) + 8 * 5
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> &'a [u8] {
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        s
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().unwrap())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take(4).try_into().unwrap())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take(8).try_into().unwrap())
    }
}

/// Sidecar path next to a dataset file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".jsonl");
    PathBuf::from(s)
}

#[derive(Serialize)]
struct SidecarRow<'a> {
    index: usize,
    #[serde(flatten)]
    meta: &'a SampleMeta,
    bin: Option<usize>,
}

/// Writes the dataset and its JSON-lines sidecar.
pub fn save(ds: &Dataset, path: impl AsRef<Path>, side_mm: f64) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ds.to_bytes()).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let mut out = Vec::new();
    for (index, s) in ds.samples.iter().enumerate() {
        let bin = s
            .label
            .iter()
            .any(|v| *v != 0.0)
            .then(|| bin_of(s.meta.contact_mm, ds.n, side_mm).ok())
            .flatten();
        let row = SidecarRow {
            index,
            meta: &s.meta,
            bin,
        };
        serde_json::to_writer(&mut out, &row).map_err(|e| Error::format(&side, e.to_string()))?;
        out.push(b'\n');
    }
    std::fs::File::create(&side)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(&side, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_bytes(&bytes, path)
}

/// Loads a dataset and checks its feature and label widths.
pub fn load_expecting(path: impl AsRef<Path>, m: usize, n: usize) -> Result<Dataset> {
    let ds = load(path)?;
    if ds.m != m {
        return Err(Error::Shape {
            what: "dataset region count m",
            expected: m,
            found: ds.m,
        });
    }
    if ds.n != n {
        return Err(Error::Shape {
            what: "dataset bin count n",
            expected: n,
            found: ds.n,
        });
    }
    Ok(ds)
}

/// Train, validation and test parts of one dataset.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Seeded disjoint split; part sizes are `round(len * fraction)`.
pub fn split(ds: &Dataset, test_fraction: f64, val_fraction: f64, seed: u64) -> Result<Split> {
    if ds.is_empty() {
        return Err(Error::Empty("cannot split an empty dataset"));
    }
    let ok = |f: f64| f > 0.0 && f < 1.0;
    if !ok(test_fraction) || !ok(val_fraction) || test_fraction + val_fraction >= 1.0 {
        return Err(Error::invariant(
            "split fractions must lie in (0, 1) and sum to less than 1",
        ));
    }
    let total = ds.len();
    let n_test = (total as f64 * test_fraction).round() as usize;
    let n_val = (total as f64 * val_fraction).round() as usize;
    if n_test + n_val >= total {
        return Err(Error::invariant(format!("{total} samples leave no training data")));
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Split {
        test: ds.subset(&order[..n_test]),
        val: ds.subset(&order[n_test..n_test + n_val]),
        train: ds.subset(&order[n_test + n_val..]),
    })
}
