//! Model file: `b"TSMD"`, version u32, dtype width u8, layer count u32, then
//! per layer `in u32, out u32, activation u8, frozen u8, dropout u8,
//! has_offset u8`, weights row-major, bias and the optional input offset; then the optimizer step u64 and moment buffers in layer
//! order; then the epoch log (count u64, `epoch u64, train f64, val f64`);
//! finally a CRC32 of everything before it. Little-endian throughout.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, EpochLog, Layer, MlpModel, NadamState, Scalar};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TSMD";
const VERSION: u32 = 1;

fn put_all<T: Scalar>(out: &mut Vec<u8>, values: impl IntoIterator<Item = T>) {
    for v in values {
        v.write_le(out);
    }
}

impl<T: Scalar> MlpModel<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::WIDTH);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.inputs() as u32).to_le_bytes());
            out.extend_from_slice(&(l.outputs() as u32).to_le_bytes());
            out.extend_from_slice(&[
                l.activation.tag(),
                l.frozen as u8,
                l.dropout as u8,
                l.offset.is_some() as u8,
            ]);
            put_all(&mut out, l.weights.iter().copied());
            put_all(&mut out, l.bias.iter().copied());
            if let Some(o) = &l.offset {
                put_all(&mut out, o.iter().copied());
            }
        }
        let o = &self.optimizer;
        out.extend_from_slice(&o.step.to_le_bytes());
        for k in 0..self.layers.len() {
            put_all(&mut out, o.m_weights[k].iter().copied());
            put_all(&mut out, o.v_weights[k].iter().copied());
            put_all(&mut out, o.m_bias[k].iter().copied());
            put_all(&mut out, o.v_bias[k].iter().copied());
        }
        out.extend_from_slice(&(self.log.len() as u64).to_le_bytes());
        for e in &self.log {
            out.extend_from_slice(&(e.epoch as u64).to_le_bytes());
            out.extend_from_slice(&e.train_loss.to_le_bytes());
            out.extend_from_slice(&e.val_loss.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(path, msg);
        if bytes.len() < 17 {
            return Err(bad("truncated model file".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(bad("checksum mismatch (file truncated or corrupted)".into()));
        }
        if &body[..4] != MAGIC {
            return Err(bad("not a model file (bad magic)".into()));
        }
        let mut r = Cursor { buf: body, pos: 4 };
        let short = || bad("model file ends early".into());
        let version = r.u32().ok_or_else(short)?;
        if version != VERSION {
            return Err(bad(format!("unsupported model version {version} (expected {VERSION})")));
        }
        let width = r.take(1).ok_or_else(short)?[0];
        if width != T::WIDTH {
            return Err(bad(format!(
                "stored as {}-byte floats, requested {}-byte",
                width,
                T::WIDTH
            )));
        }
        let count = r.u32().ok_or_else(short)? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let inputs = r.u32().ok_or_else(short)? as usize;
            let outputs = r.u32().ok_or_else(short)? as usize;
            let flags = r.take(4).ok_or_else(short)?;
            let activation = Activation::from_tag(flags[0]).ok_or_else(|| bad("unknown activation tag".into()))?;
            let (frozen, dropout) = (flags[1] != 0, flags[2] != 0);
            let weights = r.matrix::<T>(inputs, outputs).ok_or_else(short)?;
            let bias = r.vector::<T>(outputs).ok_or_else(short)?;
            let offset = match flags[3] {
                0 => None,
                _ => Some(r.vector::<T>(inputs).ok_or_else(short)?),
            };
            layers.push(Layer {
                weights,
                bias,
                activation,
                frozen,
                dropout,
                offset,
            });
        }
        let step = r.u64().ok_or_else(short)?;
        let mut opt = NadamState::for_layers(&layers);
        opt.step = step;
        for (k, l) in layers.iter().enumerate() {
            let (i, o) = (l.inputs(), l.outputs());
            opt.m_weights[k] = r.matrix(i, o).ok_or_else(short)?;
            opt.v_weights[k] = r.matrix(i, o).ok_or_else(short)?;
            opt.m_bias[k] = r.vector(o).ok_or_else(short)?;
            opt.v_bias[k] = r.vector(o).ok_or_else(short)?;
        }
        let entries = r.u64().ok_or_else(short)? as usize;
        let mut log = Vec::with_capacity(entries.min(1 << 20));
        for _ in 0..entries {
            log.push(EpochLog {
                epoch: r.u64().ok_or_else(short)? as usize,
                train_loss: r.f64().ok_or_else(short)?,
                val_loss: r.f64().ok_or_else(short)?,
            });
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes after model data".into()));
        }
        let mut model = MlpModel::from_layers(layers).map_err(|e| bad(e.to_string()))?;
        model.optimizer = opt;
        model.log = log;
        Ok(model)
    }

    /// Checks input and output widths against `2m` and `n`.
    pub fn expect_shape(&self, m: usize, n: usize) -> Result<()> {
        if self.input_width() != 2 * m {
            return Err(Error::Shape {
                what: "model input width (2m)",
                expected: 2 * m,
                found: self.input_width(),
            });
        }
        if self.output_width() != n {
            return Err(Error::Shape {
                what: "model output width (n)",
                expected: n,
                found: self.output_width(),
            });
        }
        Ok(())
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(k)?)?;
        self.pos += k;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn values<T: Scalar>(&mut self, count: usize) -> Option<Vec<T>> {
        let w = T::WIDTH as usize;
        let raw = self.take(count.checked_mul(w)?)?;
        Some(raw.chunks_exact(w).map(T::read_le).collect())
    }
    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize) -> Option<Array2<T>> {
        Array2::from_shape_vec((rows, cols), self.values(rows.checked_mul(cols)?)?).ok()
    }
    fn vector<T: Scalar>(&mut self, len: usize) -> Option<Array1<T>> {
        Some(Array1::from_vec(self.values(len)?))
    }
}

pub fn save_model<T: Scalar>(model: &MlpModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<MlpModel<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    MlpModel::from_bytes(&bytes, path)
}
