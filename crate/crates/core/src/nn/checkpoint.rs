//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FSRL" | u16 version | u16 owner_len | owner | u16 layer_count
//! per layer:
//!   u16 id_len | id | u8 scope (0 local, 1 global) | u8 activation (0 none, 1 relu, 2 sigmoid)
//!   u32 in_dim | u32 out_dim | in_dim*out_dim f64 weights (row-major) | out_dim f64 biases
//! ```

use std::io::{Read, Write};

use super::{Activation, DenseLayer, Matrix, NnError, Scope, SplitModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FSRL";
pub const CHECKPOINT_VERSION: u16 = 1;

fn io_err(e: std::io::Error) -> NnError {
    NnError::Checkpoint(e.to_string())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<(), NnError> {
    let len = u16::try_from(s.len()).map_err(|_| NnError::Checkpoint("string too long".into()))?;
    w.write_all(&len.to_le_bytes()).map_err(io_err)?;
    w.write_all(s.as_bytes()).map_err(io_err)
}

pub fn save_checkpoint<W: Write>(model: &SplitModel, mut w: W) -> Result<(), NnError> {
    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())
        .map_err(io_err)?;
    write_str(&mut w, &model.owner)?;
    w.write_all(&(model.layers().len() as u16).to_le_bytes())
        .map_err(io_err)?;
    for layer in model.layers() {
        write_str(&mut w, &layer.layer_id)?;
        let scope = match layer.scope {
            Scope::Local => 0u8,
            Scope::Global => 1u8,
        };
        w.write_all(&[scope, layer.activation.to_byte()])
            .map_err(io_err)?;
        w.write_all(&(layer.in_dim() as u32).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(&(layer.out_dim() as u32).to_le_bytes())
            .map_err(io_err)?;
        for v in layer.weights.as_slice().iter().chain(&layer.bias) {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], NnError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(io_err)?;
        Ok(buf)
    }

    fn u16(&mut self) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NnError> {
        (0..n)
            .map(|_| Ok(f64::from_le_bytes(self.bytes()?)))
            .collect()
    }

    fn string(&mut self) -> Result<String, NnError> {
        let len = self.u16()? as usize;
        let mut buf = vec![0u8; len];
        self.inner.read_exact(&mut buf).map_err(io_err)?;
        String::from_utf8(buf).map_err(|e| NnError::Checkpoint(e.to_string()))
    }
}

pub fn load_checkpoint<R: Read>(r: R) -> Result<SplitModel, NnError> {
    let mut r = Reader { inner: r };
    if &r.bytes::<4>()? != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let owner = r.string()?;
    let count = r.u16()? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let layer_id = r.string()?;
        let [scope, act] = r.bytes::<2>()?;
        let scope = match scope {
            0 => Scope::Local,
            1 => Scope::Global,
            other => return Err(NnError::Checkpoint(format!("bad scope byte {other}"))),
        };
        let activation = Activation::from_byte(act)
            .ok_or_else(|| NnError::Checkpoint(format!("bad activation byte {act}")))?;
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let weights = Matrix::from_vec(in_dim, out_dim, r.f64s(in_dim * out_dim)?)?;
        let bias = r.f64s(out_dim)?;
        layers.push(DenseLayer {
            layer_id,
            scope,
            activation,
            weights,
            bias,
        });
    }
    SplitModel::from_layers(owner, layers)
}
