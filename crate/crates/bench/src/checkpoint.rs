//! Model checkpoints: magic bytes, the architecture as JSON, then every layer
//! as little-endian f32 blobs behind (rows, cols) headers.
//!
//! ```text
//! "RSPCKPT\x01"
//! u32 spec_len, spec_len bytes of JSON
//! u32 n_layers
//! per layer: u32 n_out, u32 n_in, n_out*n_in f32 weights, u32 n_bias, n_bias f32
//! ```

use std::path::Path;

use responder_core::nn::{ArchitectureSpec, DenseLayer, Model};

use crate::error::{BenchError, Result};

pub const MAGIC: &[u8; 8] = b"RSPCKPT\x01";

pub fn encode(model: &Model) -> Vec<u8> {
    let spec = serde_json::to_vec(model.spec()).expect("architecture serializes");
    let mut out = Vec::with_capacity(16 + spec.len() + 4 * model.n_params() + 12 * model.layers().len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, spec.len());
    out.extend_from_slice(&spec);
    put_u32(&mut out, model.layers().len());
    for l in model.layers() {
        put_u32(&mut out, l.n_out);
        put_u32(&mut out, l.n_in);
        out.extend(l.weights.iter().flat_map(|&w| (w as f32).to_le_bytes()));
        put_u32(&mut out, l.bias.len());
        out.extend(l.bias.iter().flat_map(|&b| (b as f32).to_le_bytes()));
    }
    out
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("checkpoint sizes fit in u32").to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(4).ok_or("blob too large")?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect())
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Model, String> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(MAGIC.len())? != MAGIC {
        return Err("not a checkpoint (bad magic bytes)".into());
    }
    let spec_len = c.u32()?;
    let spec: ArchitectureSpec = serde_json::from_slice(c.take(spec_len)?).map_err(|e| format!("architecture JSON: {e}"))?;
    // activations follow from the architecture
    let template = Model::new(&spec, 0).map_err(|e| e.to_string())?;
    let n_layers = c.u32()?;
    if n_layers != template.layers().len() {
        return Err(format!("{n_layers} layers stored, architecture has {}", template.layers().len()));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for t in template.layers() {
        let (n_out, n_in) = (c.u32()?, c.u32()?);
        let weights = c.f32s(n_out.checked_mul(n_in).ok_or("layer too large")?)?;
        let n_bias = c.u32()?;
        let bias = c.f32s(n_bias)?;
        layers.push(DenseLayer::new(n_in, n_out, weights, bias, t.activation).map_err(|e| e.to_string())?);
    }
    if c.at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - c.at));
    }
    Model::from_layers(&spec, layers).map_err(|e| e.to_string())
}

pub fn save(path: &Path, model: &Model) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|e| BenchError::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| BenchError::io(path, e))?;
    decode(&bytes).map_err(|m| BenchError::format(path, m))
}
