use std::fs;
use std::io::Write;
use std::path::Path;

use super::params::NetworkParams;
use super::tensor::{Scalar, Tensor};
use super::NnError;

const MAGIC: &[u8; 8] = b"RNAVCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Header entry kinds, stored as a prefix of the entry name.
const PARAM: &str = "param:";
const BUFFER: &str = "buffer:";
const MOMENT_M: &str = "adam_m:";
const MOMENT_V: &str = "adam_v:";

fn entries<T: Scalar>(p: &NetworkParams<T>, with_optimizer: bool) -> Vec<(String, &Tensor<T>)> {
    let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
    for (n, t) in p.names.iter().zip(&p.values) {
        out.push((format!("{PARAM}{n}"), t));
    }
    for (n, t) in p.buffer_names.iter().zip(&p.buffers) {
        out.push((format!("{BUFFER}{n}"), t));
    }
    if with_optimizer {
        for (n, t) in p.names.iter().zip(&p.adam_m) {
            out.push((format!("{MOMENT_M}{n}"), t));
        }
        for (n, t) in p.names.iter().zip(&p.adam_v) {
            out.push((format!("{MOMENT_V}{n}"), t));
        }
    }
    out
}

/// Serialize parameters and buffers (and optionally Adam state) as a
/// versioned header of named shapes followed by a little-endian f32 payload.
pub fn encode<T: Scalar>(p: &NetworkParams<T>, with_optimizer: bool) -> Vec<u8> {
    let items = entries(p, with_optimizer);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(if with_optimizer { p.adam_step } else { 0 }).to_le_bytes());
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (name, t) in &items {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, t) in &items {
        for v in t.to_f32() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8], NnError> {
        if self.pos + n > self.buf.len() {
            return Err(NnError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Load into a store with the same layout. Every parameter and buffer must
/// be present with the exact shape; Adam state is restored when present.
pub fn decode_into<T: Scalar>(p: &mut NetworkParams<T>, bytes: &[u8]) -> Result<(), NnError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(NnError::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let step = r.u64()?;
    let count = r.u32()? as usize;
    let mut header = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let nd = r.u32()? as usize;
        let shape = (0..nd).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        header.push((name, shape));
    }
    let mut loaded = Vec::with_capacity(count);
    for (name, shape) in header {
        let n: usize = shape.iter().product();
        let raw = r.take(4 * n)?;
        let data: Vec<T> =
            raw.chunks_exact(4).map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)).collect();
        loaded.push((name, Tensor::new(shape, data)));
    }
    if r.pos != bytes.len() {
        return Err(NnError::Checkpoint("trailing bytes after payload".into()));
    }
    let mut has_opt = false;
    let expected = entries(p, false).len();
    let mut matched = 0;
    for (name, t) in loaded {
        let (kind, key) = name.split_at(name.find(':').map(|i| i + 1).unwrap_or(0));
        let slot = match kind {
            PARAM => p.names.iter().position(|n| n == key).map(|i| &mut p.values[i]),
            BUFFER => p.buffer_names.iter().position(|n| n == key).map(|i| &mut p.buffers[i]),
            MOMENT_M => p.names.iter().position(|n| n == key).map(|i| &mut p.adam_m[i]),
            MOMENT_V => p.names.iter().position(|n| n == key).map(|i| &mut p.adam_v[i]),
            _ => None,
        };
        let Some(slot) = slot else {
            return Err(NnError::Checkpoint(format!("unexpected entry {name}")));
        };
        if slot.shape != t.shape {
            return Err(NnError::Checkpoint(format!("shape mismatch for {name}: {:?} vs {:?}", t.shape, slot.shape)));
        }
        *slot = t;
        if kind == PARAM || kind == BUFFER {
            matched += 1;
        } else {
            has_opt = true;
        }
    }
    if matched != expected {
        return Err(NnError::Checkpoint(format!("checkpoint holds {matched} of {expected} tensors")));
    }
    if has_opt {
        p.adam_step = step;
    }
    Ok(())
}

pub fn save<T: Scalar>(p: &NetworkParams<T>, path: impl AsRef<Path>, with_optimizer: bool) -> Result<(), NnError> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&encode(p, with_optimizer))?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_into<T: Scalar>(p: &mut NetworkParams<T>, path: impl AsRef<Path>) -> Result<(), NnError> {
    decode_into(p, &fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{BatchNorm2d, Linear};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64, width: usize) -> NetworkParams<f32> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut p = NetworkParams::new();
        Linear::new(&mut p, "fc", 3, width, &mut r);
        BatchNorm2d::new(&mut p, "bn", 2);
        p
    }

    #[test]
    fn round_trip_with_optimizer_state() {
        let mut a = net(1, 4);
        a.buffers[0].data[1] = 0.25;
        a.adam_m[0].data[2] = 0.5;
        a.adam_step = 7;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save(&a, &path, true).unwrap();
        let mut b = net(2, 4);
        assert_ne!(a.values, b.values);
        load_into(&mut b, &path).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_and_corruption_rejected() {
        let a = net(1, 4);
        let bytes = encode(&a, false);
        let mut wrong = net(1, 5);
        let e = decode_into(&mut wrong, &bytes).unwrap_err().to_string();
        assert!(e.contains("shape mismatch"), "{e}");
        let mut same = net(3, 4);
        assert!(decode_into(&mut same, &bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_into(&mut same, &bad).is_err());
        decode_into(&mut same, &bytes).unwrap();
        assert_eq!(same.values, a.values);
    }
}
