//! Parameter checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "PFCKPT\r\n"
//! version    u32      1
//! cfg_len    u32      length of the ModelConfig JSON echo
//! cfg        cfg_len bytes, UTF-8 JSON
//! count      u32      number of tensors
//! per tensor:
//!   name_len u16, name (UTF-8)
//!   group    u8       0 = backbone, 1 = head
//!   role     u8       0 weight, 1 bias, 2 bn scale, 3 bn shift, 4 running mean, 5 running var
//!   dtype    u8       1 = f32
//!   ndim     u8
//!   dims     ndim × u32
//!   data     product(dims) × f32
//! ```
//!
//! Values are stored as 32-bit floats, so a round trip rounds every parameter
//! to single precision. Writes go to a temporary sibling and are renamed into
//! place.

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelConfig, NamedTensor, NetworkParams, ParamGroup, TensorRole};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PFCKPT\r\n";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;

fn role_code(r: TensorRole) -> u8 {
    match r {
        TensorRole::Weight => 0,
        TensorRole::Bias => 1,
        TensorRole::BnScale => 2,
        TensorRole::BnShift => 3,
        TensorRole::RunningMean => 4,
        TensorRole::RunningVar => 5,
    }
}

fn role_from(code: u8) -> Option<TensorRole> {
    Some(match code {
        0 => TensorRole::Weight,
        1 => TensorRole::Bias,
        2 => TensorRole::BnScale,
        3 => TensorRole::BnShift,
        4 => TensorRole::RunningMean,
        5 => TensorRole::RunningVar,
        _ => return None,
    })
}

pub fn encode(params: &NetworkParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(params.config()).expect("ModelConfig serialises");
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(&cfg);
    buf.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for t in params.tensors() {
        buf.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.push(match t.group {
            ParamGroup::Backbone => 0,
            ParamGroup::Head => 1,
        });
        buf.push(role_code(t.role));
        buf.push(DTYPE_F32);
        buf.push(t.shape.len() as u8);
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<NetworkParams, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err("bad magic number".into());
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let cfg_len = c.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(cfg_len)?).map_err(|e| e.to_string())?;
    let count = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec()).map_err(|e| e.to_string())?;
        let group = match c.u8()? {
            0 => ParamGroup::Backbone,
            1 => ParamGroup::Head,
            g => return Err(format!("{name}: bad group tag {g}")),
        };
        let role = role_from(c.u8()?).ok_or_else(|| format!("{name}: bad role tag"))?;
        let dtype = c.u8()?;
        if dtype != DTYPE_F32 {
            return Err(format!("{name}: unsupported dtype {dtype}"));
        }
        let ndim = c.u8()? as usize;
        let shape = (0..ndim).map(|_| c.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or("tensor too large")?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        tensors.push(NamedTensor { name, shape, group, role, data });
    }
    if c.pos != bytes.len() {
        return Err("trailing bytes after last tensor".into());
    }
    NetworkParams::from_tensors(config, tensors).map_err(|e| e.to_string())
}

/// Atomic write: temp file in the same directory, then rename.
pub fn save(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let err = |e| Error::io(path, e);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(err)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(err)?;
        f.write_all(&encode(params)).map_err(err)?;
        f.sync_all().map_err(err)?;
    }
    std::fs::rename(&tmp, path).map_err(err)
}

pub fn load(path: impl AsRef<Path>) -> Result<NetworkParams> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|message| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_model;

    #[test]
    fn round_trip_rounds_to_f32() {
        let p = build_model(&ModelConfig::new("compact-a", 240), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pfck");
        save(&p, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.config(), p.config());
        for (a, b) in p.tensors().iter().zip(back.tensors()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*y, f64::from(*x as f32));
            }
        }
        assert!(!path.with_extension("tmp").exists());
    }

    #[test]
    fn header_layout() {
        let p = build_model(&ModelConfig::new("compact-b", 224), 4).unwrap();
        let bytes = encode(&p);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    }

    #[test]
    fn rejects_corruption() {
        let p = build_model(&ModelConfig::new("compact-b", 224), 4).unwrap();
        let mut bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes).unwrap_err().contains("magic"));
    }
}
