//! Binary model container.
//!
//! ```text
//! "SREF" | version: u32 | config_len: u32 | config (canonical JSON)
//!        | param_count: u32 | { name_len: u32 | name | rank: u32 | dims: u64 × rank | f64 × numel }*
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{ModelConfig, RefinerModel};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const MAGIC: &[u8; 4] = b"SREF";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_model(model: &RefinerModel, out: &mut impl Write) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let config = serde_json::to_vec(model.config())?;
    out.write_all(&(config.len() as u32).to_le_bytes())?;
    out.write_all(&config)?;
    out.write_all(&(model.params().len() as u32).to_le_bytes())?;
    for p in model.params().iter() {
        out.write_all(&(p.name.len() as u32).to_le_bytes())?;
        out.write_all(p.name.as_bytes())?;
        out.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptModel(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_model(input: &mut impl Read) -> Result<RefinerModel> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    decode(&buf)
}

fn decode(buf: &[u8]) -> Result<RefinerModel> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::CorruptModel("bad magic bytes".into()));
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = c.u32("config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(len, "config")?)
        .map_err(|e| Error::CorruptModel(format!("config: {e}")))?;
    let count = c.u32("parameter count")? as usize;
    let mut named = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let nlen = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(nlen, "name")?)
            .map_err(|_| Error::CorruptModel("parameter name is not UTF-8".into()))?
            .to_owned();
        let rank = c.u32("rank")? as usize;
        if !(1..=3).contains(&rank) {
            return Err(Error::CorruptModel(format!("`{name}` has rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u64("dims")? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= buf.len()))
            .ok_or_else(|| Error::CorruptModel(format!("`{name}` has implausible dims {dims:?}")))?;
        let raw = c.take(8 * numel, "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&dims, data).map_err(|e| Error::CorruptModel(format!("`{name}`: {e}")))?;
        named.push((name, t));
    }
    if c.pos != buf.len() {
        return Err(Error::CorruptModel(format!(
            "{} trailing bytes",
            buf.len() - c.pos
        )));
    }
    RefinerModel::from_params(config, named)
}

pub fn save(model: &RefinerModel, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<RefinerModel> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InteractionMode;

    fn small() -> RefinerModel {
        let c = ModelConfig {
            joints: 4,
            dim: 8,
            blocks: 1,
            heads: 2,
            decoder_hidden: 6,
            mode: InteractionMode::Scene,
        };
        RefinerModel::init(c, 3).unwrap()
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let m = small();
        let mut a = Vec::new();
        write_model(&m, &mut a).unwrap();
        let back = decode(&a).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.config(), m.config());
        let mut b = Vec::new();
        write_model(&back, &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(&a[..4], b"SREF");
    }

    #[test]
    fn truncation_is_reported() {
        let mut a = Vec::new();
        write_model(&small(), &mut a).unwrap();
        for cut in [0, 3, 7, 12, a.len() / 2, a.len() - 1] {
            match decode(&a[..cut]) {
                Err(Error::CorruptModel(_)) => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn version_and_magic_are_checked() {
        let mut a = Vec::new();
        write_model(&small(), &mut a).unwrap();
        let mut v = a.clone();
        v[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode(&v), Err(Error::Version { found: 2, expected: 1 })));
        let mut m = a.clone();
        m[0] = b'X';
        assert!(matches!(decode(&m), Err(Error::CorruptModel(_))));
        let mut t = a;
        t.push(0);
        assert!(matches!(decode(&t), Err(Error::CorruptModel(_))));
    }
}
