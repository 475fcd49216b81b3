//! Length-prefixed tensor archive.
//!
//! ```text
//! "DRCK" | version u16 | arch (u16 len + utf8) | H u16 | W u16 | C u8
//! | num_classes u16 | tensor count u32
//! | per tensor: name (u16 len + utf8) | ndim u8 | dims u32… | f32 data
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::model::{Arch, Model, Tensor};
use crate::dataset::Dims;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"DRCK";
const VERSION: u16 = 1;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn write_checkpoint(model: &Model, mut w: impl Write) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, &model.arch().to_string());
    let d = model.input_dims();
    out.extend_from_slice(&(d.height as u16).to_le_bytes());
    out.extend_from_slice(&(d.width as u16).to_le_bytes());
    out.push(d.channels as u8);
    out.extend_from_slice(&(model.num_classes() as u16).to_le_bytes());
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for t in model.params() {
        put_str(&mut out, &t.name);
        out.push(t.shape.len() as u8);
        for &dim in &t.shape {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&out)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::decode(None, format!("checkpoint truncated at offset {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::decode(None, "invalid utf-8 in checkpoint"))
    }
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Model> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::decode(None, "bad checkpoint magic"));
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::decode(None, format!("unsupported checkpoint version {version}")));
    }
    let arch: Arch = c.string()?.parse()?;
    let dims = Dims::new(c.u16()? as usize, c.u16()? as usize, c.u8()? as usize);
    let num_classes = c.u16()? as usize;
    let mut model = Model::new(arch, dims, num_classes, 0)?;
    let count = c.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name = c.string()?;
        let ndim = c.u8()? as usize;
        let shape = (0..ndim).map(|_| c.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = c.take(n * 4)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        params.push(Tensor { name, shape, data });
    }
    if c.pos != bytes.len() {
        return Err(Error::decode(None, "trailing bytes after checkpoint tensors"));
    }
    model.set_params(params)?;
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write_checkpoint(model, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let m = Model::new(Arch::TeacherL, Dims::new(16, 16, 3), 7, 9).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), m);
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
    }
}
