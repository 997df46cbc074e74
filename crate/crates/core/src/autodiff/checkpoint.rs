//! Binary container for named parameter tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "APRLCKPT"
//! version  u8       1
//! count    u32      number of records
//! record*  { name_len u32, name utf-8, ndim u32, dims u64 * ndim, values f64 * prod(dims) }
//! ```

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"APRLCKPT";
pub const VERSION: u8 = 1;

/// Ordered list of `(name, tensor)` records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.records.push((name.into(), tensor));
    }

    /// Adds every tensor of `params` under `prefix/name`.
    pub fn push_all(&mut self, prefix: &str, names: &[String], params: &[Tensor]) {
        for (n, p) in names.iter().zip(params) {
            self.push(format!("{prefix}/{n}"), p.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no record {name:?}")))
    }

    /// Collects `prefix/name` for each of `names`, in order.
    pub fn take_all(&self, prefix: &str, names: &[String]) -> Result<Vec<Tensor>> {
        names
            .iter()
            .map(|n| self.require(&format!("{prefix}/{n}")).cloned())
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        w.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for (name, t) in &self.records {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for d in t.shape() {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a parameter checkpoint (bad magic)".into()));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)?;
        if version[0] != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                version[0]
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("record name is not utf-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            records.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_stable() {
        let mut c = Checkpoint::new();
        c.push("a", Tensor::new(vec![2], vec![1.0, -2.5]).unwrap());
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"APRLCKPT");
        assert_eq!(buf[8], 1);
        assert_eq!(&buf[9..13], &1u32.to_le_bytes());
        assert_eq!(&buf[13..17], &1u32.to_le_bytes());
        assert_eq!(buf[17], b'a');
        // name(1) + ndim(4) + dim(8) + 2 values(16)
        assert_eq!(buf.len(), 17 + 1 + 4 + 8 + 16);
        assert_eq!(Checkpoint::read_from(&buf[..]).unwrap(), c);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(Checkpoint::read_from(&b"NOTACKPT\x01\0\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        Checkpoint::new().write_to(&mut buf).unwrap();
        buf[8] = 9;
        assert!(Checkpoint::read_from(&buf[..]).is_err());
    }
}
