//! Binary parameter checkpoints.
//!
//! Layout: the 8-byte magic `GDSRCKPT`, then for each parameter a u32 name
//! length, the UTF-8 name, a u32 rank, `rank` u32 dimensions and the values
//! as f64. All integers and floats are little-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GDSRCKPT";

pub fn save_checkpoint<W: Write>(store: &ParamStore, mut out: W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let t = store.value(id);
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads every `(name, tensor)` pair in file order.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    if buf.len() < 8 || &buf[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Format("checkpoint: bad magic".into()));
    }
    let mut cur = Cursor { buf: &buf, pos: 8 };
    let mut out = Vec::new();
    while cur.pos < buf.len() {
        let len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(len)?.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let data = cur
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format("checkpoint: truncated".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Overwrites values of `store` from a checkpoint; names and shapes must match.
pub fn load_checkpoint_into<R: Read>(store: &mut ParamStore, input: R) -> Result<()> {
    let entries = read_checkpoint(input)?;
    if entries.len() != store.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {} parameters, model expects {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, t) in entries {
        store.set(&name, t)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout() {
        let mut s = ParamStore::new();
        s.add("ab", Tensor::matrix(1, 2, vec![1.0, -0.5]));
        let mut buf = Vec::new();
        save_checkpoint(&s, &mut buf).unwrap();
        let mut expected = b"GDSRCKPT".to_vec();
        expected.extend(2u32.to_le_bytes());
        expected.extend(b"ab");
        expected.extend(2u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend(1.0f64.to_le_bytes());
        expected.extend((-0.5f64).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn roundtrip_and_errors() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_fn(&[2, 3], |i| i as f64 * 0.25));
        s.add("b", Tensor::from_fn(&[3], |i| -(i as f64)));
        let mut buf = Vec::new();
        save_checkpoint(&s, &mut buf).unwrap();

        let mut fresh = ParamStore::new();
        fresh.add("w", Tensor::zeros(&[2, 3]));
        fresh.add("b", Tensor::zeros(&[3]));
        load_checkpoint_into(&mut fresh, buf.as_slice()).unwrap();
        for id in s.ids() {
            assert_eq!(s.value(id), fresh.value(id));
        }

        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        assert!(read_checkpoint(&b"NOTMAGIC"[..]).is_err());
        let mut wrong = ParamStore::new();
        wrong.add("w", Tensor::zeros(&[3, 2]));
        wrong.add("b", Tensor::zeros(&[3]));
        assert!(load_checkpoint_into(&mut wrong, buf.as_slice()).is_err());
    }
}
