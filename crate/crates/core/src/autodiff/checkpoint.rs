//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  b"GHQCKPT1"
//! meta_len  u32      length of the UTF-8 metadata string
//! meta      bytes    free-form metadata (JSON in practice)
//! count     u32      number of records
//! record*   name_len u32, name bytes, ndim u32, dims u64 * ndim,
//!           data f64 * product(dims) as IEEE-754 bit patterns
//! ```
//!
//! Values are written as raw bit patterns, so a round trip is bit-exact.

use std::io::{Read, Write};

use super::tensor::Tensor;
use crate::error::{GhqError, Result};

const MAGIC: &[u8; 8] = b"GHQCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: String,
    pub records: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u32(w, self.metadata.len())?;
        w.write_all(self.metadata.as_bytes())?;
        write_u32(w, self.records.len())?;
        for (name, t) in &self.records {
            write_u32(w, name.len())?;
            w.write_all(name.as_bytes())?;
            write_u32(w, t.shape().len())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for x in t.data() {
                w.write_all(&x.to_bits().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(GhqError::Format("not a GHQ checkpoint (bad magic)".into()));
        }
        let metadata = read_string(r)?;
        let count = read_u32(r)?;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let name = read_string(r)?;
            let ndim = read_u32(r)?;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| GhqError::Format("dimension overflow".into()))?);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f64::from_bits(u64::from_le_bytes(b)));
            }
            records.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { metadata, records })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

fn write_u32(w: &mut impl Write, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| GhqError::Format("length exceeds u32".into()))?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)?;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| GhqError::Format("string is not UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in proptest::collection::vec(any::<f64>(), 1..40),
            cols in 1usize..5,
            meta in "[a-z{}\":,0-9]{0,30}",
        ) {
            let rows = values.len() / cols;
            prop_assume!(rows > 0);
            let data = values[..rows * cols].to_vec();
            let ckpt = Checkpoint {
                metadata: meta,
                records: vec![
                    ("a.weight".into(), Tensor::matrix(rows, cols, data)),
                    ("b".into(), Tensor::new(vec![2], vec![f64::MIN_POSITIVE, -0.0]).unwrap()),
                ],
            };
            let mut buf = Vec::new();
            ckpt.write_to(&mut buf).unwrap();
            let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.metadata, ckpt.metadata);
            prop_assert_eq!(back.records.len(), 2);
            for ((n1, t1), (n2, t2)) in back.records.iter().zip(&ckpt.records) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let b1: Vec<u64> = t1.data().iter().map(|x| x.to_bits()).collect();
                let b2: Vec<u64> = t2.data().iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
        }
    }

    #[test]
    fn rejects_foreign_files() {
        let bytes = b"NOTACKPTxxxxxxxx".to_vec();
        assert!(matches!(Checkpoint::read_from(&mut bytes.as_slice()), Err(GhqError::Format(_))));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let ckpt = Checkpoint { metadata: "{}".into(), records: vec![("w".into(), Tensor::row(vec![1.0, 2.0]))] };
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
    }
}
