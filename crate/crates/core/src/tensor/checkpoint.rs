//! `.defa` checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "DEFA" | version u32 | entry count u32
//! per entry: name length u32 | name bytes | rank u32 | extents u32 x rank | f32 payload
//! ```

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DEFA";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint file is truncated")]
    TruncatedFile,
    #[error("malformed checkpoint entry: {0}")]
    Malformed(String),
    #[error("missing checkpoint entry `{0}`")]
    MissingEntry(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Ordered list of named `f32` tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn push(&mut self, name: &str, tensor: Tensor<f32>) {
        self.entries.push((name.to_string(), tensor));
    }

    pub fn entries(&self) -> &[(String, Tensor<f32>)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let count = r.u32()?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CheckpointError::Malformed("entry name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(4).ok_or(CheckpointError::TruncatedFile)?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_bits(u32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect();
            let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
            entries.push((name, tensor));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::TruncatedFile)?;
        let slice = self.bytes.get(self.pos..end).ok_or(CheckpointError::TruncatedFile)?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_checkpoint_is_header_only() {
        let bytes = Checkpoint::default().to_bytes();
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[..4], b"DEFA");
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), Checkpoint::default());
    }

    #[test]
    fn single_matrix_layout_size() {
        let mut ck = Checkpoint::default();
        ck.push("w", Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        // header 12 + name (4 + 1) + rank 4 + extents 8 + payload 16
        assert_eq!(ck.to_bytes().len(), 12 + 5 + 4 + 8 + 16);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let mut ck = Checkpoint::default();
        ck.push("w", Tensor::row_vector(&[1.0, 2.0, 3.0]));
        let bytes = ck.to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic)));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::UnsupportedVersion(9))));

        for cut in [3, 10, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(CheckpointError::TruncatedFile) | Err(CheckpointError::BadMagic)));
        }
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::TruncatedFile)));
    }

    #[test]
    fn negative_zero_and_nan_payload_bits_survive() {
        let mut ck = Checkpoint::default();
        let weird = [-0.0f32, f32::from_bits(0x7fc0_1234), f32::MIN_POSITIVE / 2.0];
        ck.push("w", Tensor::row_vector(&weird));
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        let got: Vec<u32> = back.entries()[0].1.data().iter().map(|x| x.to_bits()).collect();
        let want: Vec<u32> = weird.iter().map(|x| x.to_bits()).collect();
        assert_eq!(got, want);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            tensors in prop::collection::vec(
                (prop::collection::vec(1usize..4, 1..4), any::<u32>()), 0..10)
        ) {
            let mut ck = Checkpoint::default();
            for (i, (shape, seed)) in tensors.iter().enumerate() {
                let len: usize = shape.iter().product();
                let data = (0..len)
                    .map(|k| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(k as u32)))
                    .collect();
                ck.push(&format!("t.{i}"), Tensor::new(shape.clone(), data).unwrap());
            }
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), ck.to_bytes());
        }
    }
}
