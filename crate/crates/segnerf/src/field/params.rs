//! Flat storage for every trainable scalar, with named segment layout and
//! the versioned binary checkpoint format.

use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Checkpoint magic: 8 bytes, followed by a u64 config digest, a u64 value
/// count, then the values as little-endian f32.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SAIDNF01";

/// Contiguous range of the flat parameter array.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Span {
    pub offset: usize,
    pub len: usize,
}

impl Span {
    #[inline]
    pub fn slice<'a>(&self, v: &'a [f64]) -> &'a [f64] {
        &v[self.offset..self.offset + self.len]
    }

    #[inline]
    pub fn slice_mut<'a>(&self, v: &'a mut [f64]) -> &'a mut [f64] {
        &mut v[self.offset..self.offset + self.len]
    }
}

#[derive(Clone, Debug)]
pub struct Segment {
    pub name: String,
    pub span: Span,
}

/// All trainable scalars plus their gradient slots. Segments are disjoint,
/// ordered, and cover the array.
#[derive(Clone, Debug)]
pub struct ParameterStore {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParameterStore {
    pub fn from_layout(segments: Vec<Segment>) -> Self {
        let mut expected = 0;
        for s in &segments {
            assert_eq!(s.span.offset, expected, "segment {} not contiguous", s.name);
            expected += s.span.len;
        }
        ParameterStore { values: vec![0.0; expected], grads: vec![0.0; expected], segments }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<Span> {
        self.segments.iter().find(|s| s.name == name).map(|s| s.span)
    }

    /// Name of the segment containing parameter index `i`.
    pub fn segment_of(&self, i: usize) -> &str {
        self.segments
            .iter()
            .find(|s| i >= s.span.offset && i < s.span.offset + s.span.len)
            .map(|s| s.name.as_str())
            .unwrap_or("<unknown>")
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Errors with the name of the first segment holding a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite parameter in segment {}",
                    self.segment_of(i)
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, config_digest: u64) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&config_digest.to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads checkpoint values into this store; the store supplies the
    /// layout, the file supplies the values.
    pub fn load_into(&mut self, path: &Path, config_digest: u64) -> Result<()> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format(format!(
                "bad checkpoint magic {:?} in {}",
                magic,
                path.display()
            )));
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let digest = u64::from_le_bytes(buf8);
        if digest != config_digest {
            return Err(Error::format(format!(
                "checkpoint config digest {digest:#018x} does not match expected {config_digest:#018x}"
            )));
        }
        r.read_exact(&mut buf8)?;
        let count = u64::from_le_bytes(buf8) as usize;
        if count != self.values.len() {
            return Err(Error::format(format!(
                "checkpoint holds {count} values, layout expects {}",
                self.values.len()
            )));
        }
        let mut buf4 = [0u8; 4];
        for v in self.values.iter_mut() {
            r.read_exact(&mut buf4)?;
            *v = f32::from_le_bytes(buf4) as f64;
        }
        Ok(())
    }
}

/// FNV-1a over a canonical config encoding; stored in checkpoints so a blob
/// cannot be loaded into a mismatched architecture.
pub fn config_digest(canonical: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in canonical.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParameterStore {
        ParameterStore::from_layout(vec![
            Segment { name: "a".into(), span: Span { offset: 0, len: 3 } },
            Segment { name: "b".into(), span: Span { offset: 3, len: 2 } },
        ])
    }

    #[test]
    fn segment_lookup() {
        let s = store();
        assert_eq!(s.segment("b"), Some(Span { offset: 3, len: 2 }));
        assert_eq!(s.segment_of(4), "b");
        assert_eq!(s.segment_of(0), "a");
    }

    #[test]
    fn finite_check_names_segment() {
        let mut s = store();
        s.values[4] = f64::NAN;
        let err = s.check_finite().unwrap_err();
        assert!(err.to_string().contains("segment b"), "{err}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let mut s = store();
        for (i, v) in s.values.iter_mut().enumerate() {
            *v = i as f64 * 0.25 - 0.5;
        }
        s.save(&path, 7).unwrap();
        let mut t = store();
        t.load_into(&path, 7).unwrap();
        assert_eq!(s.values, t.values);

        // Digest mismatch is a format error.
        let mut u = store();
        assert!(matches!(u.load_into(&path, 8), Err(Error::Format(_))));
    }

    #[test]
    fn checkpoint_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let s = store();
        s.save(&path, 0x0102030405060708).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..8], b"SAIDNF01");
        assert_eq!(bytes[8..16], 0x0102030405060708u64.to_le_bytes());
        assert_eq!(bytes[16..24], 5u64.to_le_bytes());
        assert_eq!(bytes.len(), 24 + 5 * 4);
    }
}
