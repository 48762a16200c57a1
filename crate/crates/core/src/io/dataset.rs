use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::io::bytes::{volume, Reader, Writer};
use crate::tensor::FeatureMap;

const MAGIC: &[u8; 4] = b"LRDS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// Labeled single-channel patches.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<FeatureMap<f32>>,
    pub labels: Vec<usize>,
    pub split: Split,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of samples carrying each label `0..classes`.
    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &l in &self.labels {
            if l < classes {
                counts[l] += 1;
            }
        }
        counts
    }

    /// The first `n` samples.
    pub fn truncated(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            samples: self.samples[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            split: self.split,
            seed: self.seed,
        }
    }
}

/// Layout (little-endian): magic, version, sample count, `c h w`, split
/// (0 train, 1 test), seed as two `u32` words, one `u32` label per sample,
/// then the `f32` pixels of every sample in order.
pub fn serialize_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.samples.len() != ds.labels.len() {
        return Err(Error::ShapeInconsistent(format!("{} samples, {} labels", ds.samples.len(), ds.labels.len())));
    }
    let shape = ds.samples.first().map_or((0, 0, 0), |s| s.shape());
    if ds.samples.iter().any(|s| s.shape() != shape) {
        return Err(Error::ShapeInconsistent("samples differ in shape".into()));
    }
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.usize(ds.len());
    for d in [shape.0, shape.1, shape.2] {
        w.usize(d);
    }
    w.u32(match ds.split {
        Split::Train => 0,
        Split::Test => 1,
    });
    w.u64(ds.seed);
    for &l in &ds.labels {
        w.usize(l);
    }
    for s in &ds.samples {
        w.f32s(s.data());
    }
    Ok(w.buf)
}

pub fn deserialize_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    if bytes.len() < 4 || r.take(4)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = r.usize()?;
    let (c, h, w) = (r.usize()?, r.usize()?, r.usize()?);
    let split = match r.u32()? {
        0 => Split::Train,
        1 => Split::Test,
        s => return Err(Error::ShapeInconsistent(format!("unknown split tag {s}"))),
    };
    let seed = r.u64()?;
    let per = volume(&[c, h, w])?;
    if volume(&[n, per, 4])? > r.remaining() {
        return Err(Error::TruncatedPayload);
    }
    let labels = (0..n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let data = r.f32s(per)?;
        samples.push(FeatureMap::new(c, h, w, data).map_err(|e| Error::ShapeInconsistent(e.to_string()))?);
    }
    if r.remaining() != 0 {
        return Err(Error::ShapeInconsistent(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Dataset { samples, labels, split, seed })
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    atomic_write(path, &serialize_dataset(ds)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    deserialize_dataset(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset {
            samples: (0..3).map(|i| FeatureMap::from_fn(1, 2, 3, |_, u, v| (i * 6 + u * 3 + v) as f32 - 0.5)).collect(),
            labels: vec![0, 36, 5],
            split: Split::Test,
            seed: u64::MAX - 3,
        }
    }

    #[test]
    fn round_trip() {
        let ds = tiny();
        let bytes = serialize_dataset(&ds).unwrap();
        assert_eq!(deserialize_dataset(&bytes).unwrap(), ds);
        assert_eq!(deserialize_dataset(&serialize_dataset(&Dataset::default()).unwrap()).unwrap(), Dataset::default());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut bytes = serialize_dataset(&tiny()).unwrap();
        assert_eq!(deserialize_dataset(&bytes[..bytes.len() - 2]), Err(Error::TruncatedPayload));
        bytes[4] = 7;
        assert_eq!(deserialize_dataset(&bytes), Err(Error::UnsupportedVersion(7)));
        bytes[1] = 0;
        assert_eq!(deserialize_dataset(&bytes), Err(Error::BadMagic));
    }

    #[test]
    fn mismatched_labels_are_rejected() {
        let mut ds = tiny();
        ds.labels.pop();
        assert!(serialize_dataset(&ds).is_err());
    }
}
