//! `NDSET1` files: magic, manifest length (u32), JSON manifest, record count
//! (u64), fixed-width f64 records, CRC32 of everything before it. All
//! integers and floats little-endian.
//!
//! A record is `[stage, trajectory, time, φ, Q (n), windows (m × ns_in, zero
//! past the record's own windows), target (ns_out × n)]`.

use std::fs;
use std::path::Path;

use super::{DatasetManifest, PairRecord, PredictorDataset, DATASET_VERSION};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 6] = b"NDSET1";

/// Serializes without checking the manifest against the records.
pub fn encode_dataset(dataset: &PredictorDataset) -> Result<Vec<u8>> {
    let man = &dataset.manifest;
    let json = serde_json::to_vec(man)?;
    let width = man.record_width();
    let mut out = Vec::with_capacity(json.len() + 22 + 8 * width * dataset.records.len());
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(dataset.records.len() as u64).to_le_bytes());
    let mut row = Vec::with_capacity(width);
    for r in &dataset.records {
        row.clear();
        row.extend([r.stage as f64, r.trajectory as f64, r.time, r.phi]);
        row.extend(&r.anchor);
        for w in &r.windows {
            row.extend(w);
        }
        row.resize(4 + man.n + man.m * man.ns_in, 0.0);
        row.extend(&r.target);
        if row.len() != width {
            return Err(Error::invalid(format!(
                "record (trajectory {}, t = {}) has {} values, manifest width is {width}",
                r.trajectory,
                r.time,
                row.len()
            )));
        }
        for v in &row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub(crate) fn check_magic(bytes: &[u8], magic: &[u8], family: &str) -> Result<()> {
    let stem = &magic[..magic.len() - 1];
    if bytes.len() < magic.len() || &bytes[..stem.len()] != stem {
        return Err(Error::Format(format!("not a {family} file")));
    }
    if &bytes[..magic.len()] != magic {
        return Err(Error::Version(
            String::from_utf8_lossy(&bytes[..magic.len()]).into_owned(),
        ));
    }
    Ok(())
}

/// Verifies and strips the CRC32 trailer.
pub(crate) fn check_crc(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 4 {
        return Err(Error::Format("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(body)
}

pub(crate) struct Cursor<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

pub(crate) fn f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect()
}

pub fn decode_dataset(bytes: &[u8]) -> Result<PredictorDataset> {
    check_magic(bytes, DATASET_MAGIC, "dataset")?;
    let body = check_crc(bytes)?;
    let mut cur = Cursor {
        bytes: body,
        pos: DATASET_MAGIC.len(),
    };
    let json_len = cur.u32()? as usize;
    let manifest: DatasetManifest = serde_json::from_slice(cur.take(json_len)?)?;
    if manifest.format_version != DATASET_VERSION {
        return Err(Error::Version(format!("dataset format {}", manifest.format_version)));
    }
    if manifest.stage_counts.len() != manifest.m || manifest.delays.len() != manifest.m {
        return Err(Error::Format("manifest stage data does not match m".into()));
    }
    let count = cur.u64()? as usize;
    let expected = manifest.record_count();
    if count != expected {
        return Err(Error::CountMismatch { expected, found: count });
    }
    let width = manifest.record_width();
    let data = cur.rest();
    if data.len() != count * width * 8 {
        return Err(Error::CountMismatch {
            expected,
            found: data.len() / (8 * width),
        });
    }
    let (n, m, ns_in) = (manifest.n, manifest.m, manifest.ns_in);
    let mut records = Vec::with_capacity(count);
    for chunk in data.chunks_exact(width * 8) {
        let row = f64s(chunk);
        let stage = row[0] as usize;
        if row[0] != stage as f64 || stage >= m {
            return Err(Error::Format(format!("bad stage field {}", row[0])));
        }
        let win_start = 4 + n;
        let windows = (stage..m)
            .map(|j| {
                let k = j - stage;
                row[win_start + k * ns_in..win_start + (k + 1) * ns_in].to_vec()
            })
            .collect();
        records.push(PairRecord {
            stage,
            trajectory: row[1] as u64,
            time: row[2],
            phi: row[3],
            anchor: row[4..4 + n].to_vec(),
            windows,
            target: row[win_start + m * ns_in..].to_vec(),
        });
    }
    let ds = PredictorDataset { manifest, records };
    ds.validate()?;
    Ok(ds)
}

pub fn write_dataset(dataset: &PredictorDataset, path: impl AsRef<Path>) -> Result<()> {
    dataset.validate()?;
    fs::write(path, encode_dataset(dataset)?)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<PredictorDataset> {
    decode_dataset(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InitialCondition;

    pub(crate) fn tiny() -> PredictorDataset {
        let manifest = DatasetManifest {
            format_version: DATASET_VERSION,
            system: "linear2".into(),
            n: 1,
            m: 2,
            delays: vec![0.2, 0.5],
            dt: 0.1,
            horizon: 1.0,
            noise: 0.0,
            trajectories: 1,
            stride: 5,
            ns_in: 3,
            ns_out: 2,
            stage_counts: vec![1, 1],
            seed: 42,
            initial: InitialCondition::Origin,
            law_period: None,
            dropped: 0,
        };
        let records = vec![
            PairRecord {
                stage: 0,
                trajectory: 0,
                time: 0.5,
                phi: 0.2,
                anchor: vec![0.25],
                windows: vec![vec![1.0, 2.0, 3.0], vec![-1.0, -0.5, 0.0]],
                target: vec![0.25, 0.75],
            },
            PairRecord {
                stage: 1,
                trajectory: 0,
                time: 0.5,
                phi: 0.3,
                anchor: vec![0.75],
                windows: vec![vec![0.5, 0.125, -2.0]],
                target: vec![0.75, 1.5],
            },
        ];
        PredictorDataset { manifest, records }
    }

    #[test]
    fn round_trip() {
        let ds = tiny();
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(decode_dataset(&bytes).unwrap(), ds);
    }

    #[test]
    fn golden_encoding() {
        let bytes = encode_dataset(&tiny()).unwrap();
        let trailer = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        assert_eq!((bytes.len(), trailer), (473, 0x2fd9_80a1));
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_dataset(&tiny()).unwrap();
        assert!(matches!(
            decode_dataset(&bytes[..bytes.len() - 9]),
            Err(Error::Checksum { .. })
        ));
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(decode_dataset(&flipped), Err(Error::Checksum { .. })));
        let mut other = bytes.clone();
        other[5] = b'9';
        assert!(matches!(decode_dataset(&other), Err(Error::Version(_))));
        assert!(matches!(decode_dataset(b"hello world"), Err(Error::Format(_))));
    }

    #[test]
    fn edited_count_is_rejected() {
        let mut ds = tiny();
        ds.manifest.stage_counts = vec![2, 1];
        let bytes = encode_dataset(&ds).unwrap();
        assert!(matches!(
            decode_dataset(&bytes),
            Err(Error::CountMismatch { expected: 3, found: 2 })
        ));
    }
}
