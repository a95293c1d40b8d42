//! `NOPRED1` model files: magic, manifest length (u32), JSON manifest,
//! parameter count (u64), f64 parameters, CRC32 of everything before it.
//! Little-endian throughout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, OperatorModel};
use crate::dataset::format::{check_crc, check_magic, f64s, Cursor};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 7] = b"NOPRED1";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    architecture: Architecture,
}

pub(crate) fn encode_raw(arch: &Architecture, params: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(&Manifest {
        format_version: MODEL_VERSION,
        architecture: arch.clone(),
    })?;
    let mut out = Vec::with_capacity(json.len() + 23 + 8 * params.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn encode_model(model: &OperatorModel) -> Result<Vec<u8>> {
    encode_raw(model.architecture(), model.parameters())
}

pub fn decode_model(bytes: &[u8]) -> Result<OperatorModel> {
    check_magic(bytes, MODEL_MAGIC, "model")?;
    let body = check_crc(bytes)?;
    let mut cur = Cursor {
        bytes: body,
        pos: MODEL_MAGIC.len(),
    };
    let json_len = cur.u32()? as usize;
    let manifest: Manifest = serde_json::from_slice(cur.take(json_len)?)?;
    if manifest.format_version != MODEL_VERSION {
        return Err(Error::Version(format!("model format {}", manifest.format_version)));
    }
    let count = cur.u64()? as usize;
    let data = cur.rest();
    if data.len() != count * 8 {
        return Err(Error::Format(format!(
            "header announces {count} parameters, file holds {} bytes of them",
            data.len()
        )));
    }
    let expected = manifest.architecture.parameter_count();
    if count != expected {
        return Err(Error::ParameterCount { expected, found: count });
    }
    OperatorModel::from_parameters(manifest.architecture, f64s(data))
}

pub fn serialize_model(model: &OperatorModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<OperatorModel> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::tests::small_arch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = OperatorModel::new(small_arch(0, true)).unwrap();
        let back = decode_model(&encode_model(&model).unwrap()).unwrap();
        assert_eq!(back, model);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let q: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let views: Vec<&[f64]> = w.iter().map(Vec::as_slice).collect();
            let t0 = rng.gen_range(0.0..10.0);
            let a = model.predict(&q, &views, 0.25, t0).unwrap();
            let b = back.predict(&q, &views, 0.25, t0).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn damaged_files_are_rejected() {
        let model = OperatorModel::new(small_arch(1, false)).unwrap();
        let bytes = encode_model(&model).unwrap();
        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 100]),
            Err(Error::Checksum { .. })
        ));
        let mut v2 = bytes.clone();
        v2[6] = b'2';
        assert!(matches!(decode_model(&v2), Err(Error::Version(_))));
        let mut wide = model.architecture().clone();
        wide.branch_hidden[0] = 9;
        let edited = encode_raw(&wide, model.parameters()).unwrap();
        assert!(matches!(decode_model(&edited), Err(Error::ParameterCount { .. })));
    }
}
