//! Binary parameter checkpoints: the magic `FPSIM1`, the parameter count as a
//! little-endian u64, then the parameters as little-endian f64.

use std::path::Path;

use super::HarnessError;
use crate::vector::ParamVector;

pub const MAGIC: &[u8; 6] = b"FPSIM1";

pub fn encode(params: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ParamVector, HarnessError> {
    let bad = |msg: String| HarnessError::Checkpoint(msg);
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("missing FPSIM1 header".into()));
    }
    let mut len = [0u8; 8];
    len.copy_from_slice(&bytes[MAGIC.len()..MAGIC.len() + 8]);
    let d = u64::from_le_bytes(len);
    let body = &bytes[MAGIC.len() + 8..];
    if body.len() as u64 != d.saturating_mul(8) {
        return Err(bad(format!("header declares {d} parameters but the body holds {} bytes", body.len())));
    }
    Ok(ParamVector::from_vec(
        body.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    ))
}

pub fn write(path: &Path, params: &ParamVector) -> Result<(), HarnessError> {
    std::fs::write(path, encode(params)).map_err(|e| HarnessError::io(path, e))
}

pub fn read(path: &Path) -> Result<ParamVector, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode(&bytes)
}

/// Parameter count from the header alone.
pub fn read_dim(path: &Path) -> Result<u64, HarnessError> {
    use std::io::Read;
    let mut head = [0u8; 14];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map_err(|e| HarnessError::io(path, e))?;
    if &head[..6] != MAGIC {
        return Err(HarnessError::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    Ok(u64::from_le_bytes(head[6..].try_into().expect("8 bytes")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout() {
        let bytes = encode(&ParamVector::from_vec(vec![1.5, -2.0]));
        assert_eq!(&bytes[..6], b"FPSIM1");
        assert_eq!(&bytes[6..14], &2u64.to_le_bytes());
        assert_eq!(&bytes[14..22], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 30);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = encode(&ParamVector::from_vec(vec![1.0; 3]));
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
        assert!(decode(b"FPS").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let p = ParamVector::from_vec(vec![0.25, f64::MIN_POSITIVE, -7.0]);
        write(&path, &p).unwrap();
        assert_eq!(read(&path).unwrap(), p);
        assert_eq!(read_dim(&path).unwrap(), 3);
    }

    proptest! {
        #[test]
        fn bytes_round_trip(v in proptest::collection::vec(-1e300f64..1e300, 0..64)) {
            let p = ParamVector::from_vec(v);
            prop_assert_eq!(decode(&encode(&p)).unwrap(), p);
        }
    }
}
