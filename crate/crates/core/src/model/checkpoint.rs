//! Binary checkpoint format.
//!
//! Layout: magic `DDRO`, format version (u32 LE), config block (d, vocab
//! size, max_len as u32 LE), then every weight matrix in [`ParamId::ALL`]
//! order, row-major, little-endian f64. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::{ModelConfig, ParamId, ParamSet};
use super::ModelError;
use crate::num::Scalar;

const MAGIC: &[u8; 4] = b"DDRO";
const VERSION: u32 = 1;

pub fn write_checkpoint<F: Scalar>(params: &ParamSet<F>, path: &Path) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg = &params.config;
    for v in [cfg.d as u32, cfg.vocab_size as u32, cfg.max_len as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for (_, mat) in params.tensors() {
        for x in mat.data() {
            w.write_all(&x.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<F: Scalar>(path: &Path) -> Result<ParamSet<F>, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::BadCheckpoint(format!("bad magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(ModelError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let read_u32 = |r: &mut BufReader<File>| -> Result<usize, ModelError> {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        Ok(u32::from_le_bytes(buf) as usize)
    };
    let d = read_u32(&mut r)?;
    let vocab_size = read_u32(&mut r)?;
    let max_len = read_u32(&mut r)?;
    let config = ModelConfig { d, vocab_size, max_len };
    super::params::validate_config(&config)?;

    let mut params = ParamSet::zeros(config);
    let mut f64buf = [0u8; 8];
    for id in ParamId::ALL {
        for x in params.get_mut(id).data_mut() {
            r.read_exact(&mut f64buf)?;
            *x = <F as Scalar>::from_f64(f64::from_le_bytes(f64buf));
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ModelError::BadCheckpoint("trailing bytes after weights".into()));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::init_model;

    fn cfg() -> ModelConfig {
        ModelConfig { d: 8, vocab_size: 16, max_len: 12 }
    }

    #[test]
    fn roundtrip_bit_exact() {
        let params = init_model::<f64>(cfg(), 99).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_checkpoint(&params, f.path()).unwrap();
        let back = read_checkpoint::<f64>(f.path()).unwrap();
        assert_eq!(params, back);

        // Re-serializing yields byte-identical files.
        let f2 = tempfile::NamedTempFile::new().unwrap();
        write_checkpoint(&back, f2.path()).unwrap();
        assert_eq!(std::fs::read(f.path()).unwrap(), std::fs::read(f2.path()).unwrap());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), b"NOPE").unwrap();
        assert!(matches!(read_checkpoint::<f64>(f.path()), Err(ModelError::BadCheckpoint(_))));

        let params = init_model::<f64>(cfg(), 1).unwrap();
        write_checkpoint(&params, f.path()).unwrap();
        let bytes = std::fs::read(f.path()).unwrap();
        std::fs::write(f.path(), &bytes[..bytes.len() - 9]).unwrap();
        assert!(read_checkpoint::<f64>(f.path()).is_err());

        let mut extended = bytes.clone();
        extended.push(0);
        std::fs::write(f.path(), &extended).unwrap();
        assert!(matches!(read_checkpoint::<f64>(f.path()), Err(ModelError::BadCheckpoint(_))));
    }

    #[test]
    fn header_layout() {
        let params = init_model::<f64>(cfg(), 1).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_checkpoint(&params, f.path()).unwrap();
        let bytes = std::fs::read(f.path()).unwrap();
        assert_eq!(&bytes[0..4], b"DDRO");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 16);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 12);
        assert_eq!(bytes.len(), 20 + 8 * params.num_params());
    }
}
