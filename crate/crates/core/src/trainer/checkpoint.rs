//! `BGP1` checkpoint: magic, `u16` version, `u64` config fingerprint, then the
//! flat parameter vector as little-endian `f64`.

use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};

use super::params::{ParamLayout, ParamSet};

const MAGIC: &[u8; 4] = b"BGP1";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8;

pub fn checkpoint_bytes(params: &ParamSet, cfg: &ModelConfig) -> Vec<u8> {
    let flat = params.flatten();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * flat.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&cfg.fingerprint().to_le_bytes());
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn params_from_checkpoint(bytes: &[u8], cfg: &ModelConfig) -> Result<ParamSet> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a BGP1 checkpoint".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let fp = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    if fp != cfg.fingerprint() {
        return Err(Error::Config(format!(
            "checkpoint fingerprint {fp:016x} does not match model config {:016x}",
            cfg.fingerprint()
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = ParamLayout::new(cfg).len();
    if payload.len() != 8 * expected {
        return Err(Error::Format(format!(
            "checkpoint holds {} bytes of parameters, expected {}",
            payload.len(),
            8 * expected
        )));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ParamSet::unflatten(cfg, &flat)
}

pub fn write_checkpoint(params: &ParamSet, cfg: &ModelConfig, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(params, cfg))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<ParamSet> {
    params_from_checkpoint(&std::fs::read(path)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Ablation;

    #[test]
    fn round_trip_and_fingerprint_guard() {
        let cfg = ModelConfig::unmasked(3, 2, 3, 5, 2);
        let p = ParamSet::init(&cfg, 4);
        let bytes = checkpoint_bytes(&p, &cfg);
        assert_eq!(&bytes[..4], b"BGP1");
        assert_eq!(params_from_checkpoint(&bytes, &cfg).unwrap(), p);

        let mut other = cfg.clone();
        other.ablation = Ablation::NoTemporal;
        assert!(matches!(params_from_checkpoint(&bytes, &other), Err(Error::Config(_))));
        assert!(matches!(params_from_checkpoint(&bytes[..bytes.len() - 3], &cfg), Err(Error::Format(_))));
    }
}
