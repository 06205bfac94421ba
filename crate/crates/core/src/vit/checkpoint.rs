//! Model checkpoint: `BVIT`, a version byte, the config as length-prefixed
//! `key = value` text, then the named parameter tensors.

use super::{ViTConfig, ViTParams, VitError};
use crate::tensor::{decode_tensors, encode_tensors};
use crate::wire::ByteReader;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BVIT";
pub const CHECKPOINT_VERSION: u8 = 1;

pub fn encode_checkpoint(cfg: &ViTConfig, params: &ViTParams) -> Vec<u8> {
    let text = cfg.to_text();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend(encode_tensors(&params.named()));
    out
}

/// Decodes a checkpoint from the front of `bytes`; also returns the number of
/// bytes consumed so callers can read trailing sections.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ViTConfig, ViTParams, usize), VitError> {
    let bad = |m: String| VitError::MalformedCheckpoint(m);
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4).map_err(|e| bad(e.0))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad("missing BVIT magic".into()));
    }
    let version = r.u8().map_err(|e| bad(e.0))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = r.u32().map_err(|e| bad(e.0))? as usize;
    let text = std::str::from_utf8(r.take(len).map_err(|e| bad(e.0))?)
        .map_err(|_| bad("config block is not UTF-8".into()))?;
    let cfg = ViTConfig::from_text(text)?;
    let start = r.position();
    let (named, used) = decode_tensors(&bytes[start..]).map_err(|e| bad(e.to_string()))?;
    let params = ViTParams::from_named(&cfg, named)?;
    Ok((cfg, params, start + used))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::init_params;

    #[test]
    fn round_trip_and_corruption() {
        let cfg = ViTConfig {
            height: 8,
            width: 8,
            patch: 4,
            dim: 8,
            depth: 1,
            heads: 2,
            mlp_dim: 8,
            num_classes: 3,
            ..Default::default()
        };
        let params = init_params(&cfg, 3).unwrap();
        let bytes = encode_checkpoint(&cfg, &params);
        let (c2, p2, used) = decode_checkpoint(&bytes).unwrap();
        assert_eq!((c2, used), (cfg.clone(), bytes.len()));
        assert_eq!(p2, params);

        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_checkpoint(&wrong).is_err());
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(decode_checkpoint(&wrong).is_err());
        for cut in [3, 5, 9, 40, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut {cut}");
        }
    }
}
