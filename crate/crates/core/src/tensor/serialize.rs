//! Named-tensor binary encoding.
//!
//! Layout, all little-endian: `count: u32`, then per tensor `name_len: u32`,
//! UTF-8 name, `rank: u32`, `rank × dim: u32`, `numel × f64`.

use super::{numel, Tensor, TensorError};
use crate::wire::ByteReader;

const MAX_RANK: u32 = 8;

pub fn encode_tensors(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes a tensor list from the front of `bytes`, returning it with the
/// number of bytes consumed.
pub fn decode_tensors(bytes: &[u8]) -> Result<(Vec<(String, Tensor)>, usize), TensorError> {
    let mut r = ByteReader::new(bytes);
    let bad = |e: crate::wire::WireError| TensorError::Malformed(e.0);
    let count = r.u32().map_err(bad)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = r.u32().map_err(bad)? as usize;
        let name = std::str::from_utf8(r.take(name_len).map_err(bad)?)
            .map_err(|_| TensorError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32().map_err(bad)?;
        if rank > MAX_RANK {
            return Err(TensorError::Malformed(format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(r.u32().map_err(bad)? as usize);
        }
        let n = numel(&shape)
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| TensorError::Malformed(format!("tensor '{name}' {shape:?} exceeds input")))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let v = r.f64().map_err(bad)?;
            if !v.is_finite() {
                return Err(TensorError::Malformed(format!("tensor '{name}' holds a non-finite value")));
            }
            data.push(v);
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok((out, r.position()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_is_bitwise() {
        let ts = vec![
            ("a".to_string(), Tensor::from_fn(&[2, 3], |i| (i as f64).sin() * 1e-300)),
            ("scalar".to_string(), Tensor::scalar(-0.0)),
            ("empty".to_string(), Tensor::zeros(&[0, 4])),
        ];
        let bytes = encode_tensors(&ts);
        let (back, used) = decode_tensors(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        for ((n1, t1), (n2, t2)) in ts.iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn rejects_truncation_and_nan() {
        let bytes = encode_tensors(&[("w".into(), Tensor::ones(&[3]))]);
        for cut in 0..bytes.len() {
            assert!(decode_tensors(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut nan = bytes.clone();
        let off = nan.len() - 8;
        nan[off..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_tensors(&nan).is_err());
    }

    #[test]
    fn huge_shape_is_rejected_without_allocating() {
        let mut b = Vec::new();
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.push(b'x');
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&u32::MAX.to_le_bytes());
        b.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_tensors(&b).is_err());
    }

    proptest! {
        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = decode_tensors(&bytes);
        }
    }
}
