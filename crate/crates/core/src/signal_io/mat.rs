//! Reader for the subset of MAT-file level 5 that CWRU recordings use:
//! uncompressed `miMATRIX` elements of class `mxDOUBLE_CLASS`, real-valued,
//! stored column-major. Either byte order is accepted.
//!
//! Anything outside the subset is still walked over so that other variables
//! in the same file can be listed and selected; selecting an unsupported
//! variable yields [`SignalError::UnsupportedMatFeature`].

use super::SignalError;

pub const HEADER_LEN: usize = 128;
const TEXT_LEN: usize = 116;
const VERSION: u16 = 0x0100;

const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT16: u32 = 3;
const MI_UINT16: u32 = 4;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_SINGLE: u32 = 7;
const MI_DOUBLE: u32 = 9;
const MI_INT64: u32 = 12;
const MI_UINT64: u32 = 13;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;

const MX_DOUBLE_CLASS: u8 = 6;
const FLAG_COMPLEX: u8 = 0x08;

#[derive(Debug, Clone, PartialEq)]
pub enum MatData {
    Double { dims: Vec<usize>, values: Vec<f64> },
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatVariable {
    /// `None` for elements whose name cannot be read (compressed payloads).
    pub name: Option<String>,
    pub data: MatData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatFile {
    pub description: String,
    pub big_endian: bool,
    pub variables: Vec<MatVariable>,
}

impl MatFile {
    pub fn names(&self) -> Vec<String> {
        self.variables.iter().filter_map(|v| v.name.clone()).collect()
    }

    /// Picks the first variable whose name contains `hint` (case-sensitive),
    /// or the first supported variable when no hint is given.
    pub fn select(&self, hint: Option<&str>) -> Result<(&str, &[f64]), SignalError> {
        let found = match hint {
            Some(h) => self
                .variables
                .iter()
                .find(|v| v.name.as_deref().is_some_and(|n| n.contains(h))),
            None => self
                .variables
                .iter()
                .find(|v| v.name.is_some() && matches!(v.data, MatData::Double { .. })),
        };
        match found {
            Some(MatVariable {
                name: Some(name),
                data: MatData::Double { values, .. },
            }) => Ok((name, values)),
            Some(MatVariable {
                name,
                data: MatData::Unsupported(why),
            }) => Err(SignalError::UnsupportedMatFeature(format!(
                "variable {}: {why}",
                name.as_deref().unwrap_or("?")
            ))),
            _ if self.variables.iter().any(|v| v.name.is_none()) => {
                Err(SignalError::UnsupportedMatFeature(
                    "file contains compressed data elements".into(),
                ))
            }
            _ => Err(SignalError::VariableNotFound {
                hint: hint.unwrap_or("").to_string(),
                candidates: self.names(),
            }),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    big_endian: bool,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SignalError> {
        if n > self.remaining() {
            return Err(SignalError::MalformedData(format!(
                "truncated: need {n} bytes at offset {}, have {}",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SignalError> {
        let b: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        Ok(if self.big_endian {
            u32::from_be_bytes(b)
        } else {
            u32::from_le_bytes(b)
        })
    }

    fn align8(&mut self) {
        let pad = (8 - self.pos % 8) % 8;
        self.pos = (self.pos + pad).min(self.buf.len());
    }

    /// Reads one data-element tag and its payload, handling the small
    /// (4-byte inline) element format.
    fn element(&mut self) -> Result<(u32, &'a [u8]), SignalError> {
        let first = self.u32()?;
        if first >> 16 != 0 {
            let ty = first & 0xFFFF;
            let size = (first >> 16) as usize;
            if size > 4 {
                return Err(SignalError::MalformedData(format!(
                    "small data element claims {size} bytes"
                )));
            }
            let inline = self.take(4)?;
            return Ok((ty, &inline[..size]));
        }
        let size = self.u32()? as usize;
        let data = self.take(size)?;
        self.align8();
        Ok((first, data))
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<(String, bool), SignalError> {
    if bytes.len() < HEADER_LEN {
        return Err(SignalError::MalformedHeader(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if bytes[..4].contains(&0) {
        return Err(SignalError::MalformedHeader(
            "first four bytes must be non-zero (level 4 file?)".into(),
        ));
    }
    let big_endian = match &bytes[126..128] {
        b"IM" => false,
        b"MI" => true,
        other => {
            return Err(SignalError::MalformedHeader(format!(
                "bad endian indicator {other:?}"
            )))
        }
    };
    let vb = [bytes[124], bytes[125]];
    let version = if big_endian {
        u16::from_be_bytes(vb)
    } else {
        u16::from_le_bytes(vb)
    };
    if version != VERSION {
        return Err(SignalError::MalformedHeader(format!(
            "unsupported version {version:#06x}"
        )));
    }
    let text = String::from_utf8_lossy(&bytes[..TEXT_LEN])
        .trim_end_matches([' ', '\0'])
        .to_string();
    Ok((text, big_endian))
}

pub fn parse_mat(bytes: &[u8]) -> Result<MatFile, SignalError> {
    let (description, big_endian) = parse_header(bytes)?;
    let mut r = Reader {
        buf: bytes,
        pos: HEADER_LEN,
        big_endian,
    };
    let mut variables = Vec::new();
    while r.remaining() >= 8 {
        let ty = r.u32()?;
        if ty >> 16 != 0 {
            return Err(SignalError::MalformedData(
                "small-format element at top level".into(),
            ));
        }
        let size = r.u32()? as usize;
        let payload = r.take(size)?;
        match ty {
            MI_MATRIX => {
                r.align8();
                variables.push(parse_matrix(payload, big_endian)?);
            }
            MI_COMPRESSED => variables.push(MatVariable {
                name: None,
                data: MatData::Unsupported("compressed element".into()),
            }),
            other => {
                r.align8();
                variables.push(MatVariable {
                    name: None,
                    data: MatData::Unsupported(format!("top-level element type {other}")),
                })
            }
        }
    }
    if r.remaining() != 0 {
        return Err(SignalError::MalformedData(format!(
            "{} trailing bytes after last element",
            r.remaining()
        )));
    }
    Ok(MatFile {
        description,
        big_endian,
        variables,
    })
}

fn parse_matrix(payload: &[u8], big_endian: bool) -> Result<MatVariable, SignalError> {
    let mut r = Reader {
        buf: payload,
        pos: 0,
        big_endian,
    };
    let (ty, flags) = r.element()?;
    if ty != MI_UINT32 || flags.len() != 8 {
        return Err(SignalError::MalformedData("bad array flags sub-element".into()));
    }
    let word = read_u32(&flags[..4], big_endian);
    let class = (word & 0xFF) as u8;
    let flag_bits = ((word >> 8) & 0xFF) as u8;

    let (ty, dims_raw) = r.element()?;
    if ty != MI_INT32 || dims_raw.len() < 8 || dims_raw.len() % 4 != 0 {
        return Err(SignalError::MalformedData("bad dimensions sub-element".into()));
    }
    let mut dims = Vec::with_capacity(dims_raw.len() / 4);
    for c in dims_raw.chunks_exact(4) {
        let d = read_u32(c, big_endian) as i32;
        if d < 0 {
            return Err(SignalError::MalformedData(format!("negative dimension {d}")));
        }
        dims.push(d as usize);
    }

    let (ty, name_raw) = r.element()?;
    if ty != MI_INT8 {
        return Err(SignalError::MalformedData("bad array name sub-element".into()));
    }
    let name = String::from_utf8_lossy(name_raw).into_owned();

    if class != MX_DOUBLE_CLASS {
        return Ok(unsupported(name, format!("array class {class} is not double")));
    }
    if flag_bits & FLAG_COMPLEX != 0 {
        return Ok(unsupported(name, "complex data".into()));
    }
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| SignalError::MalformedData("dimension product overflows".into()))?;

    let (ty, real) = r.element()?;
    let values = match numeric_to_f64(ty, real, big_endian) {
        Some(v) => v,
        None => return Ok(unsupported(name, format!("storage type {ty} for real part"))),
    };
    if values.len() != expected {
        return Err(SignalError::MalformedData(format!(
            "variable {name}: dims {dims:?} need {expected} values, found {}",
            values.len()
        )));
    }
    Ok(MatVariable {
        name: Some(name),
        data: MatData::Double { dims, values },
    })
}

fn unsupported(name: String, why: String) -> MatVariable {
    MatVariable {
        name: Some(name),
        data: MatData::Unsupported(why),
    }
}

fn read_u32(b: &[u8], big_endian: bool) -> u32 {
    let a: [u8; 4] = b.try_into().expect("4 bytes");
    if big_endian {
        u32::from_be_bytes(a)
    } else {
        u32::from_le_bytes(a)
    }
}

/// Widens any numeric storage type to f64. MATLAB stores double arrays in
/// narrower integer types when every value fits.
fn numeric_to_f64(ty: u32, raw: &[u8], be: bool) -> Option<Vec<f64>> {
    macro_rules! widen {
        ($t:ty, $n:expr) => {{
            if raw.len() % $n != 0 {
                return None;
            }
            raw.chunks_exact($n)
                .map(|c| {
                    let a: [u8; $n] = c.try_into().expect("chunk");
                    (if be { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
                })
                .collect()
        }};
    }
    Some(match ty {
        MI_INT8 => widen!(i8, 1),
        MI_UINT8 => widen!(u8, 1),
        MI_INT16 => widen!(i16, 2),
        MI_UINT16 => widen!(u16, 2),
        MI_INT32 => widen!(i32, 4),
        MI_UINT32 => widen!(u32, 4),
        MI_SINGLE => widen!(f32, 4),
        MI_DOUBLE => widen!(f64, 8),
        MI_INT64 => widen!(i64, 8),
        MI_UINT64 => widen!(u64, 8),
        _ => return None,
    })
}

/// A double matrix to be written by [`encode_mat`].
#[derive(Debug, Clone)]
pub struct MatArray<'a> {
    pub name: &'a str,
    pub rows: usize,
    pub cols: usize,
    /// Column-major values, `rows * cols` of them.
    pub values: &'a [f64],
}

/// Writes an uncompressed level-5 file holding real double matrices.
/// Names of at most four bytes use the small element format, as MATLAB does.
pub fn encode_mat(arrays: &[MatArray<'_>], big_endian: bool) -> Vec<u8> {
    let u32b = |v: u32| {
        if big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        }
    };
    let mut out = Vec::new();
    let mut text = b"MATLAB 5.0 MAT-file, written by bearing-vit".to_vec();
    text.resize(TEXT_LEN, b' ');
    out.extend_from_slice(&text);
    out.extend_from_slice(&[0u8; 8]);
    if big_endian {
        out.extend_from_slice(&VERSION.to_be_bytes());
        out.extend_from_slice(b"MI");
    } else {
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(b"IM");
    }

    for a in arrays {
        assert_eq!(a.values.len(), a.rows * a.cols, "values must fill the matrix");
        let mut body = Vec::new();
        body.extend_from_slice(&u32b(MI_UINT32));
        body.extend_from_slice(&u32b(8));
        body.extend_from_slice(&u32b(MX_DOUBLE_CLASS as u32));
        body.extend_from_slice(&u32b(0));
        body.extend_from_slice(&u32b(MI_INT32));
        body.extend_from_slice(&u32b(8));
        body.extend_from_slice(&u32b(a.rows as u32));
        body.extend_from_slice(&u32b(a.cols as u32));
        let name = a.name.as_bytes();
        if !name.is_empty() && name.len() <= 4 {
            body.extend_from_slice(&u32b(((name.len() as u32) << 16) | MI_INT8));
            let mut inline = name.to_vec();
            inline.resize(4, 0);
            body.extend_from_slice(&inline);
        } else {
            body.extend_from_slice(&u32b(MI_INT8));
            body.extend_from_slice(&u32b(name.len() as u32));
            body.extend_from_slice(name);
            pad8(&mut body);
        }
        body.extend_from_slice(&u32b(MI_DOUBLE));
        body.extend_from_slice(&u32b((a.values.len() * 8) as u32));
        for v in a.values {
            if big_endian {
                body.extend_from_slice(&v.to_be_bytes());
            } else {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        pad8(&mut body);
        out.extend_from_slice(&u32b(MI_MATRIX));
        out.extend_from_slice(&u32b(body.len() as u32));
        out.extend_from_slice(&body);
    }
    out
}

fn pad8(v: &mut Vec<u8>) {
    while v.len() % 8 != 0 {
        v.push(0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cwru_like() -> Vec<u8> {
        let de: Vec<f64> = (0..10).map(|i| i as f64 * 0.1 - 0.3).collect();
        let fe: Vec<f64> = (0..10).map(|i| -(i as f64)).collect();
        encode_mat(
            &[
                MatArray { name: "X097_DE_time", rows: 10, cols: 1, values: &de },
                MatArray { name: "X097_FE_time", rows: 10, cols: 1, values: &fe },
                MatArray { name: "RPM", rows: 1, cols: 1, values: &[1796.0] },
            ],
            false,
        )
    }

    #[test]
    fn selects_by_substring() {
        let file = parse_mat(&cwru_like()).unwrap();
        assert_eq!(file.names(), vec!["X097_DE_time", "X097_FE_time", "RPM"]);
        let (name, v) = file.select(Some("FE_time")).unwrap();
        assert_eq!(name, "X097_FE_time");
        assert_eq!(v[3], -3.0);
        assert_eq!(file.select(Some("RPM")).unwrap().1, &[1796.0]);
    }

    #[test]
    fn missing_variable_lists_candidates() {
        let file = parse_mat(&cwru_like()).unwrap();
        match file.select(Some("BA_time")) {
            Err(SignalError::VariableNotFound { candidates, .. }) => {
                assert_eq!(candidates.len(), 3)
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(file.select(Some("de_time")).is_err(), "matching is case-sensitive");
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_mat(&[1u8; 20]), Err(SignalError::MalformedHeader(_))));
        let mut bytes = cwru_like();
        bytes[126] = b'X';
        assert!(matches!(parse_mat(&bytes), Err(SignalError::MalformedHeader(_))));
        let mut bytes = cwru_like();
        bytes[124] = 0x00;
        bytes[125] = 0x02;
        assert!(matches!(parse_mat(&bytes), Err(SignalError::MalformedHeader(_))));
    }

    fn with_element(ty: u32, payload: &[u8]) -> Vec<u8> {
        let mut bytes = encode_mat(&[], false);
        bytes.extend_from_slice(&ty.to_le_bytes());
        bytes.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        bytes.extend_from_slice(payload);
        bytes
    }

    #[test]
    fn compressed_is_unsupported() {
        let bytes = with_element(MI_COMPRESSED, &[0x78, 0x9c, 1, 2, 3]);
        let file = parse_mat(&bytes).unwrap();
        assert!(matches!(
            file.select(Some("DE_time")),
            Err(SignalError::UnsupportedMatFeature(_))
        ));
    }

    #[test]
    fn non_double_class_is_unsupported() {
        let mut bytes = encode_mat(&[MatArray { name: "X_DE_time", rows: 1, cols: 1, values: &[1.0] }], false);
        // class byte of the array flags: header(128) + tag(8) + flags tag(8)
        bytes[144] = 9; // mxINT8_CLASS
        let file = parse_mat(&bytes).unwrap();
        assert!(matches!(
            file.select(Some("DE_time")),
            Err(SignalError::UnsupportedMatFeature(_))
        ));
        bytes[144] = MX_DOUBLE_CLASS;
        bytes[145] = FLAG_COMPLEX;
        let file = parse_mat(&bytes).unwrap();
        assert!(matches!(
            file.select(Some("DE_time")),
            Err(SignalError::UnsupportedMatFeature(_))
        ));
    }

    #[test]
    fn narrow_storage_is_widened() {
        // double class stored as miUINT8, the way MATLAB compacts integral data
        let mut body = Vec::new();
        for w in [MI_UINT32, 8, MX_DOUBLE_CLASS as u32, 0, MI_INT32, 8, 3, 1] {
            body.extend_from_slice(&(w as u32).to_le_bytes());
        }
        body.extend_from_slice(&((1u32 << 16) | MI_INT8).to_le_bytes());
        body.extend_from_slice(b"x\0\0\0");
        body.extend_from_slice(&((3u32 << 16) | MI_UINT8).to_le_bytes());
        body.extend_from_slice(&[7, 8, 9, 0]);
        let bytes = with_element(MI_MATRIX, &body);
        let file = parse_mat(&bytes).unwrap();
        assert_eq!(file.select(Some("x")).unwrap().1, &[7.0, 8.0, 9.0]);
    }

    #[test]
    fn truncated_payload_is_malformed() {
        let bytes = cwru_like();
        for cut in [130, 140, 200, bytes.len() - 3] {
            assert!(parse_mat(&bytes[..cut]).is_err() || cut >= bytes.len());
        }
    }

    #[test]
    fn dims_must_match_payload() {
        let mut bytes = encode_mat(&[MatArray { name: "abcdefgh", rows: 2, cols: 1, values: &[1.0, 2.0] }], false);
        // rows field: header(128) + tag(8) + flags(16) + dims tag(8)
        bytes[160] = 3;
        assert!(matches!(parse_mat(&bytes), Err(SignalError::MalformedData(_))));
    }

    proptest! {
        #[test]
        fn round_trip_bit_exact(
            xs in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 1..50),
            name in "[A-Za-z][A-Za-z0-9_]{0,20}",
            big in any::<bool>(),
        ) {
            let bytes = encode_mat(&[MatArray { name: &name, rows: xs.len(), cols: 1, values: &xs }], big);
            let file = parse_mat(&bytes).unwrap();
            prop_assert_eq!(file.big_endian, big);
            let (got_name, v) = file.select(Some(&name)).unwrap();
            prop_assert_eq!(got_name, name.as_str());
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(v), bits(&xs));
        }
    }
}
