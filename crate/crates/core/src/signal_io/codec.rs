use super::SignalError;

/// One float per line. A first line starting with a non-numeric token is
/// treated as a header. Blank lines are ignored.
pub fn decode_csv(bytes: &[u8]) -> Result<Vec<f64>, SignalError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| SignalError::MalformedData(format!("csv is not UTF-8: {e}")))?;
    let mut out = Vec::new();
    let mut first = true;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if std::mem::take(&mut first) && looks_like_header(line) {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| {
            SignalError::MalformedData(format!("line {}: not a number: {line:?}", lineno + 1))
        })?;
        if !v.is_finite() {
            return Err(SignalError::MalformedData(format!(
                "line {}: non-finite sample",
                lineno + 1
            )));
        }
        out.push(v);
    }
    Ok(out)
}

fn looks_like_header(line: &str) -> bool {
    !matches!(line.chars().next(), Some(c) if c.is_ascii_digit() || matches!(c, '+' | '-' | '.'))
}

pub fn encode_csv(samples: &[f64]) -> String {
    let mut s = String::with_capacity(samples.len() * 20);
    for v in samples {
        // Display prints the shortest representation that parses back exactly.
        s.push_str(&v.to_string());
        s.push('\n');
    }
    s
}

pub fn decode_raw_f64le(bytes: &[u8]) -> Result<Vec<f64>, SignalError> {
    if bytes.len() % 8 != 0 {
        return Err(SignalError::MalformedData(format!(
            "raw f64 payload of {} bytes is not a multiple of 8",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(8)
        .enumerate()
        .map(|(i, c)| {
            let v = f64::from_le_bytes(c.try_into().expect("chunk of 8"));
            if v.is_finite() {
                Ok(v)
            } else {
                Err(SignalError::MalformedData(format!("non-finite sample at index {i}")))
            }
        })
        .collect()
}

pub fn encode_raw_f64le(samples: &[f64]) -> Vec<u8> {
    samples.iter().flat_map(|v| v.to_le_bytes()).collect()
}
