//! Minimal lowercase-hex codec for file formats and identifiers.

#[derive(Debug, PartialEq, Eq)]
pub struct HexError;

pub fn encode(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push(char::from_digit((b >> 4) as u32, 16).unwrap());
        s.push(char::from_digit((b & 0xf) as u32, 16).unwrap());
    }
    s
}

pub fn decode(s: &str) -> Result<Vec<u8>, HexError> {
    if !s.len().is_multiple_of(2) {
        return Err(HexError);
    }
    let digits: Vec<u8> = s
        .bytes()
        .map(|c| match c {
            b'0'..=b'9' => Ok(c - b'0'),
            b'a'..=b'f' => Ok(c - b'a' + 10),
            // uppercase is rejected: formats specify lowercase hex
            _ => Err(HexError),
        })
        .collect::<Result<_, _>>()?;
    Ok(digits.chunks(2).map(|d| d[0] << 4 | d[1]).collect())
}
