//! Classical processing of speckle into stable, near-uniform binary keys and
//! a 4-digit PIN.
//!
//! Pipeline: median-threshold the intensities (exact 50/50 raw balance),
//! rank pixels by a symmetric stability score, keep the 3n most stable
//! positions, and majority-vote triples of them into key bits. The helper
//! data records the triples only; it carries positions, never bit values.

use std::fmt;

use thiserror::Error;

use crate::bits::BitVec;
use crate::puf::SpecklePattern;

pub const PIN_WINDOW_BITS: usize = 14;
pub const PIN_SPACE: u32 = 10_000;
/// Smallest key that still offers at least three PIN windows.
pub const MIN_PIN_KEY_LEN: usize = 42;

#[derive(Debug, Error, PartialEq)]
pub enum ExtractError {
    #[error("degenerate pattern: all intensities equal")]
    DegenerateInput,
    #[error("helper capacity exceeded: {needed} positions from {available} pixels")]
    Capacity { needed: usize, available: usize },
    #[error("corrupt helper data: position {position} outside pattern of {len} pixels")]
    CorruptHelper { position: u32, len: usize },
    #[error("helper data malformed: {0}")]
    HelperFormat(String),
    #[error("key too short for PIN derivation: {len} < {min}", min = MIN_PIN_KEY_LEN)]
    KeyTooShort { len: usize },
    #[error("no PIN window accepted by rejection sampling")]
    PinDerivation,
    #[error("key length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

/// Thresholded speckle: one bit per pixel plus its distance from the median.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBits {
    pub bits: BitVec,
    pub reliability: Vec<f64>,
}

/// Public error-correction data: disjoint triples of pixel positions. Key
/// bit j reproduces as the majority of the binarized pixels in triple j.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelperData {
    groups: Vec<[u32; 3]>,
}

impl HelperData {
    pub fn new(groups: Vec<[u32; 3]>) -> Result<Self, ExtractError> {
        let mut seen = std::collections::HashSet::new();
        for g in &groups {
            for &p in g {
                if !seen.insert(p) {
                    return Err(ExtractError::HelperFormat(format!(
                        "position {p} referenced twice"
                    )));
                }
            }
        }
        Ok(HelperData { groups })
    }

    pub fn groups(&self) -> &[[u32; 3]] {
        &self.groups
    }

    pub fn key_len(&self) -> usize {
        self.groups.len()
    }

    /// File form: one line per group, three decimal positions separated by
    /// spaces.
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for g in &self.groups {
            s.push_str(&format!("{} {} {}\n", g[0], g[1], g[2]));
        }
        s
    }

    pub fn from_lines(text: &str) -> Result<Self, ExtractError> {
        let mut groups = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            groups.push(parse_triple(line, ' ').map_err(|e| {
                ExtractError::HelperFormat(format!("line {}: {e}", idx + 1))
            })?);
        }
        HelperData::new(groups)
    }

    /// Single-field form used inside database rows: positions separated by
    /// spaces within a triple, triples separated by commas.
    pub fn to_field(&self) -> String {
        self.groups
            .iter()
            .map(|g| format!("{} {} {}", g[0], g[1], g[2]))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn from_field(field: &str) -> Result<Self, ExtractError> {
        let field = field.trim();
        if field.is_empty() {
            return HelperData::new(Vec::new());
        }
        let groups = field
            .split(',')
            .map(|t| parse_triple(t.trim(), ' '))
            .collect::<Result<Vec<_>, _>>()
            .map_err(ExtractError::HelperFormat)?;
        HelperData::new(groups)
    }
}

fn parse_triple(s: &str, sep: char) -> Result<[u32; 3], String> {
    let parts: Vec<&str> = s.split(sep).filter(|p| !p.is_empty()).collect();
    if parts.len() != 3 {
        return Err(format!("expected 3 positions, found {}", parts.len()));
    }
    let mut out = [0u32; 3];
    for (slot, p) in out.iter_mut().zip(&parts) {
        *slot = p
            .parse::<u32>()
            .map_err(|_| format!("bad position `{p}`"))?;
    }
    Ok(out)
}

/// Extracted binary key of a fixed, session-configured length.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Key {
    bits: BitVec,
}

impl Key {
    pub fn new(bits: BitVec) -> Self {
        Key { bits }
    }

    pub fn bits(&self) -> &BitVec {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn xor(&self, other: &Key) -> Result<Key, ExtractError> {
        let bits = self.bits.xor(&other.bits).map_err(|_| {
            ExtractError::LengthMismatch {
                left: self.len(),
                right: other.len(),
            }
        })?;
        Ok(Key { bits })
    }

    pub fn to_hex(&self) -> String {
        self.bits.to_hex()
    }

    pub fn from_hex(len: usize, s: &str) -> Result<Self, ExtractError> {
        BitVec::from_hex(len, s)
            .map(Key::new)
            .map_err(|e| ExtractError::HelperFormat(e.to_string()))
    }
}

/// Four decimal digits, 0000..=9999.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pin(u16);

impl Pin {
    pub fn new(value: u16) -> Option<Pin> {
        (value < PIN_SPACE as u16).then_some(Pin(value))
    }

    pub fn value(&self) -> u16 {
        self.0
    }

    pub fn parse(s: &str) -> Option<Pin> {
        if s.len() != 4 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        s.parse::<u16>().ok().and_then(Pin::new)
    }
}

impl fmt::Display for Pin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}", self.0)
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut buf: Vec<f64> = xs.to_vec();
    let len = buf.len();
    let mid = len / 2;
    let (left, m, _) = buf.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let upper = *m;
    if len % 2 == 1 {
        upper
    } else {
        let lower = left.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

fn binarize_with_median(speckle: &SpecklePattern) -> Result<(RawBits, f64), ExtractError> {
    let xs = speckle.intensities();
    let (min, max) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if min == max {
        return Err(ExtractError::DegenerateInput);
    }
    let med = median(xs);
    let bits = BitVec::from_fn(xs.len(), |i| xs[i] > med);
    let reliability = xs.iter().map(|&x| (x - med).abs()).collect();
    Ok((RawBits { bits, reliability }, med))
}

/// Thresholds a pattern at its median: bit i is 1 iff intensity_i exceeds
/// the median (ties fall to 0), reliability_i = |intensity_i - median|.
pub fn binarize(speckle: &SpecklePattern) -> Result<RawBits, ExtractError> {
    binarize_with_median(speckle).map(|(raw, _)| raw)
}

/// Symmetric stability score for pixel selection: distance of the
/// exponential survival value exp(-I) from 1/2. Patterns are normalized to
/// unit mean, so the anchor is a constant of the model rather than an
/// estimate; that keeps the score free of sample-wide jitter and weighs the
/// bright and dark tails equally, making selection independent of the bit
/// values.
fn stability_score(intensity: f64) -> f64 {
    ((-intensity).exp() - 0.5).abs()
}

/// Enrolls a key of `n` bits from a (noiseless) speckle: keeps the 3n most
/// stable pixel positions, forms triples in stability order, and takes each
/// triple's enrolled majority as a key bit.
pub fn enroll_key(speckle: &SpecklePattern, n: usize) -> Result<(Key, HelperData), ExtractError> {
    let needed = 3 * n;
    if needed > speckle.len() {
        return Err(ExtractError::Capacity {
            needed,
            available: speckle.len(),
        });
    }
    let (raw, _med) = binarize_with_median(speckle)?;
    let xs = speckle.intensities();
    let mut order: Vec<u32> = (0..xs.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        let sa = stability_score(xs[a as usize]);
        let sb = stability_score(xs[b as usize]);
        sb.total_cmp(&sa).then(a.cmp(&b))
    });
    let groups: Vec<[u32; 3]> = order[..needed]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let key_bits = BitVec::from_fn(n, |j| majority(&raw.bits, &groups[j]));
    let helper = HelperData::new(groups)?;
    Ok((Key::new(key_bits), helper))
}

fn majority(bits: &BitVec, group: &[u32; 3]) -> bool {
    let ones: u32 = group
        .iter()
        .map(|&p| u32::from(bits.get(p as usize)))
        .sum();
    ones >= 2
}

/// Reproduces a key from a (possibly noisy) speckle and helper data:
/// binarize, then majority-vote each helper triple.
pub fn reproduce_key(speckle: &SpecklePattern, helper: &HelperData) -> Result<Key, ExtractError> {
    let raw = binarize(speckle)?;
    let len = speckle.len();
    for g in helper.groups() {
        for &p in g {
            if p as usize >= len {
                return Err(ExtractError::CorruptHelper { position: p, len });
            }
        }
    }
    let bits = BitVec::from_fn(helper.key_len(), |j| majority(&raw.bits, &helper.groups()[j]));
    Ok(Key::new(bits))
}

/// Derives the 4-digit PIN by rejection sampling: successive disjoint
/// 14-bit windows, first value below 10000 wins. Exactly uniform over
/// 0000..=9999 for uniform keys.
pub fn derive_pin(key: &Key) -> Result<Pin, ExtractError> {
    if key.len() < MIN_PIN_KEY_LEN {
        return Err(ExtractError::KeyTooShort { len: key.len() });
    }
    let windows = key.len() / PIN_WINDOW_BITS;
    for w in 0..windows {
        let value = key.bits().window_value(w * PIN_WINDOW_BITS, PIN_WINDOW_BITS);
        if value < PIN_SPACE {
            return Ok(Pin(value as u16));
        }
    }
    Err(ExtractError::PinDerivation)
}

/// Count of differing bits between two equal-length keys.
pub fn hamming_distance(a: &Key, b: &Key) -> Result<usize, ExtractError> {
    a.bits()
        .hamming(b.bits())
        .map_err(|_| ExtractError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(xs: &[f64]) -> SpecklePattern {
        SpecklePattern::from_intensities(xs.to_vec()).unwrap()
    }

    #[test]
    fn binarize_alternating_pattern() {
        let xs: Vec<f64> = (0..16).map(|i| if i % 2 == 0 { 2.0 } else { 0.0 }).collect();
        let raw = binarize(&pattern(&xs)).unwrap();
        for i in 0..16 {
            assert_eq!(raw.bits.get(i), i % 2 == 0);
        }
        assert_eq!(raw.bits.count_ones(), 8);
    }

    #[test]
    fn binarize_is_deterministic() {
        let xs = [0.3, 1.7, 0.9, 2.2, 0.1, 1.1];
        let a = binarize(&pattern(&xs)).unwrap();
        let b = binarize(&pattern(&xs)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn binarize_rejects_constant() {
        assert_eq!(
            binarize(&pattern(&[3.0; 8])),
            Err(ExtractError::DegenerateInput)
        );
    }

    #[test]
    fn enroll_single_bit_from_three_strong_ones() {
        // three saturated pixels dominate the stability ranking
        let xs = [9.0, 9.0, 9.0, 1.0, 1.0, 1.0, 0.9, 1.1];
        let (key, helper) = enroll_key(&pattern(&xs), 1).unwrap();
        assert_eq!(key.len(), 1);
        assert!(key.bits().get(0));
        assert_eq!(helper.groups(), &[[0, 1, 2]]);
    }

    #[test]
    fn enroll_capacity_error() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(
            enroll_key(&pattern(&xs), 2),
            Err(ExtractError::Capacity {
                needed: 6,
                available: 4
            })
        );
    }

    #[test]
    fn reproduce_matches_enroll_on_same_speckle() {
        let xs: Vec<f64> = (0..64)
            .map(|i| ((i * 37 + 11) % 97) as f64 / 10.0 + 0.05)
            .collect();
        let (key, helper) = enroll_key(&pattern(&xs), 8).unwrap();
        let again = reproduce_key(&pattern(&xs), &helper).unwrap();
        assert_eq!(key, again);
    }

    #[test]
    fn reproduce_majority_votes() {
        // bits after median split of [5,5,0.1,1,1,3]: 1,1,0,0,0,1
        let xs = [5.0, 5.0, 0.1, 1.0, 1.0, 3.0];
        let helper = HelperData::new(vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        let key = reproduce_key(&pattern(&xs), &helper).unwrap();
        assert!(key.bits().get(0)); // (1,1,0) -> 1
        assert!(!key.bits().get(1)); // (0,0,1) -> 0
    }

    #[test]
    fn reproduce_rejects_out_of_range_position() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let helper = HelperData::new(vec![[0, 1, 9]]).unwrap();
        assert_eq!(
            reproduce_key(&pattern(&xs), &helper),
            Err(ExtractError::CorruptHelper { position: 9, len: 4 })
        );
    }

    #[test]
    fn pin_from_leading_zero_window() {
        let key = Key::new(BitVec::zeros(42));
        assert_eq!(derive_pin(&key).unwrap(), Pin(0));
    }

    #[test]
    fn pin_rejection_skips_oversized_window() {
        // window 0 = 16383 (rejected), window 1 = 1234
        let mut bits = BitVec::zeros(42);
        for i in 0..14 {
            bits.set(i, true);
        }
        let w1 = 1234u32;
        for i in 0..14 {
            bits.set(14 + i, w1 >> (13 - i) & 1 == 1);
        }
        let pin = derive_pin(&Key::new(bits)).unwrap();
        assert_eq!(pin.value(), 1234);
        assert_eq!(pin.to_string(), "1234");
    }

    #[test]
    fn pin_derivation_can_fail() {
        let all_ones = Key::new(BitVec::zeros(42).complement());
        assert_eq!(derive_pin(&all_ones), Err(ExtractError::PinDerivation));
        let short = Key::new(BitVec::zeros(41));
        assert_eq!(derive_pin(&short), Err(ExtractError::KeyTooShort { len: 41 }));
    }

    #[test]
    fn hamming_identities() {
        let xs: Vec<f64> = (0..48).map(|i| ((i * 53 + 7) % 101) as f64 + 0.5).collect();
        let (key, _) = enroll_key(&pattern(&xs), 16).unwrap();
        assert_eq!(hamming_distance(&key, &key).unwrap(), 0);
        let complement = Key::new(key.bits().complement());
        assert_eq!(hamming_distance(&key, &complement).unwrap(), 16);
        let other = Key::new(BitVec::zeros(8));
        assert!(matches!(
            hamming_distance(&key, &other),
            Err(ExtractError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn helper_lines_roundtrip() {
        let helper = HelperData::new(vec![[4, 9, 2], [7, 0, 5]]).unwrap();
        let text = helper.to_lines();
        assert_eq!(text, "4 9 2\n7 0 5\n");
        assert_eq!(HelperData::from_lines(&text).unwrap(), helper);
        assert_eq!(HelperData::from_field(&helper.to_field()).unwrap(), helper);
    }

    #[test]
    fn helper_rejects_duplicates_and_garbage() {
        assert!(HelperData::new(vec![[1, 2, 1]]).is_err());
        assert!(HelperData::from_lines("1 2\n").is_err());
        assert!(HelperData::from_lines("1 2 x\n").is_err());
    }

    #[test]
    fn pin_parse_and_bounds() {
        assert_eq!(Pin::parse("0042").unwrap().value(), 42);
        assert!(Pin::parse("123").is_none());
        assert!(Pin::parse("12345").is_none());
        assert!(Pin::parse("12a4").is_none());
        assert!(Pin::new(10_000).is_none());
        assert_eq!(Pin::new(9999).unwrap().to_string(), "9999");
    }
}
