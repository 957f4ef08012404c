//! Binary treatment patterns.
//!
//! A pattern `a ∈ {0,1}^m` is stored as a `Vec<u8>`; its integer code puts
//! treatment `j` (0-based) in bit `j`, so `code = Σ_j a_j 2^j`.

use crate::error::{Error, Result};

/// Largest `m` for which the crate enumerates all `2^m` patterns.
pub const MAX_ENUMERATED_TREATMENTS: usize = 20;

pub fn encode(pattern: &[u8]) -> usize {
    pattern
        .iter()
        .enumerate()
        .fold(0usize, |acc, (j, &a)| acc | ((a as usize & 1) << j))
}

pub fn decode(code: usize, m: usize) -> Vec<u8> {
    (0..m).map(|j| ((code >> j) & 1) as u8).collect()
}

/// All `2^m` patterns in code order.
pub fn enumerate(m: usize) -> Result<Vec<Vec<u8>>> {
    guard(m)?;
    Ok((0..1usize << m).map(|c| decode(c, m)).collect())
}

pub fn guard(m: usize) -> Result<()> {
    if m > MAX_ENUMERATED_TREATMENTS {
        return Err(Error::config(
            "m",
            format!("{m} treatments exceeds the enumeration limit of {MAX_ENUMERATED_TREATMENTS}"),
        ));
    }
    Ok(())
}

/// Parse a pattern literal such as `"101"` (first character is A1).
pub fn parse(text: &str) -> Result<Vec<u8>> {
    text.trim()
        .chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(Error::config(
                "pattern",
                format!("invalid character {other:?} in pattern {text:?}"),
            )),
        })
        .collect()
}

pub fn format(pattern: &[u8]) -> String {
    pattern.iter().map(|&a| if a == 1 { '1' } else { '0' }).collect()
}

pub fn check_len(pattern: &[u8], m: usize) -> Result<()> {
    if pattern.len() != m {
        return Err(Error::config(
            "pattern",
            format!("pattern has length {}, expected {m}", pattern.len()),
        ));
    }
    if pattern.iter().any(|&a| a > 1) {
        return Err(Error::config("pattern", "pattern entries must be 0 or 1"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_roundtrip() {
        for m in 0..6 {
            for c in 0..1usize << m {
                assert_eq!(encode(&decode(c, m)), c);
            }
        }
        assert_eq!(parse("101").unwrap(), vec![1, 0, 1]);
        assert_eq!(format(&[0, 1, 1]), "011");
        assert!(parse("12").is_err());
    }
}
