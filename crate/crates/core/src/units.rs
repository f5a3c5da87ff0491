//! Byte and bandwidth quantities with binary-suffix parsing.
//!
//! Config files may write byte counts either as plain integers or as strings
//! such as `"16 GiB"`, `"0.125GiB"` or `"512 MiB"`. Bandwidths accept the same
//! forms with an optional `/s` suffix.

use serde::{de, Deserialize, Deserializer, Serializer};
use std::fmt;

pub const KIB: u64 = 1 << 10;
pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;
pub const TIB: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid byte quantity {input:?}: {reason}")]
pub struct ParseSizeError {
    input: String,
    reason: &'static str,
}

fn suffix_multiplier(suffix: &str) -> Option<u64> {
    match suffix {
        "" | "B" => Some(1),
        "KiB" => Some(KIB),
        "MiB" => Some(MIB),
        "GiB" => Some(GIB),
        "TiB" => Some(TIB),
        _ => None,
    }
}

fn split_number(s: &str) -> (&str, &str) {
    let end = s
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || c == '+' || c == '-'))
        .unwrap_or(s.len());
    (s[..end].trim(), s[end..].trim())
}

/// Parses `"<number> [B|KiB|MiB|GiB|TiB]"` into a byte count as a float.
fn parse_scaled(input: &str) -> Result<f64, ParseSizeError> {
    let err = |reason| ParseSizeError {
        input: input.to_string(),
        reason,
    };
    let (num, suffix) = split_number(input.trim());
    let value: f64 = num.parse().map_err(|_| err("not a number"))?;
    let mult = suffix_multiplier(suffix).ok_or_else(|| err("unknown suffix"))?;
    if !value.is_finite() || value < 0.0 {
        return Err(err("must be a finite non-negative value"));
    }
    Ok(value * mult as f64)
}

pub fn parse_bytes(input: &str) -> Result<u64, ParseSizeError> {
    let v = parse_scaled(input)?;
    if v > u64::MAX as f64 {
        return Err(ParseSizeError {
            input: input.to_string(),
            reason: "out of range",
        });
    }
    Ok(v.round() as u64)
}

pub fn parse_bandwidth(input: &str) -> Result<f64, ParseSizeError> {
    let trimmed = input.trim();
    let body = trimmed.strip_suffix("/s").unwrap_or(trimmed);
    parse_scaled(body)
}

/// Renders a byte count with the largest binary suffix that divides it exactly.
pub fn format_bytes(bytes: u64) -> String {
    for (mult, name) in [(TIB, "TiB"), (GIB, "GiB"), (MIB, "MiB"), (KIB, "KiB")] {
        if bytes >= mult && bytes.is_multiple_of(mult) {
            return format!("{} {}", bytes / mult, name);
        }
    }
    bytes.to_string()
}

/// Human-friendly display of a byte count in GiB (lossy, for reports).
pub struct Gib(pub f64);

impl fmt::Display for Gib {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} GiB", self.0 / GIB as f64)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NumberOrString {
    Int(u64),
    Float(f64),
    Str(String),
}

/// Serde adapter for `u64` byte fields.
pub mod bytes {
    use super::*;

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_bytes(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match NumberOrString::deserialize(d)? {
            NumberOrString::Int(v) => Ok(v),
            NumberOrString::Float(v) if v >= 0.0 && v.fract() == 0.0 => Ok(v as u64),
            NumberOrString::Float(v) => Err(de::Error::custom(format!(
                "byte count {v} must be a non-negative integer"
            ))),
            NumberOrString::Str(s) => parse_bytes(&s).map_err(de::Error::custom),
        }
    }
}

/// Serde adapter for `f64` bytes-per-second fields.
pub mod bandwidth {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.fract() == 0.0 && *v >= 0.0 && *v < u64::MAX as f64 {
            s.serialize_str(&format!("{}/s", format_bytes(*v as u64)))
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match NumberOrString::deserialize(d)? {
            NumberOrString::Int(v) => Ok(v as f64),
            NumberOrString::Float(v) => Ok(v),
            NumberOrString::Str(s) => parse_bandwidth(&s).map_err(de::Error::custom),
        }
    }
}
