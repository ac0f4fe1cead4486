//! Document values flowing through query helpers and node pipelines.
//!
//! Numbers keep their exact decimal literal as parsed, so a price like
//! `3940.38305` survives extraction bit-for-bit until it is scaled to a
//! fixed-point integer at the very end. Two canonical forms exist: a byte
//! encoding used for digests (length-prefixed and tagged, hence injective),
//! and a JSON rendering used for human-readable result files.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::QueryError;

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Document {
    Null,
    Bool(bool),
    /// Exact decimal literal, e.g. `"42"`, `"-0.5"`, `"1e3"`.
    Num(String),
    Str(String),
    Bytes(Vec<u8>),
    Array(Vec<Document>),
    Object(BTreeMap<String, Document>),
}

impl Document {
    /// Parses a JSON text. Numbers are captured as their source literal.
    pub fn from_json_str(text: &str) -> Result<Document, QueryError> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| QueryError::ParseFailure(format!("json: {e}")))?;
        Ok(Document::from_json_value(&value))
    }

    fn from_json_value(value: &serde_json::Value) -> Document {
        match value {
            serde_json::Value::Null => Document::Null,
            serde_json::Value::Bool(b) => Document::Bool(*b),
            serde_json::Value::Number(n) => Document::Num(n.to_string()),
            serde_json::Value::String(s) => Document::Str(s.clone()),
            serde_json::Value::Array(items) => {
                Document::Array(items.iter().map(Document::from_json_value).collect())
            }
            serde_json::Value::Object(map) => Document::Object(
                map.iter()
                    .map(|(k, v)| (k.clone(), Document::from_json_value(v)))
                    .collect(),
            ),
        }
    }

    /// Canonical JSON rendering: sorted keys, no whitespace, numbers as
    /// their stored literal. Byte strings render as `{"$bytes":"<hex>"}`.
    pub fn canonical_json(&self) -> String {
        let mut out = String::new();
        self.render(&mut out);
        out
    }

    fn render(&self, out: &mut String) {
        match self {
            Document::Null => out.push_str("null"),
            Document::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Document::Num(literal) => out.push_str(literal),
            Document::Str(s) => {
                out.push_str(&serde_json::to_string(s).expect("string serializes"))
            }
            Document::Bytes(bytes) => {
                out.push_str("{\"$bytes\":\"");
                out.push_str(&hex::encode(bytes));
                out.push_str("\"}");
            }
            Document::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    item.render(out);
                }
                out.push(']');
            }
            Document::Object(map) => {
                out.push('{');
                for (i, (key, value)) in map.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(key).expect("key serializes"));
                    out.push(':');
                    value.render(out);
                }
                out.push('}');
            }
        }
    }

    /// Injective byte encoding: one tag byte per shape, big-endian 8-byte
    /// payload length, payload; container payloads are the concatenation of
    /// their children's encodings (object keys length-prefixed).
    pub fn canonical_bytes(&self) -> Vec<u8> {
        fn framed(tag: u8, payload: &[u8], out: &mut Vec<u8>) {
            out.push(tag);
            out.extend_from_slice(&(payload.len() as u64).to_be_bytes());
            out.extend_from_slice(payload);
        }
        let mut out = Vec::new();
        match self {
            Document::Null => framed(0x00, &[], &mut out),
            Document::Bool(b) => framed(0x01, &[u8::from(*b)], &mut out),
            Document::Num(literal) => framed(0x02, literal.as_bytes(), &mut out),
            Document::Str(s) => framed(0x03, s.as_bytes(), &mut out),
            Document::Bytes(bytes) => framed(0x04, bytes, &mut out),
            Document::Array(items) => {
                let mut payload = Vec::new();
                for item in items {
                    payload.extend_from_slice(&item.canonical_bytes());
                }
                framed(0x05, &payload, &mut out);
            }
            Document::Object(map) => {
                let mut payload = Vec::new();
                for (key, value) in map {
                    payload.extend_from_slice(&(key.len() as u64).to_be_bytes());
                    payload.extend_from_slice(key.as_bytes());
                    payload.extend_from_slice(&value.canonical_bytes());
                }
                framed(0x06, &payload, &mut out);
            }
        }
        out
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_bytes()).into()
    }

    /// The raw text of a string-shaped document, or the canonical rendering
    /// otherwise. Used when a document feeds a textual slot (nested query
    /// parameters, concatenation).
    pub fn as_text(&self) -> String {
        match self {
            Document::Str(s) => s.clone(),
            Document::Num(literal) => literal.clone(),
            other => other.canonical_json(),
        }
    }

    /// Byte view for slicing: UTF-8 of strings, raw bytes of byte strings.
    pub fn as_bytes(&self) -> Result<Vec<u8>, QueryError> {
        match self {
            Document::Str(s) => Ok(s.as_bytes().to_vec()),
            Document::Bytes(b) => Ok(b.clone()),
            other => Err(QueryError::ParseFailure(format!(
                "expected string or bytes, got {}",
                other.shape_name()
            ))),
        }
    }

    pub fn shape_name(&self) -> &'static str {
        match self {
            Document::Null => "null",
            Document::Bool(_) => "boolean",
            Document::Num(_) => "number",
            Document::Str(_) => "string",
            Document::Bytes(_) => "bytes",
            Document::Array(_) => "array",
            Document::Object(_) => "object",
        }
    }
}

/// Scales an exact decimal literal to an integer count of `10^-scale`
/// units, rounding half away from zero when digits are dropped.
/// `parse_scaled("3940.39", 2) == Ok(394039)`.
pub fn parse_scaled(literal: &str, scale: u32) -> Result<i128, QueryError> {
    let bad = || QueryError::ParseFailure(format!("not a decimal number: {literal:?}"));
    let s = literal.trim();
    let (negative, s) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (mantissa, exp_part) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], Some(&s[i + 1..])),
        None => (s, None),
    };
    let exp: i64 = match exp_part {
        Some(e) if !e.is_empty() => e.parse().map_err(|_| bad())?,
        Some(_) => return Err(bad()),
        None => 0,
    };
    let (int_part, frac_part) = match mantissa.find('.') {
        Some(i) => (&mantissa[..i], &mantissa[i + 1..]),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }

    let digits: String = format!("{int_part}{frac_part}");
    // Position of the units digit after applying exponent and scale.
    let shift = exp - frac_part.len() as i64 + scale as i64;
    let overflow = || QueryError::NumericOverflow(literal.to_string());

    let magnitude: i128 = if shift >= 0 {
        let base: i128 = digits.parse().map_err(|_| overflow())?;
        let factor = 10i128.checked_pow(u32::try_from(shift).map_err(|_| overflow())?)
            .ok_or_else(overflow)?;
        base.checked_mul(factor).ok_or_else(overflow)?
    } else {
        let drop = (-shift) as usize;
        let padded = if drop >= digits.len() {
            format!("{}{}", "0".repeat(drop - digits.len() + 1), digits)
        } else {
            digits.clone()
        };
        let keep_len = padded.len() - drop;
        let kept: i128 = padded[..keep_len].parse().map_err(|_| overflow())?;
        let round_up = padded.as_bytes()[keep_len] >= b'5';
        if round_up {
            kept.checked_add(1).ok_or_else(overflow)?
        } else {
            kept
        }
    };
    Ok(if negative { -magnitude } else { magnitude })
}
