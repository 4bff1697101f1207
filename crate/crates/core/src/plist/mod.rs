//! Property lists in XML and `bplist00` form.

mod binary;
mod xml;

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde_json::{json, Value as Json};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed property list: {0}")]
pub struct MalformedPlist(pub String);

#[derive(Debug, Clone, PartialEq)]
pub enum PlistValue {
    Dictionary(BTreeMap<String, PlistValue>),
    Array(Vec<PlistValue>),
    String(String),
    Integer(i128),
    Real(f64),
    Boolean(bool),
    /// Seconds since 2001-01-01T00:00:00Z.
    Date(f64),
    Data(Vec<u8>),
}

/// Parses an XML or binary property list, chosen by its leading bytes.
pub fn parse_plist(bytes: &[u8]) -> Result<PlistValue, MalformedPlist> {
    if bytes.starts_with(b"bplist00") {
        binary::parse(bytes)
    } else {
        let text = std::str::from_utf8(bytes).map_err(|e| MalformedPlist(format!("not UTF-8: {e}")))?;
        xml::parse(text)
    }
}

/// Seconds between the Unix epoch and the property-list epoch.
const PLIST_EPOCH: i64 = 978_307_200;

fn date_text(secs: f64) -> String {
    let unix = PLIST_EPOCH as f64 + secs;
    match time::OffsetDateTime::from_unix_timestamp(unix.floor() as i64) {
        Ok(t) => t.format(&time::format_description::well_known::Rfc3339).unwrap_or_else(|_| secs.to_string()),
        Err(_) => secs.to_string(),
    }
}

fn parse_date(text: &str) -> Result<f64, MalformedPlist> {
    let t = time::OffsetDateTime::parse(text.trim(), &time::format_description::well_known::Rfc3339)
        .map_err(|e| MalformedPlist(format!("bad date {text:?}: {e}")))?;
    Ok((t.unix_timestamp() - PLIST_EPOCH) as f64)
}

impl PlistValue {
    pub fn get(&self, key: &str) -> Option<&PlistValue> {
        match self {
            PlistValue::Dictionary(d) => d.get(key),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            PlistValue::String(s) => Some(s),
            _ => None,
        }
    }

    /// JSON rendering: dates as RFC 3339 text, data as base64 text,
    /// non-finite reals as null. Object keys come out sorted.
    pub fn to_json(&self) -> Json {
        match self {
            PlistValue::Dictionary(d) => Json::Object(d.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()),
            PlistValue::Array(a) => Json::Array(a.iter().map(PlistValue::to_json).collect()),
            PlistValue::String(s) => json!(s),
            PlistValue::Integer(i) => match (i64::try_from(*i), u64::try_from(*i)) {
                (Ok(v), _) => json!(v),
                (_, Ok(v)) => json!(v),
                _ => json!(i.to_string()),
            },
            PlistValue::Real(r) => serde_json::Number::from_f64(*r).map(Json::Number).unwrap_or(Json::Null),
            PlistValue::Boolean(b) => json!(b),
            PlistValue::Date(d) => json!(date_text(*d)),
            PlistValue::Data(b) => json!(STANDARD.encode(b)),
        }
    }

    pub fn canonical_json(&self) -> String {
        self.to_json().to_string()
    }
}
