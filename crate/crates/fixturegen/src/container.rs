//! Fat containers, Info.plist text and .ipa packaging.

use std::io::{Cursor, Write};

use serde_json::Value;
use zip::write::SimpleFileOptions;

use crate::FixtureError;

pub const CPU_TYPE_ARMV7: u32 = 12;

/// One slice of a fat file.
pub struct Slice<'a> {
    pub cputype: u32,
    pub cpusubtype: u32,
    pub bytes: &'a [u8],
    /// log2 alignment of the slice offset.
    pub align: u32,
}

/// Writes a big-endian fat container. `wide` selects the 64-bit header variant.
pub fn fat(slices: &[Slice], wide: bool) -> Vec<u8> {
    let entry = if wide { 32 } else { 20 };
    let mut offsets = Vec::new();
    let mut cursor = 8 + entry * slices.len() as u64;
    for s in slices {
        let a = 1u64 << s.align;
        cursor = cursor.div_ceil(a) * a;
        offsets.push(cursor);
        cursor += s.bytes.len() as u64;
    }
    let mut out = Vec::new();
    out.extend_from_slice(&(if wide { 0xCAFE_BABFu32 } else { 0xCAFE_BABE }).to_be_bytes());
    out.extend_from_slice(&(slices.len() as u32).to_be_bytes());
    for (s, off) in slices.iter().zip(&offsets) {
        out.extend_from_slice(&s.cputype.to_be_bytes());
        out.extend_from_slice(&s.cpusubtype.to_be_bytes());
        if wide {
            out.extend_from_slice(&off.to_be_bytes());
            out.extend_from_slice(&(s.bytes.len() as u64).to_be_bytes());
            out.extend_from_slice(&s.align.to_be_bytes());
            out.extend_from_slice(&0u32.to_be_bytes());
        } else {
            out.extend_from_slice(&(*off as u32).to_be_bytes());
            out.extend_from_slice(&(s.bytes.len() as u32).to_be_bytes());
            out.extend_from_slice(&s.align.to_be_bytes());
        }
    }
    for (s, off) in slices.iter().zip(&offsets) {
        out.resize(*off as usize, 0);
        out.extend_from_slice(s.bytes);
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn plist_value(v: &Value, indent: usize, out: &mut String) {
    let pad = "\t".repeat(indent);
    match v {
        Value::Null => out.push_str(&format!("{pad}<string></string>\n")),
        Value::Bool(b) => out.push_str(&format!("{pad}<{}/>\n", if *b { "true" } else { "false" })),
        Value::Number(n) if n.is_f64() => out.push_str(&format!("{pad}<real>{n}</real>\n")),
        Value::Number(n) => out.push_str(&format!("{pad}<integer>{n}</integer>\n")),
        Value::String(s) => out.push_str(&format!("{pad}<string>{}</string>\n", escape(s))),
        Value::Array(a) => {
            out.push_str(&format!("{pad}<array>\n"));
            for x in a {
                plist_value(x, indent + 1, out);
            }
            out.push_str(&format!("{pad}</array>\n"));
        }
        Value::Object(o) => {
            out.push_str(&format!("{pad}<dict>\n"));
            for (k, x) in o {
                out.push_str(&format!("{pad}\t<key>{}</key>\n", escape(k)));
                plist_value(x, indent + 1, out);
            }
            out.push_str(&format!("{pad}</dict>\n"));
        }
    }
}

/// Renders a JSON value as an XML property list.
pub fn plist_xml(v: &Value) -> String {
    let mut out = String::from(concat!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n",
        "<!DOCTYPE plist PUBLIC \"-//Apple//DTD PLIST 1.0//EN\" \"http://www.apple.com/DTDs/PropertyList-1.0.dtd\">\n",
        "<plist version=\"1.0\">\n"
    ));
    plist_value(v, 0, &mut out);
    out.push_str("</plist>\n");
    out
}

/// Packs an executable and its Info.plist into `Payload/<app>.app/`.
pub fn ipa(app: &str, executable: &str, binary: &[u8], info_plist: &[u8]) -> Result<Vec<u8>, FixtureError> {
    let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let opts = SimpleFileOptions::default().compression_method(zip::CompressionMethod::Deflated);
    let dir = format!("Payload/{app}.app/");
    zip.add_directory(&dir, opts)?;
    zip.start_file(format!("{dir}Info.plist"), opts)?;
    zip.write_all(info_plist)?;
    zip.start_file(format!("{dir}{executable}"), opts)?;
    zip.write_all(binary)?;
    Ok(zip.finish()?.into_inner())
}
