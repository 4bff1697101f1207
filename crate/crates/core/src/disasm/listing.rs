//! Text disassembly listings: `ea<TAB>hexbytes<TAB>asm` per instruction,
//! `#` comments, first line `#lios-disasm v1`.
//!
//! `hexbytes` are the four instruction bytes in memory order. `ea` is hex,
//! with or without a `0x` prefix. The `asm` column is informational; the
//! bytes are decoded again on ingestion.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::cfg::{DisasmError, FunctionBody};

pub const LISTING_HEADER: &str = "#lios-disasm v1";

fn bad(line: usize, reason: impl Into<String>) -> DisasmError {
    DisasmError::BadListing { line, reason: reason.into() }
}

/// Parses a listing into instruction words keyed by address.
pub fn parse_listing(text: &str) -> Result<BTreeMap<u64, [u8; 4]>, DisasmError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == LISTING_HEADER => {}
        _ => return Err(bad(1, format!("missing `{LISTING_HEADER}` header"))),
    }
    let mut out = BTreeMap::new();
    for (i, raw) in lines {
        let n = i + 1;
        let line = raw.trim_end();
        if line.trim_start().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut cols = line.splitn(3, '\t');
        let ea = cols.next().unwrap_or_default().trim();
        let hex = cols.next().ok_or_else(|| bad(n, "expected ea<TAB>hexbytes<TAB>asm"))?.trim();
        let ea = u64::from_str_radix(ea.trim_start_matches("0x"), 16).map_err(|e| bad(n, format!("address: {e}")))?;
        if ea % 4 != 0 {
            return Err(bad(n, format!("misaligned address {ea:#x}")));
        }
        if hex.len() != 8 {
            return Err(bad(n, format!("expected 8 hex digits, got {hex:?}")));
        }
        let mut bytes = [0u8; 4];
        for (k, b) in bytes.iter_mut().enumerate() {
            *b = u8::from_str_radix(&hex[2 * k..2 * k + 2], 16).map_err(|e| bad(n, format!("bytes: {e}")))?;
        }
        if out.insert(ea, bytes).is_some() {
            return Err(bad(n, format!("duplicate address {ea:#x}")));
        }
    }
    Ok(out)
}

/// Writes the instructions of `bodies` as a listing, one comment line per function.
pub fn write_listing<'a>(bodies: impl IntoIterator<Item = &'a FunctionBody>) -> String {
    let mut out = String::from(LISTING_HEADER);
    out.push('\n');
    for body in bodies {
        let _ = writeln!(out, "# {} {:#x}", body.name, body.entry_ea);
        for i in body.instructions() {
            let hex: String = i.bytes.iter().map(|b| format!("{b:02x}")).collect();
            let _ = writeln!(out, "{:#x}\t{hex}\t{}", i.ea, i.asm);
        }
    }
    out
}
