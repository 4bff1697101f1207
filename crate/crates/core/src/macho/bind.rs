//! dyld bind opcode streams (`LC_DYLD_INFO[_ONLY]`).

use super::uleb::{decode_sleb128, decode_uleb128};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bind {
    /// Address of the pointer slot that receives the symbol.
    pub address: u64,
    pub symbol: String,
    pub ordinal: i64,
    pub addend: i64,
    pub lazy: bool,
}

/// Interprets a bind opcode stream. `segments` holds the vm address of each
/// segment in load-command order. Stops quietly at the first malformed opcode
/// and reports it in the returned warning.
pub fn parse_binds(stream: &[u8], segments: &[u64], lazy: bool) -> (Vec<Bind>, Option<String>) {
    let mut out = Vec::new();
    let mut pos = 0usize;
    let mut symbol = String::new();
    let mut ordinal = 0i64;
    let mut addend = 0i64;
    let mut addr: Option<u64> = None;
    let uleb = |pos: &mut usize| -> Result<u64, String> {
        let (v, next) = decode_uleb128(stream, *pos).map_err(|e| e.to_string())?;
        *pos = next;
        Ok(v)
    };
    let result: Result<(), String> = (|| {
        while pos < stream.len() {
            let byte = stream[pos];
            pos += 1;
            let imm = byte & 0x0F;
            let mut bind = |addr: &mut Option<u64>, step: u64| -> Result<(), String> {
                let a = addr.ok_or("bind before segment was set")?;
                out.push(Bind { address: a, symbol: symbol.clone(), ordinal, addend, lazy });
                *addr = Some(a.wrapping_add(step));
                Ok(())
            };
            match byte & 0xF0 {
                0x00 => {
                    if !lazy {
                        return Ok(());
                    }
                }
                0x10 => ordinal = i64::from(imm),
                0x20 => ordinal = uleb(&mut pos)? as i64,
                0x30 => ordinal = if imm == 0 { 0 } else { i64::from(imm | 0xF0) as i8 as i64 },
                0x40 => {
                    let end = stream[pos..].iter().position(|b| *b == 0).ok_or("unterminated symbol name")?;
                    symbol = String::from_utf8_lossy(&stream[pos..pos + end]).into_owned();
                    pos += end + 1;
                }
                0x50 => {}
                0x60 => {
                    let (v, next) = decode_sleb128(stream, pos).map_err(|e| e.to_string())?;
                    addend = v;
                    pos = next;
                }
                0x70 => {
                    let base = *segments.get(imm as usize).ok_or("segment index out of range")?;
                    addr = Some(base.wrapping_add(uleb(&mut pos)?));
                }
                0x80 => {
                    let d = uleb(&mut pos)?;
                    addr = addr.map(|a| a.wrapping_add(d));
                }
                0x90 => bind(&mut addr, 8)?,
                0xA0 => {
                    let d = uleb(&mut pos)?;
                    bind(&mut addr, d.wrapping_add(8))?;
                }
                0xB0 => bind(&mut addr, u64::from(imm) * 8 + 8)?,
                0xC0 => {
                    let count = uleb(&mut pos)?;
                    let skip = uleb(&mut pos)?;
                    if count > 1 << 20 {
                        return Err("implausible bind repeat count".into());
                    }
                    for _ in 0..count {
                        bind(&mut addr, skip.wrapping_add(8))?;
                    }
                }
                op => return Err(format!("unsupported bind opcode {op:#x}")),
            }
        }
        Ok(())
    })();
    (out, result.err())
}
