//! `bplist00` decoding.

use std::collections::BTreeMap;

use super::{MalformedPlist, PlistValue};

fn bad(reason: impl Into<String>) -> MalformedPlist {
    MalformedPlist(reason.into())
}

const MAX_DEPTH: usize = 512;

struct Doc<'a> {
    bytes: &'a [u8],
    offsets: Vec<usize>,
    ref_size: usize,
}

fn be(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, b| (acc << 8) | u64::from(*b))
}

impl Doc<'_> {
    fn slice(&self, at: usize, len: usize) -> Result<&[u8], MalformedPlist> {
        at.checked_add(len)
            .and_then(|end| self.bytes.get(at..end))
            .ok_or_else(|| bad(format!("object at {at} runs past the end")))
    }

    /// Object count following a marker: the low nibble, or an integer object when it is 0xF.
    fn count(&self, marker: u8, at: usize) -> Result<(usize, usize), MalformedPlist> {
        let n = marker & 0x0F;
        if n != 0x0F {
            return Ok((n as usize, at + 1));
        }
        let m = *self.slice(at + 1, 1)?.first().unwrap();
        if m >> 4 != 0x1 || m & 0x0F > 3 {
            return Err(bad(format!("bad length marker at {at}")));
        }
        let w = 1usize << (m & 0x0F);
        let len = be(self.slice(at + 2, w)?);
        Ok((usize::try_from(len).map_err(|_| bad("length overflows"))?, at + 2 + w))
    }

    fn refs(&self, at: usize, n: usize) -> Result<Vec<usize>, MalformedPlist> {
        let raw = self.slice(at, n.checked_mul(self.ref_size).ok_or_else(|| bad("reference list overflows"))?)?;
        Ok(raw.chunks(self.ref_size).map(|c| be(c) as usize).collect())
    }

    fn object(&self, index: usize, stack: &mut Vec<usize>) -> Result<PlistValue, MalformedPlist> {
        if stack.contains(&index) {
            return Err(bad(format!("object {index} contains itself")));
        }
        if stack.len() > MAX_DEPTH {
            return Err(bad("nesting too deep"));
        }
        let at = *self.offsets.get(index).ok_or_else(|| bad(format!("object reference {index} out of range")))?;
        let marker = *self.slice(at, 1)?.first().unwrap();
        let v = match marker >> 4 {
            0x0 => match marker {
                0x08 => PlistValue::Boolean(false),
                0x09 => PlistValue::Boolean(true),
                _ => return Err(bad(format!("unsupported marker {marker:#04x}"))),
            },
            0x1 => {
                let w = 1usize << (marker & 0x0F);
                let raw = self.slice(at + 1, w)?;
                PlistValue::Integer(match w {
                    1 | 2 | 4 => be(raw) as i128,
                    8 => be(raw) as i64 as i128,
                    16 => i128::from_be_bytes(raw.try_into().unwrap()),
                    _ => return Err(bad(format!("integer of {w} bytes"))),
                })
            }
            0x2 => {
                let w = 1usize << (marker & 0x0F);
                let raw = self.slice(at + 1, w)?;
                PlistValue::Real(match w {
                    4 => f64::from(f32::from_be_bytes(raw.try_into().unwrap())),
                    8 => f64::from_be_bytes(raw.try_into().unwrap()),
                    _ => return Err(bad(format!("real of {w} bytes"))),
                })
            }
            0x3 if marker == 0x33 => PlistValue::Date(f64::from_be_bytes(self.slice(at + 1, 8)?.try_into().unwrap())),
            0x4 => {
                let (n, start) = self.count(marker, at)?;
                PlistValue::Data(self.slice(start, n)?.to_vec())
            }
            0x5 => {
                let (n, start) = self.count(marker, at)?;
                let raw = self.slice(start, n)?;
                if !raw.is_ascii() {
                    return Err(bad("non-ASCII byte in ASCII string"));
                }
                PlistValue::String(String::from_utf8(raw.to_vec()).unwrap())
            }
            0x6 => {
                let (n, start) = self.count(marker, at)?;
                let raw = self.slice(start, n.checked_mul(2).ok_or_else(|| bad("string overflows"))?)?;
                let units: Vec<u16> = raw.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
                PlistValue::String(String::from_utf16(&units).map_err(|_| bad("invalid UTF-16 string"))?)
            }
            0xA => {
                let (n, start) = self.count(marker, at)?;
                stack.push(index);
                let items = self.refs(start, n)?.into_iter().map(|r| self.object(r, stack)).collect::<Result<_, _>>()?;
                stack.pop();
                PlistValue::Array(items)
            }
            0xD => {
                let (n, start) = self.count(marker, at)?;
                let keys = self.refs(start, n)?;
                let values = self.refs(start + n * self.ref_size, n)?;
                stack.push(index);
                let mut d = BTreeMap::new();
                for (k, v) in keys.into_iter().zip(values) {
                    let PlistValue::String(key) = self.object(k, stack)? else {
                        return Err(bad("dictionary key is not a string"));
                    };
                    let value = self.object(v, stack)?;
                    if d.insert(key.clone(), value).is_some() {
                        return Err(bad(format!("duplicate key {key:?}")));
                    }
                }
                stack.pop();
                PlistValue::Dictionary(d)
            }
            _ => return Err(bad(format!("unsupported marker {marker:#04x}"))),
        };
        Ok(v)
    }
}

pub(super) fn parse(bytes: &[u8]) -> Result<PlistValue, MalformedPlist> {
    if bytes.len() < 8 + 32 {
        return Err(bad("binary plist shorter than header and trailer"));
    }
    let t = &bytes[bytes.len() - 32..];
    let offset_size = t[6] as usize;
    let ref_size = t[7] as usize;
    let count = be(&t[8..16]);
    let top = be(&t[16..24]);
    let table = be(&t[24..32]);
    if !(1..=8).contains(&offset_size) || !(1..=8).contains(&ref_size) {
        return Err(bad("bad trailer: integer sizes"));
    }
    let trailer_start = (bytes.len() - 32) as u64;
    let table_len = count.checked_mul(offset_size as u64).ok_or_else(|| bad("bad trailer: object count"))?;
    if table < 8 || table.checked_add(table_len).is_none_or(|end| end > trailer_start) {
        return Err(bad("bad trailer: offset table outside the file"));
    }
    if top >= count {
        return Err(bad("bad trailer: top object out of range"));
    }
    let table = table as usize;
    let offsets = bytes[table..table + table_len as usize]
        .chunks(offset_size)
        .map(|c| {
            let o = be(c);
            if o < 8 || o >= trailer_start {
                Err(bad(format!("object offset {o} outside the object area")))
            } else {
                Ok(o as usize)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let doc = Doc { bytes: &bytes[..bytes.len() - 32], offsets, ref_size };
    doc.object(top as usize, &mut Vec::new())
}
