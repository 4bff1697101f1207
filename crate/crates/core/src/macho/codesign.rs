//! Code-signature superblob scanning (entitlements only; nothing is verified).

const SUPERBLOB_MAGIC: u32 = 0xFADE_0CC0;
const ENTITLEMENTS_MAGIC: u32 = 0xFADE_7171;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed signature blob: {0}")]
pub struct MalformedSignatureBlob(pub String);

fn be32(b: &[u8], off: usize) -> Option<u32> {
    b.get(off..off.checked_add(4)?).map(|s| u32::from_be_bytes(s.try_into().unwrap()))
}

/// Returns the XML payload of the entitlements blob, if the superblob has one.
pub fn entitlements_from_superblob(blob: &[u8]) -> Result<Option<String>, MalformedSignatureBlob> {
    let bad = |m: &str| MalformedSignatureBlob(m.to_string());
    let magic = be32(blob, 0).ok_or_else(|| bad("superblob header truncated"))?;
    if magic != SUPERBLOB_MAGIC {
        return Err(bad(&format!("unexpected superblob magic {magic:#x}")));
    }
    let length = be32(blob, 4).ok_or_else(|| bad("superblob header truncated"))? as usize;
    let count = be32(blob, 8).ok_or_else(|| bad("superblob header truncated"))? as usize;
    if length > blob.len() {
        return Err(bad("superblob length exceeds signature data"));
    }
    let blob = &blob[..length];
    for i in 0..count {
        let idx = 12 + i * 8;
        let offset = be32(blob, idx + 4).ok_or_else(|| bad("index entry past end of superblob"))? as usize;
        let Some(sub_magic) = be32(blob, offset) else {
            return Err(bad("blob offset past end of superblob"));
        };
        if sub_magic != ENTITLEMENTS_MAGIC {
            continue;
        }
        let sub_len = be32(blob, offset + 4).ok_or_else(|| bad("entitlements header truncated"))? as usize;
        let end = offset.checked_add(sub_len).filter(|e| *e <= blob.len() && sub_len >= 8);
        let Some(end) = end else {
            return Err(bad("entitlements blob length past end of superblob"));
        };
        return Ok(Some(String::from_utf8_lossy(&blob[offset + 8..end]).into_owned()));
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn superblob(payload: &[u8], declared: Option<u32>) -> Vec<u8> {
        let mut v = Vec::new();
        let sub_len = 8 + payload.len() as u32;
        for w in [SUPERBLOB_MAGIC, 20 + sub_len, 1, 5, 20, ENTITLEMENTS_MAGIC, declared.unwrap_or(sub_len)] {
            v.extend_from_slice(&w.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn finds_entitlements() {
        let b = superblob(b"<plist/>", None);
        assert_eq!(entitlements_from_superblob(&b).unwrap().as_deref(), Some("<plist/>"));
    }

    #[test]
    fn overrunning_slot_is_an_error() {
        let b = superblob(b"<plist/>", Some(0x1000));
        assert!(entitlements_from_superblob(&b).is_err());
    }

    #[test]
    fn no_entitlements_slot() {
        let mut v = Vec::new();
        for w in [SUPERBLOB_MAGIC, 12, 0] {
            v.extend_from_slice(&w.to_be_bytes());
        }
        assert_eq!(entitlements_from_superblob(&v).unwrap(), None);
    }
}
