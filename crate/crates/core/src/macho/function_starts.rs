//! `LC_FUNCTION_STARTS` payload decoding.

use super::uleb::{decode_uleb128, UlebError};

/// Decodes the delta-encoded function start list.
///
/// The first value is an offset from `image_base`, each later one a delta
/// from the previous address. A zero value (or the end of the payload)
/// terminates the list, so the result is strictly increasing.
pub fn decode_function_starts(payload: &[u8], image_base: u64) -> Result<Vec<u64>, UlebError> {
    let mut out = Vec::new();
    let mut addr = image_base;
    let mut pos = 0;
    while pos < payload.len() {
        let (delta, next) = decode_uleb128(payload, pos)?;
        if delta == 0 {
            break;
        }
        // Overflowing deltas cannot describe a real address; stop there.
        match addr.checked_add(delta) {
            Some(a) => addr = a,
            None => break,
        }
        out.push(addr);
        pos = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: u64 = 0x1_0000_0000;

    #[test]
    fn vectors() {
        assert_eq!(decode_function_starts(&[0x00], BASE).unwrap(), Vec::<u64>::new());
        assert_eq!(
            decode_function_starts(&[0x10, 0x20, 0x00], BASE).unwrap(),
            vec![0x1_0000_0010, 0x1_0000_0030]
        );
        assert_eq!(
            decode_function_starts(&[0x80, 0x01, 0x04, 0x00], BASE).unwrap(),
            vec![0x1_0000_0080, 0x1_0000_0084]
        );
    }

    #[test]
    fn unterminated_and_truncated() {
        assert_eq!(decode_function_starts(&[0x08], BASE).unwrap(), vec![BASE + 8]);
        assert!(decode_function_starts(&[0x08, 0x80], BASE).is_err());
        assert_eq!(decode_function_starts(&[], BASE).unwrap(), Vec::<u64>::new());
    }
}
