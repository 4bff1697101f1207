//! Unsigned LEB128.

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum UlebError {
    #[error("ULEB128 at offset {0} has more than 10 bytes")]
    Overlong(usize),
    #[error("ULEB128 at offset {0} runs past the end of input")]
    Truncated(usize),
}

/// Decodes one value starting at `offset`, returning it with the offset just past it.
///
/// Bits beyond 64 in the tenth byte are discarded.
pub fn decode_uleb128(bytes: &[u8], offset: usize) -> Result<(u64, usize), UlebError> {
    let mut value = 0u64;
    let mut shift = 0u32;
    let mut pos = offset;
    loop {
        if pos - offset == 10 {
            return Err(UlebError::Overlong(offset));
        }
        let byte = *bytes.get(pos).ok_or(UlebError::Truncated(offset))?;
        pos += 1;
        if shift < 64 {
            value |= u64::from(byte & 0x7F) << shift;
        }
        if byte & 0x80 == 0 {
            return Ok((value, pos));
        }
        shift += 7;
    }
}

/// Signed LEB128, used by a few bind opcodes.
pub fn decode_sleb128(bytes: &[u8], offset: usize) -> Result<(i64, usize), UlebError> {
    let mut value = 0i64;
    let mut shift = 0u32;
    let mut pos = offset;
    loop {
        if pos - offset == 10 {
            return Err(UlebError::Overlong(offset));
        }
        let byte = *bytes.get(pos).ok_or(UlebError::Truncated(offset))?;
        pos += 1;
        if shift < 64 {
            value |= i64::from(byte & 0x7F) << shift;
        }
        shift += 7;
        if byte & 0x80 == 0 {
            if shift < 64 && byte & 0x40 != 0 {
                value |= -1i64 << shift;
            }
            return Ok((value, pos));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectors() {
        assert_eq!(decode_uleb128(&[0x00], 0), Ok((0, 1)));
        assert_eq!(decode_uleb128(&[0x7F], 0), Ok((127, 1)));
        assert_eq!(decode_uleb128(&[0xE5, 0x8E, 0x26], 0), Ok((624_485, 3)));
        assert_eq!(0x65 + (0x0E << 7) + (0x26 << 14), 624_485);
    }

    #[test]
    fn offsets_and_errors() {
        assert_eq!(decode_uleb128(&[0xFF, 0x80, 0x01, 0x05], 1), Ok((128, 3)));
        assert_eq!(decode_uleb128(&[0x80, 0x80], 0), Err(UlebError::Truncated(0)));
        assert_eq!(decode_uleb128(&[], 0), Err(UlebError::Truncated(0)));
        assert_eq!(decode_uleb128(&[0x80; 11], 0), Err(UlebError::Overlong(0)));
        let max = [0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0x01];
        assert_eq!(decode_uleb128(&max, 0), Ok((u64::MAX, 10)));
    }

    #[test]
    fn signed() {
        assert_eq!(decode_sleb128(&[0x7F], 0), Ok((-1, 1)));
        assert_eq!(decode_sleb128(&[0x80, 0x7F], 0), Ok((-128, 2)));
        assert_eq!(decode_sleb128(&[0x3F], 0), Ok((63, 1)));
    }
}
