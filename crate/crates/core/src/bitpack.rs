//! Fixed-width little-endian bit packing.
//!
//! Value `j` occupies stream bits `[j * width, (j + 1) * width)`, least
//! significant bit first. Stream bit `k` is bit `k % 8` of byte `k / 8`. The
//! final byte is zero-padded.

use crate::{Error, Result};

/// Number of payload bytes for `count` values of `width` bits.
pub fn packed_len(count: usize, width: u8) -> usize {
    (count * width as usize).div_ceil(8)
}

pub fn pack(values: &[u32], width: u8) -> Vec<u8> {
    assert!((1..=32).contains(&width), "width must be in 1..=32");
    let mut out = Vec::with_capacity(packed_len(values.len(), width));
    let mut acc: u64 = 0;
    let mut filled: u32 = 0;
    let mask = if width == 32 {
        u32::MAX
    } else {
        (1u32 << width) - 1
    };
    for &v in values {
        debug_assert!(v <= mask, "value {v} exceeds {width} bits");
        acc |= ((v & mask) as u64) << filled;
        filled += width as u32;
        while filled >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out.push(acc as u8);
    }
    out
}

/// Inverse of [`pack`]. The payload length must be exactly
/// `packed_len(count, width)` and the padding bits must be zero.
pub fn unpack(payload: &[u8], width: u8, count: usize) -> Result<Vec<u32>> {
    if !(1..=32).contains(&width) {
        return Err(Error::invalid(format!("bit width {width} outside 1..=32")));
    }
    let expected = packed_len(count, width);
    if payload.len() != expected {
        return Err(Error::format(
            payload.len().min(expected),
            format!("payload is {} bytes, expected {expected}", payload.len()),
        ));
    }
    let mask: u64 = if width == 32 {
        u32::MAX as u64
    } else {
        (1u64 << width) - 1
    };
    let mut out = Vec::with_capacity(count);
    let mut acc: u64 = 0;
    let mut filled: u32 = 0;
    let mut bytes = payload.iter();
    for _ in 0..count {
        while filled < width as u32 {
            // Length was checked above.
            let b = *bytes.next().expect("payload length checked");
            acc |= (b as u64) << filled;
            filled += 8;
        }
        out.push((acc & mask) as u32);
        acc >>= width;
        filled -= width as u32;
    }
    if acc != 0 {
        return Err(Error::format(
            payload.len().saturating_sub(1),
            "non-zero padding bits",
        ));
    }
    Ok(out)
}
