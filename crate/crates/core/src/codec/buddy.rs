//! Power-of-two ("buddy") encoding: a complemented 6-bit exponent in bits
//! 63..58.

use super::{strip, Bounds, CodecError, TaggedPointer, ADDR_BITS, ADDR_LIMIT, MIN_EXPONENT, PADDING};

/// Bit position of the exponent field.
pub const TAG_SHIFT: u32 = 58;
const FIELD: u64 = 0x3F;
/// Largest exponent `make_tagged` accepts.
pub const MAX_EXPONENT: u8 = 45;
/// Largest request `round_size` accepts.
pub const MAX_REQUEST: u64 = 1 << 45;

/// Smallest `(B, 2^B)` with `2^B >= requested + 8` and `B >= 4`.
pub fn round_size(requested: u64) -> Result<(u8, u64), CodecError> {
    if requested == 0 || requested > MAX_REQUEST {
        return Err(CodecError::Size(requested));
    }
    let needed = requested + PADDING;
    let exponent = (needed.next_power_of_two().trailing_zeros() as u8).max(MIN_EXPONENT);
    Ok((exponent, 1u64 << exponent))
}

pub fn make_tagged(base_addr: u64, exponent: u8) -> Result<TaggedPointer, CodecError> {
    if exponent > MAX_EXPONENT {
        return Err(CodecError::Exponent(exponent));
    }
    if base_addr >= ADDR_LIMIT {
        return Err(CodecError::Address(base_addr));
    }
    let align = 1u64 << exponent;
    if base_addr & (align - 1) != 0 {
        return Err(CodecError::Alignment {
            base: base_addr,
            align,
        });
    }
    Ok(TaggedPointer(base_addr | ((!u64::from(exponent) & FIELD) << TAG_SHIFT)))
}

/// The decoded exponent, i.e. the complement of the stored field.
pub fn exponent(p: TaggedPointer) -> u8 {
    (!(p.raw() >> TAG_SHIFT) & FIELD) as u8
}

pub fn decode(p: TaggedPointer) -> Bounds {
    let b = u32::from(exponent(p));
    if b >= ADDR_BITS {
        return Bounds::UNBOUNDED;
    }
    let size = 1u64 << b;
    let base = strip(p) & !(size - 1);
    Bounds {
        base,
        bound: base + size,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive scan for the smallest admissible exponent.
    fn scan_round(requested: u64) -> (u8, u64) {
        (MIN_EXPONENT..=63)
            .map(|b| (b, 1u64 << b))
            .find(|&(_, size)| size >= requested + 8)
            .unwrap()
    }

    #[test]
    fn round_size_examples() {
        assert_eq!(round_size(1025).unwrap(), (11, 2048));
        assert_eq!(round_size(24).unwrap(), (5, 32));
        assert_eq!(round_size(32).unwrap(), (6, 64));
        assert_eq!(round_size(1).unwrap(), (4, 16));
        for s in [24, 32, 1, 1025, 8, 9, 4096] {
            assert_eq!(round_size(s).unwrap(), scan_round(s), "size {s}");
        }
    }

    #[test]
    fn round_size_errors() {
        assert_eq!(round_size(0), Err(CodecError::Size(0)));
        assert_eq!(round_size(MAX_REQUEST + 1), Err(CodecError::Size(MAX_REQUEST + 1)));
        assert_eq!(round_size(MAX_REQUEST).unwrap(), (46, 1 << 46));
    }

    #[test]
    fn make_tagged_examples() {
        let p = make_tagged(0x1000, 5).unwrap();
        assert_eq!(p.raw() >> 58, 0b111010);
        assert_eq!(p.raw() & super::super::ADDR_MASK, 0x1000);
        assert_eq!(make_tagged(0, 4).unwrap().raw(), (!4u64 & 0x3F) << 58);
        assert_eq!(
            make_tagged(0x1001, 5),
            Err(CodecError::Alignment {
                base: 0x1001,
                align: 32
            })
        );
        assert_eq!(make_tagged(0, 46), Err(CodecError::Exponent(46)));
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode(TaggedPointer(0x4000)), Bounds::UNBOUNDED);
        let p = make_tagged(0x1000, 5).unwrap().offset(0x18);
        assert_eq!(
            decode(p),
            Bounds {
                base: 0x1000,
                bound: 0x1020
            }
        );
        let z = make_tagged(0, 4).unwrap().offset(8);
        assert_eq!(decode(z), Bounds { base: 0, bound: 0x10 });
    }
}
