//! Floating encoding: complemented `{E:6, baseBlk:6, boundBlk:6}` in bits
//! 63..46.
//!
//! An object is the run of blocks `[baseBlk, boundBlk)` of `2^E` bytes each,
//! inside the `2^(E+6)`-aligned window that contains the pointer.

use super::{align_up, strip, Bounds, CodecError, TaggedPointer, ADDR_LIMIT, MIN_EXPONENT, PADDING};

const EXP_SHIFT: u32 = 58;
const BASE_SHIFT: u32 = 52;
const BOUND_SHIFT: u32 = 46;
const FIELD: u64 = 0x3F;
/// Highest block index a bound may name.
pub const MAX_BLOCKS: u64 = 63;
/// `E + 6` must stay inside the address width.
pub const MAX_EXPONENT: u8 = 40;
/// Largest request accepted.
pub const MAX_REQUEST: u64 = 1 << 45;

/// Smallest exponent (≥ 4) for which `requested + 8` bytes fit in at most 63
/// blocks, and the number of blocks used.
pub fn block_layout(requested: u64) -> Result<(u8, u64), CodecError> {
    if requested == 0 || requested > MAX_REQUEST {
        return Err(CodecError::Size(requested));
    }
    let needed = requested + PADDING;
    for e in MIN_EXPONENT..=MAX_EXPONENT {
        let blocks = needed.div_ceil(1u64 << e);
        if blocks <= MAX_BLOCKS {
            return Ok((e, blocks));
        }
    }
    Err(CodecError::Size(requested))
}

/// First `2^E`-aligned address at or above `cursor` from which `blocks`
/// blocks stay inside one window.
pub fn place(cursor: u64, exponent: u8, blocks: u64) -> u64 {
    let base = align_up(cursor, 1 << exponent);
    let first = (base >> exponent) & FIELD;
    if first + blocks <= MAX_BLOCKS {
        base
    } else {
        align_up(base, 1 << (exponent + 6))
    }
}

pub fn make_tagged(base_addr: u64, exponent: u8, blocks: u64) -> Result<TaggedPointer, CodecError> {
    if !(MIN_EXPONENT..=MAX_EXPONENT).contains(&exponent) {
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
    let first = (base_addr >> exponent) & FIELD;
    if blocks == 0 || first + blocks > MAX_BLOCKS {
        return Err(CodecError::Window { first, blocks });
    }
    let last = first + blocks;
    let tag = ((!u64::from(exponent) & FIELD) << EXP_SHIFT)
        | ((!first & FIELD) << BASE_SHIFT)
        | ((!last & FIELD) << BOUND_SHIFT);
    Ok(TaggedPointer(base_addr | tag))
}

pub fn decode(p: TaggedPointer) -> Bounds {
    if p.is_tagless() {
        return Bounds::UNBOUNDED;
    }
    let field = |shift: u32| !(p.raw() >> shift) & FIELD;
    let exponent = field(EXP_SHIFT);
    let first = field(BASE_SHIFT);
    let last = field(BOUND_SHIFT);
    if exponent > u64::from(MAX_EXPONENT) || exponent < u64::from(MIN_EXPONENT) || first >= last {
        return Bounds::UNBOUNDED;
    }
    let window = strip(p) & !((1u64 << (exponent + 6)) - 1);
    Bounds {
        base: window + (first << exponent),
        bound: (window + (last << exponent)).min(ADDR_LIMIT),
    }
}
