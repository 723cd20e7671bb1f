//! Pointer tag codecs.
//!
//! Boundary metadata lives in the high bits of a 64-bit pointer. The low
//! [`ADDR_BITS`] bits hold the virtual address; everything above is the tag
//! region. Tags are stored complemented, so a pointer whose tag region is all
//! zeroes (a pointer produced by uninstrumented code) decodes to an object
//! spanning the whole address space and is never corrected.
//!
//! Two codecs share this layout:
//!
//! * [`buddy`]: a single 6-bit exponent in bits 63..58. Objects are rounded to
//!   a power of two and aligned on their rounded size, so the base is the
//!   address with its low `B` bits cleared.
//! * [`floating`]: exponent, base-block and bound-block indices (6 bits each)
//!   in bits 63..46. Objects are a run of `2^E`-byte blocks inside a
//!   `2^(E+6)`-aligned window.

pub mod buddy;
pub mod floating;

use std::fmt;

use thiserror::Error;

/// Width of the canonical virtual address.
pub const ADDR_BITS: u32 = 46;
/// One past the highest canonical address.
pub const ADDR_LIMIT: u64 = 1 << ADDR_BITS;
/// Mask selecting the address bits of a pointer.
pub const ADDR_MASK: u64 = ADDR_LIMIT - 1;
/// Mask selecting the tag region of a pointer.
pub const TAG_MASK: u64 = !ADDR_MASK;
/// Smallest exponent handed out by either codec (16-byte granule).
pub const MIN_EXPONENT: u8 = 4;
/// Bytes of padding every object receives past its requested size.
pub const PADDING: u64 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("size error: cannot allocate {0} bytes")]
    Size(u64),
    #[error("alignment error: base {base:#x} is not aligned to {align:#x}")]
    Alignment { base: u64, align: u64 },
    #[error("exponent {0} does not fit the tag")]
    Exponent(u8),
    #[error("address {0:#x} is outside the canonical address space")]
    Address(u64),
    #[error("object of {blocks} blocks starting at block {first} does not fit its window")]
    Window { first: u64, blocks: u64 },
    #[error("check-config error: access of {size} bytes against an object of {object} bytes")]
    CheckConfig { size: u64, object: u64 },
}

/// A 64-bit pointer value that may carry boundary metadata in its high bits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TaggedPointer(pub u64);

impl TaggedPointer {
    pub const fn raw(self) -> u64 {
        self.0
    }

    /// The tag region bits, still complemented, shifted down to bit 0.
    pub const fn tag_field(self) -> u64 {
        self.0 >> ADDR_BITS
    }

    pub const fn is_tagless(self) -> bool {
        self.0 & TAG_MASK == 0
    }

    pub const fn offset(self, delta: u64) -> TaggedPointer {
        TaggedPointer(self.0.wrapping_add(delta))
    }
}

impl fmt::Debug for TaggedPointer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TaggedPointer({:#06x}:{:#x})", self.tag_field(), strip(*self))
    }
}

impl From<u64> for TaggedPointer {
    fn from(raw: u64) -> Self {
        TaggedPointer(raw)
    }
}

/// Half-open address range `[base, bound)` of a memory object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bounds {
    pub base: u64,
    pub bound: u64,
}

impl Bounds {
    /// The bounds handed out for tagless pointers.
    pub const UNBOUNDED: Bounds = Bounds {
        base: 0,
        bound: ADDR_LIMIT,
    };

    pub const fn len(&self) -> u64 {
        self.bound - self.base
    }

    pub const fn is_empty(&self) -> bool {
        self.bound == self.base
    }

    pub const fn contains(&self, addr: u64) -> bool {
        self.base <= addr && addr < self.bound
    }

    pub fn is_unbounded(&self) -> bool {
        *self == Self::UNBOUNDED
    }
}

/// Outcome of a bounds check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    InBounds,
    Overflow,
    Underflow,
}

impl Verdict {
    pub fn is_in_bounds(self) -> bool {
        self == Verdict::InBounds
    }
}

/// Clears the tag region.
#[inline]
pub const fn strip(p: TaggedPointer) -> u64 {
    p.0 & ADDR_MASK
}

/// The tag region of `p`, left in place.
#[inline]
pub const fn tag_bits(p: TaggedPointer) -> u64 {
    p.0 & TAG_MASK
}

/// Clamps an access of `access_size` bytes at `addr` into `b`.
///
/// Underflowing accesses move to `b.base`, overflowing ones to
/// `b.bound - access_size`.
pub fn saturate(addr: u64, access_size: u64, b: Bounds) -> Result<(u64, Verdict), CodecError> {
    if !matches!(access_size, 1 | 2 | 4 | 8) || b.base > b.bound || access_size > b.len() {
        return Err(CodecError::CheckConfig {
            size: access_size,
            object: b.bound.saturating_sub(b.base),
        });
    }
    let last = b.bound - access_size;
    Ok(if addr < b.base {
        (b.base, Verdict::Underflow)
    } else if addr > last {
        (last, Verdict::Overflow)
    } else {
        (addr, Verdict::InBounds)
    })
}

/// Which tag layout is active for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CodecKind {
    #[default]
    Buddy,
    Floating,
}

impl CodecKind {
    pub fn name(self) -> &'static str {
        match self {
            CodecKind::Buddy => "buddy",
            CodecKind::Floating => "floating",
        }
    }

    /// Size, alignment and tag parameters for an object of `requested` bytes.
    pub fn layout(self, requested: u64) -> Result<ObjectLayout, CodecError> {
        match self {
            CodecKind::Buddy => {
                let (exponent, rounded) = buddy::round_size(requested)?;
                if exponent > buddy::MAX_EXPONENT {
                    return Err(CodecError::Size(requested));
                }
                Ok(ObjectLayout {
                    codec: self,
                    exponent,
                    blocks: 1,
                    rounded,
                })
            }
            CodecKind::Floating => {
                let (exponent, blocks) = floating::block_layout(requested)?;
                Ok(ObjectLayout {
                    codec: self,
                    exponent,
                    blocks,
                    rounded: blocks << exponent,
                })
            }
        }
    }

    pub fn decode(self, p: TaggedPointer) -> Bounds {
        match self {
            CodecKind::Buddy => buddy::decode(p),
            CodecKind::Floating => floating::decode(p),
        }
    }
}

impl fmt::Display for CodecKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CodecKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "buddy" => Ok(CodecKind::Buddy),
            "floating" => Ok(CodecKind::Floating),
            other => Err(format!("unknown codec `{other}` (expected buddy or floating)")),
        }
    }
}

/// How an object of a given requested size is laid out by a codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectLayout {
    pub codec: CodecKind,
    pub exponent: u8,
    /// Number of `2^exponent` blocks; always 1 for the buddy codec.
    pub blocks: u64,
    pub rounded: u64,
}

impl ObjectLayout {
    pub fn align(&self) -> u64 {
        1 << self.exponent
    }

    /// Lowest address at or above `cursor` where the object may start.
    pub fn place(&self, cursor: u64) -> u64 {
        let base = align_up(cursor, self.align());
        match self.codec {
            CodecKind::Buddy => base,
            CodecKind::Floating => floating::place(base, self.exponent, self.blocks),
        }
    }

    /// The tagged base pointer for an object placed at `base`.
    pub fn tag(&self, base: u64) -> Result<TaggedPointer, CodecError> {
        match self.codec {
            CodecKind::Buddy => buddy::make_tagged(base, self.exponent),
            CodecKind::Floating => floating::make_tagged(base, self.exponent, self.blocks),
        }
    }
}

pub(crate) fn align_up(value: u64, align: u64) -> u64 {
    debug_assert!(align.is_power_of_two());
    value.wrapping_add(align - 1) & !(align - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const OBJ: Bounds = Bounds {
        base: 0x1000,
        bound: 0x1020,
    };

    #[test]
    fn saturate_examples() {
        assert_eq!(saturate(0x1030, 4, OBJ).unwrap(), (0x101C, Verdict::Overflow));
        assert_eq!(saturate(0x0FF8, 8, OBJ).unwrap(), (0x1000, Verdict::Underflow));
        assert_eq!(saturate(0x1010, 4, OBJ).unwrap(), (0x1010, Verdict::InBounds));
    }

    #[test]
    fn saturate_edges() {
        assert_eq!(saturate(0x101C, 4, OBJ).unwrap(), (0x101C, Verdict::InBounds));
        assert_eq!(saturate(0x101D, 4, OBJ).unwrap(), (0x101C, Verdict::Overflow));
        assert_eq!(saturate(0x0FFF, 1, OBJ).unwrap(), (0x1000, Verdict::Underflow));
    }

    #[test]
    fn saturate_rejects_bad_access_sizes() {
        let tiny = Bounds { base: 0, bound: 4 };
        assert!(matches!(saturate(0, 8, tiny), Err(CodecError::CheckConfig { .. })));
        assert!(matches!(saturate(0x1000, 3, OBJ), Err(CodecError::CheckConfig { .. })));
        assert!(matches!(saturate(0x1000, 0, OBJ), Err(CodecError::CheckConfig { .. })));
    }

    #[test]
    fn strip_examples() {
        let p = buddy::make_tagged(0x1000, 5).unwrap();
        assert_eq!(strip(p), 0x1000);
        assert_eq!(strip(TaggedPointer(0x1000)), 0x1000);
        assert_eq!(strip(buddy::make_tagged(0x2FF0, 4).unwrap().offset(8)), 0x2FF8);
    }

    #[test]
    fn codec_parse() {
        assert_eq!("floating".parse::<CodecKind>().unwrap(), CodecKind::Floating);
        assert!("lowfat".parse::<CodecKind>().is_err());
    }
}
