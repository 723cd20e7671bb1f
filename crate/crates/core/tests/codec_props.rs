use proptest::prelude::*;
use sma_core::codec::{buddy, floating, saturate, strip, Bounds, CodecKind, TaggedPointer, Verdict, ADDR_LIMIT};

fn smallest_exponent(size: u64) -> u8 {
    (4u8..=63).find(|&b| (1u128 << b) >= u128::from(size) + 8).unwrap()
}

proptest! {
    #[test]
    fn buddy_rounding_is_minimal(size in 1u64..=(1 << 45)) {
        let (b, rounded) = buddy::round_size(size).unwrap();
        prop_assert_eq!(b, smallest_exponent(size));
        prop_assert_eq!(rounded, 1u64 << b);
        prop_assert!(rounded >= size + 8);
    }

    #[test]
    fn buddy_rounding_is_monotone(a in 1u64..(1 << 40), b in 1u64..(1 << 40)) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(buddy::round_size(lo).unwrap().1 <= buddy::round_size(hi).unwrap().1);
    }

    #[test]
    fn buddy_roundtrip_and_interior_stability(b in 4u8..=45, slot in any::<u64>(), k in any::<u64>()) {
        let base = (slot << b) % ADDR_LIMIT;
        let p = buddy::make_tagged(base, b).unwrap();
        let want = Bounds { base, bound: base + (1u64 << b) };
        prop_assert_eq!(buddy::decode(p), want);
        prop_assert_eq!(strip(p), base);
        // any interior pointer keeps the same tag and decodes identically
        let inner = p.offset(k % (1u64 << b));
        prop_assert_eq!(buddy::decode(inner), want);
    }

    #[test]
    fn tagless_pointers_are_unbounded(addr in 0u64..ADDR_LIMIT) {
        prop_assert_eq!(buddy::decode(TaggedPointer(addr)), Bounds::UNBOUNDED);
        prop_assert_eq!(floating::decode(TaggedPointer(addr)), Bounds::UNBOUNDED);
    }

    #[test]
    fn saturate_stays_inside(base_slot in 0u64..1 << 20, b in 4u8..=12, addr_off in -8192i64..8192, size_ix in 0usize..4) {
        let size = [1u64, 2, 4, 8][size_ix];
        let base = base_slot << b;
        let bounds = Bounds { base, bound: base + (1 << b) };
        let addr = base.wrapping_add(addr_off as u64);
        let (fixed, verdict) = saturate(addr, size, bounds).unwrap();
        prop_assert!(fixed >= bounds.base && fixed + size <= bounds.bound);
        match verdict {
            Verdict::InBounds => prop_assert_eq!(fixed, addr),
            Verdict::Overflow => prop_assert_eq!(fixed, bounds.bound - size),
            Verdict::Underflow => prop_assert_eq!(fixed, bounds.base),
        }
    }

    #[test]
    fn floating_layout_roundtrip(req in 1u64..(1 << 30), cursor in 0u64..(1 << 42)) {
        let layout = CodecKind::Floating.layout(req).unwrap();
        prop_assert!(layout.rounded >= req + 8);
        prop_assert!(layout.blocks <= floating::MAX_BLOCKS);
        // the exponent is the smallest that fits
        if layout.exponent > 4 {
            prop_assert!((req + 8).div_ceil(1 << (layout.exponent - 1)) > 63);
        }
        let base = layout.place(cursor);
        prop_assert!(base >= cursor);
        let p = layout.tag(base).unwrap();
        let want = Bounds { base, bound: base + layout.rounded };
        prop_assert_eq!(CodecKind::Floating.decode(p), want);
        prop_assert_eq!(CodecKind::Floating.decode(p.offset(layout.rounded - 1)), want);
    }

    #[test]
    fn floating_never_wastes_more_than_buddy(req in 1u64..(1 << 40)) {
        let f = CodecKind::Floating.layout(req).unwrap().rounded;
        let b = CodecKind::Buddy.layout(req).unwrap().rounded;
        prop_assert!(f <= b);
    }
}
