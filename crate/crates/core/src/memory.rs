//! Simulated 46-bit flat address space.
//!
//! Three disjoint regions (globals, heap, stack) are carved out of the
//! canonical range and served by bump allocators. Each allocation is padded,
//! rounded and aligned by the active codec so its base pointer can carry a
//! tag. Addresses are never reused within one address space.
//!
//! Bytes live in sparse 4 KiB pages; untouched bytes read as zero. The top
//! quarter of the address space is a discard sink: writes there vanish and
//! reads return zero. Failure-oblivious execution redirects invalid accesses
//! into it.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use thiserror::Error;

use crate::codec::{CodecError, CodecKind, TaggedPointer, ADDR_LIMIT};

pub const PAGE_SIZE: usize = 4096;
const PAGE_SHIFT: u32 = 12;

/// Start of the discard sink.
pub const DISCARD_BASE: u64 = 3 << 44;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Global,
    Heap,
    Stack,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Global, Region::Heap, Region::Stack];

    /// Address range served by this region.
    pub fn span(self) -> Range<u64> {
        match self {
            Region::Global => (1 << 40)..(1 << 41),
            Region::Heap => (1 << 42)..(1 << 43),
            Region::Stack => (1 << 44)..(1 << 45),
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Global => "global",
            Region::Heap => "heap",
            Region::Stack => "stack",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemError {
    #[error(transparent)]
    Size(#[from] CodecError),
    #[error("out of memory: {region} region cannot fit {size} bytes")]
    OutOfMemory { region: Region, size: u64 },
    #[error("free error: object {0} is not live")]
    Free(u64),
    #[error("segmentation fault at {0:#x}")]
    Segfault(u64),
    #[error("unsupported access size {0}")]
    AccessSize(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectRecord {
    pub id: u64,
    pub base: u64,
    pub requested: u64,
    pub rounded: u64,
    pub region: Region,
    pub live: bool,
    /// Tagged base pointer returned by the allocation.
    pub tagged: TaggedPointer,
}

impl ObjectRecord {
    pub fn extent(&self) -> Range<u64> {
        self.base..self.base + self.rounded
    }

    /// The bytes the program asked for, excluding padding.
    pub fn requested_range(&self) -> Range<u64> {
        self.base..self.base + self.requested
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Read,
    Write(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FragmentEntry {
    pub id: u64,
    pub requested: u64,
    pub rounded: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FragmentationReport {
    pub per_object: Vec<FragmentEntry>,
    /// Σ rounded / Σ requested, or 1.0 with no objects.
    pub aggregate_ratio: f64,
}

#[derive(Clone)]
pub struct AddressSpace {
    codec: CodecKind,
    cursors: [u64; 3],
    pages: BTreeMap<u64, Box<[u8; PAGE_SIZE]>>,
    objects: Vec<ObjectRecord>,
    by_base: BTreeMap<u64, usize>,
    fault_on_unmapped: bool,
}

impl fmt::Debug for AddressSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AddressSpace")
            .field("codec", &self.codec)
            .field("objects", &self.objects.len())
            .field("pages", &self.pages.len())
            .finish()
    }
}

impl AddressSpace {
    pub fn new(codec: CodecKind) -> Self {
        AddressSpace {
            codec,
            cursors: Region::ALL.map(|r| r.span().start),
            pages: BTreeMap::new(),
            objects: Vec::new(),
            by_base: BTreeMap::new(),
            fault_on_unmapped: false,
        }
    }

    pub fn codec(&self) -> CodecKind {
        self.codec
    }

    /// When set, accesses outside every allocated extent fail with
    /// [`MemError::Segfault`] instead of reading zero / writing silently.
    pub fn set_fault_on_unmapped(&mut self, fault: bool) {
        self.fault_on_unmapped = fault;
    }

    pub fn allocate(&mut self, size: u64, region: Region) -> Result<(TaggedPointer, ObjectRecord), MemError> {
        let layout = self.codec.layout(size)?;
        let span = region.span();
        let cursor = &mut self.cursors[region.index()];
        let base = layout.place(*cursor);
        let end = base
            .checked_add(layout.rounded)
            .filter(|&end| base >= *cursor && end <= span.end)
            .ok_or(MemError::OutOfMemory { region, size })?;
        *cursor = end;
        let tagged = layout.tag(base)?;
        self.zero_fill(base..end);
        let record = ObjectRecord {
            id: self.objects.len() as u64,
            base,
            requested: size,
            rounded: layout.rounded,
            region,
            live: true,
            tagged,
        };
        self.by_base.insert(base, self.objects.len());
        self.objects.push(record.clone());
        Ok((tagged, record))
    }

    pub fn release(&mut self, id: u64) -> Result<(), MemError> {
        match self.objects.get_mut(id as usize) {
            Some(obj) if obj.live => {
                obj.live = false;
                Ok(())
            }
            _ => Err(MemError::Free(id)),
        }
    }

    pub fn object(&self, id: u64) -> Option<&ObjectRecord> {
        self.objects.get(id as usize)
    }

    pub fn objects(&self) -> &[ObjectRecord] {
        &self.objects
    }

    pub fn live_objects(&self) -> impl Iterator<Item = &ObjectRecord> {
        self.objects.iter().filter(|o| o.live)
    }

    /// The object whose base is exactly `base`.
    pub fn object_at_base(&self, base: u64) -> Option<&ObjectRecord> {
        self.by_base.get(&base).map(|&i| &self.objects[i])
    }

    /// The object (live or not) whose padded extent contains `addr`.
    pub fn object_containing(&self, addr: u64) -> Option<&ObjectRecord> {
        let (_, &i) = self.by_base.range(..=addr).next_back()?;
        let obj = &self.objects[i];
        obj.extent().contains(&addr).then_some(obj)
    }

    pub fn is_mapped(&self, addr: u64, size: u64) -> bool {
        size > 0 && self.object_containing(addr).is_some() && self.object_containing(addr + size - 1).is_some()
    }

    pub fn raw_access(&mut self, addr: u64, size: u64, op: Access) -> Result<u64, MemError> {
        match op {
            Access::Read => self.read(addr, size),
            Access::Write(value) => self.write(addr, size, value).map(|()| value),
        }
    }

    /// Little-endian read of `size` bytes.
    pub fn read(&self, addr: u64, size: u64) -> Result<u64, MemError> {
        self.precheck(addr, size)?;
        if addr >= DISCARD_BASE {
            return Ok(0);
        }
        let mut value = 0u64;
        for i in (0..size).rev() {
            value = (value << 8) | u64::from(self.byte(addr + i));
        }
        Ok(value)
    }

    /// Little-endian write of the low `size` bytes of `value`.
    pub fn write(&mut self, addr: u64, size: u64, value: u64) -> Result<(), MemError> {
        self.precheck(addr, size)?;
        if addr >= DISCARD_BASE {
            return Ok(());
        }
        for i in 0..size {
            self.set_byte(addr + i, (value >> (8 * i)) as u8);
        }
        Ok(())
    }

    fn precheck(&self, addr: u64, size: u64) -> Result<(), MemError> {
        if !matches!(size, 1 | 2 | 4 | 8) {
            return Err(MemError::AccessSize(size));
        }
        let end = addr.checked_add(size).filter(|&e| e <= ADDR_LIMIT);
        if end.is_none() {
            return Err(MemError::Segfault(addr));
        }
        if self.fault_on_unmapped && addr < DISCARD_BASE && !self.is_mapped(addr, size) {
            return Err(MemError::Segfault(addr));
        }
        Ok(())
    }

    /// Reads a byte without any mapping check.
    pub fn byte(&self, addr: u64) -> u8 {
        self.pages
            .get(&(addr >> PAGE_SHIFT))
            .map_or(0, |page| page[(addr as usize) & (PAGE_SIZE - 1)])
    }

    fn set_byte(&mut self, addr: u64, value: u8) {
        let page = self
            .pages
            .entry(addr >> PAGE_SHIFT)
            .or_insert_with(|| Box::new([0; PAGE_SIZE]));
        page[(addr as usize) & (PAGE_SIZE - 1)] = value;
    }

    pub fn read_bytes(&self, range: Range<u64>) -> Vec<u8> {
        range.map(|a| self.byte(a)).collect()
    }

    /// Writes `bytes` starting at `addr` without any mapping check.
    pub fn load_bytes(&mut self, addr: u64, bytes: &[u8]) {
        for (i, &b) in bytes.iter().enumerate() {
            self.set_byte(addr + i as u64, b);
        }
    }

    fn zero_fill(&mut self, range: Range<u64>) {
        let first = range.start >> PAGE_SHIFT;
        let last = (range.end - 1) >> PAGE_SHIFT;
        let touched: Vec<u64> = self.pages.range(first..=last).map(|(&k, _)| k).collect();
        for page_index in touched {
            let page_start = page_index << PAGE_SHIFT;
            let lo = range.start.max(page_start) - page_start;
            let hi = range.end.min(page_start + PAGE_SIZE as u64) - page_start;
            if let Some(page) = self.pages.get_mut(&page_index) {
                page[lo as usize..hi as usize].fill(0);
            }
        }
    }

    pub fn fragmentation_report(&self) -> FragmentationReport {
        let per_object: Vec<FragmentEntry> = self
            .objects
            .iter()
            .map(|o| FragmentEntry {
                id: o.id,
                requested: o.requested,
                rounded: o.rounded,
                ratio: o.rounded as f64 / o.requested as f64,
            })
            .collect();
        let requested: u128 = per_object.iter().map(|e| u128::from(e.requested)).sum();
        let rounded: u128 = per_object.iter().map(|e| u128::from(e.rounded)).sum();
        let aggregate_ratio = if requested == 0 {
            1.0
        } else {
            rounded as f64 / requested as f64
        };
        FragmentationReport {
            per_object,
            aggregate_ratio,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{buddy, strip};

    fn assert_disjoint(space: &AddressSpace) {
        let live: Vec<_> = space.live_objects().collect();
        for (i, a) in live.iter().enumerate() {
            for b in &live[i + 1..] {
                assert!(
                    a.base + a.rounded <= b.base || b.base + b.rounded <= a.base,
                    "{a:?} overlaps {b:?}"
                );
            }
        }
    }

    #[test]
    fn allocate_examples() {
        let mut space = AddressSpace::new(CodecKind::Buddy);
        let (p, rec) = space.allocate(24, Region::Heap).unwrap();
        assert_eq!(rec.base % 32, 0);
        assert_eq!(buddy::exponent(p), 5);
        assert_eq!(strip(p), rec.base);
        let (_, big) = space.allocate(1025, Region::Heap).unwrap();
        assert_eq!(big.rounded, 2048);
        assert_eq!(big.base % 2048, 0);
        assert_eq!(
            space.allocate(0, Region::Heap).unwrap_err(),
            MemError::Size(CodecError::Size(0))
        );
        assert_disjoint(&space);
    }

    #[test]
    fn regions_are_disjoint() {
        let spans: Vec<_> = Region::ALL.iter().map(|r| r.span()).collect();
        for (i, a) in spans.iter().enumerate() {
            for b in &spans[i + 1..] {
                assert!(a.end <= b.start || b.end <= a.start);
            }
            assert!(a.end <= DISCARD_BASE);
        }
    }

    #[test]
    fn release_examples() {
        let mut space = AddressSpace::new(CodecKind::Buddy);
        let (_, rec) = space.allocate(8, Region::Stack).unwrap();
        space.release(rec.id).unwrap();
        assert!(!space.object(rec.id).unwrap().live);
        assert_eq!(space.release(rec.id), Err(MemError::Free(rec.id)));
        assert_eq!(space.release(999), Err(MemError::Free(999)));
    }

    #[test]
    fn raw_access_examples() {
        let mut space = AddressSpace::new(CodecKind::Buddy);
        space.write(0x1000, 4, 0xDEAD).unwrap();
        assert_eq!(space.read(0x1000, 4).unwrap(), 0xDEAD);
        assert_eq!(space.read(0x2000, 8).unwrap(), 0);
        space.write(0x3001, 2, 0xBEEF).unwrap();
        assert_eq!(space.read(0x3000, 4).unwrap(), 0x00BE_EF00);
        assert_eq!(space.raw_access(0x3000, 1, Access::Read).unwrap(), 0);
        assert_eq!(space.read(0x3000, 3), Err(MemError::AccessSize(3)));
    }

    #[test]
    fn access_straddling_a_page() {
        let mut space = AddressSpace::new(CodecKind::Buddy);
        space.write(0x1FFC, 8, 0x0102_0304_0506_0708).unwrap();
        assert_eq!(space.read(0x1FFC, 8).unwrap(), 0x0102_0304_0506_0708);
        assert_eq!(space.read(0x2000, 4).unwrap(), 0x0102_0304);
    }

    #[test]
    fn strict_mode_faults_outside_objects() {
        let mut space = AddressSpace::new(CodecKind::Buddy);
        let (_, rec) = space.allocate(24, Region::Heap).unwrap();
        space.set_fault_on_unmapped(true);
        space.write(rec.base + 24, 8, 1).unwrap();
        assert_eq!(space.write(rec.base + 32, 1, 1), Err(MemError::Segfault(rec.base + 32)));
        assert_eq!(space.read(0, 8), Err(MemError::Segfault(0)));
        assert_eq!(space.read(DISCARD_BASE + 16, 8), Ok(0));
    }

    #[test]
    fn discard_sink_swallows_writes() {
        let mut space = AddressSpace::new(CodecKind::Buddy);
        space.write(DISCARD_BASE, 8, u64::MAX).unwrap();
        assert_eq!(space.read(DISCARD_BASE, 8).unwrap(), 0);
    }

    #[test]
    fn allocation_zero_fills_stale_bytes() {
        let mut space = AddressSpace::new(CodecKind::Buddy);
        let next = Region::Heap.span().start;
        space.write(next + 4, 4, 0xFFFF_FFFF).unwrap();
        let (_, rec) = space.allocate(24, Region::Heap).unwrap();
        assert_eq!(rec.base, next);
        assert_eq!(space.read(next + 4, 4).unwrap(), 0);
    }

    #[test]
    fn fragmentation_examples() {
        let mut space = AddressSpace::new(CodecKind::Buddy);
        let empty = space.fragmentation_report();
        assert!(empty.per_object.is_empty());
        assert_eq!(empty.aggregate_ratio, 1.0);
        space.allocate(1025, Region::Heap).unwrap();
        let r = space.fragmentation_report();
        assert!((r.aggregate_ratio - 2048.0 / 1025.0).abs() < 1e-12);
        assert!((r.aggregate_ratio - 1.998).abs() < 1e-3);

        let mut space = AddressSpace::new(CodecKind::Buddy);
        space.allocate(24, Region::Heap).unwrap();
        let r = space.fragmentation_report();
        assert!((r.per_object[0].ratio - 32.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_memory() {
        let mut space = AddressSpace::new(CodecKind::Buddy);
        let err = space.allocate(1 << 41, Region::Global).unwrap_err();
        assert_eq!(
            err,
            MemError::OutOfMemory {
                region: Region::Global,
                size: 1 << 41
            }
        );
    }

    #[test]
    fn floating_objects_are_tighter() {
        let mut space = AddressSpace::new(CodecKind::Floating);
        let (p, rec) = space.allocate(1025, Region::Heap).unwrap();
        assert_eq!(rec.rounded, 33 * 32);
        let b = CodecKind::Floating.decode(p);
        assert_eq!(b.base, rec.base);
        assert_eq!(b.len(), rec.rounded);
    }
}
