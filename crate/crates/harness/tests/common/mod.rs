//! Random overflowing programs and a snapshot-diff store oracle.
#![allow(dead_code)]

use std::fmt::Write as _;

use rand::rngs::StdRng;
use rand::Rng;
use sma_core::codec::Bounds;
use sma_core::exec::{StoreEvent, Tracer};
use sma_core::memory::{AddressSpace, DISCARD_BASE};
use sma_core::pass::SHADOW_CTOR;

pub const STORE_SIZES: [u64; 4] = [1, 2, 4, 8];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Home {
    Heap,
    Stack,
    Global,
}

struct Obj {
    size: i64,
    home: Home,
    freed: bool,
}

struct Gen<'a> {
    rng: &'a mut StdRng,
    body: String,
    label: String,
    fresh: usize,
}

impl Gen<'_> {
    fn name(&mut self, prefix: &str) -> String {
        self.fresh += 1;
        format!("{prefix}{}", self.fresh)
    }

    fn offset(&mut self, size: i64) -> i64 {
        self.rng.gen_range(-(size + 48)..=2 * size + 48)
    }

    fn value(&mut self) -> i64 {
        self.rng.gen_range(1..i64::MAX)
    }
}

/// A `main` that allocates a handful of heap, stack and global objects and
/// stores to them at offsets that are often out of bounds, directly, through
/// helpers, in byte loops and through heap/stack pointers reloaded from
/// memory.
pub fn overflow_program(rng: &mut StdRng) -> String {
    let count = rng.gen_range(2..=6);
    let mut objs = Vec::new();
    let mut header = String::new();
    for s in STORE_SIZES {
        writeln!(
            header,
            "func @poke{s}(ptr %p, i64 %off, i64 %v) {{\nentry:\n  %q = ptradd %p, %off\n  store {s} %v, %q\n  ret\n}}\n"
        )
        .unwrap();
    }
    let mut g = Gen {
        rng,
        body: String::new(),
        label: "entry".into(),
        fresh: 0,
    };
    g.body.push_str("entry:\n");
    for i in 0..count {
        let size = g.rng.gen_range(1..=200);
        let home = match g.rng.gen_range(0..3) {
            0 => Home::Heap,
            1 => Home::Stack,
            _ => Home::Global,
        };
        match home {
            Home::Heap => writeln!(g.body, "  %o{i} = malloc {size}").unwrap(),
            Home::Stack => writeln!(g.body, "  %o{i} = alloca {size}").unwrap(),
            Home::Global => {
                writeln!(header, "global @g{i} {size}").unwrap();
                writeln!(g.body, "  %o{i} = gaddr @g{i}").unwrap();
            }
        }
        objs.push(Obj {
            size,
            home,
            freed: false,
        });
    }
    let ops = g.rng.gen_range(3..=12);
    for _ in 0..ops {
        let live: Vec<usize> = (0..objs.len()).filter(|&i| !objs[i].freed).collect();
        let i = live[g.rng.gen_range(0..live.len())];
        let size = objs[i].size;
        let width = STORE_SIZES[g.rng.gen_range(0..4)];
        match g.rng.gen_range(0..10) {
            0..=3 => {
                let (off, v, q) = (g.offset(size), g.value(), g.name("%q"));
                writeln!(g.body, "  {q} = ptradd %o{i}, {off}\n  store {width} {v}, {q}").unwrap();
            }
            4 | 5 => {
                let (off, v) = (g.offset(size), g.value());
                writeln!(g.body, "  call @poke{width}(%o{i}, {off}, {v})").unwrap();
            }
            6 | 7 => {
                let start = g.offset(size);
                let end = start + g.rng.gen_range(1..=size + 40);
                let v = g.value();
                let (l, after) = (g.name("l"), g.name("a"));
                let (iv, iv2, p, c) = (g.name("%i"), g.name("%i"), g.name("%p"), g.name("%c"));
                writeln!(
                    g.body,
                    "  br {l}\n{l}:\n  {iv} = phi i64 [{prev}, {start}], [{l}, {iv2}]\n  {p} = ptradd %o{i}, {iv}\n  store 1 {v}, {p}\n  {iv2} = add {iv}, 1\n  {c} = icmp slt {iv2}, {end}\n  brcond {c}, {l}, {after}\n{after}:",
                    prev = g.label
                )
                .unwrap();
                g.label = after;
            }
            // `gaddr` results are untagged; spilling one to memory drops its
            // bounds, so only allocator pointers are reloaded.
            8 if objs[i].home != Home::Global => {
                let (slot, r, q) = (g.name("%s"), g.name("%r"), g.name("%q"));
                let (off, v) = (g.offset(size), g.value());
                writeln!(
                    g.body,
                    "  {slot} = malloc 8\n  store 8 %o{i}, {slot}\n  {r} = load ptr 8, {slot}\n  {q} = ptradd {r}, {off}\n  store {width} {v}, {q}"
                )
                .unwrap();
            }
            _ => {
                if objs[i].home == Home::Heap && live.len() > 1 {
                    writeln!(g.body, "  free %o{i}").unwrap();
                    objs[i].freed = true;
                }
            }
        }
    }
    g.body.push_str("  ret 0\n");
    format!("{header}\nfunc @main() -> i64 {{\n{}}}\n", g.body)
}

/// Checks every store against a snapshot of the requested bytes of all
/// other live objects, and that the written bytes stay inside the checked
/// bounds or go to the discard sink. Stores made by the shadow-slot constructor are skipped.
#[derive(Default)]
pub struct NeighborOracle {
    snapshot: Vec<(std::ops::Range<u64>, Vec<u8>)>,
    pub stores: u64,
    pub violations: Vec<String>,
}

impl NeighborOracle {
    fn others(event: &StoreEvent, memory: &AddressSpace) -> Vec<std::ops::Range<u64>> {
        let target = event.bounds;
        memory
            .live_objects()
            .filter(|o| Some(Bounds { base: o.base, bound: o.base + o.rounded }) != target)
            .map(|o| o.requested_range())
            .collect()
    }
}

impl Tracer for NeighborOracle {
    fn before_store(&mut self, event: &StoreEvent, memory: &AddressSpace) {
        if event.loc.func == SHADOW_CTOR {
            return;
        }
        self.snapshot = Self::others(event, memory)
            .into_iter()
            .map(|r| {
                let bytes = memory.read_bytes(r.clone());
                (r, bytes)
            })
            .collect();
    }

    fn after_store(&mut self, event: &StoreEvent, memory: &AddressSpace) {
        if event.loc.func == SHADOW_CTOR {
            return;
        }
        self.stores += 1;
        match event.bounds {
            None => self.violations.push(format!("{}: unchecked store", event.loc)),
            Some(_) if event.addr >= DISCARD_BASE => {}
            Some(b) if event.addr < b.base || event.addr + event.size > b.bound => self
                .violations
                .push(format!("{}: store {:#x}+{} outside {:#x}..{:#x}", event.loc, event.addr, event.size, b.base, b.bound)),
            Some(_) => {}
        }
        for (range, before) in &self.snapshot {
            if memory.read_bytes(range.clone()) != *before {
                self.violations
                    .push(format!("{}: neighbour {:#x}..{:#x} modified", event.loc, range.start, range.end));
            }
        }
    }
}
