use super::*;
use crate::codec::buddy;
use crate::ir::parse;
use crate::pass::instrument;

fn cfg(mode: Mode) -> PassConfig {
    PassConfig::new(mode, CodecKind::Buddy, false)
}

fn go(src: &str, c: &PassConfig) -> ExecOutcome {
    instrument_and_run(&parse(src).unwrap(), c, b"").unwrap()
}

// Two adjacent 24-byte heap objects (rounded to 32 each); writes one 8-byte
// word at the first one's padded bound.
const OVERFLOW: &str = "extern @print_i64(i64)
func @main() -> i64 {
entry:
  %a = malloc 24
  %b = malloc 24
  store 8 77, %b
  %p = ptradd %a, 32
  store 8 99, %p
  %v = load i64 8, %b
  callext @print_i64(%v)
  ret 0
}
";

#[test]
fn saturate_keeps_the_neighbor_intact() {
    let out = go(OVERFLOW, &cfg(Mode::Saturate));
    assert_eq!(out.status, ExitStatus::Exited(0));
    assert_eq!(out.output, b"77\n");
    assert_eq!(out.stats.oob_writes_redirected, 1);
    assert_eq!(out.stats.corrections_overflow, 1);
    assert!(out.stats.corrections() <= out.stats.checks_executed);
}

#[test]
fn failstop_traps_at_the_store() {
    let out = go(OVERFLOW, &cfg(Mode::FailStop));
    match out.status {
        ExitStatus::Trapped { reason, loc } => {
            assert_eq!(reason, "out-of-bounds store");
            assert_eq!(loc.unwrap().func, "main");
        }
        other => panic!("{other}"),
    }
    assert!(out.output.is_empty());
}

#[test]
fn off_mode_corrupts_the_neighbor() {
    let out = go(OVERFLOW, &cfg(Mode::Off));
    assert_eq!(out.status, ExitStatus::Exited(0));
    assert_eq!(out.output, b"99\n");
}

#[test]
fn oblivious_discards_writes_and_reads_zero() {
    let src = "extern @print_i64(i64)
func @main() -> i64 {
entry:
  %a = malloc 8
  store 8 5, %a
  %p = ptradd %a, 64
  store 8 6, %p
  %v = load i64 8, %p
  callext @print_i64(%v)
  %w = load i64 8, %a
  callext @print_i64(%w)
  ret 0
}
";
    let out = go(src, &cfg(Mode::Oblivious));
    assert_eq!(out.status, ExitStatus::Exited(0));
    assert_eq!(out.output, b"0\n5\n");
    assert_eq!(out.stats.oob_reads_redirected, 1);
    assert_eq!(out.stats.oob_writes_redirected, 1);
}

#[test]
fn saturated_store_at_bound_lands_in_padding() {
    // 24 bytes round to 32: a 4-byte store at bound-4 stays in padding
    let src = "func @main() -> i64 {
entry:
  %a = malloc 24
  %b = malloc 24
  %p = ptradd %a, 40
  store 4 -1, %p
  ret 0
}
";
    let p = instrument(&parse(src).unwrap(), &cfg(Mode::Saturate)).unwrap().program;
    let mut m = Machine::new(&p, &cfg(Mode::Saturate), Vec::new()).unwrap();
    let out = m.run();
    assert_eq!(out.status, ExitStatus::Exited(0));
    let objs = m.memory().objects();
    let (a, b) = (&objs[0], &objs[1]);
    assert_eq!(m.memory().read_bytes(a.base + 28..a.base + 32), vec![0xff; 4]);
    assert_eq!(m.memory().read_bytes(a.base..a.base + 24), vec![0; 24]);
    assert_eq!(m.memory().read_bytes(b.base..b.base + 32), vec![0; 32]);
}

#[test]
fn underflow_is_clamped_to_base() {
    let src = "extern @print_i64(i64)
func @main() -> i64 {
entry:
  %x = malloc 16
  %a = malloc 16
  %p = ptradd %a, -8
  store 8 3, %p
  %v = load i64 8, %a
  callext @print_i64(%v)
  ret 0
}
";
    let out = go(src, &cfg(Mode::Saturate));
    assert_eq!(out.output, b"3\n");
    assert_eq!(out.stats.corrections_underflow, 1);
}

#[test]
fn globals_are_checked_through_their_shadow() {
    let src = "extern @print_i64(i64)
global @g 24
global @h 8 = [2a 00 00 00 00 00 00 00]
func @main() -> i64 {
entry:
  %a = gaddr @g
  %p = ptradd %a, 32
  store 8 1, %p
  %b = gaddr @h
  %v = load i64 8, %b
  callext @print_i64(%v)
  ret 0
}
";
    for (mode, want) in [(Mode::Saturate, "42\n"), (Mode::Off, "1\n")] {
        let out = go(src, &cfg(mode));
        assert_eq!(String::from_utf8(out.output).unwrap(), want, "{mode}");
    }
    let p = instrument(&parse(src).unwrap(), &cfg(Mode::Saturate)).unwrap().program;
    let mut m = Machine::new(&p, &cfg(Mode::Saturate), Vec::new()).unwrap();
    m.run();
    let g = m.global_address("g").unwrap();
    let slot = m.global_address("__sma_g").unwrap();
    let stored = TaggedPointer(m.memory().read(slot, 8).unwrap());
    assert_eq!(buddy::exponent(stored), 5);
    assert_eq!(strip(stored), g);
}

#[test]
fn callee_overflow_is_saturated_against_caller_object() {
    let src = "extern @print_i64(i64)
func @fill(ptr %p, i64 %n) {
entry:
  br loop
loop:
  %i = phi i64 [entry, 0], [loop, %j]
  %q = ptradd %p, %i
  store 1 65, %q
  %j = add %i, 1
  %c = icmp slt %j, %n
  brcond %c, loop, done
done:
  ret
}
func @main() -> i64 {
entry:
  %a = malloc 8
  %b = malloc 8
  call @fill(%a, 24)
  %v = load i64 1, %b
  callext @print_i64(%v)
  ret 0
}
";
    let out = go(src, &cfg(Mode::Saturate));
    assert_eq!(out.output, b"0\n");
    assert_eq!(out.stats.oob_writes_redirected, 8);
    assert!(matches!(go(src, &cfg(Mode::FailStop)).status, ExitStatus::Trapped { .. }));
    assert_eq!(go(src, &cfg(Mode::Off)).output, b"65\n");
}

#[test]
fn address_tagging_drops_masks_on_a_load_loop() {
    let src = "func @main() -> i64 {
entry:
  %a = malloc 800
  br loop
loop:
  %i = phi i64 [entry, 0], [loop, %j]
  %s = phi i64 [entry, 0], [loop, %t]
  %o = mul %i, 8
  %p = ptradd %a, %o
  store 8 %i, %p
  %v = load i64 8, %p
  %t = add %s, %v
  %j = add %i, 1
  %c = icmp slt %j, 100
  brcond %c, loop, done
done:
  ret 0
}
";
    let plain = go(src, &cfg(Mode::Saturate));
    let tagged = go(src, &PassConfig::new(Mode::Saturate, CodecKind::Buddy, true));
    assert_eq!(plain.stats.checks_executed, tagged.stats.checks_executed);
    assert_eq!(plain.stats.masks_executed, 200);
    assert_eq!(tagged.stats.masks_executed, 0);
}

#[test]
fn tagged_dereference_without_tagging_segfaults() {
    let src = "func @main() -> i64 {
entry:
  %a = malloc 8
  store 8 1, %a
  ret 0
}
";
    let p = parse(src).unwrap();
    let out = run(&p, &cfg(Mode::Saturate), b"").unwrap();
    assert!(matches!(out.status, ExitStatus::Segfault(_)));
    let at = run(&p, &PassConfig::new(Mode::Saturate, CodecKind::Buddy, true), b"").unwrap();
    assert_eq!(at.status, ExitStatus::Exited(0));
}

#[test]
fn traps_in_every_mode() {
    let div = "func @main() -> i64 {\nentry:\n  %x = sdiv 1, 0\n  ret %x\n}\n";
    let spin = "func @main() {\nentry:\n  br entry\n}\n";
    for mode in Mode::ALL {
        let out = go(div, &cfg(mode));
        assert!(matches!(out.status, ExitStatus::Trapped { ref reason, .. } if reason == "arith"));
        let p = instrument(&parse(spin).unwrap(), &cfg(mode)).unwrap().program;
        let mut ec = ExecConfig::from(&cfg(mode));
        ec.budget = 1000;
        let out = Machine::new(&p, ec, Vec::new()).unwrap().run();
        assert!(matches!(out.status, ExitStatus::Trapped { ref reason, .. } if reason == "budget"));
        assert_eq!(out.stats.instrs_total, 1000);
    }
}

#[test]
fn intrinsics_and_exit() {
    let src = "extern @read_byte() -> i64
extern @putchar(i64)
extern @print_str(ptr)
extern @write(ptr, i64)
extern @exit(i64)
global @msg 4 = [68 69 0a 00]
func @main() -> i64 {
entry:
  br loop
loop:
  %c = callext @read_byte()
  %eof = icmp slt %c, 0
  brcond %eof, done, echo
echo:
  %u = sub %c, 32
  callext @putchar(%u)
  br loop
done:
  %m = gaddr @msg
  callext @print_str(%m)
  callext @write(%m, 2)
  callext @exit(7)
  ret 0
}
";
    for mode in Mode::ALL {
        let out = instrument_and_run(&parse(src).unwrap(), &cfg(mode), b"abc").unwrap();
        assert_eq!(out.status, ExitStatus::Exited(7));
        assert_eq!(out.output, b"ABChi\nhi");
    }
}

#[test]
fn unknown_extern_is_a_load_error() {
    let p = parse("extern @system(ptr)\nfunc @main() {\nentry:\n  ret\n}\n").unwrap();
    assert_eq!(
        Machine::new(&p, &cfg(Mode::Off), Vec::new()).err(),
        Some(LoadError::UnknownExtern("system".into()))
    );
    let p = parse("extern @putchar(ptr)\nfunc @main() {\nentry:\n  ret\n}\n").unwrap();
    assert!(matches!(
        Machine::new(&p, &cfg(Mode::Off), Vec::new()),
        Err(LoadError::Signature(_))
    ));
}

#[test]
fn free_rules() {
    let ok = "func @main() -> i64 {\nentry:\n  %a = malloc 8\n  free %a\n  %z = inttoptr 0\n  free %z\n  ret 0\n}\n";
    let double = "func @main() -> i64 {\nentry:\n  %a = malloc 8\n  free %a\n  free %a\n  ret 0\n}\n";
    for mode in Mode::ALL {
        assert_eq!(go(ok, &cfg(mode)).status, ExitStatus::Exited(0));
        assert!(matches!(
            go(double, &cfg(mode)).status,
            ExitStatus::Trapped { ref reason, .. } if reason == "invalid free"
        ));
    }
}

#[test]
fn recursion_and_depth_limit() {
    let fib = "extern @print_i64(i64)
func @fib(i64 %n) -> i64 {
entry:
  %small = icmp slt %n, 2
  brcond %small, base, rec
base:
  ret %n
rec:
  %a = sub %n, 1
  %b = sub %n, 2
  %x = call @fib(%a)
  %y = call @fib(%b)
  %s = add %x, %y
  ret %s
}
func @main() -> i64 {
entry:
  %r = call @fib(15)
  callext @print_i64(%r)
  ret 0
}
";
    assert_eq!(go(fib, &cfg(Mode::Saturate)).output, b"610\n");
    let forever = "func @f() {\nentry:\n  call @f()\n  ret\n}\nfunc @main() {\nentry:\n  call @f()\n  ret\n}\n";
    assert!(matches!(
        go(forever, &cfg(Mode::Saturate)).status,
        ExitStatus::Trapped { ref reason, .. } if reason == "stack overflow"
    ));
}

#[test]
fn determinism() {
    let a = go(OVERFLOW, &cfg(Mode::Saturate));
    let b = go(OVERFLOW, &cfg(Mode::Saturate));
    assert_eq!(a.status, b.status);
    assert_eq!(a.output, b.output);
    assert_eq!(a.stats, b.stats);
}

struct Recorder(Vec<StoreEvent>);

impl Tracer for Recorder {
    fn after_store(&mut self, event: &StoreEvent, _: &AddressSpace) {
        self.0.push(event.clone());
    }
}

#[test]
fn tracer_sees_checked_bounds() {
    let p = instrument(&parse(OVERFLOW).unwrap(), &cfg(Mode::Saturate)).unwrap().program;
    let mut m = Machine::new(&p, &cfg(Mode::Saturate), Vec::new()).unwrap();
    let mut rec = Recorder(Vec::new());
    m.run_traced(&mut rec);
    assert_eq!(rec.0.len(), 2);
    let a = &m.memory().objects()[0];
    let ev = &rec.0[1];
    assert_eq!(ev.bounds, Some(Bounds { base: a.base, bound: a.base + 32 }));
    assert_eq!(ev.addr, a.base + 24);
}
