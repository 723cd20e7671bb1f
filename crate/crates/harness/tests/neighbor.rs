mod common;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use sma_core::codec::CodecKind;
use sma_core::exec::{ExitStatus, Machine};
use sma_core::ir::parse;
use sma_core::pass::{instrument, Mode, PassConfig};

fn codec() -> impl Strategy<Value = CodecKind> {
    prop_oneof![Just(CodecKind::Buddy), Just(CodecKind::Floating)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn saturated_writes_stay_in_their_object(seed in any::<u64>(), codec in codec(), at in any::<bool>()) {
        let src = common::overflow_program(&mut StdRng::seed_from_u64(seed));
        let program = parse(&src).unwrap();
        let cfg = PassConfig::new(Mode::Saturate, codec, at);
        let inst = instrument(&program, &cfg).unwrap();
        let mut m = Machine::new(&inst.program, &cfg, Vec::new()).unwrap();
        let mut oracle = common::NeighborOracle::default();
        let out = m.run_traced(&mut oracle);
        prop_assert_eq!(out.status, ExitStatus::Exited(0), "{}", src);
        prop_assert!(oracle.violations.is_empty(), "{:?}\n{}", oracle.violations, src);
    }

    #[test]
    fn oblivious_writes_never_touch_neighbours(seed in any::<u64>(), codec in codec()) {
        let src = common::overflow_program(&mut StdRng::seed_from_u64(seed));
        let program = parse(&src).unwrap();
        let cfg = PassConfig::new(Mode::Oblivious, codec, false);
        let inst = instrument(&program, &cfg).unwrap();
        let mut m = Machine::new(&inst.program, &cfg, Vec::new()).unwrap();
        let mut oracle = common::NeighborOracle::default();
        let out = m.run_traced(&mut oracle);
        prop_assert_eq!(out.status, ExitStatus::Exited(0), "{}", src);
        prop_assert!(oracle.violations.is_empty(), "{:?}\n{}", oracle.violations, src);
        prop_assert_eq!(out.stats.corrections(), 0);
    }
}
