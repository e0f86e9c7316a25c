mod common;

use proptest::prelude::*;

use uleak::asm::{disassemble, parse_program};
use uleak::corpus::load_corpus;
use uleak::harness::{
    gen_input, low_equivalent, mutate_secrets, run_input, InputAssignment, Interface, Secrecy, SplitMix64,
};
use uleak::leakage::LeakageTrace;
use uleak::models::{bdi_size, fpc_size, LeakageConfig, LeakageModel, LINE_BYTES};
use uleak::speculation::{PredictorConfig, PredictorModel};

fn interfaces() -> Vec<Interface> {
    let mut v: Vec<Interface> = load_corpus().into_iter().map(|e| e.interface).collect();
    v.push(common::random_iface());
    v
}

proptest! {
    #[test]
    fn mutation_preserves_public_bytes(seed: u64, case in 0u64..1000, which in 0usize..12) {
        let ifaces = interfaces();
        let iface = &ifaces[which % ifaces.len()];
        let a = gen_input(&mut SplitMix64::for_case(seed, case, 0), iface);
        let b = mutate_secrets(&a, iface, &mut SplitMix64::for_case(seed, case, 1));
        prop_assert!(low_equivalent(&a, &b, iface));
        for (d, (va, vb)) in iface.inputs.iter().zip(a.values.iter().zip(&b.values)) {
            prop_assert_eq!(va.len(), d.length);
            prop_assert_eq!(vb.len(), d.length);
            if d.secrecy == Secrecy::Public {
                prop_assert_eq!(va, vb);
            }
        }
    }

    #[test]
    fn generated_values_respect_bit_limits(seed: u64, which in 0usize..12) {
        let ifaces = interfaces();
        let iface = &ifaces[which % ifaces.len()];
        let a = gen_input(&mut SplitMix64::new(seed), iface);
        for (d, v) in iface.inputs.iter().zip(&a.values) {
            let free = d.free_bits();
            for bit in free..(8 * d.length as u32) {
                prop_assert_eq!(v[(bit / 8) as usize] >> (bit % 8) & 1, 0);
            }
        }
    }

    #[test]
    fn hex_round_trip(seed: u64, which in 0usize..12) {
        let ifaces = interfaces();
        let iface = &ifaces[which % ifaces.len()];
        let a = gen_input(&mut SplitMix64::new(seed), iface);
        prop_assert_eq!(InputAssignment::from_hex(iface, &a.to_hex()).unwrap(), a);
    }

    #[test]
    fn compressed_sizes_are_bounded(line in proptest::collection::vec(any::<u8>(), LINE_BYTES)) {
        let f = fpc_size(&line).unwrap();
        prop_assert!((12..=16 * 35).contains(&f));
        let b = bdi_size(&line).unwrap();
        prop_assert!([1, 8, 16, 20, 24, 34, 36, 40, 64].contains(&b));
    }

    #[test]
    fn sparse_lines_compress(words in proptest::collection::vec(prop_oneof![Just(0u32), 0u32..8, any::<u32>()], 16)) {
        let line: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
        let zeros = words.iter().filter(|&&w| w == 0).count() as u32;
        prop_assert!(fpc_size(&line).unwrap() <= (16 - zeros) * 35 + zeros * 6);
    }

    #[test]
    fn wrong_line_length_is_rejected(len in 0usize..200) {
        prop_assume!(len != LINE_BYTES);
        let line = vec![0u8; len];
        prop_assert!(fpc_size(&line).is_err());
        prop_assert!(bdi_size(&line).is_err());
    }

    #[test]
    fn disassembly_reassembles(seed: u64) {
        let (_, p) = common::random_program(&mut SplitMix64::new(seed));
        let again = parse_program(&disassemble(&p)).unwrap();
        prop_assert_eq!(again.instructions, p.instructions);
        prop_assert_eq!(again.entry, p.entry);
    }

    #[test]
    fn runs_are_deterministic_and_dumps_round_trip(seed: u64, l in 0usize..18, p in 0usize..6) {
        let iface = common::random_iface();
        let (_, program) = common::random_program(&mut SplitMix64::new(seed));
        let input = gen_input(&mut SplitMix64::new(seed ^ 1), &iface);
        let lc = LeakageConfig::new(LeakageModel::ALL[l]);
        let pc = PredictorConfig::new(PredictorModel::ALL[p]);
        let a = run_input(&program, &iface, &input, &lc, &pc, None).unwrap();
        let b = run_input(&program, &iface, &input, &lc, &pc, None).unwrap();
        prop_assert_eq!(&a.trace, &b.trace);
        prop_assert_eq!(&a.state, &b.state);
        prop_assert_eq!(LeakageTrace::parse_dump(&a.trace.dump()).unwrap(), a.trace);
    }
}

#[test]
fn corpus_programs_reassemble() {
    for e in load_corpus() {
        let again = parse_program(&disassemble(&e.program)).unwrap();
        assert_eq!(again.instructions, e.program.instructions, "{}", e.name);
        assert_eq!(again.entry, e.program.entry, "{}", e.name);
    }
}
