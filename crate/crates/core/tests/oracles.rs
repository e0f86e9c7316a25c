//! Independent oracles for campaign results and individual clauses.

mod common;

use std::collections::HashSet;

use uleak::asm::{parse_program, Mnemonic};
use uleak::corpus::{corpus_entry, load_corpus};
use uleak::harness::{
    brute_force_oracle, gen_input, run_campaign, run_input, InputAssignment, Interface, OracleError, Outcome,
    SplitMix64,
};
use uleak::leakage::{first_divergence, LeakageClause, LeakageTrace, Observation, Tag};
use uleak::machine::{MachineState, MicroOp, UopContext};
use uleak::models::{LeakageConfig, LeakageModel};
use uleak::speculation::{explore, PredictorConfig, PredictorModel, SpecConfig};

fn cfg(l: LeakageModel, p: PredictorModel) -> (LeakageConfig, PredictorConfig) {
    (LeakageConfig::new(l), PredictorConfig::new(p))
}

#[test]
fn oracle_examples() {
    let e = corpus_entry("ct_swap").unwrap();
    let public = gen_input(&mut SplitMix64::new(3), &e.interface);
    let (l, p) = cfg(LeakageModel::Ct, PredictorModel::Seq);
    assert!(!brute_force_oracle(&e.program, &e.interface, &public, &l, &p).unwrap());
    let (l, p) = cfg(LeakageModel::Ss, PredictorModel::Seq);
    assert!(brute_force_oracle(&e.program, &e.interface, &public, &l, &p).unwrap());

    let m = corpus_entry("memcpy_pub").unwrap();
    let public = gen_input(&mut SplitMix64::new(3), &m.interface);
    for l in LeakageModel::ALL {
        let (l, p) = cfg(l, PredictorModel::Pht);
        assert!(!brute_force_oracle(&m.program, &m.interface, &public, &l, &p).unwrap());
    }
}

#[test]
fn oracle_refuses_large_secret_spaces() {
    let iface = Interface::parse("[[input]]\nname = 'k'\nsecrecy = 'secret'\nlength = 3\nregister = 'r1'\nbits = 17\n")
        .unwrap();
    let p = parse_program("halt").unwrap();
    let public = gen_input(&mut SplitMix64::new(0), &iface);
    let (l, pr) = cfg(LeakageModel::Ct, PredictorModel::Seq);
    assert_eq!(
        brute_force_oracle(&p, &iface, &public, &l, &pr),
        Err(OracleError::TooLarge(17))
    );
}

#[test]
fn every_corpus_leak_replays() {
    for e in load_corpus() {
        for cell in &e.manifest.cells {
            let c = e.campaign(cell.leakage, cell.predictor);
            let Outcome::Leak(r) = run_campaign(&e.program, &e.name, &e.interface, &c).outcome else {
                continue;
            };
            let trace = |i: &InputAssignment| {
                run_input(&e.program, &e.interface, i, &c.leakage, &c.predictor, None)
                    .unwrap()
                    .trace
            };
            assert_eq!(
                first_divergence(&trace(&r.a), &trace(&r.b)),
                Some(r.divergence.clone()),
                "{} {} {}",
                e.name,
                cell.leakage,
                cell.predictor
            );
            let round = InputAssignment::from_hex(&e.interface, &r.a.to_hex()).unwrap();
            assert_eq!(round, r.a);
        }
    }
}

fn swap_outputs(name: &str, f: &[u8], g: &[u8], b: u8) -> (Vec<u8>, Vec<u8>) {
    let e = corpus_entry(name).unwrap();
    let input = InputAssignment {
        values: vec![f.to_vec(), g.to_vec(), vec![b]],
    };
    let (l, p) = cfg(LeakageModel::Ct, PredictorModel::Seq);
    let st = run_input(&e.program, &e.interface, &input, &l, &p, None).unwrap().state;
    let read = |base: u64| {
        let mut out = vec![0u8; 40];
        st.mem.read_bytes(base, &mut out);
        out
    };
    (read(0x2000), read(0x2100))
}

#[test]
fn both_swaps_compute_a_conditional_swap() {
    let mut rng = SplitMix64::new(21);
    for _ in 0..50 {
        let mut f = vec![0u8; 40];
        let mut g = vec![0u8; 40];
        rng.fill(&mut f);
        rng.fill(&mut g);
        for name in ["ct_swap", "branchy_swap"] {
            assert_eq!(swap_outputs(name, &f, &g, 0), (f.clone(), g.clone()), "{name}");
            assert_eq!(swap_outputs(name, &f, &g, 1), (g.clone(), f.clone()), "{name}");
        }
    }
}

#[test]
fn generated_inputs_are_uniform_bytes() {
    let iface = Interface::parse("[[input]]\nname = 'x'\nsecrecy = 'public'\nlength = 64\naddress = 0x2000\n").unwrap();
    let mut counts = [0u64; 256];
    for case in 0..400 {
        for &b in &gen_input(&mut SplitMix64::for_case(1, case, 0), &iface).values[0] {
            counts[b as usize] += 1;
        }
    }
    let n: u64 = counts.iter().sum();
    let expect = n as f64 / 256.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    // 255 degrees of freedom; 330.5 is the 0.999 quantile.
    assert!(chi2 < 330.5, "chi-square {chi2}");
}

/// Computation reuse with an unbounded memo: a hit is any repeat of
/// (pc, op, operands) among caching operations.
#[derive(Clone, Default)]
struct MapOracle {
    seen: HashSet<(u64, u64, [u64; 2])>,
}

const CACHING: [Mnemonic; 9] = [
    Mnemonic::Add,
    Mnemonic::Sub,
    Mnemonic::Mul,
    Mnemonic::And,
    Mnemonic::Or,
    Mnemonic::Xor,
    Mnemonic::Shl,
    Mnemonic::Shr,
    Mnemonic::Sar,
];

impl LeakageClause for MapOracle {
    fn name(&self) -> &str {
        "cr-map"
    }

    fn observe(&mut self, uop: &MicroOp, cx: &UopContext<'_>, _: &MachineState) -> Option<Observation> {
        let MicroOp::Expr { op, operands } = *uop else {
            return None;
        };
        (CACHING.contains(&op) && !self.seen.insert((cx.pc, op.code(), operands)))
            .then(|| Observation::new(Tag::Reuse, [op.code(), operands[0], operands[1]]))
    }

    fn box_clone(&self) -> Box<dyn LeakageClause> {
        Box::new(self.clone())
    }
}

fn run_with(
    program: &uleak::asm::Program,
    iface: &Interface,
    input: &InputAssignment,
    clause: Box<dyn LeakageClause>,
) -> LeakageTrace {
    let mut st = iface.initial_state(program, input).unwrap();
    let seq = PredictorConfig::new(PredictorModel::Seq);
    let (trace, term) = explore(
        program,
        &mut st,
        clause,
        seq.build(),
        &SpecConfig::default(),
        &iface.initialized,
        10_000,
    );
    assert!(term.is_halted(), "{term:?}");
    trace
}

#[test]
fn unbounded_reuse_matches_map_oracle() {
    let iface = common::random_iface();
    let mut rng = SplitMix64::new(404);
    let mut hits = 0;
    for case in 0..300 {
        let iterations = 1 + rng.next_u64() % 4;
        let src = common::random_loop_source(&mut rng, iterations);
        let program = parse_program(&src).unwrap();
        let input = gen_input(&mut SplitMix64::for_case(404, case, 0), &iface);
        let mut unbounded = LeakageConfig::new(LeakageModel::Cr);
        unbounded.set_param("cr_ways", "1000000").unwrap();
        let got = run_with(&program, &iface, &input, unbounded.build());
        let want = run_with(&program, &iface, &input, Box::new(MapOracle::default()));
        assert_eq!(got, want, "{src}");
        hits += want.len();

        // Every LRU hit with few ways is also an unbounded hit.
        let mut small = LeakageConfig::new(LeakageModel::Cr);
        small.set_param("cr_ways", "1").unwrap();
        let few = run_with(&program, &iface, &input, small.build());
        let mut it = want.iter();
        assert!(few.iter().all(|o| it.any(|w| w == o)), "{src}");
    }
    assert!(hits > 100, "only {hits} reuse hits generated");
}
