use std::collections::{HashMap, VecDeque};

use crate::asm::Mnemonic;
use crate::leakage::{LeakageClause, Observation, Tag};
use crate::machine::{MachineState, MicroOp, UopContext};

use super::ModelParams;

/// First payload value of a reuse hit on an address computation.
pub const ADDR_DISCRIMINANT: u64 = 0x100;
/// First payload value of a reuse hit on a load address.
pub const LOAD_DISCRIMINANT: u64 = 0x101;

const CACHING_OPS: [Mnemonic; 9] = [
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

/// Per-instruction n-way LRU memo table. Front of each set is the most
/// recently used key.
#[derive(Clone, Debug)]
struct MemoTable<K> {
    sets: HashMap<u64, VecDeque<K>>,
    ways: usize,
}

impl<K: PartialEq> MemoTable<K> {
    fn new(ways: usize) -> Self {
        MemoTable {
            sets: HashMap::new(),
            ways,
        }
    }

    /// Returns whether `key` hit; either way `key` ends up most recent.
    fn access(&mut self, pc: u64, key: K) -> bool {
        let set = self.sets.entry(pc).or_default();
        if let Some(i) = set.iter().position(|k| *k == key) {
            let k = set.remove(i).unwrap();
            set.push_front(k);
            true
        } else {
            set.push_front(key);
            set.truncate(self.ways);
            false
        }
    }
}

type AddrKey = (u64, Option<u64>, u8, i32);

#[derive(Clone, Debug)]
pub struct ComputationReuse {
    with_addresses: bool,
    exprs: MemoTable<[u64; 2]>,
    addrs: MemoTable<AddrKey>,
    loads: MemoTable<u64>,
}

impl ComputationReuse {
    pub fn new(with_addresses: bool, p: &ModelParams) -> Self {
        ComputationReuse {
            with_addresses,
            exprs: MemoTable::new(p.cr_ways),
            addrs: MemoTable::new(p.cr_ways),
            loads: MemoTable::new(p.cr_ways),
        }
    }
}

impl LeakageClause for ComputationReuse {
    fn name(&self) -> &str {
        if self.with_addresses {
            "cra"
        } else {
            "cr"
        }
    }

    fn observe(&mut self, uop: &MicroOp, cx: &UopContext<'_>, _: &MachineState) -> Option<Observation> {
        let hit = |payload: Vec<u64>| Some(Observation::new(Tag::Reuse, payload));
        match *uop {
            MicroOp::Expr { op, operands } if CACHING_OPS.contains(&op) => {
                if self.exprs.access(cx.pc, operands) {
                    return hit(vec![op.code(), operands[0], operands[1]]);
                }
            }
            MicroOp::Addr {
                base,
                index,
                scale,
                offset,
                ..
            } if self.with_addresses => {
                if self.addrs.access(cx.pc, (base, index, scale, offset)) {
                    return hit(vec![
                        ADDR_DISCRIMINANT,
                        base,
                        index.unwrap_or(0),
                        u64::from(scale),
                        offset as i64 as u64,
                    ]);
                }
            }
            MicroOp::Load { addr, .. } if self.with_addresses && self.loads.access(cx.pc, addr) => {
                return hit(vec![LOAD_DISCRIMINANT, addr]);
            }
            _ => {}
        }
        None
    }

    fn box_clone(&self) -> Box<dyn LeakageClause> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testutil::feed;

    fn expr(a: u64, b: u64) -> MicroOp {
        MicroOp::Expr {
            op: Mnemonic::Add,
            operands: [a, b],
        }
    }

    fn with_ways(ways: usize, addresses: bool) -> ComputationReuse {
        let p = ModelParams {
            cr_ways: ways,
            ..Default::default()
        };
        ComputationReuse::new(addresses, &p)
    }

    #[test]
    fn repeat_at_same_pc_hits() {
        let st = MachineState::default();
        let mut cr = with_ways(4, false);
        assert_eq!(feed(&mut cr, expr(5, 6), &st, 0x1000), None);
        assert_eq!(
            feed(&mut cr, expr(5, 6), &st, 0x1000),
            Some(Observation::new(Tag::Reuse, [Mnemonic::Add.code(), 5, 6]))
        );
        // Different pc, separate set.
        assert_eq!(feed(&mut cr, expr(5, 6), &st, 0x1004), None);
    }

    #[test]
    fn single_way_evicts() {
        let st = MachineState::default();
        let mut cr = with_ways(1, false);
        for (a, b) in [(1, 1), (2, 2), (1, 1)] {
            assert_eq!(feed(&mut cr, expr(a, b), &st, 0x1000), None);
        }
    }

    #[test]
    fn lru_refresh_on_hit() {
        let st = MachineState::default();
        let mut cr = with_ways(2, false);
        assert!(feed(&mut cr, expr(1, 1), &st, 0).is_none());
        assert!(feed(&mut cr, expr(2, 2), &st, 0).is_none());
        assert!(feed(&mut cr, expr(1, 1), &st, 0).is_some()); // 1 now MRU
        assert!(feed(&mut cr, expr(3, 3), &st, 0).is_none()); // evicts 2
        assert!(feed(&mut cr, expr(1, 1), &st, 0).is_some());
        assert!(feed(&mut cr, expr(2, 2), &st, 0).is_none());
    }

    #[test]
    fn non_caching_ops_ignored() {
        let st = MachineState::default();
        let mut cr = with_ways(4, false);
        let sltu = MicroOp::Expr {
            op: Mnemonic::Sltu,
            operands: [1, 2],
        };
        assert!(feed(&mut cr, sltu.clone(), &st, 0).is_none());
        assert!(feed(&mut cr, sltu, &st, 0).is_none());
    }

    #[test]
    fn address_reuse_only_with_cra() {
        let st = MachineState::default();
        let addr = MicroOp::Addr {
            base: 0x2000,
            index: None,
            scale: 1,
            offset: 0,
            effective: 0x2000,
        };
        let load = MicroOp::Load { addr: 0x2000, size: 8 };
        let mut cr = with_ways(4, false);
        let mut cra = with_ways(4, true);
        for _ in 0..2 {
            assert!(feed(&mut cr, addr.clone(), &st, 0x1000).is_none());
            assert!(feed(&mut cr, load.clone(), &st, 0x1000).is_none());
        }
        assert!(feed(&mut cra, addr.clone(), &st, 0x1000).is_none());
        assert!(feed(&mut cra, load.clone(), &st, 0x1000).is_none());
        assert_eq!(
            feed(&mut cra, addr, &st, 0x1000),
            Some(Observation::new(Tag::Reuse, [ADDR_DISCRIMINANT, 0x2000, 0, 1, 0]))
        );
        assert_eq!(
            feed(&mut cra, load, &st, 0x1000),
            Some(Observation::new(Tag::Reuse, [LOAD_DISCRIMINANT, 0x2000]))
        );
    }
}
