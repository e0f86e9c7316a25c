use std::collections::VecDeque;

use crate::asm::Mnemonic;
use crate::leakage::{LeakageClause, Observation, Tag};
use crate::machine::{MachineState, MicroOp, UopContext};

use super::ModelParams;

/// Pairs narrow-operand operations of the same kind that are in flight
/// within a window of recent ticks.
#[derive(Clone, Debug)]
pub struct OperandPacking {
    window: VecDeque<(u64, Mnemonic)>,
    ctx_size: u64,
    narrow_limit: u64,
}

impl OperandPacking {
    pub fn new(p: &ModelParams) -> Self {
        OperandPacking {
            window: VecDeque::new(),
            ctx_size: p.op_ctx_size,
            narrow_limit: p.op_narrow_limit,
        }
    }
}

impl LeakageClause for OperandPacking {
    fn name(&self) -> &str {
        "op"
    }

    fn observe(&mut self, uop: &MicroOp, _: &UopContext<'_>, st: &MachineState) -> Option<Observation> {
        let MicroOp::Expr { op, operands: [a, b] } = *uop else {
            return None;
        };
        if a >= self.narrow_limit || b >= self.narrow_limit {
            return None;
        }
        let now = st.tick;
        while let Some(&(t, _)) = self.window.front() {
            if now.saturating_sub(t) >= self.ctx_size {
                self.window.pop_front();
            } else {
                break;
            }
        }
        if let Some(i) = self.window.iter().position(|&(_, o)| o == op) {
            self.window.remove(i);
            return Some(Observation::new(Tag::Packing, [op.code(), op.code()]));
        }
        self.window.push_back((now, op));
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

    fn expr(op: Mnemonic, a: u64, b: u64) -> MicroOp {
        MicroOp::Expr { op, operands: [a, b] }
    }

    fn at(tick: u64) -> MachineState {
        MachineState {
            tick,
            ..Default::default()
        }
    }

    fn pair_after(gap: u64) -> Option<Observation> {
        let mut c = OperandPacking::new(&ModelParams::default());
        assert_eq!(feed(&mut c, expr(Mnemonic::Add, 1, 2), &at(10), 0), None);
        feed(&mut c, expr(Mnemonic::Add, 3, 4), &at(10 + gap), 0)
    }

    #[test]
    fn pairs_within_window() {
        let add = Mnemonic::Add.code();
        assert_eq!(pair_after(40), Some(Observation::new(Tag::Packing, [add, add])));
    }

    #[test]
    fn stale_entries_are_evicted() {
        assert_eq!(pair_after(300), None);
        assert_eq!(pair_after(200), None);
        assert!(pair_after(199).is_some());
    }

    #[test]
    fn wide_operands_bypass_window() {
        let mut c = OperandPacking::new(&ModelParams::default());
        assert_eq!(feed(&mut c, expr(Mnemonic::Add, 100, 2), &at(1), 0), None);
        assert_eq!(feed(&mut c, expr(Mnemonic::Add, 1, 2), &at(2), 0), None);
        // 16 is not narrow: operands must be strictly below the limit.
        assert_eq!(feed(&mut c, expr(Mnemonic::Add, 16, 2), &at(3), 0), None);
        assert!(feed(&mut c, expr(Mnemonic::Add, 15, 15), &at(3), 0).is_some());
    }

    #[test]
    fn pairing_consumes_the_entry() {
        let mut c = OperandPacking::new(&ModelParams::default());
        let e = expr(Mnemonic::Xor, 1, 1);
        assert!(feed(&mut c, e.clone(), &at(1), 0).is_none());
        assert!(feed(&mut c, e.clone(), &at(2), 0).is_some());
        assert!(feed(&mut c, e.clone(), &at(3), 0).is_none());
        assert!(feed(&mut c, expr(Mnemonic::Add, 1, 1), &at(4), 0).is_none());
        assert!(feed(&mut c, e, &at(5), 0).is_some());
    }
}
