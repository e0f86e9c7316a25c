use crate::asm::Mnemonic;
use crate::leakage::{LeakageClause, Observation, Tag};
use crate::machine::{MachineState, MicroOp, UopContext};

use super::{ModelParams, ALL1};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimplifyVariant {
    SemiTrivial,
    Trivial,
    /// Multiplication with both operands narrow.
    Narrow,
}

#[derive(Clone, Debug)]
pub struct Simplification {
    variant: SimplifyVariant,
    narrow_limit: u64,
}

impl Simplification {
    pub fn new(variant: SimplifyVariant, p: &ModelParams) -> Self {
        Simplification {
            variant,
            narrow_limit: p.narrow_cs_limit,
        }
    }
}

/// Whether `op(a, b)` is simplified under the semi-trivial rules.
pub(crate) fn semi_trivial(op: Mnemonic, a: u64, b: u64) -> bool {
    use Mnemonic as M;
    match op {
        M::Add | M::Shl | M::Shr | M::Sar => a == 0 || b == 0,
        M::Sub => b == 0 || a == b,
        M::Mul => a <= 1 || b <= 1,
        M::Udiv => a == 0 || b == 1 || a == b,
        M::And | M::Or => a == 0 || b == 0 || a == ALL1 || b == ALL1 || a == b,
        M::Xor => a == 0 || b == 0,
        _ => false,
    }
}

/// Whether `op(a, b)` is simplified under the trivial rules.
pub(crate) fn trivial(op: Mnemonic, a: u64, b: u64) -> bool {
    use Mnemonic as M;
    match op {
        M::Mul | M::And => a == 0 || b == 0,
        M::Or => a == ALL1 || b == ALL1,
        M::Udiv | M::Shl | M::Shr | M::Sar => a == 0,
        _ => false,
    }
}

impl LeakageClause for Simplification {
    fn name(&self) -> &str {
        match self.variant {
            SimplifyVariant::SemiTrivial => "cs",
            SimplifyVariant::Trivial => "cst",
            SimplifyVariant::Narrow => "csn",
        }
    }

    fn observe(&mut self, uop: &MicroOp, _: &UopContext<'_>, _: &MachineState) -> Option<Observation> {
        let MicroOp::Expr { op, operands: [a, b] } = *uop else {
            return None;
        };
        match self.variant {
            SimplifyVariant::SemiTrivial => {
                semi_trivial(op, a, b).then(|| Observation::new(Tag::Simplification, [op.code(), a, b]))
            }
            SimplifyVariant::Trivial => {
                trivial(op, a, b).then(|| Observation::new(Tag::Simplification, [op.code(), a, b]))
            }
            SimplifyVariant::Narrow => (op == Mnemonic::Mul && a < self.narrow_limit && b < self.narrow_limit)
                .then(|| Observation::new(Tag::Simplification, [op.code()])),
        }
    }

    fn box_clone(&self) -> Box<dyn LeakageClause> {
        Box::new(self.clone())
    }
}
