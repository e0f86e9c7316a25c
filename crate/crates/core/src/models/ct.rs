use crate::leakage::{LeakageClause, Observation, Tag};
use crate::machine::{MachineState, MicroOp, UopContext};

/// Leaks memory addresses and the resolved control-flow target.
#[derive(Clone, Debug, Default)]
pub struct ConstantTime;

impl LeakageClause for ConstantTime {
    fn name(&self) -> &str {
        "ct"
    }

    fn observe(&mut self, uop: &MicroOp, cx: &UopContext<'_>, _: &MachineState) -> Option<Observation> {
        match *uop {
            MicroOp::Load { addr, .. } => Some(Observation::new(Tag::Load, [addr])),
            MicroOp::Store { addr, .. } => Some(Observation::new(Tag::Store, [addr])),
            MicroOp::Jump { target, taken } => {
                let next = if taken { target } else { cx.next_pc() };
                Some(Observation::new(Tag::Jump, [next]))
            }
            _ => None,
        }
    }

    fn box_clone(&self) -> Box<dyn LeakageClause> {
        Box::new(self.clone())
    }
}
