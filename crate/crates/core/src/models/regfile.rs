use crate::asm::Reg;
use crate::leakage::{LeakageClause, Observation, Tag};
use crate::machine::{MachineState, MicroOp, UopContext};

use super::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegFileVariant {
    /// Another register already holds the written value.
    Equal,
    /// As `Equal`, restricted to zero.
    Zero,
    /// Written value and some other register are both narrow.
    Narrow,
}

#[derive(Clone, Debug)]
pub struct RegFileCompression {
    variant: RegFileVariant,
    narrow_limit: u64,
}

impl RegFileCompression {
    pub fn new(variant: RegFileVariant, p: &ModelParams) -> Self {
        RegFileCompression {
            variant,
            narrow_limit: p.narrow_rfc_limit,
        }
    }
}

impl LeakageClause for RegFileCompression {
    fn name(&self) -> &str {
        match self.variant {
            RegFileVariant::Equal => "rfc",
            RegFileVariant::Zero => "rfc0",
            RegFileVariant::Narrow => "nrfc",
        }
    }

    fn observe(&mut self, uop: &MicroOp, _: &UopContext<'_>, st: &MachineState) -> Option<Observation> {
        let MicroOp::Write { reg, value } = *uop else {
            return None;
        };
        let mut others = Reg::all().filter(|&r| r != reg).map(|r| st.reg(r));
        let reg_id = reg.index() as u64;
        match self.variant {
            RegFileVariant::Equal => others
                .any(|v| v == value)
                .then(|| Observation::new(Tag::RegCompression, [reg_id, value])),
            RegFileVariant::Zero => {
                (value == 0 && others.any(|v| v == 0)).then(|| Observation::new(Tag::RegCompression, [reg_id, value]))
            }
            RegFileVariant::Narrow => {
                let lim = self.narrow_limit;
                (value < lim && others.any(|v| v < lim)).then(|| Observation::new(Tag::RegCompression, [reg_id]))
            }
        }
    }

    fn box_clone(&self) -> Box<dyn LeakageClause> {
        Box::new(self.clone())
    }
}
