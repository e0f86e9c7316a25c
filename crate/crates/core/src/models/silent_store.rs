use crate::leakage::{LeakageClause, Observation, Tag};
use crate::machine::{MachineState, MicroOp, Region, UopContext};

use super::InitTracker;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SilentStoreVariant {
    /// Any store whose value equals the current memory contents.
    Plain,
    /// Additionally, every target byte must already be initialized.
    Initialized,
    /// Initialized, and both stored and current value are zero.
    InitializedZero,
}

#[derive(Clone, Debug)]
pub struct SilentStore {
    variant: SilentStoreVariant,
    init: InitTracker,
}

impl SilentStore {
    pub fn new(variant: SilentStoreVariant) -> Self {
        SilentStore {
            variant,
            init: InitTracker::default(),
        }
    }
}

impl LeakageClause for SilentStore {
    fn name(&self) -> &str {
        match self.variant {
            SilentStoreVariant::Plain => "ss",
            SilentStoreVariant::Initialized => "ssi",
            SilentStoreVariant::InitializedZero => "ssi0",
        }
    }

    fn on_start(&mut self, initialized: &[Region]) {
        self.init.seed(initialized);
    }

    fn observe(&mut self, uop: &MicroOp, _: &UopContext<'_>, st: &MachineState) -> Option<Observation> {
        let MicroOp::Store { addr, size, value } = *uop else {
            return None;
        };
        let current = st.mem.read(addr, size);
        let was_init = self.init.all_init(addr, u64::from(size));
        self.init.mark(addr, u64::from(size));
        let silent = match self.variant {
            SilentStoreVariant::Plain => value == current,
            SilentStoreVariant::Initialized => was_init && value == current,
            SilentStoreVariant::InitializedZero => was_init && value == 0 && current == 0,
        };
        silent.then(|| Observation::new(Tag::SilentStore, [addr, value]))
    }

    fn box_clone(&self) -> Box<dyn LeakageClause> {
        Box::new(self.clone())
    }
}
