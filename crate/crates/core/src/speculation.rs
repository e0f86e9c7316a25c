//! Always-mispredict speculation: prediction clauses and the explorer that
//! runs each mispredicted path under a checkpoint and squashes it.

use std::collections::VecDeque;
use std::fmt;
use std::time::Instant;

use crate::asm::{Group, Mnemonic, Program, Reg};
use crate::leakage::{Collector, LeakageClause, LeakageTrace};
use crate::machine::{
    commit, evaluate, Effects, EventSink, ExecError, ExecErrorKind, MachineState, MicroOp, Region, StepOutcome,
    Termination, UopContext,
};
use crate::models::{parse_u64, ParamError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Prediction {
    Pc(u64),
    Reg(Reg, u64),
    Mem { addr: u64, size: u8, value: u64 },
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Prediction::Pc(t) => write!(f, "pc {t:#x}"),
            Prediction::Reg(r, v) => write!(f, "reg r{} {v:#x}", r.index()),
            Prediction::Mem { addr, size, value } => write!(f, "mem [{addr:#x}]{size} {value:#x}"),
        }
    }
}

/// A prediction clause: stateful handlers mapping micro-ops to predicted
/// values. Handlers read the machine state but never change it.
pub trait PredictionClause: Send {
    fn name(&self) -> &str;

    fn predict(&mut self, uop: &MicroOp, cx: &UopContext<'_>, state: &MachineState) -> Vec<Prediction>;

    fn box_clone(&self) -> Box<dyn PredictionClause>;
}

impl Clone for Box<dyn PredictionClause> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Never predicts: plain sequential execution.
#[derive(Clone, Debug, Default)]
pub struct Sequential;

impl PredictionClause for Sequential {
    fn name(&self) -> &str {
        "seq"
    }

    fn predict(&mut self, _: &MicroOp, _: &UopContext<'_>, _: &MachineState) -> Vec<Prediction> {
        Vec::new()
    }

    fn box_clone(&self) -> Box<dyn PredictionClause> {
        Box::new(self.clone())
    }
}

/// Conditional branch direction misprediction.
#[derive(Clone, Debug, Default)]
pub struct PatternHistory;

impl PredictionClause for PatternHistory {
    fn name(&self) -> &str {
        "pht"
    }

    fn predict(&mut self, uop: &MicroOp, cx: &UopContext<'_>, _: &MachineState) -> Vec<Prediction> {
        match *uop {
            MicroOp::Jump { target, taken } if cx.mnemonic().is_conditional() => {
                vec![Prediction::Pc(if taken { cx.next_pc() } else { target })]
            }
            _ => Vec::new(),
        }
    }

    fn box_clone(&self) -> Box<dyn PredictionClause> {
        Box::new(self.clone())
    }
}

/// Straight-line speculation past any jump.
#[derive(Clone, Debug, Default)]
pub struct StraightLine;

impl PredictionClause for StraightLine {
    fn name(&self) -> &str {
        "sls"
    }

    fn predict(&mut self, uop: &MicroOp, cx: &UopContext<'_>, _: &MachineState) -> Vec<Prediction> {
        match uop {
            MicroOp::Jump { .. } => vec![Prediction::Pc(cx.next_pc())],
            _ => Vec::new(),
        }
    }

    fn box_clone(&self) -> Box<dyn PredictionClause> {
        Box::new(self.clone())
    }
}

/// Loads bypass older stores to the same location and read the value the
/// store overwrote.
#[derive(Clone, Debug)]
pub struct StoreToLoad {
    buffer: VecDeque<(u64, u8, u64)>,
    size: usize,
}

impl StoreToLoad {
    pub fn new(size: usize) -> Self {
        StoreToLoad {
            buffer: VecDeque::new(),
            size,
        }
    }
}

impl PredictionClause for StoreToLoad {
    fn name(&self) -> &str {
        "stl"
    }

    fn predict(&mut self, uop: &MicroOp, _: &UopContext<'_>, st: &MachineState) -> Vec<Prediction> {
        match *uop {
            MicroOp::Store { addr, size, .. } => {
                self.buffer.push_back((addr, size, st.mem.read(addr, size)));
                if self.buffer.len() > self.size {
                    self.buffer.pop_front();
                }
                Vec::new()
            }
            MicroOp::Load { addr, size } => self
                .buffer
                .iter()
                .filter(|&&(a, s, _)| a == addr && s == size)
                .map(|&(addr, size, value)| Prediction::Mem { addr, size, value })
                .collect(),
            _ => Vec::new(),
        }
    }

    fn box_clone(&self) -> Box<dyn PredictionClause> {
        Box::new(self.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RsbVariant {
    /// Fixed ring; overflow overwrites the oldest slot, underflow wraps.
    Circular,
    /// Bounded stack; overflow drops the oldest entry, underflow predicts
    /// nothing.
    Bottom,
}

/// Return stack buffer: a shadow stack of return addresses.
#[derive(Clone, Debug)]
pub struct ReturnStack {
    variant: RsbVariant,
    size: usize,
    ring: Vec<u64>,
    idx: usize,
    stack: VecDeque<u64>,
}

impl ReturnStack {
    pub fn new(variant: RsbVariant, size: usize) -> Self {
        ReturnStack {
            variant,
            size,
            ring: vec![0; size],
            idx: 0,
            stack: VecDeque::new(),
        }
    }
}

impl PredictionClause for ReturnStack {
    fn name(&self) -> &str {
        match self.variant {
            RsbVariant::Circular => "rsb-circ",
            RsbVariant::Bottom => "rsb-bot",
        }
    }

    fn predict(&mut self, uop: &MicroOp, cx: &UopContext<'_>, _: &MachineState) -> Vec<Prediction> {
        if !matches!(uop, MicroOp::Jump { .. }) {
            return Vec::new();
        }
        match (cx.group(), self.variant) {
            (Group::Call, RsbVariant::Circular) => {
                self.ring[self.idx] = cx.next_pc();
                self.idx = (self.idx + 1) % self.size;
                Vec::new()
            }
            (Group::Call, RsbVariant::Bottom) => {
                self.stack.push_back(cx.next_pc());
                if self.stack.len() > self.size {
                    self.stack.pop_front();
                }
                Vec::new()
            }
            (Group::Ret, RsbVariant::Circular) => {
                self.idx = (self.idx + self.size - 1) % self.size;
                vec![Prediction::Pc(self.ring[self.idx])]
            }
            (Group::Ret, RsbVariant::Bottom) => self.stack.pop_back().map(Prediction::Pc).into_iter().collect(),
            _ => Vec::new(),
        }
    }

    fn box_clone(&self) -> Box<dyn PredictionClause> {
        Box::new(self.clone())
    }
}

/// Exploration parameters shared by all prediction clauses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecConfig {
    /// Maximum instructions executed on one speculative path.
    pub window: u64,
    /// Predictions fire only at depths below this; 0 disables speculation.
    pub max_nesting: u32,
    pub rsb_size: usize,
    pub stl_size: usize,
    /// Restore leakage-clause state when a path is squashed.
    pub rollback: bool,
}

impl Default for SpecConfig {
    fn default() -> Self {
        SpecConfig {
            window: 64,
            max_nesting: 1,
            rsb_size: 16,
            stl_size: 16,
            rollback: false,
        }
    }
}

impl SpecConfig {
    pub const NAMES: [&'static str; 5] = ["window", "max_nesting", "rsb_size", "stl_size", "rollback"];

    pub fn get(&self, name: &str) -> Option<String> {
        Some(match name {
            "window" => self.window.to_string(),
            "max_nesting" => self.max_nesting.to_string(),
            "rsb_size" => self.rsb_size.to_string(),
            "stl_size" => self.stl_size.to_string(),
            "rollback" => self.rollback.to_string(),
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str, value: &str) -> Result<(), ParamError> {
        let invalid = |reason: &str| ParamError::Invalid {
            name: name.into(),
            value: value.into(),
            reason: reason.into(),
        };
        let positive = |v: u64| {
            if v == 0 {
                Err(invalid("must be at least 1"))
            } else {
                Ok(v)
            }
        };
        match name {
            "window" => self.window = positive(parse_u64(name, value)?)?,
            "max_nesting" => {
                self.max_nesting = u32::try_from(parse_u64(name, value)?).map_err(|_| invalid("too large"))?
            }
            "rsb_size" => {
                self.rsb_size = usize::try_from(positive(parse_u64(name, value)?)?).map_err(|_| invalid("too large"))?
            }
            "stl_size" => {
                self.stl_size = usize::try_from(positive(parse_u64(name, value)?)?).map_err(|_| invalid("too large"))?
            }
            "rollback" => {
                self.rollback = match value.trim() {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(invalid("expected true or false")),
                }
            }
            _ => {
                return Err(ParamError::Unknown {
                    name: name.into(),
                    owner: "speculation".into(),
                })
            }
        }
        Ok(())
    }
}

/// Registry of the built-in prediction clauses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PredictorModel {
    Seq,
    Pht,
    Sls,
    Stl,
    RsbCirc,
    RsbBot,
}

impl PredictorModel {
    pub const ALL: [PredictorModel; 6] = [
        PredictorModel::Seq,
        PredictorModel::Pht,
        PredictorModel::Sls,
        PredictorModel::Stl,
        PredictorModel::RsbCirc,
        PredictorModel::RsbBot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PredictorModel::Seq => "seq",
            PredictorModel::Pht => "pht",
            PredictorModel::Sls => "sls",
            PredictorModel::Stl => "stl",
            PredictorModel::RsbCirc => "rsb-circ",
            PredictorModel::RsbBot => "rsb-bot",
        }
    }

    pub fn from_name(name: &str) -> Option<PredictorModel> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn description(self) -> &'static str {
        match self {
            PredictorModel::Seq => "no speculation",
            PredictorModel::Pht => "conditional branch direction misprediction",
            PredictorModel::Sls => "straight-line speculation past jumps",
            PredictorModel::Stl => "loads bypass older stores to the same location",
            PredictorModel::RsbCirc => "circular return stack buffer",
            PredictorModel::RsbBot => "return stack buffer that stops on underflow",
        }
    }

    /// Parameters this clause accepts as overrides.
    pub fn params(self) -> &'static [&'static str] {
        const COMMON: [&str; 3] = ["window", "max_nesting", "rollback"];
        match self {
            PredictorModel::Seq => &[],
            PredictorModel::Pht | PredictorModel::Sls => &COMMON,
            PredictorModel::Stl => &["window", "max_nesting", "rollback", "stl_size"],
            PredictorModel::RsbCirc | PredictorModel::RsbBot => &["window", "max_nesting", "rollback", "rsb_size"],
        }
    }

    pub fn build(self, c: &SpecConfig) -> Box<dyn PredictionClause> {
        match self {
            PredictorModel::Seq => Box::new(Sequential),
            PredictorModel::Pht => Box::new(PatternHistory),
            PredictorModel::Sls => Box::new(StraightLine),
            PredictorModel::Stl => Box::new(StoreToLoad::new(c.stl_size)),
            PredictorModel::RsbCirc => Box::new(ReturnStack::new(RsbVariant::Circular, c.rsb_size)),
            PredictorModel::RsbBot => Box::new(ReturnStack::new(RsbVariant::Bottom, c.rsb_size)),
        }
    }
}

impl fmt::Display for PredictorModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A registered prediction clause plus exploration parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictorConfig {
    pub model: PredictorModel,
    pub spec: SpecConfig,
}

impl PredictorConfig {
    pub fn new(model: PredictorModel) -> Self {
        PredictorConfig {
            model,
            spec: SpecConfig::default(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        PredictorModel::from_name(name).map(PredictorConfig::new)
    }

    pub fn set_param(&mut self, name: &str, value: &str) -> Result<(), ParamError> {
        if !self.model.params().contains(&name) {
            return Err(ParamError::Unknown {
                name: name.into(),
                owner: format!("predictor '{}'", self.model),
            });
        }
        self.spec.set(name, value)
    }

    pub fn build(&self) -> Box<dyn PredictionClause> {
        self.model.build(&self.spec)
    }

    pub fn overrides(&self) -> Vec<String> {
        let defaults = SpecConfig::default();
        self.model
            .params()
            .iter()
            .filter(|n| self.spec.get(n) != defaults.get(n))
            .map(|n| format!("{n}={}", self.spec.get(n).unwrap()))
            .collect()
    }
}

/// Counters describing one exploration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SpecStats {
    /// Speculative paths started.
    pub paths: u64,
    /// Instructions executed on speculative paths.
    pub spec_steps: u64,
    /// Most instructions executed on any single path.
    pub longest_path: u64,
}

struct Checkpoint {
    regs: [u64; 16],
    pc: u64,
    tick: u64,
    halted: bool,
    journal: usize,
}

/// Drives a program with one leakage clause and one prediction clause
/// attached, exploring every surviving misprediction depth-first.
pub struct Explorer<'p> {
    program: &'p Program,
    collector: Collector,
    predictor: Box<dyn PredictionClause>,
    config: SpecConfig,
    stats: SpecStats,
    deadline: Option<Instant>,
    timed_out: bool,
}

impl<'p> Explorer<'p> {
    pub fn new(
        program: &'p Program,
        leakage: Box<dyn LeakageClause>,
        predictor: Box<dyn PredictionClause>,
        config: SpecConfig,
    ) -> Self {
        Explorer {
            program,
            collector: Collector::new(leakage),
            predictor,
            config,
            stats: SpecStats::default(),
            deadline: None,
            timed_out: false,
        }
    }

    /// Makes `run` give up once `deadline` passes.
    pub fn set_deadline(&mut self, deadline: Instant) {
        self.deadline = Some(deadline);
    }

    pub fn timed_out(&self) -> bool {
        self.timed_out
    }

    pub fn start(&mut self, initialized: &[Region]) {
        self.collector.clause.on_start(initialized);
    }

    pub fn stats(&self) -> SpecStats {
        self.stats
    }

    pub fn trace(&self) -> &LeakageTrace {
        &self.collector.trace
    }

    pub fn into_trace(self) -> LeakageTrace {
        self.collector.into_trace()
    }

    /// Runs architecturally for at most `max_steps` retired instructions.
    pub fn run(&mut self, state: &mut MachineState, max_steps: u64) -> Termination {
        let mut steps = 0;
        while steps < max_steps {
            if steps % 256 == 0 && self.deadline.is_some_and(|d| Instant::now() >= d) {
                self.timed_out = true;
                return Termination::BudgetExceeded { steps };
            }
            if state.halted {
                return Termination::Halted { steps };
            }
            match self.step(state, 0) {
                Ok(StepOutcome::Halted) => return Termination::Halted { steps: steps + 1 },
                Ok(StepOutcome::Continued) => steps += 1,
                Err(e) => return Termination::Error(e),
            }
        }
        Termination::BudgetExceeded { steps }
    }

    fn step(&mut self, state: &mut MachineState, depth: u32) -> Result<StepOutcome, ExecError> {
        let program = self.program;
        let pc = state.pc;
        let insn = program.fetch(pc).ok_or(ExecError {
            kind: ExecErrorKind::PcOutOfProgram,
            pc,
        })?;
        let ev = evaluate(state, insn, pc)?;
        let cx = UopContext { pc, insn, depth };
        for uop in &ev.uops {
            self.collector.on_uop(uop, &cx, state);
            if depth < self.config.max_nesting {
                let predictions = self.predictor.predict(uop, &cx, state);
                for p in predictions {
                    if !is_correct(&p, &ev.effects, state) {
                        self.speculate(state, p, &ev.effects, depth);
                    }
                }
            }
        }
        commit(state, &ev.effects);
        Ok(if state.halted {
            StepOutcome::Halted
        } else {
            StepOutcome::Continued
        })
    }

    /// Runs one mispredicted path from the current (pre-commit) state and
    /// squashes it.
    fn speculate(&mut self, state: &mut MachineState, p: Prediction, fx: &Effects, depth: u32) {
        let cp = Checkpoint {
            regs: state.regs,
            pc: state.pc,
            tick: state.tick,
            halted: state.halted,
            journal: state.mem.begin_journal(),
        };
        let snapshot = self.config.rollback.then(|| self.collector.clause.box_clone());
        self.stats.paths += 1;

        match p {
            Prediction::Pc(target) => {
                // The instruction's own effects still happen; only the
                // destination is mispredicted.
                commit(state, fx);
                state.pc = target;
                state.halted = false;
            }
            Prediction::Reg(r, v) => state.set_reg(r, v),
            Prediction::Mem { addr, size, value } => state.mem.write(addr, size, value),
        }

        let mut n = 0;
        while n < self.config.window {
            match self.program.fetch(state.pc) {
                Some(i) if !matches!(i.mnemonic, Mnemonic::Fence | Mnemonic::Halt) => {}
                _ => break,
            }
            let outcome = self.step(state, depth + 1);
            n += 1;
            if !matches!(outcome, Ok(StepOutcome::Continued)) {
                break;
            }
        }
        self.stats.spec_steps += n;
        self.stats.longest_path = self.stats.longest_path.max(n);

        state.mem.rollback(cp.journal);
        state.regs = cp.regs;
        state.pc = cp.pc;
        state.tick = cp.tick;
        state.halted = cp.halted;
        if let Some(clause) = snapshot {
            self.collector.clause = clause;
        }
    }
}

fn is_correct(p: &Prediction, fx: &Effects, state: &MachineState) -> bool {
    match *p {
        Prediction::Pc(target) => target == fx.next_pc,
        Prediction::Reg(r, v) => state.reg(r) == v,
        Prediction::Mem { addr, size, value } => state.mem.read(addr, size) == value,
    }
}

/// Runs `program` from `state` under the given clauses and returns the
/// full (architectural and speculative) leakage trace.
pub fn explore(
    program: &Program,
    state: &mut MachineState,
    leakage: Box<dyn LeakageClause>,
    predictor: Box<dyn PredictionClause>,
    config: &SpecConfig,
    initialized: &[Region],
    max_steps: u64,
) -> (LeakageTrace, Termination) {
    let mut ex = Explorer::new(program, leakage, predictor, config.clone());
    ex.start(initialized);
    let term = ex.run(state, max_steps);
    (ex.into_trace(), term)
}
