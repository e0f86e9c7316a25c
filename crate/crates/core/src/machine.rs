//! Architectural interpreter.
//!
//! Executing an instruction is split in two: [`evaluate`] computes the
//! instruction's micro-ops and its pending effects from the current state
//! without touching it, and [`commit`] applies the effects. Event consumers
//! run in between, so every handler sees pre-commit registers and memory.

use std::collections::HashMap;

use thiserror::Error;

use crate::asm::{Group, Instruction, MemRef, Mnemonic, Operand, Program, Reg, NUM_REGS};

const PAGE_BITS: u32 = 12;
const PAGE_SIZE: usize = 1 << PAGE_BITS;

/// A half-open byte range `[start, start + len)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Region {
    pub start: u64,
    pub len: u64,
}

impl Region {
    pub fn new(start: u64, len: u64) -> Self {
        Region { start, len }
    }

    pub fn end(&self) -> u64 {
        self.start.saturating_add(self.len)
    }

    pub fn contains(&self, addr: u64, size: u64) -> bool {
        addr >= self.start && addr.checked_add(size).is_some_and(|e| e <= self.end())
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        self.start < other.end() && other.start < self.end()
    }
}

/// Sparse byte-addressable memory. Unwritten bytes read as zero.
///
/// While a journal is open every byte write records the previous contents so
/// that [`Memory::rollback`] can restore them exactly.
#[derive(Clone, Debug, Default)]
pub struct Memory {
    pages: HashMap<u64, Box<[u8; PAGE_SIZE]>>,
    journal: Vec<(u64, u8)>,
    journal_depth: usize,
    strict: bool,
    mapped: Vec<Region>,
}

impl PartialEq for Memory {
    fn eq(&self, other: &Self) -> bool {
        let nonzero = |m: &Memory| {
            let mut v: Vec<(u64, u8)> = m
                .pages
                .iter()
                .flat_map(|(&p, page)| {
                    page.iter()
                        .enumerate()
                        .filter(|(_, &b)| b != 0)
                        .map(move |(i, &b)| ((p << PAGE_BITS) + i as u64, b))
                })
                .collect();
            v.sort_unstable();
            v
        };
        nonzero(self) == nonzero(other)
    }
}

impl Eq for Memory {}

impl Memory {
    pub fn new() -> Self {
        Memory::default()
    }

    /// In strict mode, accesses outside mapped regions fail.
    pub fn set_strict(&mut self, strict: bool) {
        self.strict = strict;
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    pub fn map(&mut self, region: Region) {
        self.mapped.push(region);
    }

    pub fn check(&self, addr: u64, size: u64) -> Result<(), u64> {
        if !self.strict {
            return Ok(());
        }
        // Byte-wise so that an access may span adjacent mapped regions.
        for a in (0..size).map(|i| addr.wrapping_add(i)) {
            if !self.mapped.iter().any(|r| r.contains(a, 1)) {
                return Err(a);
            }
        }
        Ok(())
    }

    pub fn byte(&self, addr: u64) -> u8 {
        self.pages
            .get(&(addr >> PAGE_BITS))
            .map_or(0, |p| p[(addr as usize) & (PAGE_SIZE - 1)])
    }

    pub fn set_byte(&mut self, addr: u64, value: u8) {
        let page = self
            .pages
            .entry(addr >> PAGE_BITS)
            .or_insert_with(|| Box::new([0; PAGE_SIZE]));
        let slot = &mut page[(addr as usize) & (PAGE_SIZE - 1)];
        if self.journal_depth > 0 {
            self.journal.push((addr, *slot));
        }
        *slot = value;
    }

    pub fn read_bytes(&self, addr: u64, out: &mut [u8]) {
        for (i, b) in out.iter_mut().enumerate() {
            *b = self.byte(addr.wrapping_add(i as u64));
        }
    }

    pub fn write_bytes(&mut self, addr: u64, bytes: &[u8]) {
        for (i, &b) in bytes.iter().enumerate() {
            self.set_byte(addr.wrapping_add(i as u64), b);
        }
    }

    /// Little-endian, zero-extended read of `size` bytes. Ignores strict mode.
    pub fn read(&self, addr: u64, size: u8) -> u64 {
        (0..u64::from(size)).fold(0u64, |acc, i| {
            acc | (u64::from(self.byte(addr.wrapping_add(i))) << (8 * i))
        })
    }

    /// Stores the low `size` bytes of `value`, little-endian.
    pub fn write(&mut self, addr: u64, size: u8, value: u64) {
        for i in 0..u64::from(size) {
            self.set_byte(addr.wrapping_add(i), (value >> (8 * i)) as u8);
        }
    }

    /// Opens a journal level and returns the mark to roll back to.
    pub fn begin_journal(&mut self) -> usize {
        self.journal_depth += 1;
        self.journal.len()
    }

    /// Undoes every write recorded since `mark` and closes one journal level.
    pub fn rollback(&mut self, mark: usize) {
        while self.journal.len() > mark {
            let (addr, old) = self.journal.pop().unwrap();
            if let Some(page) = self.pages.get_mut(&(addr >> PAGE_BITS)) {
                page[(addr as usize) & (PAGE_SIZE - 1)] = old;
            }
        }
        self.journal_depth = self.journal_depth.saturating_sub(1);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct MachineState {
    pub regs: [u64; NUM_REGS],
    pub pc: u64,
    pub mem: Memory,
    /// Architecturally retired instructions so far.
    pub tick: u64,
    pub halted: bool,
}

impl MachineState {
    pub fn new(pc: u64) -> Self {
        MachineState {
            pc,
            ..Default::default()
        }
    }

    pub fn reg(&self, r: Reg) -> u64 {
        self.regs[r.index()]
    }

    pub fn set_reg(&mut self, r: Reg, v: u64) {
        self.regs[r.index()] = v;
    }

    pub fn mem_read(&self, addr: u64, size: u8) -> Result<u64, ExecError> {
        debug_assert!(matches!(size, 1 | 2 | 4 | 8));
        self.mem.check(addr, u64::from(size)).map_err(|a| ExecError {
            kind: ExecErrorKind::Unmapped(a),
            pc: self.pc,
        })?;
        Ok(self.mem.read(addr, size))
    }

    pub fn mem_write(&mut self, addr: u64, size: u8, value: u64) -> Result<(), ExecError> {
        debug_assert!(matches!(size, 1 | 2 | 4 | 8));
        self.mem.check(addr, u64::from(size)).map_err(|a| ExecError {
            kind: ExecErrorKind::Unmapped(a),
            pc: self.pc,
        })?;
        self.mem.write(addr, size, value);
        Ok(())
    }
}

/// One of the seven micro-operation kinds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MicroOp {
    Read {
        reg: Reg,
    },
    Write {
        reg: Reg,
        value: u64,
    },
    Expr {
        op: Mnemonic,
        operands: [u64; 2],
    },
    Addr {
        base: u64,
        index: Option<u64>,
        scale: u8,
        offset: i32,
        effective: u64,
    },
    Load {
        addr: u64,
        size: u8,
    },
    Store {
        addr: u64,
        size: u8,
        value: u64,
    },
    Jump {
        target: u64,
        taken: bool,
    },
}

/// Instruction-level context delivered alongside each micro-op.
#[derive(Clone, Copy, Debug)]
pub struct UopContext<'a> {
    pub pc: u64,
    pub insn: &'a Instruction,
    pub depth: u32,
}

impl UopContext<'_> {
    pub fn mnemonic(&self) -> Mnemonic {
        self.insn.mnemonic
    }

    pub fn group(&self) -> Group {
        self.insn.group()
    }

    pub fn next_pc(&self) -> u64 {
        self.pc.wrapping_add(self.insn.size())
    }
}

/// Architectural effects of one instruction, pending commit.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Effects {
    pub reg_write: Option<(Reg, u64)>,
    pub store: Option<(u64, u8, u64)>,
    pub next_pc: u64,
    pub halt: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Evaluated {
    pub uops: Vec<MicroOp>,
    pub effects: Effects,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum ExecErrorKind {
    #[error("division by zero")]
    DivByZero,
    #[error("pc out of program")]
    PcOutOfProgram,
    #[error("unmapped memory access at {0:#x}")]
    Unmapped(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("{kind} at pc {pc:#x}")]
pub struct ExecError {
    pub kind: ExecErrorKind,
    pub pc: u64,
}

impl ExecErrorKind {
    pub fn short_name(&self) -> &'static str {
        match self {
            ExecErrorKind::DivByZero => "div_by_zero",
            ExecErrorKind::PcOutOfProgram => "pc_out_of_program",
            ExecErrorKind::Unmapped(_) => "unmapped",
        }
    }
}

pub fn alu(op: Mnemonic, a: u64, b: u64) -> Option<u64> {
    Some(match op {
        Mnemonic::Add => a.wrapping_add(b),
        Mnemonic::Sub => a.wrapping_sub(b),
        Mnemonic::Mul => a.wrapping_mul(b),
        Mnemonic::Udiv => a.checked_div(b)?,
        Mnemonic::And => a & b,
        Mnemonic::Or => a | b,
        Mnemonic::Xor => a ^ b,
        Mnemonic::Shl => a.wrapping_shl((b % 64) as u32),
        Mnemonic::Shr => a.wrapping_shr((b % 64) as u32),
        Mnemonic::Sar => ((a as i64).wrapping_shr((b % 64) as u32)) as u64,
        Mnemonic::Sltu => u64::from(a < b),
        _ => unreachable!("{op} is not an ALU op"),
    })
}

/// Source-operand value; pushes a read event for register sources.
fn source(state: &MachineState, op: &Operand, uops: &mut Vec<MicroOp>) -> u64 {
    match *op {
        Operand::Reg(r) => {
            uops.push(MicroOp::Read { reg: r });
            state.reg(r)
        }
        Operand::Imm(v) | Operand::Label(v) => v,
        Operand::Mem(_) => unreachable!("memory operand used as a value"),
    }
}

/// Pushes the base/index reads and returns the `addr` event, which the caller
/// emits once all source registers have been read.
fn address(state: &MachineState, m: &MemRef, uops: &mut Vec<MicroOp>) -> (u64, MicroOp) {
    uops.push(MicroOp::Read { reg: m.base });
    let base = state.reg(m.base);
    let index = m.index.map(|r| {
        uops.push(MicroOp::Read { reg: r });
        state.reg(r)
    });
    let effective = base
        .wrapping_add(index.unwrap_or(0).wrapping_mul(u64::from(m.scale)))
        .wrapping_add(m.offset as i64 as u64);
    let event = MicroOp::Addr {
        base,
        index,
        scale: m.scale,
        offset: m.offset,
        effective,
    };
    (effective, event)
}

fn dest(op: &Operand) -> Reg {
    match op {
        Operand::Reg(r) => *r,
        _ => unreachable!("validated by the parser"),
    }
}

fn mem_operand(op: &Operand) -> &MemRef {
    match op {
        Operand::Mem(m) => m,
        _ => unreachable!("validated by the parser"),
    }
}

fn target(op: &Operand) -> u64 {
    match *op {
        Operand::Imm(v) | Operand::Label(v) => v,
        _ => unreachable!("validated by the parser"),
    }
}

/// Computes the micro-ops and pending effects of `insn` at `pc` without
/// modifying `state`. Events follow the canonical order: register reads in
/// operand order, `addr`, `expr`, then `load`/`store`/`jump`, then `write`.
pub fn evaluate(state: &MachineState, insn: &Instruction, pc: u64) -> Result<Evaluated, ExecError> {
    let mut uops = Vec::with_capacity(6);
    let fall_through = pc.wrapping_add(insn.size());
    let mut fx = Effects {
        next_pc: fall_through,
        ..Default::default()
    };
    let err = |kind| ExecError { kind, pc };
    let ops = &insn.operands;

    match insn.mnemonic {
        Mnemonic::Mov => {
            let v = source(state, &ops[1], &mut uops);
            let rd = dest(&ops[0]);
            uops.push(MicroOp::Write { reg: rd, value: v });
            fx.reg_write = Some((rd, v));
        }
        op if op.is_alu() => {
            let a = source(state, &ops[1], &mut uops);
            let b = source(state, &ops[2], &mut uops);
            uops.push(MicroOp::Expr { op, operands: [a, b] });
            let v = alu(op, a, b).ok_or(err(ExecErrorKind::DivByZero))?;
            let rd = dest(&ops[0]);
            uops.push(MicroOp::Write { reg: rd, value: v });
            fx.reg_write = Some((rd, v));
        }
        Mnemonic::Load => {
            let size = insn.width.unwrap_or(8);
            let (addr, addr_event) = address(state, mem_operand(&ops[1]), &mut uops);
            uops.push(addr_event);
            let v = state.mem_read(addr, size).map_err(|e| err(e.kind))?;
            uops.push(MicroOp::Load { addr, size });
            let rd = dest(&ops[0]);
            uops.push(MicroOp::Write { reg: rd, value: v });
            fx.reg_write = Some((rd, v));
        }
        Mnemonic::Store => {
            let size = insn.width.unwrap_or(8);
            let (addr, addr_event) = address(state, mem_operand(&ops[0]), &mut uops);
            let v = source(state, &ops[1], &mut uops) & mask(size);
            uops.push(addr_event);
            state
                .mem
                .check(addr, u64::from(size))
                .map_err(|a| err(ExecErrorKind::Unmapped(a)))?;
            uops.push(MicroOp::Store { addr, size, value: v });
            fx.store = Some((addr, size, v));
        }
        Mnemonic::Jmp => {
            let t = target(&ops[0]);
            uops.push(MicroOp::Jump { target: t, taken: true });
            fx.next_pc = t;
        }
        Mnemonic::Jz | Mnemonic::Jnz => {
            let c = source(state, &ops[0], &mut uops);
            let t = target(&ops[1]);
            let taken = (c == 0) == (insn.mnemonic == Mnemonic::Jz);
            uops.push(MicroOp::Jump { target: t, taken });
            if taken {
                fx.next_pc = t;
            }
        }
        Mnemonic::Call => {
            let t = target(&ops[0]);
            let sp = state.reg(Reg::SP).wrapping_sub(8);
            state.mem.check(sp, 8).map_err(|a| err(ExecErrorKind::Unmapped(a)))?;
            uops.push(MicroOp::Store {
                addr: sp,
                size: 8,
                value: fall_through,
            });
            uops.push(MicroOp::Write {
                reg: Reg::SP,
                value: sp,
            });
            uops.push(MicroOp::Jump { target: t, taken: true });
            fx.store = Some((sp, 8, fall_through));
            fx.reg_write = Some((Reg::SP, sp));
            fx.next_pc = t;
        }
        Mnemonic::Ret => {
            uops.push(MicroOp::Read { reg: Reg::SP });
            let sp = state.reg(Reg::SP);
            let ret = state.mem_read(sp, 8).map_err(|e| err(e.kind))?;
            uops.push(MicroOp::Load { addr: sp, size: 8 });
            let new_sp = sp.wrapping_add(8);
            uops.push(MicroOp::Write {
                reg: Reg::SP,
                value: new_sp,
            });
            uops.push(MicroOp::Jump {
                target: ret,
                taken: true,
            });
            fx.reg_write = Some((Reg::SP, new_sp));
            fx.next_pc = ret;
        }
        Mnemonic::Fence => {}
        Mnemonic::Halt => {
            fx.halt = true;
            fx.next_pc = pc;
        }
        _ => unreachable!(),
    }
    Ok(Evaluated { uops, effects: fx })
}

fn mask(size: u8) -> u64 {
    if size >= 8 {
        u64::MAX
    } else {
        (1u64 << (8 * u32::from(size))) - 1
    }
}

/// Applies pending effects and retires the instruction.
pub fn commit(state: &mut MachineState, fx: &Effects) {
    if let Some((addr, size, v)) = fx.store {
        state.mem.write(addr, size, v);
    }
    if let Some((r, v)) = fx.reg_write {
        state.set_reg(r, v);
    }
    state.pc = fx.next_pc;
    state.halted |= fx.halt;
    state.tick += 1;
}

/// Consumer of micro-op events. Sinks get read-only access to the
/// pre-commit machine state.
pub trait EventSink {
    fn on_uop(&mut self, uop: &MicroOp, cx: &UopContext<'_>, state: &MachineState);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Continued,
    Halted,
}

/// Executes one architectural instruction, delivering its events to every
/// sink in registration order before committing.
pub fn step(
    state: &mut MachineState,
    program: &Program,
    sinks: &mut [&mut dyn EventSink],
) -> Result<StepOutcome, ExecError> {
    if state.halted {
        return Ok(StepOutcome::Halted);
    }
    let pc = state.pc;
    let insn = program.fetch(pc).ok_or(ExecError {
        kind: ExecErrorKind::PcOutOfProgram,
        pc,
    })?;
    let ev = evaluate(state, insn, pc)?;
    let cx = UopContext { pc, insn, depth: 0 };
    for uop in &ev.uops {
        for sink in sinks.iter_mut() {
            sink.on_uop(uop, &cx, state);
        }
    }
    commit(state, &ev.effects);
    Ok(if state.halted {
        StepOutcome::Halted
    } else {
        StepOutcome::Continued
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Halted { steps: u64 },
    BudgetExceeded { steps: u64 },
    Error(ExecError),
}

impl Termination {
    pub fn is_halted(&self) -> bool {
        matches!(self, Termination::Halted { .. })
    }
}

pub fn run(
    state: &mut MachineState,
    program: &Program,
    sinks: &mut [&mut dyn EventSink],
    max_steps: u64,
) -> Termination {
    let mut steps = 0;
    while steps < max_steps {
        match step(state, program, sinks) {
            Ok(StepOutcome::Halted) => return Termination::Halted { steps: steps + 1 },
            Ok(StepOutcome::Continued) => steps += 1,
            Err(e) => return Termination::Error(e),
        }
    }
    Termination::BudgetExceeded { steps }
}
