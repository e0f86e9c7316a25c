//! The register-machine ISA and its assembly text format.
//!
//! Sixteen 64-bit registers (`r0`..`r15`, `r15` doubling as the stack
//! pointer), no flags, fixed 4-unit instructions. Source looks like:
//!
//! ```text
//! .entry main
//! main:
//!     mov r1, 0x2000
//!     load r2, [r1 + r3*8 + 16], 8
//!     jnz r2, main        ; comments run to end of line
//!     halt
//! ```

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Every instruction occupies this many address units.
pub const INSN_SIZE: u64 = 4;
/// Where code is placed unless the caller asks otherwise.
pub const DEFAULT_CODE_BASE: u64 = 0x1000;
pub const NUM_REGS: usize = 16;

/// A general-purpose register index in `0..16`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(u8);

impl Reg {
    pub const SP: Reg = Reg(15);

    pub fn new(index: u8) -> Option<Reg> {
        (usize::from(index) < NUM_REGS).then_some(Reg(index))
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn all() -> impl Iterator<Item = Reg> {
        (0..NUM_REGS as u8).map(Reg)
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mnemonic {
    Mov,
    Add,
    Sub,
    Mul,
    Udiv,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Sar,
    Sltu,
    Load,
    Store,
    Jmp,
    Jz,
    Jnz,
    Call,
    Ret,
    Fence,
    Halt,
}

/// Control-flow class of an instruction, as seen by prediction clauses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    None,
    Jump,
    Call,
    Ret,
}

impl Mnemonic {
    pub const ALL: [Mnemonic; 21] = [
        Mnemonic::Mov,
        Mnemonic::Add,
        Mnemonic::Sub,
        Mnemonic::Mul,
        Mnemonic::Udiv,
        Mnemonic::And,
        Mnemonic::Or,
        Mnemonic::Xor,
        Mnemonic::Shl,
        Mnemonic::Shr,
        Mnemonic::Sar,
        Mnemonic::Sltu,
        Mnemonic::Load,
        Mnemonic::Store,
        Mnemonic::Jmp,
        Mnemonic::Jz,
        Mnemonic::Jnz,
        Mnemonic::Call,
        Mnemonic::Ret,
        Mnemonic::Fence,
        Mnemonic::Halt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mnemonic::Mov => "mov",
            Mnemonic::Add => "add",
            Mnemonic::Sub => "sub",
            Mnemonic::Mul => "mul",
            Mnemonic::Udiv => "udiv",
            Mnemonic::And => "and",
            Mnemonic::Or => "or",
            Mnemonic::Xor => "xor",
            Mnemonic::Shl => "shl",
            Mnemonic::Shr => "shr",
            Mnemonic::Sar => "sar",
            Mnemonic::Sltu => "sltu",
            Mnemonic::Load => "load",
            Mnemonic::Store => "store",
            Mnemonic::Jmp => "jmp",
            Mnemonic::Jz => "jz",
            Mnemonic::Jnz => "jnz",
            Mnemonic::Call => "call",
            Mnemonic::Ret => "ret",
            Mnemonic::Fence => "fence",
            Mnemonic::Halt => "halt",
        }
    }

    pub fn from_name(name: &str) -> Option<Mnemonic> {
        Mnemonic::ALL.iter().copied().find(|m| m.name() == name)
    }

    /// Stable numeric code, used wherever a mnemonic has to travel inside an
    /// observation payload. Codes follow declaration order starting at 0.
    pub fn code(self) -> u64 {
        self as u64
    }

    pub fn from_code(code: u64) -> Option<Mnemonic> {
        Mnemonic::ALL.get(usize::try_from(code).ok()?).copied()
    }

    pub fn group(self) -> Group {
        match self {
            Mnemonic::Jmp | Mnemonic::Jz | Mnemonic::Jnz => Group::Jump,
            Mnemonic::Call => Group::Call,
            Mnemonic::Ret => Group::Ret,
            _ => Group::None,
        }
    }

    /// Three-operand arithmetic/logic ops that emit an `expr` micro-op.
    pub fn is_alu(self) -> bool {
        matches!(
            self,
            Mnemonic::Add
                | Mnemonic::Sub
                | Mnemonic::Mul
                | Mnemonic::Udiv
                | Mnemonic::And
                | Mnemonic::Or
                | Mnemonic::Xor
                | Mnemonic::Shl
                | Mnemonic::Shr
                | Mnemonic::Sar
                | Mnemonic::Sltu
        )
    }

    pub fn is_conditional(self) -> bool {
        matches!(self, Mnemonic::Jz | Mnemonic::Jnz)
    }
}

impl fmt::Display for Mnemonic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `[base + index*scale + offset]`
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MemRef {
    pub base: Reg,
    pub index: Option<Reg>,
    pub scale: u8,
    pub offset: i32,
}

impl fmt::Display for MemRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}", self.base)?;
        if let Some(index) = self.index {
            write!(f, " + {index}")?;
            if self.scale != 1 {
                write!(f, "*{}", self.scale)?;
            }
        }
        match self.offset {
            0 => {}
            off if off < 0 => write!(f, " - {}", (i64::from(off)).unsigned_abs())?,
            off => write!(f, " + {off}")?,
        }
        f.write_str("]")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(Reg),
    Imm(u64),
    Mem(MemRef),
    /// A label reference, already resolved to its code address.
    Label(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instruction {
    pub mnemonic: Mnemonic,
    pub operands: Vec<Operand>,
    /// Access width in bytes for `load`/`store`; `None` otherwise.
    pub width: Option<u8>,
}

impl Instruction {
    pub fn group(&self) -> Group {
        self.mnemonic.group()
    }

    pub fn size(&self) -> u64 {
        INSN_SIZE
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub instructions: Vec<Instruction>,
    pub labels: BTreeMap<String, u64>,
    pub base: u64,
    pub entry: u64,
}

impl Program {
    pub fn address_of(&self, index: usize) -> u64 {
        self.base + INSN_SIZE * index as u64
    }

    /// One past the last instruction.
    pub fn end(&self) -> u64 {
        self.address_of(self.instructions.len())
    }

    pub fn index_of(&self, pc: u64) -> Option<usize> {
        let off = pc.checked_sub(self.base)?;
        if off % INSN_SIZE != 0 {
            return None;
        }
        let idx = usize::try_from(off / INSN_SIZE).ok()?;
        (idx < self.instructions.len()).then_some(idx)
    }

    pub fn fetch(&self, pc: u64) -> Option<&Instruction> {
        self.index_of(pc).map(|i| &self.instructions[i])
    }

    pub fn label(&self, name: &str) -> Option<u64> {
        self.labels.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct AsmError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl AsmError {
    fn new(line: usize, column: usize, message: impl Into<String>) -> Self {
        AsmError {
            line,
            column,
            message: message.into(),
        }
    }
}

/// Operand before label resolution.
#[derive(Debug, Clone)]
enum RawOperand {
    Resolved(Operand),
    Label(String),
}

struct RawInsn {
    line: usize,
    mnemonic: Mnemonic,
    operands: Vec<(usize, RawOperand)>,
}

pub fn parse_program(text: &str) -> Result<Program, AsmError> {
    parse_program_at(text, DEFAULT_CODE_BASE)
}

pub fn parse_program_at(text: &str, base: u64) -> Result<Program, AsmError> {
    if !base.is_multiple_of(INSN_SIZE) {
        return Err(AsmError::new(0, 0, "code base must be a multiple of 4"));
    }
    let mut labels: BTreeMap<String, u64> = BTreeMap::new();
    let mut raw: Vec<RawInsn> = Vec::new();
    let mut entry: Option<(usize, usize, String)> = None;

    for (lineno, full) in text.lines().enumerate() {
        let line = lineno + 1;
        let code = full.split(';').next().unwrap_or("");
        let mut rest = code;
        let mut col = 1;

        // Leading `label:` (possibly followed by an instruction).
        loop {
            let trimmed = rest.trim_start();
            col += rest.len() - trimmed.len();
            rest = trimmed;
            let Some(colon) = rest.find(':') else { break };
            let name = &rest[..colon];
            if name.is_empty() || !is_ident(name) {
                break;
            }
            let addr = base + INSN_SIZE * raw.len() as u64;
            if labels.insert(name.to_string(), addr).is_some() {
                return Err(AsmError::new(line, col, format!("duplicate label '{name}'")));
            }
            rest = &rest[colon + 1..];
            col += colon + 1;
        }
        let rest_trimmed = rest.trim_end();
        if rest_trimmed.is_empty() {
            continue;
        }

        let (word, args, args_col) = split_word(rest_trimmed, col);
        if let Some(directive) = word.strip_prefix('.') {
            match directive {
                "entry" => {
                    let name = args.trim();
                    if !is_ident(name) {
                        return Err(AsmError::new(line, args_col, "expected label after .entry"));
                    }
                    if entry.is_some() {
                        return Err(AsmError::new(line, col, "duplicate .entry directive"));
                    }
                    entry = Some((line, args_col, name.to_string()));
                }
                other => {
                    return Err(AsmError::new(line, col, format!("unknown directive '.{other}'")));
                }
            }
            continue;
        }

        let mnemonic = Mnemonic::from_name(&word.to_ascii_lowercase())
            .ok_or_else(|| AsmError::new(line, col, format!("unknown mnemonic '{word}'")))?;
        let operands = split_operands(args, args_col)
            .into_iter()
            .map(|(c, tok)| parse_operand(tok, line, c).map(|op| (c, op)))
            .collect::<Result<Vec<_>, _>>()?;
        raw.push(RawInsn {
            line,
            mnemonic,
            operands,
        });
    }

    if raw.is_empty() {
        return Err(AsmError::new(0, 0, "no entry instruction"));
    }

    let mut instructions = Vec::with_capacity(raw.len());
    for insn in raw {
        let mut ops = Vec::with_capacity(insn.operands.len());
        for (col, op) in &insn.operands {
            let op = match op {
                RawOperand::Resolved(op) => *op,
                RawOperand::Label(name) => match labels.get(name) {
                    Some(&addr) => Operand::Label(addr),
                    None => return Err(AsmError::new(insn.line, *col, format!("undefined label '{name}'"))),
                },
            };
            ops.push((*col, op));
        }
        instructions.push(check_signature(insn.mnemonic, ops, insn.line)?);
    }

    let end = base + INSN_SIZE * instructions.len() as u64;
    let entry = match entry {
        None => base,
        Some((line, col, name)) => {
            let addr = *labels
                .get(&name)
                .ok_or_else(|| AsmError::new(line, col, format!("undefined label '{name}'")))?;
            if addr >= end {
                return Err(AsmError::new(line, col, "no entry instruction"));
            }
            addr
        }
    };

    Ok(Program {
        instructions,
        labels,
        base,
        entry,
    })
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn split_word(s: &str, col: usize) -> (&str, &str, usize) {
    match s.find(char::is_whitespace) {
        None => (s, "", col + s.len()),
        Some(i) => {
            let args = &s[i..];
            let trimmed = args.trim_start();
            (&s[..i], trimmed, col + i + (args.len() - trimmed.len()))
        }
    }
}

/// Splits on commas outside brackets, returning (column, token) pairs.
fn split_operands(args: &str, col: usize) -> Vec<(usize, &str)> {
    if args.trim().is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in args.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push((start, &args[start..i]));
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push((start, &args[start..]));
    out.into_iter()
        .map(|(s, tok)| {
            let lead = tok.len() - tok.trim_start().len();
            (col + s + lead, tok.trim())
        })
        .collect()
}

fn parse_reg(tok: &str) -> Option<Reg> {
    let lower = tok.to_ascii_lowercase();
    if lower == "sp" {
        return Some(Reg::SP);
    }
    let digits = lower.strip_prefix('r')?;
    if digits.is_empty() || digits.len() > 2 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Reg::new(digits.parse().ok()?)
}

fn parse_number(tok: &str) -> Option<i128> {
    let (neg, body) = match tok.strip_prefix('-') {
        Some(rest) => (true, rest.trim_start()),
        None => (false, tok),
    };
    let body = body.replace('_', "");
    let value = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()?
    } else if !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit()) {
        body.parse::<u64>().ok()?
    } else {
        return None;
    };
    Some(if neg { -i128::from(value) } else { i128::from(value) })
}

fn parse_operand(tok: &str, line: usize, col: usize) -> Result<RawOperand, AsmError> {
    if tok.is_empty() {
        return Err(AsmError::new(line, col, "empty operand"));
    }
    if tok.starts_with('[') {
        return parse_memref(tok, line, col).map(|m| RawOperand::Resolved(Operand::Mem(m)));
    }
    if let Some(reg) = parse_reg(tok) {
        return Ok(RawOperand::Resolved(Operand::Reg(reg)));
    }
    if let Some(n) = parse_number(tok) {
        if n < i128::from(i64::MIN) || n > i128::from(u64::MAX) {
            return Err(AsmError::new(line, col, format!("immediate out of range '{tok}'")));
        }
        return Ok(RawOperand::Resolved(Operand::Imm(n as u64)));
    }
    if is_ident(tok) {
        return Ok(RawOperand::Label(tok.to_string()));
    }
    Err(AsmError::new(line, col, format!("malformed operand '{tok}'")))
}

fn parse_memref(tok: &str, line: usize, col: usize) -> Result<MemRef, AsmError> {
    let inner = tok
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| AsmError::new(line, col, "unterminated memory reference"))?;
    let err = |msg: &str| AsmError::new(line, col, format!("{msg} in '{tok}'"));

    // Split into signed terms.
    let mut terms: Vec<(bool, &str)> = Vec::new();
    let mut start = 0;
    let mut neg = false;
    for (i, c) in inner.char_indices() {
        if c == '+' || c == '-' {
            let term = inner[start..i].trim();
            if !term.is_empty() {
                terms.push((neg, term));
            } else if i != 0 && !inner[..i].trim().is_empty() {
                return Err(err("dangling operator"));
            }
            neg = c == '-';
            start = i + 1;
        }
    }
    let last = inner[start..].trim();
    if last.is_empty() {
        return Err(err("dangling operator"));
    }
    terms.push((neg, last));

    let mut base = None;
    let mut index = None;
    let mut scale = 1u8;
    let mut offset: i64 = 0;
    for (neg, term) in terms {
        if let Some((r, s)) = term.split_once('*') {
            let reg = parse_reg(r.trim()).ok_or_else(|| err("bad index register"))?;
            let s = parse_number(s.trim()).ok_or_else(|| err("bad scale"))?;
            if !matches!(s, 1 | 2 | 4 | 8) {
                return Err(err("scale must be 1, 2, 4 or 8"));
            }
            if neg || index.is_some() {
                return Err(err("bad index term"));
            }
            index = Some(reg);
            scale = s as u8;
        } else if let Some(reg) = parse_reg(term) {
            if neg {
                return Err(err("registers cannot be subtracted"));
            }
            if base.is_none() {
                base = Some(reg);
            } else if index.is_none() {
                index = Some(reg);
            } else {
                return Err(err("too many registers"));
            }
        } else if let Some(n) = parse_number(term) {
            let n = i64::try_from(n).map_err(|_| err("offset out of range"))?;
            offset = if neg { offset - n } else { offset + n };
        } else {
            return Err(err("malformed term"));
        }
    }
    let base = base.ok_or_else(|| err("missing base register"))?;
    let offset = i32::try_from(offset).map_err(|_| err("offset out of range"))?;
    Ok(MemRef {
        base,
        index,
        scale,
        offset,
    })
}

fn check_signature(mnemonic: Mnemonic, mut ops: Vec<(usize, Operand)>, line: usize) -> Result<Instruction, AsmError> {
    use Operand as O;
    let arity = |n: usize, ops: &[(usize, Operand)]| -> Result<(), AsmError> {
        if ops.len() != n {
            Err(AsmError::new(
                line,
                ops.first().map_or(1, |o| o.0),
                format!("'{mnemonic}' expects {n} operand(s), got {}", ops.len()),
            ))
        } else {
            Ok(())
        }
    };
    let kind_err = |(col, op): &(usize, Operand), what: &str| {
        AsmError::new(line, *col, format!("'{mnemonic}' expects {what}, got {op:?}"))
    };
    let is_reg = |o: &(usize, Operand)| matches!(o.1, O::Reg(_));
    let is_value = |o: &(usize, Operand)| matches!(o.1, O::Reg(_) | O::Imm(_) | O::Label(_));
    let is_target = |o: &(usize, Operand)| matches!(o.1, O::Imm(_) | O::Label(_));

    let mut width = None;
    if matches!(mnemonic, Mnemonic::Load | Mnemonic::Store) {
        if ops.len() == 3 {
            let (col, w) = ops.pop().unwrap();
            match w {
                O::Imm(w @ (1 | 2 | 4 | 8)) => width = Some(w as u8),
                _ => return Err(AsmError::new(line, col, "access size must be 1, 2, 4 or 8")),
            }
        } else {
            width = Some(8);
        }
    }

    match mnemonic {
        Mnemonic::Mov => {
            arity(2, &ops)?;
            if !is_reg(&ops[0]) {
                return Err(kind_err(&ops[0], "a destination register"));
            }
            if !is_value(&ops[1]) {
                return Err(kind_err(&ops[1], "a register or immediate"));
            }
        }
        m if m.is_alu() => {
            arity(3, &ops)?;
            for o in &ops[..2] {
                if !is_reg(o) {
                    return Err(kind_err(o, "a register"));
                }
            }
            if !is_value(&ops[2]) {
                return Err(kind_err(&ops[2], "a register or immediate"));
            }
        }
        Mnemonic::Load => {
            arity(2, &ops)?;
            if !is_reg(&ops[0]) {
                return Err(kind_err(&ops[0], "a destination register"));
            }
            if !matches!(ops[1].1, O::Mem(_)) {
                return Err(kind_err(&ops[1], "a memory reference"));
            }
        }
        Mnemonic::Store => {
            arity(2, &ops)?;
            if !matches!(ops[0].1, O::Mem(_)) {
                return Err(kind_err(&ops[0], "a memory reference"));
            }
            if !is_value(&ops[1]) {
                return Err(kind_err(&ops[1], "a register or immediate"));
            }
        }
        Mnemonic::Jmp | Mnemonic::Call => {
            arity(1, &ops)?;
            if !is_target(&ops[0]) {
                return Err(kind_err(&ops[0], "a jump target"));
            }
        }
        Mnemonic::Jz | Mnemonic::Jnz => {
            arity(2, &ops)?;
            if !is_reg(&ops[0]) {
                return Err(kind_err(&ops[0], "a condition register"));
            }
            if !is_target(&ops[1]) {
                return Err(kind_err(&ops[1], "a jump target"));
            }
        }
        Mnemonic::Ret | Mnemonic::Fence | Mnemonic::Halt => arity(0, &ops)?,
        _ => unreachable!("all mnemonics covered"),
    }
    Ok(Instruction {
        mnemonic,
        operands: ops.into_iter().map(|(_, o)| o).collect(),
        width,
    })
}

/// Renders a program back to source. Labels keep their names where the
/// program knows them; anonymous targets get `L_<hex>` names.
pub fn disassemble(program: &Program) -> String {
    let mut names: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    for (name, &addr) in &program.labels {
        names.entry(addr).or_default().push(name.clone());
    }
    let mut needed: Vec<u64> = program
        .instructions
        .iter()
        .flat_map(|i| i.operands.iter())
        .filter_map(|o| match o {
            Operand::Label(a) => Some(*a),
            _ => None,
        })
        .collect();
    if program.entry != program.base {
        needed.push(program.entry);
    }
    for addr in needed {
        names.entry(addr).or_insert_with(|| vec![format!("L_{addr:x}")]);
    }
    let name_of = |addr: u64| names[&addr][0].clone();

    let mut out = String::new();
    if program.entry != program.base {
        out.push_str(&format!(".entry {}\n", name_of(program.entry)));
    }
    for (i, insn) in program.instructions.iter().enumerate() {
        let addr = program.address_of(i);
        for name in names.get(&addr).into_iter().flatten() {
            out.push_str(&format!("{name}:\n"));
        }
        out.push_str(&render_insn(insn, &name_of));
        out.push('\n');
    }
    for name in names.get(&program.end()).into_iter().flatten() {
        out.push_str(&format!("{name}:\n"));
    }
    out
}

fn render_insn(insn: &Instruction, name_of: &dyn Fn(u64) -> String) -> String {
    let mut parts: Vec<String> = insn
        .operands
        .iter()
        .map(|o| match o {
            Operand::Reg(r) => r.to_string(),
            Operand::Imm(v) => format!("{v:#x}"),
            Operand::Mem(m) => m.to_string(),
            Operand::Label(a) => name_of(*a),
        })
        .collect();
    if let Some(w) = insn.width {
        parts.push(w.to_string());
    }
    if parts.is_empty() {
        insn.mnemonic.name().to_string()
    } else {
        format!("{} {}", insn.mnemonic, parts.join(", "))
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_insn(self, &|a| format!("{a:#x}")))
    }
}
