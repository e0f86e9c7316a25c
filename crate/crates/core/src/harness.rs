//! Relational testing: labeled interfaces, low-equivalent input generation,
//! campaigns and the exhaustive non-interference oracle.
//!
//! # Interface files
//!
//! Interfaces are TOML documents:
//!
//! ```toml
//! entry = "main"            # optional label; default is the program entry
//! stack_top = 0x7FFFF000    # optional
//! stack_size = 0x1000       # optional
//! max_steps = 100000        # optional
//!
//! [[input]]
//! name = "b"
//! secrecy = "secret"        # or "public"
//! length = 1                # bytes
//! register = "r3"           # placement: register, address, or auto = true
//! bits = 1                  # optional: keep only the low `bits` bits
//!
//! [[input]]
//! name = "buf"
//! secrecy = "public"
//! length = 40
//! address = 0x2000
//! pointer = "r1"            # optional: register receiving the address
//!
//! [[initialized]]           # optional; default is every memory input
//! address = 0x2000          # plus the stack
//! length = 40
//! ```
//!
//! # Random streams
//!
//! All randomness comes from SplitMix64:
//!
//! ```text
//! state = state + 0x9E3779B97F4A7C15
//! z = (state ^ (state >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! output z ^ (z >> 31)
//! ```
//!
//! Case `i` of a campaign with seed `s` draws its base input from the
//! stream seeded with `s ^ mix(2i)` and its secret mutation from
//! `s ^ mix(2i + 1)`, where `mix(x)` is the first output of a SplitMix64
//! seeded with `x`. Input bytes are taken little-endian from successive
//! outputs, eight per output, restarting at each input.

use std::collections::HashSet;
use std::fmt;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use serde::Deserialize;
use thiserror::Error;

use crate::asm::{Program, Reg};
use crate::leakage::{first_divergence, Divergence, LeakageTrace};
use crate::machine::{MachineState, Region, Termination};
use crate::models::LeakageConfig;
use crate::speculation::{Explorer, PredictorConfig};

pub const DEFAULT_STACK_TOP: u64 = 0x7FFF_F000;
pub const DEFAULT_STACK_SIZE: u64 = 0x1000;
pub const DEFAULT_MAX_STEPS: u64 = 100_000;
/// First address handed out to auto-placed memory inputs.
pub const AUTO_BASE: u64 = 0x10_0000;
/// Largest secret space the oracle will enumerate, in bits.
pub const ORACLE_MAX_BITS: u32 = 16;

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn fill(&mut self, out: &mut [u8]) {
        for chunk in out.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }

    /// Stream `stream` (0 = base input, 1 = mutation) of case `case`.
    pub fn for_case(seed: u64, case: u64, stream: u64) -> Self {
        let mix = SplitMix64::new(case.wrapping_mul(2).wrapping_add(stream)).next_u64();
        SplitMix64::new(seed ^ mix)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Secrecy {
    Public,
    Secret,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    Register(Reg),
    Memory { address: u64, pointer: Option<Reg> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputDecl {
    pub name: String,
    pub secrecy: Secrecy,
    pub length: usize,
    pub placement: Placement,
    /// When set, generated values keep only their low `bits` bits.
    pub bits: Option<u32>,
}

impl InputDecl {
    /// Number of bits that can vary.
    pub fn free_bits(&self) -> u32 {
        self.bits.unwrap_or(8 * self.length as u32)
    }

    pub fn region(&self) -> Option<Region> {
        match self.placement {
            Placement::Memory { address, .. } => Some(Region::new(address, self.length as u64)),
            Placement::Register(_) => None,
        }
    }

    fn generate(&self, rng: &mut SplitMix64) -> Vec<u8> {
        let mut bytes = vec![0u8; self.length];
        rng.fill(&mut bytes);
        if let Some(bits) = self.bits {
            mask_bits(&mut bytes, bits);
        }
        bytes
    }
}

fn mask_bits(bytes: &mut [u8], bits: u32) {
    for (i, b) in bytes.iter_mut().enumerate() {
        let lo = 8 * i as u32;
        if bits <= lo {
            *b = 0;
        } else if bits < lo + 8 {
            *b &= (1u8 << (bits - lo)) - 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterfaceError {
    #[error("interface syntax: {0}")]
    Syntax(String),
    #[error("input '{input}': {message}")]
    Input { input: String, message: String },
    #[error("{0}")]
    Layout(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInterface {
    entry: Option<String>,
    stack_top: Option<u64>,
    stack_size: Option<u64>,
    max_steps: Option<u64>,
    #[serde(default)]
    input: Vec<RawInput>,
    initialized: Option<Vec<RawRegion>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInput {
    name: String,
    secrecy: Secrecy,
    length: u64,
    register: Option<String>,
    address: Option<u64>,
    #[serde(default)]
    auto: bool,
    pointer: Option<String>,
    bits: Option<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegion {
    address: u64,
    length: u64,
}

fn parse_reg(s: &str) -> Option<Reg> {
    if s == "sp" {
        return Some(Reg::SP);
    }
    s.strip_prefix('r')?.parse::<u8>().ok().and_then(Reg::new)
}

/// A program's labeled input layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interface {
    pub entry: Option<String>,
    pub inputs: Vec<InputDecl>,
    pub initialized: Vec<Region>,
    pub stack_top: u64,
    pub stack_size: u64,
    pub max_steps: u64,
}

impl Interface {
    pub fn parse(text: &str) -> Result<Interface, InterfaceError> {
        let raw: RawInterface = toml::from_str(text).map_err(|e| InterfaceError::Syntax(e.message().to_string()))?;
        let mut inputs = Vec::new();
        let mut next_auto = AUTO_BASE;
        for r in raw.input {
            let bad = |m: &str| InterfaceError::Input {
                input: r.name.clone(),
                message: m.into(),
            };
            if r.length == 0 || r.length > 1 << 20 {
                return Err(bad("length must be between 1 and 2^20 bytes"));
            }
            let reg = |s: &Option<String>| -> Result<Option<Reg>, InterfaceError> {
                s.as_deref()
                    .map(|s| parse_reg(s).ok_or_else(|| bad(&format!("bad register '{s}'"))))
                    .transpose()
            };
            let placement = match (reg(&r.register)?, r.address, r.auto) {
                (Some(reg), None, false) => {
                    if r.length > 8 {
                        return Err(bad("register inputs hold at most 8 bytes"));
                    }
                    if r.pointer.is_some() {
                        return Err(bad("pointer only applies to memory inputs"));
                    }
                    Placement::Register(reg)
                }
                (None, Some(address), false) => Placement::Memory {
                    address,
                    pointer: reg(&r.pointer)?,
                },
                (None, None, true) => {
                    let address = next_auto;
                    next_auto = (next_auto + r.length).next_multiple_of(64);
                    Placement::Memory {
                        address,
                        pointer: reg(&r.pointer)?,
                    }
                }
                _ => return Err(bad("exactly one of register, address or auto is required")),
            };
            if let Some(b) = r.bits {
                if b == 0 || u64::from(b) > 8 * r.length {
                    return Err(bad("bits must be between 1 and 8 * length"));
                }
            }
            inputs.push(InputDecl {
                name: r.name,
                secrecy: r.secrecy,
                length: r.length as usize,
                placement,
                bits: r.bits,
            });
        }
        let stack_top = raw.stack_top.unwrap_or(DEFAULT_STACK_TOP);
        let stack_size = raw.stack_size.unwrap_or(DEFAULT_STACK_SIZE);
        if stack_size == 0 || stack_size > stack_top {
            return Err(InterfaceError::Layout("stack_size must be in 1..=stack_top".into()));
        }
        let max_steps = raw.max_steps.unwrap_or(DEFAULT_MAX_STEPS);
        if max_steps == 0 {
            return Err(InterfaceError::Layout("max_steps must be positive".into()));
        }
        let stack = Region::new(stack_top - stack_size, stack_size);
        let initialized = match raw.initialized {
            Some(rs) => rs.iter().map(|r| Region::new(r.address, r.length)).collect(),
            None => inputs.iter().filter_map(InputDecl::region).chain([stack]).collect(),
        };
        let iface = Interface {
            entry: raw.entry,
            inputs,
            initialized,
            stack_top,
            stack_size,
            max_steps,
        };
        iface.check_layout()?;
        Ok(iface)
    }

    fn check_layout(&self) -> Result<(), InterfaceError> {
        let mut names = HashSet::new();
        let mut regs = HashSet::new();
        for i in &self.inputs {
            if !names.insert(i.name.as_str()) {
                return Err(InterfaceError::Layout(format!("duplicate input name '{}'", i.name)));
            }
            let used = match i.placement {
                Placement::Register(r) => Some(r),
                Placement::Memory { pointer, .. } => pointer,
            };
            if let Some(r) = used {
                if r == Reg::SP {
                    return Err(InterfaceError::Layout(format!(
                        "input '{}': r15 is reserved for the stack pointer",
                        i.name
                    )));
                }
                if !regs.insert(r) {
                    return Err(InterfaceError::Layout(format!(
                        "register r{} is assigned twice",
                        r.index()
                    )));
                }
            }
        }
        let regions: Vec<(&str, Region)> = self
            .inputs
            .iter()
            .filter_map(|i| Some((i.name.as_str(), i.region()?)))
            .collect();
        for (k, (a, ra)) in regions.iter().enumerate() {
            if ra.start.checked_add(ra.len).is_none() {
                return Err(InterfaceError::Layout(format!("input '{a}' wraps the address space")));
            }
            for (b, rb) in &regions[k + 1..] {
                if ra.overlaps(rb) {
                    return Err(InterfaceError::Layout(format!("inputs '{a}' and '{b}' overlap")));
                }
            }
        }
        Ok(())
    }

    /// Program-dependent checks: entry label and code overlap.
    pub fn check_program(&self, program: &Program) -> Result<(), InterfaceError> {
        self.entry_pc(program)?;
        let code = Region::new(program.base, program.end() - program.base);
        for i in &self.inputs {
            if let Some(r) = i.region() {
                if r.overlaps(&code) {
                    return Err(InterfaceError::Layout(format!("input '{}' overlaps the code", i.name)));
                }
            }
        }
        Ok(())
    }

    pub fn entry_pc(&self, program: &Program) -> Result<u64, InterfaceError> {
        match &self.entry {
            None => Ok(program.entry),
            Some(l) => program
                .label(l)
                .ok_or_else(|| InterfaceError::Layout(format!("entry label '{l}' is not defined"))),
        }
    }

    pub fn secret_bits(&self) -> u32 {
        self.inputs
            .iter()
            .filter(|i| i.secrecy == Secrecy::Secret)
            .map(InputDecl::free_bits)
            .sum()
    }

    pub fn total_bytes(&self) -> usize {
        self.inputs.iter().map(|i| i.length).sum()
    }

    /// Architectural start state for `input`.
    pub fn initial_state(&self, program: &Program, input: &InputAssignment) -> Result<MachineState, InterfaceError> {
        let mut st = MachineState::new(self.entry_pc(program)?);
        st.set_reg(Reg::SP, self.stack_top);
        for (decl, bytes) in self.inputs.iter().zip(&input.values) {
            match decl.placement {
                Placement::Register(r) => {
                    let mut b = [0u8; 8];
                    b[..bytes.len()].copy_from_slice(bytes);
                    st.set_reg(r, u64::from_le_bytes(b));
                }
                Placement::Memory { address, pointer } => {
                    st.mem.write_bytes(address, bytes);
                    if let Some(p) = pointer {
                        st.set_reg(p, address);
                    }
                }
            }
        }
        Ok(st)
    }
}

/// Concrete bytes for every declared input, in declaration order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InputAssignment {
    pub values: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InputError {
    #[error("malformed hex input")]
    Hex,
    #[error("input is {got} bytes, interface declares {expected}")]
    Length { expected: usize, got: usize },
}

impl InputAssignment {
    /// Concatenated lowercase hex of all inputs.
    pub fn to_hex(&self) -> String {
        self.values.iter().flatten().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(iface: &Interface, hex: &str) -> Result<InputAssignment, InputError> {
        let hex = hex.trim();
        let hex = hex.strip_prefix("0x").unwrap_or(hex);
        if !hex.len().is_multiple_of(2) || !hex.bytes().all(|c| c.is_ascii_hexdigit()) {
            return Err(InputError::Hex);
        }
        let bytes: Vec<u8> = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).unwrap())
            .collect();
        if bytes.len() != iface.total_bytes() {
            return Err(InputError::Length {
                expected: iface.total_bytes(),
                got: bytes.len(),
            });
        }
        let mut rest = &bytes[..];
        let values = iface
            .inputs
            .iter()
            .map(|d| {
                let (v, r) = rest.split_at(d.length);
                rest = r;
                v.to_vec()
            })
            .collect();
        Ok(InputAssignment { values })
    }
}

pub fn gen_input(rng: &mut SplitMix64, iface: &Interface) -> InputAssignment {
    InputAssignment {
        values: iface.inputs.iter().map(|d| d.generate(rng)).collect(),
    }
}

/// Re-randomizes every secret input, keeping public bytes.
pub fn mutate_secrets(input: &InputAssignment, iface: &Interface, rng: &mut SplitMix64) -> InputAssignment {
    InputAssignment {
        values: iface
            .inputs
            .iter()
            .zip(&input.values)
            .map(|(d, v)| match d.secrecy {
                Secrecy::Public => v.clone(),
                Secrecy::Secret => d.generate(rng),
            })
            .collect(),
    }
}

pub fn low_equivalent(a: &InputAssignment, b: &InputAssignment, iface: &Interface) -> bool {
    a.values.len() == iface.inputs.len()
        && b.values.len() == iface.inputs.len()
        && iface
            .inputs
            .iter()
            .zip(a.values.iter().zip(&b.values))
            .all(|(d, (x, y))| d.secrecy == Secrecy::Secret || x == y)
}

/// Why a single run produced no usable trace.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("{0}")]
    Exec(String),
    #[error("step budget of {0} exhausted")]
    Budget(u64),
    #[error("deadline exceeded")]
    Timeout,
    #[error(transparent)]
    Interface(#[from] InterfaceError),
}

/// Final state and trace of one run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub trace: LeakageTrace,
    pub state: MachineState,
    pub termination: Termination,
}

/// Runs `program` on `input` under fresh clause instances.
pub fn run_input(
    program: &Program,
    iface: &Interface,
    input: &InputAssignment,
    leakage: &LeakageConfig,
    predictor: &PredictorConfig,
    deadline: Option<Instant>,
) -> Result<RunResult, RunError> {
    let mut state = iface.initial_state(program, input)?;
    let mut ex = Explorer::new(program, leakage.build(), predictor.build(), predictor.spec.clone());
    if let Some(d) = deadline {
        ex.set_deadline(d);
    }
    ex.start(&iface.initialized);
    let termination = ex.run(&mut state, iface.max_steps);
    if ex.timed_out() {
        return Err(RunError::Timeout);
    }
    match termination {
        Termination::Halted { .. } => Ok(RunResult {
            trace: ex.into_trace(),
            state,
            termination,
        }),
        Termination::BudgetExceeded { steps } => Err(RunError::Budget(steps)),
        Termination::Error(e) => Err(RunError::Exec(e.to_string())),
    }
}

#[derive(Clone, Debug)]
pub struct CampaignConfig {
    pub leakage: LeakageConfig,
    pub predictor: PredictorConfig,
    pub cases: u64,
    pub seed: u64,
    pub case_timeout: Duration,
    pub total_timeout: Duration,
    pub jobs: usize,
}

impl CampaignConfig {
    pub fn new(leakage: LeakageConfig, predictor: PredictorConfig) -> Self {
        CampaignConfig {
            leakage,
            predictor,
            cases: 100,
            seed: 0,
            case_timeout: Duration::from_secs(10),
            total_timeout: Duration::from_secs(600),
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeakReport {
    pub case: u64,
    pub a: InputAssignment,
    pub b: InputAssignment,
    pub divergence: Divergence,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Secure {
        cases: u64,
    },
    Leak(LeakReport),
    Timeout {
        completed: u64,
    },
    /// Execution error, exhausted step budget or clause fault.
    Error {
        case: u64,
        detail: String,
    },
}

impl Outcome {
    pub fn class(&self) -> &'static str {
        match self {
            Outcome::Secure { .. } => "secure",
            Outcome::Leak(_) => "leak",
            Outcome::Timeout { .. } => "timeout",
            Outcome::Error { .. } => "error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub program: String,
    pub leakage: LeakageConfig,
    pub predictor: PredictorConfig,
    pub seed: u64,
    pub cases: u64,
    pub outcome: Outcome,
}

fn obs_or_end(o: &Option<crate::leakage::Observation>) -> String {
    o.as_ref().map_or_else(|| "end".to_string(), |o| o.compact())
}

impl Verdict {
    /// One-line report: `RESULT <program> <leakage> <predictor> <class> key=value…`.
    pub fn machine_line(&self) -> String {
        let mut s = format!(
            "RESULT {} {} {} {} seed={} cases={}",
            self.program,
            self.leakage.model,
            self.predictor.model,
            self.outcome.class(),
            self.seed,
            self.cases
        );
        let lp = self.leakage.overrides();
        if !lp.is_empty() {
            s.push_str(&format!(" leakage_params={}", lp.join(",")));
        }
        let pp = self.predictor.overrides();
        if !pp.is_empty() {
            s.push_str(&format!(" predictor_params={}", pp.join(",")));
        }
        match &self.outcome {
            Outcome::Secure { cases } => s.push_str(&format!(" passed={cases}")),
            Outcome::Leak(r) => s.push_str(&format!(
                " case={} index={} left={} right={} input_a={} input_b={}",
                r.case,
                r.divergence.index,
                obs_or_end(&r.divergence.left),
                obs_or_end(&r.divergence.right),
                r.a.to_hex(),
                r.b.to_hex()
            )),
            Outcome::Timeout { completed } => s.push_str(&format!(" completed={completed}")),
            Outcome::Error { case, detail } => s.push_str(&format!(" case={case} detail={}", detail.replace(' ', "_"))),
        }
        s
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: leakage {} / predictor {}, seed {}: ",
            self.program, self.leakage.model, self.predictor.model, self.seed
        )?;
        match &self.outcome {
            Outcome::Secure { cases } => write!(f, "secure ({cases} cases passed)"),
            Outcome::Leak(r) => {
                writeln!(f, "LEAK in case {}", r.case)?;
                writeln!(f, "  input A: {}", r.a.to_hex())?;
                writeln!(f, "  input B: {}", r.b.to_hex())?;
                writeln!(f, "  first divergence at observation {}", r.divergence.index)?;
                writeln!(f, "    A: {}", obs_or_end(&r.divergence.left))?;
                write!(f, "    B: {}", obs_or_end(&r.divergence.right))
            }
            Outcome::Timeout { completed } => write!(f, "timeout after {completed} cases"),
            Outcome::Error { case, detail } => write!(f, "error in case {case}: {detail}"),
        }
    }
}

enum CaseResult {
    Equal,
    Diverge(LeakReport),
    Error(String),
    Timeout,
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

fn run_case(
    program: &Program,
    iface: &Interface,
    cfg: &CampaignConfig,
    case: u64,
    total_deadline: Instant,
) -> CaseResult {
    let deadline = (Instant::now() + cfg.case_timeout).min(total_deadline);
    let a = gen_input(&mut SplitMix64::for_case(cfg.seed, case, 0), iface);
    let b = mutate_secrets(&a, iface, &mut SplitMix64::for_case(cfg.seed, case, 1));
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| {
        let ta = run_input(program, iface, &a, &cfg.leakage, &cfg.predictor, Some(deadline))?;
        let tb = run_input(program, iface, &b, &cfg.leakage, &cfg.predictor, Some(deadline))?;
        Ok::<_, RunError>(first_divergence(&ta.trace, &tb.trace))
    }));
    match outcome {
        Ok(Ok(None)) => CaseResult::Equal,
        Ok(Ok(Some(divergence))) => CaseResult::Diverge(LeakReport { case, a, b, divergence }),
        Ok(Err(RunError::Timeout)) => CaseResult::Timeout,
        Ok(Err(e)) => CaseResult::Error(e.to_string()),
        Err(p) => CaseResult::Error(format!("clause fault: {}", panic_message(p))),
    }
}

/// Tests `cfg.cases` low-equivalent input pairs and reports the first
/// (lowest-index) divergence.
pub fn run_campaign(program: &Program, name: &str, iface: &Interface, cfg: &CampaignConfig) -> Verdict {
    let start = Instant::now();
    let total_deadline = start + cfg.total_timeout;
    let jobs = cfg.jobs.max(1) as u64;
    let verdict = |outcome| Verdict {
        program: name.to_string(),
        leakage: cfg.leakage.clone(),
        predictor: cfg.predictor.clone(),
        seed: cfg.seed,
        cases: cfg.cases,
        outcome,
    };
    let mut next = 0;
    while next < cfg.cases {
        if Instant::now() >= total_deadline {
            return verdict(Outcome::Timeout { completed: next });
        }
        let batch: Vec<u64> = (next..cfg.cases.min(next + jobs)).collect();
        let results: Vec<CaseResult> = if batch.len() == 1 {
            vec![run_case(program, iface, cfg, batch[0], total_deadline)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = batch
                    .iter()
                    .map(|&i| s.spawn(move || run_case(program, iface, cfg, i, total_deadline)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|p| CaseResult::Error(panic_message(p))))
                    .collect()
            })
        };
        for (&case, r) in batch.iter().zip(results) {
            match r {
                CaseResult::Equal => {}
                CaseResult::Diverge(rep) => return verdict(Outcome::Leak(rep)),
                CaseResult::Error(detail) => return verdict(Outcome::Error { case, detail }),
                CaseResult::Timeout => return verdict(Outcome::Timeout { completed: case }),
            }
        }
        next += batch.len() as u64;
    }
    verdict(Outcome::Secure { cases: cfg.cases })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("secret space of {0} bits exceeds the {ORACLE_MAX_BITS}-bit limit")]
    TooLarge(u32),
    #[error("run failed: {0}")]
    Run(#[from] RunError),
}

/// Every secret assignment consistent with the public bytes of `public`.
pub fn enumerate_secrets(iface: &Interface, public: &InputAssignment) -> Result<Vec<InputAssignment>, OracleError> {
    let bits = iface.secret_bits();
    if bits > ORACLE_MAX_BITS {
        return Err(OracleError::TooLarge(bits));
    }
    Ok((0..1u64 << bits)
        .map(|mut k| {
            let values = iface
                .inputs
                .iter()
                .zip(&public.values)
                .map(|(d, v)| match d.secrecy {
                    Secrecy::Public => v.clone(),
                    Secrecy::Secret => {
                        let n = d.free_bits();
                        let mut bytes = vec![0u8; d.length];
                        for bit in 0..n {
                            if k >> bit & 1 == 1 {
                                bytes[(bit / 8) as usize] |= 1 << (bit % 8);
                            }
                        }
                        k >>= n;
                        bytes
                    }
                })
                .collect();
            InputAssignment { values }
        })
        .collect())
}

/// Exhaustive non-interference check for the public part of `public`:
/// `true` iff two secret choices yield different traces.
pub fn brute_force_oracle(
    program: &Program,
    iface: &Interface,
    public: &InputAssignment,
    leakage: &LeakageConfig,
    predictor: &PredictorConfig,
) -> Result<bool, OracleError> {
    let mut reference: Option<LeakageTrace> = None;
    for input in enumerate_secrets(iface, public)? {
        let t = run_input(program, iface, &input, leakage, predictor, None)?.trace;
        match &reference {
            None => reference = Some(t),
            Some(r) if *r != t => return Ok(true),
            Some(_) => {}
        }
    }
    Ok(false)
}
