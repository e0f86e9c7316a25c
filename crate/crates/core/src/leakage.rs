//! Observations, leakage traces and the leakage-clause contract.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::asm::Program;
use crate::machine::{self, EventSink, MachineState, MicroOp, Region, Termination, UopContext};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Load,
    Store,
    Jump,
    SilentStore,
    RegCompression,
    Simplification,
    Packing,
    Reuse,
    Compression,
    Prefetch,
}

impl Tag {
    pub const ALL: [Tag; 10] = [
        Tag::Load,
        Tag::Store,
        Tag::Jump,
        Tag::SilentStore,
        Tag::RegCompression,
        Tag::Simplification,
        Tag::Packing,
        Tag::Reuse,
        Tag::Compression,
        Tag::Prefetch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Load => "load",
            Tag::Store => "store",
            Tag::Jump => "jump",
            Tag::SilentStore => "ss",
            Tag::RegCompression => "rfc",
            Tag::Simplification => "cs",
            Tag::Packing => "op",
            Tag::Reuse => "cr",
            Tag::Compression => "cc",
            Tag::Prefetch => "pf",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tag::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown observation tag '{s}'"))
    }
}

/// One leakage observation. Equality covers tag, payload and speculation
/// depth; the tick is informational only.
#[derive(Clone, Debug, Eq)]
pub struct Observation {
    pub tag: Tag,
    pub payload: Vec<u64>,
    pub tick: u64,
    pub depth: u32,
}

impl PartialEq for Observation {
    fn eq(&self, other: &Self) -> bool {
        self.tag == other.tag && self.payload == other.payload && self.depth == other.depth
    }
}

impl Observation {
    pub fn new(tag: Tag, payload: impl Into<Vec<u64>>) -> Self {
        Observation {
            tag,
            payload: payload.into(),
            tick: 0,
            depth: 0,
        }
    }

    /// `tag:v1:v2…` with hex values; compact form used in report lines.
    pub fn compact(&self) -> String {
        let mut s = self.tag.to_string();
        for v in &self.payload {
            s.push_str(&format!(":{v:#x}"));
        }
        if self.depth > 0 {
            s.push_str(&format!("@{}", self.depth));
        }
        s
    }
}

impl fmt::Display for Observation {
    /// Dump-format line: `tick depth tag v1 v2 …`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.tick, self.depth, self.tag)?;
        for v in &self.payload {
            write!(f, " {v:#x}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LeakageTrace {
    observations: Vec<Observation>,
}

impl LeakageTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, obs: Observation) {
        self.observations.push(obs);
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Observation> {
        self.observations.get(i)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.observations.iter()
    }

    /// Observations emitted on the architectural path only.
    pub fn architectural(&self) -> LeakageTrace {
        self.observations.iter().filter(|o| o.depth == 0).cloned().collect()
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        for o in &self.observations {
            out.push_str(&o.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse_dump(text: &str) -> Result<LeakageTrace, DumpError> {
        let mut trace = LeakageTrace::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| DumpError {
                line: line_no,
                message: msg,
            };
            let mut fields = line.split_whitespace();
            let tick = fields
                .next()
                .and_then(|t| t.parse::<u64>().ok())
                .ok_or_else(|| err("bad tick".into()))?;
            let depth = fields
                .next()
                .and_then(|t| t.parse::<u32>().ok())
                .ok_or_else(|| err("bad depth".into()))?;
            let tag: Tag = fields
                .next()
                .ok_or_else(|| err("missing tag".into()))?
                .parse()
                .map_err(err)?;
            let payload = fields
                .map(|v| {
                    v.strip_prefix("0x")
                        .and_then(|h| u64::from_str_radix(h, 16).ok())
                        .ok_or_else(|| err(format!("bad value '{v}'")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            trace.push(Observation {
                tag,
                payload,
                tick,
                depth,
            });
        }
        Ok(trace)
    }
}

impl FromIterator<Observation> for LeakageTrace {
    fn from_iter<I: IntoIterator<Item = Observation>>(iter: I) -> Self {
        LeakageTrace {
            observations: iter.into_iter().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a LeakageTrace {
    type Item = &'a Observation;
    type IntoIter = std::slice::Iter<'a, Observation>;

    fn into_iter(self) -> Self::IntoIter {
        self.observations.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trace dump line {line}: {message}")]
pub struct DumpError {
    pub line: usize,
    pub message: String,
}

/// Where two traces first differ. `None` on a side means that trace ended.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Divergence {
    pub index: usize,
    pub left: Option<Observation>,
    pub right: Option<Observation>,
}

pub fn trace_equal(a: &LeakageTrace, b: &LeakageTrace) -> bool {
    a == b
}

pub fn first_divergence(a: &LeakageTrace, b: &LeakageTrace) -> Option<Divergence> {
    let common = a.len().min(b.len());
    let index = (0..common)
        .find(|&i| a.observations[i] != b.observations[i])
        .or((a.len() != b.len()).then_some(common))?;
    Some(Divergence {
        index,
        left: a.get(index).cloned(),
        right: b.get(index).cloned(),
    })
}

/// A leakage clause: a stateful set of handlers turning micro-ops into
/// observations. Handlers may read the machine state but never change it.
pub trait LeakageClause: Send {
    fn name(&self) -> &str;

    /// Called once before execution with the regions that start out
    /// initialized.
    fn on_start(&mut self, _initialized: &[Region]) {}

    fn observe(&mut self, uop: &MicroOp, cx: &UopContext<'_>, state: &MachineState) -> Option<Observation>;

    fn box_clone(&self) -> Box<dyn LeakageClause>;
}

impl Clone for Box<dyn LeakageClause> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Emits nothing.
#[derive(Clone, Debug, Default)]
pub struct NullClause;

impl LeakageClause for NullClause {
    fn name(&self) -> &str {
        "null"
    }

    fn observe(&mut self, _: &MicroOp, _: &UopContext<'_>, _: &MachineState) -> Option<Observation> {
        None
    }

    fn box_clone(&self) -> Box<dyn LeakageClause> {
        Box::new(self.clone())
    }
}

/// Drives a clause from micro-op events, stamping each observation with the
/// current tick and speculation depth.
pub struct Collector {
    pub clause: Box<dyn LeakageClause>,
    pub trace: LeakageTrace,
}

impl Collector {
    pub fn new(clause: Box<dyn LeakageClause>) -> Self {
        Collector {
            clause,
            trace: LeakageTrace::new(),
        }
    }

    pub fn into_trace(self) -> LeakageTrace {
        self.trace
    }
}

impl EventSink for Collector {
    fn on_uop(&mut self, uop: &MicroOp, cx: &UopContext<'_>, state: &MachineState) {
        if let Some(mut obs) = self.clause.observe(uop, cx, state) {
            obs.tick = state.tick;
            obs.depth = cx.depth;
            self.trace.push(obs);
        }
    }
}

/// Runs `program` architecturally from `state` with `clause` attached.
pub fn attach_and_collect(
    mut clause: Box<dyn LeakageClause>,
    program: &Program,
    state: &mut MachineState,
    initialized: &[Region],
    max_steps: u64,
) -> (LeakageTrace, Termination) {
    clause.on_start(initialized);
    let mut collector = Collector::new(clause);
    let term = machine::run(state, program, &mut [&mut collector], max_steps);
    (collector.into_trace(), term)
}
