//! Built-in leakage clauses, parameterized and registered by name.

mod compression;
mod ct;
mod packing;
mod prefetch;
mod regfile;
mod reuse;
mod silent_store;
mod simplify;

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::leakage::LeakageClause;
use crate::machine::Region;

pub use compression::{bdi_size, fpc_size, CacheCompression, CompressionScheme, LineLengthError, LINE_BYTES};
pub use ct::ConstantTime;
pub use packing::OperandPacking;
pub use prefetch::{DataDependentPrefetch, NextLinePrefetch, StreamPrefetch};
pub use regfile::{RegFileCompression, RegFileVariant};
pub use reuse::{ComputationReuse, ADDR_DISCRIMINANT, LOAD_DISCRIMINANT};
pub use silent_store::{SilentStore, SilentStoreVariant};
pub use simplify::{Simplification, SimplifyVariant};

/// All-ones 64-bit word.
pub const ALL1: u64 = u64::MAX;

/// Tunable constants shared by the clause library.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelParams {
    pub narrow_rfc_limit: u64,
    pub narrow_cs_limit: u64,
    /// Age in ticks after which an operand-packing window entry is evicted.
    pub op_ctx_size: u64,
    /// Operands strictly below this value count as narrow for operand packing.
    pub op_narrow_limit: u64,
    /// Associativity of the reuse tables; `usize::MAX` means unbounded.
    pub cr_ways: usize,
    pub cacheline_bits: u32,
    pub page_bits: u32,
    pub pf_hits: usize,
    pub m1pf_size: usize,
    pub m1pf_prefetch: usize,
    pub word_read_size: u8,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            narrow_rfc_limit: 1 << 16,
            narrow_cs_limit: 1 << 32,
            op_ctx_size: 200,
            op_narrow_limit: 16,
            cr_ways: 4,
            cacheline_bits: 6,
            page_bits: 12,
            pf_hits: 3,
            m1pf_size: 20,
            m1pf_prefetch: 5,
            word_read_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParamError {
    #[error("unknown parameter '{name}' for {owner}")]
    Unknown { name: String, owner: String },
    #[error("invalid value '{value}' for parameter '{name}': {reason}")]
    Invalid {
        name: String,
        value: String,
        reason: String,
    },
}

pub(crate) fn parse_u64(name: &str, value: &str) -> Result<u64, ParamError> {
    let v = value.trim();
    let parsed = if let Some(h) = v.strip_prefix("0x") {
        u64::from_str_radix(h, 16).ok()
    } else if let Some((a, b)) = v.split_once("<<") {
        let a: u64 = a.trim().parse().ok().unwrap_or(0);
        let b: u32 = b.trim().parse().ok().unwrap_or(64);
        a.checked_shl(b).filter(|r| r >> b == a)
    } else {
        v.parse().ok()
    };
    parsed.ok_or_else(|| ParamError::Invalid {
        name: name.into(),
        value: value.into(),
        reason: "expected an unsigned integer".into(),
    })
}

impl ModelParams {
    pub const NAMES: [&'static str; 11] = [
        "narrow_rfc_limit",
        "narrow_cs_limit",
        "op_ctx_size",
        "op_narrow_limit",
        "cr_ways",
        "cacheline_bits",
        "page_bits",
        "pf_hits",
        "m1pf_size",
        "m1pf_prefetch",
        "word_read_size",
    ];

    pub fn get(&self, name: &str) -> Option<String> {
        Some(match name {
            "narrow_rfc_limit" => self.narrow_rfc_limit.to_string(),
            "narrow_cs_limit" => self.narrow_cs_limit.to_string(),
            "op_ctx_size" => self.op_ctx_size.to_string(),
            "op_narrow_limit" => self.op_narrow_limit.to_string(),
            "cr_ways" if self.cr_ways == usize::MAX => "inf".to_string(),
            "cr_ways" => self.cr_ways.to_string(),
            "cacheline_bits" => self.cacheline_bits.to_string(),
            "page_bits" => self.page_bits.to_string(),
            "pf_hits" => self.pf_hits.to_string(),
            "m1pf_size" => self.m1pf_size.to_string(),
            "m1pf_prefetch" => self.m1pf_prefetch.to_string(),
            "word_read_size" => self.word_read_size.to_string(),
            _ => return None,
        })
    }

    /// Sets one parameter from its textual value and re-validates.
    pub fn set(&mut self, name: &str, value: &str) -> Result<(), ParamError> {
        let invalid = |reason: &str| ParamError::Invalid {
            name: name.into(),
            value: value.into(),
            reason: reason.into(),
        };
        let small = |v: u64| usize::try_from(v).map_err(|_| invalid("too large"));
        let mut next = self.clone();
        match name {
            "narrow_rfc_limit" => next.narrow_rfc_limit = parse_u64(name, value)?,
            "narrow_cs_limit" => next.narrow_cs_limit = parse_u64(name, value)?,
            "op_ctx_size" => next.op_ctx_size = parse_u64(name, value)?,
            "op_narrow_limit" => next.op_narrow_limit = parse_u64(name, value)?,
            "cr_ways" if value.trim() == "inf" => next.cr_ways = usize::MAX,
            "cr_ways" => next.cr_ways = small(parse_u64(name, value)?)?,
            "cacheline_bits" => {
                next.cacheline_bits = u32::try_from(parse_u64(name, value)?).map_err(|_| invalid("too large"))?
            }
            "page_bits" => next.page_bits = u32::try_from(parse_u64(name, value)?).map_err(|_| invalid("too large"))?,
            "pf_hits" => next.pf_hits = small(parse_u64(name, value)?)?,
            "m1pf_size" => next.m1pf_size = small(parse_u64(name, value)?)?,
            "m1pf_prefetch" => next.m1pf_prefetch = small(parse_u64(name, value)?)?,
            "word_read_size" => match parse_u64(name, value)? {
                w @ (1 | 2 | 4 | 8) => next.word_read_size = w as u8,
                _ => return Err(invalid("must be 1, 2, 4 or 8")),
            },
            _ => {
                return Err(ParamError::Unknown {
                    name: name.into(),
                    owner: "leakage models".into(),
                })
            }
        }
        next.validate().map_err(|r| invalid(&r))?;
        *self = next;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            self.narrow_rfc_limit,
            self.narrow_cs_limit,
            self.op_ctx_size,
            self.op_narrow_limit,
            self.cr_ways as u64,
            u64::from(self.cacheline_bits),
            u64::from(self.page_bits),
            self.pf_hits as u64,
            self.m1pf_size as u64,
            self.m1pf_prefetch as u64,
        ];
        if positive.contains(&0) {
            return Err("limits must be strictly positive".into());
        }
        if self.cacheline_bits >= self.page_bits || self.page_bits >= 64 {
            return Err("need cacheline_bits < page_bits < 64".into());
        }
        Ok(())
    }
}

/// Registry of the 18 built-in leakage clauses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LeakageModel {
    Ct,
    Ss,
    Ssi,
    Ssi0,
    Rfc,
    Rfc0,
    Nrfc,
    Cs,
    Cst,
    Csn,
    Op,
    Cr,
    Cra,
    CcFpc,
    CcBdi,
    PfNl,
    PfS,
    PfDd,
}

impl LeakageModel {
    pub const ALL: [LeakageModel; 18] = [
        LeakageModel::Ct,
        LeakageModel::Ss,
        LeakageModel::Ssi,
        LeakageModel::Ssi0,
        LeakageModel::Rfc,
        LeakageModel::Rfc0,
        LeakageModel::Nrfc,
        LeakageModel::Cs,
        LeakageModel::Cst,
        LeakageModel::Csn,
        LeakageModel::Op,
        LeakageModel::Cr,
        LeakageModel::Cra,
        LeakageModel::CcFpc,
        LeakageModel::CcBdi,
        LeakageModel::PfNl,
        LeakageModel::PfS,
        LeakageModel::PfDd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LeakageModel::Ct => "ct",
            LeakageModel::Ss => "ss",
            LeakageModel::Ssi => "ssi",
            LeakageModel::Ssi0 => "ssi0",
            LeakageModel::Rfc => "rfc",
            LeakageModel::Rfc0 => "rfc0",
            LeakageModel::Nrfc => "nrfc",
            LeakageModel::Cs => "cs",
            LeakageModel::Cst => "cst",
            LeakageModel::Csn => "csn",
            LeakageModel::Op => "op",
            LeakageModel::Cr => "cr",
            LeakageModel::Cra => "cra",
            LeakageModel::CcFpc => "cc-fpc",
            LeakageModel::CcBdi => "cc-bdi",
            LeakageModel::PfNl => "pf-nl",
            LeakageModel::PfS => "pf-s",
            LeakageModel::PfDd => "pf-dd",
        }
    }

    pub fn from_name(name: &str) -> Option<LeakageModel> {
        LeakageModel::ALL.iter().copied().find(|m| m.name() == name)
    }

    pub fn description(self) -> &'static str {
        match self {
            LeakageModel::Ct => "constant-time: load/store addresses and branch targets",
            LeakageModel::Ss => "silent stores",
            LeakageModel::Ssi => "silent stores to initialized memory",
            LeakageModel::Ssi0 => "silent zero stores to initialized memory",
            LeakageModel::Rfc => "register-file compression on equal values",
            LeakageModel::Rfc0 => "register-file compression on zero",
            LeakageModel::Nrfc => "narrow register-file compression",
            LeakageModel::Cs => "semi-trivial computation simplification",
            LeakageModel::Cst => "trivial computation simplification",
            LeakageModel::Csn => "narrow multiplication simplification",
            LeakageModel::Op => "operand packing",
            LeakageModel::Cr => "computation reuse",
            LeakageModel::Cra => "computation reuse including addresses and loads",
            LeakageModel::CcFpc => "cache-line compression, frequent patterns",
            LeakageModel::CcBdi => "cache-line compression, base-delta-immediate",
            LeakageModel::PfNl => "next-line prefetcher",
            LeakageModel::PfS => "stream prefetcher",
            LeakageModel::PfDd => "data-dependent (pointer-chasing) prefetcher",
        }
    }

    /// Parameters this clause reads, and therefore accepts as overrides.
    pub fn params(self) -> &'static [&'static str] {
        match self {
            LeakageModel::Nrfc => &["narrow_rfc_limit"],
            LeakageModel::Csn => &["narrow_cs_limit"],
            LeakageModel::Op => &["op_ctx_size", "op_narrow_limit"],
            LeakageModel::Cr | LeakageModel::Cra => &["cr_ways"],
            LeakageModel::PfNl => &["cacheline_bits"],
            LeakageModel::PfS => &["cacheline_bits", "page_bits", "pf_hits"],
            LeakageModel::PfDd => &["pf_hits", "m1pf_size", "m1pf_prefetch", "word_read_size"],
            _ => &[],
        }
    }

    pub fn build(self, p: &ModelParams) -> Box<dyn LeakageClause> {
        use LeakageModel as M;
        match self {
            M::Ct => Box::new(ConstantTime),
            M::Ss => Box::new(SilentStore::new(SilentStoreVariant::Plain)),
            M::Ssi => Box::new(SilentStore::new(SilentStoreVariant::Initialized)),
            M::Ssi0 => Box::new(SilentStore::new(SilentStoreVariant::InitializedZero)),
            M::Rfc => Box::new(RegFileCompression::new(RegFileVariant::Equal, p)),
            M::Rfc0 => Box::new(RegFileCompression::new(RegFileVariant::Zero, p)),
            M::Nrfc => Box::new(RegFileCompression::new(RegFileVariant::Narrow, p)),
            M::Cs => Box::new(Simplification::new(SimplifyVariant::SemiTrivial, p)),
            M::Cst => Box::new(Simplification::new(SimplifyVariant::Trivial, p)),
            M::Csn => Box::new(Simplification::new(SimplifyVariant::Narrow, p)),
            M::Op => Box::new(OperandPacking::new(p)),
            M::Cr => Box::new(ComputationReuse::new(false, p)),
            M::Cra => Box::new(ComputationReuse::new(true, p)),
            M::CcFpc => Box::new(CacheCompression::new(CompressionScheme::Fpc)),
            M::CcBdi => Box::new(CacheCompression::new(CompressionScheme::Bdi)),
            M::PfNl => Box::new(NextLinePrefetch::new(p)),
            M::PfS => Box::new(StreamPrefetch::new(p)),
            M::PfDd => Box::new(DataDependentPrefetch::new(p)),
        }
    }
}

impl fmt::Display for LeakageModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A registered model plus its parameter values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeakageConfig {
    pub model: LeakageModel,
    pub params: ModelParams,
}

impl LeakageConfig {
    pub fn new(model: LeakageModel) -> Self {
        LeakageConfig {
            model,
            params: ModelParams::default(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        LeakageModel::from_name(name).map(LeakageConfig::new)
    }

    /// Applies a `name=value` override; only the model's own parameters are
    /// accepted.
    pub fn set_param(&mut self, name: &str, value: &str) -> Result<(), ParamError> {
        if !self.model.params().contains(&name) {
            return Err(ParamError::Unknown {
                name: name.into(),
                owner: format!("leakage model '{}'", self.model),
            });
        }
        self.params.set(name, value)
    }

    pub fn build(&self) -> Box<dyn LeakageClause> {
        self.model.build(&self.params)
    }

    /// Non-default parameter values, as `name=value` strings.
    pub fn overrides(&self) -> Vec<String> {
        let defaults = ModelParams::default();
        self.model
            .params()
            .iter()
            .filter(|n| self.params.get(n) != defaults.get(n))
            .map(|n| format!("{n}={}", self.params.get(n).unwrap()))
            .collect()
    }
}

/// Byte-granular record of which memory has been initialized: the regions
/// seeded at start plus every byte stored since.
#[derive(Clone, Debug, Default)]
pub struct InitTracker {
    regions: Vec<Region>,
    written: HashSet<u64>,
}

impl InitTracker {
    pub fn seed(&mut self, regions: &[Region]) {
        self.regions.extend_from_slice(regions);
    }

    pub fn is_init(&self, addr: u64) -> bool {
        self.written.contains(&addr) || self.regions.iter().any(|r| r.contains(addr, 1))
    }

    pub fn all_init(&self, addr: u64, size: u64) -> bool {
        (0..size).all(|i| self.is_init(addr.wrapping_add(i)))
    }

    pub fn mark(&mut self, addr: u64, size: u64) {
        for i in 0..size {
            let a = addr.wrapping_add(i);
            if !self.regions.iter().any(|r| r.contains(a, 1)) {
                self.written.insert(a);
            }
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_has_eighteen_unique_names() {
        let names: HashSet<_> = LeakageModel::ALL.iter().map(|m| m.name()).collect();
        assert_eq!(names.len(), 18);
        for m in LeakageModel::ALL {
            assert_eq!(LeakageModel::from_name(m.name()), Some(m));
            assert_eq!(m.build(&ModelParams::default()).name(), m.name());
        }
    }

    #[test]
    fn param_overrides() {
        let mut cfg = LeakageConfig::by_name("op").unwrap();
        cfg.set_param("op_ctx_size", "50").unwrap();
        assert_eq!(cfg.params.op_ctx_size, 50);
        assert_eq!(cfg.overrides(), vec!["op_ctx_size=50".to_string()]);
        assert!(matches!(cfg.set_param("cr_ways", "2"), Err(ParamError::Unknown { .. })));
        assert!(cfg.set_param("op_ctx_size", "0").is_err());
        assert!(cfg.set_param("op_ctx_size", "abc").is_err());

        let mut cr = LeakageConfig::by_name("cr").unwrap();
        cr.set_param("cr_ways", "inf").unwrap();
        assert_eq!(cr.params.cr_ways, usize::MAX);

        let mut nrfc = LeakageConfig::by_name("nrfc").unwrap();
        nrfc.set_param("narrow_rfc_limit", "1<<8").unwrap();
        assert_eq!(nrfc.params.narrow_rfc_limit, 256);
    }

    #[test]
    fn cacheline_must_be_below_page() {
        let mut p = ModelParams::default();
        assert!(p.set("cacheline_bits", "12").is_err());
        assert_eq!(p.cacheline_bits, 6);
    }

    #[test]
    fn init_tracker() {
        let mut t = InitTracker::default();
        t.seed(&[Region::new(0x100, 4)]);
        assert!(t.all_init(0x100, 4));
        assert!(!t.all_init(0x102, 4));
        t.mark(0x104, 2);
        assert!(t.all_init(0x102, 4));
        assert!(!t.is_init(0x106));
    }
}
