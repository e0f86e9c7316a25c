//! Bundled example programs with interfaces and expected verdicts.
//!
//! Each entry is a directory holding `prog.asm`, `interface` (TOML, see
//! [`crate::harness`]) and `expected`:
//!
//! ```text
//! # comment
//! seed 7
//! cases 100
//! cell <leakage> <predictor> <leak|secure|unspecified>
//! ```

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::asm::{parse_program, AsmError, Program};
use crate::harness::{run_campaign, CampaignConfig, Interface, InterfaceError, Outcome, Verdict};
use crate::models::{LeakageConfig, LeakageModel};
use crate::speculation::{PredictorConfig, PredictorModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expect {
    Leak,
    Secure,
    Unspecified,
}

impl Expect {
    pub fn as_str(self) -> &'static str {
        match self {
            Expect::Leak => "leak",
            Expect::Secure => "secure",
            Expect::Unspecified => "unspecified",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub leakage: LeakageModel,
    pub predictor: PredictorModel,
    pub expect: Expect,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub seed: u64,
    pub cases: u64,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("{entry}/expected line {line}: {message}")]
    Manifest {
        entry: String,
        line: usize,
        message: String,
    },
    #[error("{entry}/prog.asm: {source}")]
    Asm { entry: String, source: AsmError },
    #[error("{entry}/interface: {source}")]
    Interface { entry: String, source: InterfaceError },
    #[error("{entry}: {message}")]
    Io { entry: String, message: String },
}

impl Manifest {
    pub fn parse(entry: &str, text: &str) -> Result<Manifest, CorpusError> {
        let mut seed = 0;
        let mut cases = 100;
        let mut cells: Vec<Cell> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let err = |m: String| CorpusError::Manifest {
                entry: entry.into(),
                line: i + 1,
                message: m,
            };
            let line = raw.split('#').next().unwrap().trim();
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                [] => {}
                ["seed", n] => seed = n.parse().map_err(|_| err(format!("bad seed '{n}'")))?,
                ["cases", n] => {
                    cases = n
                        .parse()
                        .ok()
                        .filter(|&c| c > 0)
                        .ok_or_else(|| err(format!("bad case count '{n}'")))?
                }
                ["cell", l, p, e] => {
                    let leakage =
                        LeakageModel::from_name(l).ok_or_else(|| err(format!("unknown leakage model '{l}'")))?;
                    let predictor =
                        PredictorModel::from_name(p).ok_or_else(|| err(format!("unknown predictor '{p}'")))?;
                    let expect = match *e {
                        "leak" => Expect::Leak,
                        "secure" => Expect::Secure,
                        "unspecified" => Expect::Unspecified,
                        _ => return Err(err(format!("bad expectation '{e}'"))),
                    };
                    if cells.iter().any(|c| c.leakage == leakage && c.predictor == predictor) {
                        return Err(err(format!("duplicate cell {l} {p}")));
                    }
                    cells.push(Cell {
                        leakage,
                        predictor,
                        expect,
                    });
                }
                _ => return Err(err(format!("malformed line '{line}'"))),
            }
        }
        Ok(Manifest { seed, cases, cells })
    }
}

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub name: String,
    pub source: String,
    pub interface_text: String,
    pub program: Program,
    pub interface: Interface,
    pub manifest: Manifest,
}

impl CorpusEntry {
    pub fn new(name: &str, source: &str, interface: &str, expected: &str) -> Result<CorpusEntry, CorpusError> {
        let program = parse_program(source).map_err(|source| CorpusError::Asm {
            entry: name.into(),
            source,
        })?;
        let iface_err = |source| CorpusError::Interface {
            entry: name.into(),
            source,
        };
        let iface = Interface::parse(interface).map_err(iface_err)?;
        iface.check_program(&program).map_err(iface_err)?;
        Ok(CorpusEntry {
            name: name.into(),
            source: source.into(),
            interface_text: interface.into(),
            program,
            interface: iface,
            manifest: Manifest::parse(name, expected)?,
        })
    }

    /// Loads an entry from a directory on disk.
    pub fn from_dir(dir: &Path) -> Result<CorpusEntry, CorpusError> {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let read = |f: &str| {
            std::fs::read_to_string(dir.join(f)).map_err(|e| CorpusError::Io {
                entry: name.clone(),
                message: format!("{f}: {e}"),
            })
        };
        let expected = if dir.join("expected").exists() {
            read("expected")?
        } else {
            String::new()
        };
        CorpusEntry::new(&name, &read("prog.asm")?, &read("interface")?, &expected)
    }

    pub fn campaign(&self, leakage: LeakageModel, predictor: PredictorModel) -> CampaignConfig {
        CampaignConfig {
            cases: self.manifest.cases,
            seed: self.manifest.seed,
            ..CampaignConfig::new(LeakageConfig::new(leakage), PredictorConfig::new(predictor))
        }
    }
}

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$((
            $name,
            include_str!(concat!("../corpus/", $name, "/prog.asm")),
            include_str!(concat!("../corpus/", $name, "/interface")),
            include_str!(concat!("../corpus/", $name, "/expected")),
        )),*]
    };
}

const BUNDLED: &[(&str, &str, &str, &str)] = bundled!(
    "ct_swap",
    "branchy_swap",
    "lookup_table",
    "masked_select",
    "spectre_v1",
    "sls_gadget",
    "stl_gadget",
    "rsb_gadget",
    "ptr_chase",
    "memcpy_pub",
    "store_zero_fresh",
);

/// The bundled corpus, in a fixed order.
pub fn load_corpus() -> Vec<CorpusEntry> {
    BUNDLED
        .iter()
        .map(|(n, s, i, e)| CorpusEntry::new(n, s, i, e).expect("bundled corpus entry is valid"))
        .collect()
}

pub fn corpus_entry(name: &str) -> Option<CorpusEntry> {
    load_corpus().into_iter().find(|e| e.name == name)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellStatus {
    Confirmed,
    Violated,
    Skipped,
}

#[derive(Clone, Debug)]
pub struct CellReport {
    pub entry: String,
    pub cell: Cell,
    pub status: CellStatus,
    pub verdict: Option<Verdict>,
}

impl fmt::Display for CellReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.status {
            CellStatus::Confirmed => "ok",
            CellStatus::Violated => "VIOLATED",
            CellStatus::Skipped => "skipped",
        };
        write!(
            f,
            "{status:9} {:17} {:7} {:9} expected {:11}",
            self.entry,
            self.cell.leakage,
            self.cell.predictor,
            self.cell.expect.as_str()
        )?;
        if let Some(v) = &self.verdict {
            write!(f, " got {}", v.outcome.class())?;
        }
        Ok(())
    }
}

/// Runs every specified cell with the entry's pinned seed and case count.
pub fn verify_manifest(entries: &[CorpusEntry], jobs: usize) -> Vec<CellReport> {
    let mut out = Vec::new();
    for e in entries {
        for cell in &e.manifest.cells {
            if cell.expect == Expect::Unspecified {
                out.push(CellReport {
                    entry: e.name.clone(),
                    cell: cell.clone(),
                    status: CellStatus::Skipped,
                    verdict: None,
                });
                continue;
            }
            let mut cfg = e.campaign(cell.leakage, cell.predictor);
            cfg.jobs = jobs;
            let v = run_campaign(&e.program, &e.name, &e.interface, &cfg);
            let ok = matches!(
                (&v.outcome, cell.expect),
                (Outcome::Leak(_), Expect::Leak) | (Outcome::Secure { .. }, Expect::Secure)
            );
            out.push(CellReport {
                entry: e.name.clone(),
                cell: cell.clone(),
                status: if ok {
                    CellStatus::Confirmed
                } else {
                    CellStatus::Violated
                },
                verdict: Some(v),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_entries_load() {
        let c = load_corpus();
        assert_eq!(c.len(), BUNDLED.len());
        for e in &c {
            assert!(!e.manifest.cells.is_empty(), "{} has no cells", e.name);
        }
    }

    #[test]
    fn manifest_errors() {
        assert!(Manifest::parse("x", "cell ct nope leak").is_err());
        assert!(Manifest::parse("x", "cell nope seq leak").is_err());
        assert!(Manifest::parse("x", "cell ct seq maybe").is_err());
        assert!(Manifest::parse("x", "cell ct seq leak\ncell ct seq secure").is_err());
        assert!(Manifest::parse("x", "cases 0").is_err());
        let m = Manifest::parse("x", "# c\nseed 3\ncases 5\ncell ct seq leak # trailing").unwrap();
        assert_eq!((m.seed, m.cases, m.cells.len()), (3, 5, 1));
    }
}
