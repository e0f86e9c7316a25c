//! Command-line frontend.
//!
//! Exit codes: 0 secure / success, 1 leak (or differing traces, violated
//! corpus cells), 2 usage or configuration error, 3 timeout or execution
//! error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::asm::{disassemble, parse_program, Program};
use crate::corpus::{corpus_entry, load_corpus, verify_manifest, CellStatus, CorpusEntry};
use crate::harness::{
    gen_input, run_campaign, run_input, CampaignConfig, InputAssignment, Interface, Outcome, SplitMix64,
};
use crate::leakage::{first_divergence, LeakageTrace};
use crate::models::{LeakageConfig, LeakageModel, ModelParams};
use crate::speculation::{PredictorConfig, PredictorModel, SpecConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_LEAK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "uleak",
    version,
    about = "Relational side-channel testing under microarchitectural leakage models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a relational testing campaign.
    Run(RunArgs),
    /// Print the leakage trace of one input.
    Trace(TraceArgs),
    /// Compare two trace dumps.
    Diff { a: PathBuf, b: PathBuf },
    /// List leakage models and predictors with their parameters.
    List,
    /// Check every bundled (or on-disk) corpus entry against its manifest.
    VerifyCorpus {
        /// Corpus directory; defaults to the bundled corpus.
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Parse and validate an assembly file.
    Asm {
        file: PathBuf,
        /// Print the disassembly.
        #[arg(long)]
        disassemble: bool,
    },
}

#[derive(Args, Debug)]
struct Target {
    /// Assembly file or bundled corpus entry name.
    program: String,
    /// Interface file; defaults to the corpus entry's or a sibling `interface`.
    #[arg(long)]
    interface: Option<PathBuf>,
    #[arg(long, default_value = "ct")]
    leakage: String,
    #[arg(long, default_value = "seq")]
    predictor: String,
    /// Parameter override `name=value`, routed to whichever clause accepts it.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Human,
    Machine,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    target: Target,
    /// Number of test cases.
    #[arg(long, short = 'n', default_value_t = 100)]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-case timeout in seconds.
    #[arg(long, default_value_t = 10.0)]
    case_timeout: f64,
    /// Campaign timeout in seconds.
    #[arg(long, default_value_t = 600.0)]
    timeout: f64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, value_enum, default_value_t = Format::Human)]
    format: Format,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[command(flatten)]
    target: Target,
    /// Input bytes as hex, concatenated in declaration order.
    #[arg(long, conflicts_with = "seed")]
    input: Option<String>,
    /// Generate the input from this seed instead.
    #[arg(long)]
    seed: Option<u64>,
    /// Case index used with --seed.
    #[arg(long, default_value_t = 0, requires = "seed")]
    case: u64,
    /// Only show depth-0 observations.
    #[arg(long)]
    architectural: bool,
}

struct Fail(i32, String);

type CmdResult = Result<i32, Fail>;

fn usage(msg: impl Into<String>) -> Fail {
    Fail(EXIT_USAGE, msg.into())
}

struct Loaded {
    name: String,
    program: Program,
    interface: Interface,
    leakage: LeakageConfig,
    predictor: PredictorConfig,
}

fn read(path: &Path) -> Result<String, Fail> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_target(t: &Target) -> Result<Loaded, Fail> {
    let mut leakage =
        LeakageConfig::by_name(&t.leakage).ok_or_else(|| usage(format!("unknown leakage model '{}'", t.leakage)))?;
    let mut predictor =
        PredictorConfig::by_name(&t.predictor).ok_or_else(|| usage(format!("unknown predictor '{}'", t.predictor)))?;
    for p in &t.params {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| usage(format!("parameter '{p}' is not of the form name=value")))?;
        let (k, v) = (k.trim(), v.trim());
        let r = if leakage.model.params().contains(&k) {
            leakage.set_param(k, v)
        } else {
            predictor.set_param(k, v)
        };
        r.map_err(|e| usage(e.to_string()))?;
    }

    let path = Path::new(&t.program);
    let (name, program, iface_text) = if path.exists() {
        let src = read(path)?;
        let program = parse_program(&src).map_err(|e| usage(format!("{}:{e}", path.display())))?;
        let iface_path = match &t.interface {
            Some(p) => p.clone(),
            None => path.with_file_name("interface"),
        };
        let text = if iface_path.exists() || t.interface.is_some() {
            read(&iface_path)?
        } else {
            String::new()
        };
        let name = path
            .file_stem()
            .map_or_else(|| t.program.clone(), |s| s.to_string_lossy().into_owned());
        (name, program, text)
    } else if let Some(e) = corpus_entry(&t.program) {
        let text = match &t.interface {
            Some(p) => read(p)?,
            None => e.interface_text.clone(),
        };
        (e.name, e.program, text)
    } else {
        return Err(usage(format!("no such file or corpus entry '{}'", t.program)));
    };
    let interface = Interface::parse(&iface_text).map_err(|e| usage(e.to_string()))?;
    interface.check_program(&program).map_err(|e| usage(e.to_string()))?;
    Ok(Loaded {
        name,
        program,
        interface,
        leakage,
        predictor,
    })
}

fn seconds(s: f64, what: &str) -> Result<Duration, Fail> {
    Duration::try_from_secs_f64(s)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| usage(format!("{what} must be a positive number of seconds")))
}

fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> CmdResult {
    let l = load_target(&a.target)?;
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let cfg = CampaignConfig {
        leakage: l.leakage,
        predictor: l.predictor,
        cases: a.n,
        seed: a.seed,
        case_timeout: seconds(a.case_timeout, "--case-timeout")?,
        total_timeout: seconds(a.timeout, "--timeout")?,
        jobs: a.jobs.max(1),
    };
    let v = run_campaign(&l.program, &l.name, &l.interface, &cfg);
    match a.format {
        Format::Human => writeln!(out, "{v}"),
        Format::Machine => writeln!(out, "{}", v.machine_line()),
    }
    .ok();
    Ok(match v.outcome {
        Outcome::Secure { .. } => EXIT_OK,
        Outcome::Leak(_) => EXIT_LEAK,
        Outcome::Timeout { .. } | Outcome::Error { .. } => EXIT_RUNTIME,
    })
}

fn cmd_trace(a: &TraceArgs, out: &mut dyn Write) -> CmdResult {
    let l = load_target(&a.target)?;
    let input = match (&a.input, a.seed) {
        (Some(hex), None) => InputAssignment::from_hex(&l.interface, hex).map_err(|e| usage(e.to_string()))?,
        (None, Some(seed)) => gen_input(&mut SplitMix64::for_case(seed, a.case, 0), &l.interface),
        _ => return Err(usage("exactly one of --input or --seed is required")),
    };
    let r = run_input(&l.program, &l.interface, &input, &l.leakage, &l.predictor, None)
        .map_err(|e| Fail(EXIT_RUNTIME, e.to_string()))?;
    let trace = if a.architectural {
        r.trace.architectural()
    } else {
        r.trace
    };
    write!(out, "{}", trace.dump()).ok();
    Ok(EXIT_OK)
}

fn cmd_diff(a: &Path, b: &Path, out: &mut dyn Write) -> CmdResult {
    let parse = |p: &Path| -> Result<LeakageTrace, Fail> {
        LeakageTrace::parse_dump(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))
    };
    let (ta, tb) = (parse(a)?, parse(b)?);
    match first_divergence(&ta, &tb) {
        None => {
            writeln!(out, "equal").ok();
            Ok(EXIT_OK)
        }
        Some(d) => {
            let show = |o: &Option<crate::leakage::Observation>| {
                o.as_ref()
                    .map_or_else(|| "<end of trace>".to_string(), |o| o.to_string())
            };
            writeln!(out, "diverge at observation {}", d.index).ok();
            writeln!(out, "< {}", show(&d.left)).ok();
            writeln!(out, "> {}", show(&d.right)).ok();
            Ok(EXIT_LEAK)
        }
    }
}

fn cmd_list(out: &mut dyn Write) -> CmdResult {
    let mp = ModelParams::default();
    let sc = SpecConfig::default();
    writeln!(out, "leakage models:").ok();
    for m in LeakageModel::ALL {
        let params: Vec<String> = m
            .params()
            .iter()
            .map(|p| format!("{p}={}", mp.get(p).unwrap()))
            .collect();
        writeln!(out, "  {:8} {}{}", m.name(), m.description(), fmt_params(&params)).ok();
    }
    writeln!(out, "predictors:").ok();
    for m in PredictorModel::ALL {
        let params: Vec<String> = m
            .params()
            .iter()
            .map(|p| format!("{p}={}", sc.get(p).unwrap()))
            .collect();
        writeln!(out, "  {:8} {}{}", m.name(), m.description(), fmt_params(&params)).ok();
    }
    Ok(EXIT_OK)
}

fn fmt_params(p: &[String]) -> String {
    if p.is_empty() {
        String::new()
    } else {
        format!(" [{}]", p.join(", "))
    }
}

fn cmd_verify(dir: Option<&Path>, jobs: usize, out: &mut dyn Write) -> CmdResult {
    let entries: Vec<CorpusEntry> = match dir {
        None => load_corpus(),
        Some(d) => {
            let mut dirs: Vec<PathBuf> = std::fs::read_dir(d)
                .map_err(|e| usage(format!("{}: {e}", d.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            dirs.sort();
            dirs.iter()
                .map(|p| CorpusEntry::from_dir(p).map_err(|e| usage(e.to_string())))
                .collect::<Result<_, _>>()?
        }
    };
    let reports = verify_manifest(&entries, jobs.max(1));
    for r in &reports {
        writeln!(out, "{r}").ok();
    }
    let count = |s| reports.iter().filter(|r| r.status == s).count();
    let violated = count(CellStatus::Violated);
    writeln!(
        out,
        "{} confirmed, {violated} violated, {} skipped",
        count(CellStatus::Confirmed),
        count(CellStatus::Skipped)
    )
    .ok();
    Ok(if violated == 0 { EXIT_OK } else { EXIT_LEAK })
}

fn cmd_asm(file: &Path, dis: bool, out: &mut dyn Write) -> CmdResult {
    let src = read(file)?;
    let p = parse_program(&src).map_err(|e| usage(format!("{}:{e}", file.display())))?;
    if dis {
        write!(out, "{}", disassemble(&p)).ok();
    } else {
        writeln!(
            out,
            "ok: {} instructions, {} labels, entry {:#x}",
            p.instructions.len(),
            p.labels.len(),
            p.entry
        )
        .ok();
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                write!(err, "{text}").ok();
            } else {
                write!(out, "{text}").ok();
            }
            return code;
        }
    };
    let r = match &cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Trace(a) => cmd_trace(a, out),
        Command::Diff { a, b } => cmd_diff(a, b, out),
        Command::List => cmd_list(out),
        Command::VerifyCorpus { dir, jobs } => cmd_verify(dir.as_deref(), *jobs, out),
        Command::Asm { file, disassemble } => cmd_asm(file, *disassemble, out),
    };
    match r {
        Ok(code) => code,
        Err(Fail(code, msg)) => {
            writeln!(err, "error: {msg}").ok();
            code
        }
    }
}
