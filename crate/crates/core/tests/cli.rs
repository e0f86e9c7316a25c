use std::path::PathBuf;
use std::process::Command;

use uleak::cli::{run_cli, EXIT_LEAK, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_cli(std::iter::once("uleak").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("uleak-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn secure_campaign_exits_zero() {
    let (code, out, _) = cli(&["run", "ct_swap", "--format", "machine", "--seed", "1"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out, "RESULT ct_swap ct seq secure seed=1 cases=100 passed=100\n");
}

#[test]
fn leaking_campaign_exits_one() {
    let (code, out, _) = cli(&["run", "branchy_swap", "--format", "machine", "-n", "20"]);
    assert_eq!(code, EXIT_LEAK);
    assert!(
        out.starts_with("RESULT branchy_swap ct seq leak seed=0 cases=20 case="),
        "{out}"
    );
    assert!(out.contains(" left=jump:"), "{out}");
    let (code, human, _) = cli(&["run", "branchy_swap", "-n", "20"]);
    assert_eq!(code, EXIT_LEAK);
    assert!(human.contains("leak"), "{human}");
}

#[test]
fn params_route_to_the_right_clause() {
    let (code, out, _) = cli(&[
        "run",
        "spectre_v1",
        "--predictor",
        "pht",
        "--param",
        "window=8",
        "--format",
        "machine",
        "-n",
        "50",
    ]);
    assert_eq!(code, EXIT_LEAK);
    assert!(out.contains("predictor_params=window=8"), "{out}");
    let (code, out, _) = cli(&[
        "run",
        "ct_swap",
        "--leakage",
        "op",
        "--param",
        "op_ctx_size=10",
        "--format",
        "machine",
        "-n",
        "5",
    ]);
    assert_ne!(code, EXIT_USAGE);
    assert!(out.contains("leakage_params=op_ctx_size=10"), "{out}");
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        &["run", "nope"][..],
        &["run", "ct_swap", "--leakage", "zz"],
        &["run", "ct_swap", "--predictor", "zz"],
        &["run", "ct_swap", "--param", "window"],
        &["run", "ct_swap", "--param", "window=4"],
        &["run", "ct_swap", "-n", "0"],
        &["run", "ct_swap", "--timeout", "0"],
        &["trace", "ct_swap"],
        &["frobnicate"],
    ] {
        let (code, _, err) = cli(args);
        assert_eq!(code, EXIT_USAGE, "{args:?}");
        assert!(!err.is_empty(), "{args:?}");
    }
}

#[test]
fn execution_error_exits_three() {
    let d = scratch("err");
    std::fs::write(d.join("prog.asm"), "mov r1, 0\nudiv r2, r2, r1\nhalt\n").unwrap();
    let (code, out, _) = cli(&[
        "run",
        d.join("prog.asm").to_str().unwrap(),
        "--format",
        "machine",
        "-n",
        "3",
    ]);
    assert_eq!(code, EXIT_RUNTIME);
    assert!(out.contains(" error ") && out.contains("case=0 detail="), "{out}");
    let detail = out.split("detail=").nth(1).unwrap().trim_end();
    assert!(!detail.is_empty() && !detail.contains(' '), "{detail}");
}

#[test]
fn program_file_with_sibling_interface() {
    let d = scratch("sibling");
    std::fs::write(d.join("prog.asm"), "jz r1, done\nmov r2, 1\ndone: halt\n").unwrap();
    std::fs::write(
        d.join("interface"),
        "[[input]]\nname = 's'\nsecrecy = 'secret'\nlength = 1\nregister = 'r1'\n",
    )
    .unwrap();
    let prog = d.join("prog.asm");
    let (code, out, _) = cli(&["run", prog.to_str().unwrap(), "--format", "machine"]);
    assert_eq!(code, EXIT_LEAK, "{out}");
    assert!(out.starts_with("RESULT prog ct seq leak"));
}

#[test]
fn trace_and_diff() {
    let d = scratch("trace");
    let dump = |hex: &str| {
        let (code, out, err) = cli(&["trace", "branchy_swap", "--input", hex]);
        assert_eq!(code, EXIT_OK, "{err}");
        out
    };
    let public = "00".repeat(80);
    let a = dump(&format!("{public}00"));
    let b = dump(&format!("{public}01"));
    assert_ne!(a, b);
    std::fs::write(d.join("a"), &a).unwrap();
    std::fs::write(d.join("b"), &b).unwrap();
    let pa = d.join("a");
    let pb = d.join("b");
    let (code, out, _) = cli(&["diff", pa.to_str().unwrap(), pa.to_str().unwrap()]);
    assert_eq!((code, out.as_str()), (EXIT_OK, "equal\n"));
    let (code, out, _) = cli(&["diff", pa.to_str().unwrap(), pb.to_str().unwrap()]);
    assert_eq!(code, EXIT_LEAK);
    assert!(out.starts_with("diverge at observation "), "{out}");

    // idx = 12 is out of bounds, so only the mispredicted path loads.
    let input = format!("0c{}2a", "00".repeat(8));
    let (code, spec, _) = cli(&["trace", "spectre_v1", "--predictor", "pht", "--input", &input]);
    assert_eq!(code, EXIT_OK);
    let (_, arch, _) = cli(&[
        "trace",
        "spectre_v1",
        "--predictor",
        "pht",
        "--input",
        &input,
        "--architectural",
    ]);
    assert!(arch.lines().count() < spec.lines().count());
    let (_, seq, _) = cli(&["trace", "spectre_v1", "--input", &input]);
    assert_eq!(arch, seq);
}

#[test]
fn list_and_asm() {
    let (code, out, _) = cli(&["list"]);
    assert_eq!(code, EXIT_OK);
    for name in ["ct ", "ssi0", "cc-bdi", "pf-dd", "rsb-circ", "sls"] {
        assert!(out.contains(name), "{name}");
    }
    let d = scratch("asm");
    let f = d.join("p.asm");
    std::fs::write(&f, "start:\n  add r1, r1, 2\n  jnz r1, start\n  halt\n").unwrap();
    let (code, out, _) = cli(&["asm", f.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out, "ok: 3 instructions, 1 labels, entry 0x1000\n");
    let (code, dis, _) = cli(&["asm", f.to_str().unwrap(), "--disassemble"]);
    assert_eq!(code, EXIT_OK);
    assert!(dis.contains("add r1, r1, 0x2"), "{dis}");
    std::fs::write(&f, "bogus\n").unwrap();
    assert_eq!(cli(&["asm", f.to_str().unwrap()]).0, EXIT_USAGE);
}

#[test]
fn verify_bundled_corpus() {
    let (code, out, _) = cli(&["verify-corpus", "--jobs", "2"]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.lines().last().unwrap().contains(" 0 violated"), "{out}");
}

#[test]
fn verify_directory_reports_violations() {
    let d = scratch("corpus");
    let e = d.join("bad");
    std::fs::create_dir_all(&e).unwrap();
    std::fs::write(e.join("prog.asm"), "jz r1, l\nmov r2, 1\nl: halt\n").unwrap();
    std::fs::write(
        e.join("interface"),
        "[[input]]\nname = 's'\nsecrecy = 'secret'\nlength = 1\nregister = 'r1'\n",
    )
    .unwrap();
    std::fs::write(e.join("expected"), "cell ct seq secure\ncell ss seq unspecified\n").unwrap();
    let (code, out, _) = cli(&["verify-corpus", "--dir", d.to_str().unwrap()]);
    assert_eq!(code, EXIT_LEAK);
    assert!(
        out.contains("VIOLATED") && out.contains("0 confirmed, 1 violated, 1 skipped"),
        "{out}"
    );
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_uleak");
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(status(&["run", "ct_swap", "-n", "5"]), Some(0));
    assert_eq!(status(&["run", "branchy_swap", "-n", "5"]), Some(1));
    assert_eq!(status(&["run", "missing"]), Some(2));
    assert_eq!(status(&["--help"]), Some(0));
}
