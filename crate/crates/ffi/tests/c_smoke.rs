//! Compiles tests/smoke.c against the generated header and the static
//! library, then runs it.

use std::path::{Path, PathBuf};
use std::process::Command;

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/uleak.h")).unwrap();
    for f in [
        "uleak_last_error",
        "uleak_program_parse",
        "uleak_program_free",
        "uleak_interface_parse",
        "uleak_corpus_load",
        "uleak_campaign_run",
        "uleak_verdict_class",
        "uleak_verdict_report",
        "uleak_trace_dump",
        "uleak_string_free",
        "typedef struct UleakProgram UleakProgram",
        "ULEAK_STATUS_CONFIG_ERROR = 4",
    ] {
        assert!(h.contains(f), "header lacks {f}");
    }
}

#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libuleak_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let out = std::env::temp_dir().join(format!("uleak_smoke_{}", std::process::id()));
    let status = Command::new("cc")
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let run = Command::new(&out).output().unwrap();
    std::fs::remove_file(&out).ok();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(
        run.status.success(),
        "{}{}",
        stdout,
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(stdout.starts_with("RESULT branchy_swap ct seq leak"));
}
