//! Builds `tests/c/smoke.c` against the generated header and the static
//! library, then runs it.

use std::path::PathBuf;
use std::process::Command;

fn staticlib() -> PathBuf {
    // target/<profile>/deps/<test binary> -> target/<profile>/libl2o_ffi.a
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().join("libl2o_ffi.a")
}

#[test]
fn c_program_links_and_passes() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = staticlib();
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .expect("C compiler runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).arg(dir.path()).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
