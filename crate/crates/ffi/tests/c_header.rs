//! Compiles a C program against the generated header and the shared library.

use std::path::{Path, PathBuf};
use std::process::Command;

fn compiler() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok().filter(|o| o.status.success()).map(|_| cc)
}

/// `target/<profile>`, next to this test's `deps` directory.
fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/nff.h")).unwrap();
    for name in ["NFF_STATUS_OK", "NFF_STATUS_PANIC", "typedef struct NffScene NffScene", "nff_last_error", "nff_render_rgb", "nff_scene_edit"] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn c_program_links_and_renders() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let lib_dir = target_dir();
    if !lib_dir.join("libnff_ffi.so").exists() && !lib_dir.join("libnff_ffi.dylib").exists() {
        eprintln!("shared library not found in {}; skipping", lib_dir.display());
        return;
    }
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .args(["-lnff_ffi", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let ppm = dir.path().join("out.ppm");
    let out = Command::new(&exe).arg(&ppm).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(line.starts_with(&format!("{} 8x8 ", env!("CARGO_PKG_VERSION"))), "{line}");
    assert!(std::fs::read(ppm).unwrap().starts_with(b"P6\n8 8\n255\n"));
}
