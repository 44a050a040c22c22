#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

/// Just enough runtime for a static, libc-free executable.
const RUNTIME: &str = r#"
#if defined(__x86_64__)
__asm__(".text\n.globl _start\n_start:\n\tcall main\n\tmov %eax, %edi\n\tmov $60, %eax\n\tsyscall\n");
#else
__asm__(".text\n.globl _start\n_start:\n\tcall main\n\tmov %eax, %ebx\n\tmov $1, %eax\n\tint $0x80\n");
#endif
"#;

pub const FLAGS: &[&str] = &[
    "-ffreestanding", "-nostdlib", "-static", "-fno-pie", "-no-pie", "-fno-stack-protector",
    "-fcf-protection=none", "-w",
];

pub struct Built {
    pub dir: TempDir,
    pub exe: PathBuf,
}

/// Compiles `body` (which must define `main`) for `bits` at `opt`.
pub fn build(body: &str, bits: u32, opt: &str) -> Built {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(&src, format!("{RUNTIME}\n{body}")).unwrap();
    let exe = dir.path().join("t");
    let out = Command::new("gcc")
        .arg(format!("-m{bits}"))
        .arg(opt)
        .args(FLAGS)
        .arg(&src)
        .arg("-o")
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "gcc failed: {}", String::from_utf8_lossy(&out.stderr));
    Built { dir, exe }
}

/// A stripped copy of `exe` next to it.
pub fn stripped(built: &Built) -> PathBuf {
    let dst = built.dir.path().join("t.stripped");
    let st = Command::new("strip").arg("-o").arg(&dst).arg(&built.exe).status().unwrap();
    assert!(st.success());
    dst
}

/// `(address, size)` of `name` from `nm -S`.
pub fn nm_symbol(exe: &Path, name: &str) -> Option<(u64, u64)> {
    let out = Command::new("nm").arg("-S").arg(exe).output().unwrap();
    String::from_utf8_lossy(&out.stdout).lines().find_map(|l| {
        let p: Vec<&str> = l.split_whitespace().collect();
        match p.as_slice() {
            [addr, size, _, n] if *n == name => {
                Some((u64::from_str_radix(addr, 16).unwrap(), u64::from_str_radix(size, 16).unwrap()))
            }
            _ => None,
        }
    })
}

/// Direct jump and conditional-branch targets in `[start, end)` according to
/// objdump. Calls, indirect forms and targets outside the range are ignored.
pub fn objdump_branch_targets(exe: &Path, start: u64, end: u64) -> BTreeSet<u64> {
    let out = Command::new("objdump")
        .args(["-d", "--no-show-raw-insn", "-M", "intel"])
        .arg(format!("--start-address=0x{start:x}"))
        .arg(format!("--stop-address=0x{end:x}"))
        .arg(exe)
        .output()
        .unwrap();
    assert!(out.status.success());
    let mut targets = BTreeSet::new();
    for line in String::from_utf8_lossy(&out.stdout).lines() {
        let Some((_, rest)) = line.split_once(":\t") else { continue };
        let mut words = rest.split_whitespace().peekable();
        while matches!(words.peek(), Some(&("bnd" | "notrack" | "rep" | "repz" | "repnz" | "ds" | "cs"))) {
            words.next();
        }
        let Some(mnemonic) = words.next() else { continue };
        let is_branch = mnemonic.starts_with('j') || mnemonic.starts_with("loop") || mnemonic == "jecxz";
        if !is_branch {
            continue;
        }
        let Some(operand) = words.next() else { continue };
        if operand.starts_with('*') || operand.contains('[') || operand.contains("PTR") {
            continue;
        }
        let Ok(target) = u64::from_str_radix(operand.trim_start_matches("0x"), 16) else { continue };
        if (start..end).contains(&target) {
            targets.insert(target);
        }
    }
    targets
}
