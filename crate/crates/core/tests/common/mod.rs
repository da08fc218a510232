#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn default_scenario() -> PathBuf {
    scenario_dir().join("default.toml")
}

pub fn rfstab<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfstab"))
        .args(args)
        .env_remove("RFSTAB_OUT_DIR")
        .output()
        .expect("spawn rfstab")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}
