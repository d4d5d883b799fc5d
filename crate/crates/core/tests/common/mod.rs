#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use lina::parser::parse_program;
use lina::typecheck::typecheck_program;

pub struct Golden {
    pub path: PathBuf,
    pub source: String,
    /// `None` for programs that must typecheck, else the rule the error names.
    pub expect: Option<String>,
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/typing")
}

pub fn load_goldens() -> Vec<Golden> {
    let mut paths: Vec<PathBuf> = fs::read_dir(golden_dir())
        .expect("golden directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "lina"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let source = fs::read_to_string(&path).unwrap();
            let header = source.lines().next().unwrap_or_default();
            let tag = header
                .strip_prefix(";; expect:")
                .unwrap_or_else(|| panic!("{} lacks an expect header", path.display()))
                .trim();
            let expect = (tag != "ok").then(|| tag.to_owned());
            Golden {
                path,
                source,
                expect,
            }
        })
        .collect()
}

/// Checks one golden, returning a description of any mismatch.
pub fn run_golden(g: &Golden) -> Result<(), String> {
    let p = parse_program(&g.source).map_err(|e| format!("parse error: {e}"))?;
    match (typecheck_program(&p), &g.expect) {
        (Ok(_), None) => Ok(()),
        (Ok(_), Some(rule)) => Err(format!("expected a {rule} error, but it typechecks")),
        (Err(e), None) => Err(format!("unexpected error: {e}")),
        (Err(e), Some(rule)) => {
            let msg = e.to_string();
            if e.rule.to_string() == *rule && msg.contains(rule.as_str()) {
                Ok(())
            } else {
                Err(format!("expected {rule}, got: {msg}"))
            }
        }
    }
}
