//! Atomic artifact writes.

use std::fs;
use std::io;
use std::path::Path;

use crate::experiments::Outcome;

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, dir.join(name))
}

pub fn summary_json(outcome: &Outcome) -> String {
    let doc = serde_json::json!({
        "command": outcome.command.name(),
        "pass": outcome.pass,
        "witness": outcome.witness,
        "summary": outcome.summary,
    });
    serde_json::to_string_pretty(&doc).expect("plain data")
}

/// Writes every artifact, the summary and the effective configuration.
pub fn write_outcome(dir: &Path, outcome: &Outcome, config: &str) -> io::Result<()> {
    for a in &outcome.artifacts {
        write_atomic(dir, &a.name, &a.contents)?;
    }
    write_atomic(dir, "config.txt", config)?;
    write_atomic(dir, &format!("{}.json", outcome.command.name()), &summary_json(outcome))
}
