//! Plain-text `key=value` run manifests and config files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ArgMatches;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Flags that do not change what a run computes or where its inputs live.
const UNHASHED: &[&str] = &["out", "jobs", "config"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub command: String,
    /// Resolved flag values, including defaults; booleans are `true`/`false`.
    pub flags: BTreeMap<String, String>,
    /// Derived settings worth recording (seeds, resolved defaults).
    pub resolved: BTreeMap<String, String>,
    /// Output files relative to the run's output directory.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    /// Captures every flag of the subcommand that has a value, defaults included.
    pub fn from_matches(command: &str, cmd: &clap::Command, matches: &ArgMatches) -> Self {
        let mut flags = BTreeMap::new();
        for arg in cmd.get_arguments() {
            let id = arg.get_id().as_str();
            if matches!(id, "help" | "version" | "jobs" | "config") {
                continue;
            }
            let Ok(Some(raw)) = matches.try_get_raw(id) else {
                continue;
            };
            let values: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            if values.is_empty() {
                continue;
            }
            let key = arg.get_long().unwrap_or(id).to_string();
            flags.insert(key, values.join(","));
        }
        Manifest {
            command: command.to_string(),
            flags,
            ..Manifest::default()
        }
    }

    pub fn resolve(&mut self, key: impl Into<String>, value: impl ToString) {
        self.resolved.insert(key.into(), value.to_string());
    }

    pub fn output(&mut self, key: impl Into<String>, rel: impl Into<String>) {
        self.outputs.insert(key.into(), rel.into());
    }

    /// SHA-256 over the flags that determine the computation.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("command={}\n", self.command));
        for (k, v) in &self.flags {
            if !UNHASHED.contains(&k.as_str()) {
                h.update(format!("{k}={v}\n"));
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# smm run manifest\n");
        s.push_str(&format!("command={}\n", self.command));
        s.push_str(&format!("version={}\n", env!("CARGO_PKG_VERSION")));
        s.push_str(&format!("config_hash={}\n", self.config_hash()));
        for (k, v) in &self.flags {
            s.push_str(&format!("flag.{k}={v}\n"));
        }
        for (k, v) in &self.resolved {
            s.push_str(&format!("resolved.{k}={v}\n"));
        }
        for (k, v) in &self.outputs {
            s.push_str(&format!("output.{k}={v}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut m = Manifest::default();
        for (k, v) in parse_pairs(text)? {
            if k == "command" {
                m.command = v;
            } else if let Some(f) = k.strip_prefix("flag.") {
                m.flags.insert(f.to_string(), v);
            } else if let Some(r) = k.strip_prefix("resolved.") {
                m.resolved.insert(r.to_string(), v);
            } else if let Some(o) = k.strip_prefix("output.") {
                m.outputs.insert(o.to_string(), v);
            }
        }
        if m.command.is_empty() {
            return Err(CliError::data("manifest has no `command=` line"));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Manifest::parse(&text)
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join("manifest.txt");
        fs::write(&path, self.render()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// Command-line arguments that reproduce the run, with `out` replaced when
    /// given.
    pub fn to_args(&self, out: Option<&Path>) -> Vec<String> {
        let mut args = vec!["smm".to_string(), self.command.clone()];
        for (k, v) in &self.flags {
            if k == "out" && out.is_some() {
                continue;
            }
            args.extend(flag_tokens(k, v));
        }
        if let Some(o) = out {
            args.push(format!("--out={}", o.display()));
        }
        args
    }
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::data(format!("line {}: expected key=value, found `{line}`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn flag_tokens(key: &str, value: &str) -> Vec<String> {
    match value {
        "true" if is_switch(key) => vec![format!("--{key}")],
        "false" if is_switch(key) => Vec::new(),
        _ => vec![format!("--{key}={value}")],
    }
}

/// Boolean flags take no value on the command line.
fn is_switch(key: &str) -> bool {
    matches!(key, "balanced" | "balanced-cnn" | "fine-tune" | "fisher" | "check")
}

/// Inserts the entries of a config file after the subcommand name, skipping
/// flags the user passed explicitly.
pub fn inject_config(args: Vec<String>, config: &[(String, String)]) -> CliResult<Vec<String>> {
    let pos = args
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.as_str()))
        .ok_or_else(|| CliError::usage("--config needs a subcommand"))?;
    let given = |k: &str| {
        let flag = format!("--{k}");
        args.iter().any(|a| a == &flag || a.starts_with(&format!("{flag}=")))
    };
    let mut injected = Vec::new();
    for (k, v) in config {
        let k = k.strip_prefix("flag.").unwrap_or(k);
        if !given(k) {
            injected.extend(flag_tokens(k, v));
        }
    }
    let mut out = args[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

/// Value of `--config` in raw arguments, if present.
pub fn config_path(args: &[String]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

pub const SUBCOMMANDS: &[&str] = &["synth", "preprocess", "train", "eval", "transfer", "ensemble", "replay"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_roundtrip() {
        let mut m = Manifest {
            command: "train".into(),
            ..Manifest::default()
        };
        m.flags.insert("arch".into(), "cnn".into());
        m.flags.insert("balanced".into(), "true".into());
        m.flags.insert("out".into(), "/tmp/x".into());
        m.resolve("tau", 25);
        m.output("results", "results.csv");
        let back = Manifest::parse(&m.render()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn hash_ignores_output_location() {
        let mut a = Manifest {
            command: "train".into(),
            ..Manifest::default()
        };
        a.flags.insert("seed".into(), "1".into());
        let mut b = a.clone();
        a.flags.insert("out".into(), "a".into());
        b.flags.insert("out".into(), "b".into());
        assert_eq!(a.config_hash(), b.config_hash());
        b.flags.insert("seed".into(), "2".into());
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn replay_args_override_out() {
        let mut m = Manifest {
            command: "train".into(),
            ..Manifest::default()
        };
        m.flags.insert("balanced".into(), "true".into());
        m.flags.insert("fine-tune".into(), "false".into());
        m.flags.insert("out".into(), "old".into());
        let args = m.to_args(Some(Path::new("new")));
        assert_eq!(args, ["smm", "train", "--balanced", "--out=new"]);
    }

    #[test]
    fn config_injection_respects_explicit_flags() {
        let args: Vec<String> = ["smm", "train", "--seed", "3"].iter().map(|s| s.to_string()).collect();
        let cfg = vec![("seed".to_string(), "9".to_string()), ("balanced".to_string(), "true".to_string())];
        let out = inject_config(args, &cfg).unwrap();
        assert_eq!(out, ["smm", "train", "--balanced", "--seed", "3"]);
    }

    #[test]
    fn bad_lines_are_reported() {
        assert!(parse_pairs("a=1\nnot a pair\n").is_err());
        assert_eq!(parse_pairs("# c\n\n k = v \n").unwrap(), vec![("k".into(), "v".into())]);
    }
}
