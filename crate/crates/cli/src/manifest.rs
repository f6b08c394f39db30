//! Plain-text `key=value` run manifests.
//!
//! The first line is `# kspc run manifest v1`; every following non-empty,
//! non-comment line is one `key=value` pair. Keys are unique and kept in
//! insertion order. Values are single-line.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const HEADER: &str = "# kspc run manifest v1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut m = RunManifest::default();
        m.set("command", command);
        m
    }

    /// Inserts or replaces `key`.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::format("missing manifest header"));
        }
        let mut m = RunManifest::default();
        for line in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("manifest line without '=': {line}")))?;
            m.set(k, v);
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunManifest::parse(&text)
    }
}

/// `<output>.manifest` next to an output file.
pub fn default_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_parse() {
        let mut m = RunManifest::new("train");
        m.set("seed", 7);
        m.set("lambda", 0.25);
        m.set("seed", 8);
        let text = m.render();
        assert_eq!(
            text,
            "# kspc run manifest v1\ncommand=train\nseed=8\nlambda=0.25\n"
        );
        let back = RunManifest::parse(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get("lambda"), Some("0.25"));
    }

    #[test]
    fn rejects_malformed() {
        assert!(RunManifest::parse("command=train\n").is_err());
        assert!(RunManifest::parse("# kspc run manifest v1\nnovalue\n").is_err());
    }

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(
            default_path(Path::new("out/model.kspc")),
            PathBuf::from("out/model.kspc.manifest")
        );
    }
}
