//! Self-describing tab-separated artifacts: a '#'-prefixed header block of
//! key-value metadata (including the full resolved config), then one table.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Artifact {
    lines: Vec<String>,
}

impl Artifact {
    /// Start an artifact for a command, echoing the resolved config so every
    /// output is reproducible from the artifact alone.
    pub fn new(command: &str, seed: u64, workers: usize, config_toml: &str) -> Self {
        let mut lines = vec![
            format!("# command = {command}"),
            format!("# seed = {seed}"),
            format!("# workers = {workers}"),
            "# config:".to_string(),
        ];
        for line in config_toml.lines() {
            lines.push(format!("#   {line}"));
        }
        Artifact { lines }
    }

    /// Add a header metadata line `# key = value`.
    pub fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("# {key} = {value}"));
    }

    /// Add the column-name row of the table.
    pub fn columns(&mut self, cols: &[&str]) {
        self.lines.push(cols.join("\t"));
    }

    /// Add one data row.
    pub fn row(&mut self, cells: &[String]) {
        self.lines.push(cells.join("\t"));
    }

    pub fn to_text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }

    /// Write to the given path, or to stdout when no path is given.
    pub fn write(&self, out: Option<&Path>) -> Result<()> {
        match out {
            Some(path) => std::fs::write(path, self.to_text())?,
            None => std::io::stdout().write_all(self.to_text().as_bytes())?,
        }
        Ok(())
    }
}

/// Render a float with full round-trip precision (artifacts are consumed by
/// tools, shortest-exact keeps them both precise and diffable).
pub fn fmt(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn artifact_layout_is_greppable() {
        let mut a = Artifact::new("kernel", 7, 2, "x = 1\ny = 2");
        a.kv("n", 2);
        a.columns(&["t", "value"]);
        a.row(&[fmt(0.5), fmt(1.25)]);
        let text = a.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# command = kernel");
        assert_eq!(lines[1], "# seed = 7");
        assert!(lines.contains(&"#   x = 1"));
        assert_eq!(lines[lines.len() - 2], "t\tvalue");
        assert_eq!(lines[lines.len() - 1], "0.5\t1.25");
        // every header line is comment-prefixed, data rows are not
        for l in text.lines() {
            assert!(l.starts_with('#') || l.contains('\t'));
        }
    }

    #[test]
    fn floats_roundtrip_exactly() {
        for &v in &[0.1, 1.0 / 3.0, 6.02e23, -0.0, f64::MIN_POSITIVE] {
            assert_eq!(fmt(v).parse::<f64>().unwrap(), v);
        }
    }
}
