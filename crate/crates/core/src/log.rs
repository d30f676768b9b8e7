//! Per-experiment log files with `[<exp>] key=value ...` lines.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

/// Formats a float with at most 4 decimals, trailing zeros dropped.
pub fn fmt_float(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Writes one experiment's log. Every line is flushed as it is written
/// and optionally mirrored to stdout. If the file cannot be opened or a
/// write fails, the error is reported once on stderr and logging continues
/// on stdout only.
pub struct Logger {
    exp: String,
    file: Option<File>,
    echo: bool,
    lines: Vec<String>,
}

impl Logger {
    /// Truncates or creates `path`.
    pub fn open(exp: &str, path: &Path, echo: bool) -> Self {
        let file = path
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .map_or(Ok(()), fs::create_dir_all)
            .and_then(|_| File::create(path));
        let file = match file {
            Ok(f) => Some(f),
            Err(e) => {
                eprintln!("[{exp}] cannot open log {}: {e}; logging to stdout", path.display());
                None
            }
        };
        let echo = echo || file.is_none();
        Self {
            exp: exp.to_string(),
            file,
            echo,
            lines: Vec::new(),
        }
    }

    /// A logger with no file.
    pub fn stdout(exp: &str, echo: bool) -> Self {
        Self {
            exp: exp.to_string(),
            file: None,
            echo,
            lines: Vec::new(),
        }
    }

    pub fn exp(&self) -> &str {
        &self.exp
    }

    /// Lines written so far, without the trailing newline.
    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn log(&mut self, msg: impl AsRef<str>) {
        let line = format!("[{}] {}", self.exp, msg.as_ref());
        if let Some(f) = &mut self.file {
            if let Err(e) = writeln!(f, "{line}").and_then(|_| f.flush()) {
                eprintln!("[{}] log write failed: {e}; logging to stdout", self.exp);
                self.file = None;
                self.echo = true;
            }
        }
        if self.echo {
            println!("{line}");
        }
        self.lines.push(line);
    }
}
