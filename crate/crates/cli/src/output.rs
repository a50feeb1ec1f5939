use std::io::Write;

use serde::Serialize;

/// Writes either one JSON object per line or a human-readable line.
#[derive(Debug, Clone, Copy)]
pub struct Output {
    pub json: bool,
}

impl Output {
    pub fn emit<T: Serialize>(&self, value: &T, human: impl FnOnce() -> String) {
        let line = if self.json {
            serde_json::to_string(value).expect("serializable output")
        } else {
            human()
        };
        let mut out = std::io::stdout().lock();
        // A closed pipe is not worth a panic.
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    }
}
