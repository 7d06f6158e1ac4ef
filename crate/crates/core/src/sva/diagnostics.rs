use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Empty,
    Lexical,
    Grammar,
    Unsupported,
}

/// A positioned syntax problem. Lines and columns are 1-based; columns count
/// characters, not bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub token: String,
    pub kind: DiagnosticKind,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: {} (at `{}`)",
            self.line, self.column, self.message, self.token
        )
    }
}

impl std::error::Error for Diagnostic {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxReport {
    pub ok: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl SyntaxReport {
    pub fn passed() -> Self {
        SyntaxReport {
            ok: true,
            diagnostics: Vec::new(),
        }
    }

    pub fn failed(diag: Diagnostic) -> Self {
        SyntaxReport {
            ok: false,
            diagnostics: vec![diag],
        }
    }
}
