//! The supported SystemVerilog assertion subset: parsing, printing and
//! three-valued evaluation over finite traces.

pub mod ast;
pub mod diagnostics;
pub mod eval;
mod lexer;
pub mod parser;
pub mod print;
pub mod trace;

pub use ast::{Expr, Prop, Seq, SvaAst};
pub use diagnostics::{Diagnostic, DiagnosticKind, SyntaxReport};
pub use lexer::{lex, LexToken, TokenClass};
pub use eval::{eval_assertion, eval_attempt, AssertionResult, CompiledAssertion, EvalError, Verdict};
pub use parser::{check_syntax, parse_assertion};
pub use trace::{SignalSource, Trace, TraceError};

/// Evaluation horizon of one attempt; see [`SvaAst::max_span`].
pub fn max_span(ast: &SvaAst) -> u32 {
    ast.max_span()
}
