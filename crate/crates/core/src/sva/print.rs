//! Canonical source rendering. Output re-parses to an equal tree.

use std::fmt;

use super::ast::{Expr, Prop, Seq, SvaAst};

// Binding strength of each printed form; a child is parenthesised when its
// level is below what the parent slot requires.
const IMPL: u8 = 0;
const POR: u8 = 1;
const PAND: u8 = 2;
const PNOT: u8 = 3;
const DELAY: u8 = 4;
const EOR: u8 = 5;
const EAND: u8 = 6;
const EEQ: u8 = 7;
const ENOT: u8 = 8;
const REP: u8 = 9;
const ATOM: u8 = 10;

fn wrap((text, level): (String, u8), min: u8) -> String {
    if level < min {
        format!("({text})")
    } else {
        text
    }
}

fn expr(e: &Expr) -> (String, u8) {
    match e {
        Expr::Signal { name } => (name.clone(), ATOM),
        Expr::Lit { value } => (if *value { "1" } else { "0" }.into(), ATOM),
        Expr::Rose { signal } => (format!("$rose({signal})"), ATOM),
        Expr::Fell { signal } => (format!("$fell({signal})"), ATOM),
        Expr::Stable { signal } => (format!("$stable({signal})"), ATOM),
        Expr::Past { arg, depth } => {
            let inner = expr(arg).0;
            if *depth == 1 {
                (format!("$past({inner})"), ATOM)
            } else {
                (format!("$past({inner}, {depth})"), ATOM)
            }
        }
        Expr::Not { arg } => (format!("!{}", wrap(expr(arg), ENOT)), ENOT),
        Expr::Eq { lhs, rhs } => binary(lhs, "==", rhs, EEQ),
        Expr::Neq { lhs, rhs } => binary(lhs, "!=", rhs, EEQ),
        Expr::And { lhs, rhs } => binary(lhs, "&&", rhs, EAND),
        Expr::Or { lhs, rhs } => binary(lhs, "||", rhs, EOR),
    }
}

fn binary(lhs: &Expr, op: &str, rhs: &Expr, level: u8) -> (String, u8) {
    (
        format!("{} {op} {}", wrap(expr(lhs), level), wrap(expr(rhs), level + 1)),
        level,
    )
}

fn range(prefix: &str, lo: u32, hi: u32) -> String {
    if lo == hi {
        format!("{prefix}{lo}")
    } else {
        format!("{prefix}[{lo}:{hi}]")
    }
}

fn seq(s: &Seq) -> (String, u8) {
    match s {
        Seq::Bool { expr: e } => expr(e),
        Seq::Repeat { expr: e, lo, hi } => {
            let count = if lo == hi {
                format!("[*{lo}]")
            } else {
                format!("[*{lo}:{hi}]")
            };
            (format!("{}{count}", wrap(expr(e), ATOM)), REP)
        }
        Seq::Delay { lhs, lo, hi, rhs } => {
            let delay = range("##", *lo, *hi);
            let right = wrap(seq(rhs), DELAY + 1);
            if lhs.is_true_literal() {
                (format!("{delay} {right}"), DELAY)
            } else {
                (format!("{} {delay} {right}", wrap(seq(lhs), DELAY)), DELAY)
            }
        }
    }
}

fn prop(p: &Prop) -> (String, u8) {
    match p {
        Prop::Seq { seq: s } => seq(s),
        Prop::Implies {
            antecedent,
            overlapping,
            consequent,
        } => {
            let op = if *overlapping { "|->" } else { "|=>" };
            (
                format!(
                    "{} {op} {}",
                    wrap(seq(antecedent), DELAY),
                    wrap(prop(consequent), IMPL)
                ),
                IMPL,
            )
        }
        Prop::Not { arg } => (format!("not {}", wrap(prop(arg), PNOT)), PNOT),
        Prop::And { lhs, rhs } => (
            format!("{} and {}", wrap(prop(lhs), PAND), wrap(prop(rhs), PAND + 1)),
            PAND,
        ),
        Prop::Or { lhs, rhs } => (
            format!("{} or {}", wrap(prop(lhs), POR), wrap(prop(rhs), POR + 1)),
            POR,
        ),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&expr(self).0)
    }
}

impl fmt::Display for Seq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&seq(self).0)
    }
}

impl fmt::Display for Prop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&prop(self).0)
    }
}

impl fmt::Display for SvaAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(label) = &self.label {
            write!(f, "{label}: ")?;
        }
        write!(
            f,
            "assert property (@({}) {});",
            self.clock_event, self.property
        )
    }
}

impl SvaAst {
    /// Canonical assertion text.
    pub fn to_source(&self) -> String {
        self.to_string()
    }
}

#[cfg(test)]
mod tests {
    use crate::sva::parse_assertion;

    fn roundtrip(text: &str) -> String {
        let ast = parse_assertion(text).unwrap();
        let printed = ast.to_source();
        assert_eq!(parse_assertion(&printed).unwrap(), ast, "{printed}");
        printed
    }

    #[test]
    fn canonical_forms() {
        assert_eq!(
            roundtrip("assert property (@(posedge clk) req |-> ##[1:3] ack);"),
            "assert property (@(posedge clk) req |-> ##[1:3] ack);"
        );
        assert_eq!(
            roundtrip("assert property(@(posedge clk) (a&&b)[*2] ##1 c);"),
            "assert property (@(posedge clk) (a && b)[*2] ##1 c);"
        );
        assert_eq!(
            roundtrip("assert property (@(posedge clk) a ##1 (b ##2 c));"),
            "assert property (@(posedge clk) a ##1 (b ##2 c));"
        );
        assert_eq!(
            roundtrip("assert property (@(posedge clk) (a |-> b) and c);"),
            "assert property (@(posedge clk) (a |-> b) and c);"
        );
        assert_eq!(
            roundtrip("assert property (@(posedge clk) x |-> $past(y, 1));"),
            "assert property (@(posedge clk) x |-> $past(y));"
        );
    }

    #[test]
    fn nested_boolean_parens() {
        roundtrip("assert property (@(posedge clk) !(a || b) == (c != 1'b0));");
        roundtrip("assert property (@(posedge clk) a || (b || c));");
        roundtrip("assert property (@(posedge clk) not (a or b) and not not c);");
    }
}
