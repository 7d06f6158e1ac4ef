//! Recursive-descent parser for the supported assertion subset.
//!
//! Operands are parsed into an untyped [`Node`] and coerced to the layer an
//! operator requires, so parentheses can wrap expressions, sequences or
//! properties without backtracking. Precedence, lowest first:
//! `|->`/`|=>` (right), `or`, `and`, `not`, `##`, `||`, `&&`, `==`/`!=`,
//! `!`, postfix `[*]`, atoms.

use super::ast::{Expr, Prop, Seq, SvaAst};
use super::diagnostics::{Diagnostic, DiagnosticKind, SyntaxReport};
use super::lexer::{tokenize, Token, TokenKind};

pub(crate) const UNSUPPORTED_KEYWORDS: &[&str] = &[
    "disable",
    "iff",
    "throughout",
    "intersect",
    "within",
    "until",
    "s_until",
    "until_with",
    "s_until_with",
    "implies",
    "eventually",
    "s_eventually",
    "always",
    "s_always",
    "nexttime",
    "s_nexttime",
    "first_match",
    "strong",
    "weak",
    "accept_on",
    "reject_on",
    "sync_accept_on",
    "sync_reject_on",
    "if",
    "case",
    "else",
    "local",
    "var",
    "let",
    "sequence",
    "endsequence",
    "property",
    "endproperty",
    "int",
    "bit",
    "logic",
];

pub(crate) const RESERVED: &[&str] = &["not", "and", "or", "assert"];

const SUPPORTED_SYSFNS: &[&str] = &["rose", "fell", "stable", "past"];

/// Parse a complete `assert property (...)` statement.
pub fn parse_assertion(text: &str) -> Result<SvaAst, Diagnostic> {
    if text.trim().is_empty() {
        return Err(Diagnostic {
            line: 1,
            column: 1,
            message: "empty input".into(),
            token: String::new(),
            kind: DiagnosticKind::Empty,
        });
    }
    let tokens = tokenize(text)?;
    let mut parser = Parser { tokens, pos: 0 };
    parser.assertion()
}

/// Syntax verdict for a candidate assertion. Never fails; problems are data.
pub fn check_syntax(text: &str) -> SyntaxReport {
    match parse_assertion(text) {
        Ok(_) => SyntaxReport::passed(),
        Err(diag) => SyntaxReport::failed(diag),
    }
}

#[derive(Debug, Clone)]
struct Pos {
    line: usize,
    column: usize,
    token: String,
}

enum Node {
    Expr(Expr),
    Seq(Seq),
    Prop(Prop),
}

struct Parsed {
    node: Node,
    at: Pos,
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> &TokenKind {
        &self.tokens[self.pos].kind
    }

    fn peek_at(&self, off: usize) -> &TokenKind {
        let idx = (self.pos + off).min(self.tokens.len() - 1);
        &self.tokens[idx].kind
    }

    fn here(&self) -> Pos {
        let t = &self.tokens[self.pos];
        Pos {
            line: t.line,
            column: t.column,
            token: t.kind.text(),
        }
    }

    fn advance(&mut self) -> TokenKind {
        let kind = self.tokens[self.pos].kind.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        kind
    }

    fn diag(at: &Pos, kind: DiagnosticKind, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            line: at.line,
            column: at.column,
            message: message.into(),
            token: at.token.clone(),
            kind,
        }
    }

    fn grammar<T>(&self, message: impl Into<String>) -> PResult<T> {
        Err(Self::diag(&self.here(), DiagnosticKind::Grammar, message))
    }

    fn unsupported<T>(&self, message: impl Into<String>) -> PResult<T> {
        Err(Self::diag(&self.here(), DiagnosticKind::Unsupported, message))
    }

    fn is_ident(&self, word: &str) -> bool {
        matches!(self.peek(), TokenKind::Ident(s) if s == word)
    }

    fn expect(&mut self, want: TokenKind, what: &str) -> PResult<()> {
        if *self.peek() == want {
            self.advance();
            Ok(())
        } else {
            self.grammar(format!("expected {what}, found `{}`", self.peek().text()))
        }
    }

    fn expect_keyword(&mut self, word: &str) -> PResult<()> {
        if self.is_ident(word) {
            self.advance();
            Ok(())
        } else {
            self.grammar(format!("expected `{word}`, found `{}`", self.peek().text()))
        }
    }

    fn number(&mut self, what: &str) -> PResult<u32> {
        match self.peek() {
            TokenKind::Number(n) => {
                let n = *n;
                self.advance();
                Ok(n)
            }
            TokenKind::Dollar => self.unsupported("unbounded range `$` is outside the supported subset"),
            other => self.grammar(format!("expected {what}, found `{}`", other.text())),
        }
    }

    fn assertion(&mut self) -> PResult<SvaAst> {
        let mut label = None;
        if let (TokenKind::Ident(name), TokenKind::Colon) = (self.peek(), self.peek_at(1)) {
            if !RESERVED.contains(&name.as_str()) && !UNSUPPORTED_KEYWORDS.contains(&name.as_str()) {
                label = Some(name.clone());
                self.advance();
                self.advance();
            }
        }
        match self.peek() {
            TokenKind::Ident(s) if s == "assert" => {
                self.advance();
            }
            TokenKind::Ident(s) if matches!(s.as_str(), "assume" | "cover" | "restrict") => {
                return self.unsupported(format!("`{s}` statements are outside the supported subset"));
            }
            other => {
                return self.grammar(format!("expected `assert`, found `{}`", other.text()));
            }
        }
        self.expect_keyword("property")?;
        self.expect(TokenKind::LParen, "`(`")?;
        let clock_event = self.clocking()?;
        let body = self.property()?;
        let property = into_prop(body.node);
        if let Err(msg) = property.check_bounds() {
            return Err(Self::diag(&body.at, DiagnosticKind::Grammar, msg));
        }
        self.expect(TokenKind::RParen, "`)` closing the property")?;
        if self.is_ident("else") {
            return self.unsupported("action blocks (`else ...`) are outside the supported subset");
        }
        self.expect(TokenKind::Semi, "`;`")?;
        if *self.peek() != TokenKind::Eof {
            return self.grammar(format!(
                "unexpected `{}` after the assertion",
                self.peek().text()
            ));
        }
        Ok(SvaAst {
            label,
            clock_event,
            property,
        })
    }

    fn clocking(&mut self) -> PResult<String> {
        if *self.peek() != TokenKind::At {
            return self.grammar(format!(
                "expected clocking event `@(posedge <clock>)`, found `{}`",
                self.peek().text()
            ));
        }
        self.advance();
        self.expect(TokenKind::LParen, "`(` after `@`")?;
        let mut event = String::new();
        if self.is_ident("posedge") || self.is_ident("negedge") || self.is_ident("edge") {
            event.push_str(&self.peek().text());
            event.push(' ');
            self.advance();
        }
        match self.peek() {
            TokenKind::Ident(clk) if !RESERVED.contains(&clk.as_str()) => {
                event.push_str(clk);
                self.advance();
            }
            other => {
                return self.grammar(format!("expected clock signal name, found `{}`", other.text()));
            }
        }
        if self.is_ident("or") || *self.peek() == TokenKind::Comma {
            return self.unsupported("multiple clocking events are outside the supported subset");
        }
        self.expect(TokenKind::RParen, "`)` closing the clocking event")?;
        Ok(event)
    }

    fn reject_binary_keyword(&self) -> PResult<()> {
        if let TokenKind::Ident(word) = self.peek() {
            if UNSUPPORTED_KEYWORDS.contains(&word.as_str()) {
                return self.unsupported(format!("`{word}` is outside the supported subset"));
            }
        }
        Ok(())
    }

    fn property(&mut self) -> PResult<Parsed> {
        let lhs = self.prop_or()?;
        let overlapping = match self.peek() {
            TokenKind::ImplOverlap => true,
            TokenKind::ImplNext => false,
            _ => {
                self.reject_binary_keyword()?;
                return Ok(lhs);
            }
        };
        let op_at = self.here();
        self.advance();
        let antecedent = match lhs.node {
            Node::Expr(e) => Seq::boolean(e),
            Node::Seq(s) => s,
            Node::Prop(_) => {
                return Err(Self::diag(
                    &op_at,
                    DiagnosticKind::Grammar,
                    "implication antecedent must be a sequence, not a property",
                ))
            }
        };
        let rhs = self.property()?;
        Ok(Parsed {
            node: Node::Prop(Prop::implies(antecedent, overlapping, into_prop(rhs.node))),
            at: lhs.at,
        })
    }

    fn prop_or(&mut self) -> PResult<Parsed> {
        let mut lhs = self.prop_and()?;
        while self.is_ident("or") {
            self.advance();
            let rhs = self.prop_and()?;
            lhs = Parsed {
                node: Node::Prop(Prop::or(into_prop(lhs.node), into_prop(rhs.node))),
                at: lhs.at,
            };
        }
        Ok(lhs)
    }

    fn prop_and(&mut self) -> PResult<Parsed> {
        let mut lhs = self.prop_not()?;
        while self.is_ident("and") {
            self.advance();
            let rhs = self.prop_not()?;
            lhs = Parsed {
                node: Node::Prop(Prop::and(into_prop(lhs.node), into_prop(rhs.node))),
                at: lhs.at,
            };
        }
        Ok(lhs)
    }

    fn prop_not(&mut self) -> PResult<Parsed> {
        if self.is_ident("not") {
            let at = self.here();
            self.advance();
            let arg = self.prop_not()?;
            return Ok(Parsed {
                node: Node::Prop(Prop::negate(into_prop(arg.node))),
                at,
            });
        }
        self.sequence()
    }

    fn sequence(&mut self) -> PResult<Parsed> {
        let at = self.here();
        let mut lhs = if *self.peek() == TokenKind::HashHash {
            Parsed {
                node: Node::Seq(Seq::boolean(Expr::lit(true))),
                at: at.clone(),
            }
        } else {
            self.expr_or()?
        };
        while *self.peek() == TokenKind::HashHash {
            self.advance();
            let (lo, hi) = self.delay_range()?;
            let rhs = self.expr_or()?;
            let left = to_seq(lhs)?;
            let right = to_seq(rhs)?;
            lhs = Parsed {
                node: Node::Seq(Seq::delay(left, lo, hi, right)),
                at: at.clone(),
            };
        }
        Ok(lhs)
    }

    fn delay_range(&mut self) -> PResult<(u32, u32)> {
        match self.peek() {
            TokenKind::Number(_) => {
                let n = self.number("delay count")?;
                Ok((n, n))
            }
            TokenKind::LBracket => {
                self.advance();
                match self.peek() {
                    TokenKind::Star | TokenKind::Plus => {
                        return self.unsupported(format!(
                            "unbounded delay `##[{}]` is outside the supported subset",
                            self.peek().text()
                        ))
                    }
                    _ => {}
                }
                let lo = self.number("delay lower bound")?;
                self.expect(TokenKind::Colon, "`:` in delay range")?;
                let hi = self.number("delay upper bound")?;
                if lo > hi {
                    return self.grammar(format!("delay bounds reversed: ##[{lo}:{hi}]"));
                }
                self.expect(TokenKind::RBracket, "`]` closing the delay range")?;
                Ok((lo, hi))
            }
            TokenKind::Ident(_) => self.unsupported("named delays are outside the supported subset"),
            other => self.grammar(format!("expected delay count after `##`, found `{}`", other.text())),
        }
    }

    fn expr_or(&mut self) -> PResult<Parsed> {
        let mut lhs = self.expr_and()?;
        while *self.peek() == TokenKind::OrOr {
            self.advance();
            let rhs = self.expr_and()?;
            let at = lhs.at.clone();
            let expr = Expr::or(to_expr(lhs, "||")?, to_expr(rhs, "||")?);
            lhs = Parsed {
                node: Node::Expr(expr),
                at,
            };
        }
        Ok(lhs)
    }

    fn expr_and(&mut self) -> PResult<Parsed> {
        let mut lhs = self.expr_eq()?;
        while *self.peek() == TokenKind::AndAnd {
            self.advance();
            let rhs = self.expr_eq()?;
            let at = lhs.at.clone();
            let expr = Expr::and(to_expr(lhs, "&&")?, to_expr(rhs, "&&")?);
            lhs = Parsed {
                node: Node::Expr(expr),
                at,
            };
        }
        Ok(lhs)
    }

    fn expr_eq(&mut self) -> PResult<Parsed> {
        let mut lhs = self.expr_unary()?;
        loop {
            let is_eq = match self.peek() {
                TokenKind::EqEq => true,
                TokenKind::NotEq => false,
                TokenKind::OtherOp(op) => {
                    return self.unsupported(format!("operator `{op}` is outside the supported subset"))
                }
                TokenKind::Plus | TokenKind::Minus | TokenKind::Star => {
                    return self.unsupported(format!(
                        "arithmetic operator `{}` is outside the supported subset",
                        self.peek().text()
                    ))
                }
                _ => return Ok(lhs),
            };
            let op = if is_eq { "==" } else { "!=" };
            self.advance();
            let rhs = self.expr_unary()?;
            let at = lhs.at.clone();
            let (l, r) = (Box::new(to_expr(lhs, op)?), Box::new(to_expr(rhs, op)?));
            let expr = if is_eq {
                Expr::Eq { lhs: l, rhs: r }
            } else {
                Expr::Neq { lhs: l, rhs: r }
            };
            lhs = Parsed {
                node: Node::Expr(expr),
                at,
            };
        }
    }

    fn expr_unary(&mut self) -> PResult<Parsed> {
        match self.peek() {
            TokenKind::Bang => {
                let at = self.here();
                self.advance();
                let arg = self.expr_unary()?;
                Ok(Parsed {
                    node: Node::Expr(Expr::not(to_expr(arg, "!")?)),
                    at,
                })
            }
            TokenKind::OtherOp(op) => {
                self.unsupported(format!("operator `{op}` is outside the supported subset"))
            }
            _ => self.postfix(),
        }
    }

    fn postfix(&mut self) -> PResult<Parsed> {
        let base = self.primary()?;
        if *self.peek() != TokenKind::LBracket {
            return Ok(base);
        }
        self.advance();
        match self.peek() {
            TokenKind::Star => {
                self.advance();
            }
            TokenKind::Plus => {
                return self.unsupported("unbounded repetition `[+]` is outside the supported subset")
            }
            TokenKind::Assign => {
                return self
                    .unsupported("non-consecutive repetition `[=n]` is outside the supported subset")
            }
            TokenKind::Arrow => {
                return self.unsupported("goto repetition `[->n]` is outside the supported subset")
            }
            TokenKind::Number(_) | TokenKind::Ident(_) => {
                return self.unsupported("bit-selects are outside the supported subset (signals are 1-bit)")
            }
            other => {
                return self.grammar(format!("expected `*` in repetition, found `{}`", other.text()))
            }
        }
        if *self.peek() == TokenKind::RBracket {
            return self.unsupported("unbounded repetition `[*]` is outside the supported subset");
        }
        let lo = self.number("repetition count")?;
        let hi = if *self.peek() == TokenKind::Colon {
            self.advance();
            self.number("repetition upper bound")?
        } else {
            lo
        };
        if lo == 0 {
            return self.unsupported("empty repetition `[*0]` is outside the supported subset");
        }
        if lo > hi {
            return self.grammar(format!("repetition bounds reversed: [*{lo}:{hi}]"));
        }
        self.expect(TokenKind::RBracket, "`]` closing the repetition")?;
        let at = base.at.clone();
        let expr = match base.node {
            Node::Expr(e) => e,
            _ => {
                return Err(Self::diag(
                    &at,
                    DiagnosticKind::Unsupported,
                    "repetition of a sequence is outside the supported subset",
                ))
            }
        };
        Ok(Parsed {
            node: Node::Seq(Seq::repeat(expr, lo, hi)),
            at,
        })
    }

    fn primary(&mut self) -> PResult<Parsed> {
        let at = self.here();
        let node = match self.peek().clone() {
            TokenKind::Ident(name) => {
                if UNSUPPORTED_KEYWORDS.contains(&name.as_str()) {
                    return self.unsupported(format!("`{name}` is outside the supported subset"));
                }
                if RESERVED.contains(&name.as_str()) {
                    return self.grammar(format!("expected an expression, found keyword `{name}`"));
                }
                self.advance();
                if *self.peek() == TokenKind::Dot {
                    return self.unsupported("hierarchical references are outside the supported subset");
                }
                if *self.peek() == TokenKind::LParen {
                    return Err(Self::diag(
                        &at,
                        DiagnosticKind::Unsupported,
                        format!("call to `{name}` is outside the supported subset"),
                    ));
                }
                Node::Expr(Expr::signal(name))
            }
            TokenKind::Number(n) => {
                if n > 1 {
                    return self.unsupported("multi-bit literals are outside the supported subset");
                }
                self.advance();
                Node::Expr(Expr::lit(n == 1))
            }
            TokenKind::BitLit(b) => {
                self.advance();
                Node::Expr(Expr::lit(b))
            }
            TokenKind::WideLit(_) => {
                return self.unsupported("multi-bit literals are outside the supported subset")
            }
            TokenKind::SysFn(name) => return self.system_call(&name),
            TokenKind::LParen => {
                self.advance();
                let inner = self.property()?;
                self.expect(TokenKind::RParen, "`)`")?;
                inner.node
            }
            TokenKind::At => {
                return self.unsupported("multiple clocking events are outside the supported subset")
            }
            TokenKind::Dollar => {
                return self.unsupported("`$` is outside the supported subset")
            }
            other => {
                return self.grammar(format!("expected an expression, found `{}`", other.text()))
            }
        };
        Ok(Parsed { node, at })
    }

    fn system_call(&mut self, name: &str) -> PResult<Parsed> {
        let at = self.here();
        if !SUPPORTED_SYSFNS.contains(&name) {
            return self.unsupported(format!("system function `${name}` is outside the supported subset"));
        }
        self.advance();
        self.expect(TokenKind::LParen, &format!("`(` after `${name}`"))?;
        let expr = if name == "past" {
            let arg = self.expr_or()?;
            let arg = to_expr(arg, "$past")?;
            let depth = if *self.peek() == TokenKind::Comma {
                self.advance();
                let depth = self.number("`$past` depth")?;
                if depth == 0 {
                    return self.grammar("`$past` depth must be at least 1");
                }
                depth
            } else {
                1
            };
            if *self.peek() == TokenKind::Comma {
                return self.unsupported("`$past` gating and clocking arguments are outside the supported subset");
            }
            Expr::past(arg, depth)
        } else {
            let signal = match self.peek() {
                TokenKind::Ident(s)
                    if !RESERVED.contains(&s.as_str())
                        && !UNSUPPORTED_KEYWORDS.contains(&s.as_str()) =>
                {
                    s.clone()
                }
                other => {
                    return self.grammar(format!(
                        "expected a signal name in `${name}`, found `{}`",
                        other.text()
                    ))
                }
            };
            self.advance();
            if *self.peek() != TokenKind::RParen {
                return self.unsupported(format!(
                    "`${name}` accepts a single signal name in the supported subset"
                ));
            }
            match name {
                "rose" => Expr::Rose { signal },
                "fell" => Expr::Fell { signal },
                _ => Expr::Stable { signal },
            }
        };
        self.expect(TokenKind::RParen, "`)`")?;
        Ok(Parsed {
            node: Node::Expr(expr),
            at,
        })
    }
}

fn into_prop(node: Node) -> Prop {
    match node {
        Node::Expr(e) => Prop::seq(Seq::boolean(e)),
        Node::Seq(s) => Prop::seq(s),
        Node::Prop(p) => p,
    }
}

fn to_seq(parsed: Parsed) -> PResult<Seq> {
    match parsed.node {
        Node::Expr(e) => Ok(Seq::boolean(e)),
        Node::Seq(s) => Ok(s),
        Node::Prop(_) => Err(Parser::diag(
            &parsed.at,
            DiagnosticKind::Grammar,
            "expected a sequence operand for `##`, found a property",
        )),
    }
}

fn to_expr(parsed: Parsed, op: &str) -> PResult<Expr> {
    match parsed.node {
        Node::Expr(e) => Ok(e),
        _ => Err(Parser::diag(
            &parsed.at,
            DiagnosticKind::Grammar,
            format!("operand of `{op}` must be a boolean expression"),
        )),
    }
}
