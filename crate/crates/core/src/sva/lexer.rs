use serde::{Deserialize, Serialize};

use super::diagnostics::{Diagnostic, DiagnosticKind};
use super::parser::{RESERVED, UNSUPPORTED_KEYWORDS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum TokenKind {
    Ident(String),
    /// `$name`
    SysFn(String),
    /// Bare `$` (unbounded range marker).
    Dollar,
    Number(u32),
    /// `1'b0` / `1'b1`
    BitLit(bool),
    /// Any other sized or based literal, kept verbatim for diagnostics.
    WideLit(String),
    At,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Colon,
    Semi,
    Comma,
    Dot,
    HashHash,
    ImplOverlap,
    ImplNext,
    OrOr,
    AndAnd,
    EqEq,
    NotEq,
    Bang,
    Star,
    Plus,
    Minus,
    Assign,
    Arrow,
    /// Bitwise/relational operators outside the subset.
    OtherOp(&'static str),
    /// String literal, only meaningful in action blocks.
    Str(String),
    Eof,
}

impl TokenKind {
    pub(crate) fn text(&self) -> String {
        match self {
            TokenKind::Ident(s) => s.clone(),
            TokenKind::SysFn(s) => format!("${s}"),
            TokenKind::Dollar => "$".into(),
            TokenKind::Number(n) => n.to_string(),
            TokenKind::BitLit(b) => format!("1'b{}", u8::from(*b)),
            TokenKind::WideLit(s) => s.clone(),
            TokenKind::Str(s) => format!("\"{s}\""),
            TokenKind::At => "@".into(),
            TokenKind::LParen => "(".into(),
            TokenKind::RParen => ")".into(),
            TokenKind::LBracket => "[".into(),
            TokenKind::RBracket => "]".into(),
            TokenKind::Colon => ":".into(),
            TokenKind::Semi => ";".into(),
            TokenKind::Comma => ",".into(),
            TokenKind::Dot => ".".into(),
            TokenKind::HashHash => "##".into(),
            TokenKind::ImplOverlap => "|->".into(),
            TokenKind::ImplNext => "|=>".into(),
            TokenKind::OrOr => "||".into(),
            TokenKind::AndAnd => "&&".into(),
            TokenKind::EqEq => "==".into(),
            TokenKind::NotEq => "!=".into(),
            TokenKind::Bang => "!".into(),
            TokenKind::Star => "*".into(),
            TokenKind::Plus => "+".into(),
            TokenKind::Minus => "-".into(),
            TokenKind::Assign => "=".into(),
            TokenKind::Arrow => "->".into(),
            TokenKind::OtherOp(s) => (*s).into(),
            TokenKind::Eof => "<end of input>".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub kind: TokenKind,
    pub line: usize,
    pub column: usize,
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, Diagnostic> {
    Lexer::new(src).run()
}

/// Highlighting class of a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenClass {
    Keyword,
    Identifier,
    SystemFunction,
    Number,
    String,
    Operator,
    Punctuation,
}

/// A token with its position, for editors and syntax highlighting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexToken {
    pub text: String,
    pub class: TokenClass,
    pub line: usize,
    pub column: usize,
}

const KEYWORDS: &[&str] = &["assume", "cover", "restrict", "posedge", "negedge", "edge"];

fn class_of(kind: &TokenKind) -> TokenClass {
    match kind {
        TokenKind::Ident(s)
            if RESERVED.contains(&s.as_str())
                || KEYWORDS.contains(&s.as_str())
                || UNSUPPORTED_KEYWORDS.contains(&s.as_str()) =>
        {
            TokenClass::Keyword
        }
        TokenKind::Ident(_) => TokenClass::Identifier,
        TokenKind::SysFn(_) | TokenKind::Dollar => TokenClass::SystemFunction,
        TokenKind::Number(_) | TokenKind::BitLit(_) | TokenKind::WideLit(_) => TokenClass::Number,
        TokenKind::Str(_) => TokenClass::String,
        TokenKind::At
        | TokenKind::LParen
        | TokenKind::RParen
        | TokenKind::LBracket
        | TokenKind::RBracket
        | TokenKind::Colon
        | TokenKind::Semi
        | TokenKind::Comma
        | TokenKind::Dot
        | TokenKind::Eof => TokenClass::Punctuation,
        _ => TokenClass::Operator,
    }
}

/// Tokens of `src` without the end marker, or the first lexical error.
pub fn lex(src: &str) -> Result<Vec<LexToken>, Diagnostic> {
    Ok(tokenize(src)?
        .into_iter()
        .filter(|t| t.kind != TokenKind::Eof)
        .map(|t| LexToken {
            text: t.kind.text(),
            class: class_of(&t.kind),
            line: t.line,
            column: t.column,
        })
        .collect())
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    column: usize,
}

impl Lexer {
    fn new(src: &str) -> Self {
        Lexer {
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            column: 1,
        }
    }

    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn error(&self, line: usize, column: usize, msg: impl Into<String>, tok: String) -> Diagnostic {
        Diagnostic {
            line,
            column,
            message: msg.into(),
            token: tok,
            kind: DiagnosticKind::Lexical,
        }
    }

    fn run(mut self) -> Result<Vec<Token>, Diagnostic> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia()?;
            let (line, column) = (self.line, self.column);
            let Some(c) = self.peek(0) else {
                out.push(Token {
                    kind: TokenKind::Eof,
                    line,
                    column,
                });
                return Ok(out);
            };
            let kind = self.lex_one(c, line, column)?;
            out.push(Token { kind, line, column });
        }
    }

    fn skip_trivia(&mut self) -> Result<(), Diagnostic> {
        loop {
            match (self.peek(0), self.peek(1)) {
                (Some(c), _) if c.is_whitespace() => {
                    self.bump();
                }
                (Some('/'), Some('/')) => {
                    while let Some(c) = self.peek(0) {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                (Some('/'), Some('*')) => {
                    let (line, column) = (self.line, self.column);
                    self.bump();
                    self.bump();
                    loop {
                        match (self.peek(0), self.peek(1)) {
                            (Some('*'), Some('/')) => {
                                self.bump();
                                self.bump();
                                break;
                            }
                            (Some(_), _) => {
                                self.bump();
                            }
                            (None, _) => {
                                return Err(self.error(
                                    line,
                                    column,
                                    "unterminated block comment",
                                    "/*".into(),
                                ))
                            }
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek(0) {
            if !f(c) {
                break;
            }
            s.push(c);
            self.bump();
        }
        s
    }

    fn lex_one(&mut self, c: char, line: usize, column: usize) -> Result<TokenKind, Diagnostic> {
        let ident_start = |c: char| c.is_ascii_alphabetic() || c == '_';
        let ident_cont = |c: char| c.is_ascii_alphanumeric() || c == '_' || c == '$';

        if ident_start(c) {
            return Ok(TokenKind::Ident(self.take_while(ident_cont)));
        }
        if c.is_ascii_digit() {
            let digits = self.take_while(|c| c.is_ascii_digit() || c == '_');
            if self.peek(0) == Some('\'') {
                self.bump();
                let rest = self.take_while(|c| c.is_ascii_alphanumeric() || c == '_');
                let text = format!("{digits}'{rest}");
                return Ok(match (digits.as_str(), rest.to_ascii_lowercase().as_str()) {
                    ("1", "b0") => TokenKind::BitLit(false),
                    ("1", "b1") => TokenKind::BitLit(true),
                    _ => TokenKind::WideLit(text),
                });
            }
            let clean: String = digits.chars().filter(|c| *c != '_').collect();
            return clean
                .parse::<u32>()
                .map(TokenKind::Number)
                .map_err(|_| self.error(line, column, "integer literal out of range", digits));
        }
        if c == '\'' {
            // unsized fill literals such as '0 / '1
            self.bump();
            let rest = self.take_while(|c| c.is_ascii_alphanumeric());
            return Ok(TokenKind::WideLit(format!("'{rest}")));
        }
        if c == '"' {
            self.bump();
            let body = self.take_while(|c| c != '"' && c != '\n');
            if self.peek(0) != Some('"') {
                return Err(self.error(line, column, "unterminated string literal", "\"".into()));
            }
            self.bump();
            return Ok(TokenKind::Str(body));
        }
        if c == '$' {
            self.bump();
            if self.peek(0).is_some_and(ident_start) {
                return Ok(TokenKind::SysFn(self.take_while(ident_cont)));
            }
            return Ok(TokenKind::Dollar);
        }

        let three: String = (0..3).filter_map(|i| self.peek(i)).collect();
        let two: String = (0..2).filter_map(|i| self.peek(i)).collect();
        let (kind, len) = match three.as_str() {
            "|->" => (TokenKind::ImplOverlap, 3),
            "|=>" => (TokenKind::ImplNext, 3),
            "===" => (TokenKind::OtherOp("==="), 3),
            "!==" => (TokenKind::OtherOp("!=="), 3),
            _ => match two.as_str() {
                "##" => (TokenKind::HashHash, 2),
                "||" => (TokenKind::OrOr, 2),
                "&&" => (TokenKind::AndAnd, 2),
                "==" => (TokenKind::EqEq, 2),
                "!=" => (TokenKind::NotEq, 2),
                "->" => (TokenKind::Arrow, 2),
                "<=" => (TokenKind::OtherOp("<="), 2),
                ">=" => (TokenKind::OtherOp(">="), 2),
                "<<" => (TokenKind::OtherOp("<<"), 2),
                ">>" => (TokenKind::OtherOp(">>"), 2),
                _ => match c {
                    '@' => (TokenKind::At, 1),
                    '(' => (TokenKind::LParen, 1),
                    ')' => (TokenKind::RParen, 1),
                    '[' => (TokenKind::LBracket, 1),
                    ']' => (TokenKind::RBracket, 1),
                    ':' => (TokenKind::Colon, 1),
                    ';' => (TokenKind::Semi, 1),
                    ',' => (TokenKind::Comma, 1),
                    '.' => (TokenKind::Dot, 1),
                    '!' => (TokenKind::Bang, 1),
                    '*' => (TokenKind::Star, 1),
                    '+' => (TokenKind::Plus, 1),
                    '-' => (TokenKind::Minus, 1),
                    '=' => (TokenKind::Assign, 1),
                    '&' => (TokenKind::OtherOp("&"), 1),
                    '|' => (TokenKind::OtherOp("|"), 1),
                    '^' => (TokenKind::OtherOp("^"), 1),
                    '~' => (TokenKind::OtherOp("~"), 1),
                    '<' => (TokenKind::OtherOp("<"), 1),
                    '>' => (TokenKind::OtherOp(">"), 1),
                    '/' => (TokenKind::OtherOp("/"), 1),
                    '%' => (TokenKind::OtherOp("%"), 1),
                    '?' => (TokenKind::OtherOp("?"), 1),
                    '{' => (TokenKind::OtherOp("{"), 1),
                    '}' => (TokenKind::OtherOp("}"), 1),
                    '#' => {
                        return Err(self.error(
                            line,
                            column,
                            "single `#` is not valid here; cycle delays use `##`",
                            "#".into(),
                        ))
                    }
                    other => {
                        return Err(self.error(
                            line,
                            column,
                            format!("unexpected character `{other}`"),
                            other.to_string(),
                        ))
                    }
                },
            },
        };
        for _ in 0..len {
            self.bump();
        }
        Ok(kind)
    }
}
