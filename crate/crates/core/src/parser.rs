//! Recursive-descent parser and printer for the rule language.
//!
//! ```text
//! program  := (rule ("," rule)* ","?)?
//! rule     := head ":-" (literal ("and" literal)*)?
//! head     := atom | "@" "(" term "," atom ")"
//! literal  := atom | "@" "(" term "," atom ")"
//!           | ("time_win" | "tuple_win") "(" int "," int "," int "," windowed ")"
//!           | "COMP" "(" cmp "," term "," term ")"
//!           | "MATH" "(" op "," term "," term "," term ")"
//! windowed := "@" "(" term "," atom ")" | "diamond" "(" atom ")" | "box" "(" atom ")"
//! ```
//!
//! `%` starts a comment that runs to the end of the line.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::model::{
    register_arity, Atom, BuiltinAtom, CompOp, ExtendedAtom, Head, Interner, Literal, MathOp,
    Number, Program, Rule, Symbol, TemporalOp, Term, WindowKind, WindowSpec,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
    /// The source line the error points into.
    pub snippet: String,
}

impl ParseError {
    /// Multi-line rendering with a caret under the offending column.
    pub fn render(&self) -> String {
        format!(
            "error at line {}, column {}: {}\n  {}\n  {}^",
            self.line,
            self.column,
            self.message,
            self.snippet,
            " ".repeat(self.column.saturating_sub(1))
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    LParen,
    RParen,
    Comma,
    Turnstile,
    At,
    Op(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Num(n) => write!(f, "number {n}"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Turnstile => f.write_str("`:-`"),
            Tok::At => f.write_str("`@`"),
            Tok::Op(op) => write!(f, "`{op}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

struct Source<'a> {
    lines: Vec<&'a str>,
}

impl<'a> Source<'a> {
    fn new(src: &'a str) -> Self {
        Source {
            lines: src.lines().collect(),
        }
    }

    fn error(&self, line: usize, col: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            line,
            column: col,
            message: message.into(),
            snippet: self
                .lines
                .get(line.wrapping_sub(1))
                .map(|l| l.to_string())
                .unwrap_or_default(),
        }
    }
}

fn lex(src: &str, source: &Source<'_>) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut tokens = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let mut push = |tok: Tok, width: usize, i: &mut usize, col: &mut usize| {
            tokens.push(Token {
                tok,
                line: start_line,
                col: start_col,
            });
            *i += width;
            *col += width;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
            }
            '%' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '(' => push(Tok::LParen, 1, &mut i, &mut col),
            ')' => push(Tok::RParen, 1, &mut i, &mut col),
            ',' => push(Tok::Comma, 1, &mut i, &mut col),
            '@' => push(Tok::At, 1, &mut i, &mut col),
            ':' if chars.get(i + 1) == Some(&'-') => push(Tok::Turnstile, 2, &mut i, &mut col),
            '=' if chars.get(i + 1) == Some(&'=') => push(Tok::Op("=="), 2, &mut i, &mut col),
            '!' if chars.get(i + 1) == Some(&'=') => push(Tok::Op("!="), 2, &mut i, &mut col),
            '>' | '<' => {
                let eq = chars.get(i + 1) == Some(&'=');
                let op = match (c, eq) {
                    ('>', true) => ">=",
                    ('>', false) => ">",
                    ('<', true) => "<=",
                    _ => "<",
                };
                push(Tok::Op(op), 1 + eq as usize, &mut i, &mut col)
            }
            '+' => push(Tok::Op("+"), 1, &mut i, &mut col),
            '*' => push(Tok::Op("*"), 1, &mut i, &mut col),
            '/' => push(Tok::Op("/"), 1, &mut i, &mut col),
            '-' if !chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) => {
                push(Tok::Op("-"), 1, &mut i, &mut col)
            }
            c if c == '-' || c.is_ascii_digit() => {
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
                    j += 1;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                let text: String = chars[i..j].iter().collect();
                let value: f64 = text
                    .parse()
                    .map_err(|_| source.error(line, col, format!("invalid number `{text}`")))?;
                if !value.is_finite() {
                    return Err(source.error(line, col, format!("number `{text}` out of range")));
                }
                push(Tok::Num(value), j - i, &mut i, &mut col)
            }
            c if c.is_ascii_alphabetic() => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                push(Tok::Ident(text), j - i, &mut i, &mut col)
            }
            other => {
                return Err(source.error(line, col, format!("unexpected character `{other}`")));
            }
        }
    }
    tokens.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(tokens)
}

const TEMPORAL_OPS: [&str; 2] = ["diamond", "box"];
const RESERVED: [&str; 7] = [
    "and",
    "time_win",
    "tuple_win",
    "diamond",
    "box",
    "COMP",
    "MATH",
];

struct Parser<'a> {
    source: Source<'a>,
    tokens: Vec<Token>,
    pos: usize,
    signature: BTreeMap<Symbol, usize>,
    symbols: Interner,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ParseError> {
        let source = Source::new(src);
        let tokens = lex(src, &source)?;
        Ok(Parser {
            source,
            tokens,
            pos: 0,
            signature: BTreeMap::new(),
            symbols: Interner::default(),
        })
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.tokens[self.pos];
        (t.line, t.col)
    }

    fn error_here(&self, message: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        self.source.error(line, col, message)
    }

    fn bump(&mut self) -> Tok {
        let tok = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn expect(&mut self, want: Tok, context: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(self.error_here(format!("expected {want} {context}, found {}", self.peek())))
        }
    }

    fn is_ident(&self, name: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == name)
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        let mut rules = Vec::new();
        while *self.peek() != Tok::Eof {
            rules.push(self.rule()?);
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                Tok::Eof => break,
                other => {
                    return Err(self.error_here(format!(
                        "expected `,` between rules or `and` between body atoms, found {other}"
                    )))
                }
            }
        }
        Ok(Program {
            rules,
            predicates: std::mem::take(&mut self.signature),
        })
    }

    fn rule(&mut self) -> Result<Rule, ParseError> {
        let (line, col) = self.here();
        let head = if *self.peek() == Tok::At {
            let (t, atom) = self.at_atom()?;
            Head::At(t, atom)
        } else {
            Head::Plain(self.atom()?)
        };
        self.expect(Tok::Turnstile, "after rule head")?;
        let mut body = Vec::new();
        if !matches!(self.peek(), Tok::Comma | Tok::Eof) {
            body.push(self.literal()?);
            while self.is_ident("and") {
                self.bump();
                body.push(self.literal()?);
            }
        }
        let rule = Rule { head, body };
        if let Some(v) = rule.unsafe_variable() {
            let message = if rule.head.variables().any(|h| *h == v) && rule.body.is_empty() {
                format!("fact head must be ground, found variable `{v}`")
            } else {
                format!("unsafe variable `{v}`: not bound by any body atom")
            };
            return Err(self.source.error(line, col, message));
        }
        Ok(rule)
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        match self.peek().clone() {
            Tok::At => {
                let (t, atom) = self.at_atom()?;
                Ok(Literal::Atom(ExtendedAtom::At(t, atom)))
            }
            Tok::Ident(name) if name == "time_win" || name == "tuple_win" => {
                self.windowed(name == "tuple_win").map(Literal::Atom)
            }
            Tok::Ident(name) if name == "COMP" => self.comp().map(Literal::Builtin),
            Tok::Ident(name) if name == "MATH" => self.math().map(Literal::Builtin),
            _ => Ok(Literal::Atom(ExtendedAtom::Plain(self.atom()?))),
        }
    }

    fn window_param(&mut self, what: &str) -> Result<u64, ParseError> {
        match self.peek().clone() {
            Tok::Num(n) if n >= 0.0 && n.fract() == 0.0 => {
                self.bump();
                Ok(n as u64)
            }
            other => Err(self.error_here(format!(
                "window {what} must be a nonnegative integer, found {other}"
            ))),
        }
    }

    fn windowed(&mut self, tuple: bool) -> Result<ExtendedAtom, ParseError> {
        let keyword = if tuple { "tuple_win" } else { "time_win" };
        self.bump();
        self.expect(Tok::LParen, &format!("after `{keyword}`"))?;
        let mut params = [0u64; 3];
        let names = ["length", "future length", "step"];
        for (i, name) in names.iter().enumerate() {
            params[i] = self.window_param(name)?;
            if *self.peek() != Tok::Comma {
                return Err(self.error_here(format!(
                    "malformed `{keyword}`: expected 4 arguments (past, future, step, formula)"
                )));
            }
            self.bump();
        }
        let (line, col) = self.here();
        let (op, atom) = match self.peek().clone() {
            Tok::At => {
                let (t, atom) = self.at_atom()?;
                (TemporalOp::At(t), atom)
            }
            Tok::Ident(name) if name == "diamond" || name == "box" => {
                self.bump();
                self.expect(Tok::LParen, &format!("after `{name}`"))?;
                let atom = self.atom()?;
                self.expect(Tok::RParen, &format!("to close `{name}`"))?;
                let op = if name == "box" {
                    TemporalOp::Box
                } else {
                    TemporalOp::Diamond
                };
                (op, atom)
            }
            other => {
                return Err(self.error_here(format!(
                    "expected `@(..)`, `diamond(..)` or `box(..)` inside `{keyword}`, found {other}"
                )))
            }
        };
        if *self.peek() == Tok::Comma {
            return Err(self.error_here(format!(
                "malformed `{keyword}`: expected 4 arguments (past, future, step, formula)"
            )));
        }
        self.expect(Tok::RParen, &format!("to close `{keyword}`"))?;
        let kind = if tuple {
            if params[1] != 0 {
                return Err(self.source.error(
                    line,
                    col,
                    "tuple windows cannot reach into the future",
                ));
            }
            WindowKind::Tuple
        } else {
            WindowKind::Time
        };
        Ok(ExtendedAtom::Windowed {
            spec: WindowSpec {
                kind,
                past: params[0],
                future: params[1],
                step: params[2],
            },
            op,
            atom,
        })
    }

    fn at_atom(&mut self) -> Result<(Term, Atom), ParseError> {
        self.expect(Tok::At, "")?;
        self.expect(Tok::LParen, "after `@`")?;
        let time = match self.term()? {
            Term::Sym(s) => {
                return Err(self.error_here(format!(
                    "time of `@` must be a variable or a number, found symbol `{s}`"
                )))
            }
            t => t,
        };
        self.expect(Tok::Comma, "after the time of `@`")?;
        let atom = self.atom()?;
        self.expect(Tok::RParen, "to close `@`")?;
        Ok((time, atom))
    }

    fn comp(&mut self) -> Result<BuiltinAtom, ParseError> {
        self.bump();
        self.expect(Tok::LParen, "after `COMP`")?;
        let op = match self.peek().clone() {
            Tok::Op(op) => {
                self.bump();
                CompOp::parse(op)
            }
            Tok::Ident(s) if s == "s" && *self.peek_at(1) == Tok::Op("!=") => {
                self.bump();
                self.bump();
                Some(CompOp::SymNe)
            }
            _ => None,
        }
        .ok_or_else(|| self.error_here("unknown comparison operator"))?;
        self.expect(Tok::Comma, "after the comparison operator")?;
        let lhs = self.term()?;
        self.expect(Tok::Comma, "between `COMP` operands")?;
        let rhs = self.term()?;
        self.expect(Tok::RParen, "to close `COMP`")?;
        Ok(BuiltinAtom::Comp { op, lhs, rhs })
    }

    fn math(&mut self) -> Result<BuiltinAtom, ParseError> {
        self.bump();
        self.expect(Tok::LParen, "after `MATH`")?;
        let op = match self.peek().clone() {
            Tok::Op(op) => MathOp::parse(op),
            _ => None,
        }
        .ok_or_else(|| self.error_here("unknown arithmetic operator"))?;
        self.bump();
        let mut terms = Vec::with_capacity(3);
        for _ in 0..3 {
            self.expect(Tok::Comma, "between `MATH` arguments")?;
            terms.push(self.term()?);
        }
        self.expect(Tok::RParen, "to close `MATH`")?;
        let b = terms.pop().unwrap();
        let a = terms.pop().unwrap();
        let result = terms.pop().unwrap();
        Ok(BuiltinAtom::Math { op, result, a, b })
    }

    fn atom(&mut self) -> Result<Atom, ParseError> {
        let (line, col) = self.here();
        let name = match self.peek().clone() {
            Tok::Ident(name) => name,
            other => return Err(self.error_here(format!("expected an atom, found {other}"))),
        };
        if TEMPORAL_OPS.contains(&name.as_str()) {
            return Err(self.error_here(format!(
                "temporal operator `{name}` requires an enclosing window"
            )));
        }
        if RESERVED.contains(&name.as_str()) {
            return Err(self.error_here(format!("`{name}` is not allowed here")));
        }
        if !name.starts_with(|c: char| c.is_ascii_lowercase()) {
            return Err(self.error_here(format!(
                "predicate names start with a lowercase letter, found `{name}`"
            )));
        }
        self.bump();
        let mut args = Vec::new();
        if *self.peek() == Tok::LParen {
            self.bump();
            if *self.peek() != Tok::RParen {
                args.push(self.term()?);
                while *self.peek() == Tok::Comma {
                    self.bump();
                    args.push(self.term()?);
                }
            }
            self.expect(Tok::RParen, &format!("to close the arguments of `{name}`"))?;
        }
        let atom = Atom::new(self.symbols.intern(&name), args);
        register_arity(&mut self.signature, &atom)
            .map_err(|e| self.source.error(line, col, e.to_string()))?;
        Ok(atom)
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                Ok(Term::Num(
                    Number::new(n).expect("lexer yields finite numbers"),
                ))
            }
            Tok::Ident(name) => {
                if RESERVED.contains(&name.as_str()) {
                    return Err(self.error_here(format!("`{name}` is not a valid term")));
                }
                self.bump();
                if name.starts_with(|c: char| c.is_ascii_uppercase()) {
                    Ok(Term::Var(self.symbols.intern(&name)))
                } else {
                    Ok(Term::Sym(self.symbols.intern(&name)))
                }
            }
            other => Err(self.error_here(format!("expected a term, found {other}"))),
        }
    }
}

/// Parses a whole program.
pub fn parse_program(source: &str) -> Result<Program, ParseError> {
    Parser::new(source)?.program()
}

/// Parses a single body element: an extended atom or a builtin.
pub fn parse_extended_atom(source: &str) -> Result<Literal, ParseError> {
    let mut p = Parser::new(source)?;
    let lit = p.literal()?;
    if *p.peek() != Tok::Eof {
        return Err(p.error_here(format!("unexpected {} after literal", p.peek())));
    }
    Ok(lit)
}

/// Parses a single ground or non-ground atom such as `traffic(m1,12,1)`.
pub fn parse_atom(source: &str) -> Result<Atom, ParseError> {
    let mut p = Parser::new(source)?;
    let atom = p.atom()?;
    if *p.peek() != Tok::Eof {
        return Err(p.error_here(format!("unexpected {} after atom", p.peek())));
    }
    Ok(atom)
}

fn format_window(spec: &WindowSpec) -> String {
    let keyword = match spec.kind {
        WindowKind::Time => "time_win",
        WindowKind::Tuple => "tuple_win",
    };
    format!("{keyword}({}, {}, {}, ", spec.past, spec.future, spec.step)
}

pub fn format_literal(lit: &Literal) -> String {
    match lit {
        Literal::Atom(ExtendedAtom::Plain(a)) => a.to_string(),
        Literal::Atom(ExtendedAtom::At(t, a)) => format!("@({t}, {a})"),
        Literal::Atom(ExtendedAtom::Windowed { spec, op, atom }) => {
            let inner = match op {
                TemporalOp::Diamond => format!("diamond({atom})"),
                TemporalOp::Box => format!("box({atom})"),
                TemporalOp::At(t) => format!("@({t}, {atom})"),
            };
            format!("{}{inner})", format_window(spec))
        }
        Literal::Builtin(BuiltinAtom::Comp { op, lhs, rhs }) => {
            format!("COMP({}, {lhs}, {rhs})", op.as_str())
        }
        Literal::Builtin(BuiltinAtom::Math { op, result, a, b }) => {
            format!("MATH({}, {result}, {a}, {b})", op.as_str())
        }
    }
}

pub fn format_rule(rule: &Rule) -> String {
    let head = match &rule.head {
        Head::Plain(a) => a.to_string(),
        Head::At(t, a) => format!("@({t}, {a})"),
    };
    if rule.body.is_empty() {
        return format!("{head} :-");
    }
    let body: Vec<String> = rule.body.iter().map(format_literal).collect();
    format!("{head} :- {}", body.join("\n    and "))
}

/// Prints a program in the surface syntax; the output re-parses to an equal program.
pub fn format_program(program: &Program) -> String {
    let mut out = String::new();
    for (i, rule) in program.rules.iter().enumerate() {
        out.push_str(&format_rule(rule));
        if i + 1 < program.rules.len() {
            out.push(',');
        }
        out.push('\n');
    }
    out
}
