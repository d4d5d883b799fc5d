//! Surface syntax for Linear A.
//!
//! ```text
//! program := def*
//! def     := (def NAME (param* ; param*) (ty* ; ty*) expr)
//! param   := (NAME ty)
//! ty      := R | (tup ty*)
//! expr    := (ret (NAME* ; NAME*)) | (let (param* ; param*) expr expr)
//!          | (untup (param* ;) NAME expr) | (untup (; param*) NAME expr)
//!          | (call NAME (NAME* ; NAME*))
//!          | NAME | NUMBER | (tup NAME*) | (ltup NAME*)
//!          | (sin NAME) | (cos NAME) | (exp NAME) | (add NAME NAME) | (mul NAME NAME)
//!          | (lzero ty) | (ladd NAME NAME) | (lscale NAME NAME)
//!          | (dup NAME) | (drop expr)
//! ```
//!
//! `;;` starts a comment that runs to the end of the line. A bare `NAME` in
//! expression position becomes a linear or non-linear variable depending on
//! which side of the semicolon it was bound on.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::ir::{BinaryOp, Binder, Expr, FuncDef, Program, Ty, UnaryOp, Var};

/// Byte offsets `[start, end)` into the parsed text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SourceSpan {
    pub start: usize,
    pub end: usize,
}

impl SourceSpan {
    pub fn new(start: usize, end: usize) -> Self {
        SourceSpan { start, end }
    }

    /// 1-based line and column of `start`.
    pub fn line_col(&self, text: &str) -> (usize, usize) {
        let before = &text[..self.start.min(text.len())];
        let line = before.matches('\n').count() + 1;
        let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        (line, col)
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("unexpected end of input, expected {0}")]
    UnexpectedEof(&'static str),
    #[error("expected {expected}, found `{found}`")]
    Unexpected {
        expected: &'static str,
        found: String,
    },
    #[error("invalid token `{0}`")]
    BadToken(String),
    #[error("malformed number `{0}`")]
    BadNumber(String),
    #[error("unknown form `{0}`")]
    UnknownForm(String),
    #[error("A-normal form violation: {0}")]
    AnfViolation(String),
    #[error("duplicate function `{0}`")]
    DuplicateFunction(String),
    #[error("call to `{0}`, which is not defined earlier in the program")]
    UnknownFunction(String),
    #[error("`{0}` is already bound in an enclosing scope")]
    Shadowing(String),
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("untup binds on both sides of the semicolon")]
    MixedUnpack,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{kind} at {span}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub span: SourceSpan,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Open,
    Close,
    Semi,
    Name(String),
    Number(f64),
}

fn is_name_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '%'
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '\'' | '%')
}

fn looks_numeric(word: &str) -> bool {
    let mut cs = word.chars();
    match cs.next() {
        Some(c) if c.is_ascii_digit() => true,
        Some('+' | '-' | '.') => matches!(cs.next(), Some(c) if c.is_ascii_digit() || c == '.'),
        _ => false,
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, SourceSpan)>, ParseError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            c if c.is_ascii_whitespace() => i += 1,
            '(' => {
                toks.push((Tok::Open, SourceSpan::new(i, i + 1)));
                i += 1;
            }
            ')' => {
                toks.push((Tok::Close, SourceSpan::new(i, i + 1)));
                i += 1;
            }
            ';' if bytes.get(i + 1) == Some(&b';') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            ';' => {
                toks.push((Tok::Semi, SourceSpan::new(i, i + 1)));
                i += 1;
            }
            _ => {
                let start = i;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_whitespace() || matches!(d, '(' | ')' | ';') {
                        break;
                    }
                    i += 1;
                }
                // Non-ASCII bytes end up inside a word and are rejected below.
                while !text.is_char_boundary(i) {
                    i += 1;
                }
                let word = &text[start..i];
                let span = SourceSpan::new(start, i);
                if looks_numeric(word) {
                    let x: f64 = word.parse().map_err(|_| ParseError {
                        kind: ParseErrorKind::BadNumber(word.to_owned()),
                        span,
                    })?;
                    if !x.is_finite() {
                        return Err(ParseError {
                            kind: ParseErrorKind::BadNumber(word.to_owned()),
                            span,
                        });
                    }
                    toks.push((Tok::Number(x), span));
                } else if word.starts_with(is_name_start) && word.chars().all(is_name_char) {
                    toks.push((Tok::Name(word.to_owned()), span));
                } else {
                    return Err(ParseError {
                        kind: ParseErrorKind::BadToken(word.to_owned()),
                        span,
                    });
                }
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, SourceSpan)>,
    pos: usize,
    end: usize,
    /// Names in scope with their side (true = linear).
    scope: Vec<(String, bool)>,
    funcs: HashSet<String>,
}

type PResult<T> = Result<T, ParseError>;
type Spanned = (Binder, SourceSpan);

impl Parser {
    fn err<T>(&self, kind: ParseErrorKind, span: SourceSpan) -> PResult<T> {
        Err(ParseError { kind, span })
    }

    fn peek(&self) -> Option<&(Tok, SourceSpan)> {
        self.toks.get(self.pos)
    }

    fn eof_span(&self) -> SourceSpan {
        SourceSpan::new(self.end, self.end)
    }

    fn next(&mut self, expected: &'static str) -> PResult<(Tok, SourceSpan)> {
        match self.toks.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(t.clone())
            }
            None => self.err(ParseErrorKind::UnexpectedEof(expected), self.eof_span()),
        }
    }

    fn unexpected<T>(&self, expected: &'static str, tok: &Tok, span: SourceSpan) -> PResult<T> {
        let found = match tok {
            Tok::Open => "(".to_owned(),
            Tok::Close => ")".to_owned(),
            Tok::Semi => ";".to_owned(),
            Tok::Name(n) => n.clone(),
            Tok::Number(x) => format!("{x:?}"),
        };
        self.err(ParseErrorKind::Unexpected { expected, found }, span)
    }

    fn expect_open(&mut self) -> PResult<SourceSpan> {
        match self.next("`(`")? {
            (Tok::Open, s) => Ok(s),
            (t, s) => self.unexpected("`(`", &t, s),
        }
    }

    fn expect_close(&mut self) -> PResult<()> {
        match self.next("`)`")? {
            (Tok::Close, _) => Ok(()),
            (t, s) => self.unexpected("`)`", &t, s),
        }
    }

    fn expect_semi(&mut self) -> PResult<()> {
        match self.next("`;`")? {
            (Tok::Semi, _) => Ok(()),
            (t, s) => self.unexpected("`;`", &t, s),
        }
    }

    fn expect_name(&mut self, expected: &'static str) -> PResult<(String, SourceSpan)> {
        match self.next(expected)? {
            (Tok::Name(n), s) => Ok((n, s)),
            (t, s) => self.unexpected(expected, &t, s),
        }
    }

    fn expect_keyword(&mut self, kw: &'static str) -> PResult<()> {
        match self.next(kw)? {
            (Tok::Name(n), _) if n == kw => Ok(()),
            (t, s) => self.unexpected(kw, &t, s),
        }
    }

    fn at_close(&self) -> bool {
        matches!(self.peek(), Some((Tok::Close, _)))
    }

    fn at_semi(&self) -> bool {
        matches!(self.peek(), Some((Tok::Semi, _)))
    }

    /// A variable in operand position. Compound expressions and literals are
    /// rejected here: that is what keeps every program in A-normal form.
    fn operand(&mut self) -> PResult<Var> {
        match self.next("variable name")? {
            (Tok::Name(n), _) => Ok(Var::new(n)),
            (Tok::Open, s) => self.err(
                ParseErrorKind::AnfViolation("compound expression in operand position".into()),
                s,
            ),
            (Tok::Number(_), s) => self.err(
                ParseErrorKind::AnfViolation("literal in operand position".into()),
                s,
            ),
            (t, s) => self.unexpected("variable name", &t, s),
        }
    }

    fn operands_until_close(&mut self) -> PResult<Vec<Var>> {
        let mut vs = Vec::new();
        while !self.at_close() {
            vs.push(self.operand()?);
        }
        self.expect_close()?;
        Ok(vs)
    }

    /// `(NAME* ; NAME*)`
    fn operand_sides(&mut self) -> PResult<(Vec<Var>, Vec<Var>)> {
        self.expect_open()?;
        let mut nl = Vec::new();
        while !self.at_semi() {
            nl.push(self.operand()?);
        }
        self.expect_semi()?;
        let lin = self.operands_until_close()?;
        Ok((nl, lin))
    }

    fn ty(&mut self) -> PResult<Ty> {
        match self.next("type")? {
            (Tok::Name(n), _) if n == "R" => Ok(Ty::Real),
            (Tok::Open, _) => {
                self.expect_keyword("tup")?;
                let mut ts = Vec::new();
                while !self.at_close() {
                    ts.push(self.ty()?);
                }
                self.expect_close()?;
                Ok(Ty::Tuple(ts))
            }
            (t, s) => self.unexpected("type", &t, s),
        }
    }

    fn ty_sides(&mut self) -> PResult<(Vec<Ty>, Vec<Ty>)> {
        self.expect_open()?;
        let mut nl = Vec::new();
        while !self.at_semi() {
            nl.push(self.ty()?);
        }
        self.expect_semi()?;
        let mut lin = Vec::new();
        while !self.at_close() {
            lin.push(self.ty()?);
        }
        self.expect_close()?;
        Ok((nl, lin))
    }

    fn param(&mut self) -> PResult<(Binder, SourceSpan)> {
        self.expect_open()?;
        let (name, span) = self.expect_name("binder name")?;
        let ty = self.ty()?;
        self.expect_close()?;
        Ok(((Var::new(name), ty), span))
    }

    fn binder_sides(&mut self) -> PResult<(Vec<Spanned>, Vec<Spanned>)> {
        self.expect_open()?;
        let mut nl = Vec::new();
        while !self.at_semi() {
            nl.push(self.param()?);
        }
        self.expect_semi()?;
        let mut lin = Vec::new();
        while !self.at_close() {
            lin.push(self.param()?);
        }
        self.expect_close()?;
        Ok((nl, lin))
    }

    /// Brings binders into scope, rejecting any name that is already visible
    /// (including an earlier binder of the same list).
    fn bind(&mut self, binders: &[(Binder, SourceSpan)], linear: bool) -> PResult<()> {
        for ((v, _), span) in binders {
            if self.scope.iter().any(|(n, _)| n == v.as_str()) {
                return self.err(ParseErrorKind::Shadowing(v.to_string()), *span);
            }
            self.scope.push((v.as_str().to_owned(), linear));
        }
        Ok(())
    }

    fn unbind(&mut self, count: usize) {
        let keep = self.scope.len() - count;
        self.scope.truncate(keep);
    }

    fn lookup(&self, name: &str) -> Option<bool> {
        self.scope
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .map(|(_, lin)| *lin)
    }

    fn expr(&mut self) -> PResult<Expr> {
        let (tok, span) = self.next("expression")?;
        match tok {
            Tok::Name(n) => match self.lookup(&n) {
                Some(false) => Ok(Expr::Var(Var::new(n))),
                Some(true) => Ok(Expr::LinVar(Var::new(n))),
                None => self.err(ParseErrorKind::Unbound(n), span),
            },
            Tok::Number(x) => Ok(Expr::Lit(x)),
            Tok::Open => {
                let (kw, kw_span) = self.expect_name("form keyword")?;
                self.form(&kw, kw_span)
            }
            t => self.unexpected("expression", &t, span),
        }
    }

    fn form(&mut self, kw: &str, kw_span: SourceSpan) -> PResult<Expr> {
        let e = match kw {
            "ret" => {
                let (nl, lin) = self.operand_sides()?;
                Expr::Ret { nl, lin }
            }
            "let" => {
                let (nl, lin) = self.binder_sides()?;
                let bound = self.expr()?;
                self.bind(&nl, false)?;
                self.bind(&lin, true)?;
                let body = self.expr()?;
                self.unbind(nl.len() + lin.len());
                Expr::let_in(strip(nl), strip(lin), bound, body)
            }
            "untup" => {
                let (nl, lin) = self.binder_sides()?;
                let (src, src_span) = self.expect_name("tuple variable")?;
                let linear = match (nl.is_empty(), lin.is_empty()) {
                    (false, false) => return self.err(ParseErrorKind::MixedUnpack, kw_span),
                    (false, true) => false,
                    (true, false) => true,
                    (true, true) => match self.lookup(&src) {
                        Some(side) => side,
                        None => return self.err(ParseErrorKind::Unbound(src), src_span),
                    },
                };
                let binds = if linear { lin } else { nl };
                self.bind(&binds, linear)?;
                let body = Box::new(self.expr()?);
                self.unbind(binds.len());
                let binds = strip(binds);
                let src = Var::new(src);
                if linear {
                    Expr::LinUntup { binds, src, body }
                } else {
                    Expr::Untup { binds, src, body }
                }
            }
            "call" => {
                let (func, span) = self.expect_name("function name")?;
                if !self.funcs.contains(&func) {
                    return self.err(ParseErrorKind::UnknownFunction(func), span);
                }
                let (nl, lin) = self.operand_sides()?;
                Expr::Call { func, nl, lin }
            }
            "tup" => return Ok(Expr::Tup(self.operands_until_close()?)),
            "ltup" => return Ok(Expr::LinTup(self.operands_until_close()?)),
            "sin" | "cos" | "exp" => {
                let op = match kw {
                    "sin" => UnaryOp::Sin,
                    "cos" => UnaryOp::Cos,
                    _ => UnaryOp::Exp,
                };
                Expr::Unary(op, self.operand()?)
            }
            "add" | "mul" => {
                let op = if kw == "add" {
                    BinaryOp::Add
                } else {
                    BinaryOp::Mul
                };
                let a = self.operand()?;
                let b = self.operand()?;
                Expr::Binary(op, a, b)
            }
            "lzero" => Expr::LinZero(self.ty()?),
            "ladd" => {
                let a = self.operand()?;
                let b = self.operand()?;
                Expr::LinAdd(a, b)
            }
            "lscale" => {
                let c = self.operand()?;
                let a = self.operand()?;
                Expr::LinScale(c, a)
            }
            "dup" => Expr::Dup(self.operand()?),
            "drop" => Expr::Drop(Box::new(self.expr()?)),
            other => return self.err(ParseErrorKind::UnknownForm(other.to_owned()), kw_span),
        };
        self.expect_close()?;
        Ok(e)
    }

    fn def(&mut self) -> PResult<FuncDef> {
        self.expect_open()?;
        self.expect_keyword("def")?;
        let (name, name_span) = self.expect_name("function name")?;
        if self.funcs.contains(&name) {
            return self.err(ParseErrorKind::DuplicateFunction(name), name_span);
        }
        let (nl, lin) = self.binder_sides()?;
        let (nl_results, lin_results) = self.ty_sides()?;
        self.bind(&nl, false)?;
        self.bind(&lin, true)?;
        let body = self.expr()?;
        self.unbind(nl.len() + lin.len());
        self.expect_close()?;
        self.funcs.insert(name.clone());
        Ok(FuncDef {
            name,
            nl_params: strip(nl),
            lin_params: strip(lin),
            nl_results,
            lin_results,
            body,
        })
    }
}

fn strip(bs: Vec<(Binder, SourceSpan)>) -> Vec<Binder> {
    bs.into_iter().map(|(b, _)| b).collect()
}

/// Parses a whole program. On failure, reports the earliest offending span
/// and returns no partial result.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
        scope: Vec::new(),
        funcs: HashSet::new(),
    };
    let mut defs = Vec::new();
    while p.peek().is_some() {
        defs.push(p.def()?);
    }
    Ok(Program { defs })
}

/// Parses a single type, e.g. `(tup R R)`.
pub fn parse_ty(text: &str) -> Result<Ty, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
        scope: Vec::new(),
        funcs: HashSet::new(),
    };
    let t = p.ty()?;
    if let Some((t2, s)) = p.peek().cloned() {
        return p.unexpected("end of input", &t2, s);
    }
    Ok(t)
}
