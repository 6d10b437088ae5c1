//! Lexer, recursive-descent parser and evaluator for the heuristic rule language.
//!
//! ```text
//! file      ::= heuristic*
//! heuristic ::= 'heuristic' STRING '{' rule+ '}'
//! rule      ::= 'when' expr '->' action
//!             | 'when' ('argmax' | 'argmin') '(' expr ',' expr ')'
//!             | 'otherwise' action
//! action    ::= 'choose' ('first' | 'second') | 'abstain'
//!             | ('argmax' | 'argmin') '(' expr ',' expr ')'
//! expr      ::= or ; or ::= and ('or' and)* ; and ::= not ('and' not)*
//! not       ::= 'not' not | cmp
//! cmp       ::= sum (('=='|'!='|'<'|'<='|'>'|'>=') sum)?
//! sum       ::= unary (('+'|'-') unary)* ; unary ::= '-' unary | primary
//! primary   ::= INT | 'true' | 'false' | ('first'|'second') '.' IDENT | '(' expr ')'
//! ```
//!
//! `argmax(a, b)` chooses first when `a > b`, second when `b > a`, and does not
//! fire on a tie, so evaluation falls through to the next rule (and finally to
//! the implicit abstain). `argmin` is the mirror image. Any reference to a
//! missing value makes the rule unsatisfied.

use crate::domain::{Alternative, CandidateLabel, CrossingSignal, Schema, Scenario};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Int(i64),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Comma,
    Dot,
    Arrow,
    Op(CmpOp),
    Plus,
    Minus,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => advance(1, &mut i, &mut col),
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                col += 1;
                loop {
                    match chars.get(i) {
                        None | Some('\n') => return Err(syntax(tl, tc, "unterminated string")),
                        Some('"') => {
                            i += 1;
                            col += 1;
                            break;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                            col += 1;
                        }
                    }
                }
                out.push(Token { tok: Tok::Str(s), line: tl, col: tc });
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                col += i - start;
                let v = text
                    .parse::<i64>()
                    .map_err(|_| syntax(tl, tc, format!("integer literal `{text}` out of range")))?;
                out.push(Token { tok: Tok::Int(v), line: tl, col: tc });
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                col += i - start;
                out.push(Token {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    line: tl,
                    col: tc,
                });
            }
            _ => {
                let next = chars.get(i + 1).copied();
                let (tok, n) = match (c, next) {
                    ('-', Some('>')) => (Tok::Arrow, 2),
                    ('=', Some('=')) => (Tok::Op(CmpOp::Eq), 2),
                    ('!', Some('=')) => (Tok::Op(CmpOp::Ne), 2),
                    ('<', Some('=')) => (Tok::Op(CmpOp::Le), 2),
                    ('>', Some('=')) => (Tok::Op(CmpOp::Ge), 2),
                    ('<', _) => (Tok::Op(CmpOp::Lt), 1),
                    ('>', _) => (Tok::Op(CmpOp::Gt), 1),
                    ('{', _) => (Tok::LBrace, 1),
                    ('}', _) => (Tok::RBrace, 1),
                    ('(', _) => (Tok::LParen, 1),
                    (')', _) => (Tok::RParen, 1),
                    (',', _) => (Tok::Comma, 1),
                    ('.', _) => (Tok::Dot, 1),
                    ('+', _) => (Tok::Plus, 1),
                    ('-', _) => (Tok::Minus, 1),
                    _ => return Err(syntax(tl, tc, format!("unexpected character `{c}`"))),
                };
                advance(n, &mut i, &mut col);
                out.push(Token { tok, line: tl, col: tc });
            }
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn apply<T: PartialOrd>(self, a: T, b: T) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    First,
    Second,
}

/// Boolean context flags readable from an alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flag {
    Intervention,
    IsPassengers,
    IsGreen,
    IsRed,
}

impl Flag {
    fn from_name(name: &str) -> Option<Self> {
        match name {
            "intervention" => Some(Flag::Intervention),
            "is_passengers" => Some(Flag::IsPassengers),
            "is_green" => Some(Flag::IsGreen),
            "is_red" => Some(Flag::IsRed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Int,
    Bool,
}

/// Type-checked expression with feature names resolved to schema indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i64),
    Bool(bool),
    Count(Side, usize),
    Flag(Side, Flag),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    BoolEq(bool, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Value {
    Int(i64),
    Bool(bool),
}

fn side_of(s: &Scenario, side: Side) -> &Alternative {
    match side {
        Side::First => &s.first,
        Side::Second => &s.second,
    }
}

impl Expr {
    /// `None` when a referenced value is missing.
    fn eval(&self, s: &Scenario) -> Option<Value> {
        Some(match self {
            Expr::Int(v) => Value::Int(*v),
            Expr::Bool(b) => Value::Bool(*b),
            Expr::Count(side, idx) => Value::Int((*side_of(s, *side).counts.get(*idx)?)?),
            Expr::Flag(side, flag) => {
                let ctx = side_of(s, *side).context?;
                Value::Bool(match flag {
                    Flag::Intervention => ctx.intervention?,
                    Flag::IsPassengers => ctx.is_passengers?,
                    Flag::IsGreen => ctx.signal? == CrossingSignal::Green,
                    Flag::IsRed => ctx.signal? == CrossingSignal::Red,
                })
            }
            Expr::Add(a, b) => Value::Int(a.int(s)?.checked_add(b.int(s)?)?),
            Expr::Sub(a, b) => Value::Int(a.int(s)?.checked_sub(b.int(s)?)?),
            Expr::Neg(a) => Value::Int(a.int(s)?.checked_neg()?),
            Expr::Cmp(op, a, b) => Value::Bool(op.apply(a.int(s)?, b.int(s)?)),
            Expr::BoolEq(eq, a, b) => Value::Bool((a.bool(s)? == b.bool(s)?) == *eq),
            // Short-circuit only on a definite outcome; a missing operand is
            // tolerated when the other side already decides the result.
            Expr::And(a, b) => match (a.bool(s), b.bool(s)) {
                (Some(false), _) | (_, Some(false)) => Value::Bool(false),
                (Some(true), Some(true)) => Value::Bool(true),
                _ => return None,
            },
            Expr::Or(a, b) => match (a.bool(s), b.bool(s)) {
                (Some(true), _) | (_, Some(true)) => Value::Bool(true),
                (Some(false), Some(false)) => Value::Bool(false),
                _ => return None,
            },
            Expr::Not(a) => Value::Bool(!a.bool(s)?),
        })
    }

    fn int(&self, s: &Scenario) -> Option<i64> {
        match self.eval(s)? {
            Value::Int(v) => Some(v),
            Value::Bool(_) => None,
        }
    }

    fn bool(&self, s: &Scenario) -> Option<bool> {
        match self.eval(s)? {
            Value::Bool(b) => Some(b),
            Value::Int(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    ChooseFirst,
    ChooseSecond,
    Abstain,
    Argmax(Expr, Expr),
    Argmin(Expr, Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    /// `None` for `otherwise` and the bare `when argmax(..)` form.
    pub guard: Option<Expr>,
    pub action: Action,
}

impl Rule {
    /// The label this rule produces on `s`, or `None` when it does not fire.
    pub fn fire(&self, s: &Scenario) -> Option<CandidateLabel> {
        if let Some(g) = &self.guard {
            if g.bool(s) != Some(true) {
                return None;
            }
        }
        let pick = |a: &Expr, b: &Expr| {
            let (a, b) = (a.int(s)?, b.int(s)?);
            match a.cmp(&b) {
                std::cmp::Ordering::Greater => Some(CandidateLabel::First),
                std::cmp::Ordering::Less => Some(CandidateLabel::Second),
                std::cmp::Ordering::Equal => None,
            }
        };
        match &self.action {
            Action::ChooseFirst => Some(CandidateLabel::First),
            Action::ChooseSecond => Some(CandidateLabel::Second),
            Action::Abstain => Some(CandidateLabel::Abstain),
            Action::Argmax(a, b) => pick(a, b),
            Action::Argmin(a, b) => pick(b, a),
        }
    }
}

/// A heuristic as parsed: its name and rule list. Schema binding lives on
/// [`super::HeuristicSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedHeuristic {
    pub name: String,
    pub rules: Vec<Rule>,
    pub source: String,
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    schema: &'a Schema,
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, msg: impl Into<String>) -> Error {
        let t = self.peek();
        syntax(t.line, t.col, msg)
    }

    fn describe(tok: &Tok) -> String {
        match tok {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Int(v) => format!("integer {v}"),
            Tok::Eof => "end of input".into(),
            other => format!("{other:?}"),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<Token> {
        if self.peek().tok == want {
            Ok(self.next())
        } else {
            Err(self.err_here(format!("expected {what}, found {}", Self::describe(&self.peek().tok))))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn expect_kw(&mut self, kw: &str) -> Result<Token> {
        if self.is_kw(kw) {
            Ok(self.next())
        } else {
            Err(self.err_here(format!("expected `{kw}`, found {}", Self::describe(&self.peek().tok))))
        }
    }

    fn file(&mut self) -> Result<Vec<ParsedHeuristic>> {
        let mut out = Vec::new();
        while self.peek().tok != Tok::Eof {
            out.push(self.heuristic()?);
        }
        Ok(out)
    }

    fn heuristic(&mut self) -> Result<ParsedHeuristic> {
        let start = self.expect_kw("heuristic")?;
        let name = match self.next() {
            Token { tok: Tok::Str(s), .. } if !s.is_empty() => s,
            t => return Err(syntax(t.line, t.col, "expected a non-empty heuristic name string")),
        };
        self.expect(Tok::LBrace, "`{`")?;
        let mut rules = Vec::new();
        while self.peek().tok != Tok::RBrace {
            if self.peek().tok == Tok::Eof {
                return Err(self.err_here("unterminated heuristic block, expected `}`"));
            }
            rules.push(self.rule()?);
        }
        let end = self.expect(Tok::RBrace, "`}`")?;
        if rules.is_empty() {
            return Err(syntax(start.line, start.col, format!("heuristic \"{name}\" has no rules")));
        }
        let source = slice_lines(self.src, start.line, end.line);
        Ok(ParsedHeuristic { name, rules, source })
    }

    fn rule(&mut self) -> Result<Rule> {
        if self.is_kw("otherwise") {
            self.next();
            let action = self.action()?;
            return Ok(Rule { guard: None, action });
        }
        self.expect_kw("when")?;
        let shorthand = matches!(self.peek_at(0), Tok::Ident(s) if s == "argmax" || s == "argmin")
            && *self.peek_at(1) == Tok::LParen;
        if shorthand {
            let action = self.action()?;
            return Ok(Rule { guard: None, action });
        }
        let guard = self.typed(Ty::Bool)?;
        self.expect(Tok::Arrow, "`->`")?;
        let action = self.action()?;
        Ok(Rule { guard: Some(guard), action })
    }

    fn action(&mut self) -> Result<Action> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) if s == "abstain" => Ok(Action::Abstain),
            Tok::Ident(s) if s == "choose" => {
                let which = self.next();
                match &which.tok {
                    Tok::Ident(w) if w == "first" => Ok(Action::ChooseFirst),
                    Tok::Ident(w) if w == "second" => Ok(Action::ChooseSecond),
                    other => Err(syntax(
                        which.line,
                        which.col,
                        format!("expected `first` or `second` after `choose`, found {}", Self::describe(other)),
                    )),
                }
            }
            Tok::Ident(s) if s == "argmax" || s == "argmin" => {
                let is_max = s == "argmax";
                self.expect(Tok::LParen, "`(`")?;
                let a = self.typed(Ty::Int)?;
                self.expect(Tok::Comma, "`,`")?;
                let b = self.typed(Ty::Int)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(if is_max { Action::Argmax(a, b) } else { Action::Argmin(a, b) })
            }
            other => Err(syntax(
                t.line,
                t.col,
                format!("expected an action (choose first, choose second, abstain, argmax, argmin), found {}", Self::describe(other)),
            )),
        }
    }

    fn typed(&mut self, want: Ty) -> Result<Expr> {
        let t = self.peek().clone();
        let (e, ty) = self.or()?;
        check(ty, want, &t)?;
        Ok(e)
    }

    fn or(&mut self) -> Result<(Expr, Ty)> {
        let t = self.peek().clone();
        let (mut lhs, ty) = self.and()?;
        if !self.is_kw("or") {
            return Ok((lhs, ty));
        }
        check(ty, Ty::Bool, &t)?;
        while self.is_kw("or") {
            self.next();
            let t = self.peek().clone();
            let (rhs, rty) = self.and()?;
            check(rty, Ty::Bool, &t)?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok((lhs, Ty::Bool))
    }

    fn and(&mut self) -> Result<(Expr, Ty)> {
        let t = self.peek().clone();
        let (mut lhs, ty) = self.not()?;
        if !self.is_kw("and") {
            return Ok((lhs, ty));
        }
        check(ty, Ty::Bool, &t)?;
        while self.is_kw("and") {
            self.next();
            let t = self.peek().clone();
            let (rhs, rty) = self.not()?;
            check(rty, Ty::Bool, &t)?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok((lhs, Ty::Bool))
    }

    fn not(&mut self) -> Result<(Expr, Ty)> {
        if self.is_kw("not") {
            self.next();
            let t = self.peek().clone();
            let (e, ty) = self.not()?;
            check(ty, Ty::Bool, &t)?;
            return Ok((Expr::Not(Box::new(e)), Ty::Bool));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<(Expr, Ty)> {
        let lt = self.peek().clone();
        let (lhs, lty) = self.sum()?;
        let op = match self.peek().tok {
            Tok::Op(op) => op,
            _ => return Ok((lhs, lty)),
        };
        let op_tok = self.next();
        let rt = self.peek().clone();
        let (rhs, rty) = self.sum()?;
        if lty == Ty::Bool && rty == Ty::Bool {
            return match op {
                CmpOp::Eq => Ok((Expr::BoolEq(true, Box::new(lhs), Box::new(rhs)), Ty::Bool)),
                CmpOp::Ne => Ok((Expr::BoolEq(false, Box::new(lhs), Box::new(rhs)), Ty::Bool)),
                _ => Err(Error::Type {
                    line: op_tok.line,
                    column: op_tok.col,
                    message: "ordering comparison on booleans".into(),
                }),
            };
        }
        check(lty, Ty::Int, &lt)?;
        check(rty, Ty::Int, &rt)?;
        if matches!(self.peek().tok, Tok::Op(_)) {
            return Err(self.err_here("comparisons do not chain; use `and`"));
        }
        Ok((Expr::Cmp(op, Box::new(lhs), Box::new(rhs)), Ty::Bool))
    }

    fn sum(&mut self) -> Result<(Expr, Ty)> {
        let t = self.peek().clone();
        let (mut lhs, ty) = self.unary()?;
        if !matches!(self.peek().tok, Tok::Plus | Tok::Minus) {
            return Ok((lhs, ty));
        }
        check(ty, Ty::Int, &t)?;
        while matches!(self.peek().tok, Tok::Plus | Tok::Minus) {
            let plus = self.next().tok == Tok::Plus;
            let t = self.peek().clone();
            let (rhs, rty) = self.unary()?;
            check(rty, Ty::Int, &t)?;
            lhs = if plus {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok((lhs, Ty::Int))
    }

    fn unary(&mut self) -> Result<(Expr, Ty)> {
        if self.peek().tok == Tok::Minus {
            self.next();
            let t = self.peek().clone();
            let (e, ty) = self.unary()?;
            check(ty, Ty::Int, &t)?;
            return Ok((Expr::Neg(Box::new(e)), Ty::Int));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<(Expr, Ty)> {
        let t = self.next();
        match t.tok {
            Tok::Int(v) => Ok((Expr::Int(v), Ty::Int)),
            Tok::LParen => {
                let inner = self.or()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(ref s) if s == "true" => Ok((Expr::Bool(true), Ty::Bool)),
            Tok::Ident(ref s) if s == "false" => Ok((Expr::Bool(false), Ty::Bool)),
            Tok::Ident(ref s) if s == "first" || s == "second" => {
                let side = if s == "first" { Side::First } else { Side::Second };
                self.expect(Tok::Dot, "`.` after alternative name")?;
                let ft = self.next();
                let name = match ft.tok {
                    Tok::Ident(n) => n,
                    other => {
                        return Err(syntax(ft.line, ft.col, format!("expected a feature name, found {}", Self::describe(&other))))
                    }
                };
                if let Some(idx) = self.schema.feature_index(&name) {
                    return Ok((Expr::Count(side, idx), Ty::Int));
                }
                match Flag::from_name(&name) {
                    Some(flag) if self.schema.has_context() => Ok((Expr::Flag(side, flag), Ty::Bool)),
                    _ => Err(Error::UnknownFeature { name, line: ft.line, column: ft.col }),
                }
            }
            other => Err(syntax(t.line, t.col, format!("expected an expression, found {}", Self::describe(&other)))),
        }
    }
}

fn check(got: Ty, want: Ty, at: &Token) -> Result<()> {
    if got == want {
        return Ok(());
    }
    let message = match want {
        Ty::Int => "boolean where integer expected",
        Ty::Bool => "integer where boolean expected",
    };
    Err(Error::Type { line: at.line, column: at.col, message: message.into() })
}

fn slice_lines(src: &str, from: usize, to: usize) -> String {
    src.lines()
        .skip(from - 1)
        .take(to + 1 - from)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses every heuristic block in `src`, resolving field references against `schema`.
pub fn parse_file(src: &str, schema: &Schema) -> Result<Vec<ParsedHeuristic>> {
    let toks = lex(src)?;
    Parser { toks, pos: 0, schema, src }.file()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ke() -> Schema {
        Schema::kidney_exchange()
    }

    #[test]
    fn lexes_positions() {
        let toks = lex("heuristic \"a\" {\n  when first.age_old >= 1 -> abstain }").unwrap();
        let ge = toks.iter().find(|t| t.tok == Tok::Op(CmpOp::Ge)).unwrap();
        assert_eq!((ge.line, ge.col), (2, 22));
    }

    #[test]
    fn comments_are_skipped() {
        let src = "# suite\nheuristic \"a\" { # trailing\n otherwise abstain }\n";
        assert_eq!(parse_file(src, &ke()).unwrap().len(), 1);
    }

    #[test]
    fn syntax_error_reports_line_and_column() {
        let err = parse_file("heuristic \"a\" {\n  when first.age_old > -> abstain }", &ke()).unwrap_err();
        match err {
            Error::Syntax { line, column, .. } => assert_eq!((line, column), (2, 24)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_arrow_is_a_syntax_error() {
        let err = parse_file("heuristic \"a\" { when first.age_old > 0 choose first }", &ke()).unwrap_err();
        assert!(matches!(err, Error::Syntax { .. }), "{err}");
    }

    #[test]
    fn boolean_in_arithmetic_is_a_type_error() {
        let err = parse_file(
            "heuristic \"a\" { when (first.age_old > 0) + 1 > 0 -> choose first }",
            &ke(),
        )
        .unwrap_err();
        match err {
            Error::Type { message, .. } => assert!(message.contains("boolean where integer")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn integer_guard_is_a_type_error() {
        let err = parse_file("heuristic \"a\" { when first.age_old -> choose first }", &ke()).unwrap_err();
        assert!(matches!(err, Error::Type { .. }));
    }

    #[test]
    fn context_flags_unknown_outside_mm() {
        let err = parse_file("heuristic \"a\" { when first.intervention -> choose first }", &ke()).unwrap_err();
        assert!(matches!(err, Error::UnknownFeature { ref name, .. } if name == "intervention"));
        let mm = Schema::moral_machine();
        assert!(parse_file("heuristic \"a\" { when not first.intervention -> choose first }", &mm).is_ok());
    }

    #[test]
    fn empty_block_rejected() {
        assert!(parse_file("heuristic \"a\" { }", &ke()).is_err());
        assert!(parse_file("heuristic \"\" { otherwise abstain }", &ke()).is_err());
    }

    #[test]
    fn chained_comparison_rejected() {
        assert!(parse_file("heuristic \"a\" { when 1 < 2 < 3 -> abstain }", &ke()).is_err());
    }

    #[test]
    fn precedence_and_binds_tighter_than_or() {
        let hs = parse_file("heuristic \"a\" { when true or false and false -> choose first }", &ke()).unwrap();
        let s = Scenario::new("x", Alternative::from_counts([0, 0, 0]), Alternative::from_counts([0, 0, 0]));
        assert_eq!(hs[0].rules[0].fire(&s), Some(CandidateLabel::First));
    }

    #[test]
    fn missing_operand_tolerated_when_other_side_decides() {
        let hs = parse_file(
            "heuristic \"a\" { when first.age_old > 0 or second.age_old > 0 -> choose second }",
            &ke(),
        )
        .unwrap();
        let mut first = Alternative::from_counts([0, 0, 0]);
        first.counts[0] = None;
        let s = Scenario::new("x", first.clone(), Alternative::from_counts([1, 0, 0]));
        assert_eq!(hs[0].rules[0].fire(&s), Some(CandidateLabel::Second));
        let s = Scenario::new("x", first, Alternative::from_counts([0, 0, 0]));
        assert_eq!(hs[0].rules[0].fire(&s), None);
    }
}
