//! A small differentiable expression language for test functions.
//!
//! Grammar (infix, whitespace-insensitive):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' ['-'] integer)*
//! atom   := number | variable | func '(' args ')' | '(' expr ')'
//! func   := exp | log | sin | cos | sqrt | bump
//! ```
//!
//! Variables are identifiers such as `x`, `x1..xd`, or `t`; argument lists
//! accept `,` or `;` as separators (the customary notation is
//! `bump(x; -1, 1)`).
//!
//! `bump(v; a, b)` is the standard mollifier profile: with
//! `u = (2v − a − b)/(b − a)`, it equals `exp(−1/(1−u²))` for `u ∈ (−1, 1)`
//! and exactly `0` elsewhere (endpoints included), so it is smooth and
//! compactly supported on `[a, b]` with maximum `exp(−1)` at the midpoint.
//!
//! Differentiation stays inside the language via a guarded four-argument
//! extension `bump(v; a, b, w)` meaning `exp(−1/(1−u²))·w` inside `(a, b)`
//! and `0` outside. The extra factor `w` absorbs the rational part of the
//! derivative, whose poles at `u = ±1` are thereby never evaluated: the
//! derivative of a bump is exactly zero at and beyond the support edges.
//! The printer emits the four-argument form and the parser accepts it back,
//! so `parse ∘ print` round-trips for derivatives too.

use std::fmt;

use crate::error::{Error, Result};

/// Expression tree. Constructed through [`Expr::parse`] or combinators; kept
/// immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Num(f64),
    Var(String),
    Add(Box<Ast>, Box<Ast>),
    Sub(Box<Ast>, Box<Ast>),
    Mul(Box<Ast>, Box<Ast>),
    Div(Box<Ast>, Box<Ast>),
    Neg(Box<Ast>),
    /// Integer power; keeps derivatives closed-form and avoids branch cuts.
    Pow(Box<Ast>, i32),
    Exp(Box<Ast>),
    Log(Box<Ast>),
    Sin(Box<Ast>),
    Cos(Box<Ast>),
    Sqrt(Box<Ast>),
    /// Guarded compactly-supported factor; see module docs.
    Bump {
        arg: Box<Ast>,
        a: f64,
        b: f64,
        w: Box<Ast>,
    },
}

/// A parsed, immutable, thread-safe expression together with its sorted
/// variable list.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    ast: Ast,
    vars: Vec<String>,
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Sep,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next token with its starting byte offset, or None at end of input.
    fn next(&mut self) -> Result<Option<(Tok, usize)>> {
        self.skip_ws();
        if self.pos >= self.src.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = self.src[self.pos];
        let tok = match c {
            b'+' => {
                self.pos += 1;
                Tok::Plus
            }
            b'-' => {
                self.pos += 1;
                Tok::Minus
            }
            b'*' => {
                self.pos += 1;
                Tok::Star
            }
            b'/' => {
                self.pos += 1;
                Tok::Slash
            }
            b'^' => {
                self.pos += 1;
                Tok::Caret
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b',' | b';' => {
                self.pos += 1;
                Tok::Sep
            }
            b'0'..=b'9' | b'.' => {
                let mut end = self.pos;
                while end < self.src.len()
                    && (self.src[end].is_ascii_digit() || self.src[end] == b'.')
                {
                    end += 1;
                }
                // Optional exponent part.
                if end < self.src.len() && (self.src[end] == b'e' || self.src[end] == b'E') {
                    let mut e = end + 1;
                    if e < self.src.len() && (self.src[e] == b'+' || self.src[e] == b'-') {
                        e += 1;
                    }
                    if e < self.src.len() && self.src[e].is_ascii_digit() {
                        while e < self.src.len() && self.src[e].is_ascii_digit() {
                            e += 1;
                        }
                        end = e;
                    }
                }
                let text = std::str::from_utf8(&self.src[self.pos..end]).expect("ascii");
                let value: f64 = text.parse().map_err(|_| Error::Parse {
                    position: start,
                    message: format!("malformed number literal `{text}`"),
                })?;
                self.pos = end;
                Tok::Num(value)
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let mut end = self.pos;
                while end < self.src.len()
                    && (self.src[end].is_ascii_alphanumeric() || self.src[end] == b'_')
                {
                    end += 1;
                }
                let text = std::str::from_utf8(&self.src[self.pos..end]).expect("ascii");
                self.pos = end;
                Tok::Ident(text.to_string())
            }
            other => {
                return Err(Error::Parse {
                    position: start,
                    message: format!("unexpected character `{}`", other as char),
                })
            }
        };
        Ok(Some((tok, start)))
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<(Tok, usize)>,
    idx: usize,
    end_pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|(t, _)| t)
    }

    fn pos(&self) -> usize {
        self.toks
            .get(self.idx)
            .map(|&(_, p)| p)
            .unwrap_or(self.end_pos)
    }

    fn bump_tok(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.idx).map(|(t, _)| t.clone());
        self.idx += 1;
        t
    }

    fn expect(&mut self, want: Tok, desc: &str) -> Result<()> {
        let pos = self.pos();
        match self.bump_tok() {
            Some(t) if t == want => Ok(()),
            _ => Err(Error::Parse {
                position: pos,
                message: format!("expected {desc}"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Ast> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump_tok();
                    let rhs = self.term()?;
                    lhs = Ast::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.bump_tok();
                    let rhs = self.term()?;
                    lhs = Ast::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Ast> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump_tok();
                    let rhs = self.unary()?;
                    lhs = Ast::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Slash) => {
                    self.bump_tok();
                    let rhs = self.unary()?;
                    lhs = Ast::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Ast> {
        if let Some(Tok::Minus) = self.peek() {
            self.bump_tok();
            let inner = self.unary()?;
            return Ok(Ast::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Ast> {
        let mut base = self.atom()?;
        while let Some(Tok::Caret) = self.peek() {
            self.bump_tok();
            let neg = if let Some(Tok::Minus) = self.peek() {
                self.bump_tok();
                true
            } else {
                false
            };
            let pos = self.pos();
            let n = match self.bump_tok() {
                Some(Tok::Num(v)) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => v as i32,
                _ => {
                    return Err(Error::Parse {
                        position: pos,
                        message: "exponent must be an integer literal".into(),
                    })
                }
            };
            base = Ast::Pow(Box::new(base), if neg { -n } else { n });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Ast> {
        let pos = self.pos();
        match self.bump_tok() {
            Some(Tok::Num(v)) => Ok(Ast::Num(v)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                if let Some(Tok::LParen) = self.peek() {
                    self.bump_tok();
                    let mut args = vec![self.expr()?];
                    while let Some(Tok::Sep) = self.peek() {
                        self.bump_tok();
                        args.push(self.expr()?);
                    }
                    self.expect(Tok::RParen, "`)`")?;
                    self.call(&name, args, pos)
                } else {
                    Ok(Ast::Var(name))
                }
            }
            _ => Err(Error::Parse {
                position: pos,
                message: "expected a number, variable, function call, or `(`".into(),
            }),
        }
    }

    fn call(&mut self, name: &str, mut args: Vec<Ast>, pos: usize) -> Result<Ast> {
        let unary = |args: &mut Vec<Ast>, name: &str| -> Result<Box<Ast>> {
            if args.len() != 1 {
                return Err(Error::Arity {
                    name: name.into(),
                    expected: "1 argument".into(),
                    got: args.len(),
                });
            }
            Ok(Box::new(args.pop().expect("len checked")))
        };
        match name {
            "exp" => Ok(Ast::Exp(unary(&mut args, name)?)),
            "log" => Ok(Ast::Log(unary(&mut args, name)?)),
            "sin" => Ok(Ast::Sin(unary(&mut args, name)?)),
            "cos" => Ok(Ast::Cos(unary(&mut args, name)?)),
            "sqrt" => Ok(Ast::Sqrt(unary(&mut args, name)?)),
            "bump" => {
                if args.len() != 3 && args.len() != 4 {
                    return Err(Error::Arity {
                        name: name.into(),
                        expected: "3 arguments (or 4 in the internal form)".into(),
                        got: args.len(),
                    });
                }
                let w = if args.len() == 4 {
                    args.pop().expect("len checked")
                } else {
                    Ast::Num(1.0)
                };
                let b_ast = fold(args.pop().expect("len checked"));
                let a_ast = fold(args.pop().expect("len checked"));
                let (a, b) = match (&a_ast, &b_ast) {
                    (Ast::Num(a), Ast::Num(b)) => (*a, *b),
                    _ => {
                        return Err(Error::Parse {
                            position: pos,
                            message: "bump bounds must be constant expressions".into(),
                        })
                    }
                };
                if !(a < b) {
                    return Err(Error::Parse {
                        position: pos,
                        message: format!("bump needs a < b, got a = {a}, b = {b}"),
                    });
                }
                Ok(Ast::Bump {
                    arg: Box::new(args.pop().expect("len checked")),
                    a,
                    b,
                    w: Box::new(w),
                })
            }
            other => Err(Error::Parse {
                position: pos,
                message: format!("unknown function `{other}`"),
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// Constant folding and light algebraic cleanup
// ---------------------------------------------------------------------------

fn is_num(ast: &Ast, v: f64) -> bool {
    matches!(ast, Ast::Num(x) if *x == v)
}

/// Post-order constant folding plus identity cleanup. Operations that would
/// fail (division by zero, log of a nonpositive constant) are left unfolded
/// so they surface as evaluation errors, where the contract expects them.
pub(crate) fn fold(ast: Ast) -> Ast {
    match ast {
        Ast::Add(l, r) => {
            let (l, r) = (fold(*l), fold(*r));
            match (&l, &r) {
                (Ast::Num(a), Ast::Num(b)) if (a + b).is_finite() => Ast::Num(a + b),
                _ if is_num(&l, 0.0) => r,
                _ if is_num(&r, 0.0) => l,
                _ => Ast::Add(Box::new(l), Box::new(r)),
            }
        }
        Ast::Sub(l, r) => {
            let (l, r) = (fold(*l), fold(*r));
            match (&l, &r) {
                (Ast::Num(a), Ast::Num(b)) if (a - b).is_finite() => Ast::Num(a - b),
                _ if is_num(&r, 0.0) => l,
                _ if is_num(&l, 0.0) => Ast::Neg(Box::new(r)),
                _ => Ast::Sub(Box::new(l), Box::new(r)),
            }
        }
        Ast::Mul(l, r) => {
            let (l, r) = (fold(*l), fold(*r));
            match (&l, &r) {
                (Ast::Num(a), Ast::Num(b)) if (a * b).is_finite() => Ast::Num(a * b),
                _ if is_num(&l, 0.0) || is_num(&r, 0.0) => Ast::Num(0.0),
                _ if is_num(&l, 1.0) => r,
                _ if is_num(&r, 1.0) => l,
                _ => Ast::Mul(Box::new(l), Box::new(r)),
            }
        }
        Ast::Div(l, r) => {
            let (l, r) = (fold(*l), fold(*r));
            match (&l, &r) {
                (Ast::Num(a), Ast::Num(b)) if *b != 0.0 && (a / b).is_finite() => Ast::Num(a / b),
                _ if is_num(&r, 1.0) => l,
                _ if is_num(&l, 0.0) && !is_num(&r, 0.0) => Ast::Num(0.0),
                _ => Ast::Div(Box::new(l), Box::new(r)),
            }
        }
        Ast::Neg(e) => {
            let e = fold(*e);
            match e {
                Ast::Num(v) => Ast::Num(-v),
                Ast::Neg(inner) => *inner,
                _ => Ast::Neg(Box::new(e)),
            }
        }
        Ast::Pow(b, n) => {
            let b = fold(*b);
            match (&b, n) {
                (_, 0) => Ast::Num(1.0),
                (_, 1) => b,
                (Ast::Num(v), _) => {
                    let p = v.powi(n);
                    if p.is_finite() {
                        Ast::Num(p)
                    } else {
                        Ast::Pow(Box::new(b), n)
                    }
                }
                _ => Ast::Pow(Box::new(b), n),
            }
        }
        Ast::Exp(e) => fold_unary(*e, Ast::Exp, |x| {
            let y = x.exp();
            y.is_finite().then_some(y)
        }),
        Ast::Log(e) => fold_unary(*e, Ast::Log, |x| (x > 0.0).then(|| x.ln())),
        Ast::Sin(e) => fold_unary(*e, Ast::Sin, |x| Some(x.sin())),
        Ast::Cos(e) => fold_unary(*e, Ast::Cos, |x| Some(x.cos())),
        Ast::Sqrt(e) => fold_unary(*e, Ast::Sqrt, |x| (x >= 0.0).then(|| x.sqrt())),
        Ast::Bump { arg, a, b, w } => {
            let arg = fold(*arg);
            let w = fold(*w);
            if is_num(&w, 0.0) {
                Ast::Num(0.0)
            } else if let Ast::Num(v) = arg {
                // Constant argument: the guard makes the value a constant too.
                let u = (2.0 * v - a - b) / (b - a);
                if u.abs() < 1.0 {
                    match w {
                        Ast::Num(wv) => Ast::Num((-1.0 / (1.0 - u * u)).exp() * wv),
                        w => Ast::Mul(
                            Box::new(Ast::Num((-1.0 / (1.0 - u * u)).exp())),
                            Box::new(w),
                        ),
                    }
                } else {
                    Ast::Num(0.0)
                }
            } else {
                Ast::Bump {
                    arg: Box::new(arg),
                    a,
                    b,
                    w: Box::new(w),
                }
            }
        }
        leaf => leaf,
    }
}

fn fold_unary(
    e: Ast,
    rebuild: impl Fn(Box<Ast>) -> Ast,
    f: impl Fn(f64) -> Option<f64>,
) -> Ast {
    let e = fold(e);
    if let Ast::Num(v) = e {
        if let Some(y) = f(v) {
            return Ast::Num(y);
        }
    }
    rebuild(Box::new(e))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

fn check_finite(y: f64, context: &str) -> Result<f64> {
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::non_finite(context, format!("result = {y}")))
    }
}

fn eval_ast(ast: &Ast, names: &[String], point: &[f64]) -> Result<f64> {
    match ast {
        Ast::Num(v) => Ok(*v),
        Ast::Var(name) => {
            let idx = names
                .iter()
                .position(|n| n == name)
                .expect("variables indexed at construction");
            Ok(point[idx])
        }
        Ast::Add(l, r) => check_finite(
            eval_ast(l, names, point)? + eval_ast(r, names, point)?,
            "addition",
        ),
        Ast::Sub(l, r) => check_finite(
            eval_ast(l, names, point)? - eval_ast(r, names, point)?,
            "subtraction",
        ),
        Ast::Mul(l, r) => check_finite(
            eval_ast(l, names, point)? * eval_ast(r, names, point)?,
            "multiplication",
        ),
        Ast::Div(l, r) => {
            let den = eval_ast(r, names, point)?;
            if den == 0.0 {
                return Err(Error::non_finite("division", "division by zero"));
            }
            check_finite(eval_ast(l, names, point)? / den, "division")
        }
        Ast::Neg(e) => Ok(-eval_ast(e, names, point)?),
        Ast::Pow(b, n) => {
            let base = eval_ast(b, names, point)?;
            if base == 0.0 && *n < 0 {
                return Err(Error::non_finite("power", "0 raised to a negative power"));
            }
            check_finite(base.powi(*n), "power")
        }
        Ast::Exp(e) => check_finite(eval_ast(e, names, point)?.exp(), "exp"),
        Ast::Log(e) => {
            let v = eval_ast(e, names, point)?;
            if v <= 0.0 {
                return Err(Error::non_finite("log", format!("log of {v}")));
            }
            Ok(v.ln())
        }
        Ast::Sin(e) => Ok(eval_ast(e, names, point)?.sin()),
        Ast::Cos(e) => Ok(eval_ast(e, names, point)?.cos()),
        Ast::Sqrt(e) => {
            let v = eval_ast(e, names, point)?;
            if v < 0.0 {
                return Err(Error::non_finite("sqrt", format!("sqrt of {v}")));
            }
            Ok(v.sqrt())
        }
        Ast::Bump { arg, a, b, w } => {
            let v = eval_ast(arg, names, point)?;
            let u = (2.0 * v - a - b) / (b - a);
            if u.abs() >= 1.0 {
                // Outside (and exactly at) the support edges — the guarded
                // factor w is not evaluated, so its poles there are harmless.
                return Ok(0.0);
            }
            let profile = (-1.0 / (1.0 - u * u)).exp();
            check_finite(profile * eval_ast(w, names, point)?, "bump")
        }
    }
}

// ---------------------------------------------------------------------------
// Differentiation
// ---------------------------------------------------------------------------

fn d(ast: &Ast, var: &str) -> Ast {
    match ast {
        Ast::Num(_) => Ast::Num(0.0),
        Ast::Var(name) => Ast::Num(if name == var { 1.0 } else { 0.0 }),
        Ast::Add(l, r) => Ast::Add(Box::new(d(l, var)), Box::new(d(r, var))),
        Ast::Sub(l, r) => Ast::Sub(Box::new(d(l, var)), Box::new(d(r, var))),
        Ast::Mul(l, r) => Ast::Add(
            Box::new(Ast::Mul(Box::new(d(l, var)), r.clone())),
            Box::new(Ast::Mul(l.clone(), Box::new(d(r, var)))),
        ),
        Ast::Div(l, r) => Ast::Div(
            Box::new(Ast::Sub(
                Box::new(Ast::Mul(Box::new(d(l, var)), r.clone())),
                Box::new(Ast::Mul(l.clone(), Box::new(d(r, var)))),
            )),
            Box::new(Ast::Pow(r.clone(), 2)),
        ),
        Ast::Neg(e) => Ast::Neg(Box::new(d(e, var))),
        Ast::Pow(b, n) => {
            if *n == 0 {
                return Ast::Num(0.0);
            }
            Ast::Mul(
                Box::new(Ast::Mul(
                    Box::new(Ast::Num(f64::from(*n))),
                    Box::new(Ast::Pow(b.clone(), n - 1)),
                )),
                Box::new(d(b, var)),
            )
        }
        Ast::Exp(e) => Ast::Mul(Box::new(Ast::Exp(e.clone())), Box::new(d(e, var))),
        Ast::Log(e) => Ast::Div(Box::new(d(e, var)), e.clone()),
        Ast::Sin(e) => Ast::Mul(Box::new(Ast::Cos(e.clone())), Box::new(d(e, var))),
        Ast::Cos(e) => Ast::Neg(Box::new(Ast::Mul(
            Box::new(Ast::Sin(e.clone())),
            Box::new(d(e, var)),
        ))),
        Ast::Sqrt(e) => Ast::Div(
            Box::new(d(e, var)),
            Box::new(Ast::Mul(
                Box::new(Ast::Num(2.0)),
                Box::new(Ast::Sqrt(e.clone())),
            )),
        ),
        Ast::Bump { arg, a, b, w } => {
            // d/dx [profile(u)·w] = profile(u)·(w' + w·(−2u/(1−u²)²)·u'),
            // u = (2·arg − a − b)/(b − a), u' = 2·arg'/(b − a).
            // The rational factor lives INSIDE the guard, so its poles at
            // u = ±1 are never reached.
            let u = Ast::Div(
                Box::new(Ast::Sub(
                    Box::new(Ast::Mul(Box::new(Ast::Num(2.0)), arg.clone())),
                    Box::new(Ast::Num(a + b)),
                )),
                Box::new(Ast::Num(b - a)),
            );
            let one_minus_u2 = Ast::Sub(Box::new(Ast::Num(1.0)), Box::new(Ast::Pow(Box::new(u.clone()), 2)));
            let rational = Ast::Div(
                Box::new(Ast::Mul(Box::new(Ast::Num(-2.0)), Box::new(u))),
                Box::new(Ast::Pow(Box::new(one_minus_u2), 2)),
            );
            let du = Ast::Mul(
                Box::new(Ast::Num(2.0 / (b - a))),
                Box::new(d(arg, var)),
            );
            let w_new = Ast::Add(
                Box::new(d(w, var)),
                Box::new(Ast::Mul(
                    w.clone(),
                    Box::new(Ast::Mul(Box::new(rational), Box::new(du))),
                )),
            );
            Ast::Bump {
                arg: arg.clone(),
                a: *a,
                b: *b,
                w: Box::new(w_new),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

fn fmt_num(v: f64, out: &mut fmt::Formatter<'_>) -> fmt::Result {
    if v < 0.0 {
        // Negative literals print parenthesized inside operator contexts via
        // Neg nodes; a raw negative Num only appears from folding.
        write!(out, "(-{})", -v)
    } else {
        write!(out, "{v}")
    }
}

/// Operator precedence used for minimal parenthesization.
fn prec(ast: &Ast) -> u8 {
    match ast {
        Ast::Add(..) | Ast::Sub(..) => 1,
        Ast::Mul(..) | Ast::Div(..) => 2,
        Ast::Neg(..) => 3,
        Ast::Pow(..) => 4,
        _ => 5,
    }
}

fn fmt_ast(ast: &Ast, parent: u8, out: &mut fmt::Formatter<'_>) -> fmt::Result {
    let p = prec(ast);
    let need_parens = p < parent;
    if need_parens {
        write!(out, "(")?;
    }
    match ast {
        Ast::Num(v) => fmt_num(*v, out)?,
        Ast::Var(name) => write!(out, "{name}")?,
        Ast::Add(l, r) => {
            fmt_ast(l, p, out)?;
            write!(out, " + ")?;
            // Right children at the same precedence keep their parentheses so
            // the printed shape reparses (and refolds) to this exact tree.
            fmt_ast(r, p + 1, out)?;
        }
        Ast::Sub(l, r) => {
            fmt_ast(l, p, out)?;
            write!(out, " - ")?;
            fmt_ast(r, p + 1, out)?;
        }
        Ast::Mul(l, r) => {
            fmt_ast(l, p, out)?;
            write!(out, "*")?;
            fmt_ast(r, p + 1, out)?;
        }
        Ast::Div(l, r) => {
            fmt_ast(l, p, out)?;
            write!(out, "/")?;
            fmt_ast(r, p + 1, out)?;
        }
        Ast::Neg(e) => {
            write!(out, "-")?;
            fmt_ast(e, p + 1, out)?;
        }
        Ast::Pow(b, n) => {
            fmt_ast(b, p + 1, out)?;
            write!(out, "^{n}")?;
        }
        Ast::Exp(e) => write_call(out, "exp", e)?,
        Ast::Log(e) => write_call(out, "log", e)?,
        Ast::Sin(e) => write_call(out, "sin", e)?,
        Ast::Cos(e) => write_call(out, "cos", e)?,
        Ast::Sqrt(e) => write_call(out, "sqrt", e)?,
        Ast::Bump { arg, a, b, w } => {
            write!(out, "bump(")?;
            fmt_ast(arg, 0, out)?;
            write!(out, "; ")?;
            fmt_num(*a, out)?;
            write!(out, ", ")?;
            fmt_num(*b, out)?;
            if !is_num(w, 1.0) {
                write!(out, ", ")?;
                fmt_ast(w, 0, out)?;
            }
            write!(out, ")")?;
        }
    }
    if need_parens {
        write!(out, ")")?;
    }
    Ok(())
}

fn write_call(out: &mut fmt::Formatter<'_>, name: &str, e: &Ast) -> fmt::Result {
    write!(out, "{name}(")?;
    fmt_ast(e, 0, out)?;
    write!(out, ")")
}

impl fmt::Display for Expr {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_ast(&self.ast, 0, out)
    }
}

// ---------------------------------------------------------------------------
// Public API
// ---------------------------------------------------------------------------

/// Sort key that orders `x2` before `x10` (numeric suffix aware).
fn var_sort_key(name: &str) -> (u8, u64, String) {
    if let Some(rest) = name.strip_prefix('x') {
        if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(n) = rest.parse::<u64>() {
                return (0, n, name.to_string());
            }
        }
    }
    (1, 0, name.to_string())
}

fn collect_vars(ast: &Ast, into: &mut Vec<String>) {
    match ast {
        Ast::Var(name) => {
            if !into.iter().any(|v| v == name) {
                into.push(name.clone());
            }
        }
        Ast::Num(_) => {}
        Ast::Add(l, r) | Ast::Sub(l, r) | Ast::Mul(l, r) | Ast::Div(l, r) => {
            collect_vars(l, into);
            collect_vars(r, into);
        }
        Ast::Neg(e) | Ast::Exp(e) | Ast::Log(e) | Ast::Sin(e) | Ast::Cos(e) | Ast::Sqrt(e) => {
            collect_vars(e, into)
        }
        Ast::Pow(b, _) => collect_vars(b, into),
        Ast::Bump { arg, w, .. } => {
            collect_vars(arg, into);
            collect_vars(w, into);
        }
    }
}

impl Expr {
    /// Parse an expression from source text.
    pub fn parse(src: &str) -> Result<Expr> {
        if src.trim().is_empty() {
            return Err(Error::Parse {
                position: 0,
                message: "empty expression".into(),
            });
        }
        let mut lexer = Lexer::new(src);
        let mut toks = Vec::new();
        while let Some(t) = lexer.next()? {
            toks.push(t);
        }
        let mut parser = Parser {
            toks,
            idx: 0,
            end_pos: src.len(),
        };
        let ast = parser.expr()?;
        if parser.idx != parser.toks.len() {
            return Err(Error::Parse {
                position: parser.pos(),
                message: "unexpected trailing input".into(),
            });
        }
        Ok(Expr::from_ast(fold(ast)))
    }

    pub(crate) fn from_ast(ast: Ast) -> Expr {
        let mut vars = Vec::new();
        collect_vars(&ast, &mut vars);
        vars.sort_by_key(|v| var_sort_key(v));
        Expr { ast, vars }
    }

    /// A constant expression.
    pub fn constant(v: f64) -> Expr {
        Expr::from_ast(Ast::Num(v))
    }

    /// Variables used, sorted (`x1 < x2 < … < x10`; other names after).
    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    /// Underlying syntax tree (read-only).
    pub fn ast(&self) -> &Ast {
        &self.ast
    }

    /// Evaluate at `point`, bound positionally to [`Expr::vars`].
    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.vars.len() {
            return Err(Error::Dimension {
                what: format!(
                    "expression uses {} variable(s) {:?}, got a point of dimension {}",
                    self.vars.len(),
                    self.vars,
                    point.len()
                ),
            });
        }
        eval_ast(&self.ast, &self.vars, point)
    }

    /// Evaluate a univariate (or constant) expression at `x`.
    pub fn eval1(&self, x: f64) -> Result<f64> {
        match self.vars.len() {
            0 => eval_ast(&self.ast, &self.vars, &[]),
            1 => eval_ast(&self.ast, &self.vars, &[x]),
            n => Err(Error::Dimension {
                what: format!("expected a univariate expression, found {n} variables"),
            }),
        }
    }

    /// Symbolic derivative with respect to `var`; stays in the language.
    pub fn deriv(&self, var: &str) -> Expr {
        Expr::from_ast(fold(d(&self.ast, var)))
    }

    /// Square of this expression (`g = f²` convenience).
    pub fn squared(&self) -> Expr {
        Expr::from_ast(fold(Ast::Pow(Box::new(self.ast.clone()), 2)))
    }

    /// The unique variable of a univariate expression, or `"x"` for constants.
    pub fn single_var(&self) -> Result<&str> {
        match self.vars.len() {
            0 => Ok("x"),
            1 => Ok(&self.vars[0]),
            n => Err(Error::Dimension {
                what: format!("expected at most one variable, found {n}"),
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// Differentiable-function abstraction
// ---------------------------------------------------------------------------

/// A univariate function with a pointwise derivative. The bound evaluators
/// take this instead of bare [`Expr`] so test functions that leave the
/// expression grammar (e.g. `f(x) = h(τ(x))`, which needs the measure's CDF)
/// plug into the same code paths.
pub trait DiffFn: Sync {
    fn value(&self, x: f64) -> Result<f64>;
    fn derivative(&self, x: f64) -> Result<f64>;
}

/// An [`Expr`] paired with its precomputed symbolic derivative.
#[derive(Debug, Clone)]
pub struct Differentiable {
    f: Expr,
    df: Expr,
}

impl Differentiable {
    pub fn new(f: Expr) -> Result<Differentiable> {
        let var = f.single_var()?.to_string();
        let df = f.deriv(&var);
        Ok(Differentiable { f, df })
    }

    pub fn parse(src: &str) -> Result<Differentiable> {
        Differentiable::new(Expr::parse(src)?)
    }

    pub fn expr(&self) -> &Expr {
        &self.f
    }

    pub fn deriv_expr(&self) -> &Expr {
        &self.df
    }
}

impl DiffFn for Differentiable {
    fn value(&self, x: f64) -> Result<f64> {
        self.f.eval1(x)
    }

    fn derivative(&self, x: f64) -> Result<f64> {
        self.df.eval1(x)
    }
}

/// Map expression variables onto coordinates of a d-dimensional point:
/// `x1..xd` name coordinates 1..d (plain `x` is accepted for d = 1). The
/// result pairs positionally with [`Expr::vars`], so
/// `point_for_expr = indices.map(|i| point[i])`.
pub fn coordinate_indices(vars: &[String], d: usize) -> Result<Vec<usize>> {
    vars.iter()
        .map(|name| {
            if d == 1 && name == "x" {
                return Ok(0);
            }
            name.strip_prefix('x')
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|k| (1..=d).contains(k))
                .map(|k| k - 1)
                .ok_or_else(|| Error::Dimension {
                    what: format!("variable `{name}` does not name a coordinate x1..x{d}"),
                })
        })
        .collect()
}

/// Closure-backed [`DiffFn`] for tests and internally constructed functions.
pub struct FnPair<F, G>
where
    F: Fn(f64) -> Result<f64> + Sync,
    G: Fn(f64) -> Result<f64> + Sync,
{
    pub value: F,
    pub derivative: G,
}

impl<F, G> DiffFn for FnPair<F, G>
where
    F: Fn(f64) -> Result<f64> + Sync,
    G: Fn(f64) -> Result<f64> + Sync,
{
    fn value(&self, x: f64) -> Result<f64> {
        (self.value)(x)
    }

    fn derivative(&self, x: f64) -> Result<f64> {
        (self.derivative)(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ev(src: &str, x: f64) -> f64 {
        Expr::parse(src).unwrap().eval1(x).unwrap()
    }

    #[test]
    fn parse_and_eval_basics() {
        assert_relative_eq!(ev("x^2", 3.0), 9.0);
        assert_relative_eq!(ev("exp(0.5*x)", 0.0), 1.0);
        assert_relative_eq!(ev("x*0", 123.4), 0.0);
        assert_relative_eq!(ev("x^3 - 2*x", 2.0), 4.0);
        assert_relative_eq!(ev("sin(x)^2 + cos(x)^2", 0.7), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bump_at_midpoint_is_exp_minus_one() {
        assert_relative_eq!(
            ev("bump(x; -1, 1)", 0.0),
            (-1.0f64).exp(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn bump_vanishes_outside_and_at_edges() {
        for x in [-5.0, -1.0, 1.0, 1.0 + 1e-16, 7.3] {
            assert_eq!(ev("bump(x; -1, 1)", x), 0.0);
        }
    }

    #[test]
    fn bump_range_is_within_zero_and_exp_minus_one() {
        let e = Expr::parse("bump(x; -0.3, 2)").unwrap();
        let top = (-1.0f64).exp();
        for k in 0..=1000 {
            let x = -1.0 + 3.5 * k as f64 / 1000.0;
            let v = e.eval1(x).unwrap();
            assert!((0.0..=top + 1e-15).contains(&v), "bump({x}) = {v}");
        }
    }

    #[test]
    fn derivative_basics() {
        let e = Expr::parse("x^2").unwrap().deriv("x");
        assert_relative_eq!(e.eval1(3.0).unwrap(), 6.0);
        let e = Expr::parse("exp(0.5*x)").unwrap().deriv("x");
        assert_relative_eq!(e.eval1(0.0).unwrap(), 0.5);
    }

    #[test]
    fn bump_derivative_vanishes_at_support_edges() {
        let db = Expr::parse("bump(x; -1, 1)").unwrap().deriv("x");
        for x in [-1.0, 1.0, -1.5, 2.0] {
            assert_eq!(db.eval1(x).unwrap(), 0.0, "at x = {x}");
        }
        // And is still correct strictly inside: compare to finite differences.
        let b = Expr::parse("bump(x; -1, 1)").unwrap();
        let h = 1e-6;
        for x in [-0.9, -0.4, 0.1, 0.55, 0.95] {
            let fd = (b.eval1(x + h).unwrap() - b.eval1(x - h).unwrap()) / (2.0 * h);
            assert_relative_eq!(db.eval1(x).unwrap(), fd, max_relative = 1e-6, epsilon = 1e-9);
        }
    }

    #[test]
    fn second_derivative_of_bump_stays_in_language() {
        let b = Expr::parse("bump(x; 0, 4)").unwrap();
        let d2 = b.deriv("x").deriv("x");
        assert_eq!(d2.eval1(0.0).unwrap(), 0.0);
        assert_eq!(d2.eval1(4.0).unwrap(), 0.0);
        let h = 1e-4;
        let x = 2.7;
        let fd2 = (b.eval1(x + h).unwrap() - 2.0 * b.eval1(x).unwrap() + b.eval1(x - h).unwrap())
            / (h * h);
        assert_relative_eq!(d2.eval1(x).unwrap(), fd2, max_relative = 1e-5);
    }

    #[test]
    fn eval_errors_are_typed_not_nan() {
        let e = Expr::parse("log(x)").unwrap();
        assert!(matches!(
            e.eval1(-1.0).unwrap_err(),
            Error::NonFinite { .. }
        ));
        let e = Expr::parse("1/x").unwrap();
        assert!(matches!(e.eval1(0.0).unwrap_err(), Error::NonFinite { .. }));
        let e = Expr::parse("sqrt(x)").unwrap();
        assert!(matches!(
            e.eval1(-4.0).unwrap_err(),
            Error::NonFinite { .. }
        ));
    }

    #[test]
    fn parse_errors_carry_positions() {
        match Expr::parse("exp(").unwrap_err() {
            Error::Parse { position, .. } => assert_eq!(position, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            Expr::parse("sin(x, y)").unwrap_err(),
            Error::Arity { got: 2, .. }
        ));
        assert!(matches!(
            Expr::parse("bump(x; 1)").unwrap_err(),
            Error::Arity { got: 2, .. }
        ));
        assert!(Expr::parse("x^y").is_err());
        assert!(Expr::parse("").is_err());
    }

    #[test]
    fn multivariate_eval_binds_positionally() {
        let e = Expr::parse("x1 + 2*x2 + x10").unwrap();
        assert_eq!(e.vars(), &["x1", "x2", "x10"]);
        assert_relative_eq!(e.eval(&[1.0, 2.0, 3.0]).unwrap(), 8.0);
        assert!(matches!(
            e.eval(&[1.0, 2.0]).unwrap_err(),
            Error::Dimension { .. }
        ));
    }

    #[test]
    fn print_parse_round_trip_on_samples() {
        for src in [
            "x^2 + 3*x - 1",
            "exp(0.5*x)/(1 + x^2)",
            "bump(x; -1, 1)",
            "sin(x)*cos(2*x) - sqrt(1 + x^2)",
            "-x^3",
            "2/(x - 5)^2",
        ] {
            let e = Expr::parse(src).unwrap();
            let reparsed = Expr::parse(&e.to_string()).unwrap();
            assert_eq!(e, reparsed, "print/parse mismatch for `{src}` -> `{e}`");
        }
        // Derivatives round-trip too (exercises the 4-argument bump form).
        let db = Expr::parse("bump(x; -1, 1)").unwrap().deriv("x");
        let reparsed = Expr::parse(&db.to_string()).unwrap();
        assert_eq!(db, reparsed);
    }

    // Random-expression strategy: arithmetic over polynomials, exp of scaled
    // x, trig, sqrt of positive things, and bumps — constructs whose values
    // stay representable on [-2, 2].
    fn leaf() -> BoxedStrategy<Ast> {
        prop_oneof![
            (-3.0..3.0f64).prop_map(Ast::Num),
            Just(Ast::Var("x".into())),
        ]
        .boxed()
    }

    fn node(depth: u32) -> BoxedStrategy<Ast> {
        if depth == 0 {
            return leaf();
        }
        let sub = node(depth - 1);
        let sub2 = node(depth - 1);
        prop_oneof![
            leaf(),
            (sub.clone(), sub2.clone()).prop_map(|(a, b)| Ast::Add(Box::new(a), Box::new(b))),
            (sub.clone(), sub2.clone()).prop_map(|(a, b)| Ast::Sub(Box::new(a), Box::new(b))),
            (sub.clone(), sub2).prop_map(|(a, b)| Ast::Mul(Box::new(a), Box::new(b))),
            sub.clone().prop_map(|a| Ast::Sin(Box::new(a))),
            sub.clone().prop_map(|a| Ast::Cos(Box::new(a))),
            (1..=3i32, sub.clone()).prop_map(|(n, a)| Ast::Pow(Box::new(a), n)),
            sub.clone().prop_map(|a| Ast::Exp(Box::new(Ast::Mul(
                Box::new(Ast::Num(0.3)),
                Box::new(a)
            )))),
            sub.prop_map(|a| Ast::Bump {
                arg: Box::new(a),
                a: -1.5,
                b: 1.5,
                w: Box::new(Ast::Num(1.0)),
            }),
        ]
        .boxed()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(120))]

        // Symbolic derivative agrees with central finite differences.
        #[test]
        fn derivative_matches_finite_differences(ast in node(3), x in -2.0..2.0f64) {
            let e = Expr::from_ast(fold(ast));
            let de = e.deriv("x");
            let h = 1e-5 * (1.0 + x.abs());
            let (fp, fm) = match (e.eval1(x + h), e.eval1(x - h)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => return Ok(()), // outside a domain — not this property's business
            };
            let dv = match de.eval1(x) {
                Ok(v) => v,
                Err(_) => return Ok(()),
            };
            // Skip points where the value itself is huge; FD cancellation
            // noise would dominate the comparison.
            prop_assume!(fp.abs() < 1e6 && fm.abs() < 1e6);
            // Bump derivatives have third derivatives that explode near the
            // support edges; FD there is O(h²·f''') and unbounded. Compare
            // with a tolerance scaled like the contract asks.
            let fd = (fp - fm) / (2.0 * h);
            prop_assert!(
                (dv - fd).abs() <= 2e-5 * (1.0 + dv.abs().max(fd.abs())),
                "deriv {dv} vs fd {fd} at x = {x} for {e}"
            );
        }

        // parse ∘ print is the identity on folded ASTs.
        #[test]
        fn print_parse_round_trips(ast in node(3)) {
            let e = Expr::from_ast(fold(ast));
            let printed = e.to_string();
            let reparsed = Expr::parse(&printed).unwrap();
            prop_assert_eq!(e, reparsed, "printed `{}`", printed);
        }
    }
}
