//! Closed-form scalar fields over named coordinates.
//!
//! A [`ScalarField`] is an expression tree bound to an ordered [`VarSpace`].
//! Fields can be parsed from text, evaluated at points, printed back to
//! parseable text and differentiated symbolically to any order.
//!
//! # Grammar
//!
//! ```text
//! expr     := term (('+' | '-') term)*
//! term     := unary (('*' | '/') unary)*
//! unary    := '-' unary | power
//! power    := primary ('^' exponent)*
//! exponent := ['-' | '+'] INTEGER | '(' ['-' | '+'] INTEGER ')'
//! primary  := NUMBER | IDENT | FUNC '(' expr ')' | '(' expr ')'
//! FUNC     := 'sin' | 'cos' | 'tan' | 'exp' | 'log' | 'sqrt'
//! NUMBER   := DIGITS ['.' DIGITS] [('e' | 'E') ['+' | '-'] DIGITS] | '.' DIGITS ...
//! IDENT    := [A-Za-z_][A-Za-z0-9_]*
//! ```
//!
//! `^` binds tightest, then unary minus, then `*` and `/`, then `+` and `-`.
//! Binary operators are left-associative. Exponents are integers only.
//! The identifier `pi` denotes the constant unless a variable of that name
//! is declared.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown symbol `{name}` at offset {offset}")]
    UnknownSymbol { name: String, offset: usize },
    #[error("domain error in `{expr}` at input {input}: {reason}")]
    Domain {
        expr: String,
        input: f64,
        reason: &'static str,
    },
    #[error("variable `{0}` is not declared")]
    UnknownVariable(String),
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("point has {got} coordinates, expected {expected}")]
    PointLength { expected: usize, got: usize },
    #[error("no value assigned to variable `{0}`")]
    Unassigned(String),
}

/// Ordered list of coordinate names shared by a family of fields.
#[derive(Clone, Debug)]
pub struct VarSpace(Arc<[String]>);

impl VarSpace {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self, ExprError> {
        let mut seen = std::collections::HashSet::new();
        for n in names {
            if !seen.insert(n.as_ref()) {
                return Err(ExprError::DuplicateVariable(n.as_ref().to_string()));
            }
        }
        Ok(VarSpace(names.iter().map(|s| s.as_ref().to_string()).collect()))
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }

    pub fn name(&self, i: usize) -> &str {
        &self.0[i]
    }
}

impl PartialEq for VarSpace {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    /// Applies the function, `None` outside its domain.
    fn apply(self, x: f64) -> Option<f64> {
        match self {
            Func::Sin => Some(x.sin()),
            Func::Cos => Some(x.cos()),
            Func::Tan => Some(x.tan()),
            Func::Exp => Some(x.exp()),
            Func::Log => (x > 0.0).then(|| x.ln()),
            Func::Sqrt => (x >= 0.0).then(|| x.sqrt()),
        }
    }
}

/// Expression tree. Variables are indices into the owning [`VarSpace`].
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Arc<Expr>),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    Pow(Arc<Expr>, i32),
    Call(Func, Arc<Expr>),
}

type E = Arc<Expr>;

fn c(v: f64) -> E {
    Arc::new(Expr::Const(v))
}

fn as_const(e: &Expr) -> Option<f64> {
    match e {
        Expr::Const(v) => Some(*v),
        _ => None,
    }
}

fn folded(v: f64) -> Option<E> {
    v.is_finite().then(|| c(v))
}

// Smart constructors: constant folding and identity elimination only.

fn neg(a: E) -> E {
    match &*a {
        Expr::Const(v) => c(-v),
        Expr::Neg(inner) => inner.clone(),
        _ => Arc::new(Expr::Neg(a)),
    }
}

fn add(a: E, b: E) -> E {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) => folded(x + y).unwrap_or_else(|| Arc::new(Expr::Add(a, b))),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => Arc::new(Expr::Add(a, b)),
    }
}

fn sub(a: E, b: E) -> E {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) => folded(x - y).unwrap_or_else(|| Arc::new(Expr::Sub(a, b))),
        (Some(x), _) if x == 0.0 => neg(b),
        (_, Some(y)) if y == 0.0 => a,
        _ => Arc::new(Expr::Sub(a, b)),
    }
}

fn mul(a: E, b: E) -> E {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) => folded(x * y).unwrap_or_else(|| Arc::new(Expr::Mul(a, b))),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => c(0.0),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        (Some(x), _) if x == -1.0 => neg(b),
        (_, Some(y)) if y == -1.0 => neg(a),
        _ => Arc::new(Expr::Mul(a, b)),
    }
}

fn div(a: E, b: E) -> E {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) if y != 0.0 => {
            folded(x / y).unwrap_or_else(|| Arc::new(Expr::Div(a, b)))
        }
        (Some(x), _) if x == 0.0 => c(0.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => Arc::new(Expr::Div(a, b)),
    }
}

fn pow(a: E, n: i32) -> E {
    if n == 0 {
        return c(1.0);
    }
    if n == 1 {
        return a;
    }
    if let Some(x) = as_const(&a) {
        if x != 0.0 || n > 0 {
            if let Some(f) = folded(x.powi(n)) {
                return f;
            }
        }
    }
    Arc::new(Expr::Pow(a, n))
}

fn call(f: Func, a: E) -> E {
    if let Some(x) = as_const(&a) {
        if let Some(v) = f.apply(x).and_then(folded) {
            return v;
        }
    }
    Arc::new(Expr::Call(f, a))
}

fn depends(e: &Expr, i: usize) -> bool {
    match e {
        Expr::Const(_) => false,
        Expr::Var(j) => *j == i,
        Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => depends(a, i),
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            depends(a, i) || depends(b, i)
        }
    }
}

fn derive(e: &E, i: usize) -> E {
    match &**e {
        Expr::Const(_) => c(0.0),
        Expr::Var(j) => c(if *j == i { 1.0 } else { 0.0 }),
        Expr::Neg(a) => neg(derive(a, i)),
        Expr::Add(a, b) => add(derive(a, i), derive(b, i)),
        Expr::Sub(a, b) => sub(derive(a, i), derive(b, i)),
        Expr::Mul(a, b) => add(
            mul(derive(a, i), b.clone()),
            mul(a.clone(), derive(b, i)),
        ),
        Expr::Div(a, b) => {
            if !depends(b, i) {
                div(derive(a, i), b.clone())
            } else {
                div(
                    sub(
                        mul(derive(a, i), b.clone()),
                        mul(a.clone(), derive(b, i)),
                    ),
                    pow(b.clone(), 2),
                )
            }
        }
        Expr::Pow(a, n) => mul(
            mul(c(*n as f64), pow(a.clone(), n - 1)),
            derive(a, i),
        ),
        Expr::Call(f, a) => {
            let da = derive(a, i);
            match f {
                Func::Sin => mul(call(Func::Cos, a.clone()), da),
                Func::Cos => mul(neg(call(Func::Sin, a.clone())), da),
                Func::Tan => div(da, pow(call(Func::Cos, a.clone()), 2)),
                Func::Exp => mul(call(Func::Exp, a.clone()), da),
                Func::Log => div(da, a.clone()),
                Func::Sqrt => div(da, mul(c(2.0), call(Func::Sqrt, a.clone()))),
            }
        }
    }
}

struct Evaluator<'a> {
    point: &'a [f64],
    names: &'a [String],
}

impl Evaluator<'_> {
    fn domain(&self, e: &Expr, input: f64, reason: &'static str) -> ExprError {
        ExprError::Domain {
            expr: Printer { names: self.names }.render(e),
            input,
            reason,
        }
    }

    fn finite(&self, e: &Expr, v: f64, input: f64) -> Result<f64, ExprError> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.domain(e, input, "non-finite result"))
        }
    }

    fn eval(&self, e: &Expr) -> Result<f64, ExprError> {
        Ok(match e {
            Expr::Const(v) => *v,
            Expr::Var(i) => self.point[*i],
            Expr::Neg(a) => -self.eval(a)?,
            Expr::Add(a, b) => {
                let v = self.eval(a)? + self.eval(b)?;
                self.finite(e, v, v)?
            }
            Expr::Sub(a, b) => {
                let v = self.eval(a)? - self.eval(b)?;
                self.finite(e, v, v)?
            }
            Expr::Mul(a, b) => {
                let v = self.eval(a)? * self.eval(b)?;
                self.finite(e, v, v)?
            }
            Expr::Div(a, b) => {
                let num = self.eval(a)?;
                let den = self.eval(b)?;
                if den == 0.0 {
                    return Err(self.domain(e, den, "division by zero"));
                }
                self.finite(e, num / den, den)?
            }
            Expr::Pow(a, n) => {
                let x = self.eval(a)?;
                if x == 0.0 && *n < 0 {
                    return Err(self.domain(e, x, "division by zero"));
                }
                self.finite(e, x.powi(*n), x)?
            }
            Expr::Call(f, a) => {
                let x = self.eval(a)?;
                match f.apply(x) {
                    Some(v) => self.finite(e, v, x)?,
                    None => {
                        let reason = match f {
                            Func::Log => "logarithm of a non-positive number",
                            _ => "square root of a negative number",
                        };
                        return Err(self.domain(e, x, reason));
                    }
                }
            }
        })
    }
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Neg(_) => 3,
        Expr::Const(v) if v.is_sign_negative() => 3,
        Expr::Pow(..) => 4,
        _ => 5,
    }
}

fn format_const(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{:?}", v)
    }
}

struct Printer<'a> {
    names: &'a [String],
}

impl Printer<'_> {
    fn render(&self, e: &Expr) -> String {
        let mut s = String::new();
        self.write(e, &mut s);
        s
    }

    fn child(&self, e: &Expr, paren: bool, out: &mut String) {
        if paren {
            out.push('(');
            self.write(e, out);
            out.push(')');
        } else {
            self.write(e, out);
        }
    }

    fn binary(&self, a: &Expr, b: &Expr, op: &str, level: u8, out: &mut String) {
        self.child(a, prec(a) < level, out);
        out.push_str(op);
        self.child(b, prec(b) <= level, out);
    }

    fn write(&self, e: &Expr, out: &mut String) {
        match e {
            Expr::Const(v) => {
                if v.is_sign_negative() {
                    out.push('-');
                    out.push_str(&format_const(-v));
                } else {
                    out.push_str(&format_const(*v));
                }
            }
            Expr::Var(i) => out.push_str(&self.names[*i]),
            Expr::Neg(a) => {
                out.push('-');
                self.child(a, prec(a) < 3, out);
            }
            Expr::Add(a, b) => self.binary(a, b, " + ", 1, out),
            Expr::Sub(a, b) => self.binary(a, b, " - ", 1, out),
            Expr::Mul(a, b) => self.binary(a, b, "*", 2, out),
            Expr::Div(a, b) => self.binary(a, b, "/", 2, out),
            Expr::Pow(a, n) => {
                self.child(a, prec(a) < 4, out);
                if *n < 0 {
                    out.push_str(&format!("^({})", n));
                } else {
                    out.push_str(&format!("^{}", n));
                }
            }
            Expr::Call(f, a) => {
                out.push_str(f.name());
                out.push('(');
                self.write(a, out);
                out.push(')');
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    space: &'a VarSpace,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn err(&self, offset: usize, message: impl Into<String>) -> ExprError {
        ExprError::Syntax {
            offset,
            message: message.into(),
        }
    }

    fn expect(&mut self, ch: u8) -> Result<(), ExprError> {
        match self.peek() {
            Some(b) if b == ch => {
                self.pos += 1;
                Ok(())
            }
            Some(b) => Err(self.err(
                self.pos,
                format!("expected `{}`, found `{}`", ch as char, b as char),
            )),
            None => Err(self.err(self.pos, format!("expected `{}`, found end of input", ch as char))),
        }
    }

    fn expr(&mut self) -> Result<E, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Arc::new(Expr::Add(lhs, self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Arc::new(Expr::Sub(lhs, self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<E, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Arc::new(Expr::Mul(lhs, self.unary()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Arc::new(Expr::Div(lhs, self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<E, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Arc::new(Expr::Neg(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<E, ExprError> {
        let mut base = self.primary()?;
        while self.peek() == Some(b'^') {
            self.pos += 1;
            let n = self.exponent()?;
            base = Arc::new(Expr::Pow(base, n));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<i32, ExprError> {
        let parens = self.peek() == Some(b'(');
        if parens {
            self.pos += 1;
        }
        let mut sign = 1i64;
        match self.peek() {
            Some(b'-') => {
                sign = -1;
                self.pos += 1;
            }
            Some(b'+') => self.pos += 1,
            _ => {}
        }
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(start, "exponent must be an integer literal"));
        }
        if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'.' | b'e' | b'E') {
            return Err(self.err(self.pos, "exponent must be an integer literal"));
        }
        let digits = &self.src[start..self.pos];
        let n: i64 = digits
            .parse()
            .map_err(|_| self.err(start, "exponent out of range"))?;
        let n = i32::try_from(sign * n).map_err(|_| self.err(start, "exponent out of range"))?;
        if parens {
            self.expect(b')')?;
        }
        Ok(n)
    }

    fn number(&mut self) -> Result<E, ExprError> {
        let start = self.pos;
        let b = self.bytes;
        let mut i = self.pos;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i < b.len() && b[i] == b'.' {
            i += 1;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
            let mut j = i + 1;
            if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                j += 1;
            }
            if j < b.len() && b[j].is_ascii_digit() {
                while j < b.len() && b[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = &self.src[start..i];
        let v: f64 = text
            .parse()
            .map_err(|_| self.err(start, format!("malformed number `{}`", text)))?;
        self.pos = i;
        Ok(c(v))
    }

    fn primary(&mut self) -> Result<E, ExprError> {
        let Some(b) = self.peek() else {
            return Err(self.err(self.pos, "unexpected end of input"));
        };
        let start = self.pos;
        if b.is_ascii_digit() || b == b'.' {
            return self.number();
        }
        if b == b'(' {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(b')')?;
            return Ok(e);
        }
        if b.is_ascii_alphabetic() || b == b'_' {
            let mut i = self.pos;
            while i < self.bytes.len() && (self.bytes[i].is_ascii_alphanumeric() || self.bytes[i] == b'_') {
                i += 1;
            }
            let name = &self.src[start..i];
            self.pos = i;
            if let Some(idx) = self.space.index_of(name) {
                return Ok(Arc::new(Expr::Var(idx)));
            }
            if let Some(f) = Func::from_name(name) {
                self.expect(b'(')?;
                let arg = self.expr()?;
                self.expect(b')')?;
                return Ok(Arc::new(Expr::Call(f, arg)));
            }
            if name == "pi" {
                return Ok(c(std::f64::consts::PI));
            }
            return Err(ExprError::UnknownSymbol {
                name: name.to_string(),
                offset: start,
            });
        }
        let ch = self.src[start..].chars().next().unwrap_or('?');
        Err(self.err(start, format!("unexpected `{}`", ch)))
    }
}

/// A real-valued expression over a [`VarSpace`].
#[derive(Clone, Debug)]
pub struct ScalarField {
    expr: E,
    space: VarSpace,
}

impl ScalarField {
    pub fn parse(text: &str, space: &VarSpace) -> Result<Self, ExprError> {
        let mut p = Parser {
            src: text,
            bytes: text.as_bytes(),
            pos: 0,
            space,
        };
        let expr = p.expr()?;
        if let Some(b) = p.peek() {
            let ch = text[p.pos..].chars().next().unwrap_or(b as char);
            return Err(p.err(p.pos, format!("unexpected `{}`", ch)));
        }
        Ok(ScalarField {
            expr,
            space: space.clone(),
        })
    }

    pub fn constant(v: f64, space: &VarSpace) -> Self {
        ScalarField {
            expr: c(v),
            space: space.clone(),
        }
    }

    pub fn zero(space: &VarSpace) -> Self {
        Self::constant(0.0, space)
    }

    pub fn variable(name: &str, space: &VarSpace) -> Result<Self, ExprError> {
        let i = space
            .index_of(name)
            .ok_or_else(|| ExprError::UnknownVariable(name.to_string()))?;
        Ok(Self::coordinate(i, space))
    }

    pub fn coordinate(i: usize, space: &VarSpace) -> Self {
        assert!(i < space.len(), "coordinate index out of range");
        ScalarField {
            expr: Arc::new(Expr::Var(i)),
            space: space.clone(),
        }
    }

    pub fn space(&self) -> &VarSpace {
        &self.space
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    fn with(&self, expr: E) -> Self {
        ScalarField {
            expr,
            space: self.space.clone(),
        }
    }

    fn same_space(&self, other: &ScalarField) {
        assert!(
            self.space == other.space,
            "scalar fields live on different variable spaces: {:?} vs {:?}",
            self.space.names(),
            other.space.names()
        );
    }

    /// Evaluates at `point`, given in the order of the variable space.
    pub fn eval(&self, point: &[f64]) -> Result<f64, ExprError> {
        if point.len() != self.space.len() {
            return Err(ExprError::PointLength {
                expected: self.space.len(),
                got: point.len(),
            });
        }
        Evaluator {
            point,
            names: self.space.names(),
        }
        .eval(&self.expr)
    }

    pub fn eval_named(&self, values: &HashMap<String, f64>) -> Result<f64, ExprError> {
        let point = self
            .space
            .names()
            .iter()
            .map(|n| values.get(n).copied().ok_or_else(|| ExprError::Unassigned(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        self.eval(&point)
    }

    pub fn diff(&self, var: &str) -> Result<Self, ExprError> {
        let i = self
            .space
            .index_of(var)
            .ok_or_else(|| ExprError::UnknownVariable(var.to_string()))?;
        Ok(self.diff_at(i))
    }

    /// Partial derivative with respect to the `i`-th coordinate.
    pub fn diff_at(&self, i: usize) -> Self {
        self.with(derive(&self.expr, i))
    }

    /// `order`-th partial derivative with respect to `var`.
    pub fn differentiate(&self, var: &str, order: usize) -> Result<Self, ExprError> {
        let i = self
            .space
            .index_of(var)
            .ok_or_else(|| ExprError::UnknownVariable(var.to_string()))?;
        let mut f = self.clone();
        for _ in 0..order {
            f = f.diff_at(i);
        }
        Ok(f)
    }

    pub fn gradient(&self) -> Vec<ScalarField> {
        (0..self.space.len()).map(|i| self.diff_at(i)).collect()
    }

    pub fn depends_on(&self, i: usize) -> bool {
        depends(&self.expr, i)
    }

    pub fn as_constant(&self) -> Option<f64> {
        as_const(&self.expr)
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    /// Re-expresses the field over another space; every referenced name must
    /// exist there.
    pub fn rebase(&self, space: &VarSpace) -> Result<Self, ExprError> {
        self.rebase_renamed(space, |n| n.to_string())
    }

    /// Like [`rebase`](Self::rebase) with each name passed through `rename` first.
    pub fn rebase_renamed(
        &self,
        space: &VarSpace,
        rename: impl Fn(&str) -> String,
    ) -> Result<Self, ExprError> {
        let mut map = Vec::with_capacity(self.space.len());
        for name in self.space.names() {
            map.push(space.index_of(&rename(name)));
        }
        fn remap(e: &E, map: &[Option<usize>], names: &[String]) -> Result<E, ExprError> {
            Ok(match &**e {
                Expr::Const(_) => e.clone(),
                Expr::Var(i) => match map[*i] {
                    Some(j) => Arc::new(Expr::Var(j)),
                    None => return Err(ExprError::UnknownVariable(names[*i].clone())),
                },
                Expr::Neg(a) => Arc::new(Expr::Neg(remap(a, map, names)?)),
                Expr::Pow(a, n) => Arc::new(Expr::Pow(remap(a, map, names)?, *n)),
                Expr::Call(f, a) => Arc::new(Expr::Call(*f, remap(a, map, names)?)),
                Expr::Add(a, b) => Arc::new(Expr::Add(remap(a, map, names)?, remap(b, map, names)?)),
                Expr::Sub(a, b) => Arc::new(Expr::Sub(remap(a, map, names)?, remap(b, map, names)?)),
                Expr::Mul(a, b) => Arc::new(Expr::Mul(remap(a, map, names)?, remap(b, map, names)?)),
                Expr::Div(a, b) => Arc::new(Expr::Div(remap(a, map, names)?, remap(b, map, names)?)),
            })
        }
        Ok(ScalarField {
            expr: remap(&self.expr, &map, self.space.names())?,
            space: space.clone(),
        })
    }

    pub fn powi(&self, n: i32) -> Self {
        self.with(pow(self.expr.clone(), n))
    }

    pub fn scale(&self, k: f64) -> Self {
        self.with(mul(c(k), self.expr.clone()))
    }

    pub fn apply(&self, f: Func) -> Self {
        self.with(call(f, self.expr.clone()))
    }

    /// Sum of `terms`; the zero field when empty.
    pub fn sum<'a>(terms: impl IntoIterator<Item = &'a ScalarField>, space: &VarSpace) -> Self {
        let mut acc = Self::zero(space);
        for t in terms {
            acc = &acc + t;
        }
        acc
    }

    /// Collects like terms of sums with numeric coefficients. Used for
    /// constraint combinations and for symbolic comparison of fields.
    pub fn normalized(&self) -> Self {
        self.with(normalize(&self.expr, self.space.names()))
    }

    /// Structural equality after [`normalized`](Self::normalized).
    pub fn symbolically_equal(&self, other: &ScalarField) -> bool {
        self.space == other.space && self.normalized().to_string() == other.normalized().to_string()
    }
}

impl fmt::Display for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&Printer { names: self.space.names() }.render(&self.expr))
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $ctor:ident) => {
        impl std::ops::$trait<&ScalarField> for &ScalarField {
            type Output = ScalarField;
            fn $method(self, rhs: &ScalarField) -> ScalarField {
                self.same_space(rhs);
                self.with($ctor(self.expr.clone(), rhs.expr.clone()))
            }
        }
        impl std::ops::$trait<ScalarField> for ScalarField {
            type Output = ScalarField;
            fn $method(self, rhs: ScalarField) -> ScalarField {
                (&self).$method(&rhs)
            }
        }
    };
}

binop!(Add, add, add);
binop!(Sub, sub, sub);
binop!(Mul, mul, mul);
binop!(Div, div, div);

impl std::ops::Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.with(neg(self.expr.clone()))
    }
}

impl std::ops::Neg for ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        -&self
    }
}

// Like-term collection.

struct Collector<'a> {
    names: &'a [String],
    constant: f64,
    terms: Vec<(String, f64, E)>,
}

impl Collector<'_> {
    fn push(&mut self, coef: f64, term: E) {
        let key = Printer { names: self.names }.render(&term);
        if let Some(slot) = self.terms.iter_mut().find(|(k, _, _)| *k == key) {
            slot.1 += coef;
        } else {
            self.terms.push((key, coef, term));
        }
    }

    fn collect(&mut self, e: &E, coef: f64) {
        match &**e {
            Expr::Const(v) => self.constant += coef * v,
            Expr::Add(a, b) => {
                self.collect(a, coef);
                self.collect(b, coef);
            }
            Expr::Sub(a, b) => {
                self.collect(a, coef);
                self.collect(b, -coef);
            }
            Expr::Neg(a) => self.collect(a, -coef),
            Expr::Div(a, b) if matches!(as_const(b), Some(k) if k != 0.0) => {
                self.collect(a, coef / as_const(b).unwrap_or(1.0))
            }
            Expr::Mul(a, b) => {
                let na = normalize(a, self.names);
                let nb = normalize(b, self.names);
                match (as_const(&na), as_const(&nb)) {
                    (Some(k), _) => self.collect(&nb, coef * k),
                    (_, Some(k)) => self.collect(&na, coef * k),
                    _ => {
                        let (ka, ta) = split_coef(na);
                        let (kb, tb) = split_coef(nb);
                        self.push(coef * ka * kb, Arc::new(Expr::Mul(ta, tb)));
                    }
                }
            }
            _ => {
                let n = normalize_children(e, self.names);
                self.push(coef, n);
            }
        }
    }

    fn finish(self) -> E {
        let scale = self
            .terms
            .iter()
            .map(|t| t.1.abs())
            .fold(self.constant.abs(), f64::max);
        let cutoff = 1e-14 * scale;
        let mut acc: Option<E> = None;
        for (_, coef, term) in self.terms {
            if coef.abs() <= cutoff {
                continue;
            }
            acc = Some(match acc {
                None => mul(c(coef), term),
                Some(prev) if coef < 0.0 => sub(prev, mul(c(-coef), term)),
                Some(prev) => add(prev, mul(c(coef), term)),
            });
        }
        let k = if self.constant.abs() <= cutoff { 0.0 } else { self.constant };
        match acc {
            None => c(k),
            Some(prev) if k < 0.0 => sub(prev, c(-k)),
            Some(prev) => add(prev, c(k)),
        }
    }
}

fn split_coef(e: E) -> (f64, E) {
    match &*e {
        Expr::Neg(a) => {
            let (k, t) = split_coef(a.clone());
            (-k, t)
        }
        Expr::Mul(a, b) => match as_const(a) {
            Some(k) => (k, b.clone()),
            None => (1.0, e),
        },
        _ => (1.0, e),
    }
}

fn normalize_children(e: &E, names: &[String]) -> E {
    match &**e {
        Expr::Const(_) | Expr::Var(_) => e.clone(),
        Expr::Pow(a, n) => pow(normalize(a, names), *n),
        Expr::Call(f, a) => call(*f, normalize(a, names)),
        Expr::Div(a, b) => div(normalize(a, names), normalize(b, names)),
        _ => normalize(e, names),
    }
}

fn normalize(e: &E, names: &[String]) -> E {
    let mut col = Collector {
        names,
        constant: 0.0,
        terms: Vec::new(),
    };
    col.collect(e, 1.0);
    col.finish()
}

/// Rectangular grid of fields sharing one variable space.
#[derive(Clone, Debug)]
pub struct FieldMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<ScalarField>,
    space: VarSpace,
}

impl FieldMatrix {
    /// Builds from row-major entries.
    pub fn from_rows(rows: Vec<Vec<ScalarField>>, space: &VarSpace) -> Self {
        let r = rows.len();
        let cols = rows.first().map_or(0, |row| row.len());
        let mut entries = Vec::with_capacity(r * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged field matrix");
            for e in row {
                assert!(e.space() == space, "field matrix entries must share a space");
                entries.push(e);
            }
        }
        FieldMatrix {
            rows: r,
            cols,
            entries,
            space: space.clone(),
        }
    }

    pub fn zeros(rows: usize, cols: usize, space: &VarSpace) -> Self {
        FieldMatrix {
            rows,
            cols,
            entries: vec![ScalarField::zero(space); rows * cols],
            space: space.clone(),
        }
    }

    pub fn constant(m: &DMatrix<f64>, space: &VarSpace) -> Self {
        let rows = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| ScalarField::constant(m[(i, j)], space)).collect())
            .collect();
        Self::from_rows(rows, space)
    }

    /// Jacobian of `fields` with respect to the coordinates `wrt`.
    pub fn jacobian(fields: &[ScalarField], wrt: &[usize], space: &VarSpace) -> Self {
        let rows = fields
            .iter()
            .map(|f| wrt.iter().map(|&j| f.diff_at(j)).collect())
            .collect();
        let mut m = Self::from_rows(rows, space);
        m.cols = wrt.len();
        m
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn space(&self) -> &VarSpace {
        &self.space
    }

    pub fn get(&self, i: usize, j: usize) -> &ScalarField {
        &self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, f: ScalarField) {
        assert!(f.space() == &self.space);
        self.entries[i * self.cols + j] = f;
    }

    pub fn eval(&self, point: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(i, j)] = self.get(i, j).eval(point)?;
            }
        }
        Ok(m)
    }

    pub fn rebase(&self, space: &VarSpace) -> Result<Self, ExprError> {
        Ok(FieldMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .map(|e| e.rebase(space))
                .collect::<Result<_, _>>()?,
            space: space.clone(),
        })
    }

    pub fn transpose(&self) -> Self {
        let rows = (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j).clone()).collect())
            .collect();
        let mut t = Self::from_rows(rows, &self.space);
        t.rows = self.cols;
        t.cols = self.rows;
        t
    }

    /// Matrix-vector product with symbolic entries.
    pub fn mul_vec(&self, v: &[ScalarField]) -> Vec<ScalarField> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                let terms: Vec<ScalarField> = (0..self.cols).map(|j| self.get(i, j) * &v[j]).collect();
                ScalarField::sum(&terms, &self.space)
            })
            .collect()
    }

    /// Determinant by cofactor expansion along the first row.
    pub fn determinant(&self) -> ScalarField {
        assert_eq!(self.rows, self.cols, "determinant of a non-square matrix");
        let n = self.rows;
        match n {
            0 => ScalarField::constant(1.0, &self.space),
            1 => self.get(0, 0).clone(),
            _ => {
                let mut acc = ScalarField::zero(&self.space);
                for j in 0..n {
                    let minor = self.minor(0, j).determinant();
                    let term = self.get(0, j) * &minor;
                    acc = if j % 2 == 0 { &acc + &term } else { &acc - &term };
                }
                acc
            }
        }
    }

    fn minor(&self, row: usize, col: usize) -> Self {
        let rows = (0..self.rows)
            .filter(|&i| i != row)
            .map(|i| {
                (0..self.cols)
                    .filter(|&j| j != col)
                    .map(|j| self.get(i, j).clone())
                    .collect()
            })
            .collect();
        let mut m = Self::from_rows(rows, &self.space);
        m.rows = self.rows - 1;
        m.cols = self.cols - 1;
        m
    }

    /// Symbolic inverse via the adjugate; entries divide by the determinant.
    pub fn inverse(&self) -> Self {
        let n = self.rows;
        let det = self.determinant();
        let mut inv = Self::zeros(n, n, &self.space);
        for i in 0..n {
            for j in 0..n {
                let cof = if n == 1 {
                    ScalarField::constant(1.0, &self.space)
                } else {
                    self.minor(j, i).determinant()
                };
                let cof = if (i + j) % 2 == 0 { cof } else { -cof };
                inv.set(i, j, &cof / &det);
            }
        }
        inv
    }
}
