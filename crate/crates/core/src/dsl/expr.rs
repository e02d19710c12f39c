//! Integer parameter expressions over the block variables `B`, `C`, `dim`, `H`, `W`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A variable that may appear in a parameter expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Var {
    /// Batch size.
    B,
    /// Channels of the block's input feature map.
    C,
    /// Channels of the block's output feature map.
    Dim,
    /// Height of the block's input feature map.
    H,
    /// Width of the block's input feature map.
    W,
}

impl Var {
    pub const ALL: [Var; 5] = [Var::B, Var::C, Var::Dim, Var::H, Var::W];

    pub fn name(self) -> &'static str {
        match self {
            Var::B => "B",
            Var::C => "C",
            Var::Dim => "dim",
            Var::H => "H",
            Var::W => "W",
        }
    }

    pub fn from_name(s: &str) -> Option<Var> {
        Var::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

/// Expression tree. Negative literals are stored as `Int(-k)`, never as `Neg(Int(k))`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Int(i64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("inexact division {num}/{den}")]
    InexactDivision { num: i64, den: i64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow")]
    Overflow,
}

/// Concrete values for every block variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarBinding {
    #[serde(rename = "B")]
    pub b: i64,
    #[serde(rename = "C")]
    pub c: i64,
    pub dim: i64,
    #[serde(rename = "H")]
    pub h: i64,
    #[serde(rename = "W")]
    pub w: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("variable {var} must be >= 1, got {value}")]
pub struct BindingError {
    pub var: &'static str,
    pub value: i64,
}

impl VarBinding {
    pub fn new(b: i64, c: i64, dim: i64, h: i64, w: i64) -> Result<Self, BindingError> {
        let binding = VarBinding { b, c, dim, h, w };
        for var in Var::ALL {
            let value = binding.get(var);
            if value < 1 {
                return Err(BindingError { var: var.name(), value });
            }
        }
        Ok(binding)
    }

    pub fn get(&self, var: Var) -> i64 {
        match var {
            Var::B => self.b,
            Var::C => self.c,
            Var::Dim => self.dim,
            Var::H => self.h,
            Var::W => self.w,
        }
    }
}

impl fmt::Display for VarBinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{B={}, C={}, dim={}, H={}, W={}}}", self.b, self.c, self.dim, self.h, self.w)
    }
}

impl Expr {
    pub fn int(v: i64) -> Expr {
        Expr::Int(v)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    /// Negation that folds literals, keeping `-k` as a single literal.
    pub fn neg(inner: Expr) -> Expr {
        match inner {
            Expr::Int(k) if k != i64::MIN => Expr::Int(-k),
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Bin(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn eval(&self, binding: &VarBinding) -> Result<i64, EvalError> {
        match self {
            Expr::Int(v) => Ok(*v),
            Expr::Var(v) => Ok(binding.get(*v)),
            Expr::Neg(inner) => inner.eval(binding)?.checked_neg().ok_or(EvalError::Overflow),
            Expr::Bin(op, lhs, rhs) => {
                let a = lhs.eval(binding)?;
                let b = rhs.eval(binding)?;
                apply(*op, a, b)
            }
        }
    }

    pub fn mentions(&self, var: Var) -> bool {
        match self {
            Expr::Int(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(inner) => inner.mentions(var),
            Expr::Bin(_, lhs, rhs) => lhs.mentions(var) || rhs.mentions(var),
        }
    }

    /// Symbolic normal form: constants folded, associative chains of `+` and `*`
    /// flattened and sorted. Two expressions with the same normal form denote the
    /// same function of the variables; the converse does not hold in general.
    pub fn normalize(&self) -> Expr {
        match self {
            Expr::Int(_) | Expr::Var(_) => self.clone(),
            Expr::Neg(inner) => match inner.normalize() {
                Expr::Int(k) => k.checked_neg().map(Expr::Int).unwrap_or_else(|| Expr::Neg(Box::new(Expr::Int(k)))),
                Expr::Neg(x) => *x,
                other => Expr::Neg(Box::new(other)),
            },
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => {
                let mut terms = Vec::new();
                collect_sum(self, false, &mut terms);
                rebuild_chain(BinOp::Add, terms, 0, |a, b| a.checked_add(b))
            }
            Expr::Bin(BinOp::Mul, ..) => {
                let mut factors = Vec::new();
                collect_product(self, &mut factors);
                if factors.contains(&Expr::Int(0)) {
                    return Expr::Int(0);
                }
                rebuild_chain(BinOp::Mul, factors, 1, |a, b| a.checked_mul(b))
            }
            Expr::Bin(BinOp::Div, lhs, rhs) => {
                let (l, r) = (lhs.normalize(), rhs.normalize());
                match (&l, &r) {
                    (_, Expr::Int(1)) => l,
                    (Expr::Int(a), Expr::Int(b)) if *b != 0 && a % b == 0 => Expr::Int(a / b),
                    _ => Expr::bin(BinOp::Div, l, r),
                }
            }
        }
    }
}

fn apply(op: BinOp, a: i64, b: i64) -> Result<i64, EvalError> {
    match op {
        BinOp::Add => a.checked_add(b).ok_or(EvalError::Overflow),
        BinOp::Sub => a.checked_sub(b).ok_or(EvalError::Overflow),
        BinOp::Mul => a.checked_mul(b).ok_or(EvalError::Overflow),
        BinOp::Div => {
            if b == 0 {
                Err(EvalError::DivisionByZero)
            } else if a.checked_rem(b).ok_or(EvalError::Overflow)? != 0 {
                Err(EvalError::InexactDivision { num: a, den: b })
            } else {
                a.checked_div(b).ok_or(EvalError::Overflow)
            }
        }
    }
}

fn collect_sum(e: &Expr, negated: bool, out: &mut Vec<Expr>) {
    match e {
        Expr::Bin(BinOp::Add, l, r) => {
            collect_sum(l, negated, out);
            collect_sum(r, negated, out);
        }
        Expr::Bin(BinOp::Sub, l, r) => {
            collect_sum(l, negated, out);
            collect_sum(r, !negated, out);
        }
        other => {
            let n = other.normalize();
            out.push(if negated { Expr::neg(n).normalize() } else { n });
        }
    }
}

fn collect_product(e: &Expr, out: &mut Vec<Expr>) {
    match e {
        Expr::Bin(BinOp::Mul, l, r) => {
            collect_product(l, out);
            collect_product(r, out);
        }
        other => out.push(other.normalize()),
    }
}

fn rebuild_chain(op: BinOp, items: Vec<Expr>, identity: i64, fold: impl Fn(i64, i64) -> Option<i64>) -> Expr {
    let mut constant = Some(identity);
    let mut rest = Vec::new();
    for item in items {
        match (item, constant) {
            (Expr::Int(k), Some(c)) => match fold(c, k) {
                Some(v) => constant = Some(v),
                None => {
                    rest.push(Expr::Int(k));
                }
            },
            (other, _) => rest.push(other),
        }
    }
    rest.sort_by_cached_key(|e| e.to_string());
    if let Some(c) = constant {
        if c != identity || rest.is_empty() {
            rest.push(Expr::Int(c));
        }
    }
    let mut iter = rest.into_iter();
    let first = iter.next().expect("chain has at least one item");
    iter.fold(first, |acc, e| Expr::bin(op, acc, e))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(v) => write!(f, "{v}"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Neg(inner) => {
                if matches!(**inner, Expr::Bin(..)) {
                    write!(f, "-({inner})")
                } else {
                    write!(f, "-{inner}")
                }
            }
            Expr::Bin(op, lhs, rhs) => {
                write_operand(f, lhs, *op, false)?;
                write!(f, "{}", op.symbol())?;
                write_operand(f, rhs, *op, true)
            }
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, parent: BinOp, right: bool) -> fmt::Result {
    let needs_parens = match e {
        Expr::Bin(op, ..) => {
            let (p, c) = (parent.precedence(), op.precedence());
            c < p || (right && c == p)
        }
        Expr::Neg(_) => true,
        Expr::Int(v) => *v < 0,
        Expr::Var(_) => false,
    };
    if needs_parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at column {column}")]
pub struct ExprParseError {
    pub column: usize,
    pub message: String,
}

/// Parses an expression such as `C/2`, `4*dim`, `(H-1)/2+1` or `-1`. `×` is accepted for `*`.
pub fn parse_expr(text: &str) -> Result<Expr, ExprParseError> {
    let mut parser = ExprParser { chars: text.char_indices().collect(), pos: 0, len: text.len(), ops: 0 };
    parser.skip_ws();
    if parser.at_end() {
        return Err(parser.error("empty expression"));
    }
    let expr = parser.sum(0)?;
    parser.skip_ws();
    if !parser.at_end() {
        return Err(parser.error("unexpected trailing input"));
    }
    Ok(expr)
}

struct ExprParser {
    chars: Vec<(usize, char)>,
    pos: usize,
    len: usize,
    ops: usize,
}

const MAX_DEPTH_GUARD: usize = 64;
const MAX_OPERATORS: usize = 256;

impl ExprParser {
    fn at_end(&self) -> bool {
        self.pos >= self.chars.len()
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|(_, c)| *c)
    }

    fn column(&self) -> usize {
        self.chars.get(self.pos).map(|(i, _)| *i).unwrap_or(self.len) + 1
    }

    fn error(&self, message: &str) -> ExprParseError {
        ExprParseError { column: self.column(), message: message.to_string() }
    }

    fn count_op(&mut self) -> Result<(), ExprParseError> {
        self.ops += 1;
        if self.ops > MAX_OPERATORS {
            return Err(self.error("expression too long"));
        }
        Ok(())
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn sum(&mut self, depth: usize) -> Result<Expr, ExprParseError> {
        if depth > MAX_DEPTH_GUARD {
            return Err(self.error("expression nested too deeply"));
        }
        let mut lhs = self.product(depth)?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some('+') => BinOp::Add,
                Some('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            self.count_op()?;
            let rhs = self.product(depth)?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn product(&mut self, depth: usize) -> Result<Expr, ExprParseError> {
        let mut lhs = self.unary(depth)?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some('*') | Some('×') => BinOp::Mul,
                Some('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            self.count_op()?;
            let rhs = self.unary(depth)?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self, depth: usize) -> Result<Expr, ExprParseError> {
        if depth > MAX_DEPTH_GUARD {
            return Err(self.error("expression nested too deeply"));
        }
        self.skip_ws();
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                self.skip_ws();
                if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    let digits = self.digits();
                    let value: i64 = format!("-{digits}").parse().map_err(|_| self.error("integer literal out of range"))?;
                    return Ok(Expr::Int(value));
                }
                Ok(Expr::neg(self.unary(depth + 1)?))
            }
            Some('(') => {
                self.pos += 1;
                let inner = self.sum(depth + 1)?;
                self.skip_ws();
                if self.peek() != Some(')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() => {
                let digits = self.digits();
                let value: i64 = digits.parse().map_err(|_| self.error("integer literal out of range"))?;
                Ok(Expr::Int(value))
            }
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                let start = self.column();
                let mut ident = String::new();
                while let Some(c) = self.peek().filter(|c| c.is_ascii_alphanumeric() || *c == '_') {
                    ident.push(c);
                    self.pos += 1;
                }
                Var::from_name(&ident).map(Expr::Var).ok_or(ExprParseError {
                    column: start,
                    message: format!("unknown variable '{ident}' (expected one of B, C, dim, H, W)"),
                })
            }
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of expression")),
        }
    }

    fn digits(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek().filter(|c| c.is_ascii_digit()) {
            s.push(c);
            self.pos += 1;
        }
        s
    }
}
