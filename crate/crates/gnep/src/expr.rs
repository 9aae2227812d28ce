//! Polynomial expressions over the stacked decision vector.
//!
//! Terms are separated by `+` or `-`; factors inside a term by `*` or
//! whitespace. A factor is a number or a variable `x<k>` with an optional
//! integer power, as in `x0^2 - 2*x0*x1 + 0.5 x3`.

use gnep_core::{Monomial, Polynomial, SmoothFn};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("column {column}: {message}")]
pub struct ExprError {
    /// Byte offset of the problem inside the expression, 0-based.
    pub column: usize,
    pub message: String,
}

fn err(column: usize, message: impl Into<String>) -> ExprError {
    ExprError { column, message: message.into() }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Lexer<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn digits(&mut self) -> usize {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        self.pos - start
    }

    fn number(&mut self) -> Result<f64, ExprError> {
        let start = self.pos;
        self.digits();
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            self.digits();
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if self.digits() == 0 {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse().map_err(|_| err(start, format!("malformed number `{text}`")))
    }

    fn integer(&mut self, what: &str) -> Result<u32, ExprError> {
        let start = self.pos;
        if self.digits() == 0 {
            return Err(err(start, format!("expected {what}")));
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse().map_err(|_| err(start, format!("{what} `{text}` is too large")))
    }
}

/// Terms of the expression as `(coefficient, [(global variable, power)])`.
pub fn parse_terms(src: &str, variables: usize) -> Result<Vec<(f64, Vec<(usize, u32)>)>, ExprError> {
    let mut lx = Lexer { src: src.as_bytes(), pos: 0 };
    let mut terms = Vec::new();
    let mut first = true;
    loop {
        let mut sign = 1.0;
        match lx.peek() {
            None if first => return Err(err(0, "empty expression")),
            None => return Err(err(lx.pos, "expression ends after an operator")),
            Some(b'+') => lx.pos += 1,
            Some(b'-') => {
                sign = -1.0;
                lx.pos += 1;
            }
            Some(_) if first => {}
            Some(c) => return Err(err(lx.pos, format!("expected `+` or `-`, found `{}`", c as char))),
        }
        first = false;
        let mut coef = sign;
        let mut powers = Vec::new();
        let mut factors = 0;
        loop {
            match lx.peek() {
                Some(b'x') => {
                    let at = lx.pos;
                    lx.pos += 1;
                    let var = lx.integer("variable index after `x`")? as usize;
                    if var >= variables {
                        return Err(err(at, format!("x{var} is out of range; the game has {variables} variables")));
                    }
                    let mut power = 1;
                    if lx.peek() == Some(b'^') {
                        lx.pos += 1;
                        lx.skip_ws();
                        power = lx.integer("integer power after `^`")?;
                    }
                    powers.push((var, power));
                }
                Some(c) if c.is_ascii_digit() || c == b'.' => coef *= lx.number()?,
                Some(c) if factors == 0 => {
                    return Err(err(lx.pos, format!("expected a number or variable, found `{}`", c as char)))
                }
                None if factors == 0 => return Err(err(lx.pos, "expected a number or variable")),
                _ => break,
            }
            factors += 1;
            if lx.peek() == Some(b'*') {
                lx.pos += 1;
                if !matches!(lx.peek(), Some(c) if c == b'x' || c.is_ascii_digit() || c == b'.') {
                    return Err(err(lx.pos, "expected a factor after `*`"));
                }
            }
        }
        terms.push((coef, powers));
        if lx.peek().is_none() {
            return Ok(terms);
        }
    }
}

/// Parses an expression into a function of the variables it mentions.
pub fn parse_polynomial(src: &str, variables: usize) -> Result<SmoothFn, ExprError> {
    let terms = parse_terms(src, variables)?;
    let mut support: Vec<usize> = terms.iter().flat_map(|(_, p)| p.iter().map(|&(v, _)| v)).collect();
    support.sort_unstable();
    support.dedup();
    if support.is_empty() {
        return Ok(SmoothFn::constant(terms.iter().map(|t| t.0).sum()));
    }
    let local = |v: usize| support.binary_search(&v).expect("collected above");
    let monomials = terms
        .into_iter()
        .map(|(coef, powers)| Monomial { coef, powers: powers.into_iter().map(|(v, p)| (local(v), p)).collect() })
        .collect();
    Ok(SmoothFn::polynomial(support.clone(), Polynomial::new(support.len(), monomials)))
}
