//! Exact evaluation of button-level arithmetic expressions.
//!
//! Grammar: `number (op number)*` with `× ÷` binding tighter than `+ −`,
//! all operators left-associative. There are no parentheses and no unary
//! minus. Arithmetic is over unbounded rationals.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

use crate::catalog::{DIGITS, DIVIDE, FRACTION_BAR, MINUS, PLUS, TIMES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

impl Op {
    pub fn from_token(s: &str) -> Option<Op> {
        match s {
            PLUS => Some(Op::Add),
            MINUS => Some(Op::Sub),
            TIMES => Some(Op::Mul),
            DIVIDE => Some(Op::Div),
            _ => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Op::Add => PLUS,
            Op::Sub => MINUS,
            Op::Mul => TIMES,
            Op::Div => DIVIDE,
        }
    }

    fn multiplicative(self) -> bool {
        matches!(self, Op::Mul | Op::Div)
    }
}

/// A parsed flat expression: `numbers.len() == ops.len() + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatExpr {
    pub numbers: Vec<BigInt>,
    pub ops: Vec<Op>,
}

fn digit_value(s: &str) -> Option<u32> {
    DIGITS.iter().position(|d| *d == s).map(|p| p as u32)
}

/// Parse digit and operator tokens. Rejects empty input, leading, trailing
/// or consecutive operators, and any other token.
pub fn parse<S: AsRef<str>>(tokens: &[S]) -> Result<FlatExpr> {
    let mut numbers = Vec::new();
    let mut ops = Vec::new();
    let mut current: Option<BigInt> = None;
    for tok in tokens {
        let tok = tok.as_ref();
        if let Some(d) = digit_value(tok) {
            let acc = current.take().unwrap_or_else(BigInt::zero);
            current = Some(acc * 10 + d);
        } else if let Some(op) = Op::from_token(tok) {
            let n = current.take().ok_or_else(|| Error::Eval(format!("operator {tok} without left operand")))?;
            numbers.push(n);
            ops.push(op);
        } else {
            return Err(Error::Eval(format!("unexpected token {tok:?}")));
        }
    }
    let last = current.ok_or_else(|| Error::Eval("expression ends without an operand".into()))?;
    numbers.push(last);
    Ok(FlatExpr { numbers, ops })
}

impl FlatExpr {
    /// Evaluate with standard precedence over exact rationals.
    pub fn eval(&self) -> Result<BigRational> {
        let mut total = BigRational::zero();
        let mut term = BigRational::from_integer(self.numbers[0].clone());
        let mut sign = Op::Add;
        for (op, n) in self.ops.iter().zip(&self.numbers[1..]) {
            let n = BigRational::from_integer(n.clone());
            if op.multiplicative() {
                if *op == Op::Mul {
                    term *= n;
                } else {
                    if n.is_zero() {
                        return Err(Error::Eval("division by zero".into()));
                    }
                    term /= n;
                }
            } else {
                total = if sign == Op::Add { total + term } else { total - term };
                term = n;
                sign = *op;
            }
        }
        Ok(if sign == Op::Add { total + term } else { total - term })
    }

    /// Render back to digit and operator tokens.
    pub fn tokens(&self) -> Vec<String> {
        let mut out = digits_of(&self.numbers[0]);
        for (op, n) in self.ops.iter().zip(&self.numbers[1..]) {
            out.push(op.token().to_string());
            out.extend(digits_of(n));
        }
        out
    }
}

fn digits_of(n: &BigInt) -> Vec<String> {
    n.to_string().chars().map(|c| c.to_string()).collect()
}

/// Evaluate a token expression to an exact rational.
pub fn evaluate_expression<S: AsRef<str>>(tokens: &[S]) -> Result<BigRational> {
    parse(tokens)?.eval()
}

/// Canonical token rendering of a rational: an optional `−`, the digits of
/// the numerator, and for non-integers `/` followed by the denominator
/// (always in lowest terms).
pub fn render_number(q: &BigRational) -> Vec<String> {
    let mut out = Vec::new();
    if q.is_negative() {
        out.push(MINUS.to_string());
    }
    out.extend(digits_of(&q.numer().abs()));
    if !q.is_integer() {
        out.push(FRACTION_BAR.to_string());
        out.extend(digits_of(q.denom()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.chars().map(|c| c.to_string()).collect()
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(evaluate_expression(&toks("12+7×2")).unwrap(), rat(26, 1));
        assert_eq!(evaluate_expression(&toks("8÷4÷2")).unwrap(), rat(1, 1));
        assert_eq!(evaluate_expression(&toks("1÷3")).unwrap(), rat(1, 3));
        assert_eq!(evaluate_expression(&toks("2+3×4")).unwrap(), rat(14, 1));
        assert_eq!(evaluate_expression(&toks("10−2−3")).unwrap(), rat(5, 1));
        assert_eq!(evaluate_expression(&toks("2−3×4+1")).unwrap(), rat(-9, 1));
    }

    #[test]
    fn malformed_inputs_are_errors() {
        for bad in ["", "+1", "1+", "1++2", "1×÷2"] {
            assert!(evaluate_expression(&toks(bad)).is_err(), "{bad:?}");
        }
        assert!(evaluate_expression(&toks("5÷0")).is_err());
        assert!(evaluate_expression(&["1", "x"]).is_err());
    }

    #[test]
    fn integers_are_unbounded() {
        let big = "99999".repeat(8);
        let expr = format!("{big}×{big}");
        let v = evaluate_expression(&toks(&expr)).unwrap();
        let b: BigInt = big.parse().unwrap();
        assert_eq!(v, BigRational::from_integer(&b * &b));
    }

    #[test]
    fn rendering_is_canonical() {
        assert_eq!(render_number(&rat(46, 1)), vec!["4", "6"]);
        assert_eq!(render_number(&rat(-5, 1)), vec![MINUS, "5"]);
        assert_eq!(render_number(&rat(2, 6)), vec!["1", "/", "3"]);
        assert_eq!(render_number(&rat(0, 1)), vec!["0"]);
        assert_eq!(render_number(&rat(-7, 2)), vec![MINUS, "7", "/", "2"]);
    }

    #[test]
    fn leading_zero_operands_parse_as_numbers() {
        assert_eq!(evaluate_expression(&toks("007+1")).unwrap(), rat(8, 1));
    }
}
