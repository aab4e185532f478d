//! Arithmetic over decimal numbers with `+ - * /`, parentheses and unary
//! minus.

use async_trait::async_trait;
use thiserror::Error;

use crate::server::{EnvState, Extra, ToolError, ToolOutput, ToolPlugin};
use crate::text::between_last;
use crate::trajectory::StopTokenSet;

/// Significant digits in rendered results.
pub const SIGNIFICANT_DIGITS: usize = 15;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CalcError {
    #[error("parse error at byte {0}: {1}")]
    Parse(usize, String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("result is not finite")]
    NotFinite,
}

pub fn calculator_execute(expr: &str) -> Result<String, CalcError> {
    let v = evaluate(expr)?;
    Ok(format_significant(v, SIGNIFICANT_DIGITS))
}

pub fn evaluate(expr: &str) -> Result<f64, CalcError> {
    let mut p = Parser { src: expr.as_bytes(), pos: 0 };
    let v = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CalcError::NotFinite)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> CalcError {
        CalcError::Parse(self.pos, msg.to_owned())
    }

    fn skip_ws(&mut self) {
        while self.src.get(self.pos).is_some_and(u8::is_ascii_whitespace) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<f64, CalcError> {
        let mut acc = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = if op == b'+' { acc + rhs } else { acc - rhs };
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<f64, CalcError> {
        let mut acc = self.factor()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            if op == b'*' {
                acc *= rhs;
            } else if rhs == 0.0 {
                return Err(CalcError::DivisionByZero);
            } else {
                acc /= rhs;
            }
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<f64, CalcError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(-self.factor()?)
            }
            Some(b'(') => {
                self.pos += 1;
                let v = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<f64, CalcError> {
        let start = self.pos;
        while self.src.get(self.pos).is_some_and(|c| c.is_ascii_digit() || *c == b'.') {
            self.pos += 1;
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        s.parse().map_err(|_| CalcError::Parse(start, format!("bad number {s:?}")))
    }
}

/// Renders `v` with at most `digits` significant digits, dropping trailing
/// zeros. Very large or small magnitudes use exponent notation.
pub fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        return format!("{m}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_owned()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub struct CalculatorPlugin {
    stops: StopTokenSet,
}

impl Default for CalculatorPlugin {
    fn default() -> Self {
        Self { stops: StopTokenSet::new("calculator", ["</calculator>"]).expect("non-empty") }
    }
}

#[async_trait]
impl ToolPlugin for CalculatorPlugin {
    fn tool_id(&self) -> &str {
        "calculator"
    }

    fn stop_tokens(&self) -> &StopTokenSet {
        &self.stops
    }

    fn parse_action(&self, action_text: &str) -> Option<String> {
        between_last(action_text, "<calculator>", "</calculator>").map(|s| s.trim().to_owned())
    }

    async fn conduct_action(&self, _env: &mut EnvState, input: &str, _extra: &Extra) -> Result<ToolOutput, ToolError> {
        Ok(match calculator_execute(input) {
            Ok(v) => ToolOutput::ok(v),
            Err(e) => ToolOutput::invalid(format!("[calculator error: {e}]")),
        })
    }
}
